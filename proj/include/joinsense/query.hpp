#pragma once

// Multi-way equi-join counting queries: the join graph, the private-relation
// set, residual queries with their boundary attributes, and random-walk plans.

#include <cstdint>
#include <string>
#include <vector>

#include "joinsense/relation.hpp"

namespace joinsense {

struct JoinPredicate {
  AttributeRef left;
  AttributeRef right;
};

// Parsed query file, not yet resolved against a dataset.
struct QuerySpec {
  std::string id;
  std::vector<std::string> relations;
  std::vector<JoinPredicate> predicates;
  std::vector<std::string> privateRelations;
  std::vector<AttributeRef> keys;  // optional declared key attributes

  static QuerySpec from_json_text(const std::string& text, const std::string& fallbackId);
  static QuerySpec from_json_file(const std::string& path);
  std::string to_json_text() const;

  // Canonical serialization (sorted predicates/privates/keys) and its FNV-1a
  // fingerprint; sketch files are bound to the fingerprint.
  std::string canonical_text() const;
  std::string fingerprint() const;
};

// Subset of relations encoded as a bitmask over relation indexes.
using Mask = std::uint32_t;

enum class GraphKind { Chain, Acyclic, Cyclic };

struct QuerySummary {
  GraphKind kind = GraphKind::Acyclic;
  bool connected = true;
  std::size_t relationCount = 0;
  std::size_t predicateCount = 0;
};

struct BoundPredicate {
  std::size_t relA, attrA;
  std::size_t relB, attrB;
};

// Query resolved against a dataset: relation pointers, attribute indexes,
// private mask, adjacency. Immutable once built.
class BoundQuery {
 public:
  BoundQuery(const Dataset& dataset, QuerySpec spec);

  std::size_t n() const { return relations_.size(); }
  const Relation& relation(std::size_t i) const { return *relations_.at(i); }
  const QuerySpec& spec() const { return spec_; }
  const std::vector<BoundPredicate>& predicates() const { return predicates_; }
  Mask full_mask() const { return n() == 32 ? ~Mask{0} : ((Mask{1} << n()) - 1); }
  Mask private_mask() const { return privateMask_; }
  bool is_private(std::size_t i) const { return (privateMask_ >> i) & 1u; }
  std::size_t private_count() const { return static_cast<std::size_t>(__builtin_popcount(privateMask_)); }
  const Dictionary& dict() const { return *dict_; }

  // Predicate indexes incident to relation i.
  const std::vector<std::size_t>& incident(std::size_t i) const { return incident_.at(i); }

  // Attribute indexes (on relation j) of predicates linking j and p.
  std::vector<std::size_t> link_attrs(std::size_t j, std::size_t p) const;
  // Attribute indexes (on relation j) of all predicates touching j.
  std::vector<std::size_t> join_attrs(std::size_t j) const;
  // Key attributes declared on relation j (attribute indexes).
  std::vector<std::size_t> declared_keys(std::size_t j) const;

  std::vector<std::string> attr_names(std::size_t rel, const std::vector<std::size_t>& attrIdx) const;

 private:
  QuerySpec spec_;
  const Dictionary* dict_;
  std::vector<const Relation*> relations_;
  std::vector<BoundPredicate> predicates_;
  std::vector<std::vector<std::size_t>> incident_;
  Mask privateMask_ = 0;
};

// Confirms resolution and classifies the join graph; throws SchemaError on a
// dangling attribute or an empty relation list.
QuerySummary validate(const BoundQuery& query);

// Every relation subset E needed by the residual machinery: all E ⊆ [n] such
// that some private i lies outside E (deduplicated across pivots, sorted).
// Empty when the private set is empty.
std::vector<Mask> residual_set(const BoundQuery& query);

struct BoundaryAttr {
  std::size_t rel;
  std::size_t attr;
  auto operator<=>(const BoundaryAttr&) const = default;
};

// Attributes of E-relations that appear in predicates whose other side lies
// outside E; sorted, deduplicated.
std::vector<BoundaryAttr> boundary_attributes(const BoundQuery& query, Mask e);

// Connected components of E in the join graph (ascending lowest-member order).
std::vector<Mask> components(const BoundQuery& query, Mask e);

struct ResidualQuery {
  Mask e = 0;
  std::vector<BoundaryAttr> boundary;
  std::vector<Mask> comps;
};

ResidualQuery residual_query(const BoundQuery& query, Mask e);

// One step of a random walk: bind `newRel` by matching `newAttr` against the
// value already bound on (boundRel, boundAttr).
struct WalkStep {
  std::size_t newRel, newAttr;
  std::size_t boundRel, boundAttr;
};

// A predicate not used as a step edge; verifiable once `readyStep` relations
// have been bound (walk fails if violated).
struct CheckEdge {
  std::size_t predIdx;
  std::size_t readyStep;
};

struct WalkPlan {
  std::vector<std::size_t> order;  // relation indexes; order[0] is the start
  std::vector<WalkStep> steps;     // steps[i] binds order[i+1]
  std::vector<CheckEdge> checks;
  // True when the plan is a simple path with no check edges; only such plans
  // support suffix walk-sharing.
  bool isPath = false;
};

// BFS traversal order of `component` from startRel; non-tree predicates become
// check edges. Throws SchemaError when startRel cannot reach all of component.
WalkPlan walk_plan(const BoundQuery& query, Mask component, std::size_t startRel);

std::string mask_to_string(const BoundQuery& query, Mask e);

}  // namespace joinsense
