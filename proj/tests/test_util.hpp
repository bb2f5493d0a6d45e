#pragma once
// Shared helpers for building tiny in-memory datasets and queries in tests.

#include <initializer_list>
#include <string>
#include <vector>

#include "joinsense/query.hpp"
#include "joinsense/relation.hpp"

namespace jt {

using namespace joinsense;

// Adds a relation with string-token rows to the dataset.
inline void add_rel(Dataset& ds, const std::string& name, const std::vector<std::string>& attrs,
                    const std::vector<std::vector<std::string>>& rows) {
  Relation rel(name, attrs, &ds.dict());
  for (const auto& r : rows) {
    std::vector<Value> vals;
    vals.reserve(r.size());
    for (const auto& t : r) vals.push_back(ds.dict().intern(t));
    rel.append_row(vals);
  }
  ds.add(std::move(rel));
}

inline JoinPredicate pred(const std::string& left, const std::string& right) {
  return JoinPredicate{AttributeRef::parse(left), AttributeRef::parse(right)};
}

inline QuerySpec make_spec(std::vector<std::string> relations,
                           std::vector<std::pair<std::string, std::string>> predicates,
                           std::vector<std::string> privateRelations,
                           std::vector<std::string> keys = {}) {
  QuerySpec spec;
  spec.id = "test";
  spec.relations = std::move(relations);
  for (auto& [l, r] : predicates) spec.predicates.push_back(pred(l, r));
  spec.privateRelations = std::move(privateRelations);
  for (auto& k : keys) spec.keys.push_back(AttributeRef::parse(k));
  return spec;
}

// Two-relation chain R1(A,B) -> R2(B,C):
//   R1: (a,x) (b,x) (b,y)    R2: (x,c) (y,d) (y,e)
// Join on B: x pairs 2*1, y pairs 1*2 -> count 4.
inline void fill_chain2(Dataset& ds) {
  add_rel(ds, "R1", {"A", "B"}, {{"a", "x"}, {"b", "x"}, {"b", "y"}});
  add_rel(ds, "R2", {"B", "C"}, {{"x", "c"}, {"y", "d"}, {"y", "e"}});
}

inline QuerySpec chain2_spec(std::vector<std::string> privateRelations = {"R1", "R2"}) {
  return make_spec({"R1", "R2"}, {{"R1.B", "R2.B"}}, std::move(privateRelations));
}

// Three-relation chain over edge relations R1 -> R2 -> R3 (to = from).
inline QuerySpec chain3_spec(std::vector<std::string> privateRelations = {"R1", "R3"}) {
  return make_spec({"R1", "R2", "R3"}, {{"R1.to", "R2.from"}, {"R2.to", "R3.from"}},
                   std::move(privateRelations));
}

inline QuerySpec chain4_spec(std::vector<std::string> privateRelations = {"R1", "R4"}) {
  return make_spec({"R1", "R2", "R3", "R4"},
                   {{"R1.to", "R2.from"}, {"R2.to", "R3.from"}, {"R3.to", "R4.from"}},
                   std::move(privateRelations));
}

inline QuerySpec triangle_spec(std::vector<std::string> privateRelations = {"R1", "R2", "R3"}) {
  return make_spec({"R1", "R2", "R3"},
                   {{"R1.to", "R2.from"}, {"R2.to", "R3.from"}, {"R3.to", "R1.from"}},
                   std::move(privateRelations));
}

}  // namespace jt
