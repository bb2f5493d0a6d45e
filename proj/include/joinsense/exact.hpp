#pragma once

// Ground-truth oracles: exact join counts, exact maximum boundaries of
// residual queries, and brute-force local sensitivity (plus local sensitivity
// at edit distance k) on desk-scale instances.

#include <cstdint>
#include <map>
#include <unordered_map>
#include <vector>

#include "joinsense/query.hpp"

namespace joinsense {

enum class Provenance { Exact, Sampled, Reduced };

struct BoundaryEntry {
  double value = 0.0;
  Provenance provenance = Provenance::Exact;
  double halfWidth = 0.0;  // confidence half-width for sampled entries
  bool converged = true;
};

// Map E → T_E. The empty set is always present with T_∅ = 1.
class MaxBoundaryTable {
 public:
  MaxBoundaryTable() { entries_[0] = BoundaryEntry{1.0, Provenance::Exact, 0.0, true}; }

  void set(Mask e, BoundaryEntry entry) { entries_[e] = entry; }
  bool has(Mask e) const { return entries_.count(e) != 0; }
  const BoundaryEntry& entry(Mask e) const {
    auto it = entries_.find(e);
    if (it == entries_.end())
      throw DataError("maximum-boundary table is missing a residual entry");
    return it->second;
  }
  double at(Mask e) const { return entry(e).value; }
  const std::unordered_map<Mask, BoundaryEntry>& entries() const { return entries_; }

  bool all_converged() const {
    for (const auto& [mask, e] : entries_)
      if (!e.converged) return false;
    return true;
  }

 private:
  std::unordered_map<Mask, BoundaryEntry> entries_;
};

// Exact COUNT(*) of the equi-join restricted to `subset` (default: the full
// query). Disconnected subsets multiply their components' counts; the empty
// subset counts 1 (empty join). Acyclic components run tree aggregation in
// O(rows · branching); cyclic components fall back to index-backed
// enumeration of the join output.
std::uint64_t exact_join_count(const BoundQuery& query, Mask subset);
std::uint64_t exact_join_count(const BoundQuery& query);

// Exact T_E: max over boundary-value combinations of the group count of the
// E-join (0 when the E-join is empty); product over connected components;
// T_∅ = 1. Enumeration-based on multi-relation components (O(join output)):
// the honest cost model for the exact baseline.
std::uint64_t exact_max_boundary(const BoundQuery& query, Mask e);

// Per-group exact counts of a connected residual query, keyed by the boundary
// tuple (values ordered like boundary_attributes). Test oracle for the
// sampling estimator's no-miss property.
std::map<std::vector<Value>, std::uint64_t> exact_group_counts(const BoundQuery& query, Mask e);

// Exact table over every subset in residual_set(query). `useKeys` applies the
// declared-key reduction (single-relation max frequency) on components whose
// non-entry relations are all reached through declared key attributes.
MaxBoundaryTable build_exact_table(const BoundQuery& query, bool useKeys = false);

// Brute-force local sensitivity: max effect of one tuple inserted into or
// deleted from a private relation. Insertion tuples range over each join
// attribute's matchable value set (own column ∪ columns of attributes in the
// same join-equivalence class) plus one fresh token per equivalence class;
// any other value behaves exactly like the fresh one, so the maximum is exact
// for equi-join counting. `budget` caps candidate-tuple join evaluations.
std::uint64_t local_sensitivity_oracle(const BoundQuery& query, std::uint64_t budget = 1u << 22);

// Brute-force local sensitivity at edit distance k: max of LS over instances
// reachable with k tuple edits of private relations. Deletions never raise a
// join degree, so the search adds k tuples (per-pivot, over private relations
// other than the pivot). Fresh tokens are shared per join-equivalence class so
// added tuples can chain through fresh values — required for exactness at
// k ≥ 2. Refuses above `budget` join evaluations.
std::uint64_t local_sensitivity_at_k_oracle(const BoundQuery& query, std::uint64_t k,
                                            std::uint64_t budget = 1u << 22);

}  // namespace joinsense
