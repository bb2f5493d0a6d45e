#pragma once

// Parallel kernels with serial reference implementations.
//
// Each kernel partitions its work over units whose outputs are independent of
// schedule order — sketch cells, start rows of an enumeration, or walk stream
// indexes — so the OpenMP build is bit-identical to the serial reference. The
// serial paths stay as the ground truth the tests and the benchmark compare
// against; without OpenMP the parallel entry points degrade to serial.

#include <cstdint>
#include <map>
#include <vector>

#include "joinsense/query.hpp"
#include "joinsense/relation.hpp"
#include "joinsense/rng.hpp"
#include "joinsense/sampling.hpp"

namespace joinsense {

// Fills the s2 x s1 counter matrix of one relation's sketch:
//   counters[t * s1 + s] = sum over rows of prod over f of
//                          xi_{t,s,familyIds[f]}(hashedColumns[f][row]).
// hashedColumns holds one column of token hashes (already reduced mod 2^61-1)
// per family occurrence; all columns have rowCount entries. With no family
// occurrences every counter is rowCount. Cells are independent, so the
// parallel fill splits over cells.
std::vector<std::int64_t> sketch_cells(
    const std::vector<std::vector<std::uint64_t>>& hashedColumns, std::uint64_t rowCount,
    const std::vector<std::uint64_t>& familyIds, std::uint64_t masterSeed, std::uint64_t s1,
    std::uint64_t s2, bool parallel);

// Histogram of join counts per boundary tuple for one connected relation set,
// by exhaustive index-backed enumeration; agrees with exact_group_counts on
// connected sets. The parallel version splits over start rows and merges
// thread-local histograms (addition commutes, so the merge order is
// irrelevant to the result).
std::map<std::vector<Value>, std::uint64_t> boundary_group_counts(const BoundQuery& query,
                                                                  Mask component, bool parallel);

// One random walk to replay: the stream is (tag, e, comp, groupKey, index)
// under the master seed, matching the estimator's per-group walk streams.
struct WalkBatchItem {
  std::uint64_t tag = stream_tag::kWalk;
  Mask e = 0;
  Mask comp = 0;
  std::uint64_t groupKey = 0;
  std::uint64_t index = 0;
  const std::vector<RowId>* startRows = nullptr;
};

// Runs a batch of walks over one plan. Walks draw from disjoint streams, so
// the batch is embarrassingly parallel and schedule-independent.
std::vector<WalkOutcome> walk_batch(const BoundQuery& query, const WalkPlan& plan,
                                    const PlanRuntime& runtime,
                                    const std::vector<WalkBatchItem>& items, std::uint64_t seed,
                                    bool parallel);

}  // namespace joinsense
