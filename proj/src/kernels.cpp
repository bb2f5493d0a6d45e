#include "joinsense/kernels.hpp"

#include <bit>
#include <cstddef>
#include <functional>
#include <utility>

#include "joinsense/errors.hpp"
#include "joinsense/sketch.hpp"

#ifdef _OPENMP
#include <omp.h>
#endif

namespace joinsense {

namespace {

void ensure_plan_indexes(const BoundQuery& query, const WalkPlan& plan) {
  for (const WalkStep& st : plan.steps) {
    const Relation& r = query.relation(st.newRel);
    if (!r.index_built(st.newAttr))
      build_index(const_cast<Relation&>(r), r.attributes()[st.newAttr]);
  }
}

}  // namespace

// ---------------------------------------------------------------------------
// Sketch cell fill
// ---------------------------------------------------------------------------

namespace {

std::int64_t fill_one_cell(const std::vector<std::vector<std::uint64_t>>& hashedColumns,
                           std::uint64_t rowCount, const std::vector<std::uint64_t>& familyIds,
                           std::uint64_t masterSeed, std::uint64_t t, std::uint64_t s) {
  std::vector<XiFamily> families;
  families.reserve(familyIds.size());
  for (std::uint64_t familyId : familyIds) families.emplace_back(masterSeed, t, s, familyId);
  std::int64_t sum = 0;
  for (std::uint64_t row = 0; row < rowCount; ++row) {
    int prod = 1;
    for (std::size_t f = 0; f < families.size(); ++f) prod *= families[f](hashedColumns[f][row]);
    sum += prod;
  }
  return sum;
}

}  // namespace

std::vector<std::int64_t> sketch_cells(
    const std::vector<std::vector<std::uint64_t>>& hashedColumns, std::uint64_t rowCount,
    const std::vector<std::uint64_t>& familyIds, std::uint64_t masterSeed, std::uint64_t s1,
    std::uint64_t s2, bool parallel) {
  if (hashedColumns.size() != familyIds.size())
    throw UsageError("one hashed column per family occurrence is required");
  for (const auto& column : hashedColumns)
    if (column.size() != rowCount) throw UsageError("hashed columns must cover every row");

  const std::int64_t cells = static_cast<std::int64_t>(s1 * s2);
  std::vector<std::int64_t> out(static_cast<std::size_t>(cells), 0);

#ifdef _OPENMP
  if (parallel) {
#pragma omp parallel for schedule(static)
    for (std::int64_t c = 0; c < cells; ++c)
      out[static_cast<std::size_t>(c)] =
          fill_one_cell(hashedColumns, rowCount, familyIds, masterSeed,
                        static_cast<std::uint64_t>(c) / s1, static_cast<std::uint64_t>(c) % s1);
    return out;
  }
#else
  (void)parallel;
#endif
  for (std::int64_t c = 0; c < cells; ++c)
    out[static_cast<std::size_t>(c)] =
        fill_one_cell(hashedColumns, rowCount, familyIds, masterSeed,
                      static_cast<std::uint64_t>(c) / s1, static_cast<std::uint64_t>(c) % s1);
  return out;
}

// ---------------------------------------------------------------------------
// Boundary group counts
// ---------------------------------------------------------------------------

namespace {

struct EnumContext {
  const BoundQuery* query = nullptr;
  WalkPlan plan;
  PlanRuntime runtime;
  std::vector<BoundaryAttr> boundary;
};

// Exhaustive index-backed enumeration from one start row, accumulating join
// counts per boundary tuple into `local`.
void enumerate_from(const EnumContext& ctx, RowId startRow, std::vector<RowId>& rows,
                    std::map<std::vector<Value>, std::uint64_t>& local) {
  const BoundQuery& query = *ctx.query;
  rows[0] = startRow;
  std::function<void(std::size_t)> rec = [&](std::size_t step) {
    if (step == ctx.plan.steps.size()) {
      std::vector<Value> key;
      key.reserve(ctx.boundary.size());
      for (const BoundaryAttr& b : ctx.boundary)
        key.push_back(query.relation(b.rel).at(rows[ctx.runtime.pos[b.rel]], b.attr));
      ++local[std::move(key)];
      return;
    }
    const WalkStep& st = ctx.plan.steps[step];
    const Value v =
        query.relation(st.boundRel).at(rows[ctx.runtime.pos[st.boundRel]], st.boundAttr);
    const std::vector<RowId>* post = query.relation(st.newRel).postings(st.newAttr, v);
    if (!post) return;
    for (RowId r : *post) {
      rows[ctx.runtime.pos[st.newRel]] = r;
      bool ok = true;
      for (const BoundPredicate& c : ctx.runtime.checksAt[step]) {
        const Value a = query.relation(c.relA).at(rows[ctx.runtime.pos[c.relA]], c.attrA);
        const Value b = query.relation(c.relB).at(rows[ctx.runtime.pos[c.relB]], c.attrB);
        if (a != b) {
          ok = false;
          break;
        }
      }
      if (ok) rec(step + 1);
    }
  };
  rec(0);
}

}  // namespace

std::map<std::vector<Value>, std::uint64_t> boundary_group_counts(const BoundQuery& query,
                                                                  Mask component, bool parallel) {
  if (component == 0) throw UsageError("group counts need a non-empty relation set");
  if (components(query, component).size() != 1)
    throw UsageError("group counts enumerate one connected relation set at a time");

  EnumContext ctx;
  ctx.query = &query;
  const auto entry = static_cast<std::size_t>(std::countr_zero(component));
  ctx.plan = walk_plan(query, component, entry);
  ensure_plan_indexes(query, ctx.plan);
  ctx.runtime = PlanRuntime::build(query, ctx.plan);
  ctx.boundary = boundary_attributes(query, component);

  const Relation& rel = query.relation(entry);
  const auto rowCount = static_cast<std::int64_t>(rel.row_count());
  std::map<std::vector<Value>, std::uint64_t> global;

#ifdef _OPENMP
  if (parallel) {
#pragma omp parallel
    {
      std::map<std::vector<Value>, std::uint64_t> local;
      std::vector<RowId> rows(ctx.plan.order.size(), 0);
#pragma omp for schedule(dynamic, 64) nowait
      for (std::int64_t r = 0; r < rowCount; ++r)
        enumerate_from(ctx, static_cast<RowId>(r), rows, local);
#pragma omp critical(joinsense_group_counts_merge)
      for (const auto& [key, count] : local) global[key] += count;
    }
    return global;
  }
#else
  (void)parallel;
#endif
  std::vector<RowId> rows(ctx.plan.order.size(), 0);
  for (std::int64_t r = 0; r < rowCount; ++r)
    enumerate_from(ctx, static_cast<RowId>(r), rows, global);
  return global;
}

// ---------------------------------------------------------------------------
// Walk batches
// ---------------------------------------------------------------------------

std::vector<WalkOutcome> walk_batch(const BoundQuery& query, const WalkPlan& plan,
                                    const PlanRuntime& runtime,
                                    const std::vector<WalkBatchItem>& items, std::uint64_t seed,
                                    bool parallel) {
  ensure_plan_indexes(query, plan);
  const auto count = static_cast<std::int64_t>(items.size());
  std::vector<WalkOutcome> out(items.size());

  const auto runOne = [&](std::int64_t i) {
    const WalkBatchItem& item = items[static_cast<std::size_t>(i)];
    Rng rng = Rng::stream(seed, {item.tag, static_cast<std::uint64_t>(item.e),
                                 static_cast<std::uint64_t>(item.comp), item.groupKey,
                                 item.index});
    out[static_cast<std::size_t>(i)] = run_walk(query, plan, runtime, *item.startRows, rng);
  };

#ifdef _OPENMP
  if (parallel) {
#pragma omp parallel for schedule(static)
    for (std::int64_t i = 0; i < count; ++i) runOne(i);
    return out;
  }
#else
  (void)parallel;
#endif
  for (std::int64_t i = 0; i < count; ++i) runOne(i);
  return out;
}

}  // namespace joinsense
