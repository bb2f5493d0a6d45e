#include "joinsense/exact.hpp"

#include <algorithm>
#include <functional>
#include <limits>
#include <numeric>

namespace joinsense {

namespace {

using u128 = unsigned __int128;

std::uint64_t to_u64(u128 v) {
  if (v > static_cast<u128>(std::numeric_limits<std::uint64_t>::max()))
    throw DataError("join count overflows 64 bits");
  return static_cast<std::uint64_t>(v);
}

std::size_t lowest_member(Mask m) { return static_cast<std::size_t>(__builtin_ctz(m)); }

// Tree aggregation over an acyclic connected component: bottom-up messages
// value → count of subtree completions, then a root sweep. O(rows·branching).
std::uint64_t count_acyclic_component(const BoundQuery& q, const WalkPlan& plan) {
  const std::size_t levels = plan.order.size();
  // children[i] = indexes of steps whose bound side is plan.order[i]
  std::vector<std::vector<std::size_t>> children(levels);
  std::vector<std::size_t> levelOf(q.n(), SIZE_MAX);
  for (std::size_t i = 0; i < levels; ++i) levelOf[plan.order[i]] = i;
  for (std::size_t s = 0; s < plan.steps.size(); ++s)
    children[levelOf[plan.steps[s].boundRel]].push_back(s);

  // messages[s]: for step s (child = steps[s].newRel), value on the parent's
  // boundAttr → summed completions of the child subtree.
  std::vector<std::unordered_map<Value, u128>> messages(plan.steps.size());

  for (std::size_t i = levels; i-- > 1;) {
    const std::size_t rel = plan.order[i];
    const Relation& r = q.relation(rel);
    const std::size_t stepIdx = i - 1;  // step that bound this relation
    const WalkStep& step = plan.steps[stepIdx];
    auto& msg = messages[stepIdx];
    for (RowId row = 0; row < r.row_count(); ++row) {
      u128 w = 1;
      for (std::size_t cs : children[i]) {
        const auto& childMsg = messages[cs];
        auto it = childMsg.find(r.at(row, plan.steps[cs].boundAttr));
        if (it == childMsg.end()) { w = 0; break; }
        w *= it->second;
      }
      if (w != 0) msg[r.at(row, step.newAttr)] += w;
    }
  }

  const Relation& root = q.relation(plan.order[0]);
  u128 total = 0;
  for (RowId row = 0; row < root.row_count(); ++row) {
    u128 w = 1;
    for (std::size_t cs : children[0]) {
      const auto& childMsg = messages[cs];
      auto it = childMsg.find(root.at(row, plan.steps[cs].boundAttr));
      if (it == childMsg.end()) { w = 0; break; }
      w *= it->second;
    }
    total += w;
  }
  return to_u64(total);
}

// Index-backed depth-first enumeration of a component's join output. Calls
// `leaf` once per joined row combination with the bound row ids.
template <typename LeafFn>
void enumerate_component(const BoundQuery& q, const WalkPlan& plan, LeafFn&& leaf) {
  const std::size_t levels = plan.order.size();
  std::vector<RowId> bound(levels, 0);
  std::vector<std::size_t> levelOf(q.n(), SIZE_MAX);
  for (std::size_t i = 0; i < levels; ++i) levelOf[plan.order[i]] = i;

  // Check edges grouped by the step index at which they become verifiable.
  std::vector<std::vector<std::size_t>> checksAt(levels);
  for (const auto& ce : plan.checks) checksAt[ce.readyStep].push_back(ce.predIdx);

  auto passes_checks = [&](std::size_t level) {
    for (std::size_t pi : checksAt[level]) {
      const auto& bp = q.predicates()[pi];
      const Value va = q.relation(bp.relA).at(bound[levelOf[bp.relA]], bp.attrA);
      const Value vb = q.relation(bp.relB).at(bound[levelOf[bp.relB]], bp.attrB);
      if (va != vb) return false;
    }
    return true;
  };

  std::function<void(std::size_t)> descend = [&](std::size_t level) {
    if (level == levels) {
      leaf(bound);
      return;
    }
    const WalkStep& step = plan.steps[level - 1];
    const Relation& next = q.relation(step.newRel);
    const Value v = q.relation(step.boundRel).at(bound[levelOf[step.boundRel]], step.boundAttr);
    const std::vector<RowId>* rows = next.postings(step.newAttr, v);
    if (!rows) return;
    for (RowId row : *rows) {
      bound[level] = row;
      if (!passes_checks(level)) continue;
      descend(level + 1);
    }
  };

  const Relation& start = q.relation(plan.order[0]);
  for (RowId row = 0; row < start.row_count(); ++row) {
    bound[0] = row;
    if (!passes_checks(0)) continue;
    descend(1);
  }
}

void ensure_component_indexes(const BoundQuery& q, const WalkPlan& plan) {
  // Enumeration needs value indexes on every step's new-side attribute.
  for (const auto& step : plan.steps) {
    Relation& rel = const_cast<Relation&>(q.relation(step.newRel));
    if (!rel.index_built(step.newAttr))
      build_index(rel, rel.attributes()[step.newAttr]);
  }
}

std::uint64_t count_component(const BoundQuery& q, Mask comp) {
  const std::size_t nodes = static_cast<std::size_t>(__builtin_popcount(comp));
  if (nodes == 1) return q.relation(lowest_member(comp)).row_count();
  WalkPlan plan = walk_plan(q, comp, lowest_member(comp));
  if (plan.checks.empty()) return count_acyclic_component(q, plan);
  ensure_component_indexes(q, plan);
  u128 total = 0;
  enumerate_component(q, plan, [&total](const std::vector<RowId>&) { ++total; });
  return to_u64(total);
}

}  // namespace

std::uint64_t exact_join_count(const BoundQuery& query, Mask subset) {
  u128 total = 1;
  for (Mask comp : components(query, subset)) {
    total *= count_component(query, comp);
    if (total == 0) return 0;
  }
  return to_u64(total);
}

std::uint64_t exact_join_count(const BoundQuery& query) {
  return exact_join_count(query, query.full_mask());
}

namespace {

// Max group count over the component's boundary tuple, by enumeration.
std::uint64_t component_max_boundary(const BoundQuery& q, Mask comp,
                                     const std::vector<BoundaryAttr>& fullBoundary) {
  std::vector<BoundaryAttr> boundary;
  for (const auto& ba : fullBoundary)
    if ((comp >> ba.rel) & 1u) boundary.push_back(ba);

  if (boundary.empty()) return count_component(q, comp);

  const std::size_t nodes = static_cast<std::size_t>(__builtin_popcount(comp));
  if (nodes == 1) {
    const Relation& r = q.relation(lowest_member(comp));
    std::vector<std::string> attrs;
    for (const auto& ba : boundary) attrs.push_back(r.attributes()[ba.attr]);
    return r.max_frequency(attrs);
  }

  WalkPlan plan = walk_plan(q, comp, lowest_member(comp));
  ensure_component_indexes(q, plan);
  std::vector<std::size_t> levelOf(q.n(), SIZE_MAX);
  for (std::size_t i = 0; i < plan.order.size(); ++i) levelOf[plan.order[i]] = i;

  std::map<std::vector<Value>, std::uint64_t> histogram;
  std::vector<Value> key(boundary.size());
  std::uint64_t best = 0;
  enumerate_component(q, plan, [&](const std::vector<RowId>& bound) {
    for (std::size_t i = 0; i < boundary.size(); ++i)
      key[i] = q.relation(boundary[i].rel).at(bound[levelOf[boundary[i].rel]], boundary[i].attr);
    best = std::max(best, ++histogram[key]);
  });
  return best;
}

}  // namespace

std::uint64_t exact_max_boundary(const BoundQuery& query, Mask e) {
  if (e == 0) return 1;
  const auto fullBoundary = boundary_attributes(query, e);
  u128 total = 1;
  for (Mask comp : components(query, e)) {
    total *= component_max_boundary(query, comp, fullBoundary);
    if (total == 0) return 0;
  }
  return to_u64(total);
}

std::map<std::vector<Value>, std::uint64_t> exact_group_counts(const BoundQuery& query, Mask e) {
  const auto comps = components(query, e);
  if (comps.size() != 1)
    throw UsageError("per-group counts require a connected residual query");
  const auto boundary = boundary_attributes(query, e);

  WalkPlan plan = walk_plan(query, e, lowest_member(e));
  ensure_component_indexes(query, plan);
  std::vector<std::size_t> levelOf(query.n(), SIZE_MAX);
  for (std::size_t i = 0; i < plan.order.size(); ++i) levelOf[plan.order[i]] = i;

  std::map<std::vector<Value>, std::uint64_t> histogram;
  std::vector<Value> key(boundary.size());
  enumerate_component(query, plan, [&](const std::vector<RowId>& bound) {
    for (std::size_t i = 0; i < boundary.size(); ++i)
      key[i] = query.relation(boundary[i].rel).at(bound[levelOf[boundary[i].rel]], boundary[i].attr);
    ++histogram[key];
  });
  return histogram;
}

namespace {

// True when every non-entry relation of the component is reached through a
// declared key attribute (each step then matches at most one row), making the
// component's max boundary collapse to the entry relation's max frequency.
bool key_reduction_applies(const BoundQuery& q, Mask comp,
                           const std::vector<BoundaryAttr>& boundary, std::size_t& entryOut) {
  if (boundary.empty()) return false;
  const std::size_t entry = boundary.front().rel;
  for (const auto& ba : boundary)
    if (ba.rel != entry) return false;  // boundary must live on one relation
  WalkPlan plan;
  try {
    plan = walk_plan(q, comp, entry);
  } catch (const SchemaError&) {
    return false;
  }
  if (!plan.checks.empty()) return false;
  for (const auto& step : plan.steps) {
    const auto keys = q.declared_keys(step.newRel);
    if (std::find(keys.begin(), keys.end(), step.newAttr) == keys.end()) return false;
  }
  entryOut = entry;
  return true;
}

}  // namespace

MaxBoundaryTable build_exact_table(const BoundQuery& query, bool useKeys) {
  MaxBoundaryTable table;
  // Compute per-component values once, then compose subsets as products.
  std::unordered_map<Mask, BoundaryEntry> componentCache;

  auto component_entry = [&](Mask comp, const std::vector<BoundaryAttr>& fullBoundary) {
    auto it = componentCache.find(comp);
    if (it != componentCache.end()) return it->second;
    BoundaryEntry entry;
    std::vector<BoundaryAttr> boundary;
    for (const auto& ba : fullBoundary)
      if ((comp >> ba.rel) & 1u) boundary.push_back(ba);
    std::size_t entryRel = 0;
    if (useKeys && key_reduction_applies(query, comp, boundary, entryRel)) {
      const Relation& r = query.relation(entryRel);
      std::vector<std::string> attrs;
      for (const auto& ba : boundary) attrs.push_back(r.attributes()[ba.attr]);
      entry.value = static_cast<double>(r.max_frequency(attrs));
      entry.provenance = Provenance::Reduced;
    } else {
      entry.value = static_cast<double>(component_max_boundary(query, comp, fullBoundary));
      entry.provenance = Provenance::Exact;
    }
    componentCache.emplace(comp, entry);
    return entry;
  };

  for (Mask e : residual_set(query)) {
    if (e == 0) continue;
    const auto fullBoundary = boundary_attributes(query, e);
    double value = 1.0;
    bool reduced = false;
    for (Mask comp : components(query, e)) {
      const auto entry = component_entry(comp, fullBoundary);
      value *= entry.value;
      reduced = reduced || entry.provenance == Provenance::Reduced;
    }
    table.set(e, BoundaryEntry{value, reduced ? Provenance::Reduced : Provenance::Exact, 0.0, true});
  }
  return table;
}

// ---------------------------------------------------------------------------
// Local-sensitivity oracles.

namespace {

// Virtual row: values on join attributes only (others never affect counts).
using VirtualRow = std::vector<std::pair<std::size_t, Value>>;  // (attrIdx, value)

struct EditedInstance {
  const BoundQuery* q;
  // Per relation: appended virtual rows.
  std::vector<std::vector<VirtualRow>> extra;
  // Pivot override: when set for relation i, R_i = {pivotRow} only.
  std::size_t pivotRel = SIZE_MAX;
  VirtualRow pivotRow;

  std::size_t rows(std::size_t rel) const {
    if (rel == pivotRel) return 1;
    return q->relation(rel).row_count() + extra[rel].size();
  }

  Value value(std::size_t rel, std::size_t row, std::size_t attr) const {
    auto fromVirtual = [&](const VirtualRow& vr) {
      for (const auto& [a, v] : vr)
        if (a == attr) return v;
      // Attribute outside the virtual row's join attributes: a unique
      // non-matching filler (never equal to any real value).
      return Value{-1};
    };
    if (rel == pivotRel) return fromVirtual(pivotRow);
    const Relation& r = q->relation(rel);
    if (row < r.row_count()) return r.at(static_cast<RowId>(row), attr);
    return fromVirtual(extra[rel][row - r.row_count()]);
  }
};

// Linear-scan backtracking join count over an edited instance (tiny only).
std::uint64_t count_edited(const EditedInstance& inst) {
  const BoundQuery& q = *inst.q;
  u128 total = 1;
  for (Mask comp : components(q, q.full_mask())) {
    WalkPlan plan = walk_plan(q, comp, lowest_member(comp));
    const std::size_t levels = plan.order.size();
    std::vector<std::size_t> levelOf(q.n(), SIZE_MAX);
    for (std::size_t i = 0; i < levels; ++i) levelOf[plan.order[i]] = i;
    std::vector<std::vector<std::size_t>> checksAt(levels);
    for (const auto& ce : plan.checks) checksAt[ce.readyStep].push_back(ce.predIdx);
    std::vector<std::size_t> bound(levels, 0);

    auto passes = [&](std::size_t level) {
      for (std::size_t pi : checksAt[level]) {
        const auto& bp = q.predicates()[pi];
        if (inst.value(bp.relA, bound[levelOf[bp.relA]], bp.attrA) !=
            inst.value(bp.relB, bound[levelOf[bp.relB]], bp.attrB))
          return false;
      }
      return true;
    };

    u128 compCount = 0;
    std::function<void(std::size_t)> descend = [&](std::size_t level) {
      if (level == levels) { ++compCount; return; }
      const WalkStep& step = plan.steps[level - 1];
      const Value v = inst.value(step.boundRel, bound[levelOf[step.boundRel]], step.boundAttr);
      for (std::size_t row = 0; row < inst.rows(step.newRel); ++row) {
        if (inst.value(step.newRel, row, step.newAttr) != v) continue;
        bound[level] = row;
        if (!passes(level)) continue;
        descend(level + 1);
      }
    };
    for (std::size_t row = 0; row < inst.rows(plan.order[0]); ++row) {
      bound[0] = row;
      if (!passes(0)) continue;
      descend(1);
    }
    total *= compCount;
    if (total == 0) return 0;
  }
  return to_u64(total);
}

// Join-attribute equivalence classes (attributes transitively linked by
// predicates). Shared fresh tokens per class let added tuples chain through
// fresh values.
struct AttrClasses {
  std::map<std::pair<std::size_t, std::size_t>, std::size_t> classOf;  // (rel,attr) → class
  std::size_t count = 0;
};

AttrClasses attr_classes(const BoundQuery& q) {
  AttrClasses ac;
  std::map<std::pair<std::size_t, std::size_t>, std::pair<std::size_t, std::size_t>> parent;
  std::function<std::pair<std::size_t, std::size_t>(std::pair<std::size_t, std::size_t>)> find =
      [&](std::pair<std::size_t, std::size_t> x) {
        if (!parent.count(x)) parent[x] = x;
        while (parent[x] != x) { parent[x] = parent[parent[x]]; x = parent[x]; }
        return x;
      };
  for (const auto& bp : q.predicates()) {
    auto a = find({bp.relA, bp.attrA});
    auto b = find({bp.relB, bp.attrB});
    if (a != b) parent[a] = b;
  }
  for (std::size_t rel = 0; rel < q.n(); ++rel)
    for (std::size_t attr : q.join_attrs(rel)) {
      auto root = find({rel, attr});
      if (!ac.classOf.count(root)) ac.classOf[root] = ac.count++;
      ac.classOf[{rel, attr}] = ac.classOf[root];
    }
  return ac;
}

Value fresh_value_for_class(std::size_t cls) { return -static_cast<Value>(cls) - 2; }

// Candidate values for (rel, attr): every value that can match anything the
// instance or a same-class fresh insertion can offer. Any value outside this
// set behaves exactly like the class's fresh token.
std::vector<Value> candidate_values(const BoundQuery& q, const AttrClasses& ac,
                                    std::size_t rel, std::size_t attr) {
  const std::size_t cls = ac.classOf.at({rel, attr});
  std::vector<Value> vals;
  for (const auto& [key, c] : ac.classOf) {
    if (c != cls) continue;
    const auto& column = q.relation(key.first).column(key.second);
    vals.insert(vals.end(), column.begin(), column.end());
  }
  std::sort(vals.begin(), vals.end());
  vals.erase(std::unique(vals.begin(), vals.end()), vals.end());
  vals.push_back(fresh_value_for_class(cls));
  return vals;
}

// All candidate virtual rows for a relation (cross product over join attrs).
std::vector<VirtualRow> candidate_rows(const BoundQuery& q, const AttrClasses& ac,
                                       std::size_t rel, std::uint64_t budget) {
  const auto attrs = q.join_attrs(rel);
  std::vector<std::vector<Value>> perAttr;
  u128 total = 1;
  for (std::size_t a : attrs) {
    perAttr.push_back(candidate_values(q, ac, rel, a));
    total *= perAttr.back().size();
    if (total > budget)
      throw BudgetError("insertion domain of relation " + q.relation(rel).name() +
                        " exceeds the oracle budget (" + std::to_string(budget) + ")");
  }
  std::vector<VirtualRow> rows;
  if (attrs.empty()) {
    rows.push_back({});  // no join attributes: one representative tuple
    return rows;
  }
  std::vector<std::size_t> idx(attrs.size(), 0);
  while (true) {
    VirtualRow vr;
    for (std::size_t i = 0; i < attrs.size(); ++i) vr.emplace_back(attrs[i], perAttr[i][idx[i]]);
    rows.push_back(std::move(vr));
    std::size_t i = 0;
    for (; i < attrs.size(); ++i) {
      if (++idx[i] < perAttr[i].size()) break;
      idx[i] = 0;
    }
    if (i == attrs.size()) break;
  }
  return rows;
}

struct OracleContext {
  const BoundQuery* q;
  AttrClasses classes;
  std::vector<std::vector<VirtualRow>> candidates;  // per relation
  std::uint64_t evals = 0;
  std::uint64_t budget = 0;

  void charge(std::uint64_t n = 1) {
    evals += n;
    if (evals > budget)
      throw BudgetError("local-sensitivity oracle exceeded its evaluation budget");
  }
};

// Max join degree of any candidate tuple of pivot relation i against the
// edited instance (extra rows already applied).
std::uint64_t max_pivot_degree(OracleContext& ctx, EditedInstance inst, std::size_t pivot) {
  inst.pivotRel = pivot;
  std::uint64_t best = 0;
  for (const auto& cand : ctx.candidates[pivot]) {
    ctx.charge();
    inst.pivotRow = cand;
    best = std::max(best, count_edited(inst));
  }
  return best;
}

}  // namespace

std::uint64_t local_sensitivity_oracle(const BoundQuery& query, std::uint64_t budget) {
  if (query.private_mask() == 0) return 0;
  OracleContext ctx;
  ctx.q = &query;
  ctx.classes = attr_classes(query);
  ctx.budget = budget;
  ctx.candidates.resize(query.n());
  for (std::size_t i = 0; i < query.n(); ++i)
    if (query.is_private(i)) ctx.candidates[i] = candidate_rows(query, ctx.classes, i, budget);

  EditedInstance base;
  base.q = &query;
  base.extra.resize(query.n());

  std::uint64_t best = 0;
  for (std::size_t i = 0; i < query.n(); ++i) {
    if (!query.is_private(i)) continue;
    // Candidate tuples subsume existing rows' join-attribute projections, so
    // the insertion maximum also covers every deletion effect.
    best = std::max(best, max_pivot_degree(ctx, base, i));
  }
  return best;
}

std::uint64_t local_sensitivity_at_k_oracle(const BoundQuery& query, std::uint64_t k,
                                            std::uint64_t budget) {
  if (query.private_mask() == 0) return 0;
  OracleContext ctx;
  ctx.q = &query;
  ctx.classes = attr_classes(query);
  ctx.budget = budget;
  ctx.candidates.resize(query.n());
  for (std::size_t i = 0; i < query.n(); ++i)
    if (query.is_private(i)) ctx.candidates[i] = candidate_rows(query, ctx.classes, i, budget);

  std::vector<std::size_t> privates;
  for (std::size_t i = 0; i < query.n(); ++i)
    if (query.is_private(i)) privates.push_back(i);

  std::uint64_t best = 0;
  // For each pivot, distribute k added tuples over the other private
  // relations (deletions never raise a degree; insertions into the pivot
  // itself do not change the pivot's own degree).
  for (std::size_t pivot : privates) {
    std::vector<std::size_t> targets;
    for (std::size_t j : privates)
      if (j != pivot) targets.push_back(j);

    EditedInstance inst;
    inst.q = &query;
    inst.extra.resize(query.n());

    // Depth-first over multisets of k insertions into `targets`.
    std::function<void(std::size_t, std::uint64_t, std::size_t)> assign =
        [&](std::size_t targetIdx, std::uint64_t remaining, std::size_t minCand) {
          if (targetIdx == targets.size() || remaining == 0) {
            if (remaining == 0) best = std::max(best, max_pivot_degree(ctx, inst, pivot));
            return;
          }
          const std::size_t rel = targets[targetIdx];
          // Choose how many tuples go into `rel`, then which ones
          // (non-decreasing candidate indexes → multisets, not sequences).
          std::function<void(std::uint64_t, std::size_t)> pick = [&](std::uint64_t left,
                                                                     std::size_t from) {
            assign(targetIdx + 1, left, 0);
            if (left == 0) return;
            for (std::size_t c = from; c < ctx.candidates[rel].size(); ++c) {
              inst.extra[rel].push_back(ctx.candidates[rel][c]);
              pick(left - 1, c);
              inst.extra[rel].pop_back();
            }
          };
          pick(remaining, minCand);
        };
    if (targets.empty()) {
      best = std::max(best, max_pivot_degree(ctx, inst, pivot));
    } else {
      assign(0, k, 0);
    }
  }
  return best;
}

}  // namespace joinsense
