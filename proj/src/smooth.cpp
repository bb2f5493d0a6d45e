#include "joinsense/smooth.hpp"

#include <algorithm>
#include <cmath>

namespace joinsense {

SmoothingParams SmoothingParams::laplace(double epsilon, double delta) {
  if (epsilon <= 0.0) throw ConfigError("epsilon must be positive");
  if (delta <= 0.0 || delta >= 1.0) throw ConfigError("delta must lie in (0,1)");
  SmoothingParams p;
  p.epsilon = epsilon;
  p.delta = delta;
  p.beta = epsilon / (2.0 * std::log(2.0 / delta));
  p.kind = BetaKind::LaplaceSmooth;
  return p;
}

SmoothingParams SmoothingParams::general_cauchy(double epsilon, double gamma) {
  if (epsilon <= 0.0) throw ConfigError("epsilon must be positive");
  if (gamma <= 1.0) throw ConfigError("gamma must exceed 1");
  SmoothingParams p;
  p.epsilon = epsilon;
  p.gamma = gamma;
  p.beta = epsilon / (2.0 * (gamma + 1.0));
  p.kind = BetaKind::GeneralCauchy;
  return p;
}

std::string method_name(Method m) {
  switch (m) {
    case Method::ES: return "es";
    case Method::RS: return "rs";
    case Method::SamplingSE: return "sampling-se";
    case Method::SketchSE: return "sketch-se";
    case Method::LocalOracle: return "local-oracle";
  }
  return "?";
}

SmoothMaxResult smooth_max(const std::function<double(std::uint64_t)>& f, double beta,
                           std::uint64_t degreeBound) {
  if (beta <= 0.0) throw ConfigError("smoothing parameter beta must be positive");
  const std::uint64_t kMax =
      static_cast<std::uint64_t>(std::ceil(static_cast<double>(degreeBound) / beta)) + 1;
  SmoothMaxResult result;
  result.curve.reserve(kMax + 1);
  const double decayStep = std::exp(-beta);
  double decay = 1.0;
  for (std::uint64_t k = 0; k <= kMax; ++k) {
    const double v = decay * f(k);
    result.curve.push_back(v);
    if (v > result.value) {
      result.value = v;
      result.kStar = k;
    }
    decay *= decayStep;
  }
  return result;
}

namespace {

// BFS parent of every relation toward pivot i (lowest-index tie-breaks via
// walk_plan's deterministic exploration order).
std::vector<std::size_t> parents_toward(const BoundQuery& q, std::size_t pivot) {
  const WalkPlan plan = walk_plan(q, q.full_mask(), pivot);
  std::vector<std::size_t> parent(q.n(), SIZE_MAX);
  for (const auto& step : plan.steps) parent[step.newRel] = step.boundRel;
  return parent;
}

}  // namespace

ElasticStats build_elastic_stats(const BoundQuery& query) {
  const auto summary = validate(query);
  if (!summary.connected)
    throw SchemaError("elastic sensitivity requires a connected join graph");
  ElasticStats stats;
  for (std::size_t i = 0; i < query.n(); ++i) {
    if (!query.is_private(i)) continue;
    const auto parent = parents_toward(query, i);
    ElasticStats::Pivot pivot;
    pivot.pivotRel = i;
    for (std::size_t j = 0; j < query.n(); ++j) {
      if (j == i) continue;
      const auto attrs = query.link_attrs(j, parent[j]);
      const std::uint64_t mf = query.relation(j).max_frequency(query.attr_names(j, attrs));
      if (query.is_private(j))
        pivot.privateMf.push_back(mf);
      else
        pivot.publicProduct *= static_cast<double>(mf);
    }
    stats.pivots.push_back(std::move(pivot));
  }
  return stats;
}

double elastic_ls_at_k(const ElasticStats& stats, std::uint64_t k) {
  double best = 0.0;
  for (const auto& pivot : stats.pivots) {
    double product = pivot.publicProduct;
    for (std::uint64_t mf : pivot.privateMf)
      product *= static_cast<double>(mf) + static_cast<double>(k);
    best = std::max(best, product);
  }
  return best;
}

std::uint64_t elastic_ls_at_k(const BoundQuery& query, std::uint64_t k) {
  if (query.private_mask() == 0) return 0;
  const double v = elastic_ls_at_k(build_elastic_stats(query), k);
  if (v > static_cast<double>(std::numeric_limits<std::uint64_t>::max()))
    throw DataError("elastic bound overflows 64 bits");
  return static_cast<std::uint64_t>(v);
}

SensitivityReport elastic_sensitivity(const BoundQuery& query, const SmoothingParams& params) {
  if (query.private_mask() == 0)
    throw SchemaError("elastic sensitivity needs at least one private relation");
  const ElasticStats stats = build_elastic_stats(query);
  return elastic_sensitivity(stats, query.private_count(), params);
}

SensitivityReport elastic_sensitivity(const ElasticStats& stats, std::size_t privateCount,
                                      const SmoothingParams& params) {
  const std::uint64_t degree = privateCount == 0 ? 0 : privateCount - 1;
  const auto scan = smooth_max(
      [&stats](std::uint64_t k) { return elastic_ls_at_k(stats, k); }, params.beta, degree);
  SensitivityReport report;
  report.method = Method::ES;
  report.value = scan.value;
  report.kStar = scan.kStar;
  report.params = params;
  report.kCurve = scan.curve;
  return report;
}

double t_hat(Mask e, const std::vector<std::uint64_t>& s, const MaxBoundaryTable& table) {
  // Only subsets of the non-zero entries of s contribute.
  Mask support = 0;
  for (std::size_t i = 0; i < s.size(); ++i)
    if (s[i] > 0) support |= Mask{1} << i;
  support &= e;

  double total = 0.0;
  // Iterate sub-masks of `support` (including the empty set).
  Mask sub = support;
  while (true) {
    double term = table.at(e & ~sub);
    for (std::size_t i = 0; i < s.size(); ++i)
      if ((sub >> i) & 1u) term *= static_cast<double>(s[i]);
    total += term;
    if (sub == 0) break;
    sub = (sub - 1) & support;
  }
  return total;
}

namespace {

// Enumerates compositions of k over `slots`, invoking fn(s) for each vector s
// (indexed by relation) with Σ s = k and support ⊆ slots.
void for_each_composition(const std::vector<std::size_t>& slots, std::size_t n, std::uint64_t k,
                          const std::function<void(const std::vector<std::uint64_t>&)>& fn) {
  std::vector<std::uint64_t> s(n, 0);
  if (slots.empty()) {
    if (k == 0) fn(s);
    return;
  }
  std::function<void(std::size_t, std::uint64_t)> rec = [&](std::size_t idx, std::uint64_t left) {
    if (idx + 1 == slots.size()) {
      s[slots[idx]] = left;
      fn(s);
      s[slots[idx]] = 0;
      return;
    }
    for (std::uint64_t take = 0; take <= left; ++take) {
      s[slots[idx]] = take;
      rec(idx + 1, left - take);
    }
    s[slots[idx]] = 0;
  };
  rec(0, k);
}

}  // namespace

double residual_ls_at_k(const BoundQuery& query, const MaxBoundaryTable& table, std::uint64_t k) {
  if (query.private_mask() == 0) return 0.0;
  double best = 0.0;
  for (std::size_t i = 0; i < query.n(); ++i) {
    if (!query.is_private(i)) continue;
    const Mask e = query.full_mask() & ~(Mask{1} << i);
    std::vector<std::size_t> slots;
    for (std::size_t j = 0; j < query.n(); ++j)
      if (query.is_private(j) && j != i) slots.push_back(j);
    for_each_composition(slots, query.n(), k, [&](const std::vector<std::uint64_t>& s) {
      best = std::max(best, t_hat(e, s, table));
    });
  }
  return best;
}

SensitivityReport residual_sensitivity(const BoundQuery& query, const MaxBoundaryTable& table,
                                       const SmoothingParams& params, double gsCap) {
  const std::size_t p = query.private_count();
  const std::uint64_t degree = p == 0 ? 0 : p - 1;
  const auto scan = smooth_max(
      [&](std::uint64_t k) { return std::min(gsCap, residual_ls_at_k(query, table, k)); },
      params.beta, degree);
  SensitivityReport report;
  report.method = Method::RS;
  report.value = scan.value;
  report.kStar = scan.kStar;
  report.params = params;
  report.kCurve = scan.curve;
  report.converged = table.all_converged();
  return report;
}

}  // namespace joinsense
