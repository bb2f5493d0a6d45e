#pragma once

// Smoothing machinery shared by every smooth upper bound, plus the two exact
// closed-form bounds: elastic sensitivity (per-relation max frequencies) and
// residual sensitivity (maximum boundaries of residual queries).

#include <cstdint>
#include <functional>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include "joinsense/exact.hpp"
#include "joinsense/query.hpp"

namespace joinsense {

enum class BetaKind { LaplaceSmooth, GeneralCauchy };

struct SmoothingParams {
  double epsilon = 0.0;
  double delta = 0.0;   // 0 under the general-Cauchy convention
  double gamma = 0.0;   // 0 under the Laplace convention
  double beta = 0.0;
  BetaKind kind = BetaKind::LaplaceSmooth;

  // β = ε / (2·ln(2/δ)) — calibration for Laplace noise on smooth bounds.
  static SmoothingParams laplace(double epsilon, double delta);
  // β = ε / (2·(γ+1)) — calibration for the general Cauchy mechanism.
  static SmoothingParams general_cauchy(double epsilon, double gamma);
};

enum class Method { ES, RS, SamplingSE, SketchSE, LocalOracle };

std::string method_name(Method m);

struct SensitivityReport {
  Method method = Method::ES;
  double value = 0.0;
  std::uint64_t kStar = 0;
  SmoothingParams params;
  // Diagnostics.
  std::vector<double> kCurve;       // e^{-βk}·bound(k) over the scanned range
  std::uint64_t walkCount = 0;      // sampling only
  bool converged = true;
  std::string note;
};

// Max over integer k in [0, ⌈D/β⌉+1] of e^{-βk}·f(k). Exact when f is a
// polynomial of degree ≤ D with non-negative coefficients: each monomial
// e^{-βk}k^j (j ≤ D) decreases for k > j/β, so nothing beyond the scan bound
// can win. Ties break toward the smallest k.
struct SmoothMaxResult {
  double value = 0.0;
  std::uint64_t kStar = 0;
  std::vector<double> curve;
};
SmoothMaxResult smooth_max(const std::function<double(std::uint64_t)>& f, double beta,
                           std::uint64_t degreeBound);

// Per-pivot maximum-frequency statistics backing the frequency-product bound.
// Independent of the distance k, so one fetch serves a whole smooth-max scan.
struct ElasticStats {
  struct Pivot {
    std::size_t pivotRel = 0;
    double publicProduct = 1.0;            // product of mf over non-private relations
    std::vector<std::uint64_t> privateMf;  // mf per private relation other than the pivot
  };
  std::vector<Pivot> pivots;
};

// Fetches max frequencies for every pivot choice (one BFS orientation per
// private pivot). Requires a connected join graph.
ElasticStats build_elastic_stats(const BoundQuery& query);

// Evaluates the distance-k frequency-product bound from prefetched stats.
double elastic_ls_at_k(const ElasticStats& stats, std::uint64_t k);

// Upper bound of local sensitivity at distance k from per-relation max
// frequencies: max over private pivots i of
//   ∏_{j∈P−{i}} (mf_j + k) · ∏_{j∉P, j≠i} mf_j,
// where mf_j is relation j's max frequency over its attributes on the
// predicates linking j to its next hop toward i (BFS parent, lowest-index
// tie-break). Requires a connected join graph.
std::uint64_t elastic_ls_at_k(const BoundQuery& query, std::uint64_t k);

SensitivityReport elastic_sensitivity(const BoundQuery& query, const SmoothingParams& params);

// Same scan over prefetched statistics (used when the fetch is timed apart).
SensitivityReport elastic_sensitivity(const ElasticStats& stats, std::size_t privateCount,
                                      const SmoothingParams& params);

// Perturbed maximum boundary: Σ_{E′⊆E} T_{E−E′} · ∏_{i∈E′} s_i, where s is a
// per-relation edit partition (signature: only entries in `support` can be
// non-zero). Multilinear and monotone in each s_i.
double t_hat(Mask e, const std::vector<std::uint64_t>& s, const MaxBoundaryTable& table);

// Upper bound of local sensitivity at distance k from maximum boundaries:
// max over private pivots i and compositions s of k over P−{i} of
// t_hat([n]−{i}, s).
double residual_ls_at_k(const BoundQuery& query, const MaxBoundaryTable& table, std::uint64_t k);

SensitivityReport residual_sensitivity(
    const BoundQuery& query, const MaxBoundaryTable& table, const SmoothingParams& params,
    double gsCap = std::numeric_limits<double>::infinity());

}  // namespace joinsense
