#pragma once
// Sampling-based estimation of residual-query maximum boundaries: random
// walks over join indexes with inverse-probability weighting ("wander join"
// style), anytime confidence intervals with group pruning, walk sharing
// across residual queries, and a filtered variant that restricts estimation
// to groups observed in a pilot sample.
#include <cstdint>
#include <limits>
#include <map>
#include <string>
#include <unordered_map>
#include <vector>

#include "joinsense/exact.hpp"
#include "joinsense/query.hpp"
#include "joinsense/rng.hpp"
#include "joinsense/smooth.hpp"

namespace joinsense {

// ---------------------------------------------------------------------------
// Random walks
// ---------------------------------------------------------------------------

// One random walk along a walk plan. fanouts[0] is the start-set size; each
// later entry is the size of the index posting list used at that step, so
// x = ∏ fanouts when the walk completes and 0 otherwise (dead end or failed
// residual check edge). rows holds the bound row per relation in plan order,
// linkValues the join value used to bind each step.
struct WalkOutcome {
  bool success = false;
  double x = 0.0;
  std::vector<std::uint64_t> fanouts;
  std::vector<RowId> rows;
  std::vector<Value> linkValues;
};

// Per-plan lookup structures shared by many walks: relation -> position in
// plan order, and check edges grouped by the step at which they become
// evaluable.
struct PlanRuntime {
  std::vector<std::size_t> pos;
  std::vector<std::vector<BoundPredicate>> checksAt;
  static PlanRuntime build(const BoundQuery& query, const WalkPlan& plan);
};

// Core walk: picks the start row uniformly from startSet, then at each step
// picks uniformly among index entries matching the current partial tuple.
// Check edges are verified as soon as both endpoints are bound; a failure
// terminates the walk with x = 0.
WalkOutcome run_walk(const BoundQuery& query, const WalkPlan& plan, const PlanRuntime& runtime,
                     const std::vector<RowId>& startSet, Rng& rng);

// Convenience wrappers building the runtime internally (tests / one-shot use).
WalkOutcome random_walk(const BoundQuery& query, const WalkPlan& plan,
                        const std::vector<RowId>& startSet, Rng& rng);
WalkOutcome random_walk_uniform(const BoundQuery& query, const WalkPlan& plan, Rng& rng);

// Estimate contributed by the walk suffix that starts at plan position pos:
// ∏_{l ≥ pos} fanouts (group-scaled; fanouts[pos] is the size of the set the
// tuple at pos was drawn from) and ∏_{l > pos} fanouts (single-tuple scale).
// Both return 0 when the walk died before reaching pos.
double suffix_group_estimate(const WalkOutcome& outcome, std::size_t pos);
double suffix_tuple_estimate(const WalkOutcome& outcome, std::size_t pos);

// ---------------------------------------------------------------------------
// Confidence intervals
// ---------------------------------------------------------------------------

// Normalized anytime half-width over g simultaneous group estimates at
// confidence 1−η: sqrt((2·ln ln m + ln((g+1)π²/(6η))) / (2m)), with ln ln m
// floored at 0 for m ≤ e. Returns +inf for m = 0.
double tau_norm(std::uint64_t m, std::uint64_t g, double eta);

struct EstimateUpdate {
  double c = 0.0;        // updated running mean
  double tauNorm = 0.0;  // normalized half-width at the new sample count
};

// Folds one walk estimate into a running mean: C' = ((m−1)/m)·C + x/m where m
// counts samples including this one (m ≥ 1; m = 0 is an error).
EstimateUpdate update_estimate(const WalkOutcome& outcome, std::uint64_t m, double c,
                               std::uint64_t g, double eta);

// ---------------------------------------------------------------------------
// Estimator state
// ---------------------------------------------------------------------------

struct GroupEstimate {
  std::vector<Value> key;        // boundary tuple identifying the group
  double c = 0.0;                // running mean of walk estimates
  std::uint64_t m = 0;           // samples folded in (walks + shared updates)
  double tau = std::numeric_limits<double>::infinity();  // scaled half-width
  bool active = true;            // false once pruned (never reactivated)
  std::uint64_t directWalks = 0; // walks launched for this group (stream index)
};

// Snapshot handed to observers at round barriers.
struct EstimatorSnapshot {
  Mask e = 0;
  Mask comp = 0;
  double j = 0.0;     // total-join running estimate Σ_i C_i (pruned groups frozen)
  double tauJ = 0.0;  // half-width of the join estimate
  std::uint64_t samples = 0;
  std::uint64_t walks = 0;
  const std::vector<GroupEstimate>* groups = nullptr;
};

class RqeObserver {
 public:
  virtual ~RqeObserver() = default;
  virtual void on_round(const EstimatorSnapshot&) {}
  virtual void on_prune(const EstimatorSnapshot&, const GroupEstimate&) {}
};

// ---------------------------------------------------------------------------
// Configuration
// ---------------------------------------------------------------------------

struct SamplingConfig {
  double tau0 = 1.0;        // terminal absolute half-width
  double eta = 0.05;        // failure probability budget
  double sampleRate = 0.0;  // walk budget as a fraction of the estimated join size; 0 = tau0-driven
  enum class Mode { PerE, Improved, WithFilter };
  Mode mode = Mode::Improved;
  std::uint64_t m0 = 10;             // initial walks per group
  std::uint64_t walkCap = 10000000;  // hard cap on walks per query
  std::uint64_t seed = 0;

  // Parses {"tau0":…, "eta":…, "sample_rate":…, "mode":"perE"|"improved"|"withFilter",
  //         "m0":…, "walk_cap":…, "seed":…}; all keys optional, unknown keys rejected.
  static SamplingConfig from_json_text(const std::string& text);
  std::string to_json_text() const;
  void validate() const;
};

const char* sampling_mode_name(SamplingConfig::Mode mode);
SamplingConfig::Mode parse_sampling_mode(const std::string& name);

// ---------------------------------------------------------------------------
// Estimation pipelines
// ---------------------------------------------------------------------------

struct ComponentResult {
  Mask comp = 0;
  double value = 0.0;  // upper estimate of the component's max boundary group
  double lower = 0.0;  // max over surviving groups of C − τ (floored at 0)
  bool sampled = false;
  bool usedFilter = false;
  bool exactFallback = false;
  bool converged = true;
  std::uint64_t walkCount = 0;
  std::uint64_t sampleCount = 0;
  std::vector<GroupEstimate> groups;
};

struct RqeResult {
  double value = 0.0;  // product over components of their upper estimates
  bool converged = true;
  std::uint64_t walkCount = 0;
  std::uint64_t sampleCount = 0;
  std::vector<ComponentResult> components;
};

// Estimates the maximum boundary of one residual query: exact evaluation for
// single-relation components and empty boundaries, group-pruned walk
// estimation otherwise. Uses config keys tau0, eta, m0, walkCap, seed.
RqeResult rqe(const BoundQuery& query, const ResidualQuery& residual, const SamplingConfig& config,
              RqeObserver* observer = nullptr);

// Filtered variant: draws filterSampleCount unrestricted walks, keeps only the
// boundary groups observed on successful ones, then estimates those. All
// walks failing -> falls back to full rqe (single-relation boundary) or an
// exact group-by (composite boundary).
RqeResult rqe_with_filter(const BoundQuery& query, const ResidualQuery& residual,
                          std::uint64_t filterSampleCount, const SamplingConfig& config,
                          RqeObserver* observer = nullptr);

struct SamplingStats {
  std::uint64_t totalWalks = 0;
  std::uint64_t sharedUpdates = 0;
  bool allConverged = true;
  bool anyExactFallback = false;
  std::map<Mask, std::uint64_t> walksPerResidual;
};

// Walk-sharing estimation across a residual-query set: residuals are
// processed largest-|E| first; every direct walk of a simple-path plan also
// feeds each walked residual whose relation set is a suffix of the path (its
// group keyed by the linking value). Shared updates increase sample counts
// but never consume direct-walk stream indexes, so maximal-residual walk
// trajectories are identical to per-residual estimation.
MaxBoundaryTable improved_rqe(const BoundQuery& query, const std::vector<ResidualQuery>& residuals,
                              const SamplingConfig& config, SamplingStats* stats = nullptr,
                              RqeObserver* observer = nullptr);

// Fills a max-boundary table for every residual query of `query` using the
// configured mode; exact values are used for single-relation components,
// empty boundaries, and fallbacks, and are marked with exact provenance.
MaxBoundaryTable build_sampled_table(const BoundQuery& query, const SamplingConfig& config,
                                     SamplingStats* stats = nullptr,
                                     RqeObserver* observer = nullptr);

// Full sensitivity from sampled tables: build_sampled_table + the smoothed
// residual-sensitivity scan. Non-convergence (walk cap or budget exhausted
// before reaching tau0) is reported via SensitivityReport::converged.
SensitivityReport sampling_se(const BoundQuery& query, const SamplingConfig& config,
                              const SmoothingParams& params,
                              double gsCap = std::numeric_limits<double>::infinity());

}  // namespace joinsense
