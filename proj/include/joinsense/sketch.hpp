#pragma once

// AGMS sketches: per-relation ±1-weighted counters whose products estimate
// join sizes, plus the sketch-based smooth sensitivity bound built on them.
//
// Each join predicate owns one four-wise independent ±1 family per sketch cell
// (median row t, averaging column s). A relation's cell counter sums, over its
// rows, the product of the relevant family values at the row's join-attribute
// tokens. Products of counters across relations are unbiased join-size
// estimates; averaging s1 columns and taking the median of s2 rows boosts the
// success probability. The sensitivity bound perturbs the counters by k added
// tuples per private relation and runs the usual smooth-max scan over k.

#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include "joinsense/query.hpp"
#include "joinsense/rng.hpp"
#include "joinsense/smooth.hpp"

namespace joinsense {

// Modulus for the polynomial hash family: the Mersenne prime 2^61 - 1.
constexpr std::uint64_t kMersenne61 = (std::uint64_t{1} << 61) - 1;

std::uint64_t mulmod61(std::uint64_t a, std::uint64_t b);
std::uint64_t addmod61(std::uint64_t a, std::uint64_t b);

// Maps a dictionary token to the polynomial-hash domain.
std::uint64_t hash_token(std::string_view token);

// One four-wise independent ±1 family: the low bit of a uniformly random
// degree-3 polynomial over GF(2^61 - 1). Coefficients are drawn from the
// stream (masterSeed, kXi, t, s, familyId), so rebuilds are bit-identical and
// families for distinct cells or predicates are independent.
class XiFamily {
 public:
  XiFamily() = default;
  XiFamily(std::uint64_t masterSeed, std::uint64_t t, std::uint64_t s, std::uint64_t familyId);

  // Returns +1 or -1 for a hashed token (any value; reduced mod 2^61 - 1).
  int operator()(std::uint64_t hashedToken) const;

 private:
  std::uint64_t a_[4] = {0, 0, 0, 0};
};

struct SketchParams {
  std::uint64_t s1 = 256;  // averaging width (estimates per median row)
  std::uint64_t s2 = 1;    // median depth; must be odd (1 = plain mean)
  double tau = 0.05;       // relative-error budget for the high-probability bound
  double eta = 0.05;       // failure probability

  void validate() const;
  static SketchParams from_json_text(const std::string& text);
  std::string to_json_text() const;
};

// Per-relation sketch: an s2 x s1 matrix of integer counters bound to the
// query fingerprint and master seed under which it was built.
struct AgmsSketch {
  std::string relationName;
  std::string queryFingerprint;
  std::uint64_t masterSeed = 0;
  SketchParams params;
  std::vector<std::int64_t> counters;  // row-major: counters[t * s1 + s]

  std::int64_t counter(std::uint64_t t, std::uint64_t s) const {
    return counters[t * params.s1 + s];
  }

  // Serialization is key-ordered and integer-exact: rebuilding with the same
  // master seed reproduces the byte-identical text.
  std::string to_json_text() const;
  static AgmsSketch from_json_text(const std::string& text);
};

// Builds the sketch for one relation of a validated query. The relevant
// families are the predicates touching the relation; a relation untouched by
// any predicate contributes its row count to every counter.
AgmsSketch build_sketch(const BoundQuery& query, std::string_view relationName,
                        const SketchParams& params, std::uint64_t masterSeed,
                        bool parallel = true);

// Builds one sketch per query relation, in query order.
std::vector<AgmsSketch> build_all_sketches(const BoundQuery& query, const SketchParams& params,
                                           std::uint64_t masterSeed, bool parallel = true);

// Checks that a loaded sketch belongs to this query; throws DataError on a
// fingerprint mismatch so stale sketch files are never silently combined.
void check_sketch_matches(const AgmsSketch& sketch, const BoundQuery& query);

// Unbiased join-size estimate: per cell, the product of the relations'
// counters; averaged over s1, median over s2. All sketches must share the
// master seed, parameters, and query fingerprint.
double estimate_join(const std::vector<AgmsSketch>& sketches);

// Averaging-width recommendation from the standard sketch-accuracy bound:
// proportional to the product of self-join size bounds and the log of the
// failure probability, inversely proportional to the squared join-size lower
// bound and squared relative error, scaled by the join-attribute domain logs.
// Advisory only; explicit widths in SketchParams always win.
std::uint64_t sketch_size_advisor(double joinSizeLowerBound,
                                  const std::vector<double>& selfJoinBounds, double tau,
                                  double eta, const std::vector<double>& domainSizes);

// Local-sensitivity bound at one distance partition: median-of-means of the
// perturbed counter products over all relations except the pivot, divided by
// (1 - tau). kPartition is indexed by relation and must be supported on
// private relations other than the pivot. The conservative variant uses
// (|counter| + k): monotone in k and never below the literal (counter + k)
// form, which stays available for comparison.
double sks_ls_at_k(const std::vector<AgmsSketch>& sketches, const BoundQuery& query,
                   std::size_t pivot, const std::vector<std::uint64_t>& kPartition, double tau,
                   bool conservative = true);

// Offline-computed envelope: envelope[k] = max over pivots and distance
// partitions of sks_ls_at_k. The envelope does not depend on the smoothing
// parameters, so the online sensitivity scan is a plain array lookup.
struct SksTables {
  std::vector<double> envelope;
  std::size_t privateCount = 0;
  double tau = 0.05;
  bool conservative = true;
};

SksTables build_sks_tables(const std::vector<AgmsSketch>& sketches, const BoundQuery& query,
                           std::uint64_t kMax, double tau, bool conservative = true);

// Smallest table size covering the smooth-max scan for these parameters.
std::uint64_t sks_table_size(std::size_t privateCount, double beta);

// Online scan over a precomputed envelope. Throws UsageError if the envelope
// is too short for the scan this beta requires.
SensitivityReport sketching_sensitivity(const SksTables& tables, const SmoothingParams& params);

// Convenience: builds the tables for exactly this scan, then runs it.
SensitivityReport sketching_sensitivity(const std::vector<AgmsSketch>& sketches,
                                        const BoundQuery& query, const SmoothingParams& params,
                                        const SketchParams& sketchParams,
                                        bool conservative = true);

}  // namespace joinsense
