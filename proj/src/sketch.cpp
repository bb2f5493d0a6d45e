#include "joinsense/sketch.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <utility>

#include <json.hpp>

#include "joinsense/errors.hpp"
#include "joinsense/kernels.hpp"
#include "joinsense/relation.hpp"

namespace joinsense {

// ---------------------------------------------------------------------------
// Field arithmetic and hash families
// ---------------------------------------------------------------------------

std::uint64_t mulmod61(std::uint64_t a, std::uint64_t b) {
  const __uint128_t z = static_cast<__uint128_t>(a) * b;
  // 2^61 ≡ 1 (mod 2^61 - 1), so the product folds into low and high parts.
  std::uint64_t r =
      (static_cast<std::uint64_t>(z) & kMersenne61) + static_cast<std::uint64_t>(z >> 61);
  if (r >= kMersenne61) r -= kMersenne61;
  if (r >= kMersenne61) r -= kMersenne61;
  return r;
}

std::uint64_t addmod61(std::uint64_t a, std::uint64_t b) {
  std::uint64_t r = a + b;
  if (r >= kMersenne61) r -= kMersenne61;
  return r;
}

std::uint64_t hash_token(std::string_view token) { return fnv1a(token) % kMersenne61; }

XiFamily::XiFamily(std::uint64_t masterSeed, std::uint64_t t, std::uint64_t s,
                   std::uint64_t familyId) {
  Rng rng = Rng::stream(masterSeed, {stream_tag::kXi, t, s, familyId});
  for (auto& coeff : a_) coeff = rng.next_u64() % kMersenne61;
}

int XiFamily::operator()(std::uint64_t hashedToken) const {
  const std::uint64_t x = hashedToken % kMersenne61;
  std::uint64_t r = a_[3];
  r = addmod61(mulmod61(r, x), a_[2]);
  r = addmod61(mulmod61(r, x), a_[1]);
  r = addmod61(mulmod61(r, x), a_[0]);
  return (r & 1) ? 1 : -1;
}

// ---------------------------------------------------------------------------
// Parameters
// ---------------------------------------------------------------------------

void SketchParams::validate() const {
  if (s1 == 0) throw ConfigError("sketch averaging width s1 must be at least 1");
  if (s2 == 0 || s2 % 2 == 0) throw ConfigError("sketch median depth s2 must be odd");
  if (!(tau > 0.0) || !(tau < 1.0))
    throw ConfigError("sketch tau must lie strictly between 0 and 1");
  if (!(eta > 0.0) || !(eta < 1.0))
    throw ConfigError("sketch eta must lie strictly between 0 and 1");
}

SketchParams SketchParams::from_json_text(const std::string& text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception&) {
    throw ConfigError("sketch params are not valid JSON");
  }
  if (!j.is_object()) throw ConfigError("sketch params must be a JSON object");
  SketchParams p;
  try {
    for (auto it = j.begin(); it != j.end(); ++it) {
      const std::string& key = it.key();
      if (key == "s1")
        p.s1 = it.value().get<std::uint64_t>();
      else if (key == "s2")
        p.s2 = it.value().get<std::uint64_t>();
      else if (key == "tau")
        p.tau = it.value().get<double>();
      else if (key == "eta")
        p.eta = it.value().get<double>();
      else
        throw ConfigError("unknown sketch params key: " + key);
    }
  } catch (const nlohmann::json::exception&) {
    throw ConfigError("sketch params have a value of the wrong type");
  }
  p.validate();
  return p;
}

std::string SketchParams::to_json_text() const {
  nlohmann::ordered_json j;
  j["s1"] = s1;
  j["s2"] = s2;
  j["tau"] = tau;
  j["eta"] = eta;
  return j.dump();
}

// ---------------------------------------------------------------------------
// Sketch construction and persistence
// ---------------------------------------------------------------------------

namespace {

// (familyId = predicate index, attribute index) pairs touching one relation.
std::vector<std::pair<std::uint64_t, std::size_t>> family_occurrences(const BoundQuery& query,
                                                                      std::size_t rel) {
  std::vector<std::pair<std::uint64_t, std::size_t>> occ;
  const auto& preds = query.predicates();
  for (std::size_t i = 0; i < preds.size(); ++i) {
    if (preds[i].relA == rel) occ.emplace_back(i, preds[i].attrA);
    if (preds[i].relB == rel) occ.emplace_back(i, preds[i].attrB);
  }
  return occ;
}

std::size_t relation_index(const BoundQuery& query, std::string_view name) {
  for (std::size_t i = 0; i < query.n(); ++i)
    if (query.relation(i).name() == name) return i;
  throw SchemaError("relation '" + std::string(name) + "' is not part of the query");
}

double median_inplace(std::vector<double>& v) {
  std::sort(v.begin(), v.end());
  return v[v.size() / 2];  // length is odd by construction
}

void validate_sketch_set(const std::vector<AgmsSketch>& sketches) {
  if (sketches.empty()) throw UsageError("no sketches given");
  const AgmsSketch& first = sketches.front();
  for (const AgmsSketch& sk : sketches) {
    if (sk.masterSeed != first.masterSeed)
      throw DataError("sketches were built under different master seeds");
    if (sk.queryFingerprint != first.queryFingerprint)
      throw DataError("sketches were built for different queries");
    if (sk.params.s1 != first.params.s1 || sk.params.s2 != first.params.s2)
      throw DataError("sketches disagree on their dimensions");
    if (sk.counters.size() != sk.params.s1 * sk.params.s2)
      throw DataError("sketch counter matrix has the wrong shape");
  }
}

// Checks set coherence and that sketches line up with the query's relations.
void validate_aligned(const std::vector<AgmsSketch>& sketches, const BoundQuery& query) {
  validate_sketch_set(sketches);
  if (sketches.size() != query.n())
    throw DataError("expected one sketch per query relation");
  for (std::size_t j = 0; j < query.n(); ++j) {
    check_sketch_matches(sketches[j], query);
    if (sketches[j].relationName != query.relation(j).name())
      throw DataError("sketch for '" + sketches[j].relationName +
                      "' is out of order: expected relation '" + query.relation(j).name() + "'");
  }
}

}  // namespace

AgmsSketch build_sketch(const BoundQuery& query, std::string_view relationName,
                        const SketchParams& params, std::uint64_t masterSeed, bool parallel) {
  params.validate();
  const std::size_t rel = relation_index(query, relationName);
  const Relation& r = query.relation(rel);
  const auto occurrences = family_occurrences(query, rel);

  std::vector<std::vector<std::uint64_t>> hashedColumns;
  std::vector<std::uint64_t> familyIds;
  hashedColumns.reserve(occurrences.size());
  familyIds.reserve(occurrences.size());
  for (const auto& [familyId, attr] : occurrences) {
    std::vector<std::uint64_t> column(r.row_count());
    for (RowId row = 0; row < r.row_count(); ++row)
      column[row] = hash_token(query.dict().token(r.at(row, attr)));
    hashedColumns.push_back(std::move(column));
    familyIds.push_back(familyId);
  }

  AgmsSketch sketch;
  sketch.relationName = std::string(relationName);
  sketch.queryFingerprint = query.spec().fingerprint();
  sketch.masterSeed = masterSeed;
  sketch.params = params;
  sketch.counters = sketch_cells(hashedColumns, r.row_count(), familyIds, masterSeed, params.s1,
                                 params.s2, parallel);
  return sketch;
}

std::vector<AgmsSketch> build_all_sketches(const BoundQuery& query, const SketchParams& params,
                                           std::uint64_t masterSeed, bool parallel) {
  std::vector<AgmsSketch> out;
  out.reserve(query.n());
  for (std::size_t i = 0; i < query.n(); ++i)
    out.push_back(build_sketch(query, query.relation(i).name(), params, masterSeed, parallel));
  return out;
}

void check_sketch_matches(const AgmsSketch& sketch, const BoundQuery& query) {
  if (sketch.queryFingerprint != query.spec().fingerprint())
    throw DataError("sketch for '" + sketch.relationName +
                    "' was built for a different query (fingerprint mismatch)");
}

std::string AgmsSketch::to_json_text() const {
  nlohmann::ordered_json j;
  j["format"] = "agms-sketch-v1";
  j["relation"] = relationName;
  j["query_fingerprint"] = queryFingerprint;
  j["master_seed"] = masterSeed;
  j["params"] = nlohmann::ordered_json::parse(params.to_json_text());
  nlohmann::ordered_json rows = nlohmann::ordered_json::array();
  for (std::uint64_t t = 0; t < params.s2; ++t) {
    nlohmann::ordered_json row = nlohmann::ordered_json::array();
    for (std::uint64_t s = 0; s < params.s1; ++s) row.push_back(counter(t, s));
    rows.push_back(std::move(row));
  }
  j["counters"] = std::move(rows);
  return j.dump();
}

AgmsSketch AgmsSketch::from_json_text(const std::string& text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception&) {
    throw DataError("sketch file is not valid JSON");
  }
  if (!j.is_object()) throw DataError("sketch file must hold a JSON object");
  AgmsSketch sk;
  bool haveCounters = false;
  try {
    for (auto it = j.begin(); it != j.end(); ++it) {
      const std::string& key = it.key();
      if (key == "format") {
        if (it.value().get<std::string>() != "agms-sketch-v1")
          throw DataError("unsupported sketch file format");
      } else if (key == "relation") {
        sk.relationName = it.value().get<std::string>();
      } else if (key == "query_fingerprint") {
        sk.queryFingerprint = it.value().get<std::string>();
      } else if (key == "master_seed") {
        sk.masterSeed = it.value().get<std::uint64_t>();
      } else if (key == "params") {
        sk.params = SketchParams::from_json_text(it.value().dump());
      } else if (key == "counters") {
        haveCounters = true;
        for (const auto& row : it.value())
          for (const auto& c : row) sk.counters.push_back(c.get<std::int64_t>());
      } else {
        throw DataError("unknown sketch file key: " + key);
      }
    }
  } catch (const nlohmann::json::exception&) {
    throw DataError("sketch file has a value of the wrong type");
  } catch (const ConfigError& e) {
    throw DataError(std::string("sketch file params: ") + e.what());
  }
  if (!haveCounters || sk.counters.size() != sk.params.s1 * sk.params.s2)
    throw DataError("sketch counter matrix has the wrong shape");
  return sk;
}

// ---------------------------------------------------------------------------
// Join-size estimation
// ---------------------------------------------------------------------------

double estimate_join(const std::vector<AgmsSketch>& sketches) {
  validate_sketch_set(sketches);
  const std::uint64_t s1 = sketches.front().params.s1;
  const std::uint64_t s2 = sketches.front().params.s2;
  std::vector<double> means;
  means.reserve(s2);
  for (std::uint64_t t = 0; t < s2; ++t) {
    double sum = 0.0;
    for (std::uint64_t s = 0; s < s1; ++s) {
      double atomic = 1.0;
      for (const AgmsSketch& sk : sketches) atomic *= static_cast<double>(sk.counter(t, s));
      sum += atomic;
    }
    means.push_back(sum / static_cast<double>(s1));
  }
  return median_inplace(means);
}

std::uint64_t sketch_size_advisor(double joinSizeLowerBound,
                                  const std::vector<double>& selfJoinBounds, double tau,
                                  double eta, const std::vector<double>& domainSizes) {
  if (!(joinSizeLowerBound > 0.0))
    throw UsageError("the join-size lower bound must be positive");
  if (!(tau > 0.0) || !(tau < 1.0))
    throw ConfigError("tau must lie strictly between 0 and 1");
  if (!(eta > 0.0) || !(eta < 1.0))
    throw ConfigError("eta must lie strictly between 0 and 1");
  const double n = static_cast<double>(selfJoinBounds.size());
  double bounds = 1.0;
  for (double u : selfJoinBounds) bounds *= std::max(1.0, u);
  double domainLogs = 0.0;
  for (double d : domainSizes) domainLogs += std::log2(std::max(2.0, d));
  if (domainLogs == 0.0) domainLogs = 1.0;
  const double size = std::exp2(2.0 * n) * bounds * std::log(1.0 / eta) /
                      (joinSizeLowerBound * joinSizeLowerBound * tau * tau) * domainLogs;
  if (!std::isfinite(size) || size >= 9e18) return std::numeric_limits<std::uint64_t>::max();
  return std::max<std::uint64_t>(1, static_cast<std::uint64_t>(std::ceil(size)));
}

// ---------------------------------------------------------------------------
// Sketch-based sensitivity
// ---------------------------------------------------------------------------

namespace {

// Mirrors the composition enumeration used by the residual-table scan:
// distributes k over `slots`, invoking fn(s) with s indexed by relation.
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

std::vector<std::size_t> private_slots(const BoundQuery& query, std::size_t pivot) {
  std::vector<std::size_t> slots;
  for (std::size_t j = 0; j < query.n(); ++j)
    if (query.is_private(j) && j != pivot) slots.push_back(j);
  return slots;
}

double atomic_perturbed(const std::vector<AgmsSketch>& sketches, std::size_t pivot,
                        const std::vector<std::uint64_t>& kPartition, std::uint64_t t,
                        std::uint64_t s, bool conservative) {
  double prod = 1.0;
  for (std::size_t j = 0; j < sketches.size(); ++j) {
    if (j == pivot) continue;
    const double c = static_cast<double>(sketches[j].counter(t, s));
    const double kj = static_cast<double>(kPartition[j]);
    prod *= conservative ? (std::abs(c) + kj) : (c + kj);
  }
  return conservative ? prod : std::abs(prod);
}

double boosted_perturbed(const std::vector<AgmsSketch>& sketches, std::size_t pivot,
                         const std::vector<std::uint64_t>& kPartition, double tau,
                         bool conservative) {
  const std::uint64_t s1 = sketches.front().params.s1;
  const std::uint64_t s2 = sketches.front().params.s2;
  std::vector<double> means;
  means.reserve(s2);
  for (std::uint64_t t = 0; t < s2; ++t) {
    double sum = 0.0;
    for (std::uint64_t s = 0; s < s1; ++s)
      sum += atomic_perturbed(sketches, pivot, kPartition, t, s, conservative);
    means.push_back(sum / static_cast<double>(s1));
  }
  return median_inplace(means) / (1.0 - tau);
}

}  // namespace

double sks_ls_at_k(const std::vector<AgmsSketch>& sketches, const BoundQuery& query,
                   std::size_t pivot, const std::vector<std::uint64_t>& kPartition, double tau,
                   bool conservative) {
  validate_aligned(sketches, query);
  if (!(tau >= 0.0) || tau >= 1.0) throw ConfigError("tau must lie in [0, 1)");
  if (pivot >= query.n() || !query.is_private(pivot))
    throw UsageError("the pivot must be a private relation of the query");
  if (kPartition.size() != query.n())
    throw UsageError("the distance partition must have one entry per relation");
  for (std::size_t j = 0; j < kPartition.size(); ++j)
    if (kPartition[j] > 0 && (j == pivot || !query.is_private(j)))
      throw UsageError("the distance partition must be supported on private relations "
                       "other than the pivot");
  return boosted_perturbed(sketches, pivot, kPartition, tau, conservative);
}

SksTables build_sks_tables(const std::vector<AgmsSketch>& sketches, const BoundQuery& query,
                           std::uint64_t kMax, double tau, bool conservative) {
  validate_aligned(sketches, query);
  if (!(tau >= 0.0) || tau >= 1.0) throw ConfigError("tau must lie in [0, 1)");

  SksTables tables;
  tables.privateCount = query.private_count();
  tables.tau = tau;
  tables.conservative = conservative;
  tables.envelope.assign(kMax + 1, 0.0);
  if (tables.privateCount == 0) return tables;

  const std::uint64_t s1 = sketches.front().params.s1;
  const std::uint64_t s2 = sketches.front().params.s2;

  for (std::size_t pivot = 0; pivot < query.n(); ++pivot) {
    if (!query.is_private(pivot)) continue;
    const std::vector<std::size_t> slots = private_slots(query, pivot);

    if (conservative) {
      // (|c_j| + k_j) expands multilinearly in k, so precompute the mean of
      // the absolute counter product with every subset of the slot relations
      // removed; each composition then costs one subset-weighted sum per
      // median row instead of a pass over all counters.
      const std::size_t nsub = std::size_t{1} << slots.size();
      std::vector<std::vector<double>> subsetMeans(nsub, std::vector<double>(s2, 0.0));
      for (std::size_t sub = 0; sub < nsub; ++sub) {
        std::vector<std::size_t> factors;
        for (std::size_t j = 0; j < query.n(); ++j) {
          if (j == pivot) continue;
          bool removed = false;
          for (std::size_t b = 0; b < slots.size(); ++b)
            if (((sub >> b) & 1u) && slots[b] == j) removed = true;
          if (!removed) factors.push_back(j);
        }
        for (std::uint64_t t = 0; t < s2; ++t) {
          double sum = 0.0;
          for (std::uint64_t s = 0; s < s1; ++s) {
            double prod = 1.0;
            for (std::size_t j : factors)
              prod *= std::abs(static_cast<double>(sketches[j].counter(t, s)));
            sum += prod;
          }
          subsetMeans[sub][t] = sum / static_cast<double>(s1);
        }
      }
      for (std::uint64_t k = 0; k <= kMax; ++k) {
        double best = 0.0;
        for_each_composition(slots, query.n(), k, [&](const std::vector<std::uint64_t>& part) {
          std::vector<double> means(s2, 0.0);
          for (std::size_t sub = 0; sub < nsub; ++sub) {
            double weight = 1.0;
            for (std::size_t b = 0; b < slots.size(); ++b)
              if ((sub >> b) & 1u) weight *= static_cast<double>(part[slots[b]]);
            if (weight == 0.0) continue;
            for (std::uint64_t t = 0; t < s2; ++t) means[t] += weight * subsetMeans[sub][t];
          }
          best = std::max(best, median_inplace(means) / (1.0 - tau));
        });
        tables.envelope[k] = std::max(tables.envelope[k], best);
      }
    } else {
      // Literal (c_j + k_j) does not expand under the absolute value; scan the
      // counters per composition. Intended for small k ranges.
      for (std::uint64_t k = 0; k <= kMax; ++k) {
        double best = 0.0;
        for_each_composition(slots, query.n(), k, [&](const std::vector<std::uint64_t>& part) {
          best = std::max(best, boosted_perturbed(sketches, pivot, part, tau, false));
        });
        tables.envelope[k] = std::max(tables.envelope[k], best);
      }
    }
  }
  return tables;
}

std::uint64_t sks_table_size(std::size_t privateCount, double beta) {
  if (beta <= 0.0) throw ConfigError("smoothing parameter beta must be positive");
  const std::uint64_t degree = privateCount == 0 ? 0 : privateCount - 1;
  return static_cast<std::uint64_t>(std::ceil(static_cast<double>(degree) / beta)) + 1;
}

SensitivityReport sketching_sensitivity(const SksTables& tables, const SmoothingParams& params) {
  const std::uint64_t degree = tables.privateCount == 0 ? 0 : tables.privateCount - 1;
  const std::uint64_t needed = sks_table_size(tables.privateCount, params.beta);
  if (needed >= tables.envelope.size())
    throw UsageError("sketch envelope table is too short for this beta; rebuild the tables "
                     "with a larger k bound");
  const auto scan = smooth_max(
      [&](std::uint64_t k) { return tables.envelope[k]; }, params.beta, degree);
  SensitivityReport report;
  report.method = Method::SketchSE;
  report.value = scan.value;
  report.kStar = scan.kStar;
  report.params = params;
  report.kCurve = scan.curve;
  report.converged = true;
  if (!tables.conservative) report.note = "literal counter perturbation variant";
  return report;
}

SensitivityReport sketching_sensitivity(const std::vector<AgmsSketch>& sketches,
                                        const BoundQuery& query, const SmoothingParams& params,
                                        const SketchParams& sketchParams, bool conservative) {
  const std::uint64_t kMax = sks_table_size(query.private_count(), params.beta);
  const SksTables tables = build_sks_tables(sketches, query, kMax, sketchParams.tau, conservative);
  return sketching_sensitivity(tables, params);
}

}  // namespace joinsense
