#include "joinsense/sampling.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <map>
#include <memory>
#include <numbers>
#include <numeric>
#include <optional>
#include <set>
#include <unordered_map>
#include <utility>

#include <json.hpp>

#include "joinsense/errors.hpp"
#include "joinsense/relation.hpp"

namespace joinsense {

namespace {

constexpr std::size_t kNoPos = static_cast<std::size_t>(-1);
constexpr double kInf = std::numeric_limits<double>::infinity();

void ensure_index(const BoundQuery& query, std::size_t rel, std::size_t attr) {
  const Relation& r = query.relation(rel);
  if (!r.index_built(attr))
    // Indexes are idempotent caches; the dataset is logically immutable here.
    build_index(const_cast<Relation&>(r), r.attributes()[attr]);
}

void ensure_plan_indexes(const BoundQuery& query, const WalkPlan& plan) {
  for (const WalkStep& st : plan.steps) ensure_index(query, st.newRel, st.newAttr);
}

}  // namespace

// ---------------------------------------------------------------------------
// Walks
// ---------------------------------------------------------------------------

PlanRuntime PlanRuntime::build(const BoundQuery& query, const WalkPlan& plan) {
  PlanRuntime rt;
  rt.pos.assign(query.n(), kNoPos);
  for (std::size_t i = 0; i < plan.order.size(); ++i) rt.pos[plan.order[i]] = i;
  rt.checksAt.assign(plan.steps.size(), {});
  // readyStep is a plan position; step s binds position s + 1, so the check
  // becomes evaluable at step readyStep - 1 (positions are distinct, so a
  // check's later endpoint is never the start).
  for (const CheckEdge& c : plan.checks)
    rt.checksAt.at(c.readyStep - 1).push_back(query.predicates().at(c.predIdx));
  return rt;
}

WalkOutcome run_walk(const BoundQuery& query, const WalkPlan& plan, const PlanRuntime& runtime,
                     const std::vector<RowId>& startSet, Rng& rng) {
  WalkOutcome out;
  out.fanouts.reserve(plan.order.size());
  out.rows.reserve(plan.order.size());
  out.linkValues.reserve(plan.steps.size());

  out.fanouts.push_back(startSet.size());
  if (startSet.empty()) return out;
  out.rows.push_back(startSet[static_cast<std::size_t>(rng.bounded(startSet.size()))]);

  for (std::size_t s = 0; s < plan.steps.size(); ++s) {
    const WalkStep& st = plan.steps[s];
    const Value v =
        query.relation(st.boundRel).at(out.rows[runtime.pos[st.boundRel]], st.boundAttr);
    out.linkValues.push_back(v);
    const std::vector<RowId>* post = query.relation(st.newRel).postings(st.newAttr, v);
    const std::uint64_t fanout = post ? post->size() : 0;
    out.fanouts.push_back(fanout);
    if (fanout == 0) return out;  // dead end: x stays 0
    out.rows.push_back((*post)[static_cast<std::size_t>(rng.bounded(fanout))]);
    for (const BoundPredicate& c : runtime.checksAt[s]) {
      const Value a = query.relation(c.relA).at(out.rows[runtime.pos[c.relA]], c.attrA);
      const Value b = query.relation(c.relB).at(out.rows[runtime.pos[c.relB]], c.attrB);
      if (a != b) return out;  // violated check edge: x stays 0
    }
  }
  out.success = true;
  double x = 1.0;
  for (std::uint64_t f : out.fanouts) x *= static_cast<double>(f);
  out.x = x;
  return out;
}

WalkOutcome random_walk(const BoundQuery& query, const WalkPlan& plan,
                        const std::vector<RowId>& startSet, Rng& rng) {
  ensure_plan_indexes(query, plan);
  const PlanRuntime runtime = PlanRuntime::build(query, plan);
  return run_walk(query, plan, runtime, startSet, rng);
}

WalkOutcome random_walk_uniform(const BoundQuery& query, const WalkPlan& plan, Rng& rng) {
  const Relation& rel = query.relation(plan.order.at(0));
  std::vector<RowId> all(rel.row_count());
  std::iota(all.begin(), all.end(), RowId{0});
  return random_walk(query, plan, all, rng);
}

double suffix_group_estimate(const WalkOutcome& outcome, std::size_t pos) {
  if (pos >= outcome.fanouts.size()) return 0.0;
  double x = 1.0;
  for (std::size_t l = pos; l < outcome.fanouts.size(); ++l)
    x *= static_cast<double>(outcome.fanouts[l]);
  return x;
}

double suffix_tuple_estimate(const WalkOutcome& outcome, std::size_t pos) {
  if (pos >= outcome.fanouts.size()) return 0.0;
  double x = 1.0;
  for (std::size_t l = pos + 1; l < outcome.fanouts.size(); ++l)
    x *= static_cast<double>(outcome.fanouts[l]);
  return x;
}

// ---------------------------------------------------------------------------
// Confidence intervals
// ---------------------------------------------------------------------------

double tau_norm(std::uint64_t m, std::uint64_t g, double eta) {
  if (eta <= 0.0 || eta >= 1.0) throw ConfigError("eta must lie strictly between 0 and 1");
  if (m == 0) return kInf;
  const double md = static_cast<double>(m);
  double lnln = 0.0;
  if (m >= 3) lnln = std::max(0.0, std::log(std::log(md)));  // floored at 0 for m <= e
  const double pi = std::numbers::pi_v<double>;
  const double confidence = std::log((static_cast<double>(g) + 1.0) * pi * pi / (6.0 * eta));
  return std::sqrt((2.0 * lnln + confidence) / (2.0 * md));
}

EstimateUpdate update_estimate(const WalkOutcome& outcome, std::uint64_t m, double c,
                               std::uint64_t g, double eta) {
  if (m == 0) throw UsageError("update_estimate requires a sample count of at least 1");
  const double md = static_cast<double>(m);
  EstimateUpdate up;
  up.c = ((md - 1.0) / md) * c + outcome.x / md;
  up.tauNorm = tau_norm(m, g, eta);
  return up;
}

// ---------------------------------------------------------------------------
// Configuration
// ---------------------------------------------------------------------------

const char* sampling_mode_name(SamplingConfig::Mode mode) {
  switch (mode) {
    case SamplingConfig::Mode::PerE: return "perE";
    case SamplingConfig::Mode::Improved: return "improved";
    case SamplingConfig::Mode::WithFilter: return "withFilter";
  }
  return "improved";
}

SamplingConfig::Mode parse_sampling_mode(const std::string& name) {
  if (name == "perE") return SamplingConfig::Mode::PerE;
  if (name == "improved") return SamplingConfig::Mode::Improved;
  if (name == "withFilter") return SamplingConfig::Mode::WithFilter;
  throw ConfigError("unknown sampling mode: " + name +
                    " (expected perE, improved, or withFilter)");
}

void SamplingConfig::validate() const {
  if (!(tau0 > 0.0) || !std::isfinite(tau0))
    throw ConfigError("tau0 must be a positive finite number");
  if (!(eta > 0.0) || !(eta < 1.0)) throw ConfigError("eta must lie strictly between 0 and 1");
  if (sampleRate < 0.0 || !std::isfinite(sampleRate))
    throw ConfigError("sample_rate must be a non-negative finite number");
  if (m0 == 0) throw ConfigError("m0 must be at least 1");
  if (walkCap == 0) throw ConfigError("walk_cap must be at least 1");
}

SamplingConfig SamplingConfig::from_json_text(const std::string& text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception&) {
    throw ConfigError("sampling config is not valid JSON");
  }
  if (!j.is_object()) throw ConfigError("sampling config must be a JSON object");
  SamplingConfig cfg;
  try {
    for (auto it = j.begin(); it != j.end(); ++it) {
      const std::string& key = it.key();
      if (key == "tau0")
        cfg.tau0 = it.value().get<double>();
      else if (key == "eta")
        cfg.eta = it.value().get<double>();
      else if (key == "sample_rate")
        cfg.sampleRate = it.value().get<double>();
      else if (key == "mode")
        cfg.mode = parse_sampling_mode(it.value().get<std::string>());
      else if (key == "m0")
        cfg.m0 = it.value().get<std::uint64_t>();
      else if (key == "walk_cap")
        cfg.walkCap = it.value().get<std::uint64_t>();
      else if (key == "seed")
        cfg.seed = it.value().get<std::uint64_t>();
      else
        throw ConfigError("unknown sampling config key: " + key);
    }
  } catch (const nlohmann::json::exception&) {
    throw ConfigError("sampling config has a value of the wrong type");
  }
  cfg.validate();
  return cfg;
}

std::string SamplingConfig::to_json_text() const {
  nlohmann::ordered_json j;
  j["tau0"] = tau0;
  j["eta"] = eta;
  j["sample_rate"] = sampleRate;
  j["mode"] = sampling_mode_name(mode);
  j["m0"] = m0;
  j["walk_cap"] = walkCap;
  j["seed"] = seed;
  return j.dump();
}

// ---------------------------------------------------------------------------
// Estimator machinery
// ---------------------------------------------------------------------------

namespace {

struct WalkBudgetTracker {
  std::uint64_t cap = 0;
  std::uint64_t used = 0;
  bool exhausted() const { return used >= cap; }
};

// Orders composite group keys lexicographically by token text so results do
// not depend on dictionary intern order.
struct TokenKeyLess {
  const Dictionary* dict = nullptr;
  bool operator()(const std::vector<Value>& a, const std::vector<Value>& b) const {
    const std::size_t n = std::min(a.size(), b.size());
    for (std::size_t i = 0; i < n; ++i) {
      if (a[i] == b[i]) continue;
      return dict->token_less(a[i], b[i]);
    }
    return a.size() < b.size();
  }
};

std::uint64_t group_stream_key(const Dictionary& dict, const std::vector<Value>& key) {
  std::uint64_t h = 0x9b97f6a1c8d04e5bULL;
  for (Value v : key) h = fold_keys(h, {fnv1a(dict.token(v))});
  return h;
}

struct GroupStart {
  std::vector<Value> key;
  const std::vector<RowId>* rows = nullptr;
  std::uint64_t streamKey = 0;
};

struct Estimator {
  explicit Estimator(TokenKeyLess cmp) : ownedStarts(cmp) {}

  Mask e = 0;
  Mask comp = 0;
  WalkPlan plan;
  PlanRuntime runtime;
  std::size_t entry = 0;
  std::vector<BoundaryAttr> boundary;
  std::vector<std::size_t> entryAttrs;  // boundary attribute indexes on the entry relation
  bool single = false;                  // every boundary attribute lives on the entry relation
  bool groupsReady = false;
  bool filterMode = false;  // group identity must be re-checked against the walked tuple
  bool usedFilter = false;
  bool exactFallback = false;
  bool converged = false;
  bool budgetStopped = false;

  std::vector<GroupStart> starts;
  std::vector<GroupEstimate> groups;
  std::unordered_map<Value, std::size_t> feedIndex;  // single-attribute boundaries only
  std::map<std::vector<Value>, std::vector<RowId>, TokenKeyLess> ownedStarts;
  std::vector<RowId> allRows;               // entry rows for unrestricted walks
  std::vector<WalkOutcome> pilotOutcomes;   // cached unrestricted walks

  std::uint64_t samples = 0;  // n: samples folded in across groups
  std::uint64_t walks = 0;    // trajectories launched for this component
  std::uint64_t budget = std::numeric_limits<std::uint64_t>::max();
  double j = 0.0;
  double tauJ = 0.0;
  double value = 0.0;
  double lower = 0.0;
};

struct FeedTarget {
  std::size_t pos = 0;  // plan position whose suffix matches the target residual
  Estimator* target = nullptr;
};

EstimatorSnapshot snapshot(const Estimator& est) {
  EstimatorSnapshot s;
  s.e = est.e;
  s.comp = est.comp;
  s.j = est.j;
  s.tauJ = est.tauJ;
  s.samples = est.samples;
  s.walks = est.walks;
  s.groups = &est.groups;
  return s;
}

bool needs_sampling(const BoundQuery& query, Mask comp) {
  if (std::popcount(comp) < 2) return false;
  return !boundary_attributes(query, comp).empty();
}

std::unique_ptr<Estimator> make_estimator(const BoundQuery& query, Mask e, Mask comp) {
  auto est = std::make_unique<Estimator>(TokenKeyLess{&query.dict()});
  est->e = e;
  est->comp = comp;
  // Component boundary: predicates leaving the component all cross the
  // residual boundary too, because components have no predicates between them.
  est->boundary = boundary_attributes(query, comp);
  std::vector<std::size_t> counts(query.n(), 0);
  for (const BoundaryAttr& b : est->boundary) ++counts[b.rel];
  std::size_t entry = kNoPos;
  for (std::size_t i = 0; i < query.n(); ++i) {
    if (((comp >> i) & 1u) == 0) continue;
    if (entry == kNoPos || counts[i] > counts[entry]) entry = i;
  }
  est->entry = entry;
  est->single = true;
  for (const BoundaryAttr& b : est->boundary) {
    if (b.rel == entry)
      est->entryAttrs.push_back(b.attr);
    else
      est->single = false;
  }
  est->plan = walk_plan(query, comp, entry);
  ensure_plan_indexes(query, est->plan);
  est->runtime = PlanRuntime::build(query, est->plan);
  return est;
}

void ensure_all_rows(const BoundQuery& query, Estimator& est) {
  if (!est.allRows.empty()) return;
  const Relation& rel = query.relation(est.entry);
  est.allRows.resize(rel.row_count());
  std::iota(est.allRows.begin(), est.allRows.end(), RowId{0});
}

// Enumerates every group of a single-relation boundary: the sorted distinct
// composite entry values, with their matching rows as start sets.
void init_groups_full(const BoundQuery& query, Estimator& est) {
  const Relation& rel = query.relation(est.entry);
  est.starts.clear();
  if (est.entryAttrs.size() == 1) {
    const std::size_t attr = est.entryAttrs[0];
    ensure_index(query, est.entry, attr);
    for (Value v : rel.distinct_values(rel.attributes()[attr])) {
      GroupStart gs;
      gs.key = {v};
      gs.rows = rel.postings(attr, v);
      gs.streamKey = group_stream_key(query.dict(), gs.key);
      est.starts.push_back(std::move(gs));
    }
  } else {
    for (RowId r = 0; r < rel.row_count(); ++r) {
      std::vector<Value> key;
      key.reserve(est.entryAttrs.size());
      for (std::size_t attr : est.entryAttrs) key.push_back(rel.at(r, attr));
      est.ownedStarts[std::move(key)].push_back(r);
    }
    for (const auto& [key, rows] : est.ownedStarts) {
      GroupStart gs;
      gs.key = key;
      gs.rows = &rows;
      gs.streamKey = group_stream_key(query.dict(), key);
      est.starts.push_back(std::move(gs));
    }
  }
  est.groups.assign(est.starts.size(), GroupEstimate{});
  est.feedIndex.clear();
  for (std::size_t i = 0; i < est.starts.size(); ++i) {
    est.groups[i].key = est.starts[i].key;
    if (est.entryAttrs.size() == 1) est.feedIndex[est.starts[i].key[0]] = i;
  }
  est.filterMode = false;
  est.groupsReady = true;
}

// Positions of the entry-relation attributes within the sorted boundary.
std::vector<std::size_t> entry_positions(const Estimator& est) {
  std::vector<std::size_t> pos;
  for (std::size_t i = 0; i < est.boundary.size(); ++i)
    if (est.boundary[i].rel == est.entry) pos.push_back(i);
  return pos;
}

// Initializes groups from discovered candidate boundary tuples. Walks start
// from rows matching the candidate's entry-relation values; for composite
// boundaries the remaining boundary values are checked per walk.
void init_groups_candidates(const BoundQuery& query, Estimator& est,
                            const std::vector<std::vector<Value>>& candidates) {
  const Relation& rel = query.relation(est.entry);
  const std::vector<std::size_t> entryPos = entry_positions(est);
  std::set<std::vector<Value>, TokenKeyLess> neededParts(TokenKeyLess{&query.dict()});
  for (const auto& key : candidates) {
    std::vector<Value> part;
    part.reserve(entryPos.size());
    for (std::size_t p : entryPos) part.push_back(key[p]);
    neededParts.insert(std::move(part));
  }
  for (const auto& part : neededParts) est.ownedStarts.emplace(part, std::vector<RowId>{});
  for (RowId r = 0; r < rel.row_count(); ++r) {
    std::vector<Value> part;
    part.reserve(est.entryAttrs.size());
    for (std::size_t attr : est.entryAttrs) part.push_back(rel.at(r, attr));
    auto it = est.ownedStarts.find(part);
    if (it != est.ownedStarts.end()) it->second.push_back(r);
  }
  est.starts.clear();
  est.groups.clear();
  est.feedIndex.clear();
  for (const auto& key : candidates) {
    std::vector<Value> part;
    for (std::size_t p : entryPos) part.push_back(key[p]);
    GroupStart gs;
    gs.key = key;
    gs.rows = &est.ownedStarts.at(part);
    gs.streamKey = group_stream_key(query.dict(), key);
    est.starts.push_back(std::move(gs));
    GroupEstimate ge;
    ge.key = key;
    est.groups.push_back(std::move(ge));
  }
  est.filterMode = !est.single;  // single-relation candidates are fixed by their start set
  est.usedFilter = true;
  est.groupsReady = true;
}

double sample_value(const BoundQuery& query, const Estimator& est, std::size_t gi,
                    const WalkOutcome& outcome) {
  if (!outcome.success) return 0.0;
  if (!est.filterMode) return outcome.x;
  const std::vector<Value>& key = est.groups[gi].key;
  for (std::size_t i = 0; i < est.boundary.size(); ++i) {
    const BoundaryAttr& b = est.boundary[i];
    const Value v = query.relation(b.rel).at(outcome.rows[est.runtime.pos[b.rel]], b.attr);
    if (v != key[i]) return 0.0;
  }
  return outcome.x;
}

std::vector<Value> observed_boundary(const BoundQuery& query, const Estimator& est,
                                     const WalkOutcome& outcome) {
  std::vector<Value> key;
  key.reserve(est.boundary.size());
  for (const BoundaryAttr& b : est.boundary)
    key.push_back(query.relation(b.rel).at(outcome.rows[est.runtime.pos[b.rel]], b.attr));
  return key;
}

void fold_sample(Estimator& est, GroupEstimate& g, double x) {
  ++g.m;
  const double md = static_cast<double>(g.m);
  g.c = ((md - 1.0) / md) * g.c + x / md;
  ++est.samples;
}

void recompute(Estimator& est, double eta) {
  const std::uint64_t gcount = est.groups.size();
  double total = 0.0;
  for (const GroupEstimate& g : est.groups) total += g.c;  // pruned groups stay frozen in J
  est.j = total;
  if (est.samples == 0) {
    est.tauJ = kInf;
    for (GroupEstimate& g : est.groups) g.tau = kInf;
    return;
  }
  est.tauJ = tau_norm(est.samples, gcount, eta) * total;
  const double scale = est.j + est.tauJ;
  for (GroupEstimate& g : est.groups)
    g.tau = (g.m == 0) ? kInf : tau_norm(g.m, gcount, eta) * scale;
}

void prune_groups(Estimator& est, RqeObserver* observer) {
  double best = -kInf;
  for (const GroupEstimate& g : est.groups)
    if (g.active && g.m > 0) best = std::max(best, g.c - g.tau);
  if (best == -kInf) return;
  for (GroupEstimate& g : est.groups) {
    if (!g.active || g.c + g.tau >= best) continue;
    g.active = false;  // removal is permanent for the rest of the run
    if (observer) observer->on_prune(snapshot(est), g);
  }
}

bool taus_ok(const Estimator& est, double tau0) {
  for (const GroupEstimate& g : est.groups)
    if (g.active && !(g.tau <= tau0)) return false;
  return true;
}

void finalize_value(Estimator& est) {
  double upper = 0.0;
  double lower = 0.0;
  for (const GroupEstimate& g : est.groups) {
    if (!g.active) continue;
    upper = std::max(upper, g.c + g.tau);
    lower = std::max(lower, g.c - g.tau);
  }
  est.value = upper;
  est.lower = std::max(0.0, lower);
}

void note_walk(Estimator& est, WalkBudgetTracker& tracker, SamplingStats* stats) {
  ++est.walks;
  ++tracker.used;
  if (stats) {
    ++stats->totalWalks;
    ++stats->walksPerResidual[est.e];
  }
}

void apply_feeds(const BoundQuery& query, const WalkOutcome& outcome,
                 const std::vector<FeedTarget>& feeds, SamplingStats* stats) {
  (void)query;
  for (const FeedTarget& f : feeds) {
    Estimator& t = *f.target;
    if (t.converged) continue;
    if (outcome.linkValues.size() < f.pos) continue;  // the walk never reached the suffix
    const Value w = outcome.linkValues[f.pos - 1];
    auto it = t.feedIndex.find(w);
    if (it == t.feedIndex.end()) continue;
    GroupEstimate& g = t.groups[it->second];
    if (!g.active) continue;
    fold_sample(t, g, suffix_group_estimate(outcome, f.pos));
    if (stats) ++stats->sharedUpdates;
  }
}

void feed_barrier(const std::vector<FeedTarget>& feeds, const SamplingConfig& cfg,
                  RqeObserver* observer) {
  for (const FeedTarget& f : feeds) {
    Estimator& t = *f.target;
    if (t.converged) continue;
    recompute(t, cfg.eta);
    prune_groups(t, observer);
    if (t.samples > 0 && taus_ok(t, cfg.tau0)) {
      t.converged = true;
      finalize_value(t);
    }
  }
}

bool launch_direct(const BoundQuery& query, Estimator& est, std::size_t gi,
                   const SamplingConfig& cfg, WalkBudgetTracker& tracker,
                   const std::vector<FeedTarget>& feeds, SamplingStats* stats) {
  if (tracker.exhausted() || est.walks >= est.budget) return false;
  GroupEstimate& g = est.groups[gi];
  Rng rng = Rng::stream(cfg.seed, {stream_tag::kWalk, static_cast<std::uint64_t>(est.e),
                                   static_cast<std::uint64_t>(est.comp),
                                   est.starts[gi].streamKey, g.directWalks});
  const WalkOutcome outcome = run_walk(query, est.plan, est.runtime, *est.starts[gi].rows, rng);
  ++g.directWalks;
  note_walk(est, tracker, stats);
  fold_sample(est, g, sample_value(query, est, gi, outcome));
  if (!feeds.empty()) apply_feeds(query, outcome, feeds, stats);
  return true;
}

// Round-robin estimation: top every group up to m0 samples, then one walk per
// active group per round, recomputing intervals and pruning at round barriers
// until every surviving group's half-width is at or below tau0.
void run_direct_rounds(const BoundQuery& query, Estimator& est, const SamplingConfig& cfg,
                       WalkBudgetTracker& tracker, const std::vector<FeedTarget>& feeds,
                       RqeObserver* observer, SamplingStats* stats) {
  if (est.groups.empty()) {
    est.converged = true;
    finalize_value(est);
    return;
  }
  bool stopped = false;
  const auto barrier = [&]() {
    recompute(est, cfg.eta);
    prune_groups(est, observer);
    feed_barrier(feeds, cfg, observer);
    if (observer) observer->on_round(snapshot(est));
  };
  // Initialization passes: one walk per under-initialized group per pass so a
  // budget stop leaves sample counts as even as possible.
  bool pending = true;
  while (pending && !stopped) {
    pending = false;
    for (std::size_t gi = 0; gi < est.groups.size() && !stopped; ++gi) {
      if (!est.groups[gi].active || est.groups[gi].m >= cfg.m0) continue;
      if (!launch_direct(query, est, gi, cfg, tracker, feeds, stats)) {
        stopped = true;
        break;
      }
      if (est.groups[gi].m < cfg.m0) pending = true;
    }
  }
  barrier();
  while (!stopped && !taus_ok(est, cfg.tau0)) {
    for (std::size_t gi = 0; gi < est.groups.size(); ++gi) {
      if (!est.groups[gi].active) continue;
      if (!launch_direct(query, est, gi, cfg, tracker, feeds, stats)) {
        stopped = true;
        break;
      }
    }
    barrier();
  }
  est.converged = taus_ok(est, cfg.tau0) && est.samples > 0;
  est.budgetStopped = stopped;
  finalize_value(est);
}

// Extends the cached unrestricted-walk list (uniform start over the entry
// relation) up to `want` outcomes; returns false on a budget stop.
bool extend_pilot(const BoundQuery& query, Estimator& est, std::uint64_t want,
                  const SamplingConfig& cfg, WalkBudgetTracker& tracker, SamplingStats* stats) {
  ensure_all_rows(query, est);
  while (est.pilotOutcomes.size() < want) {
    if (tracker.exhausted() || est.walks >= est.budget) return false;
    Rng rng = Rng::stream(cfg.seed, {stream_tag::kFilterWalk, static_cast<std::uint64_t>(est.e),
                                     static_cast<std::uint64_t>(est.comp), std::uint64_t{0},
                                     static_cast<std::uint64_t>(est.pilotOutcomes.size())});
    est.pilotOutcomes.push_back(run_walk(query, est.plan, est.runtime, est.allRows, rng));
    note_walk(est, tracker, stats);
  }
  return true;
}

std::vector<std::vector<Value>> pilot_candidates(const BoundQuery& query, const Estimator& est,
                                                 std::size_t use) {
  std::set<std::vector<Value>, TokenKeyLess> seen(TokenKeyLess{&query.dict()});
  const std::size_t limit = std::min(use, est.pilotOutcomes.size());
  for (std::size_t i = 0; i < limit; ++i) {
    const WalkOutcome& o = est.pilotOutcomes[i];
    if (o.success) seen.insert(observed_boundary(query, est, o));
  }
  return {seen.begin(), seen.end()};
}

std::uint64_t group_count_bound(const BoundQuery& query, const Estimator& est) {
  const Relation& rel = query.relation(est.entry);
  std::vector<std::string> names;
  names.reserve(est.entryAttrs.size());
  for (std::size_t attr : est.entryAttrs) names.push_back(rel.attributes()[attr]);
  return rel.distinct_count(names);
}

void mark_unconverged(Estimator& est, double eta) {
  est.converged = false;
  est.budgetStopped = true;
  if (est.groups.empty()) {
    est.value = kInf;
    est.lower = 0.0;
    return;
  }
  recompute(est, eta);
  finalize_value(est);
}

// Dispatches one component: plain group estimation, filtered estimation, or
// the exact fallbacks, honoring the sample-rate walk budget when configured.
void estimate_component(const BoundQuery& query, Estimator& est, const SamplingConfig& cfg,
                        WalkBudgetTracker& tracker, const std::vector<FeedTarget>& feeds,
                        RqeObserver* observer, SamplingStats* stats,
                        std::optional<std::uint64_t> explicitFilterCount) {
  // Estimators whose group tables were pre-built for walk sharing keep them:
  // replacing the groups would discard shared samples and could resurrect
  // pruned groups.
  bool useFilter =
      explicitFilterCount.has_value() ||
      (!est.groupsReady && (!est.single || cfg.mode == SamplingConfig::Mode::WithFilter));
  std::uint64_t filterCount = explicitFilterCount.value_or(0);

  if (cfg.sampleRate > 0.0) {
    // Pilot walks estimate the component join size; the walk budget for this
    // component is sample_rate times that estimate (pilot walks included).
    if (!extend_pilot(query, est, cfg.m0, cfg, tracker, stats)) {
      mark_unconverged(est, cfg.eta);
      return;
    }
    double jhat = 0.0;
    for (std::size_t i = 0; i < cfg.m0; ++i) jhat += est.pilotOutcomes[i].x;
    jhat /= static_cast<double>(cfg.m0);
    const double raw = cfg.sampleRate * jhat;
    std::uint64_t budget = cfg.walkCap;
    if (raw < static_cast<double>(cfg.walkCap))
      budget = static_cast<std::uint64_t>(std::max(1.0, std::floor(raw + 0.5)));
    est.budget = std::max(budget, est.walks);  // pilot walks are already spent
    if (est.single && !explicitFilterCount.has_value() &&
        cfg.mode != SamplingConfig::Mode::WithFilter) {
      const std::uint64_t g = group_count_bound(query, est);
      useFilter = est.budget < cfg.m0 * g;  // not enough budget to initialize every group
    }
    if (useFilter && filterCount == 0)
      filterCount = std::max<std::uint64_t>(cfg.m0, (est.budget + 1) / 2);
  } else if (useFilter && filterCount == 0) {
    if (est.single) {
      const std::uint64_t g = group_count_bound(query, est);
      filterCount =
          cfg.m0 * static_cast<std::uint64_t>(std::ceil(std::sqrt(static_cast<double>(g))));
    } else {
      const std::uint64_t g = std::max<std::uint64_t>(1, group_count_bound(query, est));
      filterCount = std::min<std::uint64_t>(cfg.m0 * g, std::max<std::uint64_t>(1, cfg.walkCap / 4));
    }
    filterCount = std::max<std::uint64_t>(filterCount, 1);
  }

  if (!useFilter) {
    if (!est.groupsReady) init_groups_full(query, est);
    run_direct_rounds(query, est, cfg, tracker, feeds, observer, stats);
    return;
  }

  const bool discoveryComplete = extend_pilot(query, est, filterCount, cfg, tracker, stats);
  const std::vector<std::vector<Value>> candidates =
      pilot_candidates(query, est, static_cast<std::size_t>(filterCount));
  if (candidates.empty()) {
    if (!discoveryComplete) {
      mark_unconverged(est, cfg.eta);
      return;
    }
    if (est.single) {
      // Every pilot walk failed: fall back to estimating all groups.
      init_groups_full(query, est);
      run_direct_rounds(query, est, cfg, tracker, feeds, observer, stats);
      return;
    }
    // Composite boundary with no observable group: fall back to the exact
    // group-by, flagged through provenance.
    est.exactFallback = true;
    est.converged = true;
    est.value = static_cast<double>(exact_max_boundary(query, est.comp));
    est.lower = est.value;
    return;
  }
  init_groups_candidates(query, est, candidates);
  if (cfg.sampleRate > 0.0 &&
      est.budget != std::numeric_limits<std::uint64_t>::max())
    // Guarantee at least one estimation walk per surviving candidate.
    est.budget = std::max(est.budget, est.walks + candidates.size());
  run_direct_rounds(query, est, cfg, tracker, feeds, observer, stats);
}

ComponentResult exact_component(const BoundQuery& query, Mask comp) {
  ComponentResult r;
  r.comp = comp;
  r.sampled = false;
  r.converged = true;
  const std::vector<BoundaryAttr> battrs = boundary_attributes(query, comp);
  if (std::popcount(comp) == 1) {
    const auto relIdx = static_cast<std::size_t>(std::countr_zero(comp));
    const Relation& rel = query.relation(relIdx);
    if (battrs.empty()) {
      r.value = static_cast<double>(rel.row_count());
    } else {
      std::vector<std::string> names;
      for (const BoundaryAttr& b : battrs) names.push_back(rel.attributes()[b.attr]);
      r.value = static_cast<double>(rel.max_frequency(names));
    }
  } else {
    // Multi-relation component with an empty boundary: a single scalar count.
    r.value = static_cast<double>(exact_join_count(query, comp));
  }
  r.lower = r.value;
  return r;
}

ComponentResult to_component_result(const Estimator& est) {
  ComponentResult r;
  r.comp = est.comp;
  r.value = est.value;
  r.lower = est.lower;
  r.sampled = !est.exactFallback;
  r.usedFilter = est.usedFilter;
  r.exactFallback = est.exactFallback;
  r.converged = est.converged;
  r.walkCount = est.walks;
  r.sampleCount = est.samples;
  r.groups = est.groups;
  return r;
}

BoundaryEntry combine_components(const std::vector<ComponentResult>& parts) {
  BoundaryEntry be;
  double upper = 1.0;
  double lower = 1.0;
  bool sampled = false;
  bool converged = true;
  for (const ComponentResult& p : parts) {
    upper *= p.value;
    lower *= p.lower;
    sampled = sampled || p.sampled;
    converged = converged && p.converged;
  }
  be.value = upper;
  be.halfWidth = sampled ? std::max(0.0, upper - lower) : 0.0;
  be.provenance = sampled ? Provenance::Sampled : Provenance::Exact;
  be.converged = converged;
  return be;
}

std::vector<FeedTarget> build_feed_targets(const Estimator& src,
                                           const std::vector<std::unique_ptr<Estimator>>& all) {
  std::vector<FeedTarget> out;
  if (!src.plan.isPath) return out;
  for (std::size_t p = 1; p < src.plan.order.size(); ++p) {
    Mask suffix = 0;
    for (std::size_t l = p; l < src.plan.order.size(); ++l)
      suffix |= (Mask{1} << src.plan.order[l]);
    for (const auto& cand : all) {
      Estimator* t = cand.get();
      if (t == &src || t->e != suffix || t->comp != suffix) continue;
      if (!t->single || t->boundary.size() != 1) continue;
      if (t->entry != src.plan.order[p]) continue;
      if (t->boundary[0].attr != src.plan.steps[p - 1].newAttr) continue;
      if (!t->groupsReady || t->filterMode || t->exactFallback) continue;
      out.push_back(FeedTarget{p, t});
    }
  }
  return out;
}

MaxBoundaryTable estimate_table(const BoundQuery& query,
                                const std::vector<ResidualQuery>& residuals,
                                const SamplingConfig& cfg, bool feeding, SamplingStats* stats,
                                RqeObserver* observer) {
  cfg.validate();
  WalkBudgetTracker tracker{cfg.walkCap, 0};
  SamplingStats local;
  SamplingStats* st = stats ? stats : &local;
  *st = SamplingStats{};

  std::vector<std::unique_ptr<Estimator>> ests;
  std::map<Mask, std::vector<ComponentResult>> exactParts;
  std::map<Mask, std::vector<Estimator*>> sampledParts;
  for (const ResidualQuery& rq : residuals) {
    if (rq.e == 0) continue;  // T for the empty set is preset to 1
    for (Mask comp : rq.comps) {
      if (needs_sampling(query, comp)) {
        ests.push_back(make_estimator(query, rq.e, comp));
        sampledParts[rq.e].push_back(ests.back().get());
      } else {
        exactParts[rq.e].push_back(exact_component(query, comp));
      }
    }
  }

  if (feeding) {
    // Feed targets need their group tables before any sharing can happen.
    for (auto& est : ests)
      if (est->single && est->entryAttrs.size() == 1 && est->boundary.size() == 1)
        init_groups_full(query, *est);
  }

  std::vector<Estimator*> order;
  order.reserve(ests.size());
  for (auto& est : ests) order.push_back(est.get());
  std::sort(order.begin(), order.end(), [](const Estimator* a, const Estimator* b) {
    const int pa = std::popcount(a->e);
    const int pb = std::popcount(b->e);
    if (pa != pb) return pa > pb;  // largest residual first
    if (a->e != b->e) return a->e < b->e;
    return a->comp < b->comp;
  });

  for (Estimator* est : order) {
    if (est->converged) continue;  // already settled by shared updates
    const std::vector<FeedTarget> feeds =
        feeding ? build_feed_targets(*est, ests) : std::vector<FeedTarget>{};
    estimate_component(query, *est, cfg, tracker, feeds, observer, st, std::nullopt);
  }

  MaxBoundaryTable table;
  for (const ResidualQuery& rq : residuals) {
    if (rq.e == 0) continue;
    std::vector<ComponentResult> parts = exactParts[rq.e];
    for (const Estimator* est : sampledParts[rq.e]) {
      parts.push_back(to_component_result(*est));
      if (est->exactFallback) st->anyExactFallback = true;
    }
    const BoundaryEntry be = combine_components(parts);
    st->allConverged = st->allConverged && be.converged;
    table.set(rq.e, be);
  }
  return table;
}

RqeResult run_residual(const BoundQuery& query, const ResidualQuery& residual,
                       const SamplingConfig& cfg, std::optional<std::uint64_t> filterCount,
                       RqeObserver* observer) {
  cfg.validate();
  if (residual.e == 0)
    throw UsageError("the empty residual query has no boundary groups to estimate");
  if (residual.boundary.empty())
    throw UsageError("residual query has an empty boundary; evaluate it exactly instead");
  WalkBudgetTracker tracker{cfg.walkCap, 0};
  SamplingStats stats;
  RqeResult out;
  double product = 1.0;
  for (Mask comp : residual.comps) {
    ComponentResult part;
    if (needs_sampling(query, comp)) {
      auto est = make_estimator(query, residual.e, comp);
      estimate_component(query, *est, cfg, tracker, {}, observer, &stats, filterCount);
      part = to_component_result(*est);
    } else {
      part = exact_component(query, comp);
    }
    product *= part.value;
    out.converged = out.converged && part.converged;
    out.sampleCount += part.sampleCount;
    out.components.push_back(std::move(part));
  }
  out.value = product;
  out.walkCount = stats.totalWalks;
  return out;
}

}  // namespace

// ---------------------------------------------------------------------------
// Public pipelines
// ---------------------------------------------------------------------------

RqeResult rqe(const BoundQuery& query, const ResidualQuery& residual, const SamplingConfig& config,
              RqeObserver* observer) {
  return run_residual(query, residual, config, std::nullopt, observer);
}

RqeResult rqe_with_filter(const BoundQuery& query, const ResidualQuery& residual,
                          std::uint64_t filterSampleCount, const SamplingConfig& config,
                          RqeObserver* observer) {
  if (filterSampleCount == 0)
    throw UsageError("the filtered estimator needs at least one pilot walk");
  return run_residual(query, residual, config, filterSampleCount, observer);
}

MaxBoundaryTable improved_rqe(const BoundQuery& query, const std::vector<ResidualQuery>& residuals,
                              const SamplingConfig& config, SamplingStats* stats,
                              RqeObserver* observer) {
  // Walk sharing assumes tau0-driven estimation; per-component budgets make
  // shared sample accounting ambiguous, so rate-driven runs fall back to
  // independent estimation.
  const bool feeding = config.sampleRate == 0.0;
  return estimate_table(query, residuals, config, feeding, stats, observer);
}

MaxBoundaryTable build_sampled_table(const BoundQuery& query, const SamplingConfig& config,
                                     SamplingStats* stats, RqeObserver* observer) {
  std::vector<ResidualQuery> residuals;
  for (Mask e : residual_set(query)) {
    if (e == 0) continue;
    residuals.push_back(residual_query(query, e));
  }
  const bool feeding =
      config.mode == SamplingConfig::Mode::Improved && config.sampleRate == 0.0;
  return estimate_table(query, residuals, config, feeding, stats, observer);
}

SensitivityReport sampling_se(const BoundQuery& query, const SamplingConfig& config,
                              const SmoothingParams& params, double gsCap) {
  SamplingStats stats;
  const MaxBoundaryTable table = build_sampled_table(query, config, &stats, nullptr);
  SensitivityReport report = residual_sensitivity(query, table, params, gsCap);
  report.method = Method::SamplingSE;
  report.walkCount = stats.totalWalks;
  report.converged = table.all_converged();
  if (!report.converged)
    report.note = "walk budget exhausted before every group interval reached tau0";
  else if (stats.anyExactFallback)
    report.note = "no boundary group was observed for some component; exact fallback used";
  return report;
}

}  // namespace joinsense
