#include "joinsense/harness.hpp"

#include <algorithm>
#include <charconv>
#include <chrono>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <limits>
#include <sstream>

#include <json.hpp>

#include "joinsense/errors.hpp"
#include "joinsense/exact.hpp"
#include "joinsense/rng.hpp"

namespace joinsense {

namespace {

using nlohmann::ordered_json;

constexpr double kInf = std::numeric_limits<double>::infinity();

[[noreturn]] void bad_config(const std::string& what) { throw ConfigError(what); }

// JSON cannot carry non-finite numbers, so those values are serialized as
// the strings "inf" / "-inf" / "nan" and parsed back symmetrically.
ordered_json num_or_string(double v) {
  if (std::isfinite(v)) return v;
  if (std::isnan(v)) return "nan";
  return v > 0 ? "inf" : "-inf";
}

double read_num(const nlohmann::json& j, const char* key) {
  if (!j.contains(key)) bad_config(std::string("missing field '") + key + "'");
  const auto& v = j.at(key);
  if (v.is_string()) {
    const std::string s = v.get<std::string>();
    if (s == "inf") return kInf;
    if (s == "-inf") return -kInf;
    if (s == "nan") return std::numeric_limits<double>::quiet_NaN();
    bad_config(std::string("field '") + key + "' is not a number: '" + s + "'");
  }
  if (!v.is_number()) bad_config(std::string("field '") + key + "' is not a number");
  return v.get<double>();
}

std::uint64_t parse_u64(const std::string& text, const std::string& what) {
  std::uint64_t value = 0;
  const char* begin = text.data();
  const char* end = begin + text.size();
  auto [p, ec] = std::from_chars(begin, end, value);
  if (ec != std::errc{} || p != end) bad_config(what + " is not an unsigned integer: '" + text + "'");
  return value;
}

double parse_f64(const std::string& text, const std::string& what) {
  char* end = nullptr;
  errno = 0;
  const double value = std::strtod(text.c_str(), &end);
  if (errno != 0 || end != text.c_str() + text.size() || text.empty())
    bad_config(what + " is not a number: '" + text + "'");
  return value;
}

bool parse_bool(const std::string& text, const std::string& what) {
  if (text == "1" || text == "true" || text == "yes" || text == "on") return true;
  if (text == "0" || text == "false" || text == "no" || text == "off") return false;
  bad_config(what + " is not a boolean: '" + text + "'");
}

const char* graph_kind_name(GraphKind kind) {
  switch (kind) {
    case GraphKind::Chain: return "chain";
    case GraphKind::Acyclic: return "acyclic";
    case GraphKind::Cyclic: return "cyclic";
  }
  return "unknown";
}

double median_of(std::vector<double> v) {
  if (v.empty()) return 0.0;
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return (v[(n - 1) / 2] + v[n / 2]) / 2.0;
}

double p90_of(std::vector<double> v) {
  if (v.empty()) return 0.0;
  std::sort(v.begin(), v.end());
  return v[(9 * (v.size() - 1)) / 10];
}

std::string csv_safe(const std::string& s) {
  // Field values placed into CSV cells; commas and newlines would break the
  // row structure, so they are replaced with spaces.
  std::string out = s;
  for (char& c : out)
    if (c == ',' || c == '\n' || c == '\r') c = ' ';
  return out;
}

}  // namespace

Method parse_method(const std::string& name) {
  if (name == "es" || name == "elastic") return Method::ES;
  if (name == "rs" || name == "residual") return Method::RS;
  if (name == "sampling-se" || name == "sampling") return Method::SamplingSE;
  if (name == "sketch-se" || name == "sketch") return Method::SketchSE;
  if (name == "local-oracle" || name == "local") return Method::LocalOracle;
  bad_config("unknown method '" + name +
             "' (expected es, rs, sampling-se, sketch-se, or local-oracle)");
}

Mechanism parse_mechanism(const std::string& name) {
  if (name == "laplace" || name == "laplace-smooth") return Mechanism::LaplaceSmooth;
  if (name == "laplace-global" || name == "global") return Mechanism::LaplaceGlobal;
  if (name == "general-cauchy" || name == "cauchy") return Mechanism::GeneralCauchy;
  bad_config("unknown mechanism '" + name +
             "' (expected laplace, laplace-global, or general-cauchy)");
}

// ---------------------------------------------------------------------------
// HarnessConfig
// ---------------------------------------------------------------------------

void HarnessConfig::validate() const {
  if (!(epsilon > 0.0) || !std::isfinite(epsilon)) bad_config("epsilon must be positive and finite");
  if (!(delta > 0.0) || !(delta < 1.0)) bad_config("delta must lie in (0, 1)");
  if (!(gamma > 1.0) || !std::isfinite(gamma)) bad_config("gamma must be greater than 1");
  parse_method(method);
  parse_mechanism(mechanism);
  sampling.validate();
  sketch.validate();
}

HarnessConfig HarnessConfig::from_json_text(const std::string& text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    bad_config(std::string("configuration is not valid JSON: ") + e.what());
  }
  if (!j.is_object()) bad_config("configuration must be a JSON object");
  HarnessConfig cfg;
  for (const auto& [key, value] : j.items()) {
    try {
      if (key == "seed") {
        cfg.seed = value.get<std::uint64_t>();
      } else if (key == "data_dir") {
        cfg.dataDir = value.get<std::string>();
      } else if (key == "sketch_dir") {
        cfg.sketchDir = value.get<std::string>();
      } else if (key == "out_dir") {
        cfg.outDir = value.get<std::string>();
      } else if (key == "epsilon") {
        cfg.epsilon = value.get<double>();
      } else if (key == "delta") {
        cfg.delta = value.get<double>();
      } else if (key == "gamma") {
        cfg.gamma = value.get<double>();
      } else if (key == "mechanism") {
        cfg.mechanism = value.get<std::string>();
      } else if (key == "method") {
        cfg.method = value.get<std::string>();
      } else if (key == "use_keys") {
        cfg.useKeys = value.get<bool>();
      } else if (key == "sampling") {
        if (!value.is_object()) bad_config("'sampling' must be an object");
        cfg.sampling = SamplingConfig::from_json_text(value.dump());
      } else if (key == "sketch") {
        if (!value.is_object()) bad_config("'sketch' must be an object");
        cfg.sketch = SketchParams::from_json_text(value.dump());
      } else {
        bad_config("unknown configuration key '" + key + "'");
      }
    } catch (const nlohmann::json::exception& e) {
      bad_config("configuration key '" + key + "' has the wrong type: " + e.what());
    }
  }
  return cfg;
}

HarnessConfig HarnessConfig::from_json_file(const std::string& path) {
  return from_json_text(read_text_file(path));
}

std::string HarnessConfig::to_json_text() const {
  ordered_json j;
  j["seed"] = seed;
  j["data_dir"] = dataDir;
  j["sketch_dir"] = sketchDir;
  j["out_dir"] = outDir;
  j["epsilon"] = epsilon;
  j["delta"] = delta;
  j["gamma"] = gamma;
  j["mechanism"] = mechanism;
  j["method"] = method;
  j["use_keys"] = useKeys;
  j["sampling"] = nlohmann::json::parse(sampling.to_json_text());
  j["sketch"] = nlohmann::json::parse(sketch.to_json_text());
  return j.dump(2);
}

void HarnessConfig::apply_env(const std::function<const char*(const char*)>& lookup) {
  auto str = [&](const char* name) -> std::optional<std::string> {
    const char* v = lookup(name);
    if (v == nullptr) return std::nullopt;
    return std::string(v);
  };
  if (auto v = str("JOINSENSE_SEED")) seed = parse_u64(*v, "JOINSENSE_SEED");
  if (auto v = str("JOINSENSE_DATA_DIR")) dataDir = *v;
  if (auto v = str("JOINSENSE_SKETCH_DIR")) sketchDir = *v;
  if (auto v = str("JOINSENSE_OUT_DIR")) outDir = *v;
  if (auto v = str("JOINSENSE_EPSILON")) epsilon = parse_f64(*v, "JOINSENSE_EPSILON");
  if (auto v = str("JOINSENSE_DELTA")) delta = parse_f64(*v, "JOINSENSE_DELTA");
  if (auto v = str("JOINSENSE_GAMMA")) gamma = parse_f64(*v, "JOINSENSE_GAMMA");
  if (auto v = str("JOINSENSE_MECHANISM")) mechanism = *v;
  if (auto v = str("JOINSENSE_METHOD")) method = *v;
  if (auto v = str("JOINSENSE_USE_KEYS")) useKeys = parse_bool(*v, "JOINSENSE_USE_KEYS");
  if (auto v = str("JOINSENSE_SAMPLING_TAU0")) sampling.tau0 = parse_f64(*v, "JOINSENSE_SAMPLING_TAU0");
  if (auto v = str("JOINSENSE_SAMPLING_ETA")) sampling.eta = parse_f64(*v, "JOINSENSE_SAMPLING_ETA");
  if (auto v = str("JOINSENSE_SAMPLING_SAMPLE_RATE"))
    sampling.sampleRate = parse_f64(*v, "JOINSENSE_SAMPLING_SAMPLE_RATE");
  if (auto v = str("JOINSENSE_SAMPLING_MODE")) sampling.mode = parse_sampling_mode(*v);
  if (auto v = str("JOINSENSE_SAMPLING_M0")) sampling.m0 = parse_u64(*v, "JOINSENSE_SAMPLING_M0");
  if (auto v = str("JOINSENSE_SAMPLING_WALK_CAP"))
    sampling.walkCap = parse_u64(*v, "JOINSENSE_SAMPLING_WALK_CAP");
  if (auto v = str("JOINSENSE_SAMPLING_SEED")) sampling.seed = parse_u64(*v, "JOINSENSE_SAMPLING_SEED");
  if (auto v = str("JOINSENSE_SKETCH_S1")) sketch.s1 = parse_u64(*v, "JOINSENSE_SKETCH_S1");
  if (auto v = str("JOINSENSE_SKETCH_S2")) sketch.s2 = parse_u64(*v, "JOINSENSE_SKETCH_S2");
  if (auto v = str("JOINSENSE_SKETCH_TAU")) sketch.tau = parse_f64(*v, "JOINSENSE_SKETCH_TAU");
  if (auto v = str("JOINSENSE_SKETCH_ETA")) sketch.eta = parse_f64(*v, "JOINSENSE_SKETCH_ETA");
}

void HarnessConfig::apply_env() {
  apply_env([](const char* name) { return std::getenv(name); });
}

// ---------------------------------------------------------------------------
// RunRecord
// ---------------------------------------------------------------------------

std::string RunRecord::to_json_line() const {
  ordered_json j;
  j["queryId"] = queryId;
  j["method"] = method;
  j["mechanism"] = mechanism;
  j["epsilon"] = num_or_string(epsilon);
  j["delta"] = num_or_string(delta);
  j["seed"] = seed;
  j["trueAnswer"] = num_or_string(trueAnswer);
  j["sensitivity"] = num_or_string(sensitivity);
  j["kStar"] = kStar;
  j["scale"] = num_or_string(scale);
  j["noisyValue"] = num_or_string(noisyValue);
  j["deviation"] = num_or_string(deviation);
  j["wallTimeMs"] = num_or_string(wallTimeMs);
  j["converged"] = converged;
  j["note"] = note;
  return j.dump();
}

RunRecord RunRecord::from_json_line(const std::string& line) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(line);
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("run record is not valid JSON: ") + e.what());
  }
  RunRecord r;
  try {
    r.queryId = j.at("queryId").get<std::string>();
    r.method = j.at("method").get<std::string>();
    r.mechanism = j.at("mechanism").get<std::string>();
    r.epsilon = read_num(j, "epsilon");
    r.delta = read_num(j, "delta");
    r.seed = j.at("seed").get<std::uint64_t>();
    r.trueAnswer = read_num(j, "trueAnswer");
    r.sensitivity = read_num(j, "sensitivity");
    r.kStar = j.at("kStar").get<std::uint64_t>();
    r.scale = read_num(j, "scale");
    r.noisyValue = read_num(j, "noisyValue");
    r.deviation = read_num(j, "deviation");
    r.wallTimeMs = read_num(j, "wallTimeMs");
    r.converged = j.at("converged").get<bool>();
    r.note = j.at("note").get<std::string>();
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("run record is missing fields: ") + e.what());
  } catch (const ConfigError& e) {
    throw DataError(std::string("run record field: ") + e.what());
  }
  return r;
}

// ---------------------------------------------------------------------------
// Loading and offline preparation
// ---------------------------------------------------------------------------

const BoundQuery& QueryBundle::bound() const {
  if (!query) throw UsageError("query bundle is empty");
  return *query;
}

const std::string& QueryBundle::id() const { return bound().spec().id; }

QueryBundle load_query_bundle(const std::string& queryPath, const std::string& dataDir) {
  QueryBundle bundle;
  QuerySpec spec = QuerySpec::from_json_file(queryPath);
  for (const std::string& name : spec.relations) {
    const auto csv = std::filesystem::path(dataDir) / (name + ".csv");
    bundle.dataset.load_csv_file(csv.string(), name);
  }
  bundle.query.emplace(bundle.dataset, std::move(spec));
  return bundle;
}

void prepare_offline(const BoundQuery& query) {
  for (const BoundPredicate& p : query.predicates()) {
    // Index construction mutates only the relation's cached index; the
    // relations live in the dataset the caller owns.
    auto& relA = const_cast<Relation&>(query.relation(p.relA));
    auto& relB = const_cast<Relation&>(query.relation(p.relB));
    build_index(relA, relA.attributes()[p.attrA]);
    build_index(relB, relB.attributes()[p.attrB]);
  }
}

double true_answer(const BoundQuery& query) {
  return static_cast<double>(exact_join_count(query));
}

double global_sensitivity(const BoundQuery& query) {
  if (query.private_count() == 0) return 0.0;
  if (query.n() == 1) return 1.0;  // one row more or less changes the count by one
  return kInf;
}

// ---------------------------------------------------------------------------
// Single runs
// ---------------------------------------------------------------------------

RunRecord run_query(const BoundQuery& query, const RunRequest& req) {
  prepare_offline(query);

  RunRecord rec;
  rec.queryId = query.spec().id;
  rec.mechanism = mechanism_name(req.mechanism);
  rec.epsilon = req.epsilon;
  rec.delta = (req.mechanism == Mechanism::LaplaceSmooth) ? req.delta : 0.0;
  rec.seed = req.seed;

  const double answer = req.trueAnswerCache ? *req.trueAnswerCache : true_answer(query);
  rec.trueAnswer = answer;

  Rng noise = noise_stream(req.seed, query.spec().fingerprint(), req.mechanism, req.epsilon);
  using clock = std::chrono::steady_clock;

  if (req.mechanism == Mechanism::LaplaceGlobal) {
    rec.method = "global";
    const auto t0 = clock::now();
    const double gs = global_sensitivity(query);
    const NoisyAnswer out = release_global(answer, gs, req.epsilon, noise);
    const auto t1 = clock::now();
    rec.sensitivity = gs;
    rec.kStar = 0;
    rec.scale = out.scale;
    rec.noisyValue = out.noisyValue;
    rec.deviation = out.deviation();
    rec.wallTimeMs = std::chrono::duration<double, std::milli>(t1 - t0).count();
    rec.converged = true;
    return rec;
  }

  const SmoothingParams params = (req.mechanism == Mechanism::GeneralCauchy)
                                     ? SmoothingParams::general_cauchy(req.epsilon, req.gamma)
                                     : SmoothingParams::laplace(req.epsilon, req.delta);

  // Offline, untimed preparation specific to the method.
  std::optional<ElasticStats> elastic;
  std::optional<SksTables> sksTables;
  SamplingConfig samplingCfg = req.sampling;
  switch (req.method) {
    case Method::ES:
      elastic = build_elastic_stats(query);
      break;
    case Method::RS:
      break;  // the exact residual tables are this method's online cost
    case Method::SamplingSE:
      samplingCfg.seed = req.seed;
      samplingCfg.validate();
      break;
    case Method::SketchSE: {
      if (req.sketches == nullptr || req.sketches->empty())
        throw UsageError("the sketching method needs prebuilt sketches; build and load them first");
      for (const AgmsSketch& sk : *req.sketches) check_sketch_matches(sk, query);
      const double tau = req.sketches->front().params.tau;
      const std::uint64_t kMax = sks_table_size(query.private_count(), params.beta);
      sksTables = build_sks_tables(*req.sketches, query, kMax, tau);
      break;
    }
    case Method::LocalOracle:
      break;
  }

  const auto t0 = clock::now();
  SensitivityReport report;
  switch (req.method) {
    case Method::ES:
      report = elastic_sensitivity(*elastic, query.private_count(), params);
      break;
    case Method::RS: {
      const MaxBoundaryTable table = build_exact_table(query, req.useKeys);
      report = residual_sensitivity(query, table, params);
      break;
    }
    case Method::SamplingSE:
      report = sampling_se(query, samplingCfg, params);
      break;
    case Method::SketchSE:
      report = sketching_sensitivity(*sksTables, params);
      break;
    case Method::LocalOracle: {
      report.method = Method::LocalOracle;
      report.value = static_cast<double>(local_sensitivity_oracle(query));
      report.kStar = 0;
      report.params = params;
      report.converged = true;
      report.note = "local sensitivity at the observed database; diagnostic only, not a private release";
      break;
    }
  }

  const bool releasable = std::isfinite(report.value);
  NoisyAnswer out{};
  if (releasable) {
    out = (req.mechanism == Mechanism::GeneralCauchy)
              ? release_general_cauchy(answer, report, req.epsilon, req.gamma, noise)
              : release_smooth_laplace(answer, report, req.epsilon, req.delta, noise);
  }
  const auto t1 = clock::now();

  rec.method = method_name(report.method);
  rec.sensitivity = report.value;
  rec.kStar = report.kStar;
  rec.converged = report.converged;
  rec.note = report.note;
  rec.wallTimeMs = std::chrono::duration<double, std::milli>(t1 - t0).count();
  if (releasable) {
    rec.scale = out.scale;
    rec.noisyValue = out.noisyValue;
    rec.deviation = out.deviation();
  } else {
    rec.scale = kInf;
    rec.noisyValue = std::numeric_limits<double>::quiet_NaN();
    rec.deviation = kInf;
    if (rec.note.empty()) rec.note = "sensitivity bound is unbounded; no value was released";
  }
  return rec;
}

// ---------------------------------------------------------------------------
// Benchmark grids
// ---------------------------------------------------------------------------

void BenchSuite::validate() const {
  if (queries.empty()) bad_config("benchmark suite lists no queries");
  if (methods.empty()) bad_config("benchmark suite lists no methods");
  if (mechanisms.empty()) bad_config("benchmark suite lists no mechanisms");
  if (epsilons.empty()) bad_config("benchmark suite lists no epsilons");
  for (const std::string& m : methods) parse_method(m);
  for (const std::string& m : mechanisms) parse_mechanism(m);
  for (double e : epsilons)
    if (!(e > 0.0) || !std::isfinite(e)) bad_config("benchmark epsilons must be positive and finite");
  for (double r : sampleRates)
    if (!(r >= 0.0) || !std::isfinite(r)) bad_config("benchmark sample rates must be non-negative");
  if (repetitions == 0) bad_config("benchmark repetitions must be at least 1");
}

BenchSuite BenchSuite::from_json_text(const std::string& text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    bad_config(std::string("benchmark suite is not valid JSON: ") + e.what());
  }
  if (!j.is_object()) bad_config("benchmark suite must be a JSON object");
  BenchSuite suite;
  for (const auto& [key, value] : j.items()) {
    try {
      if (key == "queries") {
        suite.queries = value.get<std::vector<std::string>>();
      } else if (key == "methods") {
        suite.methods = value.get<std::vector<std::string>>();
      } else if (key == "mechanisms") {
        suite.mechanisms = value.get<std::vector<std::string>>();
      } else if (key == "epsilons") {
        suite.epsilons = value.get<std::vector<double>>();
      } else if (key == "sample_rates") {
        suite.sampleRates = value.get<std::vector<double>>();
      } else if (key == "repetitions") {
        suite.repetitions = value.get<std::uint64_t>();
      } else {
        bad_config("unknown benchmark suite key '" + key + "'");
      }
    } catch (const nlohmann::json::exception& e) {
      bad_config("benchmark suite key '" + key + "' has the wrong type: " + e.what());
    }
  }
  suite.validate();
  return suite;
}

BenchSuite BenchSuite::from_json_file(const std::string& path) {
  return from_json_text(read_text_file(path));
}

BenchResult run_bench(const BenchSuite& suite, const HarnessConfig& cfg) {
  suite.validate();
  cfg.validate();
  BenchResult result;
  for (const std::string& queryPath : suite.queries) {
    QueryBundle bundle = load_query_bundle(queryPath, cfg.dataDir);
    const BoundQuery& query = bundle.bound();
    prepare_offline(query);
    const double answer = true_answer(query);

    const bool needSketches = std::any_of(suite.methods.begin(), suite.methods.end(),
                                          [](const std::string& m) { return parse_method(m) == Method::SketchSE; });
    std::vector<AgmsSketch> sketches;
    if (needSketches) sketches = build_all_sketches(query, cfg.sketch, cfg.seed, true);

    for (const std::string& methodName : suite.methods) {
      const Method method = parse_method(methodName);
      const bool sweeps = (method == Method::SamplingSE);
      std::vector<double> rates;
      if (sweeps)
        rates = suite.sampleRates.empty() ? std::vector<double>{cfg.sampling.sampleRate}
                                          : suite.sampleRates;
      else
        rates = {0.0};
      for (const std::string& mechanismName : suite.mechanisms) {
        const Mechanism mechanism = parse_mechanism(mechanismName);
        for (double epsilon : suite.epsilons) {
          for (double rate : rates) {
            std::vector<double> sens, dev, wall;
            bool allConverged = true;
            std::string rowMethod = methodName;
            for (std::uint64_t rep = 0; rep < suite.repetitions; ++rep) {
              RunRequest req;
              req.method = method;
              req.mechanism = mechanism;
              req.epsilon = epsilon;
              req.delta = cfg.delta;
              req.gamma = cfg.gamma;
              req.seed = cfg.seed + rep;
              req.useKeys = cfg.useKeys;
              req.sampling = cfg.sampling;
              if (sweeps) req.sampling.sampleRate = rate;
              req.sketches = needSketches ? &sketches : nullptr;
              req.trueAnswerCache = answer;
              RunRecord rec = run_query(query, req);
              rowMethod = rec.method;
              sens.push_back(rec.sensitivity);
              dev.push_back(rec.deviation);
              wall.push_back(rec.wallTimeMs);
              allConverged = allConverged && rec.converged;
              result.records.push_back(std::move(rec));
            }
            BenchRow row;
            row.queryId = query.spec().id;
            row.method = rowMethod;
            row.mechanism = mechanism_name(mechanism);
            row.epsilon = epsilon;
            row.sampleRate = sweeps ? rate : 0.0;
            row.repetitions = suite.repetitions;
            row.trueAnswer = answer;
            row.medianSensitivity = median_of(sens);
            row.medianDeviation = median_of(dev);
            row.allConverged = allConverged;
            row.medianWallMs = median_of(wall);
            row.p90WallMs = p90_of(wall);
            result.rows.push_back(std::move(row));
          }
        }
      }
    }
  }
  return result;
}

std::string bench_csv(const std::vector<BenchRow>& rows) {
  std::string out =
      "queryId,method,mechanism,epsilon,sampleRate,repetitions,trueAnswer,"
      "medianSensitivity,medianDeviation,allConverged,medianWallMs,p90WallMs\n";
  for (const BenchRow& r : rows) {
    out += csv_safe(r.queryId) + ',' + csv_safe(r.method) + ',' +
           csv_safe(r.mechanism) + ',' + format_double(r.epsilon) + ',' +
           format_double(r.sampleRate) + ',' + std::to_string(r.repetitions) + ',' +
           format_double(r.trueAnswer) + ',' + format_double(r.medianSensitivity) + ',' +
           format_double(r.medianDeviation) + ',' + (r.allConverged ? "true" : "false") + ',' +
           format_double(r.medianWallMs) + ',' + format_double(r.p90WallMs) + '\n';
  }
  return out;
}

std::vector<BenchRow> parse_bench_csv(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  if (!std::getline(in, line)) throw DataError("benchmark CSV is empty");
  if (line.rfind("queryId,method,mechanism,", 0) != 0)
    throw DataError("benchmark CSV header is not recognized");
  std::vector<BenchRow> rows;
  std::size_t lineNo = 1;
  while (std::getline(in, line)) {
    ++lineNo;
    if (line.empty()) continue;
    std::vector<std::string> f;
    std::size_t pos = 0;
    while (true) {
      const std::size_t comma = line.find(',', pos);
      if (comma == std::string::npos) {
        f.push_back(line.substr(pos));
        break;
      }
      f.push_back(line.substr(pos, comma - pos));
      pos = comma + 1;
    }
    if (f.size() != 12)
      throw DataError("benchmark CSV line " + std::to_string(lineNo) + " has " +
                      std::to_string(f.size()) + " fields, expected 12");
    auto num = [&](std::size_t i) {
      if (f[i] == "inf") return kInf;
      if (f[i] == "-inf") return -kInf;
      if (f[i] == "nan") return std::numeric_limits<double>::quiet_NaN();
      try {
        return parse_f64(f[i], "benchmark CSV field");
      } catch (const ConfigError& e) {
        throw DataError(e.what());
      }
    };
    BenchRow r;
    r.queryId = f[0];
    r.method = f[1];
    r.mechanism = f[2];
    r.epsilon = num(3);
    r.sampleRate = num(4);
    try {
      r.repetitions = parse_u64(f[5], "benchmark CSV repetitions");
    } catch (const ConfigError& e) {
      throw DataError(e.what());
    }
    r.trueAnswer = num(6);
    r.medianSensitivity = num(7);
    r.medianDeviation = num(8);
    if (f[9] == "true")
      r.allConverged = true;
    else if (f[9] == "false")
      r.allConverged = false;
    else
      throw DataError("benchmark CSV line " + std::to_string(lineNo) + " has a bad boolean field");
    r.medianWallMs = num(10);
    r.p90WallMs = num(11);
    rows.push_back(std::move(r));
  }
  return rows;
}

// ---------------------------------------------------------------------------
// Sketch persistence
// ---------------------------------------------------------------------------

namespace {
std::string sketch_file_name(const BoundQuery& query, const std::string& relation) {
  return query.spec().fingerprint() + "_" + relation + ".sketch.json";
}
}  // namespace

std::vector<std::string> write_sketch_files(const BoundQuery& query, const SketchParams& params,
                                            std::uint64_t masterSeed, const std::string& dir) {
  params.validate();
  std::filesystem::create_directories(dir);
  std::vector<std::string> paths;
  for (const std::string& name : query.spec().relations) {
    AgmsSketch sketch = build_sketch(query, name, params, masterSeed, true);
    const auto path = std::filesystem::path(dir) / sketch_file_name(query, name);
    write_text_file(path.string(), sketch.to_json_text());
    paths.push_back(path.string());
  }
  return paths;
}

std::vector<AgmsSketch> load_sketch_files(const BoundQuery& query, const std::string& dir) {
  std::vector<AgmsSketch> sketches;
  for (const std::string& name : query.spec().relations) {
    const auto path = std::filesystem::path(dir) / sketch_file_name(query, name);
    if (!std::filesystem::exists(path))
      throw DataError("missing sketch file '" + path.string() + "'; build the sketches first");
    AgmsSketch sketch = AgmsSketch::from_json_text(read_text_file(path.string()));
    if (sketch.relationName != name)
      throw DataError("sketch file '" + path.string() + "' describes relation '" +
                      sketch.relationName + "', expected '" + name + "'");
    check_sketch_matches(sketch, query);
    sketches.push_back(std::move(sketch));
  }
  return sketches;
}

// ---------------------------------------------------------------------------
// Text helpers
// ---------------------------------------------------------------------------

std::string dataset_stats_json(const BoundQuery& query) {
  ordered_json out;
  out["query"] = query.spec().id;
  out["fingerprint"] = query.spec().fingerprint();
  ordered_json rels = ordered_json::array();
  for (std::size_t i = 0; i < query.n(); ++i) {
    const Relation& rel = query.relation(i);
    ordered_json r;
    r["name"] = rel.name();
    r["rows"] = rel.row_count();
    r["attributes"] = rel.attributes();
    r["private"] = query.is_private(i);
    ordered_json joins = ordered_json::array();
    for (std::size_t attr : query.join_attrs(i)) {
      const std::string& attrName = rel.attributes()[attr];
      const FrequencyStats st = rel.stats({attrName});
      ordered_json a;
      a["attribute"] = attrName;
      a["distinct"] = st.distinctCount;
      a["maxFrequency"] = st.maxFrequency;
      joins.push_back(std::move(a));
    }
    r["joinAttributes"] = std::move(joins);
    rels.push_back(std::move(r));
  }
  out["relations"] = std::move(rels);
  return out.dump(2);
}

std::string ingest_summary_json(const BoundQuery& query) {
  const QuerySummary summary = validate(query);
  ordered_json out;
  out["query"] = query.spec().id;
  out["fingerprint"] = query.spec().fingerprint();
  out["kind"] = graph_kind_name(summary.kind);
  out["connected"] = summary.connected;
  out["relations"] = summary.relationCount;
  out["predicates"] = summary.predicateCount;
  ordered_json rels = ordered_json::array();
  for (std::size_t i = 0; i < query.n(); ++i) {
    ordered_json r;
    r["name"] = query.relation(i).name();
    r["rows"] = query.relation(i).row_count();
    r["private"] = query.is_private(i);
    rels.push_back(std::move(r));
  }
  out["loaded"] = std::move(rels);
  return out.dump(2);
}

void write_text_file(const std::string& path, const std::string& content) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot open '" + path + "' for writing");
  out.write(content.data(), static_cast<std::streamsize>(content.size()));
  if (!out) throw DataError("failed while writing '" + path + "'");
}

std::string read_text_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open '" + path + "'");
  std::ostringstream buf;
  buf << in.rdbuf();
  if (in.bad()) throw DataError("failed while reading '" + path + "'");
  return buf.str();
}

std::string format_double(double v) {
  if (std::isnan(v)) return "nan";
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

}  // namespace joinsense
