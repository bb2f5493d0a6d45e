#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include <doctest.h>

#include "joinsense/errors.hpp"
#include "joinsense/exact.hpp"
#include "joinsense/harness.hpp"
#include "joinsense/query.hpp"
#include "joinsense/sampling.hpp"
#include "joinsense/sketch.hpp"
#include "joinsense/smooth.hpp"
#include "test_util.hpp"

using namespace joinsense;
namespace fs = std::filesystem;

namespace {

fs::path fresh_dir(const std::string& tag) {
  const fs::path dir = fs::temp_directory_path() / ("joinsense_harness_" + tag);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

// Writes the chain2 fixture (join count 4) as CSV files plus a query spec,
// returning the spec path.
fs::path write_chain2_fixture(const fs::path& dir) {
  write_text_file((dir / "R1.csv").string(), "A,B\na,x\nb,x\nb,y\n");
  write_text_file((dir / "R2.csv").string(), "B,C\nx,c\ny,d\ny,e\n");
  const fs::path queryPath = dir / "q.json";
  write_text_file(queryPath.string(),
                  R"({"id": "q-chain2", "relations": ["R1", "R2"],
                      "predicates": [{"left": "R1.B", "right": "R2.B"}],
                      "private": ["R1", "R2"]})");
  return queryPath;
}

// Environment lookup backed by a map, so tests never mutate the process env.
std::function<const char*(const char*)> env_from(const std::map<std::string, std::string>& vars) {
  return [&vars](const char* name) -> const char* {
    const auto it = vars.find(name);
    return it == vars.end() ? nullptr : it->second.c_str();
  };
}

Dataset zipf_chain(std::uint64_t rows, std::uint64_t relations, std::uint64_t seed) {
  GenSpec spec;
  spec.rows = rows;
  spec.relations = relations;
  spec.skew = 1.1;
  spec.seed = seed;
  Dataset ds;
  generate_dataset(spec, ds);
  return ds;
}

double tau0_for(const BoundQuery& q, double fraction) {
  double largest = 1.0;
  for (Mask e : residual_set(q))
    largest = std::max(largest, static_cast<double>(exact_join_count(q, e)));
  return fraction * largest;
}

}  // namespace

TEST_CASE("method and mechanism names parse with aliases") {
  CHECK(parse_method("es") == Method::ES);
  CHECK(parse_method("elastic") == Method::ES);
  CHECK(parse_method("rs") == Method::RS);
  CHECK(parse_method("sampling-se") == Method::SamplingSE);
  CHECK(parse_method("sketch") == Method::SketchSE);
  CHECK(parse_method("local-oracle") == Method::LocalOracle);
  CHECK_THROWS_AS(parse_method("magic"), ConfigError);
  CHECK(parse_mechanism("laplace") == Mechanism::LaplaceSmooth);
  CHECK(parse_mechanism("laplace-global") == Mechanism::LaplaceGlobal);
  CHECK(parse_mechanism("cauchy") == Mechanism::GeneralCauchy);
  CHECK_THROWS_AS(parse_mechanism("gauss"), ConfigError);
}

TEST_CASE("harness config round-trips and rejects unknown keys") {
  HarnessConfig cfg;
  cfg.seed = 17;
  cfg.epsilon = 0.5;
  cfg.dataDir = "somewhere";
  cfg.method = "sampling-se";
  cfg.sampling.tau0 = 12.0;
  cfg.sketch.s1 = 64;
  const HarnessConfig back = HarnessConfig::from_json_text(cfg.to_json_text());
  CHECK(back.seed == 17);
  CHECK(back.epsilon == 0.5);
  CHECK(back.dataDir == "somewhere");
  CHECK(back.method == "sampling-se");
  CHECK(back.sampling.tau0 == 12.0);
  CHECK(back.sketch.s1 == 64);
  CHECK(back.to_json_text() == cfg.to_json_text());

  CHECK_THROWS_AS(HarnessConfig::from_json_text(R"({"surprise": 1})"), ConfigError);
  CHECK_THROWS_AS(HarnessConfig::from_json_text("not json"), ConfigError);

  HarnessConfig bad;
  bad.epsilon = 0.0;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
  bad = HarnessConfig{};
  bad.method = "nope";
  CHECK_THROWS_AS(bad.validate(), ConfigError);
}

TEST_CASE("environment overrides layer on top of file values") {
  HarnessConfig cfg = HarnessConfig::from_json_text(R"({"epsilon": 2.0, "seed": 1})");
  const std::map<std::string, std::string> vars{
      {"JOINSENSE_EPSILON", "3.5"},        {"JOINSENSE_SEED", "99"},
      {"JOINSENSE_METHOD", "sketch-se"},   {"JOINSENSE_USE_KEYS", "true"},
      {"JOINSENSE_SAMPLING_TAU0", "42.0"}, {"JOINSENSE_SKETCH_S1", "128"},
  };
  cfg.apply_env(env_from(vars));
  CHECK(cfg.epsilon == 3.5);  // env beats the file value
  CHECK(cfg.seed == 99);
  CHECK(cfg.method == "sketch-se");
  CHECK(cfg.useKeys);
  CHECK(cfg.sampling.tau0 == 42.0);
  CHECK(cfg.sketch.s1 == 128);

  HarnessConfig fresh;
  const std::map<std::string, std::string> bad{{"JOINSENSE_EPSILON", "abc"}};
  CHECK_THROWS_AS(fresh.apply_env(env_from(bad)), ConfigError);
  const std::map<std::string, std::string> badSeed{{"JOINSENSE_SEED", "-4"}};
  CHECK_THROWS_AS(fresh.apply_env(env_from(badSeed)), ConfigError);
}

TEST_CASE("run records serialize with a stable key order") {
  RunRecord rec;
  rec.queryId = "q";
  rec.method = "rs";
  rec.mechanism = "laplace-smooth";
  rec.epsilon = 1.0;
  rec.delta = 1e-6;
  rec.seed = 7;
  rec.trueAnswer = 4.0;
  rec.sensitivity = 2.0;
  rec.kStar = 1;
  rec.scale = 4.0;
  rec.noisyValue = 4.25;
  rec.deviation = 0.25;
  rec.wallTimeMs = 1.5;
  rec.note = "hello";
  const std::string line = rec.to_json_line();

  const std::vector<std::string> keys{
      "\"queryId\"", "\"method\"",     "\"mechanism\"", "\"epsilon\"", "\"delta\"",
      "\"seed\"",    "\"trueAnswer\"", "\"sensitivity\"", "\"kStar\"", "\"scale\"",
      "\"noisyValue\"", "\"deviation\"", "\"wallTimeMs\"", "\"converged\"", "\"note\""};
  std::size_t pos = 0;
  for (const std::string& key : keys) {
    const std::size_t at = line.find(key, pos);
    REQUIRE(at != std::string::npos);
    pos = at;
  }

  const RunRecord back = RunRecord::from_json_line(line);
  CHECK(back.queryId == rec.queryId);
  CHECK(back.sensitivity == rec.sensitivity);
  CHECK(back.noisyValue == rec.noisyValue);
  CHECK(back.note == rec.note);
  CHECK(back.to_json_line() == line);
}

TEST_CASE("run records carry non-finite values through text") {
  RunRecord rec;
  rec.queryId = "q";
  rec.sensitivity = std::numeric_limits<double>::infinity();
  rec.scale = std::numeric_limits<double>::infinity();
  rec.noisyValue = std::numeric_limits<double>::quiet_NaN();
  rec.deviation = std::numeric_limits<double>::infinity();
  rec.converged = false;
  const std::string line = rec.to_json_line();
  CHECK(line.find("\"inf\"") != std::string::npos);
  CHECK(line.find("\"nan\"") != std::string::npos);
  const RunRecord back = RunRecord::from_json_line(line);
  CHECK(std::isinf(back.sensitivity));
  CHECK(std::isnan(back.noisyValue));
  CHECK(std::isinf(back.deviation));
  CHECK_FALSE(back.converged);
  CHECK_THROWS_AS(RunRecord::from_json_line("nope"), DataError);
}

TEST_CASE("global sensitivity depends on the private footprint") {
  Dataset single;
  jt::add_rel(single, "R1", {"A", "B"}, {{"a", "x"}, {"b", "y"}});
  BoundQuery lone(single, jt::make_spec({"R1"}, {}, {"R1"}));
  CHECK(global_sensitivity(lone) == 1.0);

  Dataset ds;
  jt::fill_chain2(ds);
  BoundQuery nothingPrivate(ds, jt::make_spec({"R1", "R2"}, {{"R1.B", "R2.B"}}, {}));
  CHECK(global_sensitivity(nothingPrivate) == 0.0);
  BoundQuery joined(ds, jt::chain2_spec());
  CHECK(std::isinf(global_sensitivity(joined)));
}

TEST_CASE("elastic runs reproduce the direct computation") {
  Dataset ds = zipf_chain(300, 3, 11);
  BoundQuery q(ds, jt::chain3_spec());
  prepare_offline(q);

  RunRequest req;
  req.method = Method::ES;
  req.epsilon = 0.8;
  req.delta = 1e-5;
  req.seed = 21;
  const RunRecord rec = run_query(q, req);

  const SensitivityReport direct = elastic_sensitivity(q, SmoothingParams::laplace(0.8, 1e-5));
  CHECK(rec.method == "es");
  CHECK(rec.mechanism == "laplace-smooth");
  CHECK(rec.epsilon == 0.8);
  CHECK(rec.seed == 21);
  CHECK(rec.sensitivity == direct.value);
  CHECK(rec.kStar == direct.kStar);
  CHECK(rec.trueAnswer == static_cast<double>(exact_join_count(q, q.full_mask())));
  CHECK(rec.scale == doctest::Approx(2.0 * direct.value / 0.8).epsilon(1e-12));
  CHECK(rec.deviation == doctest::Approx(std::abs(rec.noisyValue - rec.trueAnswer)).epsilon(1e-12));
  CHECK(rec.converged);
  CHECK(rec.wallTimeMs >= 0.0);

  // Same request, same record (modulo the clock).
  const RunRecord again = run_query(q, req);
  CHECK(again.noisyValue == rec.noisyValue);
  CHECK(again.sensitivity == rec.sensitivity);
  CHECK(again.deviation == rec.deviation);
}

TEST_CASE("residual runs match the exact-table computation") {
  Dataset ds = zipf_chain(300, 3, 12);
  BoundQuery q(ds, jt::chain3_spec());
  prepare_offline(q);
  RunRequest req;
  req.method = Method::RS;
  req.epsilon = 1.0;
  req.seed = 3;
  const RunRecord rec = run_query(q, req);
  const MaxBoundaryTable table = build_exact_table(q, false);
  const SensitivityReport direct = residual_sensitivity(q, table, SmoothingParams::laplace(1.0, 1e-6));
  CHECK(rec.method == "rs");
  CHECK(rec.sensitivity == direct.value);
  CHECK(rec.kStar == direct.kStar);
  CHECK(rec.converged);
}

TEST_CASE("one seed draws one noise sample across methods") {
  // The released value must not leak the method through its randomness:
  // with the mechanism, epsilon, and seed fixed, the underlying draw is
  // shared, so deviations scale exactly like the sensitivities.
  Dataset ds = zipf_chain(300, 3, 13);
  BoundQuery q(ds, jt::chain3_spec());
  prepare_offline(q);
  RunRequest req;
  req.method = Method::ES;
  req.epsilon = 1.0;
  req.seed = 77;
  const RunRecord es = run_query(q, req);
  req.method = Method::RS;
  const RunRecord rs = run_query(q, req);
  REQUIRE(rs.sensitivity > 0.0);
  CHECK(es.deviation * rs.sensitivity ==
        doctest::Approx(rs.deviation * es.sensitivity).epsilon(1e-9));
  // Signs agree too: both sit on the same side of the true answer.
  CHECK((es.noisyValue - es.trueAnswer) * (rs.noisyValue - rs.trueAnswer) >= 0.0);
}

TEST_CASE("sampling runs converge when the target is reachable") {
  Dataset ds = zipf_chain(250, 3, 14);
  BoundQuery q(ds, jt::chain3_spec());
  prepare_offline(q);
  RunRequest req;
  req.method = Method::SamplingSE;
  req.epsilon = 1.0;
  req.seed = 5;
  req.sampling.tau0 = tau0_for(q, 0.05);
  req.sampling.seed = 5;
  const RunRecord rec = run_query(q, req);
  CHECK(rec.method == "sampling-se");
  CHECK(rec.converged);
  CHECK(rec.sensitivity > 0.0);
  CHECK(std::isfinite(rec.sensitivity));
  CHECK(std::isfinite(rec.noisyValue));
}

TEST_CASE("sketch runs need prebuilt sketches") {
  Dataset ds = zipf_chain(250, 3, 15);
  BoundQuery q(ds, jt::chain3_spec());
  prepare_offline(q);
  RunRequest req;
  req.method = Method::SketchSE;
  req.epsilon = 1.0;
  req.seed = 6;
  CHECK_THROWS_AS(run_query(q, req), UsageError);

  SketchParams params;
  params.s1 = 256;
  const auto sketches = build_all_sketches(q, params, 6);
  req.sketches = &sketches;
  const RunRecord rec = run_query(q, req);
  CHECK(rec.method == "sketch-se");
  CHECK(rec.converged);
  CHECK(rec.sensitivity > 0.0);
}

TEST_CASE("the global mechanism ignores the method and refuses joins") {
  Dataset single;
  jt::add_rel(single, "R1", {"A", "B"}, {{"a", "x"}, {"b", "y"}, {"c", "y"}});
  BoundQuery lone(single, jt::make_spec({"R1"}, {}, {"R1"}));
  prepare_offline(lone);
  RunRequest req;
  req.method = Method::ES;
  req.mechanism = Mechanism::LaplaceGlobal;
  req.epsilon = 2.0;
  req.seed = 1;
  const RunRecord rec = run_query(lone, req);
  CHECK(rec.method == "global");
  CHECK(rec.sensitivity == 1.0);
  CHECK(rec.scale == doctest::Approx(0.5));
  CHECK(rec.converged);

  // A private multi-way join has unbounded global sensitivity: no release.
  Dataset ds = zipf_chain(100, 2, 16);
  BoundQuery joined(
      ds, jt::make_spec({"R1", "R2"}, {{"R1.to", "R2.from"}}, {"R1", "R2"}));
  prepare_offline(joined);
  CHECK_THROWS_AS(run_query(joined, req), UsageError);
}

TEST_CASE("runs that miss their target emit a flagged record instead of noise") {
  Dataset ds = zipf_chain(250, 3, 17);
  BoundQuery q(ds, jt::chain3_spec());
  prepare_offline(q);
  RunRequest req;
  req.method = Method::SamplingSE;
  req.epsilon = 1.0;
  req.seed = 8;
  req.sampling.tau0 = 0.001;  // unreachable with this budget
  req.sampling.walkCap = 50;
  const RunRecord rec = run_query(q, req);
  CHECK_FALSE(rec.converged);
  CHECK(std::isinf(rec.sensitivity));
  CHECK(std::isinf(rec.scale));
  CHECK(std::isnan(rec.noisyValue));
  CHECK(std::isinf(rec.deviation));
  CHECK_FALSE(rec.note.empty());
}

TEST_CASE("query bundles load from disk and validate their inputs") {
  const fs::path dir = fresh_dir("bundle");
  const fs::path queryPath = write_chain2_fixture(dir);

  QueryBundle bundle = load_query_bundle(queryPath.string(), dir.string());
  CHECK(bundle.id() == "q-chain2");
  CHECK(bundle.bound().n() == 2);
  CHECK(true_answer(bundle.bound()) == 4.0);

  fs::remove(dir / "R2.csv");
  CHECK_THROWS_AS(load_query_bundle(queryPath.string(), dir.string()), DataError);
  fs::remove_all(dir);
}

TEST_CASE("stats summaries describe the bound query") {
  Dataset ds;
  jt::fill_chain2(ds);
  BoundQuery q(ds, jt::chain2_spec());
  const std::string stats = dataset_stats_json(q);
  CHECK(stats.find("\"R1\"") != std::string::npos);
  CHECK(stats.find("\"R2\"") != std::string::npos);
  const std::string summary = ingest_summary_json(q);
  CHECK(summary.find("3") != std::string::npos);  // row counts
}

TEST_CASE("benchmark grids expand methods by epsilon and aggregate medians") {
  const fs::path dir = fresh_dir("bench");
  const fs::path queryPath = write_chain2_fixture(dir);

  BenchSuite suite;
  suite.queries = {queryPath.string()};
  suite.methods = {"es", "rs"};
  suite.mechanisms = {"laplace-smooth"};
  suite.epsilons = {0.5, 1.0};
  suite.repetitions = 3;

  HarnessConfig cfg;
  cfg.seed = 42;
  cfg.dataDir = dir.string();

  const BenchResult result = run_bench(suite, cfg);
  REQUIRE(result.rows.size() == 4);  // 2 methods x 2 epsilons
  CHECK(result.records.size() == 12);
  for (const BenchRow& row : result.rows) {
    CHECK(row.queryId == "q-chain2");
    CHECK(row.trueAnswer == 4.0);
    CHECK(row.repetitions == 3);
    CHECK(row.allConverged);
    CHECK(row.medianSensitivity > 0.0);
    CHECK(row.sampleRate == 0.0);  // no sampling method in the grid
  }
  // Deterministic methods repeat the same sensitivity; medians preserve it.
  Dataset ds;
  jt::fill_chain2(ds);
  BoundQuery q(ds, jt::chain2_spec());
  const double esValue = elastic_sensitivity(q, SmoothingParams::laplace(0.5, cfg.delta)).value;
  bool sawEs = false;
  for (const BenchRow& row : result.rows)
    if (row.method == "es" && row.epsilon == 0.5) {
      CHECK(row.medianSensitivity == esValue);
      sawEs = true;
    }
  CHECK(sawEs);

  // Seeds advance per repetition: the three records of one cell differ.
  std::vector<std::uint64_t> seeds;
  for (const RunRecord& rec : result.records)
    if (rec.method == "es" && rec.epsilon == 0.5) seeds.push_back(rec.seed);
  REQUIRE(seeds.size() == 3);
  std::sort(seeds.begin(), seeds.end());
  CHECK(seeds == std::vector<std::uint64_t>{42, 43, 44});

  // CSV round-trip and reproducibility up to the trailing wall-time columns.
  const std::string csv = bench_csv(result.rows);
  CHECK(csv.rfind("queryId,method,mechanism,epsilon,sampleRate,repetitions,trueAnswer,"
                  "medianSensitivity,medianDeviation,allConverged,medianWallMs,p90WallMs",
                  0) == 0);
  const std::vector<BenchRow> parsed = parse_bench_csv(csv);
  REQUIRE(parsed.size() == result.rows.size());
  for (std::size_t i = 0; i < parsed.size(); ++i) {
    CHECK(parsed[i].method == result.rows[i].method);
    CHECK(parsed[i].epsilon == result.rows[i].epsilon);
    CHECK(parsed[i].medianSensitivity == result.rows[i].medianSensitivity);
    CHECK(parsed[i].medianDeviation == result.rows[i].medianDeviation);
    CHECK(parsed[i].allConverged == result.rows[i].allConverged);
  }

  const BenchResult rerun = run_bench(suite, cfg);
  const auto strip_wall = [](const std::string& text) {
    std::istringstream in(text);
    std::string line, out;
    while (std::getline(in, line)) {
      std::size_t cut = line.rfind(',');
      cut = line.rfind(',', cut - 1);
      out += line.substr(0, cut);
      out += '\n';
    }
    return out;
  };
  CHECK(strip_wall(bench_csv(rerun.rows)) == strip_wall(csv));
  fs::remove_all(dir);
}

TEST_CASE("benchmark suites parse strictly") {
  const BenchSuite suite = BenchSuite::from_json_text(
      R"({"queries": ["a.json"], "methods": ["rs"], "mechanisms": ["laplace"],
          "epsilons": [0.5], "sample_rates": [0.1], "repetitions": 2})");
  CHECK(suite.queries == std::vector<std::string>{"a.json"});
  CHECK(suite.sampleRates == std::vector<double>{0.1});
  CHECK(suite.repetitions == 2);
  CHECK_THROWS_AS(BenchSuite::from_json_text(R"({"surprise": []})"), ConfigError);
  BenchSuite empty;
  empty.queries = {};
  CHECK_THROWS_AS(empty.validate(), ConfigError);
}

TEST_CASE("sketch files round-trip through a directory") {
  Dataset ds;
  jt::fill_chain2(ds);
  BoundQuery q(ds, jt::chain2_spec());
  SketchParams params;
  params.s1 = 16;
  params.s2 = 3;

  const fs::path dir = fresh_dir("sketchfiles");
  const std::vector<std::string> paths = write_sketch_files(q, params, 33, dir.string());
  REQUIRE(paths.size() == 2);
  for (const std::string& p : paths) CHECK(fs::exists(p));

  const std::vector<AgmsSketch> loaded = load_sketch_files(q, dir.string());
  const std::vector<AgmsSketch> built = build_all_sketches(q, params, 33);
  REQUIRE(loaded.size() == built.size());
  for (std::size_t i = 0; i < loaded.size(); ++i) {
    CHECK(loaded[i].relationName == built[i].relationName);
    CHECK(loaded[i].counters == built[i].counters);
  }

  const fs::path emptyDir = fresh_dir("sketchfiles_empty");
  CHECK_THROWS_AS(load_sketch_files(q, emptyDir.string()), DataError);
  fs::remove_all(dir);
  fs::remove_all(emptyDir);
}

TEST_CASE("number formatting keeps round-trip fidelity") {
  CHECK(format_double(0.5) == "0.5");
  CHECK(format_double(4.0) == "4");
  CHECK(std::stod(format_double(1.0 / 3.0)) == 1.0 / 3.0);
  CHECK(format_double(std::numeric_limits<double>::infinity()) == "inf");
}
