#pragma once
// Run orchestration: layered configuration (defaults < file < environment <
// flags), dataset/query loading, timed online sensitivity+release runs that
// produce one record per run, benchmark grids with median aggregation, and
// text helpers shared by the command-line tool.

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "joinsense/gen.hpp"
#include "joinsense/mechanisms.hpp"
#include "joinsense/query.hpp"
#include "joinsense/relation.hpp"
#include "joinsense/sampling.hpp"
#include "joinsense/sketch.hpp"
#include "joinsense/smooth.hpp"

namespace joinsense {

// Name <-> enum helpers used by configuration and the CLI.
Method parse_method(const std::string& name);
Mechanism parse_mechanism(const std::string& name);

struct HarnessConfig {
  std::uint64_t seed = 0;
  std::string dataDir = ".";
  std::string sketchDir = "sketches";
  std::string outDir = ".";
  double epsilon = 1.0;
  double delta = 1e-6;
  double gamma = 4.0;
  std::string mechanism = "laplace-smooth";
  std::string method = "rs";
  bool useKeys = false;
  SamplingConfig sampling;
  SketchParams sketch;

  void validate() const;  // throws ConfigError on out-of-range values

  // Strict parse: unknown keys are configuration errors.
  static HarnessConfig from_json_text(const std::string& text);
  static HarnessConfig from_json_file(const std::string& path);
  std::string to_json_text() const;

  // Applies JOINSENSE_* environment overrides (JOINSENSE_SEED,
  // JOINSENSE_EPSILON, JOINSENSE_SAMPLING_TAU0, JOINSENSE_SKETCH_S1, ...).
  // The lookup is injectable so tests need not mutate the real environment.
  void apply_env(const std::function<const char*(const char*)>& lookup);
  void apply_env();  // uses std::getenv
};

// One line of output per run; serialized as a single JSON object.
struct RunRecord {
  std::string queryId;
  std::string method;
  std::string mechanism;
  double epsilon = 0.0;
  double delta = 0.0;
  std::uint64_t seed = 0;
  double trueAnswer = 0.0;
  double sensitivity = 0.0;
  std::uint64_t kStar = 0;
  double scale = 0.0;
  double noisyValue = 0.0;
  double deviation = 0.0;
  double wallTimeMs = 0.0;
  bool converged = true;
  std::string note;

  std::string to_json_line() const;
  static RunRecord from_json_line(const std::string& line);
};

// A dataset plus one query bound over it. The bound query holds pointers
// into the dataset, which stores relations behind stable addresses, so the
// bundle may be moved as a unit.
struct QueryBundle {
  Dataset dataset;
  std::optional<BoundQuery> query;

  const BoundQuery& bound() const;
  const std::string& id() const;
};

// Loads the query spec from `queryPath` and one CSV per query relation from
// `dataDir` (named <relation>.csv), then binds and validates the query.
QueryBundle load_query_bundle(const std::string& queryPath, const std::string& dataDir);

// Builds every index the plans and enumerations need so the timed phase
// never pays for index construction.
void prepare_offline(const BoundQuery& query);

// Exact answer of the counting query (offline oracle for deviations).
double true_answer(const BoundQuery& query);

// Parameters for a single timed run. `sketches` is only consulted for the
// sketch-based method and must outlive the call.
struct RunRequest {
  Method method = Method::RS;
  Mechanism mechanism = Mechanism::LaplaceSmooth;
  double epsilon = 1.0;
  double delta = 1e-6;
  double gamma = 4.0;
  std::uint64_t seed = 0;
  bool useKeys = false;
  SamplingConfig sampling;
  const std::vector<AgmsSketch>* sketches = nullptr;
  std::optional<double> trueAnswerCache;  // skip the exact oracle when set
};

// Runs one sensitivity computation plus release and reports the record.
// Offline work (indexes, precomputed statistics, sketch envelope tables,
// the exact answer) happens before the clock starts; wallTimeMs covers the
// online sensitivity evaluation and the noise release only. Under the
// global-sensitivity mechanism the method is ignored and the record's
// method field is "global".
RunRecord run_query(const BoundQuery& query, const RunRequest& req);

// Global sensitivity of the counting query: 1 for a count over a single
// private relation, 0 when nothing is private, unbounded (+infinity)
// otherwise. The release path refuses unbounded values.
double global_sensitivity(const BoundQuery& query);

// ---- Benchmark grids ----

struct BenchSuite {
  std::vector<std::string> queries;  // query spec paths
  std::vector<std::string> methods = {"rs"};
  std::vector<std::string> mechanisms = {"laplace-smooth"};
  std::vector<double> epsilons = {1.0};
  std::vector<double> sampleRates;  // sampling-se sweep; empty = config rate
  std::uint64_t repetitions = 1;

  void validate() const;
  static BenchSuite from_json_text(const std::string& text);
  static BenchSuite from_json_file(const std::string& path);
};

struct BenchRow {
  std::string queryId;
  std::string method;
  std::string mechanism;
  double epsilon = 0.0;
  double sampleRate = 0.0;
  std::uint64_t repetitions = 0;
  double trueAnswer = 0.0;
  double medianSensitivity = 0.0;
  double medianDeviation = 0.0;
  bool allConverged = true;
  double medianWallMs = 0.0;
  double p90WallMs = 0.0;
};

struct BenchResult {
  std::vector<BenchRow> rows;
  std::vector<RunRecord> records;
};

// Runs the whole grid serially (one run at a time, seeds cfg.seed + rep).
// Serial execution keeps the per-run wall times honest.
BenchResult run_bench(const BenchSuite& suite, const HarnessConfig& cfg);

// CSV with a fixed header; wall-time columns come last so two runs of the
// same grid differ only in the trailing columns.
std::string bench_csv(const std::vector<BenchRow>& rows);
std::vector<BenchRow> parse_bench_csv(const std::string& text);

// ---- Sketch persistence ----

// Builds one sketch per query relation (master seed = cfg.seed) and writes
// them under dir as <fingerprint>_<relation>.sketch.json. Returns the paths.
std::vector<std::string> write_sketch_files(const BoundQuery& query, const SketchParams& params,
                                            std::uint64_t masterSeed, const std::string& dir);

// Loads the sketches for this query from dir, refusing files whose stored
// query fingerprint or parameters disagree with the query at hand.
std::vector<AgmsSketch> load_sketch_files(const BoundQuery& query, const std::string& dir);

// ---- Small text helpers shared with the CLI ----

std::string dataset_stats_json(const BoundQuery& query);
std::string ingest_summary_json(const BoundQuery& query);
void write_text_file(const std::string& path, const std::string& content);
std::string read_text_file(const std::string& path);
std::string format_double(double v);  // deterministic shortest round-trip form

// ---- Plots (implemented in the plotting translation unit) ----

struct PlotSeries {
  std::string label;
  std::vector<std::pair<double, double>> points;
};

std::string svg_line_chart(const std::string& title, const std::string& xLabel,
                           const std::string& yLabel, const std::vector<PlotSeries>& series,
                           bool logY);
std::string svg_bar_chart(const std::string& title, const std::string& yLabel,
                          const std::vector<std::string>& labels,
                          const std::vector<double>& values);

// Renders charts from a benchmark CSV: deviation vs epsilon per method,
// median wall time per method, and (when present) sensitivity vs sample
// rate. Returns the written file paths.
std::vector<std::string> render_bench_plots(const std::string& csvPath, const std::string& outDir);

}  // namespace joinsense
