// Command-line front end: data generation, ingest checks, statistics,
// sketch construction, single runs, benchmark grids, and chart rendering.
//
// Exit codes: 0 success, 1 usage/configuration error, 2 data error,
// 3 non-convergence (the flagged records are still printed).

#include <cstdint>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "joinsense/errors.hpp"
#include "joinsense/harness.hpp"

namespace {

using namespace joinsense;

struct CommonFlags {
  std::string configPath;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> dataDir;
  std::optional<std::string> sketchDir;
  std::optional<std::string> outDir;
  std::optional<double> epsilon;
  std::optional<double> delta;
  std::optional<double> gamma;
  std::optional<std::string> mechanism;
  std::optional<std::string> method;
  std::optional<bool> useKeys;
  std::optional<double> tau0;
  std::optional<double> eta;
  std::optional<double> sampleRate;
  std::optional<std::string> samplingMode;
  std::optional<std::uint64_t> m0;
  std::optional<std::uint64_t> walkCap;
  std::optional<std::uint64_t> s1;
  std::optional<std::uint64_t> s2;
  std::optional<double> sketchTau;
  std::optional<double> sketchEta;

  // Precedence: built-in defaults < config file < JOINSENSE_* environment
  // < command-line flags.
  HarnessConfig resolve() const {
    HarnessConfig cfg;
    if (!configPath.empty()) cfg = HarnessConfig::from_json_file(configPath);
    cfg.apply_env();
    if (seed) cfg.seed = *seed;
    if (dataDir) cfg.dataDir = *dataDir;
    if (sketchDir) cfg.sketchDir = *sketchDir;
    if (outDir) cfg.outDir = *outDir;
    if (epsilon) cfg.epsilon = *epsilon;
    if (delta) cfg.delta = *delta;
    if (gamma) cfg.gamma = *gamma;
    if (mechanism) cfg.mechanism = *mechanism;
    if (method) cfg.method = *method;
    if (useKeys) cfg.useKeys = *useKeys;
    if (tau0) cfg.sampling.tau0 = *tau0;
    if (eta) cfg.sampling.eta = *eta;
    if (sampleRate) cfg.sampling.sampleRate = *sampleRate;
    if (samplingMode) cfg.sampling.mode = parse_sampling_mode(*samplingMode);
    if (m0) cfg.sampling.m0 = *m0;
    if (walkCap) cfg.sampling.walkCap = *walkCap;
    if (s1) cfg.sketch.s1 = *s1;
    if (s2) cfg.sketch.s2 = *s2;
    if (sketchTau) cfg.sketch.tau = *sketchTau;
    if (sketchEta) cfg.sketch.eta = *sketchEta;
    cfg.validate();
    return cfg;
  }
};

void add_common_flags(CLI::App& app, CommonFlags& flags) {
  app.add_option("--config", flags.configPath, "JSON configuration file");
  app.add_option("--seed", flags.seed, "master seed for all randomness");
  app.add_option("--data-dir", flags.dataDir, "directory holding <relation>.csv files");
  app.add_option("--sketch-dir", flags.sketchDir, "directory for persisted sketches");
  app.add_option("--out-dir", flags.outDir, "directory for benchmark and chart output");
  app.add_option("--epsilon", flags.epsilon, "privacy budget");
  app.add_option("--delta", flags.delta, "failure probability of the smoothed Laplace release");
  app.add_option("--gamma", flags.gamma, "tail exponent of the general Cauchy release");
  app.add_option("--mechanism", flags.mechanism, "laplace | laplace-global | general-cauchy");
  app.add_option("--method", flags.method, "es | rs | sampling-se | sketch-se | local-oracle");
  app.add_flag("--use-keys,!--no-use-keys", flags.useKeys, "apply declared key constraints");
  app.add_option("--tau0", flags.tau0, "sampling: terminal interval half-width");
  app.add_option("--eta", flags.eta, "sampling: failure probability budget");
  app.add_option("--sample-rate", flags.sampleRate, "sampling: walk budget as a fraction of the join size");
  app.add_option("--sampling-mode", flags.samplingMode, "sampling: perE | improved | withFilter");
  app.add_option("--m0", flags.m0, "sampling: initial walks per group");
  app.add_option("--walk-cap", flags.walkCap, "sampling: hard walk cap per query");
  app.add_option("--s1", flags.s1, "sketch: averaged copies per median row");
  app.add_option("--s2", flags.s2, "sketch: median rows");
  app.add_option("--sketch-tau", flags.sketchTau, "sketch: relative error absorbed into the bound");
  app.add_option("--sketch-eta", flags.sketchEta, "sketch: failure probability of the bound");
}

int cmd_gen_data(const HarnessConfig& cfg, const std::string& kind, std::uint64_t rows,
                 std::size_t relations, double skew, std::uint64_t nodes, const std::string& out) {
  GenSpec spec;
  spec.kind = parse_gen_kind(kind);
  spec.rows = rows;
  spec.relations = relations;
  spec.skew = skew;
  spec.nodes = nodes;
  spec.seed = cfg.seed;
  spec.validate();
  const auto files = write_generated_csv(spec, out);
  nlohmann::ordered_json j;
  j["kind"] = gen_kind_name(spec.kind);
  j["rows"] = spec.rows;
  j["relations"] = spec.relations;
  j["seed"] = spec.seed;
  j["files"] = files;
  std::cout << j.dump(2) << "\n";
  return 0;
}

int cmd_ingest(const HarnessConfig& cfg, const std::string& queryPath) {
  const QueryBundle bundle = load_query_bundle(queryPath, cfg.dataDir);
  std::cout << ingest_summary_json(bundle.bound()) << "\n";
  return 0;
}

int cmd_stats(const HarnessConfig& cfg, const std::string& queryPath) {
  const QueryBundle bundle = load_query_bundle(queryPath, cfg.dataDir);
  prepare_offline(bundle.bound());
  std::cout << dataset_stats_json(bundle.bound()) << "\n";
  return 0;
}

int cmd_sketch_build(const HarnessConfig& cfg, const std::string& queryPath) {
  const QueryBundle bundle = load_query_bundle(queryPath, cfg.dataDir);
  const auto files = write_sketch_files(bundle.bound(), cfg.sketch, cfg.seed, cfg.sketchDir);
  nlohmann::ordered_json j;
  j["fingerprint"] = bundle.bound().spec().fingerprint();
  j["masterSeed"] = cfg.seed;
  j["files"] = files;
  std::cout << j.dump(2) << "\n";
  return 0;
}

int cmd_run(const HarnessConfig& cfg, const std::string& queryPath) {
  const QueryBundle bundle = load_query_bundle(queryPath, cfg.dataDir);
  const BoundQuery& query = bundle.bound();

  RunRequest req;
  req.method = parse_method(cfg.method);
  req.mechanism = parse_mechanism(cfg.mechanism);
  req.epsilon = cfg.epsilon;
  req.delta = cfg.delta;
  req.gamma = cfg.gamma;
  req.seed = cfg.seed;
  req.useKeys = cfg.useKeys;
  req.sampling = cfg.sampling;
  std::vector<AgmsSketch> sketches;
  if (req.method == Method::SketchSE && req.mechanism != Mechanism::LaplaceGlobal) {
    sketches = load_sketch_files(query, cfg.sketchDir);
    req.sketches = &sketches;
  }
  const RunRecord rec = run_query(query, req);
  std::cout << rec.to_json_line() << "\n";
  return rec.converged ? 0 : 3;
}

int cmd_bench(const HarnessConfig& cfg, const std::string& suitePath) {
  const BenchSuite suite = BenchSuite::from_json_file(suitePath);
  const BenchResult result = run_bench(suite, cfg);
  std::filesystem::create_directories(cfg.outDir);
  const auto csvPath = std::filesystem::path(cfg.outDir) / "bench.csv";
  const auto recordsPath = std::filesystem::path(cfg.outDir) / "records.jsonl";
  write_text_file(csvPath.string(), bench_csv(result.rows));
  std::string lines;
  bool allConverged = true;
  for (const RunRecord& rec : result.records) {
    lines += rec.to_json_line() + "\n";
    allConverged = allConverged && rec.converged;
  }
  write_text_file(recordsPath.string(), lines);
  nlohmann::ordered_json j;
  j["rows"] = result.rows.size();
  j["records"] = result.records.size();
  j["csv"] = csvPath.string();
  j["recordsFile"] = recordsPath.string();
  j["allConverged"] = allConverged;
  std::cout << j.dump(2) << "\n";
  return allConverged ? 0 : 3;
}

int cmd_plot(const HarnessConfig& cfg, std::string csvPath) {
  if (csvPath.empty()) csvPath = (std::filesystem::path(cfg.outDir) / "bench.csv").string();
  const auto files = render_bench_plots(csvPath, cfg.outDir);
  nlohmann::ordered_json j;
  j["csv"] = csvPath;
  j["files"] = files;
  std::cout << j.dump(2) << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"differentially private counting over multi-way equi-joins"};
  app.require_subcommand(1);

  CommonFlags flags;
  add_common_flags(app, flags);

  // gen-data
  auto* gen = app.add_subcommand("gen-data", "generate synthetic CSV relations");
  std::string genKind = "zipf-edges";
  std::uint64_t genRows = 1000;
  std::size_t genRelations = 3;
  double genSkew = 1.0;
  std::uint64_t genNodes = 0;
  std::string genOut;
  gen->add_option("--kind", genKind, "zipf-edges | uniform-tables");
  gen->add_option("--rows", genRows, "rows per relation");
  gen->add_option("--relations", genRelations, "number of relations");
  gen->add_option("--skew", genSkew, "Zipf skew of edge endpoints");
  gen->add_option("--nodes", genNodes, "domain size (0 = rows/50)");
  gen->add_option("--out", genOut, "output directory")->required();

  // ingest / stats / sketch-build / run share a --query option.
  std::string queryPath;
  auto* ingest = app.add_subcommand("ingest", "load a query and its CSVs, report a summary");
  ingest->add_option("--query", queryPath, "query spec JSON")->required();
  auto* stats = app.add_subcommand("stats", "per-relation join-attribute statistics");
  stats->add_option("--query", queryPath, "query spec JSON")->required();
  auto* sketchBuild = app.add_subcommand("sketch-build", "build and persist sketches for a query");
  sketchBuild->add_option("--query", queryPath, "query spec JSON")->required();
  auto* run = app.add_subcommand("run", "one sensitivity computation plus noisy release");
  run->add_option("--query", queryPath, "query spec JSON")->required();

  // bench / plot
  auto* bench = app.add_subcommand("bench", "run a benchmark grid and write CSV + records");
  std::string suitePath;
  bench->add_option("--suite", suitePath, "benchmark suite JSON")->required();
  auto* plot = app.add_subcommand("plot", "render SVG charts from a benchmark CSV");
  std::string plotCsv;
  plot->add_option("--csv", plotCsv, "benchmark CSV (default <out-dir>/bench.csv)");

  // Let global options (--seed, --epsilon, ...) appear after the subcommand.
  for (CLI::App* sub : {gen, ingest, stats, sketchBuild, run, bench, plot}) sub->fallthrough();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  try {
    const HarnessConfig cfg = flags.resolve();
    if (gen->parsed()) return cmd_gen_data(cfg, genKind, genRows, genRelations, genSkew, genNodes, genOut);
    if (ingest->parsed()) return cmd_ingest(cfg, queryPath);
    if (stats->parsed()) return cmd_stats(cfg, queryPath);
    if (sketchBuild->parsed()) return cmd_sketch_build(cfg, queryPath);
    if (run->parsed()) return cmd_run(cfg, queryPath);
    if (bench->parsed()) return cmd_bench(cfg, suitePath);
    if (plot->parsed()) return cmd_plot(cfg, plotCsv);
    std::cerr << "error: no command given\n";
    return 1;
  } catch (const DataError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const UsageError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
}
