#include "joinsense/gen.hpp"

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <functional>
#include <utility>

#include "joinsense/errors.hpp"
#include "joinsense/rng.hpp"

namespace joinsense {

std::uint64_t GenSpec::domain() const {
  if (nodes > 0) return nodes;
  return std::max<std::uint64_t>(2, rows / 50);
}

void GenSpec::validate() const {
  if (rows == 0) throw ConfigError("generator needs at least one row per relation");
  if (relations == 0) throw ConfigError("generator needs at least one relation");
  if (skew < 0.0) throw ConfigError("Zipf skew must be non-negative");
  if (nodes == 1) throw ConfigError("the endpoint domain needs at least two values");
}

GenSpec::Kind parse_gen_kind(const std::string& name) {
  if (name == "zipf-edges") return GenSpec::Kind::ZipfEdges;
  if (name == "uniform-tables") return GenSpec::Kind::UniformTables;
  throw ConfigError("unknown dataset kind: " + name +
                    " (expected zipf-edges or uniform-tables)");
}

const char* gen_kind_name(GenSpec::Kind kind) {
  return kind == GenSpec::Kind::ZipfEdges ? "zipf-edges" : "uniform-tables";
}

std::vector<std::string> generated_names(const GenSpec& spec) {
  const char* prefix = spec.kind == GenSpec::Kind::ZipfEdges ? "R" : "T";
  std::vector<std::string> names;
  names.reserve(spec.relations);
  for (std::uint64_t j = 1; j <= spec.relations; ++j)
    names.push_back(prefix + std::to_string(j));
  return names;
}

namespace {

std::vector<std::string> schema_for(const GenSpec& spec) {
  if (spec.kind == GenSpec::Kind::ZipfEdges) return {"from", "to"};
  return {"pk", "fk"};
}

// Streams the rows of relation `relIdx` (0-based) to `emit`, identically for
// the in-memory and CSV paths.
void generate_rows(const GenSpec& spec, std::uint64_t relIdx,
                   const std::function<void(const std::string&, const std::string&)>& emit) {
  Rng rng = Rng::stream(spec.seed, {stream_tag::kGenerator, relIdx});
  if (spec.kind == GenSpec::Kind::ZipfEdges) {
    const std::uint64_t domain = spec.domain();
    const ZipfSampler zipf(domain, spec.skew);
    for (std::uint64_t i = 0; i < spec.rows; ++i) {
      const std::string from = "n" + std::to_string(rng.bounded(domain));
      const std::string to = "n" + std::to_string(zipf.sample(rng));
      emit(from, to);
    }
    return;
  }
  // Key/foreign-key chain: unique primary keys, foreign keys uniform over the
  // next table's primary-key domain (the last table's keys dangle by design).
  const std::string pkPrefix = "k" + std::to_string(relIdx + 1) + "_";
  const std::string fkPrefix = "k" + std::to_string(relIdx + 2) + "_";
  for (std::uint64_t i = 0; i < spec.rows; ++i) {
    const std::string pk = pkPrefix + std::to_string(i);
    const std::string fk = fkPrefix + std::to_string(rng.bounded(spec.rows));
    emit(pk, fk);
  }
}

}  // namespace

void generate_dataset(const GenSpec& spec, Dataset& dataset) {
  spec.validate();
  const std::vector<std::string> names = generated_names(spec);
  const std::vector<std::string> schema = schema_for(spec);
  for (std::uint64_t j = 0; j < spec.relations; ++j) {
    Relation rel(names[j], schema, &dataset.dict());
    generate_rows(spec, j, [&](const std::string& a, const std::string& b) {
      rel.append_row({dataset.dict().intern(a), dataset.dict().intern(b)});
    });
    dataset.add(std::move(rel));
  }
}

std::vector<std::string> write_generated_csv(const GenSpec& spec, const std::string& outDir) {
  spec.validate();
  std::filesystem::create_directories(outDir);
  const std::vector<std::string> names = generated_names(spec);
  const std::vector<std::string> schema = schema_for(spec);
  std::vector<std::string> paths;
  for (std::uint64_t j = 0; j < spec.relations; ++j) {
    const std::string path = (std::filesystem::path(outDir) / (names[j] + ".csv")).string();
    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError("cannot write " + path);
    out << schema[0] << "," << schema[1] << "\n";
    generate_rows(spec, j, [&](const std::string& a, const std::string& b) {
      out << a << "," << b << "\n";
    });
    if (!out) throw DataError("write failed on " + path);
    paths.push_back(path);
  }
  return paths;
}

}  // namespace joinsense
