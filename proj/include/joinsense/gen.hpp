#pragma once

// Synthetic dataset generators: skewed edge relations (uniform source, Zipf
// destination) and uniform key/foreign-key chain tables. Generation is fully
// deterministic from the seed, with one derived stream per relation, and the
// in-memory and CSV paths emit identical rows.

#include <cstdint>
#include <string>
#include <vector>

#include "joinsense/relation.hpp"

namespace joinsense {

struct GenSpec {
  enum class Kind { ZipfEdges, UniformTables };

  Kind kind = Kind::ZipfEdges;
  std::uint64_t rows = 1000;    // rows per relation
  std::uint64_t relations = 3;  // number of relations
  double skew = 1.0;            // Zipf exponent for edge destinations
  std::uint64_t nodes = 0;      // endpoint domain size; 0 derives max(2, rows/50)
  std::uint64_t seed = 0;

  std::uint64_t domain() const;
  void validate() const;
};

GenSpec::Kind parse_gen_kind(const std::string& name);
const char* gen_kind_name(GenSpec::Kind kind);

// Relation names the spec generates, in order (R1..Rr or T1..Tr).
std::vector<std::string> generated_names(const GenSpec& spec);

// Appends every generated relation to the dataset.
void generate_dataset(const GenSpec& spec, Dataset& dataset);

// Writes one CSV per relation into outDir (created if missing); returns the
// file paths. Loading them back yields the same rows generate_dataset makes.
std::vector<std::string> write_generated_csv(const GenSpec& spec, const std::string& outDir);

}  // namespace joinsense
