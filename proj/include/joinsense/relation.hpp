#pragma once

// In-memory relations over interned opaque tokens, with per-attribute value
// indexes and cached frequency statistics (max frequency / distinct counts)
// over arbitrary attribute sets.

#include <cstdint>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "joinsense/errors.hpp"

namespace joinsense {

// Interned value id. Equality/hash are total; ordering for deterministic
// iteration is lexicographic over the original token string (see Dictionary).
using Value = std::int64_t;
using RowId = std::uint32_t;

class Dictionary {
 public:
  Value intern(std::string_view token) {
    auto it = ids_.find(std::string(token));
    if (it != ids_.end()) return it->second;
    const Value id = static_cast<Value>(tokens_.size());
    tokens_.emplace_back(token);
    ids_.emplace(tokens_.back(), id);
    return id;
  }

  // -1 when the token was never interned.
  Value lookup(std::string_view token) const {
    auto it = ids_.find(std::string(token));
    return it == ids_.end() ? -1 : it->second;
  }

  const std::string& token(Value id) const { return tokens_.at(static_cast<std::size_t>(id)); }
  std::size_t size() const { return tokens_.size(); }

  bool token_less(Value a, Value b) const { return token(a) < token(b); }

 private:
  std::unordered_map<std::string, Value> ids_;
  std::vector<std::string> tokens_;
};

struct AttributeRef {
  std::string relation;
  std::string attribute;

  bool operator==(const AttributeRef&) const = default;
  std::string dotted() const { return relation + "." + attribute; }

  // Parses "Rel.attr"; rejects anything else.
  static AttributeRef parse(std::string_view dotted);
};

struct FrequencyStats {
  std::uint64_t maxFrequency = 0;  // max multiplicity of one value combination
  std::uint64_t distinctCount = 0; // number of distinct value combinations
};

struct Index {
  std::unordered_map<Value, std::vector<RowId>> postings;
  std::vector<Value> distinctByToken;  // sorted lexicographically by token
};

class Relation {
 public:
  Relation(std::string name, std::vector<std::string> attributes, const Dictionary* dict)
      : name_(std::move(name)), attributes_(std::move(attributes)), dict_(dict),
        columns_(attributes_.size()) {}

  const std::string& name() const { return name_; }
  const std::vector<std::string>& attributes() const { return attributes_; }
  std::size_t arity() const { return attributes_.size(); }
  std::size_t row_count() const { return columns_.empty() ? 0 : columns_[0].size(); }
  const Dictionary& dict() const { return *dict_; }

  std::size_t attribute_index(std::string_view attr) const {
    for (std::size_t i = 0; i < attributes_.size(); ++i)
      if (attributes_[i] == attr) return i;
    throw SchemaError("relation " + name_ + " has no attribute '" + std::string(attr) + "'");
  }
  bool has_attribute(std::string_view attr) const {
    for (const auto& a : attributes_)
      if (a == attr) return true;
    return false;
  }

  const std::vector<Value>& column(std::size_t attrIdx) const { return columns_.at(attrIdx); }
  Value at(RowId row, std::size_t attrIdx) const { return columns_[attrIdx][row]; }

  void append_row(const std::vector<Value>& row) {
    if (row.size() != arity())
      throw IngestError("row arity mismatch on relation " + name_);
    for (std::size_t i = 0; i < row.size(); ++i) columns_[i].push_back(row[i]);
  }

  bool index_built(std::size_t attrIdx) const { return static_cast<bool>(indexes_.count(attrIdx)); }
  const Index& index(std::size_t attrIdx) const {
    auto it = indexes_.find(attrIdx);
    if (it == indexes_.end())
      throw SchemaError("no index built on " + name_ + "." + attributes_.at(attrIdx));
    return it->second;
  }

  // Rows holding `v` in attribute attrIdx; empty when v is absent. Requires index.
  const std::vector<RowId>* postings(std::size_t attrIdx, Value v) const {
    const auto& idx = index(attrIdx);
    auto it = idx.postings.find(v);
    return it == idx.postings.end() ? nullptr : &it->second;
  }

  friend void build_index(Relation& relation, std::string_view attr);
  friend Relation load_csv(const std::string& path, Dictionary& dict,
                           const std::string& relationName,
                           const std::optional<std::vector<std::string>>& schema);

  // Max multiplicity over distinct value combinations of `attrs`; 0 for an
  // empty relation. Cached per attribute set; relations are immutable once
  // indexed, so the cache never invalidates.
  std::uint64_t max_frequency(const std::vector<std::string>& attrs) const {
    return stats(attrs).maxFrequency;
  }
  std::uint64_t distinct_count(const std::vector<std::string>& attrs) const {
    return stats(attrs).distinctCount;
  }
  FrequencyStats stats(const std::vector<std::string>& attrs) const;

  // Distinct values of one attribute, ordered lexicographically by token.
  // Drives group numbering in the sampling estimator. Requires index.
  const std::vector<Value>& distinct_values(std::string_view attr) const {
    return index(attribute_index(attr)).distinctByToken;
  }

 private:
  struct StatsCache {
    std::mutex mutex;
    std::map<std::vector<std::size_t>, FrequencyStats> entries;
  };

  std::string name_;
  std::vector<std::string> attributes_;
  const Dictionary* dict_;
  std::vector<std::vector<Value>> columns_;  // column-major
  std::unordered_map<std::size_t, Index> indexes_;
  mutable std::unique_ptr<StatsCache> statsCache_ = std::make_unique<StatsCache>();
};

// Loads a CSV file (UTF-8, header line, comma separators, tokens opaque).
// When `schema` is given the header must match it exactly. Rows keep file
// order; indexes are not built. Malformed rows name their line number.
Relation load_csv(const std::string& path, Dictionary& dict, const std::string& relationName,
                  const std::optional<std::vector<std::string>>& schema = std::nullopt);

// Builds (or idempotently rebuilds) the value index for one attribute.
void build_index(Relation& relation, std::string_view attr);

// A dataset owns the dictionary its relations intern into.
class Dataset {
 public:
  Dataset() : dict_(std::make_unique<Dictionary>()) {}

  Dictionary& dict() { return *dict_; }
  const Dictionary& dict() const { return *dict_; }

  Relation& add(Relation relation) {
    relations_.push_back(std::make_unique<Relation>(std::move(relation)));
    byName_[relations_.back()->name()] = relations_.size() - 1;
    return *relations_.back();
  }

  Relation& load_csv_file(const std::string& path, const std::string& relationName,
                          const std::optional<std::vector<std::string>>& schema = std::nullopt) {
    return add(joinsense::load_csv(path, *dict_, relationName, schema));
  }

  bool has(std::string_view name) const { return byName_.count(std::string(name)) != 0; }
  Relation& relation(std::string_view name) {
    auto it = byName_.find(std::string(name));
    if (it == byName_.end()) throw SchemaError("unknown relation '" + std::string(name) + "'");
    return *relations_[it->second];
  }
  const Relation& relation(std::string_view name) const {
    auto it = byName_.find(std::string(name));
    if (it == byName_.end()) throw SchemaError("unknown relation '" + std::string(name) + "'");
    return *relations_[it->second];
  }
  std::size_t size() const { return relations_.size(); }
  Relation& at(std::size_t i) { return *relations_.at(i); }
  const Relation& at(std::size_t i) const { return *relations_.at(i); }

 private:
  std::unique_ptr<Dictionary> dict_;
  std::vector<std::unique_ptr<Relation>> relations_;
  std::unordered_map<std::string, std::size_t> byName_;
};

}  // namespace joinsense
