#include "joinsense/relation.hpp"

#include <algorithm>
#include <fstream>

namespace joinsense {

AttributeRef AttributeRef::parse(std::string_view dotted) {
  const auto dot = dotted.find('.');
  if (dot == std::string_view::npos || dot == 0 || dot + 1 == dotted.size())
    throw SchemaError("attribute reference '" + std::string(dotted) +
                      "' is not of the form Relation.attribute");
  return AttributeRef{std::string(dotted.substr(0, dot)), std::string(dotted.substr(dot + 1))};
}

namespace {

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> fields;
  std::size_t start = 0;
  while (true) {
    const auto comma = line.find(',', start);
    if (comma == std::string::npos) {
      fields.push_back(line.substr(start));
      break;
    }
    fields.push_back(line.substr(start, comma - start));
    start = comma + 1;
  }
  if (!fields.empty() && !fields.back().empty() && fields.back().back() == '\r')
    fields.back().pop_back();
  return fields;
}

}  // namespace

Relation load_csv(const std::string& path, Dictionary& dict, const std::string& relationName,
                  const std::optional<std::vector<std::string>>& schema) {
  std::ifstream in(path);
  if (!in) throw IngestError("cannot open '" + path + "'");

  std::string line;
  if (!std::getline(in, line))
    throw IngestError("'" + path + "' is empty (missing header line)");
  std::vector<std::string> header = split_csv_line(line);
  if (schema && *schema != header)
    throw IngestError("header of '" + path + "' does not match the expected schema");

  Relation relation(relationName, header, &dict);
  std::vector<Value> row(header.size());
  std::size_t lineNo = 1;
  while (std::getline(in, line)) {
    ++lineNo;
    if (line.empty() && in.eof()) break;
    const auto fields = split_csv_line(line);
    if (fields.size() != header.size())
      throw IngestError("'" + path + "' line " + std::to_string(lineNo) + ": expected " +
                        std::to_string(header.size()) + " fields, got " +
                        std::to_string(fields.size()));
    for (std::size_t i = 0; i < fields.size(); ++i) row[i] = dict.intern(fields[i]);
    relation.append_row(row);
  }
  return relation;
}

void build_index(Relation& relation, std::string_view attr) {
  const std::size_t attrIdx = relation.attribute_index(attr);
  Index index;
  const auto& column = relation.column(attrIdx);
  for (RowId r = 0; r < column.size(); ++r) index.postings[column[r]].push_back(r);
  index.distinctByToken.reserve(index.postings.size());
  for (const auto& [value, rows] : index.postings) index.distinctByToken.push_back(value);
  const Dictionary& dict = relation.dict();
  std::sort(index.distinctByToken.begin(), index.distinctByToken.end(),
            [&dict](Value a, Value b) { return dict.token_less(a, b); });
  relation.indexes_[attrIdx] = std::move(index);
}

FrequencyStats Relation::stats(const std::vector<std::string>& attrs) const {
  std::vector<std::size_t> attrIdx;
  attrIdx.reserve(attrs.size());
  for (const auto& a : attrs) attrIdx.push_back(attribute_index(a));
  std::sort(attrIdx.begin(), attrIdx.end());
  attrIdx.erase(std::unique(attrIdx.begin(), attrIdx.end()), attrIdx.end());

  {
    std::lock_guard<std::mutex> lock(statsCache_->mutex);
    auto it = statsCache_->entries.find(attrIdx);
    if (it != statsCache_->entries.end()) return it->second;
  }

  FrequencyStats result;
  const std::size_t rows = row_count();
  if (rows > 0) {
    if (attrIdx.size() == 1) {
      std::unordered_map<Value, std::uint64_t> histogram;
      histogram.reserve(rows / 4 + 8);
      for (Value v : columns_[attrIdx[0]]) {
        const std::uint64_t c = ++histogram[v];
        result.maxFrequency = std::max(result.maxFrequency, c);
      }
      result.distinctCount = histogram.size();
    } else if (attrIdx.empty()) {
      // Zero attributes: one group holding every row.
      result.maxFrequency = rows;
      result.distinctCount = 1;
    } else {
      // Composite key histogram; exact map keys (no lossy hashing of tuples).
      std::map<std::vector<Value>, std::uint64_t> histogram;
      std::vector<Value> key(attrIdx.size());
      for (RowId r = 0; r < rows; ++r) {
        for (std::size_t i = 0; i < attrIdx.size(); ++i) key[i] = columns_[attrIdx[i]][r];
        const std::uint64_t c = ++histogram[key];
        result.maxFrequency = std::max(result.maxFrequency, c);
      }
      result.distinctCount = histogram.size();
    }
  }

  std::lock_guard<std::mutex> lock(statsCache_->mutex);
  statsCache_->entries.emplace(std::move(attrIdx), result);
  return result;
}

}  // namespace joinsense
