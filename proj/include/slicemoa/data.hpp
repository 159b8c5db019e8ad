#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstddef>
#include <filesystem>
#include <fstream>
#include <istream>
#include <limits>
#include <map>
#include <optional>
#include <ostream>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include <nlohmann/json.hpp>

#include "slicemoa/error.hpp"
#include "slicemoa/random.hpp"
#include "slicemoa/slicing.hpp"

namespace slicemoa {

enum class DatasetFormat { tsv, csv, jsonl };

inline DatasetFormat parse_dataset_format(std::string_view s) {
  if (s == "tsv") return DatasetFormat::tsv;
  if (s == "csv") return DatasetFormat::csv;
  if (s == "jsonl") return DatasetFormat::jsonl;
  throw ConfigError("unknown dataset format '" + std::string(s) + "' (tsv|csv|jsonl)");
}

inline std::string_view to_string(DatasetFormat f) {
  switch (f) {
    case DatasetFormat::tsv: return "tsv";
    case DatasetFormat::csv: return "csv";
    case DatasetFormat::jsonl: return "jsonl";
  }
  return "?";
}

struct Record {
  std::string id;
  std::string text;
  std::size_t label = 0;

  bool operator==(const Record&) const = default;
};

struct TextDataset {
  std::vector<Record> records;
  /// Label vocabulary; a record's label indexes into it.
  std::vector<std::string> labels;

  std::size_t size() const { return records.size(); }
  std::size_t num_classes() const { return labels.size(); }

  std::vector<std::size_t> label_indices() const {
    std::vector<std::size_t> out;
    out.reserve(records.size());
    for (const auto& r : records) out.push_back(r.label);
    return out;
  }

  TextDataset subset(std::span<const std::size_t> indices) const {
    TextDataset out{{}, labels};
    out.records.reserve(indices.size());
    for (std::size_t i : indices) out.records.push_back(records.at(i));
    return out;
  }
};

struct LoadOptions {
  DatasetFormat format = DatasetFormat::tsv;
  std::string text_col = "text";
  std::string label_col = "label";
  /// When the column is absent, ids are the 1-based row numbers.
  std::string id_col = "id";
  bool lowercase = false;
  /// Fixed label vocabulary (evaluation); labels outside it are errors.
  std::optional<std::vector<std::string>> vocabulary;
};

namespace detail {

// RFC 4180 fields: quoted fields may contain separators and doubled quotes.
// Returns false when a quoted field is still open at end of line.
inline bool split_csv_line(std::string_view line, char sep, std::vector<std::string>& fields, std::string& carry,
                           bool& in_quotes) {
  for (std::size_t i = 0; i < line.size(); ++i) {
    const char c = line[i];
    if (in_quotes) {
      if (c == '"') {
        if (i + 1 < line.size() && line[i + 1] == '"') {
          carry += '"';
          ++i;
        } else {
          in_quotes = false;
        }
      } else {
        carry += c;
      }
    } else if (c == '"' && carry.empty()) {
      in_quotes = true;
    } else if (c == sep) {
      fields.push_back(std::move(carry));
      carry.clear();
    } else {
      carry += c;
    }
  }
  if (in_quotes) {
    carry += '\n';
    return false;
  }
  fields.push_back(std::move(carry));
  carry.clear();
  return true;
}

inline std::string strip_cr(std::string line) {
  if (!line.empty() && line.back() == '\r') line.pop_back();
  return line;
}

class DatasetBuilder {
 public:
  explicit DatasetBuilder(const LoadOptions& opt) : opt_(opt) {
    if (opt.vocabulary) {
      ds_.labels = *opt.vocabulary;
      for (std::size_t i = 0; i < ds_.labels.size(); ++i) index_[ds_.labels[i]] = i;
    }
  }

  void add(std::string id, std::string text, const std::string& label, std::size_t line) {
    if (!seen_.insert(id).second) throw DataError("line " + std::to_string(line) + ": duplicate id '" + id + "'");
    auto it = index_.find(label);
    std::size_t cls = 0;
    if (it != index_.end()) {
      cls = it->second;
    } else if (opt_.vocabulary) {
      throw DataError("line " + std::to_string(line) + ": unknown label '" + label + "'");
    } else {
      cls = ds_.labels.size();
      ds_.labels.push_back(label);
      index_.emplace(label, cls);
    }
    if (opt_.lowercase) text = text::to_lower(text);
    ds_.records.push_back(Record{std::move(id), std::move(text), cls});
  }

  TextDataset finish() { return std::move(ds_); }

 private:
  const LoadOptions& opt_;
  TextDataset ds_;
  std::unordered_map<std::string, std::size_t> index_;
  std::unordered_set<std::string> seen_;
};

inline void parse_delimited(std::istream& in, char sep, bool quoting, const LoadOptions& opt, DatasetBuilder& out) {
  std::string line;
  std::size_t line_no = 0;
  std::vector<std::string> header;
  std::optional<std::size_t> text_idx, label_idx, id_idx;
  std::vector<std::string> fields;
  std::string carry;
  bool in_quotes = false;
  std::size_t record_start = 0;
  std::size_t row = 0;
  while (std::getline(in, line)) {
    ++line_no;
    line = strip_cr(std::move(line));
    if (!in_quotes) {
      fields.clear();
      record_start = line_no;
      if (line.empty()) continue;
    }
    if (quoting) {
      if (!split_csv_line(line, sep, fields, carry, in_quotes)) continue;
    } else {
      std::size_t start = 0;
      for (std::size_t pos; (pos = line.find(sep, start)) != std::string::npos; start = pos + 1)
        fields.push_back(line.substr(start, pos - start));
      fields.push_back(line.substr(start));
    }
    if (header.empty()) {
      header = fields;
      for (std::size_t i = 0; i < header.size(); ++i) {
        if (header[i] == opt.text_col) text_idx = i;
        if (header[i] == opt.label_col) label_idx = i;
        if (header[i] == opt.id_col) id_idx = i;
      }
      if (!text_idx) throw DataError("line 1: missing text column '" + opt.text_col + "'");
      if (!label_idx) throw DataError("line 1: missing label column '" + opt.label_col + "'");
      continue;
    }
    if (fields.size() != header.size()) {
      throw DataError("line " + std::to_string(record_start) + ": expected " + std::to_string(header.size()) +
                      " fields, got " + std::to_string(fields.size()));
    }
    ++row;
    std::string id = id_idx ? fields[*id_idx] : std::to_string(row);
    out.add(std::move(id), fields[*text_idx], fields[*label_idx], record_start);
  }
  if (in_quotes) throw DataError("line " + std::to_string(record_start) + ": unterminated quoted field");
  if (header.empty()) throw DataError("dataset is empty (no header row)");
}

inline std::string json_scalar_string(const nlohmann::json& v) {
  if (v.is_string()) return v.get<std::string>();
  if (v.is_number_integer()) return std::to_string(v.get<long long>());
  if (v.is_boolean()) return v.get<bool>() ? "true" : "false";
  return v.dump();
}

inline void parse_jsonl(std::istream& in, const LoadOptions& opt, DatasetBuilder& out) {
  std::string line;
  std::size_t line_no = 0, row = 0;
  while (std::getline(in, line)) {
    ++line_no;
    line = strip_cr(std::move(line));
    if (line.find_first_not_of(" \t") == std::string::npos) continue;
    nlohmann::json rec;
    try {
      rec = nlohmann::json::parse(line);
    } catch (const nlohmann::json::exception& e) {
      throw DataError("line " + std::to_string(line_no) + ": " + e.what());
    }
    if (!rec.is_object() || !rec.contains(opt.text_col) || !rec.contains(opt.label_col) || !rec[opt.text_col].is_string()) {
      throw DataError("line " + std::to_string(line_no) + ": record needs string '" + opt.text_col + "' and '" +
                      opt.label_col + "'");
    }
    ++row;
    std::string id = rec.contains(opt.id_col) ? json_scalar_string(rec[opt.id_col]) : std::to_string(row);
    out.add(std::move(id), rec[opt.text_col].get<std::string>(), json_scalar_string(rec[opt.label_col]), line_no);
  }
}

}  // namespace detail

inline TextDataset parse_dataset(std::istream& in, const LoadOptions& opt = {}) {
  detail::DatasetBuilder builder(opt);
  switch (opt.format) {
    case DatasetFormat::tsv: detail::parse_delimited(in, '\t', false, opt, builder); break;
    case DatasetFormat::csv: detail::parse_delimited(in, ',', true, opt, builder); break;
    case DatasetFormat::jsonl: detail::parse_jsonl(in, opt, builder); break;
  }
  return builder.finish();
}

inline TextDataset load_dataset(const std::filesystem::path& path, const LoadOptions& opt = {}) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open dataset '" + path.string() + "'");
  try {
    return parse_dataset(in, opt);
  } catch (const DataError& e) {
    throw DataError(path.string() + ": " + e.what());
  }
}

namespace detail {

inline std::string csv_quote(std::string_view s) {
  if (s.find_first_of(",\"\n\r") == std::string_view::npos) return std::string(s);
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += c;
  }
  return out + "\"";
}

}  // namespace detail

/// Writes id, text and label columns named per `opt`.
inline void write_dataset(std::ostream& os, const TextDataset& ds, const LoadOptions& opt = {}) {
  switch (opt.format) {
    case DatasetFormat::jsonl:
      for (const auto& r : ds.records) {
        nlohmann::json rec;
        rec[opt.id_col] = r.id;
        rec[opt.text_col] = r.text;
        rec[opt.label_col] = ds.labels.at(r.label);
        os << rec.dump() << '\n';
      }
      return;
    case DatasetFormat::tsv:
      os << opt.id_col << '\t' << opt.text_col << '\t' << opt.label_col << '\n';
      for (const auto& r : ds.records) {
        if (r.text.find_first_of("\t\n") != std::string::npos || r.id.find_first_of("\t\n") != std::string::npos) {
          throw DataError("record '" + r.id + "' contains a tab or newline and cannot be written as TSV");
        }
        os << r.id << '\t' << r.text << '\t' << ds.labels.at(r.label) << '\n';
      }
      return;
    case DatasetFormat::csv:
      os << detail::csv_quote(opt.id_col) << ',' << detail::csv_quote(opt.text_col) << ','
         << detail::csv_quote(opt.label_col) << '\n';
      for (const auto& r : ds.records) {
        os << detail::csv_quote(r.id) << ',' << detail::csv_quote(r.text) << ',' << detail::csv_quote(ds.labels.at(r.label))
           << '\n';
      }
      return;
  }
}

/// One label per line, in class-index order.
inline void write_vocabulary(std::ostream& os, const std::vector<std::string>& labels) {
  for (const auto& l : labels) os << l << '\n';
}

inline std::vector<std::string> read_vocabulary(std::istream& is) {
  std::vector<std::string> labels;
  std::string line;
  while (std::getline(is, line)) {
    line = detail::strip_cr(std::move(line));
    if (!line.empty()) labels.push_back(line);
  }
  return labels;
}

/// Split sizes given either as fractions summing to 1 or as absolute counts.
struct SplitSpec {
  std::vector<double> fractions;
  std::vector<std::size_t> counts;

  static SplitSpec from_fractions(std::vector<double> f) { return {std::move(f), {}}; }
  static SplitSpec from_counts(std::vector<std::size_t> c) { return {{}, std::move(c)}; }
};

struct SplitResult {
  /// Indices per split, ascending.
  std::vector<std::vector<std::size_t>> parts;
  std::vector<std::string> warnings;
};

namespace detail {

/// Largest-remainder apportionment of `total` by `fractions` (ties go to the lower index).
inline std::vector<std::size_t> apportion(std::size_t total, std::span<const double> fractions) {
  std::vector<std::size_t> out(fractions.size());
  std::vector<std::pair<double, std::size_t>> rem;
  std::size_t used = 0;
  for (std::size_t i = 0; i < fractions.size(); ++i) {
    const double exact = fractions[i] * static_cast<double>(total);
    out[i] = static_cast<std::size_t>(exact);
    used += out[i];
    rem.emplace_back(exact - static_cast<double>(out[i]), i);
  }
  std::stable_sort(rem.begin(), rem.end(), [](const auto& a, const auto& b) { return a.first > b.first; });
  for (std::size_t j = 0; used < total; ++j, ++used) ++out[rem[j % rem.size()].second];
  return out;
}

/// Integer max-flow (Edmonds-Karp) on a small dense graph.
class FlowNetwork {
 public:
  explicit FlowNetwork(std::size_t n) : n_(n), cap_(n * n, 0) {}
  void add(std::size_t u, std::size_t v, long long c) { cap_[u * n_ + v] += c; }
  long long residual(std::size_t u, std::size_t v) const { return cap_[u * n_ + v]; }

  long long max_flow(std::size_t s, std::size_t t) {
    long long flow = 0;
    std::vector<std::size_t> parent(n_);
    while (true) {
      std::fill(parent.begin(), parent.end(), n_);
      parent[s] = s;
      std::vector<std::size_t> queue{s};
      for (std::size_t qi = 0; qi < queue.size() && parent[t] == n_; ++qi) {
        const std::size_t u = queue[qi];
        for (std::size_t v = 0; v < n_; ++v) {
          if (parent[v] == n_ && cap_[u * n_ + v] > 0) {
            parent[v] = u;
            queue.push_back(v);
          }
        }
      }
      if (parent[t] == n_) return flow;
      long long bottleneck = std::numeric_limits<long long>::max();
      for (std::size_t v = t; v != s; v = parent[v]) bottleneck = std::min(bottleneck, cap_[parent[v] * n_ + v]);
      for (std::size_t v = t; v != s; v = parent[v]) {
        cap_[parent[v] * n_ + v] -= bottleneck;
        cap_[v * n_ + parent[v]] += bottleneck;
      }
      flow += bottleneck;
    }
  }

 private:
  std::size_t n_;
  std::vector<long long> cap_;
};

}  // namespace detail

/// Splits sample indices so every class is spread over the splits in proportion to the split
/// sizes. Each per-class allocation is the floor or ceiling of its exact share
/// n_class * split_size / n (a controlled rounding of the class x split table, found by
/// max-flow), so proportions are within one sample of the global ones.
inline SplitResult stratified_split(std::span<const std::size_t> labels, std::size_t num_classes, const SplitSpec& spec,
                                    std::uint64_t seed) {
  const std::size_t n = labels.size();
  if (n == 0) throw ConfigError("cannot split an empty dataset");
  std::vector<std::size_t> counts;
  if (!spec.counts.empty()) {
    counts = spec.counts;
    std::size_t requested = 0;
    for (auto c : counts) requested += c;
    if (requested > n) {
      throw ConfigError("split counts sum to " + std::to_string(requested) + " but only " + std::to_string(n) +
                        " samples are available");
    }
  } else {
    if (spec.fractions.empty()) throw ConfigError("split needs fractions or counts");
    double total = 0.0;
    for (double f : spec.fractions) {
      if (!(f >= 0.0)) throw ConfigError("split fractions must be non-negative");
      total += f;
    }
    if (std::abs(total - 1.0) > 1e-9) throw ConfigError("split fractions must sum to 1");
    counts = detail::apportion(n, spec.fractions);
  }
  const std::size_t requested_splits = counts.size();
  std::size_t requested = 0;
  for (auto c : counts) requested += c;
  if (requested < n) counts.push_back(n - requested);  // unused remainder
  const std::size_t splits = counts.size();

  std::vector<std::vector<std::size_t>> by_class(num_classes);
  for (std::size_t i = 0; i < n; ++i) {
    if (labels[i] >= num_classes) throw IndexError("stratified_split: label out of range");
    by_class[labels[i]].push_back(i);
  }

  SplitResult result;
  std::size_t nonzero_splits = 0;
  for (std::size_t s = 0; s < requested_splits; ++s) nonzero_splits += counts[s] > 0 ? 1 : 0;
  for (std::size_t c = 0; c < num_classes; ++c) {
    if (!by_class[c].empty() && by_class[c].size() < nonzero_splits) {
      result.warnings.push_back("class " + std::to_string(c) + " has " + std::to_string(by_class[c].size()) +
                                " samples for " + std::to_string(nonzero_splits) + " splits; allocation is best-effort");
    }
  }

  // alloc[c][s] = floor(n_c * count_s / n), then distribute the remainders.
  std::vector<std::vector<std::size_t>> alloc(num_classes, std::vector<std::size_t>(splits, 0));
  // Nodes: 0 source, 1..C classes, C+1..C+S splits, C+S+1 sink.
  const std::size_t source = 0, sink = num_classes + splits + 1;
  detail::FlowNetwork net(num_classes + splits + 2);
  std::vector<long long> col_deficit(counts.begin(), counts.end());
  long long needed = 0;
  for (std::size_t c = 0; c < num_classes; ++c) {
    const auto nc = static_cast<unsigned long long>(by_class[c].size());
    long long row_deficit = static_cast<long long>(nc);
    for (std::size_t s = 0; s < splits; ++s) {
      const unsigned long long prod = nc * counts[s];
      alloc[c][s] = static_cast<std::size_t>(prod / n);
      row_deficit -= static_cast<long long>(alloc[c][s]);
      col_deficit[s] -= static_cast<long long>(alloc[c][s]);
      if (prod % n != 0) net.add(1 + c, 1 + num_classes + s, 1);
    }
    net.add(source, 1 + c, row_deficit);
    needed += row_deficit;
  }
  for (std::size_t s = 0; s < splits; ++s) net.add(1 + num_classes + s, sink, col_deficit[s]);
  if (net.max_flow(source, sink) != needed) throw Error("stratified_split: rounding flow infeasible");
  for (std::size_t c = 0; c < num_classes; ++c)
    for (std::size_t s = 0; s < splits; ++s)
      if (net.residual(1 + num_classes + s, 1 + c) > 0) ++alloc[c][s];

  Rng rng(seed, "split");
  result.parts.assign(requested_splits, {});
  for (std::size_t c = 0; c < num_classes; ++c) {
    std::vector<std::size_t> members = by_class[c];
    rng.shuffle(members);
    std::size_t pos = 0;
    for (std::size_t s = 0; s < splits; ++s) {
      if (s < requested_splits) {
        result.parts[s].insert(result.parts[s].end(), members.begin() + static_cast<std::ptrdiff_t>(pos),
                               members.begin() + static_cast<std::ptrdiff_t>(pos + alloc[c][s]));
      }
      pos += alloc[c][s];
    }
  }
  for (auto& part : result.parts) std::sort(part.begin(), part.end());
  return result;
}

}  // namespace slicemoa
