#pragma once

#include <algorithm>
#include <cstdio>
#include <istream>
#include <map>
#include <optional>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "slicemoa/error.hpp"
#include "slicemoa/metrics.hpp"

namespace slicemoa {

/// Metric table for one model: overall and monitored-slice values, optional lifts.
struct SliceReport {
  std::string model;
  /// Names of the monitored slices (schema slots 1..k-1), in order.
  std::vector<std::string> slice_names;
  std::vector<MetricRow> rows;
  /// Name of the baseline the lifts were computed against, if any.
  std::optional<std::string> baseline;

  const MetricRow* row(Metric m) const {
    for (const auto& r : rows)
      if (r.metric == m) return &r;
    return nullptr;
  }
};

/// Fills avg/max lift of every row against the matching baseline row.
inline void attach_lift(SliceReport& report, const SliceReport& baseline, LiftMode mode = LiftMode::points) {
  if (report.slice_names != baseline.slice_names) {
    throw ContractError("lift: report '" + report.model + "' and baseline '" + baseline.model +
                        "' monitor different slices");
  }
  for (auto& row : report.rows) {
    const MetricRow* base = baseline.row(row.metric);
    if (base == nullptr) {
      throw ContractError("lift: baseline '" + baseline.model + "' has no " + std::string(to_string(row.metric)) + " row");
    }
    const Lift l = lift(row, *base, mode);
    row.avg_lift = l.avg;
    row.max_lift = l.max;
  }
  report.baseline = baseline.model;
}

namespace detail {

inline std::string fixed(double v, int digits) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", digits, v);
  return buf;
}

inline std::string cell(const std::optional<double>& v) { return v ? fixed(*v, 4) : "NA"; }

inline std::string lift_cell(const std::optional<double>& v, bool has_baseline) {
  if (!has_baseline) return "---";
  return v ? fixed(*v, 1) + "%" : "NA";
}

inline std::string metric_title(Metric m) {
  switch (m) {
    case Metric::accuracy: return "Acc";
    case Metric::f1: return "F1";
    case Metric::mcc: return "MCC";
  }
  return "?";
}

}  // namespace detail

/// Aligned plain-text table: per metric block, Overall, S1..Sn, Avg., Max.
/// Every report must share the slice names and metric order of the first.
inline std::string render_table(const std::vector<SliceReport>& reports) {
  if (reports.empty()) return "";
  const SliceReport& first = reports.front();
  for (const auto& r : reports) {
    if (r.slice_names != first.slice_names) throw ContractError("render_table: reports monitor different slices");
  }

  std::vector<std::vector<std::string>> grid;
  std::vector<std::string> groups{""};
  std::vector<std::string> header{"Methods"};
  for (const auto& row : first.rows) {
    const std::string title = detail::metric_title(row.metric);
    groups.push_back(title);
    header.push_back("Overall");
    for (std::size_t s = 0; s < first.slice_names.size(); ++s) {
      groups.push_back("");
      header.push_back("S" + std::to_string(s + 1));
    }
    groups.push_back(title + " Lift");
    groups.push_back("");
    header.push_back("Avg.");
    header.push_back("Max.");
  }
  grid.push_back(groups);
  grid.push_back(header);
  for (const auto& report : reports) {
    std::vector<std::string> line{report.model};
    for (const auto& head : first.rows) {
      const MetricRow* row = report.row(head.metric);
      if (row == nullptr) throw ContractError("render_table: report '" + report.model + "' lacks a metric");
      line.push_back(detail::fixed(row->overall, 4));
      for (const auto& v : row->slices) line.push_back(detail::cell(v));
      const bool has = report.baseline.has_value();
      line.push_back(detail::lift_cell(row->avg_lift, has));
      line.push_back(detail::lift_cell(row->max_lift, has));
    }
    grid.push_back(line);
  }

  std::vector<std::size_t> width(grid[1].size(), 0);
  for (const auto& line : grid)
    for (std::size_t c = 0; c < line.size(); ++c) width[c] = std::max(width[c], line[c].size());

  const std::size_t block = first.slice_names.size() + 3;
  std::ostringstream os;
  os << "Slices:";
  for (std::size_t s = 0; s < first.slice_names.size(); ++s) os << " S" << s + 1 << "=" << first.slice_names[s];
  os << '\n';
  for (const auto& line : grid) {
    std::string text;
    for (std::size_t c = 0; c < line.size(); ++c) {
      if (c > 0) text += (c - 1) % block == 0 ? " | " : "  ";
      std::string v = line[c];
      v.resize(width[c], ' ');
      text += v;
    }
    while (!text.empty() && text.back() == ' ') text.pop_back();
    os << text << '\n';
  }
  return os.str();
}

/// One JSON record per model x metric x slice ("overall" first), plus one lift record
/// per metric when a baseline is attached.
inline void write_report_jsonl(std::ostream& os, const SliceReport& report) {
  using nlohmann::json;
  for (const auto& row : report.rows) {
    const std::string metric(to_string(row.metric));
    os << json{{"model", report.model}, {"metric", metric}, {"slice", "overall"}, {"index", 0}, {"value", row.overall}}.dump()
       << '\n';
    for (std::size_t s = 0; s < row.slices.size(); ++s) {
      json rec{{"model", report.model}, {"metric", metric}, {"slice", report.slice_names.at(s)}, {"index", s + 1}};
      rec["value"] = row.slices[s] ? json(*row.slices[s]) : json(nullptr);
      os << rec.dump() << '\n';
    }
    if (report.baseline) {
      json rec{{"model", report.model}, {"metric", metric}, {"slice", "lift"}, {"baseline", *report.baseline}};
      rec["avg_lift"] = row.avg_lift ? json(*row.avg_lift) : json(nullptr);
      rec["max_lift"] = row.max_lift ? json(*row.max_lift) : json(nullptr);
      os << rec.dump() << '\n';
    }
  }
}

/// Reads reports written by write_report_jsonl; models keep first-appearance order.
inline std::vector<SliceReport> read_report_jsonl(std::istream& is) {
  using nlohmann::json;
  std::vector<SliceReport> reports;
  std::string line;
  std::size_t line_no = 0;
  auto report_for = [&](const std::string& model) -> SliceReport& {
    for (auto& r : reports)
      if (r.model == model) return r;
    reports.push_back(SliceReport{model, {}, {}, std::nullopt});
    return reports.back();
  };
  while (std::getline(is, line)) {
    ++line_no;
    if (line.empty()) continue;
    json rec;
    try {
      rec = json::parse(line);
      SliceReport& report = report_for(rec.at("model").get<std::string>());
      const Metric metric = parse_metric(rec.at("metric").get<std::string>());
      auto it = std::find_if(report.rows.begin(), report.rows.end(), [&](const MetricRow& r) { return r.metric == metric; });
      if (it == report.rows.end()) {
        report.rows.push_back(MetricRow{metric, 0.0, {}, std::nullopt, std::nullopt});
        it = report.rows.end() - 1;
      }
      const std::string slice = rec.at("slice").get<std::string>();
      auto opt = [](const json& v) { return v.is_null() ? std::nullopt : std::optional<double>(v.get<double>()); };
      if (slice == "overall") {
        it->overall = rec.at("value").get<double>();
      } else if (slice == "lift") {
        report.baseline = rec.at("baseline").get<std::string>();
        it->avg_lift = opt(rec.at("avg_lift"));
        it->max_lift = opt(rec.at("max_lift"));
      } else {
        const std::size_t index = rec.at("index").get<std::size_t>();
        if (index == 0) throw DataError("slice index 0 is reserved for overall");
        if (it->slices.size() < index) it->slices.resize(index);
        it->slices[index - 1] = opt(rec.at("value"));
        if (report.slice_names.size() < index) report.slice_names.resize(index);
        report.slice_names[index - 1] = slice;
      }
    } catch (const json::exception& e) {
      throw DataError("report line " + std::to_string(line_no) + ": " + e.what());
    }
  }
  return reports;
}

}  // namespace slicemoa
