#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "slicemoa/error.hpp"
#include "slicemoa/slicing.hpp"

namespace slicemoa {

/// Binary counts with class 1 as the positive class.
struct BinaryCounts {
  std::uint64_t tp = 0;
  std::uint64_t fp = 0;
  std::uint64_t tn = 0;
  std::uint64_t fn = 0;

  std::uint64_t total() const { return tp + fp + tn + fn; }
};

/// C x C confusion matrix indexed [truth][prediction].
class ConfusionMatrix {
 public:
  explicit ConfusionMatrix(std::size_t num_classes) : classes_(num_classes), counts_(num_classes * num_classes, 0) {
    if (num_classes < 2) throw ContractError("confusion matrix needs at least 2 classes");
  }

  ConfusionMatrix(std::size_t num_classes, std::span<const std::size_t> truth, std::span<const std::size_t> predicted)
      : ConfusionMatrix(num_classes) {
    if (truth.size() != predicted.size()) throw DimensionError("confusion matrix: label and prediction counts differ");
    for (std::size_t i = 0; i < truth.size(); ++i) add(truth[i], predicted[i]);
  }

  void add(std::size_t truth, std::size_t predicted) {
    if (truth >= classes_ || predicted >= classes_) throw IndexError("confusion matrix: class index out of range");
    ++counts_[truth * classes_ + predicted];
  }

  std::size_t num_classes() const { return classes_; }
  std::uint64_t at(std::size_t truth, std::size_t predicted) const { return counts_[truth * classes_ + predicted]; }

  std::uint64_t total() const {
    std::uint64_t n = 0;
    for (auto c : counts_) n += c;
    return n;
  }

  BinaryCounts binary() const {
    if (classes_ != 2) throw ContractError("binary counts requested from a " + std::to_string(classes_) + "-class matrix");
    return {at(1, 1), at(0, 1), at(0, 0), at(1, 0)};
  }

 private:
  std::size_t classes_;
  std::vector<std::uint64_t> counts_;
};

enum class F1Average { macro, weighted };

/// 2TP / (2TP + FP + FN); 0 when the denominator is 0.
inline double f1(const BinaryCounts& c) {
  const double denom = 2.0 * c.tp + c.fp + c.fn;
  return denom == 0.0 ? 0.0 : 2.0 * c.tp / denom;
}

/// Matthews correlation; 0 when any marginal is empty.
inline double mcc(const BinaryCounts& c) {
  const double tp = c.tp, tn = c.tn, fp = c.fp, fn = c.fn;
  const double denom = (tp + fp) * (tp + fn) * (tn + fp) * (tn + fn);
  if (denom == 0.0) return 0.0;
  return (tp * tn - fp * fn) / std::sqrt(denom);
}

inline double accuracy(const ConfusionMatrix& cm) {
  const std::uint64_t n = cm.total();
  if (n == 0) return 0.0;
  std::uint64_t correct = 0;
  for (std::size_t i = 0; i < cm.num_classes(); ++i) correct += cm.at(i, i);
  return static_cast<double>(correct) / static_cast<double>(n);
}

/// Positive-class F1 for two classes; macro or support-weighted per-class F1 otherwise.
inline double f1(const ConfusionMatrix& cm, F1Average average = F1Average::macro) {
  if (cm.num_classes() == 2) return f1(cm.binary());
  const std::size_t c = cm.num_classes();
  double acc = 0.0;
  double weight_total = 0.0;
  for (std::size_t k = 0; k < c; ++k) {
    BinaryCounts one;
    for (std::size_t t = 0; t < c; ++t)
      for (std::size_t p = 0; p < c; ++p) {
        const auto n = cm.at(t, p);
        if (t == k && p == k) one.tp += n;
        else if (t == k) one.fn += n;
        else if (p == k) one.fp += n;
        else one.tn += n;
      }
    const double w = average == F1Average::macro ? 1.0 : static_cast<double>(one.tp + one.fn);
    acc += w * f1(one);
    weight_total += w;
  }
  return weight_total == 0.0 ? 0.0 : acc / weight_total;
}

/// Binary MCC; for C > 2 the multi-class generalisation (which reduces to the binary form at C = 2).
inline double mcc(const ConfusionMatrix& cm) {
  if (cm.num_classes() == 2) return mcc(cm.binary());
  const std::size_t c = cm.num_classes();
  std::vector<double> row(c, 0.0), col(c, 0.0);
  double correct = 0.0, n = 0.0;
  for (std::size_t t = 0; t < c; ++t)
    for (std::size_t p = 0; p < c; ++p) {
      const double v = static_cast<double>(cm.at(t, p));
      row[t] += v;
      col[p] += v;
      n += v;
      if (t == p) correct += v;
    }
  double rc = 0.0, rr = 0.0, cc = 0.0;
  for (std::size_t k = 0; k < c; ++k) {
    rc += row[k] * col[k];
    rr += row[k] * row[k];
    cc += col[k] * col[k];
  }
  const double denom = std::sqrt(n * n - cc) * std::sqrt(n * n - rr);
  return denom == 0.0 ? 0.0 : (correct * n - rc) / denom;
}

enum class Metric { accuracy, f1, mcc };

inline std::string_view to_string(Metric m) {
  switch (m) {
    case Metric::accuracy: return "accuracy";
    case Metric::f1: return "f1";
    case Metric::mcc: return "mcc";
  }
  return "?";
}

inline Metric parse_metric(std::string_view s) {
  if (s == "accuracy" || s == "acc") return Metric::accuracy;
  if (s == "f1" || s == "overall_f1") return Metric::f1;
  if (s == "mcc") return Metric::mcc;
  throw ConfigError("unknown metric '" + std::string(s) + "' (accuracy|f1|mcc)");
}

inline double compute_metric(Metric m, const ConfusionMatrix& cm, F1Average average = F1Average::macro) {
  switch (m) {
    case Metric::accuracy: return accuracy(cm);
    case Metric::f1: return f1(cm, average);
    case Metric::mcc: return mcc(cm);
  }
  return 0.0;
}

/// Overall value plus one entry per monitored slice (schema slots 1..k-1).
/// Empty slices are std::nullopt, never 0.
struct MetricRow {
  Metric metric = Metric::f1;
  double overall = 0.0;
  std::vector<std::optional<double>> slices;
  std::optional<double> avg_lift;
  std::optional<double> max_lift;
};

inline MetricRow per_slice(Metric metric, std::span<const std::size_t> predictions, std::span<const std::size_t> labels,
                           std::span<const SliceMembership> memberships, std::size_t num_slices,
                           std::size_t num_classes, F1Average average = F1Average::macro) {
  if (predictions.size() != labels.size() || memberships.size() != labels.size()) {
    throw DimensionError("per_slice: predictions, labels and memberships must be aligned");
  }
  MetricRow row;
  row.metric = metric;
  row.overall = compute_metric(metric, ConfusionMatrix(num_classes, labels, predictions), average);
  for (std::size_t s = 1; s < num_slices; ++s) {
    ConfusionMatrix cm(num_classes);
    for (std::size_t i = 0; i < labels.size(); ++i) {
      if (memberships[i].size() != num_slices) throw DimensionError("per_slice: membership width mismatch");
      if (memberships[i][s]) cm.add(labels[i], predictions[i]);
    }
    row.slices.push_back(cm.total() == 0 ? std::nullopt : std::optional<double>(compute_metric(metric, cm, average)));
  }
  return row;
}

enum class LiftMode { points, relative };

inline LiftMode parse_lift_mode(std::string_view s) {
  if (s == "points") return LiftMode::points;
  if (s == "relative") return LiftMode::relative;
  throw ConfigError("unknown lift mode '" + std::string(s) + "' (points|relative)");
}

struct Lift {
  std::optional<double> avg;
  std::optional<double> max;
};

/// Per-slice improvement over a baseline in percent, averaged and maximised over monitored slices.
///
/// points: 100 * (method - baseline). relative: 100 * (method - baseline) / baseline.
/// Slices that are NA on either side (or have a zero baseline in relative mode) are skipped.
inline Lift lift(const MetricRow& method, const MetricRow& baseline, LiftMode mode = LiftMode::points) {
  if (method.metric != baseline.metric) throw ContractError("lift: metrics differ");
  if (method.slices.size() != baseline.slices.size()) throw ContractError("lift: slice schemas differ");
  Lift out;
  double total = 0.0;
  std::size_t n = 0;
  for (std::size_t i = 0; i < method.slices.size(); ++i) {
    if (!method.slices[i] || !baseline.slices[i]) continue;
    const double diff = *method.slices[i] - *baseline.slices[i];
    double value = 0.0;
    if (mode == LiftMode::points) {
      value = 100.0 * diff;
    } else {
      if (*baseline.slices[i] == 0.0) continue;
      value = 100.0 * diff / std::abs(*baseline.slices[i]);
    }
    total += value;
    ++n;
    out.max = out.max ? std::max(*out.max, value) : value;
  }
  if (n > 0) out.avg = total / static_cast<double>(n);
  return out;
}

/// Overall-metric movement attributable to a slice: slice_size * slice_lift / total_size.
inline double overall_contribution(double slice_size, double slice_lift, double total_size) {
  if (!(slice_size > 0.0) || !(total_size > 0.0)) throw ContractError("overall_contribution: sizes must be positive");
  return slice_size * slice_lift / total_size;
}

}  // namespace slicemoa
