#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <limits>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "slicemoa/error.hpp"
#include "slicemoa/metrics.hpp"
#include "slicemoa/model.hpp"
#include "slicemoa/random.hpp"
#include "slicemoa/slicing.hpp"
#include "slicemoa/tensor.hpp"

namespace slicemoa {

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  /// Decoupled: theta <- theta - lr * weight_decay * theta, separate from the gradient.
  double weight_decay = 0.0;
};

/// Adam with bias correction and decoupled weight decay.
class Adam {
 public:
  Adam(std::vector<Parameter>& params, AdamConfig cfg) : params_(params), cfg_(cfg) {
    if (!(cfg.lr > 0.0)) throw ConfigError("adam: learning rate must be positive");
    if (!(cfg.weight_decay >= 0.0)) throw ConfigError("adam: weight decay must be non-negative");
    for (const auto& p : params_) {
      m_.emplace_back(p.value.numel(), 0.0);
      v_.emplace_back(p.value.numel(), 0.0);
    }
  }

  std::size_t steps() const { return t_; }

  void step() {
    for (const auto& p : params_) {
      for (double g : p.value.grad()) {
        if (!std::isfinite(g)) throw NumericError("non-finite gradient in parameter '" + p.name + "'");
      }
    }
    ++t_;
    const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
    const double decay = 1.0 - cfg_.lr * cfg_.weight_decay;
    for (std::size_t i = 0; i < params_.size(); ++i) {
      Tensor& value = params_[i].value;
      auto theta = value.mutable_data();
      const auto grad = value.grad();
      auto& m = m_[i];
      auto& v = v_[i];
      for (std::size_t j = 0; j < theta.size(); ++j) {
        const double g = grad.empty() ? 0.0 : grad[j];
        m[j] = cfg_.beta1 * m[j] + (1.0 - cfg_.beta1) * g;
        v[j] = cfg_.beta2 * v[j] + (1.0 - cfg_.beta2) * g * g;
        theta[j] *= decay;
        theta[j] -= cfg_.lr * (m[j] / bc1) / (std::sqrt(v[j] / bc2) + cfg_.eps);
      }
    }
  }

 private:
  std::vector<Parameter>& params_;
  AdamConfig cfg_;
  std::vector<std::vector<double>> m_;
  std::vector<std::vector<double>> v_;
  std::size_t t_ = 0;
};

/// Embedded samples with slice memberships and labels.
struct LabeledSplit {
  std::size_t dim = 0;
  std::vector<double> features;  // row-major [n x dim]
  std::vector<SliceMembership> memberships;
  std::vector<std::size_t> labels;

  std::size_t size() const { return labels.size(); }

  void validate(std::size_t num_slices) const {
    if (features.size() != labels.size() * dim || memberships.size() != labels.size()) {
      throw DimensionError("labeled split: features, memberships and labels are not aligned");
    }
    for (const auto& g : memberships) {
      if (g.size() != num_slices) {
        throw DimensionError("labeled split: membership width " + std::to_string(g.size()) + " vs " +
                             std::to_string(num_slices) + " slices");
      }
    }
  }

  Tensor batch_features(std::span<const std::size_t> rows) const {
    std::vector<double> out;
    out.reserve(rows.size() * dim);
    for (std::size_t r : rows) out.insert(out.end(), features.begin() + r * dim, features.begin() + (r + 1) * dim);
    return Tensor({rows.size(), dim}, std::move(out));
  }

  std::vector<double> batch_gamma(std::span<const std::size_t> rows) const {
    std::vector<double> out;
    for (std::size_t r : rows)
      for (auto g : memberships[r]) out.push_back(g);
    return out;
  }

  std::vector<std::size_t> batch_labels(std::span<const std::size_t> rows) const {
    std::vector<std::size_t> out;
    for (std::size_t r : rows) out.push_back(labels[r]);
    return out;
  }
};

struct TrainConfig {
  double lr = 1e-3;
  double weight_decay = 0.01;
  std::size_t max_epochs = 500;
  std::size_t patience = 50;
  std::size_t batch_size = 32;
  std::uint64_t seed = 0;
  /// Defaults to MCC for binary tasks and accuracy otherwise.
  std::optional<Metric> selection_metric;
  F1Average f1_average = F1Average::macro;

  void validate() const {
    if (!(lr > 0.0)) throw ConfigError("train.lr must be positive");
    if (!(weight_decay >= 0.0)) throw ConfigError("train.weight_decay must be non-negative");
    if (max_epochs == 0) throw ConfigError("train.max_epochs must be positive");
    if (patience == 0) throw ConfigError("train.patience must be at least 1");
    if (patience > max_epochs) throw ConfigError("train.patience must not exceed train.max_epochs");
    if (batch_size == 0) throw ConfigError("train.batch_size must be positive");
  }

  Metric selection_for(std::size_t num_classes) const {
    return selection_metric.value_or(num_classes == 2 ? Metric::mcc : Metric::accuracy);
  }
};

struct EpochRecord {
  std::size_t epoch = 0;
  double loss = 0.0;
  double indicator_loss = 0.0;
  double expert_loss = 0.0;
  double task_loss = 0.0;
  double val_score = 0.0;
  double best_score = 0.0;
};

struct TrainResult {
  std::vector<EpochRecord> history;
  Metric selection_metric = Metric::mcc;
  double best_score = -std::numeric_limits<double>::infinity();
  std::size_t best_epoch = 0;
};

/// Argmax predictions in evaluation mode (no dropout; stochastic phis fall back to softmax
/// unless the model asks for stochastic evaluation, which then draws from `gumbel_rng`).
inline std::vector<std::size_t> predict(const SliceModel& model, const LabeledSplit& split, Rng* gumbel_rng = nullptr,
                                        std::size_t chunk = 512) {
  std::vector<std::size_t> out;
  out.reserve(split.size());
  std::vector<std::size_t> rows;
  Rng fallback(0, "eval-gumbel");
  for (std::size_t start = 0; start < split.size(); start += chunk) {
    rows.resize(std::min(chunk, split.size() - start));
    std::iota(rows.begin(), rows.end(), start);
    ForwardOptions opt;
    opt.gumbel_rng = gumbel_rng != nullptr ? gumbel_rng : &fallback;
    const ForwardTrace t = model.forward(split.batch_features(rows), opt);
    const auto idx = argmax_rows(t.logits);
    out.insert(out.end(), idx.begin(), idx.end());
  }
  return out;
}

inline double score(const SliceModel& model, const LabeledSplit& split, Metric metric,
                    F1Average average = F1Average::macro) {
  const auto preds = predict(model, split);
  return compute_metric(metric, ConfusionMatrix(model.config().num_classes, split.labels, preds), average);
}

/// Mini-batch training with early stopping on a validation metric.
///
/// Stops after `max_epochs` or once the validation score has not improved for `patience`
/// consecutive epochs, then restores the parameters of the best epoch. Shuffling, dropout
/// and Gumbel noise draw from independent streams derived from `cfg.seed`.
inline TrainResult train(SliceModel& model, const LabeledSplit& train_split, const LabeledSplit& val_split,
                         const TrainConfig& cfg, const std::function<void(const EpochRecord&)>& on_epoch = {}) {
  cfg.validate();
  if (train_split.size() == 0) throw ConfigError("training split is empty");
  if (val_split.size() == 0) throw ConfigError("validation split is empty");
  const ModelConfig& mc = model.config();
  train_split.validate(mc.num_slices);
  val_split.validate(mc.num_slices);
  if (train_split.dim != mc.input_dim || val_split.dim != mc.input_dim) {
    throw DimensionError("training data width does not match model input dimension");
  }

  Rng shuffle_rng(cfg.seed, "shuffle");
  Rng dropout_rng(cfg.seed, "dropout");
  Rng gumbel_rng(cfg.seed, "gumbel");
  Adam opt(model.parameters(), AdamConfig{cfg.lr, 0.9, 0.999, 1e-8, cfg.weight_decay});

  TrainResult result;
  result.selection_metric = cfg.selection_for(mc.num_classes);
  std::vector<std::vector<double>> best_params;
  std::size_t since_improvement = 0;
  std::vector<std::size_t> order(train_split.size());
  std::iota(order.begin(), order.end(), 0);

  for (std::size_t epoch = 1; epoch <= cfg.max_epochs; ++epoch) {
    shuffle_rng.shuffle(order);
    EpochRecord rec;
    rec.epoch = epoch;
    for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
      const std::size_t end = std::min(order.size(), start + cfg.batch_size);
      const std::span<const std::size_t> rows(order.data() + start, end - start);
      model.zero_grad();
      ForwardOptions fo{true, &dropout_rng, &gumbel_rng};
      const ForwardTrace t = model.forward(train_split.batch_features(rows), fo);
      const auto gamma = train_split.batch_gamma(rows);
      const auto labels = train_split.batch_labels(rows);
      const LossBreakdown loss = model.loss(t, gamma, labels);
      if (!std::isfinite(loss.total.item())) throw NumericError("non-finite loss at epoch " + std::to_string(epoch));
      loss.total.backward();
      opt.step();
      const double w = static_cast<double>(rows.size());
      rec.loss += w * loss.total.item();
      rec.indicator_loss += w * loss.indicator.item();
      rec.expert_loss += w * loss.expert.item();
      rec.task_loss += w * loss.task.item();
    }
    const double n = static_cast<double>(order.size());
    rec.loss /= n;
    rec.indicator_loss /= n;
    rec.expert_loss /= n;
    rec.task_loss /= n;
    rec.val_score = score(model, val_split, result.selection_metric, cfg.f1_average);

    if (rec.val_score > result.best_score) {
      result.best_score = rec.val_score;
      result.best_epoch = epoch;
      since_improvement = 0;
      best_params.clear();
      for (const auto& p : model.parameters()) best_params.push_back(p.value.values());
    } else {
      ++since_improvement;
    }
    rec.best_score = result.best_score;
    result.history.push_back(rec);
    if (on_epoch) on_epoch(rec);
    if (since_improvement >= cfg.patience) break;
  }

  auto& params = model.parameters();
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto dst = params[i].value.mutable_data();
    std::copy(best_params[i].begin(), best_params[i].end(), dst.begin());
    params[i].value.zero_grad();
  }
  return result;
}

}  // namespace slicemoa
