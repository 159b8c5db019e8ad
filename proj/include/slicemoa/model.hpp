#pragma once

#include <cmath>
#include <cstddef>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "slicemoa/attention.hpp"
#include "slicemoa/error.hpp"
#include "slicemoa/ops.hpp"
#include "slicemoa/random.hpp"
#include "slicemoa/tensor.hpp"

namespace slicemoa {

enum class ModelKind { baseline, sbl, sbl_moa };

inline std::string_view to_string(ModelKind kind) {
  switch (kind) {
    case ModelKind::baseline: return "baseline";
    case ModelKind::sbl: return "sbl";
    case ModelKind::sbl_moa: return "sbl-moa";
  }
  return "?";
}

inline ModelKind parse_model_kind(std::string_view s) {
  if (s == "baseline") return ModelKind::baseline;
  if (s == "sbl") return ModelKind::sbl;
  if (s == "sbl-moa" || s == "sbl_moa") return ModelKind::sbl_moa;
  throw ConfigError("unknown model kind '" + std::string(s) + "' (baseline|sbl|sbl-moa)");
}

struct ModelConfig {
  ModelKind kind = ModelKind::sbl_moa;
  std::size_t input_dim = 0;
  /// Slice count k including the base slice.
  std::size_t num_slices = 1;
  std::size_t num_classes = 2;
  /// Baseline hidden width.
  std::size_t hidden = 128;
  /// Applied to the embedding before every head.
  double dropout = 0.5;
  /// Biases on indicator, shared-head and predictor maps. The baseline always has biases.
  bool bias = false;
  MoAConfig moa;

  void validate() const {
    if (input_dim == 0) throw ConfigError("model input dimension must be positive");
    if (num_slices == 0) throw ConfigError("model needs at least the base slice (k >= 1)");
    if (num_classes < 2) throw ConfigError("model needs at least 2 classes");
    if (kind == ModelKind::baseline && hidden == 0) throw ConfigError("baseline hidden width must be positive");
    if (!(dropout >= 0.0 && dropout < 1.0)) throw ParameterError("dropout must be in [0, 1)");
    if (kind != ModelKind::baseline) moa.validate(num_classes);
  }
};

struct Parameter {
  std::string name;
  Tensor value;
};

/// Every intermediate of one batched forward pass. Slice tensors are empty for the baseline;
/// `p2`, `s2` are empty for plain SBL.
struct ForwardTrace {
  Tensor x;                           // [B x d], after dropout
  Tensor h;                           // [B x k] indicator logits
  Tensor r;                           // [B x k x d] expert representations
  std::vector<Tensor> expert_logits;  // k tensors of [B x C], shared head outputs
  Tensor expert_conf;                 // [B x k] scalar expert logits (binary + enabled only)
  Tensor p1;                          // [B x k] membership attention
  Tensor p2;                          // [B x k] dot-product attention
  Tensor s1;                          // [B x d]
  Tensor s2;                          // [B x d]
  Tensor s;                           // [B x d]
  Tensor logits;                      // [B x C]
};

struct LossBreakdown {
  Tensor total;
  Tensor indicator;
  Tensor expert;
  Tensor task;
};

struct ForwardOptions {
  bool training = false;
  Rng* dropout_rng = nullptr;
  Rng* gumbel_rng = nullptr;
};

/// Indicator logits h[b,i] = x_b . w^f_i (+ bias), stacked to [B x k].
inline Tensor forward_indicators(const Tensor& x, const Tensor& indicator_weight, const Tensor* indicator_bias = nullptr) {
  Tensor h = matmul(x, indicator_weight);
  return indicator_bias != nullptr ? add_rowwise(h, *indicator_bias) : h;
}

struct ExpertOutputs {
  Tensor r;                    // [B x k x d]
  std::vector<Tensor> logits;  // k x [B x C]
  std::vector<Tensor> reps;    // k x [B x d]
};

/// Expert representations r_i = g_i(x) and shared-head predictions phi(r_i; w_s).
/// The same head weights are applied to every expert.
inline ExpertOutputs forward_experts(const Tensor& x, std::span<const Tensor> expert_weights, const Tensor& head_weight,
                                     const Tensor* head_bias = nullptr) {
  ExpertOutputs out;
  for (const Tensor& w : expert_weights) {
    Tensor ri = matmul(x, w);
    Tensor yi = matmul(ri, head_weight);
    out.logits.push_back(head_bias != nullptr ? add_rowwise(yi, *head_bias) : yi);
    out.reps.push_back(std::move(ri));
  }
  out.r = stack(out.reps);
  return out;
}

/// Sum over samples and slices of binary cross-entropy(sigmoid(h), gamma).
/// `gamma` is row-major [B x k] with 0/1 entries.
inline Tensor loss_indicators(const Tensor& h, std::span<const double> gamma) { return bce_with_logits(h, gamma); }

/// Sum over samples of sum_i gamma_i * CE(expert_i logits, y): expert i only learns from its slice.
inline Tensor loss_experts(const std::vector<Tensor>& expert_logits, std::span<const double> gamma,
                           std::span<const std::size_t> labels) {
  const std::size_t k = expert_logits.size();
  const std::size_t batch = labels.size();
  if (gamma.size() != batch * k) throw DimensionError("loss_experts: gamma size does not match batch x slices");
  Tensor total;
  std::vector<double> weights(batch);
  for (std::size_t i = 0; i < k; ++i) {
    for (std::size_t b = 0; b < batch; ++b) weights[b] = gamma[b * k + i];
    Tensor term = cross_entropy(expert_logits[i], labels, weights);
    total = total.defined() ? add(total, term) : term;
  }
  return total;
}

/// Sum over samples of CE(eta(s; w_p), y).
inline Tensor loss_task(const Tensor& logits, std::span<const std::size_t> labels) {
  return cross_entropy(logits, labels);
}

/// Unweighted sum of the three components.
inline Tensor total_loss(const Tensor& indicator, const Tensor& expert, const Tensor& task) {
  return add(add(indicator, expert), task);
}

/// Baseline feed-forward network, SBL, or SBL with a mixture of attentions.
class SliceModel {
 public:
  SliceModel(ModelConfig cfg, Rng& init_rng) : cfg_(std::move(cfg)) {
    cfg_.validate();
    const std::size_t d = cfg_.input_dim, k = cfg_.num_slices, c = cfg_.num_classes;
    if (cfg_.kind == ModelKind::baseline) {
      const std::size_t h = cfg_.hidden;
      add_uniform("ffn.0.weight", {d, h}, d, init_rng);
      add_uniform("ffn.0.bias", {h}, d, init_rng);
      add_uniform("ffn.1.weight", {h, h}, h, init_rng);
      add_uniform("ffn.1.bias", {h}, h, init_rng);
      add_uniform("ffn.2.weight", {h, c}, h, init_rng);
      add_uniform("ffn.2.bias", {c}, h, init_rng);
      return;
    }
    add_uniform("indicator.weight", {d, k}, d, init_rng);
    if (cfg_.bias) add_uniform("indicator.bias", {k}, d, init_rng);
    for (std::size_t i = 0; i < k; ++i) add_uniform("expert." + std::to_string(i) + ".weight", {d, d}, d, init_rng);
    add_uniform("shared_head.weight", {d, c}, d, init_rng);
    if (cfg_.bias) add_uniform("shared_head.bias", {c}, d, init_rng);
    if (cfg_.kind == ModelKind::sbl_moa) add_uniform("attention.A", {d, k}, d, init_rng);
    add_uniform("predictor.weight", {d, c}, d, init_rng);
    if (cfg_.bias) add_uniform("predictor.bias", {c}, d, init_rng);
  }

  const ModelConfig& config() const { return cfg_; }

  std::vector<Parameter>& parameters() { return params_; }
  const std::vector<Parameter>& parameters() const { return params_; }

  const Tensor& parameter(std::string_view name) const {
    for (const auto& p : params_)
      if (p.name == name) return p.value;
    throw ContractError("model has no parameter '" + std::string(name) + "'");
  }
  Tensor& parameter(std::string_view name) {
    return const_cast<Tensor&>(static_cast<const SliceModel&>(*this).parameter(name));
  }
  bool has_parameter(std::string_view name) const {
    for (const auto& p : params_)
      if (p.name == name) return true;
    return false;
  }

  std::size_t parameter_count() const {
    std::size_t n = 0;
    for (const auto& p : params_) n += p.value.numel();
    return n;
  }

  void zero_grad() {
    for (auto& p : params_) p.value.zero_grad();
  }

  /// Forward pass over a batch x [B x d].
  ForwardTrace forward(const Tensor& x, const ForwardOptions& opt = {}) const {
    if (x.dim() != 2 || x.size(1) != cfg_.input_dim) {
      throw DimensionError("forward: expected [B x " + std::to_string(cfg_.input_dim) + "] input, got " +
                           to_string(x.shape()));
    }
    ForwardTrace t;
    if (opt.training && cfg_.dropout > 0.0) {
      if (opt.dropout_rng == nullptr) throw ContractError("forward: training with dropout needs a dropout RNG");
      t.x = dropout(x, cfg_.dropout, true, *opt.dropout_rng);
    } else {
      t.x = x;
    }

    if (cfg_.kind == ModelKind::baseline) {
      Tensor z = relu(add_rowwise(matmul(t.x, parameter("ffn.0.weight")), parameter("ffn.0.bias")));
      z = relu(add_rowwise(matmul(z, parameter("ffn.1.weight")), parameter("ffn.1.bias")));
      t.logits = add_rowwise(matmul(z, parameter("ffn.2.weight")), parameter("ffn.2.bias"));
      return t;
    }

    const MoAConfig& moa = cfg_.moa;
    const bool sampling = moa.phi != Phi::softmax && (opt.training || moa.stochastic_eval);
    if (sampling && opt.gumbel_rng == nullptr) throw ContractError("forward: Gumbel sampling needs a gumbel RNG");
    Rng unused(0);
    Rng& gumbel = opt.gumbel_rng != nullptr ? *opt.gumbel_rng : unused;

    t.h = forward_indicators(t.x, parameter("indicator.weight"), optional_param("indicator.bias"));
    std::vector<Tensor> experts;
    for (std::size_t i = 0; i < cfg_.num_slices; ++i) experts.push_back(parameter("expert." + std::to_string(i) + ".weight"));
    ExpertOutputs ex = forward_experts(t.x, experts, parameter("shared_head.weight"), optional_param("shared_head.bias"));
    t.r = ex.r;
    t.expert_logits = ex.logits;

    if (moa.use_expert_confidence) {
      // cfg_.validate() already rejected this for C != 2. The scalar logit of a
      // two-way head is the log-odds difference of its outputs.
      const Tensor log_odds({2, 1}, {-1.0, 1.0});
      std::vector<Tensor> cols;
      for (const Tensor& yi : ex.logits) cols.push_back(matmul(yi, log_odds));
      t.expert_conf = concat_columns(cols);
    }

    t.p1 = membership_attention(t.h, t.expert_conf.defined() ? &t.expert_conf : nullptr, cfg_.num_classes, moa.phi,
                                moa.tau, gumbel, sampling);
    t.s1 = weighted_sum(t.r, t.p1);
    if (cfg_.kind == ModelKind::sbl_moa) {
      const Tensor& a = parameter("attention.A");
      t.p2 = dot_product_attention(a, t.x, moa.phi, moa.tau, gumbel, sampling);
      t.s2 = weight_prototypes(a, t.p2);
      t.s = combine(t.s1, t.s2, moa.combine_op);
    } else {
      t.s = t.s1;
    }
    Tensor logits = matmul(t.s, parameter("predictor.weight"));
    const Tensor* pb = optional_param("predictor.bias");
    t.logits = pb != nullptr ? add_rowwise(logits, *pb) : logits;
    return t;
  }

  /// Batch-mean loss components. `gamma` is row-major [B x k] membership (0/1).
  LossBreakdown loss(const ForwardTrace& t, std::span<const double> gamma, std::span<const std::size_t> labels) const {
    const std::size_t batch = labels.size();
    if (batch == 0) throw ContractError("loss: empty batch");
    const double inv = 1.0 / static_cast<double>(batch);
    LossBreakdown out;
    out.task = scale(loss_task(t.logits, labels), inv);
    if (cfg_.kind == ModelKind::baseline) {
      out.indicator = Tensor::scalar(0.0);
      out.expert = Tensor::scalar(0.0);
      out.total = out.task;
      return out;
    }
    if (gamma.size() != batch * cfg_.num_slices) {
      throw DimensionError("loss: gamma has " + std::to_string(gamma.size()) + " entries, expected " +
                           std::to_string(batch * cfg_.num_slices));
    }
    out.indicator = scale(loss_indicators(t.h, gamma), inv);
    out.expert = scale(loss_experts(t.expert_logits, gamma, labels), inv);
    out.total = total_loss(out.indicator, out.expert, out.task);
    return out;
  }

 private:
  const Tensor* optional_param(std::string_view name) const {
    for (const auto& p : params_)
      if (p.name == name) return &p.value;
    return nullptr;
  }

  void add_uniform(std::string name, Shape shape, std::size_t fan_in, Rng& rng) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
    std::vector<double> values(shape_numel(shape));
    for (double& v : values) v = rng.uniform(-bound, bound);
    params_.push_back({std::move(name), Tensor(std::move(shape), std::move(values), true)});
  }

  ModelConfig cfg_;
  std::vector<Parameter> params_;
};

}  // namespace slicemoa
