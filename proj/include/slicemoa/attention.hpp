#pragma once

#include <cmath>
#include <string>
#include <string_view>
#include <vector>

#include "slicemoa/error.hpp"
#include "slicemoa/ops.hpp"
#include "slicemoa/random.hpp"
#include "slicemoa/tensor.hpp"

namespace slicemoa {

/// How a slice distribution is formed from logits.
enum class Phi { softmax, gumbel_soft, gumbel_hard };

/// How the membership and dot-product representations are joined.
enum class CombineOp { add, mul };

inline std::string_view to_string(Phi phi) {
  switch (phi) {
    case Phi::softmax: return "softmax";
    case Phi::gumbel_soft: return "gumbel-soft";
    case Phi::gumbel_hard: return "gumbel-hard";
  }
  return "?";
}

inline std::string_view to_string(CombineOp op) { return op == CombineOp::add ? "add" : "mul"; }

inline Phi parse_phi(std::string_view s) {
  if (s == "softmax") return Phi::softmax;
  if (s == "gumbel-soft" || s == "gumbel_soft") return Phi::gumbel_soft;
  if (s == "gumbel-hard" || s == "gumbel_hard") return Phi::gumbel_hard;
  throw ConfigError("unknown phi '" + std::string(s) + "' (softmax|gumbel-soft|gumbel-hard)");
}

inline CombineOp parse_combine_op(std::string_view s) {
  if (s == "add") return CombineOp::add;
  if (s == "mul") return CombineOp::mul;
  throw ConfigError("unknown combine op '" + std::string(s) + "' (add|mul)");
}

struct MoAConfig {
  Phi phi = Phi::softmax;
  CombineOp combine_op = CombineOp::mul;
  double tau = 1.0;
  /// Adds |expert logit| to membership logits. Binary tasks only.
  bool use_expert_confidence = false;
  /// Keep sampling at evaluation time instead of falling back to softmax.
  bool stochastic_eval = false;

  void validate(std::size_t num_classes) const {
    if (!(tau > 0.0) || !std::isfinite(tau)) throw ParameterError("tau must be positive, got " + std::to_string(tau));
    if (use_expert_confidence && num_classes != 2) {
      throw ContractError("expert confidence is only defined for binary tasks (got " + std::to_string(num_classes) +
                          " classes); its per-class shape cannot be added to slice logits");
    }
  }
};

/// Gumbel(0, 1) sample from a uniform draw u in (0, 1).
inline double gumbel_noise(double u) { return -std::log(-std::log(u)); }

/// Relaxed categorical sample over the last axis of [k] or [B x k] logits.
///
/// Soft: softmax((logits + g) / tau) with g ~ Gumbel(0, 1).
/// Hard: the one-hot argmax of the soft sample in the forward pass, with the
/// soft sample's gradient in the backward pass (straight-through).
inline Tensor gumbel_softmax(const Tensor& logits, double tau, Rng& rng, bool hard) {
  if (!(tau > 0.0)) throw ParameterError("gumbel_softmax: tau must be positive, got " + std::to_string(tau));
  std::vector<double> noise(logits.numel());
  for (double& g : noise) g = gumbel_noise(rng.uniform_open());
  Tensor perturbed = add(logits, Tensor(logits.shape(), std::move(noise)));
  Tensor soft = softmax(tau == 1.0 ? perturbed : scale(perturbed, 1.0 / tau));
  if (!hard) return soft;
  const std::size_t cols = soft.shape().back();
  std::vector<double> one_hot(soft.numel(), 0.0);
  const auto idx = argmax_rows(soft);
  for (std::size_t r = 0; r < idx.size(); ++r) one_hot[r * cols + idx[r]] = 1.0;
  return straight_through(std::move(one_hot), soft);
}

/// Applies phi to logits. When `sampling` is false, stochastic phis fall back to softmax.
inline Tensor apply_phi(const Tensor& logits, Phi phi, double tau, Rng& rng, bool sampling = true) {
  if (!sampling || phi == Phi::softmax) return softmax(logits);
  return gumbel_softmax(logits, tau, rng, phi == Phi::gumbel_hard);
}

/// Membership attention p1 = phi(h) or phi(h + |conf|).
///
/// `h` holds indicator logits ([k] or [B x k]); `expert_conf`, when given, holds one
/// scalar expert logit per slice with the same shape and is only legal for binary tasks.
inline Tensor membership_attention(const Tensor& h, const Tensor* expert_conf, std::size_t num_classes, Phi phi,
                                   double tau, Rng& rng, bool sampling = true) {
  if (expert_conf == nullptr) return apply_phi(h, phi, tau, rng, sampling);
  if (num_classes != 2) {
    throw ContractError("membership_attention: expert confidence supplied for a " + std::to_string(num_classes) +
                        "-class task; per-class confidences do not match the k slice logits");
  }
  return apply_phi(add(h, absolute(*expert_conf)), phi, tau, rng, sampling);
}

/// Dot-product attention p2 = phi(A^T x).
///
/// `attention` is [d x k]; `x` is a single embedding [d] or a batch [B x d].
inline Tensor dot_product_attention(const Tensor& attention, const Tensor& x, Phi phi, double tau, Rng& rng,
                                    bool sampling = true) {
  if (attention.dim() != 2) throw DimensionError("dot_product_attention: A must be 2-D, got " + to_string(attention.shape()));
  const std::size_t d = attention.size(0);
  if (x.dim() == 1) {
    if (x.size(0) != d) {
      throw DimensionError("dot_product_attention: A " + to_string(attention.shape()) + " vs x " + to_string(x.shape()));
    }
    Tensor logits = matmul(reshape(x, {1, d}), attention);
    return reshape(apply_phi(logits, phi, tau, rng, sampling), {attention.size(1)});
  }
  if (x.dim() != 2 || x.size(1) != d) {
    throw DimensionError("dot_product_attention: A " + to_string(attention.shape()) + " vs x " + to_string(x.shape()));
  }
  return apply_phi(matmul(x, attention), phi, tau, rng, sampling);
}

/// Probability-weighted column mixture M . p for M [d x k] and p [k].
inline Tensor weight_slices(const Tensor& columns, const Tensor& p) {
  if (columns.dim() != 2 || p.dim() != 1 || columns.size(1) != p.size(0)) {
    throw DimensionError("weight_slices: M " + to_string(columns.shape()) + " vs p " + to_string(p.shape()));
  }
  return reshape(matmul(columns, reshape(p, {p.size(0), 1})), {columns.size(0)});
}

/// Batched form of weight_slices against the shared matrix A: row b is A . p[b].
inline Tensor weight_prototypes(const Tensor& attention, const Tensor& p_batch) {
  return matmul(p_batch, transpose(attention));
}

inline Tensor combine(const Tensor& s1, const Tensor& s2, CombineOp op) {
  return op == CombineOp::add ? add(s1, s2) : mul(s1, s2);
}

struct MoAOutput {
  Tensor p1;
  Tensor p2;
  Tensor s1;
  Tensor s2;
  Tensor s;
};

/// Mixture of attentions for one sample.
///
/// `reps` is the expert matrix r [d x k], `h` the indicator logits [k], `attention`
/// the prototype matrix A [d x k] and `x` the embedding [d]. `expert_conf` is the
/// optional per-slice expert logit [k] (binary tasks only).
inline MoAOutput moa_combine(const Tensor& reps, const Tensor& h, const Tensor& attention, const Tensor& x,
                             const MoAConfig& cfg, std::size_t num_classes, Rng& rng, const Tensor* expert_conf = nullptr,
                             bool sampling = true) {
  if (reps.dim() != 2 || attention.dim() != 2 || reps.shape() != attention.shape()) {
    throw DimensionError("moa_combine: r " + to_string(reps.shape()) + " vs A " + to_string(attention.shape()));
  }
  if (h.dim() != 1 || h.size(0) != reps.size(1)) {
    throw DimensionError("moa_combine: h " + to_string(h.shape()) + " vs r " + to_string(reps.shape()));
  }
  if (expert_conf != nullptr && !cfg.use_expert_confidence) {
    throw ContractError("moa_combine: expert confidence given but disabled in MoAConfig");
  }
  cfg.validate(num_classes);
  MoAOutput out;
  out.p1 = membership_attention(h, expert_conf, num_classes, cfg.phi, cfg.tau, rng, sampling);
  out.p2 = dot_product_attention(attention, x, cfg.phi, cfg.tau, rng, sampling);
  out.s1 = weight_slices(reps, out.p1);
  out.s2 = weight_slices(attention, out.p2);
  out.s = combine(out.s1, out.s2, cfg.combine_op);
  return out;
}

}  // namespace slicemoa
