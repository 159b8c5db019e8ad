#pragma once

#include <algorithm>
#include <cmath>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "slicemoa/error.hpp"
#include "slicemoa/random.hpp"
#include "slicemoa/tensor.hpp"

namespace slicemoa {

namespace detail {

inline void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw DimensionError(std::string(op) + ": shape mismatch " + to_string(a.shape()) + " vs " +
                         to_string(b.shape()));
  }
}

inline void require_finite(std::span<const double> values, const char* op) {
  for (double v : values) {
    if (!std::isfinite(v)) throw NumericError(std::string(op) + ": non-finite input value");
  }
}

// Rows x columns view over the last axis of a 1-D or 2-D tensor.
struct RowView {
  std::size_t rows;
  std::size_t cols;
};

inline RowView rows_of(const Tensor& t, const char* op) {
  if (t.dim() == 1) return {1, t.size(0)};
  if (t.dim() == 2) return {t.size(0), t.size(1)};
  throw DimensionError(std::string(op) + ": expected 1-D or 2-D tensor, got " + to_string(t.shape()));
}

}  // namespace detail

/// Matrix product of a [m x n] and b [n x p].
inline Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.dim() != 2 || b.dim() != 2 || a.size(1) != b.size(0)) {
    throw DimensionError("matmul: incompatible shapes " + to_string(a.shape()) + " and " +
                         to_string(b.shape()));
  }
  const std::size_t m = a.size(0), n = a.size(1), p = b.size(1);
  std::vector<double> out(m * p, 0.0);
  const auto A = a.data();
  const auto B = b.data();
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t k = 0; k < n; ++k) {
      const double aik = A[i * n + k];
      if (aik == 0.0) continue;
      const double* brow = &B[k * p];
      double* orow = &out[i * p];
      for (std::size_t j = 0; j < p; ++j) orow[j] += aik * brow[j];
    }
  }
  return Tensor::make_result({m, p}, std::move(out), {a, b}, "matmul", [m, n, p](detail::Node& self) {
    const auto& g = self.grad;
    const auto A = detail::input_data(self, 0);
    const auto B = detail::input_data(self, 1);
    if (auto ga = detail::input_grad(self, 0); !ga.empty()) {
      for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t k = 0; k < n; ++k) {
          double acc = 0.0;
          for (std::size_t j = 0; j < p; ++j) acc += g[i * p + j] * B[k * p + j];
          ga[i * n + k] += acc;
        }
      }
    }
    if (auto gb = detail::input_grad(self, 1); !gb.empty()) {
      for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t k = 0; k < n; ++k) {
          const double aik = A[i * n + k];
          if (aik == 0.0) continue;
          for (std::size_t j = 0; j < p; ++j) gb[k * p + j] += aik * g[i * p + j];
        }
      }
    }
  });
}

inline Tensor transpose(const Tensor& a) {
  if (a.dim() != 2) throw DimensionError("transpose: expected 2-D tensor, got " + to_string(a.shape()));
  const std::size_t m = a.size(0), n = a.size(1);
  std::vector<double> out(m * n);
  const auto A = a.data();
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) out[j * m + i] = A[i * n + j];
  return Tensor::make_result({n, m}, std::move(out), {a}, "transpose", [m, n](detail::Node& self) {
    auto ga = detail::input_grad(self, 0);
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < n; ++j) ga[i * n + j] += self.grad[j * m + i];
  });
}

/// Same data under a new shape with equal element count.
inline Tensor reshape(const Tensor& a, Shape shape) {
  if (shape_numel(shape) != a.numel()) {
    throw DimensionError("reshape: cannot view " + to_string(a.shape()) + " as " + to_string(shape));
  }
  return Tensor::make_result(std::move(shape), a.values(), {a}, "reshape", [](detail::Node& self) {
    auto ga = detail::input_grad(self, 0);
    for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += self.grad[i];
  });
}

enum class BinaryOp { add, sub, mul };

/// Pointwise add/sub/mul of equally shaped tensors.
inline Tensor elementwise(const Tensor& a, const Tensor& b, BinaryOp op) {
  detail::require_same_shape(a, b, "elementwise");
  const auto A = a.data();
  const auto B = b.data();
  std::vector<double> out(A.size());
  for (std::size_t i = 0; i < out.size(); ++i) {
    switch (op) {
      case BinaryOp::add: out[i] = A[i] + B[i]; break;
      case BinaryOp::sub: out[i] = A[i] - B[i]; break;
      case BinaryOp::mul: out[i] = A[i] * B[i]; break;
    }
  }
  const char* name = op == BinaryOp::add ? "add" : op == BinaryOp::sub ? "sub" : "mul";
  return Tensor::make_result(a.shape(), std::move(out), {a, b}, name, [op](detail::Node& self) {
    const auto& g = self.grad;
    const auto A = detail::input_data(self, 0);
    const auto B = detail::input_data(self, 1);
    if (auto ga = detail::input_grad(self, 0); !ga.empty()) {
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += op == BinaryOp::mul ? g[i] * B[i] : g[i];
    }
    if (auto gb = detail::input_grad(self, 1); !gb.empty()) {
      for (std::size_t i = 0; i < g.size(); ++i) {
        gb[i] += op == BinaryOp::mul ? g[i] * A[i] : op == BinaryOp::sub ? -g[i] : g[i];
      }
    }
  });
}

inline Tensor add(const Tensor& a, const Tensor& b) { return elementwise(a, b, BinaryOp::add); }
inline Tensor sub(const Tensor& a, const Tensor& b) { return elementwise(a, b, BinaryOp::sub); }
inline Tensor mul(const Tensor& a, const Tensor& b) { return elementwise(a, b, BinaryOp::mul); }

/// Adds bias [n] to every row of a [B x n].
inline Tensor add_rowwise(const Tensor& a, const Tensor& bias) {
  if (a.dim() != 2 || bias.dim() != 1 || bias.size(0) != a.size(1)) {
    throw DimensionError("add_rowwise: shapes " + to_string(a.shape()) + " and " + to_string(bias.shape()));
  }
  const std::size_t rows = a.size(0), cols = a.size(1);
  std::vector<double> out = a.values();
  const auto b = bias.data();
  for (std::size_t i = 0; i < rows; ++i)
    for (std::size_t j = 0; j < cols; ++j) out[i * cols + j] += b[j];
  return Tensor::make_result(a.shape(), std::move(out), {a, bias}, "add_rowwise", [rows, cols](detail::Node& self) {
    if (auto ga = detail::input_grad(self, 0); !ga.empty()) {
      for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += self.grad[i];
    }
    if (auto gb = detail::input_grad(self, 1); !gb.empty()) {
      for (std::size_t i = 0; i < rows; ++i)
        for (std::size_t j = 0; j < cols; ++j) gb[j] += self.grad[i * cols + j];
    }
  });
}

inline Tensor scale(const Tensor& a, double factor) {
  std::vector<double> out = a.values();
  for (double& v : out) v *= factor;
  return Tensor::make_result(a.shape(), std::move(out), {a}, "scale", [factor](detail::Node& self) {
    auto ga = detail::input_grad(self, 0);
    for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += factor * self.grad[i];
  });
}

inline Tensor relu(const Tensor& a) {
  std::vector<double> out = a.values();
  for (double& v : out) v = v > 0.0 ? v : 0.0;
  return Tensor::make_result(a.shape(), std::move(out), {a}, "relu", [](detail::Node& self) {
    auto ga = detail::input_grad(self, 0);
    const auto A = detail::input_data(self, 0);
    for (std::size_t i = 0; i < ga.size(); ++i)
      if (A[i] > 0.0) ga[i] += self.grad[i];
  });
}

/// Elementwise |a|; the subgradient at 0 is taken as 0.
inline Tensor absolute(const Tensor& a) {
  std::vector<double> out = a.values();
  for (double& v : out) v = std::abs(v);
  return Tensor::make_result(a.shape(), std::move(out), {a}, "abs", [](detail::Node& self) {
    auto ga = detail::input_grad(self, 0);
    const auto A = detail::input_data(self, 0);
    for (std::size_t i = 0; i < ga.size(); ++i) {
      ga[i] += A[i] > 0.0 ? self.grad[i] : A[i] < 0.0 ? -self.grad[i] : 0.0;
    }
  });
}

inline double sigmoid(double z) {
  if (z >= 0.0) return 1.0 / (1.0 + std::exp(-z));
  const double e = std::exp(z);
  return e / (1.0 + e);
}

inline Tensor sigmoid(const Tensor& a) {
  std::vector<double> out = a.values();
  for (double& v : out) v = sigmoid(v);
  return Tensor::make_result(a.shape(), std::move(out), {a}, "sigmoid", [](detail::Node& self) {
    auto ga = detail::input_grad(self, 0);
    for (std::size_t i = 0; i < ga.size(); ++i) {
      const double y = self.data[i];
      ga[i] += self.grad[i] * y * (1.0 - y);
    }
  });
}

inline Tensor sum(const Tensor& a) {
  const auto A = a.data();
  double total = 0.0;
  for (double v : A) total += v;
  return Tensor::make_result({1}, {total}, {a}, "sum", [](detail::Node& self) {
    auto ga = detail::input_grad(self, 0);
    for (double& g : ga) g += self.grad[0];
  });
}

inline Tensor mean(const Tensor& a) { return scale(sum(a), 1.0 / static_cast<double>(a.numel())); }

namespace detail {

inline void softmax_row(const double* z, double* out, std::size_t n) {
  const double mx = *std::max_element(z, z + n);
  double total = 0.0;
  for (std::size_t j = 0; j < n; ++j) {
    out[j] = std::exp(z[j] - mx);
    total += out[j];
  }
  for (std::size_t j = 0; j < n; ++j) out[j] /= total;
}

}  // namespace detail

/// Softmax over the last axis of a 1-D [k] or 2-D [B x k] tensor.
/// The row maximum is subtracted first, so large logits do not overflow.
inline Tensor softmax(const Tensor& z) {
  const auto [rows, cols] = detail::rows_of(z, "softmax");
  detail::require_finite(z.data(), "softmax");
  std::vector<double> out(z.numel());
  const auto Z = z.data();
  for (std::size_t i = 0; i < rows; ++i) detail::softmax_row(&Z[i * cols], &out[i * cols], cols);
  return Tensor::make_result(z.shape(), std::move(out), {z}, "softmax", [rows, cols](detail::Node& self) {
    auto gz = detail::input_grad(self, 0);
    for (std::size_t i = 0; i < rows; ++i) {
      const double* y = &self.data[i * cols];
      const double* g = &self.grad[i * cols];
      double dot = 0.0;
      for (std::size_t j = 0; j < cols; ++j) dot += g[j] * y[j];
      for (std::size_t j = 0; j < cols; ++j) gz[i * cols + j] += y[j] * (g[j] - dot);
    }
  });
}

/// Sum over rows of weight_b * -log softmax(logits_b)[target_b].
///
/// `logits` is [C] (one target) or [B x C]. Empty `weights` means all ones.
inline Tensor cross_entropy(const Tensor& logits, std::span<const std::size_t> targets,
                            std::span<const double> weights = {}) {
  const auto [rows, cols] = detail::rows_of(logits, "cross_entropy");
  if (targets.size() != rows) {
    throw DimensionError("cross_entropy: " + std::to_string(rows) + " rows but " +
                         std::to_string(targets.size()) + " targets");
  }
  if (!weights.empty() && weights.size() != rows) {
    throw DimensionError("cross_entropy: weight count does not match rows");
  }
  detail::require_finite(logits.data(), "cross_entropy");
  for (std::size_t t : targets) {
    if (t >= cols) {
      throw IndexError("cross_entropy: target " + std::to_string(t) + " out of range for " +
                       std::to_string(cols) + " classes");
    }
  }
  std::vector<double> probs(logits.numel());
  const auto Z = logits.data();
  double total = 0.0;
  for (std::size_t i = 0; i < rows; ++i) {
    const double* z = &Z[i * cols];
    const std::size_t top = static_cast<std::size_t>(std::max_element(z, z + cols) - z);
    const double mx = z[top];
    // log(sum exp(z - mx)) = log1p(rest): keeps tiny losses on confident rows exact.
    double rest = 0.0;
    for (std::size_t j = 0; j < cols; ++j)
      if (j != top) rest += std::exp(z[j] - mx);
    const double lse = std::log1p(rest);
    const double w = weights.empty() ? 1.0 : weights[i];
    total += w * ((mx - z[targets[i]]) + lse);
    for (std::size_t j = 0; j < cols; ++j) probs[i * cols + j] = std::exp(z[j] - mx - lse);
  }
  std::vector<std::size_t> tgt(targets.begin(), targets.end());
  std::vector<double> wts(weights.begin(), weights.end());
  return Tensor::make_result(
      {1}, {total}, {logits}, "cross_entropy",
      [rows, cols, probs = std::move(probs), tgt = std::move(tgt), wts = std::move(wts)](detail::Node& self) {
        auto gz = detail::input_grad(self, 0);
        const double g = self.grad[0];
        for (std::size_t i = 0; i < rows; ++i) {
          const double w = g * (wts.empty() ? 1.0 : wts[i]);
          if (w == 0.0) continue;
          for (std::size_t j = 0; j < cols; ++j) {
            gz[i * cols + j] += w * (probs[i * cols + j] - (j == tgt[i] ? 1.0 : 0.0));
          }
        }
      });
}

inline Tensor cross_entropy(const Tensor& logits, std::size_t target) {
  const std::size_t t[1] = {target};
  return cross_entropy(logits, std::span<const std::size_t>(t, 1));
}

/// Sum of binary cross-entropies between sigmoid(logits) and 0/1 targets.
inline Tensor bce_with_logits(const Tensor& logits, std::span<const double> targets) {
  if (targets.size() != logits.numel()) {
    throw DimensionError("bce_with_logits: " + std::to_string(logits.numel()) + " logits but " +
                         std::to_string(targets.size()) + " targets");
  }
  detail::require_finite(logits.data(), "bce_with_logits");
  const auto Z = logits.data();
  double total = 0.0;
  for (std::size_t i = 0; i < Z.size(); ++i) {
    const double z = Z[i];
    total += std::max(z, 0.0) - z * targets[i] + std::log1p(std::exp(-std::abs(z)));
  }
  std::vector<double> tgt(targets.begin(), targets.end());
  return Tensor::make_result({1}, {total}, {logits}, "bce_with_logits", [tgt = std::move(tgt)](detail::Node& self) {
    auto gz = detail::input_grad(self, 0);
    const auto Z = detail::input_data(self, 0);
    for (std::size_t i = 0; i < gz.size(); ++i) gz[i] += self.grad[0] * (sigmoid(Z[i]) - tgt[i]);
  });
}

/// Inverted dropout: survivors are scaled by 1/(1-p) so evaluation is the identity.
inline Tensor dropout(const Tensor& x, double p, bool training, Rng& rng) {
  if (!(p >= 0.0 && p < 1.0)) throw ParameterError("dropout: probability must be in [0, 1), got " + std::to_string(p));
  if (!training || p == 0.0) return x;
  const double keep_scale = 1.0 / (1.0 - p);
  std::vector<double> mask(x.numel());
  for (double& m : mask) m = rng.uniform() < p ? 0.0 : keep_scale;
  std::vector<double> out = x.values();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= mask[i];
  return Tensor::make_result(x.shape(), std::move(out), {x}, "dropout", [mask = std::move(mask)](detail::Node& self) {
    auto gx = detail::input_grad(self, 0);
    for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += mask[i] * self.grad[i];
  });
}

/// Stacks k tensors of shape [B x d] into [B x k x d].
inline Tensor stack(const std::vector<Tensor>& parts) {
  if (parts.empty()) throw DimensionError("stack: no tensors");
  const Shape& first = parts.front().shape();
  if (first.size() != 2) throw DimensionError("stack: expected 2-D parts, got " + to_string(first));
  for (const Tensor& t : parts) detail::require_same_shape(parts.front(), t, "stack");
  const std::size_t batch = first[0], width = first[1], k = parts.size();
  std::vector<double> out(batch * k * width);
  for (std::size_t s = 0; s < k; ++s) {
    const auto P = parts[s].data();
    for (std::size_t b = 0; b < batch; ++b)
      std::copy_n(&P[b * width], width, &out[(b * k + s) * width]);
  }
  return Tensor::make_result({batch, k, width}, std::move(out), parts, "stack", [batch, k, width](detail::Node& self) {
    for (std::size_t s = 0; s < k; ++s) {
      auto gp = detail::input_grad(self, s);
      if (gp.empty()) continue;
      for (std::size_t b = 0; b < batch; ++b)
        for (std::size_t j = 0; j < width; ++j) gp[b * width + j] += self.grad[(b * k + s) * width + j];
    }
  });
}

/// Joins k tensors of shape [B x 1] (or [B]) column-wise into [B x k].
inline Tensor concat_columns(const std::vector<Tensor>& columns) {
  if (columns.empty()) throw DimensionError("concat_columns: no tensors");
  const std::size_t batch = columns.front().numel(), k = columns.size();
  for (const Tensor& c : columns) {
    if (c.numel() != batch) throw DimensionError("concat_columns: columns differ in length");
  }
  std::vector<double> out(batch * k);
  for (std::size_t s = 0; s < k; ++s) {
    const auto C = columns[s].data();
    for (std::size_t b = 0; b < batch; ++b) out[b * k + s] = C[b];
  }
  return Tensor::make_result({batch, k}, std::move(out), columns, "concat_columns", [batch, k](detail::Node& self) {
    for (std::size_t s = 0; s < k; ++s) {
      auto gc = detail::input_grad(self, s);
      if (gc.empty()) continue;
      for (std::size_t b = 0; b < batch; ++b) gc[b] += self.grad[b * k + s];
    }
  });
}

/// Per-row mixture of stacked representations: out[b] = sum_i weights[b,i] * reps[b,i,:].
///
/// `reps` is [B x k x d] and `weights` is [B x k].
inline Tensor weighted_sum(const Tensor& reps, const Tensor& weights) {
  if (reps.dim() != 3 || weights.dim() != 2 || reps.size(0) != weights.size(0) || reps.size(1) != weights.size(1)) {
    throw DimensionError("weighted_sum: shapes " + to_string(reps.shape()) + " and " + to_string(weights.shape()));
  }
  const std::size_t batch = reps.size(0), k = reps.size(1), width = reps.size(2);
  const auto R = reps.data();
  const auto W = weights.data();
  std::vector<double> out(batch * width, 0.0);
  for (std::size_t b = 0; b < batch; ++b)
    for (std::size_t i = 0; i < k; ++i) {
      const double w = W[b * k + i];
      for (std::size_t j = 0; j < width; ++j) out[b * width + j] += w * R[(b * k + i) * width + j];
    }
  return Tensor::make_result({batch, width}, std::move(out), {reps, weights}, "weighted_sum",
                             [batch, k, width](detail::Node& self) {
                               const auto R = detail::input_data(self, 0);
                               const auto W = detail::input_data(self, 1);
                               auto gr = detail::input_grad(self, 0);
                               auto gw = detail::input_grad(self, 1);
                               for (std::size_t b = 0; b < batch; ++b)
                                 for (std::size_t i = 0; i < k; ++i) {
                                   double acc = 0.0;
                                   for (std::size_t j = 0; j < width; ++j) {
                                     const double g = self.grad[b * width + j];
                                     if (!gr.empty()) gr[(b * k + i) * width + j] += W[b * k + i] * g;
                                     acc += g * R[(b * k + i) * width + j];
                                   }
                                   if (!gw.empty()) gw[b * k + i] += acc;
                                 }
                             });
}

/// Forward value `hard`, backward gradient passed unchanged to `soft`.
inline Tensor straight_through(std::vector<double> hard, const Tensor& soft) {
  if (hard.size() != soft.numel()) throw DimensionError("straight_through: value count mismatch");
  return Tensor::make_result(soft.shape(), std::move(hard), {soft}, "straight_through", [](detail::Node& self) {
    auto gs = detail::input_grad(self, 0);
    for (std::size_t i = 0; i < gs.size(); ++i) gs[i] += self.grad[i];
  });
}

/// Row-wise argmax of a 1-D or 2-D tensor.
inline std::vector<std::size_t> argmax_rows(const Tensor& t) {
  const auto [rows, cols] = detail::rows_of(t, "argmax_rows");
  const auto T = t.data();
  std::vector<std::size_t> out(rows);
  for (std::size_t i = 0; i < rows; ++i) {
    const double* row = &T[i * cols];
    out[i] = static_cast<std::size_t>(std::max_element(row, row + cols) - row);
  }
  return out;
}

}  // namespace slicemoa
