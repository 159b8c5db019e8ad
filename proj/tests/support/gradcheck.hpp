#pragma once

// Central finite-difference oracle. Independent of the tape: it only ever
// evaluates the forward loss value.

#include <algorithm>
#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "slicemoa/model.hpp"
#include "slicemoa/tensor.hpp"

namespace slicemoa::testing {

struct GradCheck {
  double max_rel_error = 0.0;
  std::string worst;
  std::size_t checked = 0;
};

/// Relative error |a - n| / max(|a|, |n|, floor).
inline double rel_error(double analytic, double numeric, double floor = 1e-6) {
  return std::abs(analytic - numeric) / std::max({std::abs(analytic), std::abs(numeric), floor});
}

/// Compares the tape gradient of `loss()` with central differences for every entry
/// of every tensor in `params`.
inline GradCheck check_gradients(std::vector<Parameter>& params, const std::function<Tensor()>& loss,
                                 double h = 1e-5) {
  for (auto& p : params) p.value.zero_grad();
  loss().backward();
  GradCheck out;
  for (auto& p : params) {
    const std::vector<double> analytic(p.value.grad().begin(), p.value.grad().end());
    auto data = p.value.mutable_data();
    for (std::size_t i = 0; i < data.size(); ++i) {
      const double saved = data[i];
      data[i] = saved + h;
      const double up = loss().item();
      data[i] = saved - h;
      const double down = loss().item();
      data[i] = saved;
      const double numeric = (up - down) / (2.0 * h);
      const double a = analytic.empty() ? 0.0 : analytic[i];
      const double err = rel_error(a, numeric);
      ++out.checked;
      if (err > out.max_rel_error) {
        out.max_rel_error = err;
        out.worst = p.name + "[" + std::to_string(i) + "] analytic=" + std::to_string(a) +
                    " numeric=" + std::to_string(numeric);
      }
    }
  }
  return out;
}

inline std::vector<Parameter> as_params(std::initializer_list<std::pair<const char*, Tensor>> tensors) {
  std::vector<Parameter> out;
  for (const auto& [name, t] : tensors) out.push_back({name, t});
  return out;
}

}  // namespace slicemoa::testing
