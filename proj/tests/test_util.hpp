#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <vector>

#include "cda/rng.hpp"
#include "cda/tensor.hpp"

namespace cda::testing {

inline Tensor random_tensor(Shape shape, Rng& rng, double scale = 1.0, bool requires_grad = true) {
  std::vector<double> v(shape_numel(shape));
  for (double& x : v) x = rng.normal(0.0, scale);
  return Tensor(std::move(shape), std::move(v), requires_grad);
}

/// |a - n| / max(|a|, |n|, floor). The floor keeps near-zero gradients from
/// turning round-off into large ratios.
inline double relative_error(double analytic, double numeric, double floor = 1e-6) {
  return std::abs(analytic - numeric) / std::max({std::abs(analytic), std::abs(numeric), floor});
}

struct GradCheck {
  double max_rel = 0.0;
  std::size_t checked = 0;
};

/// Central differences of loss() with respect to every element of params,
/// compared with the gradients from one recorded backward pass.
inline GradCheck check_gradients(const std::function<Tensor()>& loss, std::vector<Tensor> params, double h = 1e-5) {
  std::vector<std::vector<double>> analytic;
  {
    GraphScope scope;
    for (auto& p : params) p.zero_grad();
    backward(loss());
    for (auto& p : params) {
      const auto g = p.grad_tensor();
      analytic.emplace_back(g.data().begin(), g.data().end());
    }
  }
  GradCheck out;
  for (std::size_t k = 0; k < params.size(); ++k) {
    auto w = params[k].mutable_data();
    for (std::size_t i = 0; i < w.size(); ++i) {
      const double orig = w[i];
      w[i] = orig + h;
      const double up = loss().item();
      w[i] = orig - h;
      const double down = loss().item();
      w[i] = orig;
      const double numeric = (up - down) / (2.0 * h);
      out.max_rel = std::max(out.max_rel, relative_error(analytic[k][i], numeric));
      ++out.checked;
    }
  }
  for (auto& p : params) p.zero_grad();
  return out;
}

}  // namespace cda::testing
