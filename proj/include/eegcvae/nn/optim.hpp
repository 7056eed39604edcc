#pragma once

#include <cmath>
#include <cstdint>
#include <vector>

#include "eegcvae/tensor.hpp"

namespace eegcvae::nn {

namespace detail {
inline void check_pairing(const std::vector<ParamRef>& params, const std::vector<ParamRef>& grads) {
  if (params.size() != grads.size()) throw ShapeError("optimizer: parameter/gradient count mismatch");
  for (std::size_t i = 0; i < params.size(); ++i) {
    require_shape(*grads[i].value, params[i].value->rows(), params[i].value->cols(),
                  "gradient for " + params[i].name);
  }
}
}  // namespace detail

// acc <- rho·acc + (1 - rho)·g²;  θ <- θ - lr·g / (sqrt(acc) + eps)
struct RmsProp {
  double lr = 1e-3;
  double rho = 0.9;
  double eps = 1e-7;
  std::vector<Tensor2> acc;

  void step(const std::vector<ParamRef>& params, const std::vector<ParamRef>& grads) {
    detail::check_pairing(params, grads);
    if (acc.empty()) {
      for (const auto& p : params) acc.push_back(Tensor2::Zero(p.value->rows(), p.value->cols()));
    }
    for (std::size_t i = 0; i < params.size(); ++i) {
      const auto g = grads[i].value->array();
      acc[i].array() = rho * acc[i].array() + (1.0 - rho) * g.square();
      params[i].value->array() -= lr * g / (acc[i].array().sqrt() + eps);
    }
  }
};

// Bias-corrected Adam.
struct Adam {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  std::int64_t steps = 0;
  std::vector<Tensor2> m;
  std::vector<Tensor2> v;

  void step(const std::vector<ParamRef>& params, const std::vector<ParamRef>& grads) {
    detail::check_pairing(params, grads);
    if (m.empty()) {
      for (const auto& p : params) {
        m.push_back(Tensor2::Zero(p.value->rows(), p.value->cols()));
        v.push_back(Tensor2::Zero(p.value->rows(), p.value->cols()));
      }
    }
    ++steps;
    const double c1 = 1.0 - std::pow(beta1, static_cast<double>(steps));
    const double c2 = 1.0 - std::pow(beta2, static_cast<double>(steps));
    for (std::size_t i = 0; i < params.size(); ++i) {
      const auto g = grads[i].value->array();
      m[i].array() = beta1 * m[i].array() + (1.0 - beta1) * g;
      v[i].array() = beta2 * v[i].array() + (1.0 - beta2) * g.square();
      params[i].value->array() -= lr * (m[i].array() / c1) / ((v[i].array() / c2).sqrt() + eps);
    }
  }
};

}  // namespace eegcvae::nn
