#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "eegcvae/tensor.hpp"

namespace eegcvae::nn {

struct GradCheckResult {
  double max_rel_error = 0.0;
  Eigen::Index checked = 0;
  std::string worst;  // "param[index]" of the largest error
};

inline constexpr double kRelativeErrorFloor = 1e-8;

inline double relative_error(double analytic, double numeric) {
  return std::abs(analytic - numeric) /
         std::max({std::abs(analytic), std::abs(numeric), kRelativeErrorFloor});
}

// Compares analytic gradients against central differences of `loss` at step h.
// `params` and `analytic` are paired by position. Above `max_checks` total
// entries a seeded uniform subsample of that size is checked instead. The loss
// may return extended precision; the difference quotient is formed in it.
inline GradCheckResult grad_check(const std::function<long double()>& loss,
                                  const std::vector<ParamRef>& params,
                                  const std::vector<ParamRef>& analytic, double h = 1e-5,
                                  Eigen::Index max_checks = 10000, std::uint64_t seed = 0) {
  if (params.size() != analytic.size()) throw ShapeError("grad_check: params/analytic mismatch");
  struct Site {
    std::size_t block;
    Eigen::Index index;
  };
  std::vector<Site> sites;
  for (std::size_t b = 0; b < params.size(); ++b) {
    require_shape(*analytic[b].value, params[b].value->rows(), params[b].value->cols(),
                  "grad_check " + params[b].name);
    for (Eigen::Index i = 0; i < params[b].value->size(); ++i) sites.push_back({b, i});
  }
  if (static_cast<Eigen::Index>(sites.size()) > max_checks) {
    Rng rng = make_rng(seed, 0x6C);
    std::shuffle(sites.begin(), sites.end(), rng);
    sites.resize(static_cast<std::size_t>(max_checks));
  }

  GradCheckResult result;
  for (const Site& site : sites) {
    double& x = params[site.block].value->data()[site.index];
    const double saved = x;
    x = saved + h;
    const long double up = loss();
    x = saved - h;
    const long double down = loss();
    x = saved;
    const double numeric = static_cast<double>((up - down) / (2.0L * static_cast<long double>(h)));
    const double err = relative_error(analytic[site.block].value->data()[site.index], numeric);
    ++result.checked;
    if (result.worst.empty() || err > result.max_rel_error) {
      result.max_rel_error = err;
      result.worst = params[site.block].name + "[" + std::to_string(site.index) + "]";
    }
  }
  return result;
}

}  // namespace eegcvae::nn
