#pragma once

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>
#include <vector>

#include "agl/nn/tensor.hpp"
#include "agl/tolerances.hpp"

namespace agl::nn {

struct GradCheckReport {
  double max_rel_error = 0.0;
  std::size_t coordinates = 0;
  std::string worst_path;
};

struct GradCheckOptions {
  double step = tol::kFdStep;
  std::size_t sample = 128;  // coordinates checked when the set is larger; never below 64
  std::uint64_t seed = 0;
};

// Compares analytic gradients against central differences.
//   loss(params) -> double         scalar objective, must be deterministic
//   gradient(params)               fills params' grads (after zeroing them)
template <typename Loss, typename Gradient>
GradCheckReport finite_diff_check(ParamSet<double>& params, Loss&& loss, Gradient&& gradient,
                                  const GradCheckOptions& opt = {}) {
  params.zero_grad();
  gradient(params);
  std::vector<std::pair<std::size_t, Eigen::Index>> coords;
  for (std::size_t i = 0; i < params.size(); ++i)
    for (Eigen::Index k = 0; k < params[i].value.size(); ++k) coords.emplace_back(i, k);
  const std::size_t want = std::max<std::size_t>(opt.sample, tol::kFdMinCoords);
  if (coords.size() > want) {
    Rng rng(opt.seed);
    for (std::size_t i = 0; i < want; ++i) {
      const std::size_t j = i + uniform_index(rng, coords.size() - i);
      std::swap(coords[i], coords[j]);
    }
    coords.resize(want);
  }
  GradCheckReport report;
  report.coordinates = coords.size();
  for (const auto& [pi, k] : coords) {
    double& x = params[pi].value.data()[k];
    const double saved = x;
    x = saved + opt.step;
    const double up = loss(params);
    x = saved - opt.step;
    const double down = loss(params);
    x = saved;
    const double numeric = (up - down) / (2.0 * opt.step);
    const double analytic = params[pi].grad.data()[k];
    const double denom = std::max({std::abs(numeric), std::abs(analytic), tol::kGradRelFloor});
    const double rel = std::abs(numeric - analytic) / denom;
    if (rel > report.max_rel_error) {
      report.max_rel_error = rel;
      report.worst_path = params[pi].path;
    }
  }
  return report;
}

}  // namespace agl::nn
