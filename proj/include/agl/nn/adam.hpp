#pragma once

#include <cmath>
#include <vector>

#include "agl/nn/tensor.hpp"

namespace agl::nn {

template <typename Scalar>
struct AdamState {
  double lr = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps_hat = 1e-8;
  long step = 0;
  std::vector<Matrix<Scalar>> m;
  std::vector<Matrix<Scalar>> v;
};

template <typename Scalar>
AdamState<Scalar> make_adam(const ParamSet<Scalar>& ps, double lr) {
  AdamState<Scalar> s;
  s.lr = lr;
  for (const auto& p : ps) {
    s.m.push_back(Matrix<Scalar>::Zero(p.value.rows(), p.value.cols()));
    s.v.push_back(Matrix<Scalar>::Zero(p.value.rows(), p.value.cols()));
  }
  return s;
}

// Bias-corrected Adam; zeroes the gradients afterwards. A non-finite gradient
// aborts before any parameter is touched.
template <typename Scalar>
void adam_step(ParamSet<Scalar>& ps, AdamState<Scalar>& s) {
  if (s.m.size() != ps.size()) throw ContractViolation("adam_step: state/parameter mismatch");
  for (const auto& p : ps)
    if (!p.grad.allFinite()) throw NumericalError("non-finite gradient in " + p.path);
  s.step += 1;
  const double c1 = 1.0 - std::pow(s.beta1, static_cast<double>(s.step));
  const double c2 = 1.0 - std::pow(s.beta2, static_cast<double>(s.step));
  const Scalar b1 = static_cast<Scalar>(s.beta1);
  const Scalar b2 = static_cast<Scalar>(s.beta2);
  const Scalar step_size = static_cast<Scalar>(s.lr / c1);
  const Scalar inv_sqrt_c2 = static_cast<Scalar>(1.0 / std::sqrt(c2));
  const Scalar eps = static_cast<Scalar>(s.eps_hat);
  for (std::size_t i = 0; i < ps.size(); ++i) {
    auto& p = ps[i];
    auto& m = s.m[i];
    auto& v = s.v[i];
    m = b1 * m + (Scalar(1) - b1) * p.grad;
    v = b2 * v + (Scalar(1) - b2) * p.grad.cwiseProduct(p.grad);
    p.value.array() -= step_size * m.array() / (v.array().sqrt() * inv_sqrt_c2 + eps);
    p.grad.setZero();
  }
}

}  // namespace agl::nn
