#pragma once

#include <cmath>
#include <functional>
#include <stdexcept>
#include <vector>

#include "ran/tensor.hpp"

// Central finite-difference gradient oracle. The loss builder must be a
// deterministic function of the current parameter values and is re-run for
// every probe, so it has to rebuild its graph from scratch each call.

namespace ran {

using LossBuilder = std::function<Tensor(Tape&)>;

namespace detail {

inline double eval_loss(const LossBuilder& build) {
  Tape scratch;
  Tensor loss = build(scratch);
  double v = loss.value();
  if (!std::isfinite(v)) throw std::runtime_error("finite_diff_check: non-finite evaluation");
  return v;
}

inline double rel_error(double analytic, double numeric) {
  const double denom = std::max({std::abs(analytic), std::abs(numeric), 1e-6});
  return std::abs(analytic - numeric) / denom;
}

}  // namespace detail

// Max relative error between the tape gradient and central differences over
// every coordinate of every tensor in `params`.
inline double finite_diff_check_many(const LossBuilder& build, const std::vector<Tensor>& params,
                                     double eps = 1e-4) {
  std::vector<std::vector<double>> analytic;
  analytic.reserve(params.size());
  {
    for (const Tensor& p : params) {
      if (!p.requires_grad())
        throw std::invalid_argument("finite_diff_check: parameter does not require grad");
      p.node()->grad.clear();
    }
    Tape tape;
    Tensor loss = build(tape);
    if (!std::isfinite(loss.value()))
      throw std::runtime_error("finite_diff_check: non-finite evaluation");
    backward(loss, tape);
    for (const Tensor& p : params) analytic.push_back(p.grad());
  }
  double worst = 0.0;
  for (std::size_t pi = 0; pi < params.size(); ++pi) {
    Tensor p = params[pi];
    auto& vals = p.mutable_values();
    for (std::size_t i = 0; i < vals.size(); ++i) {
      const double saved = vals[i];
      vals[i] = saved + eps;
      const double up = detail::eval_loss(build);
      vals[i] = saved - eps;
      const double down = detail::eval_loss(build);
      vals[i] = saved;
      const double numeric = (up - down) / (2.0 * eps);
      worst = std::max(worst, detail::rel_error(analytic[pi][i], numeric));
    }
  }
  return worst;
}

inline double finite_diff_check(const LossBuilder& build, const Tensor& theta, double eps = 1e-4) {
  return finite_diff_check_many(build, {theta}, eps);
}

}  // namespace ran
