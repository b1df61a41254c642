#include "hjbac/autodiff/adam.hpp"

#include <cmath>
#include <stdexcept>

#include "hjbac/autodiff/tape.hpp"

namespace hjbac::ad {

AdamState AdamState::for_params(const ParamVector& params) {
  AdamState s;
  const auto n = static_cast<Eigen::Index>(params.size());
  s.m = Vector::Zero(n);
  s.v = Vector::Zero(n);
  return s;
}

void adam_step(ParamVector& params, const Vector& grad, AdamState& state, double lr) {
  const auto n = static_cast<Eigen::Index>(params.size());
  if (grad.size() != n || state.m.size() != n || state.v.size() != n) {
    throw std::invalid_argument("adam_step: gradient/state length differs from parameters");
  }
  if (!grad.allFinite()) throw NumericFailure("adam_step: non-finite gradient");

  const double t = static_cast<double>(state.step_count + 1);
  const double c1 = 1.0 - std::pow(state.beta1, t);
  const double c2 = 1.0 - std::pow(state.beta2, t);

  Vector m = state.beta1 * state.m + (1.0 - state.beta1) * grad;
  Vector v = state.beta2 * state.v + (1.0 - state.beta2) * grad.cwiseAbs2();
  Vector x = params.values();
  for (Eigen::Index i = 0; i < n; ++i) {
    const double m_hat = m[i] / c1;
    const double v_hat = v[i] / c2;
    x[i] -= lr * m_hat / (std::sqrt(v_hat) + state.eps_hat);
  }
  // Nothing is committed if the update overflows.
  if (!x.allFinite() || !v.allFinite()) throw NumericFailure("adam_step: non-finite parameter update");
  params.values() = std::move(x);
  state.m = std::move(m);
  state.v = std::move(v);
  state.step_count += 1;
}

}  // namespace hjbac::ad
