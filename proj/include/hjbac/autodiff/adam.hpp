#pragma once

#include <cstdint>

#include "hjbac/autodiff/param_vector.hpp"

namespace hjbac::ad {

struct AdamState {
  Vector m;
  Vector v;
  std::uint64_t step_count = 0;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps_hat = 1e-8;

  /// Zero moments sized for `params`.
  static AdamState for_params(const ParamVector& params);
};

/// One bias-corrected Adam update in place. A non-finite gradient leaves both
/// params and state untouched and throws NumericFailure.
void adam_step(ParamVector& params, const Vector& grad, AdamState& state, double lr);

}  // namespace hjbac::ad
