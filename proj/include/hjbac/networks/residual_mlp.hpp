#pragma once

#include <cstdint>
#include <vector>

#include "hjbac/autodiff/param_vector.hpp"
#include "hjbac/autodiff/tape.hpp"

namespace hjbac::nn {

using ad::Matrix;
using ad::Var;
using ad::Vector;

/// phi(x) = F_depth o s o ... o s o F_0 (x) with s(z) = z + ReLU(z) and a
/// constant hidden width. depth == 0 is a single affine map.
class ResidualMLP {
 public:
  /// Parameter leaves of one network bound to a tape.
  struct Bound {
    std::vector<Var> weights;
    std::vector<Var> biases;
  };

  ResidualMLP() = default;
  ResidualMLP(int in_dim, int out_dim, int width, int depth);

  int in_dim() const { return in_dim_; }
  int out_dim() const { return out_dim_; }
  int width() const { return width_; }
  int depth() const { return depth_; }
  int layer_count() const { return depth_ + 1; }

  const ad::ParamVector& params() const { return params_; }
  ad::ParamVector& params() { return params_; }

  /// Weights ~ U(-1/sqrt(fan_in), 1/sqrt(fan_in)), biases zero.
  void initialize(std::uint64_t seed);

  /// Plain forward pass on a batch of columns (no tape).
  Matrix forward(const Matrix& x) const;

  /// Binds every parameter block; `trainable == false` gives stop-gradient leaves.
  Bound bind(ad::Tape& tape, bool trainable) const;
  Var apply(ad::Tape& tape, const Bound& bound, Var x) const;

 private:
  int in_dim_ = 0;
  int out_dim_ = 0;
  int width_ = 0;
  int depth_ = 0;
  ad::ParamVector params_;
};

}  // namespace hjbac::nn
