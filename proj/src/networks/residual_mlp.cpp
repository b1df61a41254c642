#include "hjbac/networks/residual_mlp.hpp"

#include <cmath>
#include <random>
#include <stdexcept>
#include <string>

namespace hjbac::nn {

ResidualMLP::ResidualMLP(int in_dim, int out_dim, int width, int depth)
    : in_dim_(in_dim), out_dim_(out_dim), width_(width), depth_(depth) {
  if (in_dim <= 0 || out_dim <= 0 || depth < 0 || (depth > 0 && width <= 0)) {
    throw std::invalid_argument("ResidualMLP: invalid architecture");
  }
  ad::ParamVector::Builder b;
  for (int i = 0; i <= depth; ++i) {
    const int fan_in = (i == 0) ? in_dim : width;
    const int fan_out = (i == depth) ? out_dim : width;
    b.add("W" + std::to_string(i), fan_out, fan_in);
    b.add("b" + std::to_string(i), fan_out, 1);
  }
  params_ = b.build();
}

void ResidualMLP::initialize(std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  for (int i = 0; i <= depth_; ++i) {
    auto w = params_.view(static_cast<std::size_t>(2 * i));
    const double bound = 1.0 / std::sqrt(static_cast<double>(w.cols()));
    std::uniform_real_distribution<double> dist(-bound, bound);
    for (Eigen::Index c = 0; c < w.cols(); ++c) {
      for (Eigen::Index r = 0; r < w.rows(); ++r) w(r, c) = dist(rng);
    }
    params_.view(static_cast<std::size_t>(2 * i + 1)).setZero();
  }
}

Matrix ResidualMLP::forward(const Matrix& x) const {
  if (x.rows() != in_dim_) throw std::invalid_argument("ResidualMLP::forward: input dimension mismatch");
  Matrix h = x;
  for (int i = 0; i <= depth_; ++i) {
    auto w = params_.view(static_cast<std::size_t>(2 * i));
    auto b = params_.view(static_cast<std::size_t>(2 * i + 1));
    Matrix z(w.rows(), h.cols());
    z.noalias() = w * h;
    z.colwise() += b.col(0);
    if (i < depth_) {
      h = z + z.cwiseMax(0.0);
    } else {
      h = std::move(z);
    }
  }
  return h;
}

ResidualMLP::Bound ResidualMLP::bind(ad::Tape& tape, bool trainable) const {
  Bound bound;
  for (int i = 0; i <= depth_; ++i) {
    bound.weights.push_back(tape.param(params_, static_cast<std::size_t>(2 * i), trainable));
    bound.biases.push_back(tape.param(params_, static_cast<std::size_t>(2 * i + 1), trainable));
  }
  return bound;
}

Var ResidualMLP::apply(ad::Tape& tape, const Bound& bound, Var x) const {
  if (x.rows() != in_dim_) throw std::invalid_argument("ResidualMLP::apply: input dimension mismatch");
  Var h = x;
  for (int i = 0; i <= depth_; ++i) {
    h = tape.affine(bound.weights[static_cast<std::size_t>(i)], h,
                    bound.biases[static_cast<std::size_t>(i)]);
    if (i < depth_) h = tape.residual_act(h);
  }
  return h;
}

}  // namespace hjbac::nn
