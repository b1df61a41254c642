#pragma once

#include <cstdint>
#include <functional>

#include "hjbac/networks/network_set.hpp"
#include "hjbac/problems/problem.hpp"

namespace hjbac::sim {

using ad::Matrix;
using ad::Var;
using ad::Vector;

/// A feedback control x -> u, usable on a tape or on plain columns.
class Policy {
 public:
  virtual ~Policy() = default;
  virtual int control_dim() const = 0;
  virtual Var apply(ad::Tape& tape, Var x) const = 0;
  virtual Matrix eval(const Matrix& x) const = 0;
};

/// Control network plus head. Parameters are bound once per tape generation.
class NetworkPolicy final : public Policy {
 public:
  NetworkPolicy(const nn::NetworkSet& nets, bool trainable) : nets_(nets), trainable_(trainable) {}

  int control_dim() const override { return nets_.control_dim(); }
  Var apply(ad::Tape& tape, Var x) const override;
  Matrix eval(const Matrix& x) const override;

 private:
  const nn::NetworkSet& nets_;
  bool trainable_;
  mutable const ad::Tape* bound_tape_ = nullptr;
  mutable std::uint64_t bound_generation_ = 0;
  mutable nn::ResidualMLP::Bound bound_;
};

/// Pointwise function; constant with respect to its input on a tape.
class FunctionPolicy final : public Policy {
 public:
  using Fn = std::function<Vector(const Vector&)>;
  FunctionPolicy(int control_dim, Fn fn) : control_dim_(control_dim), fn_(std::move(fn)) {}

  int control_dim() const override { return control_dim_; }
  Var apply(ad::Tape& tape, Var x) const override;
  Matrix eval(const Matrix& x) const override;

 private:
  int control_dim_;
  Fn fn_;
};

/// The problem's exact optimal control. Throws std::invalid_argument if absent.
FunctionPolicy exact_policy(const pde::ProblemPtr& problem);

}  // namespace hjbac::sim
