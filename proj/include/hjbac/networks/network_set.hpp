#pragma once

#include <cstdint>
#include <optional>
#include <string>

#include "hjbac/networks/residual_mlp.hpp"

namespace hjbac::nn {

enum class ControlHead : std::uint32_t {
  Unconstrained = 0,
  /// u = u_dir / (delta + ReLU(u_len) + |u_dir|), so |u| < 1.
  UnitBall = 1,
};

inline constexpr double kUnitBallDelta = 1e-15;

enum class TdVariant { VrLstd, Lstd };

std::string to_string(ControlHead head);
std::string to_string(TdVariant td);

struct Architecture {
  int width = 200;
  int depth = 2;
};

/// Value, value-gradient and control networks for one problem.
///
/// `gradient` exists iff the critic is VR-LSTD.
struct NetworkSet {
  ResidualMLP value;
  std::optional<ResidualMLP> gradient;
  ResidualMLP control;
  ControlHead head = ControlHead::Unconstrained;

  static NetworkSet create(int dim, int control_dim, TdVariant td, ControlHead head,
                           const Architecture& arch, std::uint64_t seed);

  int dim() const { return value.in_dim(); }
  int control_dim() const;
  TdVariant td() const { return gradient ? TdVariant::VrLstd : TdVariant::Lstd; }
};

/// Raw output count the control network needs for `head`.
int control_output_dim(int control_dim, ControlHead head);

double eval_value(const ResidualMLP& net, const Vector& x);
Vector eval_control(const ResidualMLP& net, ControlHead head, const Vector& x);

/// Maps raw control-network outputs (columns) to controls.
Matrix apply_head(ControlHead head, const Matrix& raw);
Var apply_head(ad::Tape& tape, ControlHead head, Var raw);

/// Batched plain evaluations over columns.
Matrix eval_control_batch(const NetworkSet& nets, const Matrix& x);
Vector eval_value_batch(const NetworkSet& nets, const Matrix& x);

}  // namespace hjbac::nn
