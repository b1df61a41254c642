#include "hjbac/networks/network_set.hpp"

#include <algorithm>
#include <stdexcept>

namespace hjbac::nn {

std::string to_string(ControlHead head) {
  return head == ControlHead::UnitBall ? "unit-ball" : "unconstrained";
}

std::string to_string(TdVariant td) { return td == TdVariant::VrLstd ? "vr-lstd" : "lstd"; }

int control_output_dim(int control_dim, ControlHead head) {
  return head == ControlHead::UnitBall ? control_dim + 1 : control_dim;
}

NetworkSet NetworkSet::create(int dim, int control_dim, TdVariant td, ControlHead head,
                              const Architecture& arch, std::uint64_t seed) {
  NetworkSet set;
  set.head = head;
  set.value = ResidualMLP(dim, 1, arch.width, arch.depth);
  set.value.initialize(seed * 3 + 0);
  if (td == TdVariant::VrLstd) {
    set.gradient.emplace(dim, dim, arch.width, arch.depth);
    set.gradient->initialize(seed * 3 + 1);
  }
  set.control = ResidualMLP(dim, control_output_dim(control_dim, head), arch.width, arch.depth);
  set.control.initialize(seed * 3 + 2);
  return set;
}

int NetworkSet::control_dim() const {
  return head == ControlHead::UnitBall ? control.out_dim() - 1 : control.out_dim();
}

Matrix apply_head(ControlHead head, const Matrix& raw) {
  if (head == ControlHead::Unconstrained) return raw;
  if (raw.rows() < 2) throw std::invalid_argument("unit-ball head needs at least 2 raw outputs");
  const Eigen::Index du = raw.rows() - 1;
  Matrix u(du, raw.cols());
  for (Eigen::Index j = 0; j < raw.cols(); ++j) {
    const double len = std::max(raw(0, j), 0.0);
    const auto dir = raw.col(j).tail(du);
    u.col(j) = dir / (kUnitBallDelta + len + dir.norm());
    // Rounding can leave |u| one ulp above 1 when len and delta vanish.
    while (u.col(j).norm() > 1.0) u.col(j) *= 1.0 - 0x1p-52;
  }
  return u;
}

Var apply_head(ad::Tape& tape, ControlHead head, Var raw) {
  if (head == ControlHead::Unconstrained) return raw;
  if (raw.rows() < 2) throw std::invalid_argument("unit-ball head needs at least 2 raw outputs");
  const Eigen::Index du = raw.rows() - 1;
  Var len = tape.relu(tape.rows(raw, 0, 1));
  Var dir = tape.rows(raw, 1, du);
  Var denom = tape.add_scalar(tape.add(len, tape.sqrt(tape.col_sq_norm(dir))), kUnitBallDelta);
  return tape.div(dir, denom);
}

double eval_value(const ResidualMLP& net, const Vector& x) {
  if (net.out_dim() != 1) throw std::invalid_argument("eval_value: network must have one output");
  return net.forward(x)(0, 0);
}

Vector eval_control(const ResidualMLP& net, ControlHead head, const Vector& x) {
  return apply_head(head, net.forward(x)).col(0);
}

Matrix eval_control_batch(const NetworkSet& nets, const Matrix& x) {
  return apply_head(nets.head, nets.control.forward(x));
}

Vector eval_value_batch(const NetworkSet& nets, const Matrix& x) {
  return nets.value.forward(x).row(0).transpose();
}

}  // namespace hjbac::nn
