#include "hjbac/rollout/policy.hpp"

#include <stdexcept>

namespace hjbac::sim {

Var NetworkPolicy::apply(ad::Tape& tape, Var x) const {
  if (bound_tape_ != &tape || bound_generation_ != tape.generation() || bound_.weights.empty() ||
      static_cast<std::size_t>(bound_.weights.back().id) >= tape.size()) {
    bound_ = nets_.control.bind(tape, trainable_);
    bound_tape_ = &tape;
    bound_generation_ = tape.generation();
  }
  Var raw = nets_.control.apply(tape, bound_, x);
  return nn::apply_head(tape, nets_.head, raw);
}

Matrix NetworkPolicy::eval(const Matrix& x) const { return nn::eval_control_batch(nets_, x); }

Var FunctionPolicy::apply(ad::Tape& tape, Var x) const {
  return tape.opaque(x, control_dim_, [this](const Eigen::Ref<const Vector>& col) {
    return fn_(Vector(col));
  });
}

Matrix FunctionPolicy::eval(const Matrix& x) const {
  Matrix u(control_dim_, x.cols());
  for (Eigen::Index j = 0; j < x.cols(); ++j) u.col(j) = fn_(x.col(j));
  return u;
}

FunctionPolicy exact_policy(const pde::ProblemPtr& problem) {
  if (!problem || !problem->has_exact()) {
    throw std::invalid_argument("exact_policy: problem has no exact control");
  }
  return FunctionPolicy(problem->control_dim(),
                        [problem](const Vector& x) { return problem->exact_control(x); });
}

}  // namespace hjbac::sim
