#pragma once

// Reverse-mode automatic differentiation over dense column batches.
//
// Every node holds a matrix whose columns are independent samples (trajectory
// states, validation points, ...). Rows are features. The op set is the small
// closed list the solver needs; there is no general broadcasting beyond the
// scalar and single-row cases handled by the arithmetic helpers.

#include <cstdint>
#include <functional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "hjbac/autodiff/param_vector.hpp"

namespace hjbac::ad {

using Index = Eigen::Index;

/// A non-finite value appeared during a forward pass or an optimizer update.
class NumericFailure : public std::runtime_error {
 public:
  explicit NumericFailure(const std::string& what, std::ptrdiff_t node = -1)
      : std::runtime_error(what), node_(node) {}
  std::ptrdiff_t node() const { return node_; }

 private:
  std::ptrdiff_t node_;
};

class Tape;

/// Handle to a node on a tape. Cheap to copy; only valid while the tape lives.
struct Var {
  Tape* tape = nullptr;
  std::int32_t id = -1;

  bool valid() const { return tape != nullptr && id >= 0; }
  Index rows() const;
  Index cols() const;
  const Matrix& value() const;
};

enum class Op : std::uint8_t {
  Constant,
  Variable,
  Param,
  Affine,
  Add,
  Sub,
  Mul,
  Div,
  Scale,
  AddScalar,
  ResidualAct,
  Relu,
  Exp,
  Sqrt,
  Square,
  ColSqNorm,
  ColDot,
  MaxScalar,
  Where,
  ConcatRows,
  Rows,
  BroadcastRows,
  BroadcastScalar,
  Gather,
  Scatter,
  ScatterAdd,
  SegmentSum,
  Sum,
  Mean,
  StopGradient,
  Opaque,
  ColScalar,
};

const char* op_name(Op op);

class Tape {
 public:
  /// Column-wise external map used for non-differentiable heads (exact
  /// solutions, lookup tables). Its output is a constant w.r.t. its input.
  using ColumnFn = std::function<Vector(const Eigen::Ref<const Vector>&)>;

  explicit Tape(bool grad_enabled = true) : grad_enabled_(grad_enabled) {}
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;
  Tape(Tape&&) = default;
  Tape& operator=(Tape&&) = default;

  bool grad_enabled() const { return grad_enabled_; }
  std::size_t size() const { return nodes_.size(); }
  void clear() {
    nodes_.clear();
    ++generation_;
  }
  /// Bumped by clear(); lets callers detect stale Vars.
  std::uint64_t generation() const { return generation_; }

  // Leaves.
  Var constant(Matrix value);
  Var constant(double value);
  Var variable(Matrix value);
  /// Binds block `block` of `params`. The ParamVector must outlive the tape.
  /// A non-trainable binding is a stop-gradient leaf: its adjoint is never
  /// accumulated into a parameter gradient.
  Var param(const ParamVector& params, std::size_t block, bool trainable);

  // Dense ops.
  Var affine(Var w, Var x, Var b);
  Var add(Var a, Var b);
  Var sub(Var a, Var b);
  Var mul(Var a, Var b);
  Var div(Var a, Var b);
  Var scale(Var a, double c);
  Var add_scalar(Var a, double c);
  Var residual_act(Var a);
  Var relu(Var a);
  Var exp(Var a);
  Var sqrt(Var a);
  Var square(Var a);
  Var col_sq_norm(Var a);
  Var col_dot(Var a, Var b);
  Var max_scalar(Var a, double c);
  /// mask entries are 0 or 1 and the mask has the shape of a and b.
  Var where(const Matrix& mask, Var a, Var b);
  Var concat_rows(std::span<const Var> parts);
  Var rows(Var a, Index start, Index count);
  Var broadcast_rows(Var row, Index rows);
  Var broadcast_scalar(Var s, Index rows, Index cols);

  // Column bookkeeping.
  Var gather_cols(Var a, std::vector<Index> cols);
  /// Copy of `base` with column cols[j] replaced by column j of `src`.
  Var scatter_cols(Var base, std::vector<Index> cols, Var src);
  /// Copy of `base` with column j of `src` added into column cols[j].
  Var scatter_add_cols(Var base, std::vector<Index> cols, Var src);
  /// Sums column j of `a` into output column segment[j].
  Var segment_sum(Var a, std::vector<Index> segment, Index segments);

  // Reductions and markers.
  Var sum(Var a);
  Var mean(Var a);
  Var stop_gradient(Var a);
  Var opaque(Var x, Index out_rows, const ColumnFn& fn);
  /// 1 x B node whose column j depends only on column j of a and b, with the
  /// caller supplying value and per-column gradients (da has a's shape, db b's).
  Var col_scalar(Var a, Var b, Matrix out, Matrix da, Matrix db);

  const Matrix& value(Var v) const { return node(v).value; }
  Op op_at(std::size_t i) const { return nodes_.at(i).op; }
  double scalar(Var v) const;

  /// Reverse sweep from a 1x1 root. Throws std::logic_error if the root is not
  /// scalar or the tape was built without gradients.
  void backward(Var root);

  /// Adjoint of a node after backward(); an empty matrix means zero.
  const Matrix& adjoint(Var v) const { return node(v).adj; }
  bool requires_grad(Var v) const { return node(v).requires_grad; }

  /// Adds the adjoints of every trainable binding of `params` into `grad`.
  void accumulate_param_grad(const ParamVector& params, Vector& grad) const;

 private:
  struct Node {
    Op op = Op::Constant;
    std::int32_t a = -1;
    std::int32_t b = -1;
    std::int32_t c = -1;
    bool requires_grad = false;
    double k = 0.0;
    Index r0 = 0;
    Matrix value;
    Matrix adj;
    Matrix mask;
    Matrix mask2;
    std::vector<Index> idx;
    std::vector<std::int32_t> inputs;
    const ParamVector* params = nullptr;
    std::size_t block = 0;
  };

  const Node& node(Var v) const;
  Var push(Node n);
  Var push_unary(Op op, Var a, Matrix value, double k = 0.0);
  Var push_binary(Op op, Var a, Var b, Matrix value);
  bool needs(Var v) const { return node(v).requires_grad; }
  Matrix& adj_of(std::int32_t id);
  // adj += e, assigning on first touch instead of zero-filling.
  template <typename Expr>
  void acc(std::int32_t id, const Expr& e) {
    Matrix& a = nodes_[static_cast<std::size_t>(id)].adj;
    if (a.size() == 0) {
      a.noalias() = e;
    } else {
      a.noalias() += e;
    }
  }
  void backprop_node(std::size_t i);
  // Expands a scalar or single row operand so both shapes agree.
  std::pair<Var, Var> conform(Var a, Var b);

  bool grad_enabled_;
  std::uint64_t generation_ = 0;
  std::vector<Node> nodes_;
};

// Arithmetic sugar. Binary forms accept a 1x1 or 1xB operand against an m x B
// operand and broadcast it explicitly on the tape.
Var operator+(Var a, Var b);
Var operator-(Var a, Var b);
Var operator*(Var a, Var b);
Var operator/(Var a, Var b);
Var operator+(Var a, double c);
Var operator+(double c, Var a);
Var operator-(Var a, double c);
Var operator-(double c, Var a);
Var operator*(Var a, double c);
Var operator*(double c, Var a);
Var operator/(Var a, double c);
Var operator/(double c, Var a);
Var operator-(Var a);

}  // namespace hjbac::ad
