#include "hjbac/autodiff/tape.hpp"

#include <cmath>
#include <string>
#include <utility>

namespace hjbac::ad {

namespace {

void require(bool ok, const char* what) {
  if (!ok) throw std::invalid_argument(what);
}

void require_same_shape(const Matrix& a, const Matrix& b, const char* op) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) {
    throw std::invalid_argument(std::string("shape mismatch in ") + op + ": " +
                                std::to_string(a.rows()) + "x" + std::to_string(a.cols()) +
                                " vs " + std::to_string(b.rows()) + "x" +
                                std::to_string(b.cols()));
  }
}

Matrix positive_mask(const Matrix& a, double threshold) {
  return (a.array() > threshold).cast<double>().matrix();
}

}  // namespace

const char* op_name(Op op) {
  switch (op) {
    case Op::Constant: return "constant";
    case Op::Variable: return "variable";
    case Op::Param: return "param";
    case Op::Affine: return "affine";
    case Op::Add: return "add";
    case Op::Sub: return "sub";
    case Op::Mul: return "mul";
    case Op::Div: return "div";
    case Op::Scale: return "scale";
    case Op::AddScalar: return "add_scalar";
    case Op::ResidualAct: return "residual_act";
    case Op::Relu: return "relu";
    case Op::Exp: return "exp";
    case Op::Sqrt: return "sqrt";
    case Op::Square: return "square";
    case Op::ColSqNorm: return "col_sq_norm";
    case Op::ColDot: return "col_dot";
    case Op::MaxScalar: return "max_scalar";
    case Op::Where: return "where";
    case Op::ConcatRows: return "concat_rows";
    case Op::Rows: return "rows";
    case Op::BroadcastRows: return "broadcast_rows";
    case Op::BroadcastScalar: return "broadcast_scalar";
    case Op::Gather: return "gather_cols";
    case Op::Scatter: return "scatter_cols";
    case Op::ScatterAdd: return "scatter_add_cols";
    case Op::SegmentSum: return "segment_sum";
    case Op::Sum: return "sum";
    case Op::Mean: return "mean";
    case Op::StopGradient: return "stop_gradient";
    case Op::Opaque: return "opaque";
    case Op::ColScalar: return "col_scalar";
  }
  return "?";
}

Index Var::rows() const { return tape->value(*this).rows(); }
Index Var::cols() const { return tape->value(*this).cols(); }
const Matrix& Var::value() const { return tape->value(*this); }

const Tape::Node& Tape::node(Var v) const {
  if (v.tape != this || v.id < 0 || static_cast<std::size_t>(v.id) >= nodes_.size()) {
    throw std::invalid_argument("Var does not belong to this tape");
  }
  return nodes_[static_cast<std::size_t>(v.id)];
}

Var Tape::push(Node n) {
  // A NaN or inf anywhere makes the sum non-finite; the sum is much cheaper.
  if (!std::isfinite(n.value.sum()) && !n.value.allFinite()) {
    throw NumericFailure(std::string("non-finite value produced by ") + op_name(n.op) +
                             " at node " + std::to_string(nodes_.size()),
                         static_cast<std::ptrdiff_t>(nodes_.size()));
  }
  nodes_.push_back(std::move(n));
  return Var{this, static_cast<std::int32_t>(nodes_.size() - 1)};
}

Var Tape::push_unary(Op op, Var a, Matrix value, double k) {
  Node n;
  n.op = op;
  n.a = a.id;
  n.k = k;
  n.requires_grad = needs(a);
  n.value = std::move(value);
  return push(std::move(n));
}

Var Tape::push_binary(Op op, Var a, Var b, Matrix value) {
  Node n;
  n.op = op;
  n.a = a.id;
  n.b = b.id;
  n.requires_grad = needs(a) || needs(b);
  n.value = std::move(value);
  return push(std::move(n));
}

Var Tape::constant(Matrix value) {
  Node n;
  n.op = Op::Constant;
  n.value = std::move(value);
  return push(std::move(n));
}

Var Tape::constant(double value) { return constant(Matrix::Constant(1, 1, value)); }

Var Tape::variable(Matrix value) {
  Node n;
  n.op = Op::Variable;
  n.requires_grad = grad_enabled_;
  n.value = std::move(value);
  return push(std::move(n));
}

Var Tape::param(const ParamVector& params, std::size_t block, bool trainable) {
  Node n;
  n.op = Op::Param;
  n.params = &params;
  n.block = block;
  n.requires_grad = grad_enabled_ && trainable;
  n.value = params.view(block);
  return push(std::move(n));
}

Var Tape::affine(Var w, Var x, Var b) {
  const Matrix& W = value(w);
  const Matrix& X = value(x);
  const Matrix& B = value(b);
  require(W.cols() == X.rows(), "affine: weight columns must equal input rows");
  require(B.rows() == W.rows() && B.cols() == 1, "affine: bias must be a column of output size");
  // Bias first so the product accumulates instead of zero-filling.
  Matrix out = B.col(0).replicate(1, X.cols());
  out.noalias() += W * X;
  Node n;
  n.op = Op::Affine;
  n.a = w.id;
  n.b = x.id;
  n.c = b.id;
  n.requires_grad = needs(w) || needs(x) || needs(b);
  n.value = std::move(out);
  return push(std::move(n));
}

std::pair<Var, Var> Tape::conform(Var a, Var b) {
  const Matrix& A = value(a);
  const Matrix& B = value(b);
  if (A.rows() == B.rows() && A.cols() == B.cols()) return {a, b};
  auto expand = [&](Var small, const Matrix& big) -> Var {
    const Matrix& S = value(small);
    if (S.rows() == 1 && S.cols() == 1) return broadcast_scalar(small, big.rows(), big.cols());
    if (S.rows() == 1 && S.cols() == big.cols()) return broadcast_rows(small, big.rows());
    throw std::invalid_argument("incompatible operand shapes " + std::to_string(S.rows()) + "x" +
                                std::to_string(S.cols()) + " and " + std::to_string(big.rows()) +
                                "x" + std::to_string(big.cols()));
  };
  if (A.size() <= B.size()) {
    Var ea = expand(a, value(b));
    return {ea, b};
  }
  Var eb = expand(b, value(a));
  return {a, eb};
}

Var Tape::add(Var a, Var b) {
  std::tie(a, b) = conform(a, b);
  return push_binary(Op::Add, a, b, value(a) + value(b));
}

Var Tape::sub(Var a, Var b) {
  std::tie(a, b) = conform(a, b);
  return push_binary(Op::Sub, a, b, value(a) - value(b));
}

Var Tape::mul(Var a, Var b) {
  std::tie(a, b) = conform(a, b);
  return push_binary(Op::Mul, a, b, value(a).cwiseProduct(value(b)));
}

Var Tape::div(Var a, Var b) {
  std::tie(a, b) = conform(a, b);
  return push_binary(Op::Div, a, b, value(a).cwiseQuotient(value(b)));
}

Var Tape::scale(Var a, double c) { return push_unary(Op::Scale, a, value(a) * c, c); }

Var Tape::add_scalar(Var a, double c) {
  return push_unary(Op::AddScalar, a, (value(a).array() + c).matrix(), c);
}

Var Tape::residual_act(Var a) {
  const Matrix& A = value(a);
  return push_unary(Op::ResidualAct, a, A + A.cwiseMax(0.0));
}

Var Tape::relu(Var a) { return push_unary(Op::Relu, a, value(a).cwiseMax(0.0)); }

Var Tape::exp(Var a) { return push_unary(Op::Exp, a, value(a).array().exp().matrix()); }

Var Tape::sqrt(Var a) {
  const Matrix& A = value(a);
  if ((A.array() < 0.0).any()) {
    throw NumericFailure("sqrt of a negative value at node " + std::to_string(nodes_.size()),
                         static_cast<std::ptrdiff_t>(nodes_.size()));
  }
  return push_unary(Op::Sqrt, a, A.array().sqrt().matrix());
}

Var Tape::square(Var a) { return push_unary(Op::Square, a, value(a).array().square().matrix()); }

Var Tape::col_sq_norm(Var a) {
  return push_unary(Op::ColSqNorm, a, value(a).colwise().squaredNorm());
}

Var Tape::col_dot(Var a, Var b) {
  require_same_shape(value(a), value(b), "col_dot");
  return push_binary(Op::ColDot, a, b, value(a).cwiseProduct(value(b)).colwise().sum());
}

Var Tape::max_scalar(Var a, double c) {
  return push_unary(Op::MaxScalar, a, value(a).cwiseMax(c), c);
}

Var Tape::where(const Matrix& mask, Var a, Var b) {
  require_same_shape(value(a), value(b), "where");
  require_same_shape(mask, value(a), "where(mask)");
  Matrix out = value(b);
  const Matrix& A = value(a);
  for (Index j = 0; j < out.cols(); ++j) {
    for (Index i = 0; i < out.rows(); ++i) {
      if (mask(i, j) != 0.0) out(i, j) = A(i, j);
    }
  }
  Node n;
  n.op = Op::Where;
  n.a = a.id;
  n.b = b.id;
  n.mask = mask;
  n.requires_grad = needs(a) || needs(b);
  n.value = std::move(out);
  return push(std::move(n));
}

Var Tape::concat_rows(std::span<const Var> parts) {
  require(!parts.empty(), "concat_rows: no inputs");
  const Index cols = value(parts[0]).cols();
  Index total = 0;
  for (const Var& p : parts) {
    require(value(p).cols() == cols, "concat_rows: column counts differ");
    total += value(p).rows();
  }
  Matrix out(total, cols);
  Node n;
  n.op = Op::ConcatRows;
  Index r = 0;
  for (const Var& p : parts) {
    const Matrix& P = value(p);
    out.middleRows(r, P.rows()) = P;
    r += P.rows();
    n.inputs.push_back(p.id);
    n.requires_grad = n.requires_grad || needs(p);
  }
  n.value = std::move(out);
  return push(std::move(n));
}

Var Tape::rows(Var a, Index start, Index count) {
  const Matrix& A = value(a);
  require(start >= 0 && count >= 0 && start + count <= A.rows(), "rows: range out of bounds");
  Node n;
  n.op = Op::Rows;
  n.a = a.id;
  n.r0 = start;
  n.requires_grad = needs(a);
  n.value = A.middleRows(start, count);
  return push(std::move(n));
}

Var Tape::broadcast_rows(Var row, Index rows) {
  const Matrix& R = value(row);
  require(R.rows() == 1, "broadcast_rows: input must be a single row");
  return push_unary(Op::BroadcastRows, row, R.replicate(rows, 1));
}

Var Tape::broadcast_scalar(Var s, Index rows, Index cols) {
  const Matrix& S = value(s);
  require(S.rows() == 1 && S.cols() == 1, "broadcast_scalar: input must be 1x1");
  return push_unary(Op::BroadcastScalar, s, Matrix::Constant(rows, cols, S(0, 0)));
}

Var Tape::gather_cols(Var a, std::vector<Index> cols) {
  const Matrix& A = value(a);
  Matrix out(A.rows(), static_cast<Index>(cols.size()));
  for (std::size_t j = 0; j < cols.size(); ++j) {
    require(cols[j] >= 0 && cols[j] < A.cols(), "gather_cols: index out of range");
    out.col(static_cast<Index>(j)) = A.col(cols[j]);
  }
  Node n;
  n.op = Op::Gather;
  n.a = a.id;
  n.idx = std::move(cols);
  n.requires_grad = needs(a);
  n.value = std::move(out);
  return push(std::move(n));
}

Var Tape::scatter_cols(Var base, std::vector<Index> cols, Var src) {
  const Matrix& B = value(base);
  const Matrix& S = value(src);
  require(S.rows() == B.rows() && S.cols() == static_cast<Index>(cols.size()),
          "scatter_cols: source shape mismatch");
  Matrix out = B;
  for (std::size_t j = 0; j < cols.size(); ++j) {
    require(cols[j] >= 0 && cols[j] < B.cols(), "scatter_cols: index out of range");
    out.col(cols[j]) = S.col(static_cast<Index>(j));
  }
  Node n;
  n.op = Op::Scatter;
  n.a = base.id;
  n.b = src.id;
  n.idx = std::move(cols);
  n.requires_grad = needs(base) || needs(src);
  n.value = std::move(out);
  return push(std::move(n));
}

Var Tape::scatter_add_cols(Var base, std::vector<Index> cols, Var src) {
  const Matrix& B = value(base);
  const Matrix& S = value(src);
  require(S.rows() == B.rows() && S.cols() == static_cast<Index>(cols.size()),
          "scatter_add_cols: source shape mismatch");
  Matrix out = B;
  for (std::size_t j = 0; j < cols.size(); ++j) {
    require(cols[j] >= 0 && cols[j] < B.cols(), "scatter_add_cols: index out of range");
    out.col(cols[j]) += S.col(static_cast<Index>(j));
  }
  Node n;
  n.op = Op::ScatterAdd;
  n.a = base.id;
  n.b = src.id;
  n.idx = std::move(cols);
  n.requires_grad = needs(base) || needs(src);
  n.value = std::move(out);
  return push(std::move(n));
}

Var Tape::segment_sum(Var a, std::vector<Index> segment, Index segments) {
  const Matrix& A = value(a);
  require(static_cast<Index>(segment.size()) == A.cols(), "segment_sum: one segment per column");
  Matrix out = Matrix::Zero(A.rows(), segments);
  for (Index j = 0; j < A.cols(); ++j) {
    const Index s = segment[static_cast<std::size_t>(j)];
    require(s >= 0 && s < segments, "segment_sum: segment out of range");
    out.col(s) += A.col(j);
  }
  Node n;
  n.op = Op::SegmentSum;
  n.a = a.id;
  n.idx = std::move(segment);
  n.requires_grad = needs(a);
  n.value = std::move(out);
  return push(std::move(n));
}

Var Tape::sum(Var a) { return push_unary(Op::Sum, a, Matrix::Constant(1, 1, value(a).sum())); }

Var Tape::mean(Var a) {
  const Matrix& A = value(a);
  require(A.size() > 0, "mean of an empty matrix");
  return push_unary(Op::Mean, a, Matrix::Constant(1, 1, A.mean()));
}

Var Tape::stop_gradient(Var a) {
  Node n;
  n.op = Op::StopGradient;
  n.a = a.id;
  n.value = value(a);
  return push(std::move(n));
}

Var Tape::opaque(Var x, Index out_rows, const ColumnFn& fn) {
  const Matrix& X = value(x);
  Matrix out(out_rows, X.cols());
  for (Index j = 0; j < X.cols(); ++j) {
    Vector y = fn(X.col(j));
    require(y.size() == out_rows, "opaque: function returned the wrong length");
    out.col(j) = y;
  }
  Node n;
  n.op = Op::Opaque;
  n.a = x.id;
  n.value = std::move(out);
  return push(std::move(n));
}

Var Tape::col_scalar(Var a, Var b, Matrix out, Matrix da, Matrix db) {
  const Index B = value(a).cols();
  require(out.rows() == 1 && out.cols() == B && value(b).cols() == B, "col_scalar: column count mismatch");
  Node n;
  n.op = Op::ColScalar;
  n.a = a.id;
  n.b = b.id;
  n.requires_grad = needs(a) || needs(b);
  if (n.requires_grad) {
    // Gradients may be left empty when nothing upstream is differentiable.
    require_same_shape(da, value(a), "col_scalar(da)");
    require_same_shape(db, value(b), "col_scalar(db)");
    n.mask = std::move(da);
    n.mask2 = std::move(db);
  }
  n.value = std::move(out);
  return push(std::move(n));
}

double Tape::scalar(Var v) const {
  const Matrix& m = value(v);
  if (m.rows() != 1 || m.cols() != 1) throw std::logic_error("scalar(): node is not 1x1");
  return m(0, 0);
}

Matrix& Tape::adj_of(std::int32_t id) {
  Node& n = nodes_[static_cast<std::size_t>(id)];
  if (n.adj.size() == 0) n.adj = Matrix::Zero(n.value.rows(), n.value.cols());
  return n.adj;
}

void Tape::backward(Var root) {
  if (!grad_enabled_) throw std::logic_error("backward() on a tape built without gradients");
  const Node& r = node(root);
  if (r.value.rows() != 1 || r.value.cols() != 1) {
    throw std::logic_error("backward() requires a scalar root");
  }
  for (Node& n : nodes_) n.adj.resize(0, 0);
  if (!r.requires_grad) return;
  adj_of(root.id)(0, 0) = 1.0;
  for (std::size_t i = static_cast<std::size_t>(root.id) + 1; i-- > 0;) {
    if (nodes_[i].requires_grad && nodes_[i].adj.size() != 0) backprop_node(i);
  }
}

void Tape::backprop_node(std::size_t i) {
  // Inputs precede i, so references into nodes_ stay valid (no push here).
  const Node& n = nodes_[i];
  const Matrix& g = n.adj;
  auto wants = [&](std::int32_t id) {
    return id >= 0 && nodes_[static_cast<std::size_t>(id)].requires_grad;
  };
  auto val = [&](std::int32_t id) -> const Matrix& {
    return nodes_[static_cast<std::size_t>(id)].value;
  };

  switch (n.op) {
    case Op::Constant:
    case Op::Variable:
    case Op::Param:
    case Op::StopGradient:
    case Op::Opaque:
      break;
    case Op::ColScalar:
      if (wants(n.a)) acc(n.a, (n.mask.array().rowwise() * g.row(0).array()).matrix());
      if (wants(n.b)) acc(n.b, (n.mask2.array().rowwise() * g.row(0).array()).matrix());
      break;
    case Op::Affine: {
      if (wants(n.a)) acc(n.a, g * val(n.b).transpose());
      if (wants(n.b)) acc(n.b, val(n.a).transpose() * g);
      if (wants(n.c)) acc(n.c, g.rowwise().sum());
      break;
    }
    case Op::Add:
      if (wants(n.a)) acc(n.a, g);
      if (wants(n.b)) acc(n.b, g);
      break;
    case Op::Sub:
      if (wants(n.a)) acc(n.a, g);
      if (wants(n.b)) adj_of(n.b) -= g;
      break;
    case Op::Mul:
      if (wants(n.a)) acc(n.a, g.cwiseProduct(val(n.b)));
      if (wants(n.b)) acc(n.b, g.cwiseProduct(val(n.a)));
      break;
    case Op::Div:
      if (wants(n.a)) acc(n.a, g.cwiseQuotient(val(n.b)));
      if (wants(n.b)) adj_of(n.b) -= g.cwiseProduct(n.value).cwiseQuotient(val(n.b));
      break;
    case Op::Scale:
      acc(n.a, n.k * g);
      break;
    case Op::AddScalar:
      acc(n.a, g);
      break;
    case Op::ResidualAct:
      acc(n.a, (val(n.a).array() > 0.0).select(2.0 * g.array(), g.array()).matrix());
      break;
    case Op::Relu:
      acc(n.a, (val(n.a).array() > 0.0).select(g.array(), 0.0).matrix());
      break;
    case Op::Exp:
      acc(n.a, g.cwiseProduct(n.value));
      break;
    case Op::Sqrt:
      // d sqrt(a) at a = 0 is taken as 0.
      adj_of(n.a) += g.binaryExpr(n.value, [](double gi, double s) {
        return s > 0.0 ? 0.5 * gi / s : 0.0;
      });
      break;
    case Op::Square:
      acc(n.a, 2.0 * g.cwiseProduct(val(n.a)));
      break;
    case Op::ColSqNorm: {
      const Matrix& A = val(n.a);
      acc(n.a, 2.0 * (A.array().rowwise() * g.row(0).array()).matrix());
      break;
    }
    case Op::ColDot: {
      if (wants(n.a)) {
        acc(n.a, (val(n.b).array().rowwise() * g.row(0).array()).matrix());
      }
      if (wants(n.b)) {
        acc(n.b, (val(n.a).array().rowwise() * g.row(0).array()).matrix());
      }
      break;
    }
    case Op::MaxScalar:
      acc(n.a, g.cwiseProduct(positive_mask(val(n.a), n.k)));
      break;
    case Op::Where:
      if (wants(n.a)) acc(n.a, g.cwiseProduct(n.mask));
      if (wants(n.b)) acc(n.b, g.cwiseProduct((1.0 - n.mask.array()).matrix()));
      break;
    case Op::ConcatRows: {
      Index r = 0;
      for (std::int32_t id : n.inputs) {
        const Index rows = val(id).rows();
        if (wants(id)) acc(id, g.middleRows(r, rows));
        r += rows;
      }
      break;
    }
    case Op::Rows:
      adj_of(n.a).middleRows(n.r0, n.value.rows()) += g;
      break;
    case Op::BroadcastRows:
      acc(n.a, g.colwise().sum());
      break;
    case Op::BroadcastScalar:
      adj_of(n.a)(0, 0) += g.sum();
      break;
    case Op::Gather: {
      Matrix& ga = adj_of(n.a);
      for (std::size_t j = 0; j < n.idx.size(); ++j) ga.col(n.idx[j]) += g.col(static_cast<Index>(j));
      break;
    }
    case Op::Scatter: {
      if (wants(n.a)) {
        Matrix& ga = adj_of(n.a);
        Matrix pass = g;
        for (Index c : n.idx) pass.col(c).setZero();
        ga += pass;
      }
      if (wants(n.b)) {
        Matrix& gb = adj_of(n.b);
        for (std::size_t j = 0; j < n.idx.size(); ++j) gb.col(static_cast<Index>(j)) += g.col(n.idx[j]);
      }
      break;
    }
    case Op::ScatterAdd: {
      if (wants(n.a)) acc(n.a, g);
      if (wants(n.b)) {
        Matrix& gb = adj_of(n.b);
        for (std::size_t j = 0; j < n.idx.size(); ++j) gb.col(static_cast<Index>(j)) += g.col(n.idx[j]);
      }
      break;
    }
    case Op::SegmentSum: {
      Matrix& ga = adj_of(n.a);
      for (std::size_t j = 0; j < n.idx.size(); ++j) ga.col(static_cast<Index>(j)) += g.col(n.idx[j]);
      break;
    }
    case Op::Sum:
      adj_of(n.a).array() += g(0, 0);
      break;
    case Op::Mean: {
      Matrix& ga = adj_of(n.a);
      ga.array() += g(0, 0) / static_cast<double>(ga.size());
      break;
    }
  }
}

void Tape::accumulate_param_grad(const ParamVector& params, Vector& grad) const {
  if (grad.size() != static_cast<Index>(params.size())) {
    throw std::invalid_argument("accumulate_param_grad: gradient length mismatch");
  }
  for (const Node& n : nodes_) {
    if (n.op != Op::Param || n.params != &params || !n.requires_grad || n.adj.size() == 0) continue;
    const ParamBlock& b = params.block(n.block);
    Eigen::Map<Matrix>(grad.data() + b.offset, b.rows, b.cols) += n.adj;
  }
}

Var operator+(Var a, Var b) { return a.tape->add(a, b); }
Var operator-(Var a, Var b) { return a.tape->sub(a, b); }
Var operator*(Var a, Var b) { return a.tape->mul(a, b); }
Var operator/(Var a, Var b) { return a.tape->div(a, b); }
Var operator+(Var a, double c) { return a.tape->add_scalar(a, c); }
Var operator+(double c, Var a) { return a.tape->add_scalar(a, c); }
Var operator-(Var a, double c) { return a.tape->add_scalar(a, -c); }
Var operator-(double c, Var a) { return a.tape->add_scalar(a.tape->scale(a, -1.0), c); }
Var operator*(Var a, double c) { return a.tape->scale(a, c); }
Var operator*(double c, Var a) { return a.tape->scale(a, c); }
Var operator/(Var a, double c) { return a.tape->scale(a, 1.0 / c); }
Var operator/(double c, Var a) { return a.tape->div(a.tape->constant(c), a); }
Var operator-(Var a) { return a.tape->scale(a, -1.0); }

}  // namespace hjbac::ad
