#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/SVD>

#include "hjbac/problems/problem.hpp"

namespace hjbac::pde {

double Problem::max_diffusion_norm(const Matrix& x, const Matrix& u) const {
  double worst = 0.0;
  for (Eigen::Index j = 0; j < x.cols(); ++j) {
    const Matrix s = diffusion(x.col(j), u.col(j));
    Eigen::JacobiSVD<Matrix> svd(s);
    worst = std::max(worst, svd.singularValues()(0));
  }
  return worst;
}

double Problem::exact_value(const Vector&) const {
  throw std::logic_error(name() + " has no exact value function");
}

Vector Problem::exact_control(const Vector&) const {
  throw std::logic_error(name() + " has no exact control");
}

double lqr_k(double p, double q, double beta, double gamma) {
  return (std::sqrt(q * q * gamma * gamma + 4.0 * p * q * beta * beta) - gamma * q) /
         (2.0 * beta * beta);
}

namespace {

class Lqr final : public Problem {
 public:
  Lqr(int d, double p, double q, double beta, double gamma, double radius)
      : p_(p), q_(q), beta_(beta), k_(lqr_k(p, q, beta, gamma)) {
    if (d <= 0 || p <= 0 || q <= 0 || beta <= 0 || radius <= 0 || gamma < 0) {
      throw std::invalid_argument("make_lqr: need d, p, q, beta, R > 0 and gamma >= 0");
    }
    dim_ = control_dim_ = noise_dim_ = d;
    gamma_ = gamma;
    domain_.radius = radius;
    sigma_bound_ = std::sqrt(2.0);
  }

  std::string name() const override { return "lqr"; }
  double k() const { return k_; }

  Vector drift(const Vector&, const Vector& u) const override { return beta_ * u; }
  Matrix diffusion(const Vector&, const Vector&) const override {
    return std::sqrt(2.0) * Matrix::Identity(dim_, dim_);
  }
  Vector diffusion_apply(const Vector&, const Vector&, const Vector& xi) const override {
    return std::sqrt(2.0) * xi;
  }
  double running_cost(const Vector& x, const Vector& u) const override {
    return p_ * x.squaredNorm() + q_ * u.squaredNorm() - 2.0 * k_ * dim_;
  }
  double boundary_cost(const Vector&) const override {
    return k_ * domain_.radius * domain_.radius;
  }

  Var drift(ad::Tape&, Var, Var u) const override { return u * beta_; }
  Var diffusion_times(ad::Tape&, Var, Var, Var xi) const override { return xi * std::sqrt(2.0); }
  Var running_cost(ad::Tape& t, Var x, Var u) const override {
    return t.col_sq_norm(x) * p_ + t.col_sq_norm(u) * q_ - 2.0 * k_ * dim_;
  }

  double max_diffusion_norm(const Matrix&, const Matrix&) const override { return std::sqrt(2.0); }

  bool has_exact() const override { return true; }
  double exact_value(const Vector& x) const override { return k_ * x.squaredNorm(); }
  Vector exact_control(const Vector& x) const override { return -(k_ * beta_ / q_) * x; }

 private:
  double p_, q_, beta_, k_;
};

class VanDerPol final : public Problem {
 public:
  VanDerPol(int d, double a, double eps, double q, double gamma, double radius)
      : n_(d / 2), a_(a), eps_(eps), q_(q) {
    if (d <= 0 || d % 2 != 0) throw std::invalid_argument("make_van_der_pol: d must be even and positive");
    if (a <= 0 || q <= 0 || radius <= 0 || gamma < 0) {
      throw std::invalid_argument("make_van_der_pol: need a, q, R > 0 and gamma >= 0");
    }
    dim_ = noise_dim_ = d;
    control_dim_ = n_;
    gamma_ = gamma;
    domain_.radius = radius;
    sigma_bound_ = std::sqrt(2.0);
  }

  std::string name() const override { return "vdp"; }

  Vector drift(const Vector& x, const Vector& u) const override {
    Vector b(dim_);
    for (int i = 1; i <= n_; ++i) b[i - 1] = at(x, i + n_);
    for (int i = n_ + 1; i <= 2 * n_; ++i) {
      const double xp = at(x, i - n_);
      b[i - 1] = (1.0 - xp * xp) * at(x, i) - xp + u[i - n_ - 1];
    }
    return b;
  }

  Matrix diffusion(const Vector&, const Vector&) const override {
    return std::sqrt(2.0) * Matrix::Identity(dim_, dim_);
  }
  Vector diffusion_apply(const Vector&, const Vector&, const Vector& xi) const override {
    return std::sqrt(2.0) * xi;
  }

  // Term-by-term transcription of the running cost with 1-based indices and
  // the conventions x_0 = x_n, x_{2n+1} = x_{n+1}.
  double running_cost(const Vector& x, const Vector& u) const override {
    const int n = n_;
    const double a = a_;
    const double e = eps_;
    auto X = [&](int i) { return at(x, i); };

    double value_part = 0.0;
    for (int i = 1; i <= n; ++i) value_part += a * X(i) * X(i) - e * X(i) * X(i - 1);
    for (int i = n + 1; i <= 2 * n; ++i) value_part += a * X(i) * X(i) - e * X(i) * X(i + 1);

    auto w = [&](int i) { return 2.0 * a * X(i) - e * X(i - 1) - e * X(i + 1); };
    const double w1 = 2.0 * a * X(n + 1) - e * X(2 * n) - e * X(n + 2);
    double sq = w1 * w1;
    for (int i = n + 2; i <= 2 * n; ++i) sq += w(i) * w(i);

    double cross = 0.0;
    for (int i = 1; i <= n; ++i) cross += -2.0 * a * X(n + i) * X(i) + e * X(n + i) * X(i - 1);
    for (int i = 1; i <= n - 1; ++i) cross += e * X(n + i) * X(i + 1);
    cross += e * X(2 * n) * X(1);

    double drift_part = -(X(n + 1) - X(1) - X(1) * X(1) * X(n + 1)) * w1;
    for (int i = 2; i <= n; ++i) {
      drift_part -= (X(i + n) - X(i) - X(i) * X(i) * X(i + n)) *
                    (2.0 * a * X(i + n) - e * X(i + n - 1) - e * X(i + n + 1));
    }

    return q_ * u.squaredNorm() + gamma_ * value_part + sq / (4.0 * q_) - 4.0 * n * a + cross +
           drift_part;
  }

  double boundary_cost(const Vector& x) const override { return exact_value(x); }

  Var drift(ad::Tape& t, Var x, Var u) const override {
    Var pos = t.rows(x, 0, n_);
    Var vel = t.rows(x, n_, n_);
    Var acc = (1.0 - t.square(pos)) * vel - pos + u;
    const Var parts[] = {vel, acc};
    return t.concat_rows(parts);
  }

  Var diffusion_times(ad::Tape&, Var, Var, Var xi) const override { return xi * std::sqrt(2.0); }

  // Same cost written with cyclic neighbours inside each half:
  // f = q|u|^2 + gamma V + |w|^2/(4q) - 4na - vel.grad_pos V - (drift without u).w,
  // where w = grad_vel V = A vel, grad_pos V = A pos, A = 2a - eps (roll+1 + roll-1).
  // One fused node with hand-written gradients.
  Var running_cost(ad::Tape& t, Var x, Var u) const override {
    const Matrix& X = x.value();
    const Matrix& U = u.value();
    const Eigen::Index B = X.cols();
    const Matrix pos = X.topRows(n_);
    const Matrix vel = X.bottomRows(n_);
    const Matrix gp = apply_a(pos);
    const Matrix w = apply_a(vel);
    const Matrix free_acc = (vel - pos - pos.cwiseProduct(pos).cwiseProduct(vel));
    Matrix out(1, B);
    // V = (pos.A pos + vel.A vel) / 2.
    out.row(0) = q_ * U.colwise().squaredNorm() +
                 (0.5 * gamma_) * (pos.cwiseProduct(gp).colwise().sum() + vel.cwiseProduct(w).colwise().sum()) +
                 (1.0 / (4.0 * q_)) * w.colwise().squaredNorm() - vel.cwiseProduct(gp).colwise().sum() -
                 free_acc.cwiseProduct(w).colwise().sum();
    out.array() -= 4.0 * n_ * a_;
    if (!t.requires_grad(x) && !t.requires_grad(u)) return t.col_scalar(x, u, std::move(out), Matrix(), Matrix());
    Matrix dx(2 * n_, B);
    dx.topRows(n_) = gamma_ * gp - w +
                     (1.0 + 2.0 * pos.cwiseProduct(vel).array()).matrix().cwiseProduct(w);
    dx.bottomRows(n_) = gamma_ * w + apply_a(w) / (2.0 * q_) - gp -
                        (1.0 - pos.cwiseProduct(pos).array()).matrix().cwiseProduct(w) - apply_a(free_acc);
    return t.col_scalar(x, u, std::move(out), std::move(dx), (2.0 * q_) * U);
  }

  double max_diffusion_norm(const Matrix&, const Matrix&) const override { return std::sqrt(2.0); }

  bool has_exact() const override { return true; }

  double exact_value(const Vector& x) const override {
    double s = a_ * x.squaredNorm();
    for (int i = 1; i <= n_; ++i) s -= eps_ * at(x, i - 1) * at(x, i);
    for (int i = n_ + 1; i <= 2 * n_; ++i) s -= eps_ * at(x, i) * at(x, i + 1);
    return s;
  }

  // Minimizer of q|u|^2 + u . grad_vel V, i.e. -grad_vel V / (2q).
  Vector exact_control(const Vector& x) const override {
    Vector u(n_);
    u[0] = 2.0 * a_ * at(x, n_ + 1) - eps_ * at(x, 2 * n_) - eps_ * at(x, n_ + 2);
    for (int i = 2; i <= n_; ++i) {
      u[i - 1] = 2.0 * a_ * at(x, i + n_) - eps_ * at(x, i + n_ - 1) - eps_ * at(x, i + n_ + 1);
    }
    return -u / (2.0 * q_);
  }

 private:
  // 1-based component with the wrap conventions x_0 = x_n, x_{2n+1} = x_{n+1}.
  double at(const Vector& x, int i) const {
    if (i == 0) return x[n_ - 1];
    if (i == 2 * n_ + 1) return x[n_];
    return x[i - 1];
  }

  // A m = 2a m - eps (m_{i-1} + m_{i+1}), cyclic over the rows.
  Matrix apply_a(const Matrix& m) const {
    Matrix out = (2.0 * a_) * m;
    const Eigen::Index n = m.rows();
    for (Eigen::Index i = 0; i < n; ++i) {
      out.row(i) -= eps_ * (m.row((i + n - 1) % n) + m.row((i + 1) % n));
    }
    return out;
  }

  int n_;
  double a_, eps_, q_;
};

class Eikonal final : public Problem {
 public:
  Eikonal(int d, double a2, double a3, double radius) : a2_(a2), a3_(a3) {
    if (d <= 0 || a2 <= 0 || a3 <= 0 || radius <= 0) {
      throw std::invalid_argument("make_eikonal: need d, a2, a3, R > 0");
    }
    if (!(2.0 * a2 - 3.0 * a3 * radius > 0.0)) {
      throw std::invalid_argument("make_eikonal: requires 2 a2 - 3 a3 R > 0");
    }
    dim_ = control_dim_ = noise_dim_ = d;
    gamma_ = 0.0;
    domain_.radius = radius;
    head_ = ControlHead::UnitBall;
    diffusivity_ = 1.0 / (2.0 * d * a2);
    speed_numerator_ = 3.0 * (d + 1) * a3 / (2.0 * d * a2);
    sigma_bound_ = std::sqrt(2.0 * diffusivity_);
  }

  std::string name() const override { return "eikonal"; }
  double diffusivity() const { return diffusivity_; }
  double speed(const Vector& x) const { return speed_numerator_ / (2.0 * a2_ - 3.0 * a3_ * x.norm()); }

  Vector drift(const Vector& x, const Vector& u) const override { return speed(x) * u; }
  Matrix diffusion(const Vector&, const Vector&) const override {
    return sigma_bound_ * Matrix::Identity(dim_, dim_);
  }
  Vector diffusion_apply(const Vector&, const Vector&, const Vector& xi) const override {
    return sigma_bound_ * xi;
  }
  double running_cost(const Vector&, const Vector&) const override { return 1.0; }
  double boundary_cost(const Vector&) const override { return a3_ - a2_; }

  Var drift(ad::Tape& t, Var x, Var u) const override {
    Var c = speed_numerator_ / (2.0 * a2_ - 3.0 * a3_ * t.sqrt(t.col_sq_norm(x)));
    return c * u;
  }
  Var diffusion_times(ad::Tape&, Var, Var, Var xi) const override { return xi * sigma_bound_; }
  Var running_cost(ad::Tape& t, Var x, Var) const override {
    return t.constant(Matrix::Ones(1, x.cols()));
  }

  double max_diffusion_norm(const Matrix&, const Matrix&) const override { return sigma_bound_; }

  bool has_exact() const override { return true; }
  double exact_value(const Vector& x) const override {
    const double r = x.norm();
    return a3_ * r * r * r - a2_ * r * r;
  }
  Vector exact_control(const Vector& x) const override {
    const double r = x.norm();
    if (r == 0.0) return Vector::Zero(dim_);
    return x / r;
  }

 private:
  // c(x) = speed_numerator_ / (2 a2 - 3 a3 |x|)
  double a2_, a3_, diffusivity_ = 0.0, speed_numerator_ = 0.0;
};

class NonconstantLqr final : public Problem {
 public:
  NonconstantLqr(int d, double q, double beta, double gamma, double radius, double eps, double p,
                 double u_max)
      : q_(q), beta_(beta), eps_(eps), k_(lqr_k(p, q, beta, gamma)) {
    if (d <= 0 || q <= 0 || beta <= 0 || radius <= 0 || gamma < 0 || p <= 0 || u_max <= 0) {
      throw std::invalid_argument("make_nonconstant_lqr: need d, q, beta, R, p, u_max > 0 and gamma >= 0");
    }
    dim_ = control_dim_ = noise_dim_ = d;
    gamma_ = gamma;
    domain_.radius = radius;
    sigma_bound_ = std::sqrt(2.0) * (1.0 + std::abs(eps) * radius * u_max);
  }

  std::string name() const override { return "nclqr"; }

  Vector drift(const Vector&, const Vector& u) const override { return beta_ * u; }
  Matrix diffusion(const Vector& x, const Vector& u) const override {
    Vector diag = std::sqrt(2.0) * (1.0 + eps_ * x.cwiseProduct(u).array()).matrix();
    return diag.asDiagonal();
  }
  Vector diffusion_apply(const Vector& x, const Vector& u, const Vector& xi) const override {
    return std::sqrt(2.0) * (1.0 + eps_ * x.cwiseProduct(u).array()).matrix().cwiseProduct(xi);
  }
  double running_cost(const Vector& x, const Vector& u) const override {
    return q_ * u.squaredNorm() + state_cost(x);
  }
  double boundary_cost(const Vector&) const override {
    return k_ * domain_.radius * domain_.radius;
  }

  Var drift(ad::Tape&, Var, Var u) const override { return u * beta_; }
  Var diffusion_times(ad::Tape&, Var x, Var u, Var xi) const override {
    return (std::sqrt(2.0) * (1.0 + eps_ * (x * u))) * xi;
  }
  Var running_cost(ad::Tape& t, Var x, Var u) const override {
    const double c = k_ * k_ * (beta_ + 2.0 * eps_) * (beta_ + 2.0 * eps_);
    Var x2 = t.square(x);
    Var ratio = (c * x2) / (q_ + 2.0 * k_ * eps_ * eps_ * x2);
    const Matrix ones = Matrix::Ones(1, x.rows());
    Var row_sum = t.affine(t.constant(ones), ratio, t.constant(0.0));
    return q_ * t.col_sq_norm(u) + gamma_ * k_ * t.col_sq_norm(x) + row_sum - 2.0 * k_ * dim_;
  }

  double max_diffusion_norm(const Matrix& x, const Matrix& u) const override {
    const Matrix diag = std::sqrt(2.0) * (1.0 + eps_ * x.cwiseProduct(u).array()).matrix();
    return diag.cwiseAbs().maxCoeff();
  }

  bool has_exact() const override { return true; }
  double exact_value(const Vector& x) const override { return k_ * x.squaredNorm(); }
  Vector exact_control(const Vector& x) const override {
    Vector u(dim_);
    for (int i = 0; i < dim_; ++i) {
      u[i] = -(beta_ + 2.0 * eps_) * x[i] / (q_ / k_ + 2.0 * eps_ * eps_ * x[i] * x[i]);
    }
    return u;
  }

 private:
  double state_cost(const Vector& x) const {
    double s = gamma_ * k_ * x.squaredNorm() - 2.0 * k_ * dim_;
    const double c = k_ * k_ * (beta_ + 2.0 * eps_) * (beta_ + 2.0 * eps_);
    for (int i = 0; i < dim_; ++i) {
      s += c * x[i] * x[i] / (q_ + 2.0 * k_ * eps_ * eps_ * x[i] * x[i]);
    }
    return s;
  }

  double q_, beta_, eps_, k_;
};

}  // namespace

ProblemPtr make_lqr(int d, double p, double q, double beta, double gamma, double radius) {
  return std::make_shared<Lqr>(d, p, q, beta, gamma, radius);
}

ProblemPtr make_van_der_pol(int d, double a, double eps, double q, double gamma, double radius) {
  return std::make_shared<VanDerPol>(d, a, eps, q, gamma, radius);
}

ProblemPtr make_eikonal(int d, double a2, double a3, double radius) {
  return std::make_shared<Eikonal>(d, a2, a3, radius);
}

ProblemPtr make_nonconstant_lqr(int d, double q, double beta, double gamma, double radius,
                                double eps, double p, double u_max) {
  return std::make_shared<NonconstantLqr>(d, q, beta, gamma, radius, eps, p, u_max);
}

}  // namespace hjbac::pde
