#pragma once

#include <memory>
#include <string>

#include "hjbac/autodiff/tape.hpp"
#include "hjbac/networks/network_set.hpp"

namespace hjbac::pde {

using ad::Matrix;
using ad::Var;
using ad::Vector;
using nn::ControlHead;

/// Open ball of radius R centred at the origin.
struct BallDomain {
  double radius = 1.0;

  /// R - |x|: positive inside, zero on the sphere, negative outside.
  double signed_dist(const Vector& x) const { return radius - x.norm(); }
  bool contains(const Vector& x) const { return x.squaredNorm() < radius * radius; }
};

/// Controlled diffusion dX = b(X,u) dt + sigma(X,u) dW stopped at the exit of a
/// ball, with discounted running cost f and exit cost g.
///
/// Coefficients come in two forms: pointwise (used by oracles, validation and
/// cost bookkeeping) and batched on a tape (used by rollouts and the actor
/// gradient). Batched inputs hold one sample per column.
class Problem {
 public:
  virtual ~Problem() = default;

  virtual std::string name() const = 0;

  int dim() const { return dim_; }
  int control_dim() const { return control_dim_; }
  int noise_dim() const { return noise_dim_; }
  double gamma() const { return gamma_; }
  const BallDomain& domain() const { return domain_; }
  /// Upper bound on the operator norm of sigma used by the adaptive step size.
  double sigma_bound() const { return sigma_bound_; }
  ControlHead control_head() const { return head_; }

  virtual Vector drift(const Vector& x, const Vector& u) const = 0;
  /// d x noise_dim matrix.
  virtual Matrix diffusion(const Vector& x, const Vector& u) const = 0;
  /// sigma(x, u) xi without forming sigma when the structure allows it.
  virtual Vector diffusion_apply(const Vector& x, const Vector& u, const Vector& xi) const {
    return diffusion(x, u) * xi;
  }
  virtual double running_cost(const Vector& x, const Vector& u) const = 0;
  virtual double boundary_cost(const Vector& x) const = 0;

  virtual Var drift(ad::Tape& tape, Var x, Var u) const = 0;
  /// sigma(x, u) xi, column by column.
  virtual Var diffusion_times(ad::Tape& tape, Var x, Var u, Var xi) const = 0;
  /// 1 x B row of running costs.
  virtual Var running_cost(ad::Tape& tape, Var x, Var u) const = 0;

  /// Largest operator norm of sigma over the given columns.
  virtual double max_diffusion_norm(const Matrix& x, const Matrix& u) const;

  virtual bool has_exact() const { return false; }
  virtual double exact_value(const Vector& x) const;
  virtual Vector exact_control(const Vector& x) const;

 protected:
  int dim_ = 0;
  int control_dim_ = 0;
  int noise_dim_ = 0;
  double gamma_ = 0.0;
  BallDomain domain_;
  double sigma_bound_ = 0.0;
  ControlHead head_ = ControlHead::Unconstrained;
};

using ProblemPtr = std::shared_ptr<const Problem>;

/// LQR: b = beta u, sigma = sqrt(2) I, f = p|x|^2 + q|u|^2 - 2kd, g = kR^2.
ProblemPtr make_lqr(int d, double p, double q, double beta, double gamma, double radius);

/// The k solving beta^2 k^2 + gamma q k - p q = 0 with k > 0.
double lqr_k(double p, double q, double beta, double gamma);

/// Generalized stochastic Van der Pol oscillator in d = 2n dimensions.
ProblemPtr make_van_der_pol(int d, double a, double eps, double q, double gamma, double radius);

/// Diffusive Eikonal equation with a unit-ball control set.
ProblemPtr make_eikonal(int d, double a2, double a3, double radius);

/// LQR with sigma = diag(sqrt(2)(1 + eps x_i u_i)). The quadratic coefficient k
/// is the LQR one for weight p; u_max bounds |u_i| when sizing sigma_bound.
ProblemPtr make_nonconstant_lqr(int d, double q, double beta, double gamma, double radius,
                                double eps, double p = 1.0, double u_max = 3.0);

/// Raised when a sampled sigma exceeds the declared sigma_bound.
class SigmaBoundExceeded : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace hjbac::pde
