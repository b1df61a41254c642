#include "hjbac/problems/residual.hpp"

#include <stdexcept>

namespace hjbac::pde {

FdDerivatives fd_derivatives(const ScalarField& v, const Vector& x, double h) {
  const Eigen::Index d = x.size();
  FdDerivatives out;
  out.value = v(x);
  out.grad.resize(d);
  out.hess.resize(d, d);
  Vector xp = x;
  for (Eigen::Index i = 0; i < d; ++i) {
    xp[i] = x[i] + h;
    const double fp = v(xp);
    xp[i] = x[i] - h;
    const double fm = v(xp);
    xp[i] = x[i];
    out.grad[i] = (fp - fm) / (2.0 * h);
    out.hess(i, i) = (fp - 2.0 * out.value + fm) / (h * h);
  }
  for (Eigen::Index i = 0; i < d; ++i) {
    for (Eigen::Index j = i + 1; j < d; ++j) {
      auto at = [&](double si, double sj) {
        xp[i] = x[i] + si * h;
        xp[j] = x[j] + sj * h;
        const double f = v(xp);
        xp[i] = x[i];
        xp[j] = x[j];
        return f;
      };
      const double hij = (at(1, 1) - at(1, -1) - at(-1, 1) + at(-1, -1)) / (4.0 * h * h);
      out.hess(i, j) = hij;
      out.hess(j, i) = hij;
    }
  }
  return out;
}

double hamiltonian(const Problem& problem, const FdDerivatives& dv, const Vector& x, const Vector& u) {
  const Matrix s = problem.diffusion(x, u);
  const Matrix a = s * s.transpose();
  return 0.5 * (a.cwiseProduct(dv.hess)).sum() + problem.drift(x, u).dot(dv.grad) +
         problem.running_cost(x, u);
}

double pde_residual(const Problem& problem, const ScalarField& value, const VectorField& control,
                    const Vector& x, double h) {
  if (x.size() != problem.dim()) throw std::invalid_argument("pde_residual: dimension mismatch");
  if (!(problem.domain().signed_dist(x) > 2.0 * h)) {
    throw std::invalid_argument("pde_residual: point too close to the boundary for the stencil");
  }
  const FdDerivatives dv = fd_derivatives(value, x, h);
  return hamiltonian(problem, dv, x, control(x)) - problem.gamma() * dv.value;
}

}  // namespace hjbac::pde
