#pragma once

#include <functional>

#include "hjbac/problems/problem.hpp"

namespace hjbac::pde {

using ScalarField = std::function<double(const Vector&)>;
using VectorField = std::function<Vector(const Vector&)>;

/// Value, gradient and Hessian of a scalar field by central differences.
struct FdDerivatives {
  double value = 0.0;
  Vector grad;
  Matrix hess;
};

inline constexpr double kResidualStep = 1e-4;

/// Central differences with step h; mixed partials use the four-point stencil.
FdDerivatives fd_derivatives(const ScalarField& v, const Vector& x, double h = kResidualStep);

/// 1/2 Tr(sigma sigma^T H) + b^T grad + f at (x, u) for the given derivatives.
double hamiltonian(const Problem& problem, const FdDerivatives& dv, const Vector& x, const Vector& u);

/// Left-hand side of the controlled PDE 1/2 Tr(sigma sigma^T Hess V) + b^T grad V
/// + f - gamma V at (x, u(x)), derivatives by central differences.
/// Throws std::invalid_argument unless x is farther than 2h from the boundary.
double pde_residual(const Problem& problem, const ScalarField& value, const VectorField& control,
                    const Vector& x, double h = kResidualStep);

}  // namespace hjbac::pde
