#pragma once

#include <functional>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include "hjbac/problems/problem.hpp"
#include "hjbac/rollout/noise.hpp"
#include "hjbac/rollout/policy.hpp"

namespace hjbac::sim {

enum class Scheme { Naive, Adaptive };

std::string to_string(Scheme scheme);
Scheme parse_scheme(const std::string& text);

struct SchemeConfig {
  Scheme scheme = Scheme::Adaptive;
  double T = 0.2;
  int N = 50;
  double min_step_factor = 1e-4;
  int step_cap_factor = 16;
  /// Differentiate the actor loss through the adaptive step size and the
  /// discount it feeds.
  bool grad_through_h = true;

  double dt() const { return T / N; }
  double min_step() const { return min_step_factor * dt(); }
  int step_cap() const { return step_cap_factor * N; }
  /// Width of the near-boundary layer where the step shrinks.
  double boundary_layer(double sigma, int d) const;
  /// Throws std::invalid_argument on a malformed configuration.
  void validate() const;
};

/// A final step that would overshoot T by less than this fraction of dt is
/// stretched to land on T exactly.
inline constexpr double kHorizonSnap = 1e-9;

/// Step size at interior point x when t has already elapsed.
/// Throws std::invalid_argument if x is not inside the domain.
double step_size(const Vector& x, double t, const SchemeConfig& cfg, const pde::BallDomain& domain,
                 double sigma, int d);

/// One simulated path. Column n of `states` is the state at times[n]; the
/// proposal that left the domain is not stored.
struct Trajectory {
  Matrix states;    // d x (n+1)
  Vector times;     // n+1
  Vector steps;     // n
  Matrix noises;    // d_w x n
  Matrix controls;  // d_u x n
  bool exit = false;
  bool truncated = false;

  int length() const { return static_cast<int>(steps.size()); }
  Vector initial_state() const { return states.col(0); }
  Vector final_state() const { return states.col(states.cols() - 1); }
  double final_time() const { return times[times.size() - 1]; }
};

/// A batch of paths plus the tape quantities the actor loss needs.
struct RolloutBatch {
  std::vector<Trajectory> paths;
  /// d x B last inside states, 1 x B final times and 1 x B discounted running
  /// costs. Differentiable when simulate() ran on a gradient tape.
  Var final_state;
  Var final_time;
  Var running_cost;
  int truncated = 0;
  int exited = 0;

  double truncation_rate() const;
};

/// Simulates one path per column of x0 with noise[j] driving column j.
///
/// On a gradient tape the whole recursion is recorded so the outputs depend
/// on the policy parameters; the exit index and exit indicator are treated as
/// constants. On a tape without gradients each step runs on a scratch tape and
/// only the outputs are placed on `tape` as constants.
///
/// Throws std::invalid_argument on bad input and pde::SigmaBoundExceeded if the
/// adaptive scheme sees sigma larger than the problem's declared bound.
RolloutBatch simulate(ad::Tape& tape, const pde::Problem& problem, const Policy& policy,
                      const Matrix& x0, const SchemeConfig& cfg, std::span<NoiseStream> noise);

/// Single path, no gradients.
Trajectory rollout(const pde::Problem& problem, const Policy& policy, const Vector& x0,
                   const SchemeConfig& cfg, NoiseStream& noise);

/// sum_n exp(-gamma t_n) f(X_n, u_n) h_n over the stored steps.
double discounted_running_cost(const Trajectory& traj, const pde::Problem& problem);

using GradientField = std::function<Vector(const Vector&)>;

/// sum_n exp(-gamma t_n) G(X_n)^T sigma(X_n, u_n) xi_n sqrt(h_n).
double discounted_stochastic_integral(const Trajectory& traj, const GradientField& g,
                                      const pde::Problem& problem);

/// sigma(X_n, u_n) xi_n sqrt(h_n) exp(-gamma t_n), one column per step.
Matrix discounted_noise_increments(const Trajectory& traj, const pde::Problem& problem);

/// Per-step CSV rows: n, t, h, x..., u..., exit.
void write_trajectory_csv(std::ostream& out, const Trajectory& traj, int traj_index,
                          bool header);

}  // namespace hjbac::sim
