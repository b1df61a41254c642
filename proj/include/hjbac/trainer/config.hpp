#pragma once

#include <cstdint>
#include <string>

#include "hjbac/networks/network_set.hpp"
#include "hjbac/problems/problem.hpp"
#include "hjbac/rollout/rollout.hpp"

namespace hjbac::train {

/// Problem id plus every constant the four benchmarks take.
struct ProblemConfig {
  std::string id = "lqr";  // lqr | vdp | eikonal | nclqr
  int dim = 5;
  double p = 1.0;
  double q = 1.0;
  double beta = 1.0;
  double gamma = 1.0;
  double radius = 1.0;
  double a = 1.0;          // vdp
  double vdp_eps = 0.1;    // vdp
  double a2 = 1.2;         // eikonal
  double a3 = 0.2;         // eikonal
  double nc_eps = -1.0;    // nclqr
  double u_max = 3.0;      // nclqr sigma bound
};

/// Throws std::invalid_argument for an unknown id or bad constants.
pde::ProblemPtr make_problem(const ProblemConfig& cfg);

/// Piecewise constant learning rate over three stages.
struct Schedule {
  int stage1 = 20000;
  int stage2 = 10000;
  int stage3 = 10000;
  double lr1 = 1e-3;
  double lr2 = 1e-4;
  double lr3 = 1e-5;

  int total() const { return stage1 + stage2 + stage3; }
  /// Rate used by iteration `iter` (1-based).
  double lr_at(int iter) const;
};

nn::TdVariant parse_td(const std::string& text);
std::string td_name(nn::TdVariant td);

struct TrainConfig {
  ProblemConfig problem;
  sim::SchemeConfig scheme;
  nn::TdVariant td = nn::TdVariant::VrLstd;
  nn::Architecture arch;
  int batch = 1024;
  double eta = 1.0;
  /// eta' > 0 swaps a constrained control head for an unconstrained one plus
  /// the penalty eta' E[ReLU(|u(X)| - 1)] in the actor loss. Off by default.
  double control_penalty = 0.0;
  Schedule schedule;
  std::uint64_t seed = 1;
  int eval_every = 100;
  /// Trajectories per tape; gradients of chunks are summed in order.
  int chunk = 128;
  /// 0 means the batch size.
  int validation_size = 0;

  /// Dimension dependent defaults: N, K, depth and the first stage length.
  static TrainConfig defaults_for(const std::string& problem_id, int dim);

  int validation_count() const { return validation_size > 0 ? validation_size : batch; }
  /// Throws std::invalid_argument on a malformed configuration.
  void validate() const;
  /// Stable `key = value` text of every field; hashed into checkpoints.
  std::string canonical() const;
  std::uint64_t hash() const;
};

std::uint64_t fnv1a(const std::string& text);

}  // namespace hjbac::train
