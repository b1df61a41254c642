#pragma once

#include <functional>
#include <span>
#include <vector>

#include "hjbac/networks/network_set.hpp"
#include "hjbac/problems/problem.hpp"
#include "hjbac/rollout/rollout.hpp"

namespace hjbac::loss {

using ad::Matrix;
using ad::Var;
using ad::Vector;
using sim::Trajectory;

/// Temporal-difference pieces of one trajectory. td2 = running + terminal -
/// initial and td1 = td2 - stoch, evaluated in that order.
struct TDValue {
  double td1 = 0.0;
  double td2 = 0.0;
  double running = 0.0;
  double stoch = 0.0;
  double terminal = 0.0;
  double initial = 0.0;
};

/// Pointwise value function and (optional) value-gradient field.
struct CriticFunctions {
  std::function<double(const Vector&)> value;
  std::function<Vector(const Vector&)> gradient;  // empty means G = 0
};

CriticFunctions critic_functions(const nn::NetworkSet& nets);

TDValue td_value(const Trajectory& traj, const CriticFunctions& critic, const pde::Problem& problem);
std::vector<TDValue> td_values(std::span<const Trajectory> paths, const CriticFunctions& critic,
                               const pde::Problem& problem);

struct TDStatistics {
  std::size_t count = 0;
  double mean_td1 = 0.0;
  double mean_td2 = 0.0;
  double var_td1 = 0.0;  // unbiased sample variances
  double var_td2 = 0.0;
  double rms_td1 = 0.0;
  double rms_td2 = 0.0;

  /// sqrt(var1/K + var2/K)
  double pooled_se() const;
};

TDStatistics td_statistics(std::span<const TDValue> values);

/// Scalars the trainer logs per iteration.
struct LossReport {
  double critic_loss = 0.0;
  double boundary_loss = 0.0;
  double actor_loss = 0.0;
  double grad_norm_value = 0.0;
  double grad_norm_gradient = 0.0;
  double grad_norm_control = 0.0;
  double truncation_rate = 0.0;
};

/// Critic loss pieces on a tape. `td` is sum(td^2) * td_weight and `boundary`
/// is sum((V - g)^2) * boundary_weight; total = td + eta * boundary. With
/// weights 1/K the pieces are means; smaller weights let a batch be split
/// into chunks whose gradients are summed.
struct CriticTerms {
  Var total;
  Var td;
  Var boundary;
};

struct CriticBatch {
  std::span<const Trajectory> paths;
  Matrix boundary_points;  // d x K_b
  double td_weight = 0.0;
  double boundary_weight = 0.0;
};

/// Builds the chosen critic loss with trainable bindings of the value net
/// (and gradient net for VR-LSTD). Trajectory data enter as constants.
/// Throws std::invalid_argument on an empty batch.
CriticTerms critic_loss(ad::Tape& tape, const nn::NetworkSet& nets, const pde::Problem& problem,
                        const CriticBatch& batch, double eta, nn::TdVariant td);

CriticTerms critic_loss_vr(ad::Tape& tape, const nn::NetworkSet& nets, const pde::Problem& problem,
                           const CriticBatch& batch, double eta);
CriticTerms critic_loss_lstd(ad::Tape& tape, const nn::NetworkSet& nets,
                             const pde::Problem& problem, const CriticBatch& batch, double eta);

/// Same quantities from plain evaluations (no tape): {total, td, boundary}.
struct CriticValues {
  double total = 0.0;
  double td = 0.0;
  double boundary = 0.0;
};
CriticValues critic_loss_values(const CriticFunctions& critic, const pde::Problem& problem,
                                const CriticBatch& batch, double eta, nn::TdVariant td);

/// Actor objective on a gradient tape: weight * sum over the batch of the
/// discounted running cost plus exp(-gamma t_end) V(X_end), with V frozen.
struct ActorTerms {
  Var total;
  sim::RolloutBatch batch;
};

ActorTerms actor_loss(ad::Tape& tape, const nn::NetworkSet& nets, const pde::Problem& problem,
                      const Matrix& x0, const sim::SchemeConfig& cfg,
                      std::span<sim::NoiseStream> noise, double weight,
                      double control_penalty_weight = 0.0);

/// weight * eta' * sum_j ReLU(|u(x_j)| - 1) over the columns of x.
Var control_penalty(ad::Tape& tape, const sim::Policy& policy, const Matrix& x, double eta_prime,
                    double weight);

/// Generic form with any policy and terminal value; used by tests.
ActorTerms actor_loss(ad::Tape& tape, const sim::Policy& policy,
                      const std::function<Var(ad::Tape&, Var)>& terminal_value,
                      const pde::Problem& problem, const Matrix& x0, const sim::SchemeConfig& cfg,
                      std::span<sim::NoiseStream> noise, double weight);

}  // namespace hjbac::loss
