#pragma once

#include <cstdint>
#include <functional>
#include <limits>
#include <string>
#include <vector>

#include "hjbac/autodiff/adam.hpp"
#include "hjbac/losses/losses.hpp"
#include "hjbac/networks/network_set.hpp"
#include "hjbac/trainer/config.hpp"

namespace hjbac::train {

using ad::Matrix;
using ad::Vector;

/// Fixed validation points with exact values and controls.
struct ValidationSet {
  Matrix x;       // d x K
  Vector v_star;  // K
  Matrix u_star;  // d_u x K
};

/// Uniform points in the domain drawn from a stream keyed by `seed`.
/// Exact fields stay empty when the problem has no exact solution.
ValidationSet make_validation_set(const pde::Problem& problem, int size, std::uint64_t seed);

struct Errors {
  double err_v = std::numeric_limits<double>::quiet_NaN();
  double err_u = std::numeric_limits<double>::quiet_NaN();
};

/// Relative L2 errors of the value and control networks on the set.
/// Throws std::invalid_argument if the set has no exact values or a zero
/// denominator.
Errors validate(const nn::NetworkSet& nets, const ValidationSet& set);

/// One row of the training history.
struct MetricsRecord {
  int iter = 0;
  bool evaluated = false;
  double err_v = std::numeric_limits<double>::quiet_NaN();
  double err_u = std::numeric_limits<double>::quiet_NaN();
  double critic_loss = std::numeric_limits<double>::quiet_NaN();
  double boundary_loss = std::numeric_limits<double>::quiet_NaN();
  double actor_loss = std::numeric_limits<double>::quiet_NaN();
  double truncation_rate = std::numeric_limits<double>::quiet_NaN();
};

/// Raised by Trainer::run after a numeric failure; the trainer has already
/// been rolled back to the state before the failing iteration.
class TrainingAborted : public std::runtime_error {
 public:
  TrainingAborted(const std::string& what, int iteration)
      : std::runtime_error(what), iteration_(iteration) {}
  int iteration() const { return iteration_; }

 private:
  int iteration_;
};

class Trainer {
 public:
  explicit Trainer(TrainConfig cfg);

  const TrainConfig& config() const { return cfg_; }
  const pde::Problem& problem() const { return *problem_; }
  const pde::ProblemPtr& problem_ptr() const { return problem_; }
  const nn::NetworkSet& networks() const { return nets_; }
  nn::NetworkSet& networks() { return nets_; }
  const ValidationSet& validation_set() const { return validation_; }
  int iteration() const { return iteration_; }
  const std::vector<MetricsRecord>& history() const { return history_; }

  /// One critic update followed by one actor update. On failure the state
  /// is restored and the exception propagates.
  loss::LossReport step();

  /// Runs until the schedule is exhausted (or `max_iterations` more steps).
  /// Evaluates at iteration 0, every eval_every iterations and at the end.
  /// Throws TrainingAborted on numeric failure.
  void run(int max_iterations = -1);

  /// Errors on the validation set (NaN when the problem has no exact solution).
  Errors evaluate() const;

  /// Hook for per-iteration logging; called after each record is appended.
  std::function<void(const MetricsRecord&)> on_record;
  /// Hook for warnings (truncation rate); defaults to stderr.
  std::function<void(const std::string&)> on_warning;

  /// Atomic write (temporary file then rename).
  void save_checkpoint(const std::string& path) const;
  /// Restores networks, optimizer states and the iteration counter. Throws
  /// std::runtime_error if the file was written for a different configuration.
  void load_checkpoint(const std::string& path);

  /// Gradients of the critic and actor losses for the current iteration
  /// without applying them; exposed for tests.
  struct Gradients {
    loss::LossReport report;
    Vector value;
    Vector gradient;
    Vector control;
  };
  Gradients critic_gradients(int iter) const;
  Gradients actor_gradients(int iter) const;

 private:
  struct State {
    nn::NetworkSet nets;
    ad::AdamState adam_value;
    ad::AdamState adam_gradient;
    ad::AdamState adam_control;
    int iteration = 0;
  };
  State snapshot() const;
  void restore(State s);
  void record(const MetricsRecord& r);
  Matrix sample_initial_states(int iter, sim::StreamPurpose purpose,
                               std::vector<sim::NoiseStream>& streams) const;

  TrainConfig cfg_;
  pde::ProblemPtr problem_;
  nn::NetworkSet nets_;
  ad::AdamState adam_value_;
  ad::AdamState adam_gradient_;
  ad::AdamState adam_control_;
  int iteration_ = 0;
  ValidationSet validation_;
  std::vector<MetricsRecord> history_;
  int truncation_warnings_ = 0;
};

}  // namespace hjbac::train
