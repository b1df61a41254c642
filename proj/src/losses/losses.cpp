#include "hjbac/losses/losses.hpp"

#include <cmath>
#include <stdexcept>

namespace hjbac::loss {

using ad::Index;

CriticFunctions critic_functions(const nn::NetworkSet& nets) {
  CriticFunctions c;
  const nn::ResidualMLP* v = &nets.value;
  c.value = [v](const Vector& x) { return nn::eval_value(*v, x); };
  if (nets.gradient) {
    const nn::ResidualMLP* g = &*nets.gradient;
    c.gradient = [g](const Vector& x) { return Vector(g->forward(x)); };
  }
  return c;
}

TDValue td_value(const Trajectory& traj, const CriticFunctions& critic, const pde::Problem& problem) {
  TDValue r;
  r.running = sim::discounted_running_cost(traj, problem);
  r.stoch = critic.gradient ? sim::discounted_stochastic_integral(traj, critic.gradient, problem) : 0.0;
  const double disc = problem.gamma() == 0.0 ? 1.0 : std::exp(-problem.gamma() * traj.final_time());
  r.terminal = disc * critic.value(traj.final_state());
  r.initial = critic.value(traj.initial_state());
  r.td2 = r.running + r.terminal - r.initial;
  r.td1 = r.td2 - r.stoch;
  return r;
}

std::vector<TDValue> td_values(std::span<const Trajectory> paths, const CriticFunctions& critic,
                               const pde::Problem& problem) {
  std::vector<TDValue> out;
  out.reserve(paths.size());
  for (const Trajectory& t : paths) out.push_back(td_value(t, critic, problem));
  return out;
}

double TDStatistics::pooled_se() const {
  if (count == 0) return 0.0;
  const double k = static_cast<double>(count);
  return std::sqrt(var_td1 / k + var_td2 / k);
}

TDStatistics td_statistics(std::span<const TDValue> values) {
  TDStatistics s;
  s.count = values.size();
  if (values.empty()) return s;
  const double k = static_cast<double>(values.size());
  double sq1 = 0.0, sq2 = 0.0;
  for (const TDValue& v : values) {
    s.mean_td1 += v.td1;
    s.mean_td2 += v.td2;
    sq1 += v.td1 * v.td1;
    sq2 += v.td2 * v.td2;
  }
  s.mean_td1 /= k;
  s.mean_td2 /= k;
  s.rms_td1 = std::sqrt(sq1 / k);
  s.rms_td2 = std::sqrt(sq2 / k);
  if (values.size() > 1) {
    for (const TDValue& v : values) {
      s.var_td1 += (v.td1 - s.mean_td1) * (v.td1 - s.mean_td1);
      s.var_td2 += (v.td2 - s.mean_td2) * (v.td2 - s.mean_td2);
    }
    s.var_td1 /= k - 1.0;
    s.var_td2 /= k - 1.0;
  }
  return s;
}

namespace {

void check_batch(const CriticBatch& batch, const pde::Problem& problem) {
  if (batch.paths.empty()) throw std::invalid_argument("critic loss: empty trajectory batch");
  if (batch.boundary_points.cols() > 0 && batch.boundary_points.rows() != problem.dim()) {
    throw std::invalid_argument("critic loss: boundary points have the wrong dimension");
  }
}

Vector discount_row(std::span<const Trajectory> paths, double gamma) {
  Vector out(static_cast<Index>(paths.size()));
  for (std::size_t j = 0; j < paths.size(); ++j) {
    out[static_cast<Index>(j)] = gamma == 0.0 ? 1.0 : std::exp(-gamma * paths[j].final_time());
  }
  return out;
}

}  // namespace

CriticTerms critic_loss(ad::Tape& tape, const nn::NetworkSet& nets, const pde::Problem& problem,
                        const CriticBatch& batch, double eta, nn::TdVariant td) {
  check_batch(batch, problem);
  if (td == nn::TdVariant::VrLstd && !nets.gradient) {
    throw std::invalid_argument("critic loss: VR-LSTD needs a gradient network");
  }
  const int d = problem.dim();
  const Index B = static_cast<Index>(batch.paths.size());
  const Index Kb = batch.boundary_points.cols();

  // One value-net pass over [X_0, X_end, boundary].
  Matrix pts(d, 2 * B + Kb);
  Vector running(B);
  for (Index j = 0; j < B; ++j) {
    const Trajectory& tr = batch.paths[static_cast<std::size_t>(j)];
    pts.col(j) = tr.initial_state();
    pts.col(B + j) = tr.final_state();
    running[j] = sim::discounted_running_cost(tr, problem);
  }
  if (Kb > 0) pts.rightCols(Kb) = batch.boundary_points;

  const auto vb = nets.value.bind(tape, true);
  Var v_all = nets.value.apply(tape, vb, tape.constant(pts));
  std::vector<Index> idx0(static_cast<std::size_t>(B)), idx_end(static_cast<std::size_t>(B));
  for (Index j = 0; j < B; ++j) {
    idx0[static_cast<std::size_t>(j)] = j;
    idx_end[static_cast<std::size_t>(j)] = B + j;
  }
  Var v0 = tape.gather_cols(v_all, idx0);
  Var v_end = tape.gather_cols(v_all, idx_end);
  Var disc = tape.constant(Matrix(discount_row(batch.paths, problem.gamma()).transpose()));
  Var td_row = tape.constant(Matrix(running.transpose())) + disc * v_end - v0;

  if (td == nn::TdVariant::VrLstd) {
    Index total_steps = 0;
    for (const Trajectory& tr : batch.paths) total_steps += tr.length();
    if (total_steps > 0) {
      Matrix states(d, total_steps), incr(d, total_steps);
      std::vector<Index> segment(static_cast<std::size_t>(total_steps));
      Index col = 0;
      for (Index j = 0; j < B; ++j) {
        const Trajectory& tr = batch.paths[static_cast<std::size_t>(j)];
        const Index n = tr.length();
        if (n == 0) continue;
        states.middleCols(col, n) = tr.states.leftCols(n);
        incr.middleCols(col, n) = sim::discounted_noise_increments(tr, problem);
        for (Index k = 0; k < n; ++k) segment[static_cast<std::size_t>(col + k)] = j;
        col += n;
      }
      const auto gb = nets.gradient->bind(tape, true);
      Var g = nets.gradient->apply(tape, gb, tape.constant(std::move(states)));
      Var dots = tape.col_dot(g, tape.constant(std::move(incr)));
      Var stoch = tape.segment_sum(dots, std::move(segment), B);
      td_row = td_row - stoch;
    }
  }

  CriticTerms out;
  out.td = tape.sum(tape.square(td_row)) * batch.td_weight;
  if (Kb > 0) {
    std::vector<Index> idx_b(static_cast<std::size_t>(Kb));
    Matrix g_row(1, Kb);
    for (Index j = 0; j < Kb; ++j) {
      idx_b[static_cast<std::size_t>(j)] = 2 * B + j;
      g_row(0, j) = problem.boundary_cost(batch.boundary_points.col(j));
    }
    Var vbdry = tape.gather_cols(v_all, idx_b);
    out.boundary = tape.sum(tape.square(vbdry - tape.constant(std::move(g_row)))) * batch.boundary_weight;
  } else {
    out.boundary = tape.constant(0.0);
  }
  out.total = out.td + out.boundary * eta;
  return out;
}

CriticTerms critic_loss_vr(ad::Tape& tape, const nn::NetworkSet& nets, const pde::Problem& problem,
                           const CriticBatch& batch, double eta) {
  return critic_loss(tape, nets, problem, batch, eta, nn::TdVariant::VrLstd);
}

CriticTerms critic_loss_lstd(ad::Tape& tape, const nn::NetworkSet& nets,
                             const pde::Problem& problem, const CriticBatch& batch, double eta) {
  return critic_loss(tape, nets, problem, batch, eta, nn::TdVariant::Lstd);
}

CriticValues critic_loss_values(const CriticFunctions& critic, const pde::Problem& problem,
                                const CriticBatch& batch, double eta, nn::TdVariant td) {
  check_batch(batch, problem);
  CriticValues out;
  for (const Trajectory& tr : batch.paths) {
    const TDValue v = td_value(tr, critic, problem);
    const double e = td == nn::TdVariant::VrLstd ? v.td1 : v.td2;
    out.td += e * e;
  }
  out.td *= batch.td_weight;
  for (Index j = 0; j < batch.boundary_points.cols(); ++j) {
    const Vector x = batch.boundary_points.col(j);
    const double e = critic.value(x) - problem.boundary_cost(x);
    out.boundary += e * e;
  }
  out.boundary *= batch.boundary_weight;
  out.total = out.td + eta * out.boundary;
  return out;
}

ActorTerms actor_loss(ad::Tape& tape, const sim::Policy& policy,
                      const std::function<Var(ad::Tape&, Var)>& terminal_value,
                      const pde::Problem& problem, const Matrix& x0, const sim::SchemeConfig& cfg,
                      std::span<sim::NoiseStream> noise, double weight) {
  ActorTerms out;
  out.batch = sim::simulate(tape, problem, policy, x0, cfg, noise);
  Var v_end = terminal_value(tape, out.batch.final_state);
  if (problem.gamma() != 0.0) {
    v_end = v_end * tape.exp(out.batch.final_time * (-problem.gamma()));
  }
  out.total = tape.sum(out.batch.running_cost + v_end) * weight;
  return out;
}

ActorTerms actor_loss(ad::Tape& tape, const nn::NetworkSet& nets, const pde::Problem& problem,
                      const Matrix& x0, const sim::SchemeConfig& cfg,
                      std::span<sim::NoiseStream> noise, double weight,
                      double control_penalty_weight) {
  const sim::NetworkPolicy policy(nets, true);
  auto frozen_value = [&nets](ad::Tape& t, Var x) {
    const auto b = nets.value.bind(t, false);
    return nets.value.apply(t, b, x);
  };
  ActorTerms out = actor_loss(tape, policy, frozen_value, problem, x0, cfg, noise, weight);
  if (control_penalty_weight > 0.0) {
    out.total = out.total + control_penalty(tape, policy, x0, control_penalty_weight, weight);
  }
  return out;
}

Var control_penalty(ad::Tape& tape, const sim::Policy& policy, const Matrix& x, double eta_prime,
                    double weight) {
  const Var u = policy.apply(tape, tape.constant(x));
  // The offset keeps the sqrt derivative finite at u = 0.
  const Var norm = tape.sqrt(tape.add_scalar(tape.col_sq_norm(u), 1e-30));
  return tape.sum(tape.relu(tape.add_scalar(norm, -1.0))) * (eta_prime * weight);
}

}  // namespace hjbac::loss
