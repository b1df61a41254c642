#include "hjbac/rollout/rollout.hpp"

#include <cmath>
#include <cstdio>
#include <numeric>
#include <ostream>
#include <stdexcept>

namespace hjbac::sim {

using ad::Index;

std::string to_string(Scheme scheme) { return scheme == Scheme::Naive ? "naive" : "adaptive"; }

Scheme parse_scheme(const std::string& text) {
  if (text == "naive") return Scheme::Naive;
  if (text == "adaptive") return Scheme::Adaptive;
  throw std::invalid_argument("unknown scheme '" + text + "' (expected naive or adaptive)");
}

double SchemeConfig::boundary_layer(double sigma, int d) const {
  return sigma * std::sqrt(3.0 * d * dt());
}

void SchemeConfig::validate() const {
  if (!(T > 0.0) || !std::isfinite(T)) throw std::invalid_argument("scheme: T must be positive");
  if (N < 1) throw std::invalid_argument("scheme: N must be at least 1");
  if (!(min_step_factor > 0.0) || min_step_factor > 1.0) {
    throw std::invalid_argument("scheme: min_step_factor must be in (0, 1]");
  }
  if (step_cap_factor < 1) throw std::invalid_argument("scheme: step_cap_factor must be >= 1");
}

namespace {

// Step before the horizon clamp; sets `in_layer` when the distance formula is
// the active branch (so its gradient matters).
double raw_step(double dist, const SchemeConfig& cfg, double sigma, int d, bool& in_layer) {
  in_layer = false;
  const double dt = cfg.dt();
  if (cfg.scheme == Scheme::Naive) return dt;
  if (dist > cfg.boundary_layer(sigma, d)) return dt;
  const double h = dist * dist / (3.0 * d * sigma * sigma);
  if (h > cfg.min_step()) {
    in_layer = true;
    return std::min(h, dt);
  }
  return cfg.min_step();
}

bool hits_horizon(double t, double h, const SchemeConfig& cfg) {
  return t + h > cfg.T - kHorizonSnap * cfg.dt();
}

struct PathBuffer {
  std::vector<double> states;
  std::vector<double> times;
  std::vector<double> steps;
  std::vector<double> noises;
  std::vector<double> controls;

  void reserve(std::size_t n, int d, int dw, int du) {
    states.reserve(n * static_cast<std::size_t>(d));
    times.reserve(n);
    steps.reserve(n);
    noises.reserve(n * static_cast<std::size_t>(dw));
    controls.reserve(n * static_cast<std::size_t>(du));
  }

  template <typename Col>
  static void append(std::vector<double>& buf, const Col& c) {
    for (Index i = 0; i < c.size(); ++i) buf.push_back(c[i]);
  }

  Trajectory finish(int d, int dw, int du, bool exit, bool truncated) const {
    Trajectory tr;
    const Index n = static_cast<Index>(steps.size());
    tr.states = Eigen::Map<const Matrix>(states.data(), d, n + 1);
    tr.times = Eigen::Map<const Vector>(times.data(), n + 1);
    tr.steps = Eigen::Map<const Vector>(steps.data(), n);
    tr.noises = Eigen::Map<const Matrix>(noises.data(), dw, n);
    tr.controls = Eigen::Map<const Matrix>(controls.data(), du, n);
    tr.exit = exit;
    tr.truncated = truncated;
    return tr;
  }
};

Matrix gather(const Matrix& m, const std::vector<Index>& cols) {
  Matrix out(m.rows(), static_cast<Index>(cols.size()));
  for (std::size_t j = 0; j < cols.size(); ++j) out.col(static_cast<Index>(j)) = m.col(cols[j]);
  return out;
}

Matrix row_of(const Vector& v) { return v.transpose(); }

}  // namespace

double step_size(const Vector& x, double t, const SchemeConfig& cfg, const pde::BallDomain& domain,
                 double sigma, int d) {
  if (!domain.contains(x)) throw std::invalid_argument("step_size: point is not inside the domain");
  if (cfg.scheme == Scheme::Naive) return cfg.dt();
  bool in_layer = false;
  double h = raw_step(domain.signed_dist(x), cfg, sigma, d, in_layer);
  if (hits_horizon(t, h, cfg)) h = cfg.T - t;
  return h;
}

double RolloutBatch::truncation_rate() const {
  return paths.empty() ? 0.0 : static_cast<double>(truncated) / static_cast<double>(paths.size());
}

RolloutBatch simulate(ad::Tape& tape, const pde::Problem& problem, const Policy& policy,
                      const Matrix& x0, const SchemeConfig& cfg, std::span<NoiseStream> noise) {
  cfg.validate();
  const int d = problem.dim();
  const int dw = problem.noise_dim();
  const int du = problem.control_dim();
  const Index B = x0.cols();
  if (x0.rows() != d) throw std::invalid_argument("simulate: x0 has the wrong dimension");
  if (B < 1) throw std::invalid_argument("simulate: empty batch");
  if (static_cast<Index>(noise.size()) != B) {
    throw std::invalid_argument("simulate: need one noise stream per trajectory");
  }
  if (policy.control_dim() != du) throw std::invalid_argument("simulate: control dimension mismatch");
  const pde::BallDomain& domain = problem.domain();
  for (Index j = 0; j < B; ++j) {
    if (!domain.contains(x0.col(j))) throw std::invalid_argument("simulate: x0 outside the domain");
  }

  const bool grad = tape.grad_enabled();
  const bool naive = cfg.scheme == Scheme::Naive;
  const bool h_diff = grad && !naive && cfg.grad_through_h;
  const double gamma = problem.gamma();
  const double sigma = problem.sigma_bound();
  const double dt = cfg.dt();
  const double T = cfg.T;
  const double layer_coef = 1.0 / (3.0 * d * sigma * sigma);

  ad::Tape scratch(false);
  ad::Tape& work = grad ? tape : scratch;

  std::vector<PathBuffer> buf(static_cast<std::size_t>(B));
  const std::size_t guess = static_cast<std::size_t>(2 * cfg.N + 2);
  for (Index j = 0; j < B; ++j) {
    buf[j].reserve(guess, d, dw, du);
    PathBuffer::append(buf[j].states, x0.col(j));
    buf[j].times.push_back(0.0);
  }

  Matrix xf(d, B);
  Vector tf(B), cf(B);
  std::vector<char> exited(static_cast<std::size_t>(B), 0), truncated(static_cast<std::size_t>(B), 0);
  Var XF, TF, CF;
  if (grad) {
    XF = tape.constant(Matrix::Zero(d, B));
    TF = tape.constant(Matrix::Zero(1, B));
    CF = tape.constant(Matrix::Zero(1, B));
  }

  std::vector<Index> active(static_cast<std::size_t>(B));
  std::iota(active.begin(), active.end(), Index{0});
  Matrix x_val = x0;
  Vector t_val = Vector::Zero(B);
  Vector c_val = Vector::Zero(B);
  Var X, Tt, C;
  if (grad) {
    X = tape.constant(x0);
    Tt = tape.constant(Matrix::Zero(1, B));
    C = tape.constant(Matrix::Zero(1, B));
  }

  for (int n = 0; !active.empty(); ++n) {
    const Index A = static_cast<Index>(active.size());
    if (!grad) {
      scratch.clear();
      X = scratch.constant(x_val);
      Tt = scratch.constant(row_of(t_val));
      C = scratch.constant(row_of(c_val));
    }
    Var U = policy.apply(work, X);
    const Matrix u_val = work.value(U);
    if (!naive && problem.max_diffusion_norm(x_val, u_val) > sigma + 1e-9) {
      throw pde::SigmaBoundExceeded("simulate: sigma exceeds the declared bound used for step sizes");
    }

    Vector h(A);
    std::vector<Index> layer_cols, clamp_cols;
    for (Index j = 0; j < A; ++j) {
      bool in_layer = false;
      h[j] = raw_step(domain.signed_dist(x_val.col(j)), cfg, sigma, d, in_layer);
      if (!naive && hits_horizon(t_val[j], h[j], cfg)) {
        h[j] = T - t_val[j];
        clamp_cols.push_back(j);
      } else if (in_layer) {
        layer_cols.push_back(j);
      }
    }
    Var H = work.constant(row_of(h));
    if (h_diff) {
      if (!layer_cols.empty()) {
        Var xl = work.gather_cols(X, layer_cols);
        Var dist = domain.radius - work.sqrt(work.col_sq_norm(xl));
        H = work.scatter_cols(H, layer_cols, work.square(dist) * layer_coef);
      }
      if (!clamp_cols.empty()) {
        H = work.scatter_cols(H, clamp_cols, T - work.gather_cols(Tt, clamp_cols));
      }
    }

    Matrix xi(dw, A);
    for (Index j = 0; j < A; ++j) {
      NoiseStream& s = noise[static_cast<std::size_t>(active[j])];
      for (int r = 0; r < dw; ++r) xi(r, j) = s.normal();
    }
    Var XI = work.constant(xi);

    Var Xn = X + problem.drift(work, X, U) * H +
             problem.diffusion_times(work, X, U, XI) * work.sqrt(H);
    Var cost = problem.running_cost(work, X, U) * H;
    if (gamma != 0.0) cost = cost * work.exp(Tt * (-gamma));
    Var Cn = C + cost;

    Vector tn(A);
    for (Index j = 0; j < A; ++j) {
      if (naive) {
        tn[j] = (n + 1 == cfg.N) ? T : (n + 1) * dt;
      } else {
        tn[j] = t_val[j] + h[j];
      }
    }
    for (Index j : clamp_cols) tn[j] = T;
    Var Tn = h_diff ? Tt + H : work.constant(row_of(tn));

    const Matrix xn_val = work.value(Xn);
    const Vector cn_val = work.value(Cn).row(0).transpose();

    std::vector<Index> from_old, from_new, keep;
    for (Index j = 0; j < A; ++j) {
      const Index g = active[j];
      PathBuffer& pb = buf[static_cast<std::size_t>(g)];
      if (!domain.contains(xn_val.col(j))) {
        exited[g] = 1;
        xf.col(g) = x_val.col(j);
        tf[g] = t_val[j];
        cf[g] = c_val[j];
        from_old.push_back(j);
        continue;
      }
      PathBuffer::append(pb.states, xn_val.col(j));
      pb.times.push_back(tn[j]);
      pb.steps.push_back(h[j]);
      PathBuffer::append(pb.noises, xi.col(j));
      PathBuffer::append(pb.controls, u_val.col(j));
      const bool at_horizon = naive ? (n + 1 >= cfg.N) : (tn[j] >= T);
      const bool capped = !at_horizon && n + 1 >= cfg.step_cap();
      if (at_horizon || capped) {
        truncated[g] = capped ? 1 : 0;
        xf.col(g) = xn_val.col(j);
        tf[g] = tn[j];
        cf[g] = cn_val[j];
        from_new.push_back(j);
      } else {
        keep.push_back(j);
      }
    }

    auto globals = [&](const std::vector<Index>& local) {
      std::vector<Index> out;
      out.reserve(local.size());
      for (Index j : local) out.push_back(active[j]);
      return out;
    };
    if (grad) {
      if (!from_old.empty()) {
        const auto g = globals(from_old);
        XF = tape.scatter_cols(XF, g, tape.gather_cols(X, from_old));
        TF = tape.scatter_cols(TF, g, tape.gather_cols(Tt, from_old));
        CF = tape.scatter_cols(CF, g, tape.gather_cols(C, from_old));
      }
      if (!from_new.empty()) {
        const auto g = globals(from_new);
        XF = tape.scatter_cols(XF, g, tape.gather_cols(Xn, from_new));
        TF = tape.scatter_cols(TF, g, tape.gather_cols(Tn, from_new));
        CF = tape.scatter_cols(CF, g, tape.gather_cols(Cn, from_new));
      }
    }

    if (static_cast<Index>(keep.size()) == A) {
      x_val = xn_val;
      t_val = tn;
      c_val = cn_val;
      if (grad) {
        X = Xn;
        Tt = Tn;
        C = Cn;
      }
    } else {
      x_val = gather(xn_val, keep);
      Vector t2(static_cast<Index>(keep.size())), c2(static_cast<Index>(keep.size()));
      for (std::size_t k = 0; k < keep.size(); ++k) {
        t2[static_cast<Index>(k)] = tn[keep[k]];
        c2[static_cast<Index>(k)] = cn_val[keep[k]];
      }
      t_val = t2;
      c_val = c2;
      if (grad && !keep.empty()) {
        X = tape.gather_cols(Xn, keep);
        Tt = tape.gather_cols(Tn, keep);
        C = tape.gather_cols(Cn, keep);
      }
    }
    active = globals(keep);
  }

  RolloutBatch out;
  out.paths.reserve(static_cast<std::size_t>(B));
  for (Index j = 0; j < B; ++j) {
    out.paths.push_back(buf[j].finish(d, dw, du, exited[j] != 0, truncated[j] != 0));
    out.exited += exited[j];
    out.truncated += truncated[j];
  }
  if (grad) {
    out.final_state = XF;
    out.final_time = TF;
    out.running_cost = CF;
  } else {
    out.final_state = tape.constant(xf);
    out.final_time = tape.constant(row_of(tf));
    out.running_cost = tape.constant(row_of(cf));
  }
  return out;
}

Trajectory rollout(const pde::Problem& problem, const Policy& policy, const Vector& x0,
                   const SchemeConfig& cfg, NoiseStream& noise) {
  ad::Tape tape(false);
  RolloutBatch batch = simulate(tape, problem, policy, x0, cfg, std::span<NoiseStream>(&noise, 1));
  return std::move(batch.paths.front());
}

double discounted_running_cost(const Trajectory& traj, const pde::Problem& problem) {
  const double gamma = problem.gamma();
  double total = 0.0;
  for (int n = 0; n < traj.length(); ++n) {
    const double disc = gamma == 0.0 ? 1.0 : std::exp(-gamma * traj.times[n]);
    total += disc * problem.running_cost(traj.states.col(n), traj.controls.col(n)) * traj.steps[n];
  }
  return total;
}

Matrix discounted_noise_increments(const Trajectory& traj, const pde::Problem& problem) {
  const double gamma = problem.gamma();
  Matrix out(problem.dim(), traj.length());
  for (int n = 0; n < traj.length(); ++n) {
    const double disc = gamma == 0.0 ? 1.0 : std::exp(-gamma * traj.times[n]);
    out.col(n) = (disc * std::sqrt(traj.steps[n])) *
                 problem.diffusion_apply(traj.states.col(n), traj.controls.col(n), traj.noises.col(n));
  }
  return out;
}

double discounted_stochastic_integral(const Trajectory& traj, const GradientField& g,
                                      const pde::Problem& problem) {
  const Matrix inc = discounted_noise_increments(traj, problem);
  double total = 0.0;
  for (int n = 0; n < traj.length(); ++n) total += g(traj.states.col(n)).dot(inc.col(n));
  return total;
}

void write_trajectory_csv(std::ostream& out, const Trajectory& traj, int traj_index, bool header) {
  const Index d = traj.states.rows();
  const Index du = traj.controls.rows();
  if (header) {
    out << "traj,n,t,h";
    for (Index i = 0; i < d; ++i) out << ",x" << i;
    for (Index i = 0; i < du; ++i) out << ",u" << i;
    out << ",exit\n";
  }
  char num[40];
  auto put = [&](double v) {
    std::snprintf(num, sizeof num, "%.17g", v);
    out << ',' << num;
  };
  for (Index n = 0; n < traj.states.cols(); ++n) {
    const bool last = n == traj.length();
    out << traj_index << ',' << n;
    put(traj.times[n]);
    if (last) {
      out << ',';
    } else {
      put(traj.steps[n]);
    }
    for (Index i = 0; i < d; ++i) put(traj.states(i, n));
    for (Index i = 0; i < du; ++i) {
      if (last) {
        out << ',';
      } else {
        put(traj.controls(i, n));
      }
    }
    out << ',' << ((last && traj.exit) ? 1 : 0) << '\n';
  }
}

}  // namespace hjbac::sim
