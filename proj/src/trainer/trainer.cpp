#include "hjbac/trainer/trainer.hpp"

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <mutex>
#include <stdexcept>

#include "hjbac/networks/checkpoint.hpp"
#include "hjbac/problems/sampling.hpp"
#include "hjbac/rollout/noise.hpp"

#if defined(__GLIBC__)
#include <malloc.h>
#endif

namespace hjbac::train {

using ad::Index;

namespace {

constexpr char kBundleMagic[8] = {'H', 'J', 'B', 'A', 'C', 'C', 'K', 'P'};
constexpr std::uint32_t kBundleVersion = 1;
constexpr double kTruncationWarn = 0.05;

void write_adam(nn::BinaryWriter& w, const std::string& name, const ad::AdamState& s) {
  w.u32(static_cast<std::uint32_t>(name.size()));
  w.bytes(name);
  w.u64(s.step_count);
  w.u64(static_cast<std::uint64_t>(s.m.size()));
  w.f64_array(s.m);
  w.f64_array(s.v);
}

ad::AdamState read_adam(nn::BinaryReader& r, const std::string& expect) {
  const std::uint32_t len = r.u32();
  if (len > 64) throw std::runtime_error("checkpoint: corrupt optimizer record");
  const std::string name = r.bytes(len);
  if (name != expect) throw std::runtime_error("checkpoint: expected optimizer '" + expect + "'");
  ad::AdamState s;
  s.step_count = r.u64();
  const std::uint64_t n = r.u64();
  if (n > (1ULL << 32)) throw std::runtime_error("checkpoint: corrupt optimizer length");
  s.m = r.f64_array(n);
  s.v = r.f64_array(n);
  return s;
}

}  // namespace

ValidationSet make_validation_set(const pde::Problem& problem, int size, std::uint64_t seed) {
  if (size < 1) throw std::invalid_argument("validation set size must be positive");
  sim::NoiseStream stream(seed, 0, sim::StreamPurpose::Validation, 0);
  ValidationSet set;
  set.x = pde::sample_initial_batch(problem.domain(), problem.dim(), size, stream);
  if (problem.has_exact()) {
    set.v_star.resize(size);
    set.u_star.resize(problem.control_dim(), size);
    for (int j = 0; j < size; ++j) {
      set.v_star[j] = problem.exact_value(set.x.col(j));
      set.u_star.col(j) = problem.exact_control(set.x.col(j));
    }
  }
  return set;
}

Errors validate(const nn::NetworkSet& nets, const ValidationSet& set) {
  if (set.v_star.size() != set.x.cols() || set.u_star.cols() != set.x.cols()) {
    throw std::invalid_argument("validate: validation set has no exact solution");
  }
  const Vector v = nn::eval_value_batch(nets, set.x);
  const Matrix u = nn::eval_control_batch(nets, set.x);
  const double dv = set.v_star.squaredNorm();
  const double du = set.u_star.squaredNorm();
  if (dv == 0.0 || du == 0.0) throw std::invalid_argument("validate: zero exact solution on the set");
  Errors e;
  e.err_v = std::sqrt((set.v_star - v).squaredNorm() / dv);
  e.err_u = std::sqrt((set.u_star - u).squaredNorm() / du);
  return e;
}

namespace {

// Tape buffers are allocated and freed every step; above the default mmap
// threshold glibc hands each one back to the kernel and page-faults it in again.
void keep_freed_memory() {
#if defined(__GLIBC__)
  static std::once_flag once;
  std::call_once(once, [] {
    mallopt(M_MMAP_THRESHOLD, 256 << 20);
    mallopt(M_TRIM_THRESHOLD, 512 << 20);
  });
#endif
}

}  // namespace

Trainer::Trainer(TrainConfig cfg) : cfg_(std::move(cfg)) {
  keep_freed_memory();
  cfg_.validate();
  problem_ = make_problem(cfg_.problem);
  nets_ = nn::NetworkSet::create(problem_->dim(), problem_->control_dim(), cfg_.td,
                                 cfg_.control_penalty > 0.0 ? nn::ControlHead::Unconstrained
                                                            : problem_->control_head(),
                                 cfg_.arch, cfg_.seed);
  adam_value_ = ad::AdamState::for_params(nets_.value.params());
  if (nets_.gradient) adam_gradient_ = ad::AdamState::for_params(nets_.gradient->params());
  adam_control_ = ad::AdamState::for_params(nets_.control.params());
  validation_ = make_validation_set(*problem_, cfg_.validation_count(), cfg_.seed);
  on_warning = [](const std::string& msg) { std::cerr << "warning: " << msg << "\n"; };
}

Matrix Trainer::sample_initial_states(int iter, sim::StreamPurpose purpose,
                                      std::vector<sim::NoiseStream>& streams) const {
  const int K = cfg_.batch;
  const int d = problem_->dim();
  streams.clear();
  streams.reserve(static_cast<std::size_t>(K));
  Matrix x0(d, K);
  for (int j = 0; j < K; ++j) {
    streams.emplace_back(cfg_.seed, static_cast<std::uint64_t>(iter), purpose,
                         static_cast<std::uint64_t>(j));
    x0.col(j) = pde::sample_initial(problem_->domain(), d, streams.back());
  }
  return x0;
}

Trainer::Gradients Trainer::critic_gradients(int iter) const {
  const int K = cfg_.batch;
  const int d = problem_->dim();
  std::vector<sim::NoiseStream> streams;
  const Matrix x0 = sample_initial_states(iter, sim::StreamPurpose::Critic, streams);
  sim::NoiseStream bstream(cfg_.seed, static_cast<std::uint64_t>(iter), sim::StreamPurpose::Boundary, 0);
  const Matrix xb = pde::sample_boundary_batch(problem_->domain(), d, K, bstream);

  ad::Tape frozen(false);
  const sim::NetworkPolicy policy(nets_, false);
  const sim::RolloutBatch batch = sim::simulate(frozen, *problem_, policy, x0, cfg_.scheme, streams);

  Gradients g;
  g.value = Vector::Zero(nets_.value.params().size());
  if (nets_.gradient) g.gradient = Vector::Zero(nets_.gradient->params().size());
  for (int start = 0; start < K; start += cfg_.chunk) {
    const int n = std::min(cfg_.chunk, K - start);
    loss::CriticBatch cb;
    cb.paths = std::span<const sim::Trajectory>(batch.paths).subspan(static_cast<std::size_t>(start),
                                                                     static_cast<std::size_t>(n));
    cb.boundary_points = xb.middleCols(start, n);
    cb.td_weight = 1.0 / K;
    cb.boundary_weight = 1.0 / K;
    ad::Tape tape(true);
    const loss::CriticTerms terms = loss::critic_loss(tape, nets_, *problem_, cb, cfg_.eta, cfg_.td);
    tape.backward(terms.total);
    tape.accumulate_param_grad(nets_.value.params(), g.value);
    if (nets_.gradient) tape.accumulate_param_grad(nets_.gradient->params(), g.gradient);
    g.report.critic_loss += tape.scalar(terms.td);
    g.report.boundary_loss += tape.scalar(terms.boundary);
  }
  g.report.truncation_rate = batch.truncation_rate();
  g.report.grad_norm_value = g.value.norm();
  g.report.grad_norm_gradient = g.gradient.size() ? g.gradient.norm() : 0.0;
  return g;
}

Trainer::Gradients Trainer::actor_gradients(int iter) const {
  const int K = cfg_.batch;
  std::vector<sim::NoiseStream> streams;
  const Matrix x0 = sample_initial_states(iter, sim::StreamPurpose::Actor, streams);
  Gradients g;
  g.control = Vector::Zero(nets_.control.params().size());
  int truncated = 0;
  for (int start = 0; start < K; start += cfg_.chunk) {
    const int n = std::min(cfg_.chunk, K - start);
    ad::Tape tape(true);
    const loss::ActorTerms terms =
        loss::actor_loss(tape, nets_, *problem_, x0.middleCols(start, n), cfg_.scheme,
                         std::span<sim::NoiseStream>(streams).subspan(static_cast<std::size_t>(start),
                                                                     static_cast<std::size_t>(n)),
                         1.0 / K, cfg_.control_penalty);
    tape.backward(terms.total);
    tape.accumulate_param_grad(nets_.control.params(), g.control);
    g.report.actor_loss += tape.scalar(terms.total);
    truncated += terms.batch.truncated;
  }
  g.report.truncation_rate = static_cast<double>(truncated) / K;
  g.report.grad_norm_control = g.control.norm();
  return g;
}

Trainer::State Trainer::snapshot() const {
  return State{nets_, adam_value_, adam_gradient_, adam_control_, iteration_};
}

void Trainer::restore(State s) {
  nets_ = std::move(s.nets);
  adam_value_ = std::move(s.adam_value);
  adam_gradient_ = std::move(s.adam_gradient);
  adam_control_ = std::move(s.adam_control);
  iteration_ = s.iteration;
}

loss::LossReport Trainer::step() {
  State saved = snapshot();
  try {
    const int iter = iteration_ + 1;
    const double lr = cfg_.schedule.lr_at(iter);
    const Gradients cg = critic_gradients(iter);
    ad::adam_step(nets_.value.params(), cg.value, adam_value_, lr);
    if (nets_.gradient) ad::adam_step(nets_.gradient->params(), cg.gradient, adam_gradient_, lr);
    const Gradients ag = actor_gradients(iter);
    ad::adam_step(nets_.control.params(), ag.control, adam_control_, lr);
    iteration_ = iter;

    loss::LossReport r = cg.report;
    r.actor_loss = ag.report.actor_loss;
    r.grad_norm_control = ag.report.grad_norm_control;
    r.truncation_rate = 0.5 * (cg.report.truncation_rate + ag.report.truncation_rate);
    for (double v : {r.critic_loss, r.boundary_loss, r.actor_loss}) {
      if (!std::isfinite(v)) throw ad::NumericFailure("non-finite loss at iteration " + std::to_string(iter));
    }
    if (r.truncation_rate > kTruncationWarn && on_warning) {
      ++truncation_warnings_;
      if (truncation_warnings_ <= 10 || truncation_warnings_ % 100 == 0) {
        char buf[128];
        std::snprintf(buf, sizeof buf, "iteration %d: truncation rate %.3f exceeds %.2f", iter,
                      r.truncation_rate, kTruncationWarn);
        on_warning(buf);
      }
    }
    return r;
  } catch (...) {
    restore(std::move(saved));
    throw;
  }
}

Errors Trainer::evaluate() const {
  if (!problem_->has_exact()) return {};
  return validate(nets_, validation_);
}

void Trainer::record(const MetricsRecord& r) {
  history_.push_back(r);
  if (on_record) on_record(r);
}

void Trainer::run(int max_iterations) {
  const int total = cfg_.schedule.total();
  if (total == 0) return;
  if (history_.empty() && iteration_ == 0) {
    MetricsRecord r;
    r.iter = 0;
    r.evaluated = problem_->has_exact();
    const Errors e = evaluate();
    r.err_v = e.err_v;
    r.err_u = e.err_u;
    record(r);
  }
  int done = 0;
  while (iteration_ < total && (max_iterations < 0 || done < max_iterations)) {
    loss::LossReport rep;
    try {
      rep = step();
    } catch (const ad::NumericFailure& e) {
      throw TrainingAborted(std::string("numeric failure: ") + e.what(), iteration_ + 1);
    } catch (const pde::SigmaBoundExceeded& e) {
      throw TrainingAborted(e.what(), iteration_ + 1);
    }
    ++done;
    MetricsRecord r;
    r.iter = iteration_;
    r.critic_loss = rep.critic_loss;
    r.boundary_loss = rep.boundary_loss;
    r.actor_loss = rep.actor_loss;
    r.truncation_rate = rep.truncation_rate;
    if (problem_->has_exact() && (iteration_ % cfg_.eval_every == 0 || iteration_ == total)) {
      const Errors e = evaluate();
      r.evaluated = true;
      r.err_v = e.err_v;
      r.err_u = e.err_u;
    }
    record(r);
  }
}

void Trainer::save_checkpoint(const std::string& path) const {
  const std::string tmp = path + ".tmp";
  {
    std::ofstream os(tmp, std::ios::binary | std::ios::trunc);
    if (!os) throw std::runtime_error("cannot open '" + tmp + "' for writing");
    os.write(kBundleMagic, sizeof kBundleMagic);
    nn::BinaryWriter w(os);
    w.u32(kBundleVersion);
    w.u64(static_cast<std::uint64_t>(iteration_));
    w.u64(cfg_.seed);
    w.u64(cfg_.hash());
    nn::write_networks(os, nn::to_records(nets_));
    w.u32(3);
    write_adam(w, "value", adam_value_);
    write_adam(w, "gradient", adam_gradient_);
    write_adam(w, "control", adam_control_);
    os.flush();
    if (!os) throw std::runtime_error("write to '" + tmp + "' failed");
  }
  std::filesystem::rename(tmp, path);
}

void Trainer::load_checkpoint(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot open checkpoint '" + path + "'");
  char magic[8];
  is.read(magic, sizeof magic);
  if (!is || !std::equal(magic, magic + 8, kBundleMagic)) {
    throw std::runtime_error("'" + path + "' is not a training checkpoint");
  }
  nn::BinaryReader r(is);
  if (r.u32() != kBundleVersion) throw std::runtime_error("unsupported checkpoint version");
  const auto iteration = r.u64();
  const auto seed = r.u64();
  const auto hash = r.u64();
  if (seed != cfg_.seed || hash != cfg_.hash()) {
    throw std::runtime_error("checkpoint was written for a different configuration");
  }
  nn::NetworkSet nets = nn::from_records(nn::read_networks(is));
  if (r.u32() != 3) throw std::runtime_error("checkpoint: bad optimizer count");
  ad::AdamState av = read_adam(r, "value");
  ad::AdamState ag = read_adam(r, "gradient");
  ad::AdamState ac = read_adam(r, "control");
  auto fits = [](const ad::AdamState& s, const ad::ParamVector& p) {
    return static_cast<std::size_t>(s.m.size()) == p.size();
  };
  if (!fits(av, nets.value.params()) || !fits(ac, nets.control.params()) ||
      (nets.gradient && !fits(ag, nets.gradient->params()))) {
    throw std::runtime_error("checkpoint: optimizer state does not match the networks");
  }
  restore(State{std::move(nets), std::move(av), std::move(ag), std::move(ac), static_cast<int>(iteration)});
  history_.clear();
}

}  // namespace hjbac::train
