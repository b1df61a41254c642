#include "hjbac/trainer/config.hpp"

#include <cstdio>
#include <sstream>
#include <stdexcept>

namespace hjbac::train {

pde::ProblemPtr make_problem(const ProblemConfig& c) {
  if (c.dim < 1) throw std::invalid_argument("problem: dim must be positive");
  if (c.id == "lqr") return pde::make_lqr(c.dim, c.p, c.q, c.beta, c.gamma, c.radius);
  if (c.id == "vdp") return pde::make_van_der_pol(c.dim, c.a, c.vdp_eps, c.q, c.gamma, c.radius);
  if (c.id == "eikonal") return pde::make_eikonal(c.dim, c.a2, c.a3, c.radius);
  if (c.id == "nclqr") {
    return pde::make_nonconstant_lqr(c.dim, c.q, c.beta, c.gamma, c.radius, c.nc_eps, c.p, c.u_max);
  }
  throw std::invalid_argument("unknown problem '" + c.id + "' (expected lqr, vdp, eikonal or nclqr)");
}

double Schedule::lr_at(int iter) const {
  if (iter <= stage1) return lr1;
  if (iter <= stage1 + stage2) return lr2;
  return lr3;
}

nn::TdVariant parse_td(const std::string& text) {
  if (text == "vr-lstd") return nn::TdVariant::VrLstd;
  if (text == "lstd") return nn::TdVariant::Lstd;
  throw std::invalid_argument("unknown td '" + text + "' (expected vr-lstd or lstd)");
}

std::string td_name(nn::TdVariant td) { return td == nn::TdVariant::VrLstd ? "vr-lstd" : "lstd"; }

TrainConfig TrainConfig::defaults_for(const std::string& problem_id, int dim) {
  TrainConfig c;
  c.problem.id = problem_id;
  c.problem.dim = dim;
  const bool small = dim <= 5;
  c.scheme.N = small ? 50 : 100;
  c.batch = small ? 1024 : 2048;
  c.arch.depth = small ? 2 : 3;
  c.schedule.stage1 = dim <= 10 ? 20000 : 30000;
  return c;
}

void TrainConfig::validate() const {
  scheme.validate();
  if (batch < 1) throw std::invalid_argument("batch must be at least 1");
  if (chunk < 1) throw std::invalid_argument("chunk must be at least 1");
  if (!(eta >= 0.0)) throw std::invalid_argument("eta must be non-negative");
  if (!(control_penalty >= 0.0)) throw std::invalid_argument("control_penalty must be non-negative");
  if (schedule.stage1 < 0 || schedule.stage2 < 0 || schedule.stage3 < 0) {
    throw std::invalid_argument("schedule stages must be non-negative");
  }
  if (eval_every < 1) throw std::invalid_argument("eval_every must be at least 1");
  if (arch.width < 1 || arch.depth < 0) throw std::invalid_argument("bad network architecture");
  if (validation_size < 0) throw std::invalid_argument("validation_size must be non-negative");
}

namespace {

std::string num(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

}  // namespace

std::string TrainConfig::canonical() const {
  std::ostringstream s;
  s << "problem = " << problem.id << "\n"
    << "dim = " << problem.dim << "\n"
    << "p = " << num(problem.p) << "\n"
    << "q = " << num(problem.q) << "\n"
    << "beta = " << num(problem.beta) << "\n"
    << "gamma = " << num(problem.gamma) << "\n"
    << "radius = " << num(problem.radius) << "\n"
    << "a = " << num(problem.a) << "\n"
    << "vdp_eps = " << num(problem.vdp_eps) << "\n"
    << "a2 = " << num(problem.a2) << "\n"
    << "a3 = " << num(problem.a3) << "\n"
    << "nc_eps = " << num(problem.nc_eps) << "\n"
    << "u_max = " << num(problem.u_max) << "\n"
    << "scheme = " << sim::to_string(scheme.scheme) << "\n"
    << "T = " << num(scheme.T) << "\n"
    << "N = " << scheme.N << "\n"
    << "min_step_factor = " << num(scheme.min_step_factor) << "\n"
    << "step_cap_factor = " << scheme.step_cap_factor << "\n"
    << "grad_through_h = " << (scheme.grad_through_h ? "on" : "off") << "\n"
    << "td = " << td_name(td) << "\n"
    << "width = " << arch.width << "\n"
    << "depth = " << arch.depth << "\n"
    << "batch = " << batch << "\n"
    << "eta = " << num(eta) << "\n"
    << "control_penalty = " << num(control_penalty) << "\n"
    << "iters_stage1 = " << schedule.stage1 << "\n"
    << "iters_stage2 = " << schedule.stage2 << "\n"
    << "iters_stage3 = " << schedule.stage3 << "\n"
    << "lr1 = " << num(schedule.lr1) << "\n"
    << "lr2 = " << num(schedule.lr2) << "\n"
    << "lr3 = " << num(schedule.lr3) << "\n"
    << "seed = " << seed << "\n"
    << "eval_every = " << eval_every << "\n"
    << "chunk = " << chunk << "\n"
    << "validation_size = " << validation_size << "\n";
  return s.str();
}

std::uint64_t fnv1a(const std::string& text) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : text) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::uint64_t TrainConfig::hash() const { return fnv1a(canonical()); }

}  // namespace hjbac::train
