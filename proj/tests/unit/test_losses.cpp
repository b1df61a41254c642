#include <doctest.h>

#include <cmath>

#include "hjbac/losses/losses.hpp"
#include "hjbac/problems/sampling.hpp"
#include "toy_problem.hpp"

using namespace hjbac;
using namespace hjbac::loss;
using sim::NoiseStream;
using sim::StreamPurpose;

namespace {

std::vector<NoiseStream> streams(int n, std::uint64_t seed) {
  std::vector<NoiseStream> s;
  for (int j = 0; j < n; ++j) s.emplace_back(seed, 0, StreamPurpose::Test, static_cast<std::uint64_t>(j));
  return s;
}

Matrix starts(const pde::Problem& p, int n, std::uint64_t seed) {
  NoiseStream rng(seed, 1, StreamPurpose::Test, 0);
  return pde::sample_initial_batch(p.domain(), p.dim(), n, rng);
}

std::vector<Trajectory> paths_for(const pde::Problem& p, const sim::Policy& pol, int n, const sim::SchemeConfig& cfg,
                                  std::uint64_t seed) {
  ad::Tape t(false);
  auto s = streams(n, seed);
  return sim::simulate(t, p, pol, starts(p, n, seed), cfg, s).paths;
}

sim::SchemeConfig short_scheme(sim::Scheme s = sim::Scheme::Adaptive) {
  sim::SchemeConfig c;
  c.scheme = s;
  c.T = 0.1;
  c.N = 8;
  return c;
}

// Central differences of a scalar function of a parameter vector.
template <typename F>
Vector fd_gradient(F&& f, Vector theta, double step = 1e-6) {
  Vector g(theta.size());
  for (Eigen::Index i = 0; i < theta.size(); ++i) {
    const double keep = theta[i];
    theta[i] = keep + step;
    const double up = f(theta);
    theta[i] = keep - step;
    const double dn = f(theta);
    theta[i] = keep;
    g[i] = (up - dn) / (2 * step);
  }
  return g;
}

double rel(const Vector& a, const Vector& b) { return (a - b).norm() / std::max(a.norm(), b.norm()); }

}  // namespace

TEST_CASE("td pieces on a hand-built trajectory") {
  // Two steps in 2d, gamma = 0.5, sigma = 0.3 I, f = 2.
  const auto p = toy::make(2, 0.0, 0.3, 2.0, 0.0, 0.5);
  Trajectory tr;
  tr.states.resize(2, 3);
  tr.states << 0.1, 0.2, 0.3,  //
      0.0, -0.1, 0.1;
  tr.times.resize(3);
  tr.times << 0.0, 0.01, 0.03;
  tr.steps.resize(2);
  tr.steps << 0.01, 0.02;
  tr.noises.resize(2, 2);
  tr.noises << 1.0, -0.5,  //
      2.0, 0.25;
  tr.controls = Matrix::Zero(2, 2);

  CriticFunctions c;
  c.value = [](const Vector& x) { return x.squaredNorm() + 1.0; };
  c.gradient = [](const Vector& x) { return Vector(2.0 * x); };
  const TDValue v = td_value(tr, c, *p);

  const double running = 2.0 * 0.01 + std::exp(-0.5 * 0.01) * 2.0 * 0.02;
  // G(X_0) = (0.2, 0), G(X_1) = (0.4, -0.2)
  const double stoch = 0.3 * (0.2 * 1.0 + 0.0 * 2.0) * std::sqrt(0.01) +
                       std::exp(-0.5 * 0.01) * 0.3 * (0.4 * -0.5 + -0.2 * 0.25) * std::sqrt(0.02);
  const double terminal = std::exp(-0.5 * 0.03) * (0.09 + 0.01 + 1.0);
  const double initial = 0.01 + 1.0;
  CHECK(v.running == doctest::Approx(running).epsilon(1e-14));
  CHECK(v.stoch == doctest::Approx(stoch).epsilon(1e-14));
  CHECK(v.terminal == doctest::Approx(terminal).epsilon(1e-14));
  CHECK(v.initial == doctest::Approx(initial).epsilon(1e-14));
  CHECK(v.td2 == doctest::Approx(running + terminal - initial).epsilon(1e-14));
  CHECK(v.td1 == doctest::Approx(running + terminal - initial - stoch).epsilon(1e-14));

  c.gradient = nullptr;
  CHECK(td_value(tr, c, *p).td1 == td_value(tr, c, *p).td2);
}

TEST_CASE("td statistics") {
  std::vector<TDValue> vals(4);
  const double td1[] = {1.0, 2.0, 3.0, 4.0};
  const double td2[] = {0.0, 0.0, 2.0, -2.0};
  for (int i = 0; i < 4; ++i) {
    vals[i].td1 = td1[i];
    vals[i].td2 = td2[i];
  }
  const TDStatistics s = td_statistics(vals);
  CHECK(s.mean_td1 == 2.5);
  CHECK(s.mean_td2 == 0.0);
  CHECK(s.var_td1 == doctest::Approx(5.0 / 3.0));
  CHECK(s.var_td2 == doctest::Approx(8.0 / 3.0));
  CHECK(s.rms_td1 == doctest::Approx(std::sqrt(30.0 / 4.0)));
  CHECK(s.rms_td2 == doctest::Approx(std::sqrt(2.0)));
  CHECK(s.pooled_se() == doctest::Approx(std::sqrt((5.0 / 3.0 + 8.0 / 3.0) / 4.0)));
  CHECK(td_statistics({}).pooled_se() == 0.0);
}

TEST_CASE("tape critic loss equals the plain evaluation") {
  const auto p = pde::make_lqr(3, 1, 1, 1, 1, 1);
  const auto pol = sim::exact_policy(p);
  const auto paths = paths_for(*p, pol, 12, short_scheme(), 4);
  NoiseStream b(4, 0, StreamPurpose::Boundary, 0);
  CriticBatch batch{paths, pde::sample_boundary_batch(p->domain(), 3, 5, b), 1.0 / 12, 1.0 / 5};
  for (auto td : {nn::TdVariant::Lstd, nn::TdVariant::VrLstd}) {
    const auto nets = nn::NetworkSet::create(3, 3, td, p->control_head(), {5, 2}, 9);
    ad::Tape t;
    const CriticTerms terms = critic_loss(t, nets, *p, batch, 7.0, td);
    const CriticValues plain = critic_loss_values(critic_functions(nets), *p, batch, 7.0, td);
    CHECK(t.scalar(terms.td) == doctest::Approx(plain.td).epsilon(1e-12));
    CHECK(t.scalar(terms.boundary) == doctest::Approx(plain.boundary).epsilon(1e-12));
    CHECK(t.scalar(terms.total) == doctest::Approx(plain.total).epsilon(1e-12));
    CHECK(plain.total == doctest::Approx(plain.td + 7.0 * plain.boundary));
  }
}

TEST_CASE("critic gradients match central differences") {
  const auto p = pde::make_lqr(2, 1, 1, 1, 1, 1);
  const auto pol = sim::exact_policy(p);
  const auto paths = paths_for(*p, pol, 6, short_scheme(), 2);
  NoiseStream b(2, 0, StreamPurpose::Boundary, 0);
  const CriticBatch batch{paths, pde::sample_boundary_batch(p->domain(), 2, 3, b), 1.0 / 6, 1.0 / 3};

  for (auto td : {nn::TdVariant::Lstd, nn::TdVariant::VrLstd}) {
    CAPTURE(static_cast<int>(td));
    const auto base = nn::NetworkSet::create(2, 2, td, p->control_head(), {4, 1}, 3);
    auto loss_at = [&](const Vector& th_v, const Vector& th_g) {
      nn::NetworkSet n = base;
      n.value.params().assign(th_v);
      if (n.gradient) n.gradient->params().assign(th_g);
      return critic_loss_values(critic_functions(n), *p, batch, 2.0, td).total;
    };
    ad::Tape t;
    const CriticTerms terms = critic_loss(t, base, *p, batch, 2.0, td);
    t.backward(terms.total);
    Vector gv = Vector::Zero(static_cast<Eigen::Index>(base.value.params().size()));
    t.accumulate_param_grad(base.value.params(), gv);
    const Vector th_v = base.value.params().values();
    const Vector th_g = base.gradient ? Vector(base.gradient->params().values()) : Vector();
    const Vector fd_v = fd_gradient([&](const Vector& th) { return loss_at(th, th_g); }, th_v);
    CHECK(rel(gv, fd_v) < 1e-5);
    if (base.gradient) {
      Vector gg = Vector::Zero(static_cast<Eigen::Index>(base.gradient->params().size()));
      t.accumulate_param_grad(base.gradient->params(), gg);
      const Vector fd_g = fd_gradient([&](const Vector& th) { return loss_at(th_v, th); }, th_g);
      CHECK(rel(gg, fd_g) < 1e-5);
    }
  }
}

TEST_CASE("chunked critic losses add up to the full batch") {
  const auto p = pde::make_lqr(3, 1, 1, 1, 1, 1);
  const auto pol = sim::exact_policy(p);
  const auto paths = paths_for(*p, pol, 10, short_scheme(), 6);
  const auto nets = nn::NetworkSet::create(3, 3, nn::TdVariant::VrLstd, p->control_head(), {5, 1}, 2);
  const std::span<const Trajectory> all(paths);
  ad::Tape full;
  const double whole = full.scalar(critic_loss(full, nets, *p, {all, Matrix(3, 0), 0.1, 0.0}, 1.0,
                                               nn::TdVariant::VrLstd).td);
  double parts = 0.0;
  for (std::size_t off : {std::size_t{0}, std::size_t{4}}) {
    ad::Tape t;
    parts += t.scalar(critic_loss(t, nets, *p, {all.subspan(off, off == 0 ? 4 : 6), Matrix(3, 0), 0.1, 0.0}, 1.0,
                                  nn::TdVariant::VrLstd).td);
  }
  CHECK(parts == doctest::Approx(whole).epsilon(1e-13));
}

TEST_CASE("critic loss input checks") {
  const auto p = pde::make_lqr(2, 1, 1, 1, 1, 1);
  const auto lstd = nn::NetworkSet::create(2, 2, nn::TdVariant::Lstd, p->control_head(), {3, 1}, 1);
  std::vector<Trajectory> none;
  ad::Tape t;
  CHECK_THROWS_AS(critic_loss(t, lstd, *p, {none, Matrix(2, 0), 1.0, 1.0}, 1.0, nn::TdVariant::Lstd),
                  std::invalid_argument);
  const auto pol = sim::exact_policy(p);
  const auto paths = paths_for(*p, pol, 2, short_scheme(), 1);
  CHECK_THROWS_AS(critic_loss(t, lstd, *p, {paths, Matrix(2, 0), 1.0, 1.0}, 1.0, nn::TdVariant::VrLstd),
                  std::invalid_argument);
  CHECK_THROWS_AS(critic_loss(t, lstd, *p, {paths, Matrix(3, 2), 1.0, 1.0}, 1.0, nn::TdVariant::Lstd),
                  std::invalid_argument);
}

TEST_CASE("exact solution zeroes the variance-reduced td up to discretisation") {
  const auto p = pde::make_lqr(5, 1, 1, 1, 1, 1);
  const auto pol = sim::exact_policy(p);
  sim::SchemeConfig cfg;
  const auto paths = paths_for(*p, pol, 2000, cfg, 8);
  CriticFunctions exact;
  exact.value = [&](const Vector& x) { return p->exact_value(x); };
  const double k = pde::lqr_k(1, 1, 1, 1);
  exact.gradient = [k](const Vector& x) { return Vector(2.0 * k * x); };
  const auto vals = td_values(paths, exact, *p);
  const TDStatistics s = td_statistics(vals);
  CHECK(s.var_td1 < 0.05 * s.var_td2);
  CHECK(std::abs(s.mean_td1 - s.mean_td2) <= 3.0 * s.pooled_se());
}

TEST_CASE("actor loss value and gradient") {
  const auto p = pde::make_lqr(2, 1, 1, 1, 1, 1);
  const auto nets = nn::NetworkSet::create(2, 2, nn::TdVariant::Lstd, p->control_head(), {4, 1}, 5);
  const Matrix x0 = starts(*p, 5, 3);
  const auto cfg = short_scheme();

  auto plain_loss = [&](const nn::NetworkSet& n) {
    // Independent bookkeeping: per-path rollouts and pointwise costs.
    const sim::NetworkPolicy pol(n, false);
    double total = 0.0;
    for (int j = 0; j < 5; ++j) {
      NoiseStream s(7, 0, StreamPurpose::Test, static_cast<std::uint64_t>(j));
      const Trajectory tr = sim::rollout(*p, pol, x0.col(j), cfg, s);
      total += sim::discounted_running_cost(tr, *p) +
               std::exp(-p->gamma() * tr.final_time()) * nn::eval_value(n.value, tr.final_state());
    }
    return total / 5.0;
  };

  ad::Tape t;
  auto s = streams(5, 7);
  const ActorTerms terms = actor_loss(t, nets, *p, x0, cfg, s, 1.0 / 5.0);
  CHECK(t.scalar(terms.total) == doctest::Approx(plain_loss(nets)).epsilon(1e-12));

  t.backward(terms.total);
  Vector g = Vector::Zero(static_cast<Eigen::Index>(nets.control.params().size()));
  t.accumulate_param_grad(nets.control.params(), g);
  Vector gv = Vector::Zero(static_cast<Eigen::Index>(nets.value.params().size()));
  t.accumulate_param_grad(nets.value.params(), gv);
  CHECK(gv.norm() == 0.0);

  const Vector theta = nets.control.params().values();
  const Vector fd = fd_gradient(
      [&](const Vector& th) {
        nn::NetworkSet n = nets;
        n.control.params().assign(th);
        return plain_loss(n);
      },
      theta);
  CHECK(rel(g, fd) < 1e-4);
}

TEST_CASE("control penalty by hand") {
  const sim::FunctionPolicy pol(2, [](const Vector& x) { return Vector(3.0 * x); });
  Matrix x(2, 3);
  x << 0.1, 0.6, 0.0,  //
      0.0, 0.8, 0.5;
  // |u| = 0.3, 3.0, 1.5
  ad::Tape t;
  const Var v = control_penalty(t, pol, x, 10.0, 0.5);
  CHECK(t.scalar(v) == doctest::Approx((2.0 + 0.5) * 10.0 * 0.5));
}
