#include <doctest.h>

#include <cmath>
#include <numeric>
#include <sstream>

#include "hjbac/problems/sampling.hpp"
#include "hjbac/rollout/rollout.hpp"
#include "toy_problem.hpp"

using namespace hjbac;
using namespace hjbac::sim;

namespace {

SchemeConfig scheme(Scheme s, double T = 0.2, int N = 50) {
  SchemeConfig c;
  c.scheme = s;
  c.T = T;
  c.N = N;
  return c;
}

Vector point_at_distance(int d, double radius, double dist) {
  Vector x = Vector::Zero(d);
  x[0] = radius - dist;
  return x;
}

std::vector<NoiseStream> streams(int n, std::uint64_t seed, std::uint64_t iteration = 0) {
  std::vector<NoiseStream> s;
  s.reserve(static_cast<std::size_t>(n));
  for (int j = 0; j < n; ++j) {
    s.emplace_back(seed, iteration, StreamPurpose::Test, static_cast<std::uint64_t>(j));
  }
  return s;
}

Matrix uniform_starts(const pde::Problem& p, int n, std::uint64_t seed) {
  NoiseStream rng(seed, 99, StreamPurpose::Test, 0);
  return pde::sample_initial_batch(p.domain(), p.dim(), n, rng);
}

RolloutBatch run_batch(const pde::Problem& p, const Policy& pol, const Matrix& x0, const SchemeConfig& cfg,
                       std::uint64_t seed) {
  ad::Tape t(false);
  auto s = streams(static_cast<int>(x0.cols()), seed);
  return simulate(t, p, pol, x0, cfg, s);
}

}  // namespace

TEST_CASE("adaptive step size by hand") {
  const auto cfg = scheme(Scheme::Adaptive);
  const double sigma = std::sqrt(2.0);
  CHECK(cfg.dt() == doctest::Approx(0.004));
  CHECK(cfg.boundary_layer(sigma, 5) == doctest::Approx(0.34641).epsilon(1e-5));
  const pde::BallDomain ball{1.0};
  CHECK(step_size(point_at_distance(5, 1.0, 0.5), 0.0, cfg, ball, sigma, 5) == doctest::Approx(0.004));
  CHECK(step_size(point_at_distance(5, 1.0, 0.1), 0.0, cfg, ball, sigma, 5) ==
        doctest::Approx(0.01 / 30.0).epsilon(1e-12));
  CHECK(step_size(point_at_distance(5, 1.0, 1e-4), 0.0, cfg, ball, sigma, 5) == doctest::Approx(4e-7));
  // Horizon clamp.
  CHECK(step_size(point_at_distance(5, 1.0, 0.5), 0.199, cfg, ball, sigma, 5) ==
        doctest::Approx(0.001).epsilon(1e-9));
  // Naive ignores the distance.
  CHECK(step_size(point_at_distance(5, 1.0, 1e-4), 0.0, scheme(Scheme::Naive), ball, sigma, 5) ==
        doctest::Approx(0.004));
  CHECK_THROWS_AS(step_size(point_at_distance(5, 1.0, -0.1), 0.0, cfg, ball, sigma, 5), std::invalid_argument);
}

TEST_CASE("scheme configuration is validated") {
  SchemeConfig c;
  c.N = 0;
  CHECK_THROWS_AS(c.validate(), std::invalid_argument);
  c = SchemeConfig{};
  c.T = -1.0;
  CHECK_THROWS_AS(c.validate(), std::invalid_argument);
  CHECK(SchemeConfig{}.step_cap() == 16 * 50);
  CHECK(SchemeConfig{}.min_step() == doctest::Approx(4e-7));
  CHECK(parse_scheme("naive") == Scheme::Naive);
  CHECK(to_string(Scheme::Adaptive) == "adaptive");
  CHECK_THROWS(parse_scheme("implicit"));
}

TEST_CASE("frozen dynamics stay put until the horizon") {
  const auto p = toy::make(3, 0.0, 0.0, 1.0, 0.0, 0.0);
  const FunctionPolicy zero(3, [](const Vector&) { return Vector::Zero(3).eval(); });
  Vector x0(3);
  x0 << 0.2, -0.1, 0.3;
  for (Scheme s : {Scheme::Naive, Scheme::Adaptive}) {
    NoiseStream rng(1, 0, StreamPurpose::Test, 0);
    const Trajectory tr = rollout(*p, zero, x0, scheme(s), rng);
    CHECK(tr.length() == 50);
    CHECK_FALSE(tr.exit);
    CHECK_FALSE(tr.truncated);
    CHECK(tr.final_time() == doctest::Approx(0.2).epsilon(1e-14));
    for (int n = 0; n <= tr.length(); ++n) CHECK((tr.states.col(n) - x0).norm() == 0.0);
  }
}

TEST_CASE("naive scheme keeps a constant step") {
  const auto p = pde::make_lqr(5, 1, 1, 1, 1, 1);
  const auto pol = exact_policy(p);
  const auto batch = run_batch(*p, pol, uniform_starts(*p, 200, 3), scheme(Scheme::Naive), 4);
  int exits = 0;
  for (const auto& tr : batch.paths) {
    CHECK(tr.length() <= 50);
    CHECK(((tr.steps.array() - 0.004).abs() < 1e-15).all());
    for (int n = 0; n <= tr.length(); ++n) CHECK(tr.times[n] == doctest::Approx(n * 0.004).epsilon(1e-12));
    if (!tr.exit) CHECK(tr.final_time() == 0.2);
    exits += tr.exit;
  }
  CHECK(exits > 0);
  CHECK(exits == batch.exited);
}

TEST_CASE("stored states stay inside and time bookkeeping holds") {
  const auto p = pde::make_lqr(4, 1, 1, 1, 1, 1);
  const auto pol = exact_policy(p);
  const auto cfg = scheme(Scheme::Adaptive);
  const auto batch = run_batch(*p, pol, uniform_starts(*p, 300, 5), cfg, 6);
  for (const auto& tr : batch.paths) {
    CHECK((tr.states.colwise().norm().array() < 1.0).all());
    CHECK(tr.times[0] == 0.0);
    for (int n = 0; n < tr.length(); ++n) {
      CHECK(tr.times[n + 1] == doctest::Approx(tr.times[n] + tr.steps[n]).epsilon(1e-14));
      CHECK(tr.steps[n] >= cfg.min_step() * (1 - 1e-12));
      CHECK(tr.steps[n] <= cfg.dt() * (1 + 1e-12));
    }
    CHECK(tr.final_time() <= cfg.T);
    if (!tr.exit && !tr.truncated) CHECK(tr.final_time() == cfg.T);
    CHECK(tr.noises.cols() == tr.length());
    CHECK(tr.controls.cols() == tr.length());
  }
}

TEST_CASE("exiting proposal is the step after the last stored state") {
  // Replay each exiting path's last step by hand: the proposal must leave the ball.
  const auto p = pde::make_lqr(3, 1, 1, 1, 1, 1);
  const auto pol = exact_policy(p);
  const auto cfg = scheme(Scheme::Naive);
  const Matrix x0 = uniform_starts(*p, 100, 8);
  auto s = streams(100, 9);
  ad::Tape t(false);
  const auto batch = simulate(t, *p, pol, x0, cfg, s);
  int checked = 0;
  for (int j = 0; j < 100; ++j) {
    const auto& tr = batch.paths[static_cast<std::size_t>(j)];
    if (!tr.exit) continue;
    NoiseStream replay(9, 0, StreamPurpose::Test, static_cast<std::uint64_t>(j));
    Vector x = x0.col(j);
    for (int n = 0; n <= tr.length(); ++n) {
      const Vector xi = replay.normal_vector(3);
      const Vector u = p->exact_control(x);
      const Vector next = x + p->drift(x, u) * cfg.dt() + p->diffusion(x, u) * xi * std::sqrt(cfg.dt());
      if (n < tr.length()) {
        CHECK((next - tr.states.col(n + 1)).norm() < 1e-12);
        x = next;
      } else {
        CHECK(next.norm() >= 1.0);
      }
    }
    ++checked;
  }
  CHECK(checked > 0);
}

TEST_CASE("trajectories are a pure function of the stream") {
  const auto p = pde::make_van_der_pol(4, 1.0, 0.1, 1.0, 1.0, 1.0);
  const auto nets = nn::NetworkSet::create(4, 2, nn::TdVariant::Lstd, p->control_head(), {8, 1}, 3);
  const NetworkPolicy pol(nets, false);
  const Matrix x0 = uniform_starts(*p, 20, 1);
  const auto a = run_batch(*p, pol, x0, scheme(Scheme::Adaptive), 12);
  const auto b = run_batch(*p, pol, x0, scheme(Scheme::Adaptive), 12);
  const auto c = run_batch(*p, pol, x0, scheme(Scheme::Adaptive), 13);
  bool differs = false;
  for (std::size_t j = 0; j < 20; ++j) {
    CHECK(a.paths[j].states.cols() == b.paths[j].states.cols());
    CHECK((a.paths[j].states.array() == b.paths[j].states.array()).all());
    differs = differs || a.paths[j].states.cols() != c.paths[j].states.cols() ||
              (a.paths[j].states.array() != c.paths[j].states.array()).any();
    // A single rollout with the same stream reproduces the batched path.
    NoiseStream rng(12, 0, StreamPurpose::Test, j);
    const Trajectory single = rollout(*p, pol, x0.col(static_cast<Eigen::Index>(j)), scheme(Scheme::Adaptive), rng);
    CHECK(single.states.cols() == a.paths[j].states.cols());
    CHECK((single.states - a.paths[j].states).cwiseAbs().maxCoeff() < 1e-13);
  }
  CHECK(differs);
}

TEST_CASE("gradient tape and plain simulation agree") {
  const auto p = pde::make_lqr(3, 1, 1, 1, 1, 1);
  const auto nets = nn::NetworkSet::create(3, 3, nn::TdVariant::Lstd, p->control_head(), {6, 1}, 8);
  const NetworkPolicy frozen(nets, false);
  const NetworkPolicy live(nets, true);
  const Matrix x0 = uniform_starts(*p, 16, 2);
  const auto cfg = scheme(Scheme::Adaptive, 0.2, 20);
  ad::Tape plain(false), grad(true);
  auto s1 = streams(16, 5), s2 = streams(16, 5);
  const auto a = simulate(plain, *p, frozen, x0, cfg, s1);
  const auto b = simulate(grad, *p, live, x0, cfg, s2);
  for (std::size_t j = 0; j < 16; ++j) {
    CHECK(a.paths[j].length() == b.paths[j].length());
    CHECK((a.paths[j].states - b.paths[j].states).cwiseAbs().maxCoeff() < 1e-12);
  }
  CHECK((plain.value(a.running_cost) - grad.value(b.running_cost)).cwiseAbs().maxCoeff() < 1e-12);
  CHECK((plain.value(a.final_state) - grad.value(b.final_state)).cwiseAbs().maxCoeff() < 1e-12);
  CHECK((plain.value(a.final_time) - grad.value(b.final_time)).cwiseAbs().maxCoeff() < 1e-12);
  for (std::size_t j = 0; j < 16; ++j) {
    CHECK(plain.value(a.running_cost)(0, static_cast<Eigen::Index>(j)) ==
          doctest::Approx(discounted_running_cost(a.paths[j], *p)).epsilon(1e-12));
  }
}

TEST_CASE("step cap truncates and is counted") {
  // Start right at the wall with a tiny floor so the cap binds.
  const auto p = toy::make(2, 0.0, 1.0, 1.0, 0.0, 0.0);
  const FunctionPolicy zero(2, [](const Vector&) { return Vector::Zero(2).eval(); });
  auto cfg = scheme(Scheme::Adaptive, 1.0, 10);
  cfg.step_cap_factor = 1;
  cfg.min_step_factor = 1e-8;
  const int B = 64;
  Matrix x0 = Matrix::Zero(2, B);
  x0.row(0).setConstant(1.0 - 1e-6);
  auto s = streams(B, 3);
  ad::Tape t(false);
  const auto batch = simulate(t, *p, zero, x0, cfg, s);
  int truncated = 0;
  for (const auto& tr : batch.paths) {
    CHECK(tr.exit != tr.truncated);
    if (tr.truncated) {
      CHECK(tr.length() == cfg.step_cap());
      ++truncated;
    }
  }
  CHECK(truncated > 0);
  CHECK(batch.truncated == truncated);
  CHECK(batch.truncation_rate() == doctest::Approx(truncated / double(B)));
}

TEST_CASE("exact lqr control rarely hits the step cap") {
  const auto p = pde::make_lqr(5, 1, 1, 1, 1, 1);
  const auto pol = exact_policy(p);
  const auto batch = run_batch(*p, pol, uniform_starts(*p, 10000, 11), scheme(Scheme::Adaptive), 12);
  CHECK(batch.truncation_rate() < 0.01);
}

TEST_CASE("discounted running cost sums") {
  SUBCASE("unit cost without discount telescopes to the final time") {
    const auto p = pde::make_eikonal(3, 1.2, 0.2, 1.0);
    const auto pol = exact_policy(p);
    const auto batch = run_batch(*p, pol, uniform_starts(*p, 50, 1), scheme(Scheme::Adaptive), 2);
    for (const auto& tr : batch.paths) {
      CHECK(discounted_running_cost(tr, *p) == doctest::Approx(tr.final_time()).epsilon(1e-13));
    }
  }
  SUBCASE("unit cost with unit discount is a geometric sum") {
    const auto p = toy::make(2, 0.0, 0.0, 1.0, 0.0, 1.0);
    const FunctionPolicy zero(2, [](const Vector&) { return Vector::Zero(2).eval(); });
    NoiseStream rng(1, 0, StreamPurpose::Test, 0);
    const Trajectory tr = rollout(*p, zero, Vector::Zero(2), scheme(Scheme::Naive), rng);
    REQUIRE(tr.length() == 50);
    double expect = 0.0;
    for (int n = 0; n < 50; ++n) expect += std::exp(-0.004 * n) * 0.004;
    CHECK(discounted_running_cost(tr, *p) == doctest::Approx(expect).epsilon(1e-13));
    CHECK(expect == doctest::Approx(0.004 * (1 - std::exp(-0.2)) / (1 - std::exp(-0.004))).epsilon(1e-12));
  }
  SUBCASE("zero cost") {
    const auto p = toy::make(2, 0.0, 0.5, 0.0, 0.0, 1.0);
    const FunctionPolicy zero(2, [](const Vector&) { return Vector::Zero(2).eval(); });
    NoiseStream rng(1, 0, StreamPurpose::Test, 0);
    const Trajectory tr = rollout(*p, zero, Vector::Zero(2), scheme(Scheme::Adaptive), rng);
    CHECK(discounted_running_cost(tr, *p) == 0.0);
  }
}

TEST_CASE("stochastic integral is centred") {
  const auto p = toy::make(3, 0.0, 0.7, 0.0, 0.0, 0.0);
  const FunctionPolicy zero(3, [](const Vector&) { return Vector::Zero(3).eval(); });
  Vector G(3);
  G << 0.5, -1.0, 2.0;
  const GradientField g = [&](const Vector&) { return G; };
  const GradientField none = [](const Vector& x) { return Vector::Zero(x.size()).eval(); };
  const int K = 20000;
  const auto batch = run_batch(*p, zero, uniform_starts(*p, K, 4), scheme(Scheme::Adaptive), 5);
  double sum = 0.0, mean_t = 0.0;
  for (const auto& tr : batch.paths) {
    CHECK(discounted_stochastic_integral(tr, none, *p) == 0.0);
    // Constant sigma and G: G^T sigma sum xi_n sqrt(h_n).
    double direct = 0.0;
    for (int n = 0; n < tr.length(); ++n) direct += G.dot(0.7 * tr.noises.col(n)) * std::sqrt(tr.steps[n]);
    const double v = discounted_stochastic_integral(tr, g, *p);
    CHECK(v == doctest::Approx(direct).epsilon(1e-12));
    sum += v;
    mean_t += tr.final_time();
  }
  mean_t /= K;
  const double se = std::sqrt(G.squaredNorm() * 0.49 * mean_t) / std::sqrt(static_cast<double>(K));
  CHECK(std::abs(sum / K) < 3.0 * se);
}

TEST_CASE("cost-to-go estimate matches the exact value under the exact control") {
  const auto p = pde::make_lqr(5, 1, 1, 1, 1, 1);
  const auto pol = exact_policy(p);
  const int K = 4000;
  NoiseStream pick(3, 0, StreamPurpose::Test, 77);
  const Matrix starts = pde::sample_initial_batch(p->domain(), 5, 10, pick);
  int outside = 0;
  for (int i = 0; i < 10; ++i) {
    const Matrix x0 = starts.col(i).replicate(1, K);
    const auto batch = run_batch(*p, pol, x0, scheme(Scheme::Adaptive), 100 + static_cast<std::uint64_t>(i));
    Vector est(K);
    for (int j = 0; j < K; ++j) {
      const auto& tr = batch.paths[static_cast<std::size_t>(j)];
      const Vector xe = tr.final_state();
      // V* at the stopping state, exit or horizon alike.
      est[j] = discounted_running_cost(tr, *p) + std::exp(-tr.final_time()) * p->exact_value(xe);
    }
    const double mean = est.mean();
    const double se = std::sqrt((est.array() - mean).square().sum() / (K - 1) / K);
    CAPTURE(i);
    CAPTURE(mean);
    CAPTURE(p->exact_value(starts.col(i)));
    if (std::abs(mean - p->exact_value(starts.col(i))) > 3.0 * se) ++outside;
  }
  CHECK(outside <= 1);
}

TEST_CASE("adaptive stepping samples the boundary layer more densely") {
  const auto p = pde::make_lqr(5, 1, 1, 1, 1, 1);
  const auto pol = exact_policy(p);
  const Matrix x0 = uniform_starts(*p, 2000, 21);
  auto layer_fraction = [&](Scheme s) {
    const auto cfg = scheme(s);
    const double width = cfg.boundary_layer(p->sigma_bound(), 5);
    const auto batch = run_batch(*p, pol, x0, cfg, 22);
    double in = 0.0, total = 0.0;
    for (const auto& tr : batch.paths) {
      const Eigen::ArrayXd dist = 1.0 - tr.states.colwise().norm().transpose().array();
      in += static_cast<double>((dist < width).count());
      total += static_cast<double>(dist.size());
    }
    return in / total;
  };
  CHECK(layer_fraction(Scheme::Adaptive) > layer_fraction(Scheme::Naive));
}

TEST_CASE("sigma above the declared bound aborts adaptive rollouts") {
  const auto p = pde::make_nonconstant_lqr(3, 1, 1, 1, 1, -1.0);
  const FunctionPolicy huge(3, [](const Vector& x) { return Vector::Constant(x.size(), -50.0).eval(); });
  Matrix x0(3, 1);
  x0 << 0.5, 0.5, 0.5;
  auto s = streams(1, 1);
  ad::Tape t(false);
  CHECK_THROWS_AS(simulate(t, *p, huge, x0, scheme(Scheme::Adaptive), s), pde::SigmaBoundExceeded);
}

TEST_CASE("trajectory csv columns") {
  const auto p = pde::make_lqr(2, 1, 1, 1, 1, 1);
  const auto pol = exact_policy(p);
  NoiseStream rng(1, 0, StreamPurpose::Test, 0);
  Vector x0(2);
  x0 << 0.1, 0.2;
  const Trajectory tr = rollout(*p, pol, x0, scheme(Scheme::Adaptive, 0.2, 5), rng);
  std::ostringstream out;
  write_trajectory_csv(out, tr, 3, true);
  std::istringstream in(out.str());
  std::string header, first;
  std::getline(in, header);
  std::getline(in, first);
  CHECK(header == "traj,n,t,h,x0,x1,u0,u1,exit");
  CHECK(first.rfind("3,0,0,", 0) == 0);
  int rows = 0;
  std::string line;
  in.seekg(0);
  std::getline(in, line);
  while (std::getline(in, line)) ++rows;
  CHECK(rows == tr.length() + 1);
}
