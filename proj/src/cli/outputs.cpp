#include "hjbac/cli/outputs.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <stdexcept>

#include "hjbac/networks/checkpoint.hpp"

namespace hjbac::cli {

std::string fmt(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

namespace {

std::string opt(double v) { return std::isnan(v) ? "" : fmt(v); }

}  // namespace

void write_curve_header(std::ostream& out) {
  out << "iter,err_v,err_u,critic_loss,boundary_loss,actor_loss,truncation_rate\n";
}

void write_curve_row(std::ostream& out, const train::MetricsRecord& r) {
  out << r.iter << ',' << opt(r.err_v) << ',' << opt(r.err_u) << ',' << opt(r.critic_loss) << ','
      << opt(r.boundary_loss) << ',' << opt(r.actor_loss) << ',' << opt(r.truncation_rate) << '\n';
}

void write_training_curve(const std::string& path, const std::vector<train::MetricsRecord>& history) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write '" + path + "'");
  write_curve_header(out);
  for (const auto& r : history) write_curve_row(out, r);
}

DensityTable density_histogram(const Eigen::VectorXd& a, const Eigen::VectorXd& b, int bins) {
  if (bins < 1) throw std::invalid_argument("density_histogram: bins must be positive");
  if (a.size() == 0 || b.size() == 0) throw std::invalid_argument("density_histogram: empty sample");
  double lo = std::min(a.minCoeff(), b.minCoeff());
  double hi = std::max(a.maxCoeff(), b.maxCoeff());
  if (!(hi > lo)) {
    lo -= 0.5;
    hi += 0.5;
  }
  DensityTable t;
  t.bin_width = (hi - lo) / bins;
  t.centers.resize(bins);
  for (int i = 0; i < bins; ++i) t.centers[i] = lo + (i + 0.5) * t.bin_width;
  auto fill = [&](const Eigen::VectorXd& s) {
    Eigen::VectorXd counts = Eigen::VectorXd::Zero(bins);
    for (Eigen::Index k = 0; k < s.size(); ++k) {
      int i = static_cast<int>(std::floor((s[k] - lo) / t.bin_width));
      i = std::clamp(i, 0, bins - 1);
      counts[i] += 1.0;
    }
    return Eigen::VectorXd(counts / (static_cast<double>(s.size()) * t.bin_width));
  };
  t.first = fill(a);
  t.second = fill(b);
  return t;
}

void write_density_csv(const std::string& path, const DensityTable& t) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write '" + path + "'");
  out << "bin_center,true_density,learned_density\n";
  for (Eigen::Index i = 0; i < t.centers.size(); ++i) {
    out << fmt(t.centers[i]) << ',' << fmt(t.first[i]) << ',' << fmt(t.second[i]) << '\n';
  }
}

nn::NetworkSet read_networks_any(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot open '" + path + "'");
  char magic[8];
  is.read(magic, 8);
  if (!is) throw std::runtime_error("'" + path + "' is too short to be a checkpoint");
  const std::string m(magic, 8);
  if (m == "HJBACNET") {
    is.seekg(0);
    return nn::from_records(nn::read_networks(is));
  }
  if (m == "HJBACCKP") {
    // version, iteration, seed, config hash
    nn::BinaryReader r(is);
    r.u32();
    r.u64();
    r.u64();
    r.u64();
    return nn::from_records(nn::read_networks(is));
  }
  throw std::runtime_error("'" + path + "' is not a checkpoint");
}

}  // namespace hjbac::cli
