#pragma once

#include <iosfwd>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "hjbac/trainer/trainer.hpp"

namespace hjbac::cli {

/// %.17g, which round-trips every double.
std::string fmt(double v);

/// training_curve.csv: iter, err_v, err_u, critic_loss, boundary_loss,
/// actor_loss, truncation_rate. Fields that were not measured are empty.
void write_curve_header(std::ostream& out);
void write_curve_row(std::ostream& out, const train::MetricsRecord& r);
void write_training_curve(const std::string& path, const std::vector<train::MetricsRecord>& history);

/// Shared-bin histogram of two samples over their combined range.
struct DensityTable {
  Eigen::VectorXd centers;
  Eigen::VectorXd first;   // density of the first sample
  Eigen::VectorXd second;  // density of the second sample
  double bin_width = 0.0;
};

/// `bins` equal-width bins; each column integrates to 1. A degenerate range
/// is widened to a unit interval around the common value.
DensityTable density_histogram(const Eigen::VectorXd& a, const Eigen::VectorXd& b, int bins = 100);

/// density.csv: bin_center, true_density, learned_density.
void write_density_csv(const std::string& path, const DensityTable& table);

/// Networks from either a training checkpoint or a bare network file.
nn::NetworkSet read_networks_any(const std::string& path);

}  // namespace hjbac::cli
