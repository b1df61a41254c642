#include "hjbac/cli/app.hpp"

#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <sstream>

#include <CLI11.hpp>
#include <json.hpp>

#include "hjbac/cli/outputs.hpp"
#include "hjbac/cli/settings.hpp"
#include "hjbac/problems/sampling.hpp"
#include "hjbac/rollout/policy.hpp"

#ifndef HJBAC_VERSION
#define HJBAC_VERSION "unknown"
#endif

namespace hjbac::cli {

namespace fs = std::filesystem;
using json = nlohmann::ordered_json;
using ad::Matrix;
using ad::Vector;

namespace {

constexpr int kDumpTrajectories = 16;
constexpr int kDensityMinSamples = 1000;

std::string dashed(std::string key) {
  std::replace(key.begin(), key.end(), '_', '-');
  return key;
}

/// Registers one string option per setting key and reads back those given.
class SettingFlags {
 public:
  void attach(CLI::App& app, const std::vector<std::string>& keys) {
    for (const auto& k : keys) {
      values_[k];
      options_[k] = app.add_option("--" + dashed(k), values_[k], "config key '" + k + "'");
    }
  }
  std::vector<Setting> given() const {
    std::vector<Setting> out;
    for (const auto& [k, opt] : options_) {
      if (opt->count() > 0) out.push_back({k, values_.at(k), "--" + dashed(k)});
    }
    return out;
  }

 private:
  std::map<std::string, std::string> values_;
  std::map<std::string, CLI::Option*> options_;
};

json num(double v) { return std::isfinite(v) ? json(v) : json(nullptr); }

std::string now_utc() {
  const auto t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

json config_echo(const train::TrainConfig& cfg) {
  json j = json::object();
  std::istringstream in(cfg.canonical());
  std::string line;
  while (std::getline(in, line)) {
    const auto eq = line.find(" = ");
    if (eq == std::string::npos) continue;
    j[line.substr(0, eq)] = line.substr(eq + 3);
  }
  return j;
}

void write_json(const fs::path& path, const json& j) {
  const fs::path tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp);
    if (!out) throw std::runtime_error("cannot write '" + tmp.string() + "'");
    out << j.dump(2) << '\n';
  }
  fs::rename(tmp, path);
}

/// Last evaluated errors in the history.
train::Errors final_errors(const std::vector<train::MetricsRecord>& history) {
  for (auto it = history.rbegin(); it != history.rend(); ++it) {
    if (it->evaluated) return {it->err_v, it->err_u};
  }
  return {};
}

void ensure_dir(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw std::runtime_error("cannot create '" + dir.string() + "': " + ec.message());
}

void dump_trajectories(const train::Trainer& trainer, const fs::path& path) {
  const auto& problem = trainer.problem();
  const auto& cfg = trainer.config();
  const sim::NetworkPolicy policy(trainer.networks(), false);
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write '" + path.string() + "'");
  for (int j = 0; j < kDumpTrajectories; ++j) {
    sim::NoiseStream stream(cfg.seed, 0, sim::StreamPurpose::Test, static_cast<std::uint64_t>(j));
    const Vector x0 = pde::sample_initial(problem.domain(), problem.dim(), stream);
    const sim::Trajectory traj = sim::rollout(problem, policy, x0, cfg.scheme, stream);
    sim::write_trajectory_csv(out, traj, j, j == 0);
  }
}

struct TrainOptions {
  std::string config;
  std::string out_dir = "run";
  std::string resume;
  bool dump = false;
  int log_every = 0;
};

struct RunResult {
  int code = kExitOk;
  std::string status = "completed";
  std::string reason;
  train::Errors errors;
};

/// Runs one training job inside `dir`; always leaves a manifest behind.
RunResult train_into(const train::TrainConfig& cfg, const fs::path& dir, const TrainOptions& opts,
                     const std::string& command) {
  ensure_dir(dir);
  const auto start = std::chrono::steady_clock::now();
  const std::string started = now_utc();
  const fs::path curve_path = dir / "training_curve.csv";
  const fs::path ckpt_path = dir / "checkpoint.bin";
  const fs::path manifest_path = dir / "manifest.json";
  std::vector<std::string> outputs;

  RunResult res;
  int iteration = 0;
  std::vector<train::MetricsRecord> history;
  try {
    train::Trainer trainer(cfg);
    const bool resuming = !opts.resume.empty();
    if (resuming) trainer.load_checkpoint(opts.resume);
    const bool append = resuming && fs::exists(curve_path);
    std::ofstream curve(curve_path, append ? std::ios::app : std::ios::trunc);
    if (!curve) throw std::runtime_error("cannot write '" + curve_path.string() + "'");
    if (!append) write_curve_header(curve);
    outputs.push_back(curve_path.filename().string());
    trainer.on_record = [&](const train::MetricsRecord& r) {
      write_curve_row(curve, r);
      if (r.evaluated) curve.flush();
      if (opts.log_every > 0 && (r.iter % opts.log_every == 0 || r.evaluated)) {
        std::cerr << "iter " << r.iter << "  err_v " << fmt(r.err_v) << "  err_u " << fmt(r.err_u)
                  << "  critic " << fmt(r.critic_loss) << "  actor " << fmt(r.actor_loss) << '\n';
      }
    };
    trainer.on_warning = [](const std::string& w) { std::cerr << "warning: " << w << '\n'; };
    try {
      trainer.run();
    } catch (const train::TrainingAborted& e) {
      res.code = kExitNumeric;
      res.status = "aborted";
      res.reason = std::string(e.what()) + " (iteration " + std::to_string(e.iteration()) + ")";
      std::cerr << "error: " << res.reason << '\n';
    }
    curve.flush();
    // On abort the trainer already holds the last good state.
    trainer.save_checkpoint(ckpt_path.string());
    outputs.push_back(ckpt_path.filename().string());
    if (opts.dump && res.code == kExitOk) {
      const fs::path traj_path = dir / "trajectories.csv";
      dump_trajectories(trainer, traj_path);
      outputs.push_back(traj_path.filename().string());
    }
    iteration = trainer.iteration();
    history = trainer.history();
  } catch (const std::exception& e) {
    res.code = kExitError;
    res.status = "failed";
    res.reason = e.what();
    std::cerr << "error: " << e.what() << '\n';
  }
  res.errors = final_errors(history);

  json m;
  m["command"] = command;
  m["version"] = HJBAC_VERSION;
  m["status"] = res.status;
  m["failure_reason"] = res.reason.empty() ? json(nullptr) : json(res.reason);
  m["seed"] = cfg.seed;
  m["started_utc"] = started;
  m["wall_clock_seconds"] =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  m["iterations"] = iteration;
  m["final_err_v"] = num(res.errors.err_v);
  m["final_err_u"] = num(res.errors.err_u);
  m["config_hash"] = cfg.hash();
  m["config"] = config_echo(cfg);
  m["resumed_from"] = opts.resume.empty() ? json(nullptr) : json(opts.resume);
  outputs.push_back(manifest_path.filename().string());
  m["outputs"] = outputs;
  write_json(manifest_path, m);
  return res;
}

std::vector<Setting> collect(const std::string& config_path, const SettingFlags& flags,
                             std::vector<Setting>* file_out) {
  std::vector<Setting> file;
  if (!config_path.empty()) file = parse_config_file(config_path);
  if (file_out) *file_out = file;
  return flags.given();
}

int cmd_train(const train::TrainConfig& cfg, const TrainOptions& opts) {
  const RunResult r = train_into(cfg, opts.out_dir, opts, "train");
  if (r.code == kExitOk) {
    std::cout << "err_v " << fmt(r.errors.err_v) << "\nerr_u " << fmt(r.errors.err_u) << '\n';
  }
  return r.code;
}

struct DensityOptions {
  std::string checkpoint;
  std::string out_dir = "run";
  int samples = 100000;
  int bins = 100;
};

int cmd_density(const train::TrainConfig& cfg, const DensityOptions& opts) {
  const auto start = std::chrono::steady_clock::now();
  const fs::path dir = opts.out_dir;
  ensure_dir(dir);
  if (opts.samples < kDensityMinSamples) {
    std::cerr << "warning: " << opts.samples << " samples give a noisy density estimate (use at least "
              << kDensityMinSamples << ")\n";
  }
  const pde::ProblemPtr problem = train::make_problem(cfg.problem);
  if (!problem->has_exact()) throw std::runtime_error("problem has no exact value function");
  const nn::NetworkSet nets = read_networks_any(opts.checkpoint);
  if (nets.dim() != problem->dim()) {
    throw UsageError("checkpoint dimension " + std::to_string(nets.dim()) +
                     " does not match --dim " + std::to_string(problem->dim()));
  }
  sim::NoiseStream stream(cfg.seed, 0, sim::StreamPurpose::Density, 0);
  const Matrix x = pde::sample_initial_batch(problem->domain(), problem->dim(), opts.samples, stream);
  Vector exact(opts.samples);
  for (int j = 0; j < opts.samples; ++j) exact[j] = problem->exact_value(x.col(j));
  const Vector learned = nn::eval_value_batch(nets, x);
  const DensityTable table = density_histogram(exact, learned, opts.bins);
  const fs::path out = dir / "density.csv";
  write_density_csv(out.string(), table);

  json m;
  m["command"] = "density";
  m["version"] = HJBAC_VERSION;
  m["status"] = "completed";
  m["failure_reason"] = nullptr;
  m["seed"] = cfg.seed;
  m["started_utc"] = now_utc();
  m["wall_clock_seconds"] =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  m["checkpoint"] = opts.checkpoint;
  m["samples"] = opts.samples;
  m["bins"] = opts.bins;
  m["bin_width"] = table.bin_width;
  m["config"] = config_echo(cfg);
  m["outputs"] = {"density.csv", "manifest.json"};
  write_json(dir / "manifest.json", m);
  return kExitOk;
}

struct CompareOptions {
  std::string out_dir = "run";
  std::vector<std::string> schemes = {"naive", "adaptive"};
  std::vector<std::string> tds = {"vr-lstd", "lstd"};
  std::vector<double> t_values;
  int log_every = 0;
};

std::string cell_name(double v) {
  std::ostringstream s;
  s << v;
  return s.str();
}

int cmd_compare(const std::vector<Setting>& file, const std::vector<Setting>& flags,
                const CompareOptions& opts) {
  const auto start = std::chrono::steady_clock::now();
  const fs::path dir = opts.out_dir;
  ensure_dir(dir);

  struct Cell {
    std::string name;
    std::vector<Setting> extra;
    train::TrainConfig cfg;
  };
  std::vector<Cell> cells;
  const bool sweep = !opts.t_values.empty();
  if (sweep) {
    for (double t : opts.t_values) {
      Cell c;
      c.name = "T" + cell_name(t);
      c.extra = {{"T", fmt(t), "--T-values"}};
      cells.push_back(c);
    }
  } else {
    for (const auto& s : opts.schemes) {
      for (const auto& t : opts.tds) {
        Cell c;
        c.name = s + "_" + t;
        c.extra = {{"scheme", s, "--schemes"}, {"td", t, "--tds"}};
        cells.push_back(c);
      }
    }
  }
  if (cells.empty()) throw UsageError("compare: empty grid");
  // Resolve every cell before running any, so a bad value fails fast.
  for (auto& c : cells) {
    std::vector<Setting> merged;
    for (const auto& s : flags) {
      const bool overridden = std::any_of(c.extra.begin(), c.extra.end(),
                                          [&](const Setting& e) { return e.key == s.key; });
      if (!overridden) merged.push_back(s);
    }
    merged.insert(merged.end(), c.extra.begin(), c.extra.end());
    c.cfg = resolve_config(file, merged);
  }

  const fs::path csv_path = dir / "compare.csv";
  std::ofstream csv(csv_path);
  if (!csv) throw std::runtime_error("cannot write '" + csv_path.string() + "'");
  csv << (sweep ? "T,N,err_v,err_u,status\n" : "scheme,td,err_v,err_u,status\n");

  int code = kExitOk;
  json rows = json::array();
  for (const auto& c : cells) {
    TrainOptions topts;
    topts.log_every = opts.log_every;
    std::cerr << "cell " << c.name << '\n';
    const RunResult r = train_into(c.cfg, dir / "cells" / c.name, topts, "compare");
    auto field = [](double v) { return std::isnan(v) ? std::string() : fmt(v); };
    if (sweep) {
      csv << fmt(c.cfg.scheme.T) << ',' << c.cfg.scheme.N;
    } else {
      csv << sim::to_string(c.cfg.scheme.scheme) << ',' << train::td_name(c.cfg.td);
    }
    csv << ',' << field(r.errors.err_v) << ',' << field(r.errors.err_u) << ',' << r.status << '\n';
    csv.flush();
    rows.push_back({{"cell", c.name}, {"status", r.status}, {"err_v", num(r.errors.err_v)},
                    {"err_u", num(r.errors.err_u)}});
    if (r.code != kExitOk && code == kExitOk) code = r.code;
  }

  json m;
  m["command"] = "compare";
  m["version"] = HJBAC_VERSION;
  m["status"] = code == kExitOk ? "completed" : "partial";
  m["failure_reason"] = code == kExitOk ? json(nullptr) : json("one or more cells did not complete");
  m["seed"] = cells.front().cfg.seed;
  m["started_utc"] = now_utc();
  m["wall_clock_seconds"] =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  m["mode"] = sweep ? "T-sweep" : "scheme-td";
  m["cells"] = rows;
  m["outputs"] = {"compare.csv", "manifest.json", "cells/"};
  write_json(dir / "manifest.json", m);
  return code;
}

}  // namespace

int run(int argc, const char* const* argv) {
  CLI::App app{"Actor-critic solver for static HJB equations"};
  app.require_subcommand(1);
  app.set_version_flag("--version", HJBAC_VERSION);

  // train
  auto* train_cmd = app.add_subcommand("train", "Train value and control networks");
  SettingFlags train_flags;
  train_flags.attach(*train_cmd, setting_keys());
  TrainOptions topts;
  train_cmd->add_option("--config", topts.config, "Config file (key = value)");
  train_cmd->add_option("--out-dir", topts.out_dir, "Output directory")->capture_default_str();
  train_cmd->add_option("--resume", topts.resume, "Continue from a checkpoint of the same configuration");
  train_cmd->add_flag("--debug-dump-traj", topts.dump, "Write trajectories.csv under the final control");
  train_cmd->add_option("--log-every", topts.log_every, "Progress line every n iterations (stderr)");

  // density
  auto* density_cmd = app.add_subcommand("density", "Histogram of exact and learned V(X), X uniform");
  SettingFlags density_flags;
  density_flags.attach(*density_cmd, setting_keys());
  DensityOptions dopts;
  std::string density_config;
  density_cmd->add_option("--checkpoint", dopts.checkpoint, "Checkpoint or network file")->required();
  density_cmd->add_option("--samples", dopts.samples, "Number of uniform points")->capture_default_str();
  density_cmd->add_option("--bins", dopts.bins, "Histogram bins")->capture_default_str()->check(
      CLI::PositiveNumber);
  density_cmd->add_option("--config", density_config, "Config file (key = value)");
  density_cmd->add_option("--out-dir", dopts.out_dir, "Output directory")->capture_default_str();

  // compare
  auto* compare_cmd = app.add_subcommand("compare", "Scheme x TD grid or T sweep");
  SettingFlags compare_flags;
  compare_flags.attach(*compare_cmd, setting_keys());
  CompareOptions copts;
  std::string compare_config;
  compare_cmd->add_option("--config", compare_config, "Config file (key = value)");
  compare_cmd->add_option("--out-dir", copts.out_dir, "Output directory")->capture_default_str();
  compare_cmd->add_option("--schemes", copts.schemes, "Schemes in the grid")->delimiter(',');
  compare_cmd->add_option("--tds", copts.tds, "TD variants in the grid")->delimiter(',');
  compare_cmd->add_option("--T-values", copts.t_values, "Horizons for a T sweep (N fixed)")->delimiter(',');
  compare_cmd->add_option("--log-every", copts.log_every, "Progress line every n iterations (stderr)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? kExitOk : kExitUsage;
  }

  try {
    if (*train_cmd) {
      std::vector<Setting> file;
      const auto flags = collect(topts.config, train_flags, &file);
      const train::TrainConfig cfg = resolve_config(file, flags);
      return cmd_train(cfg, topts);
    }
    if (*density_cmd) {
      std::vector<Setting> file;
      const auto flags = collect(density_config, density_flags, &file);
      const train::TrainConfig cfg = resolve_config(file, flags);
      return cmd_density(cfg, dopts);
    }
    std::vector<Setting> file;
    const auto flags = collect(compare_config, compare_flags, &file);
    return cmd_compare(file, flags, copts);
  } catch (const UsageError& e) {
    std::cerr << "usage error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitError;
  }
}

}  // namespace hjbac::cli
