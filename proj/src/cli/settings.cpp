#include "hjbac/cli/settings.hpp"

#include <algorithm>
#include <charconv>
#include <fstream>
#include <set>
#include <sstream>

namespace hjbac::cli {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

std::string normalize_key(std::string k) {
  std::replace(k.begin(), k.end(), '-', '_');
  return k;
}

[[noreturn]] void bad_value(const Setting& s, const std::string& expect) {
  throw UsageError(s.origin + ": bad value '" + s.value + "' for " + s.key + " (expected " + expect + ")");
}

double to_double(const Setting& s) {
  double v = 0.0;
  const char* b = s.value.data();
  const char* e = b + s.value.size();
  auto [p, ec] = std::from_chars(b, e, v);
  if (ec != std::errc() || p != e) bad_value(s, "a number");
  return v;
}

long long to_int(const Setting& s) {
  long long v = 0;
  const char* b = s.value.data();
  const char* e = b + s.value.size();
  auto [p, ec] = std::from_chars(b, e, v);
  if (ec != std::errc() || p != e) bad_value(s, "an integer");
  return v;
}

int to_count(const Setting& s) {
  const long long v = to_int(s);
  if (v < 0 || v > 100000000) bad_value(s, "a non-negative integer");
  return static_cast<int>(v);
}

bool to_switch(const Setting& s) {
  if (s.value == "on" || s.value == "true" || s.value == "1") return true;
  if (s.value == "off" || s.value == "false" || s.value == "0") return false;
  bad_value(s, "on or off");
}

}  // namespace

std::vector<Setting> parse_config_text(const std::string& text, const std::string& name) {
  std::vector<Setting> out;
  std::set<std::string> seen;
  std::istringstream in(text);
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const std::string where = name + ":" + std::to_string(lineno);
    const std::string t = trim(line);
    if (t.empty() || t[0] == '#' || t[0] == ';') continue;
    if (t.front() == '[') {
      if (t.back() != ']' || t.size() < 3) throw UsageError(where + ": malformed section header");
      continue;
    }
    const auto eq = t.find('=');
    if (eq == std::string::npos) throw UsageError(where + ": expected 'key = value'");
    Setting s;
    s.key = normalize_key(trim(t.substr(0, eq)));
    s.value = trim(t.substr(eq + 1));
    s.origin = where;
    if (s.key.empty()) throw UsageError(where + ": empty key");
    if (!seen.insert(s.key).second) throw UsageError(where + ": duplicate key '" + s.key + "'");
    out.push_back(std::move(s));
  }
  return out;
}

std::vector<Setting> parse_config_file(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw UsageError("cannot read config file '" + path + "'");
  std::ostringstream ss;
  ss << f.rdbuf();
  return parse_config_text(ss.str(), path);
}

const std::vector<std::string>& setting_keys() {
  static const std::vector<std::string> keys = {
      "problem", "dim", "scheme", "td", "T", "N", "batch", "eta", "seed",
      "iters_stage1", "iters_stage2", "iters_stage3", "lr1", "lr2", "lr3",
      "grad_through_h", "width", "depth", "eval_every", "chunk", "validation_size",
      "min_step_factor", "step_cap_factor", "control_penalty",
      "p", "q", "beta", "gamma", "radius", "a", "vdp_eps", "a2", "a3", "nc_eps", "u_max"};
  return keys;
}

void apply_setting(train::TrainConfig& cfg, const Setting& s) {
  const std::string& k = s.key;
  auto& pc = cfg.problem;
  if (k == "problem") {
    if (s.value != "lqr" && s.value != "vdp" && s.value != "eikonal" && s.value != "nclqr") {
      bad_value(s, "lqr, vdp, eikonal or nclqr");
    }
    pc.id = s.value;
  } else if (k == "dim") {
    const int d = to_count(s);
    if (d < 1) bad_value(s, "a positive integer");
    pc.dim = d;
  } else if (k == "scheme") {
    if (s.value == "naive") {
      cfg.scheme.scheme = sim::Scheme::Naive;
    } else if (s.value == "adaptive") {
      cfg.scheme.scheme = sim::Scheme::Adaptive;
    } else {
      bad_value(s, "naive or adaptive");
    }
  } else if (k == "td") {
    if (s.value == "vr-lstd") {
      cfg.td = nn::TdVariant::VrLstd;
    } else if (s.value == "lstd") {
      cfg.td = nn::TdVariant::Lstd;
    } else {
      bad_value(s, "vr-lstd or lstd");
    }
  } else if (k == "T") {
    cfg.scheme.T = to_double(s);
  } else if (k == "N") {
    cfg.scheme.N = to_count(s);
  } else if (k == "batch") {
    cfg.batch = to_count(s);
  } else if (k == "eta") {
    cfg.eta = to_double(s);
  } else if (k == "control_penalty") {
    cfg.control_penalty = to_double(s);
  } else if (k == "seed") {
    const long long v = to_int(s);
    if (v < 0) bad_value(s, "a non-negative integer");
    cfg.seed = static_cast<std::uint64_t>(v);
  } else if (k == "iters_stage1") {
    cfg.schedule.stage1 = to_count(s);
  } else if (k == "iters_stage2") {
    cfg.schedule.stage2 = to_count(s);
  } else if (k == "iters_stage3") {
    cfg.schedule.stage3 = to_count(s);
  } else if (k == "lr1") {
    cfg.schedule.lr1 = to_double(s);
  } else if (k == "lr2") {
    cfg.schedule.lr2 = to_double(s);
  } else if (k == "lr3") {
    cfg.schedule.lr3 = to_double(s);
  } else if (k == "grad_through_h") {
    cfg.scheme.grad_through_h = to_switch(s);
  } else if (k == "width") {
    cfg.arch.width = to_count(s);
  } else if (k == "depth") {
    cfg.arch.depth = to_count(s);
  } else if (k == "eval_every") {
    cfg.eval_every = to_count(s);
  } else if (k == "chunk") {
    cfg.chunk = to_count(s);
  } else if (k == "validation_size") {
    cfg.validation_size = to_count(s);
  } else if (k == "min_step_factor") {
    cfg.scheme.min_step_factor = to_double(s);
  } else if (k == "step_cap_factor") {
    cfg.scheme.step_cap_factor = to_count(s);
  } else if (k == "p") {
    pc.p = to_double(s);
  } else if (k == "q") {
    pc.q = to_double(s);
  } else if (k == "beta") {
    pc.beta = to_double(s);
  } else if (k == "gamma") {
    pc.gamma = to_double(s);
  } else if (k == "radius") {
    pc.radius = to_double(s);
  } else if (k == "a") {
    pc.a = to_double(s);
  } else if (k == "vdp_eps") {
    pc.vdp_eps = to_double(s);
  } else if (k == "a2") {
    pc.a2 = to_double(s);
  } else if (k == "a3") {
    pc.a3 = to_double(s);
  } else if (k == "nc_eps") {
    pc.nc_eps = to_double(s);
  } else if (k == "u_max") {
    pc.u_max = to_double(s);
  } else {
    throw UsageError(s.origin + ": unknown key '" + k + "'");
  }
}

train::TrainConfig resolve_config(const std::vector<Setting>& file_settings,
                                  const std::vector<Setting>& flag_settings) {
  // Problem and dimension pick the defaults, so find them first.
  std::string problem;
  int dim = 0;
  auto scan = [&](const std::vector<Setting>& list) {
    for (const Setting& s : list) {
      train::TrainConfig probe;
      if (s.key == "problem" || s.key == "dim") apply_setting(probe, s);
      if (s.key == "problem") problem = probe.problem.id;
      if (s.key == "dim") dim = probe.problem.dim;
    }
  };
  scan(file_settings);
  scan(flag_settings);
  if (problem.empty()) throw UsageError("missing required setting: problem");
  if (dim == 0) throw UsageError("missing required setting: dim");

  train::TrainConfig cfg = train::TrainConfig::defaults_for(problem, dim);
  for (const Setting& s : file_settings) apply_setting(cfg, s);
  for (const Setting& s : flag_settings) apply_setting(cfg, s);
  try {
    cfg.validate();
  } catch (const std::invalid_argument& e) {
    throw UsageError(e.what());
  }
  return cfg;
}

}  // namespace hjbac::cli
