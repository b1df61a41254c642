#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "hjbac/cli/app.hpp"
#include "hjbac/cli/outputs.hpp"
#include "hjbac/cli/settings.hpp"

using namespace hjbac;
using namespace hjbac::cli;
namespace fs = std::filesystem;

namespace {

int call(std::vector<std::string> args) {
  args.insert(args.begin(), "hjbac");
  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  return run(static_cast<int>(argv.size()), argv.data());
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p);
  std::stringstream s;
  s << in.rdbuf();
  return s.str();
}

std::vector<std::string> lines(const std::string& text) {
  std::vector<std::string> out;
  std::istringstream in(text);
  for (std::string l; std::getline(in, l);) out.push_back(l);
  return out;
}

fs::path fresh_dir(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / name;
  fs::remove_all(p);
  return p;
}

const std::vector<std::string> kTiny = {"--problem", "lqr", "--dim", "2", "--batch", "8", "--width", "4",
                                        "--depth", "1", "--N", "5", "--T", "0.1", "--iters-stage1", "3",
                                        "--iters-stage2", "1", "--iters-stage3", "1", "--eval-every", "2",
                                        "--validation-size", "32"};

}  // namespace

TEST_CASE("config text parsing") {
  const auto s = parse_config_text("# comment\n[problem]\nproblem = vdp\n dim= 4 \n\n; other\nT = 0.4\n", "cfg");
  REQUIRE(s.size() == 3);
  CHECK(s[0].key == "problem");
  CHECK(s[1].value == "4");
  CHECK(s[1].origin == "cfg:4");
  CHECK(s[2].key == "T");
  CHECK_THROWS_AS(parse_config_text("dim = 2\ndim = 3\n", "cfg"), UsageError);
  CHECK_THROWS_AS(parse_config_text("just words\n", "cfg"), UsageError);
  CHECK_THROWS_AS(parse_config_file("/nonexistent/hjbac.cfg"), UsageError);
}

TEST_CASE("flags override the file and defaults follow the dimension") {
  const auto file = parse_config_text("problem = vdp\ndim = 12\nbatch = 64\neta = 2\n", "f");
  const std::vector<Setting> flags = {{"batch", "32", "--batch"}, {"scheme", "naive", "--scheme"}};
  const auto c = resolve_config(file, flags);
  CHECK(c.problem.id == "vdp");
  CHECK(c.problem.dim == 12);
  CHECK(c.batch == 32);
  CHECK(c.eta == 2.0);
  CHECK(c.scheme.scheme == sim::Scheme::Naive);
  CHECK(c.scheme.N == 100);
  CHECK(c.arch.depth == 3);

  train::TrainConfig t;
  CHECK_THROWS_AS(apply_setting(t, {"nope", "1", "x"}), UsageError);
  CHECK_THROWS_AS(apply_setting(t, {"dim", "two", "x"}), UsageError);
  CHECK_THROWS_AS(apply_setting(t, {"problem", "heat", "x"}), UsageError);
  CHECK_THROWS_AS(apply_setting(t, {"td", "td0", "x"}), UsageError);
  for (const auto& k : setting_keys()) CHECK_FALSE(k.empty());
}

TEST_CASE("curve rows leave unmeasured fields empty") {
  std::ostringstream out;
  write_curve_header(out);
  train::MetricsRecord r;
  r.iter = 4;
  r.critic_loss = 0.5;
  write_curve_row(out, r);
  const auto ls = lines(out.str());
  REQUIRE(ls.size() == 2);
  CHECK(ls[0] == "iter,err_v,err_u,critic_loss,boundary_loss,actor_loss,truncation_rate");
  CHECK(ls[1] == "4,,,0.5,,,");
  CHECK(fmt(0.1) == "0.10000000000000001");
}

TEST_CASE("density histogram integrates to one") {
  Eigen::VectorXd a(5), b(4);
  a << 0.0, 0.1, 0.2, 0.9, 1.0;
  b << 0.5, 0.5, 0.5, 0.5;
  const DensityTable t = density_histogram(a, b, 10);
  CHECK(t.bin_width == doctest::Approx(0.1));
  CHECK(t.centers[0] == doctest::Approx(0.05));
  CHECK(t.first.sum() * t.bin_width == doctest::Approx(1.0));
  CHECK(t.second.sum() * t.bin_width == doctest::Approx(1.0));
  CHECK(t.second[5] == doctest::Approx(10.0));
  CHECK(t.first[9] == doctest::Approx(2.0 / 5.0 / 0.1));

  Eigen::VectorXd c = Eigen::VectorXd::Constant(3, 2.0);
  const DensityTable flat = density_histogram(c, c, 4);
  CHECK(flat.bin_width == doctest::Approx(0.25));
  CHECK(flat.first.sum() * flat.bin_width == doctest::Approx(1.0));
}

TEST_CASE("usage errors and help exit codes") {
  CHECK(call({"--help"}) == kExitOk);
  CHECK(call({"train", "--help"}) == kExitOk);
  CHECK(call({}) == kExitUsage);
  CHECK(call({"train", "--bogus"}) == kExitUsage);
  CHECK(call({"train", "--dim", "abc", "--out-dir", fresh_dir("hjbac_cli_bad").string()}) == kExitUsage);
  CHECK(call({"train", "--config", "/nonexistent/x.cfg"}) == kExitUsage);
  CHECK(call({"density"}) == kExitUsage);
}

TEST_CASE("train, density and compare write their outputs") {
  const fs::path dir = fresh_dir("hjbac_cli_train");
  auto args = kTiny;
  args.insert(args.begin(), "train");
  args.insert(args.end(), {"--out-dir", dir.string(), "--debug-dump-traj"});
  REQUIRE(call(args) == kExitOk);

  const auto curve = lines(slurp(dir / "training_curve.csv"));
  REQUIRE(curve.size() == 1 + 6);
  CHECK(curve[1].rfind("0,", 0) == 0);
  CHECK(fs::exists(dir / "checkpoint.bin"));
  CHECK(lines(slurp(dir / "trajectories.csv")).size() > 16);
  const auto manifest = nlohmann::json::parse(slurp(dir / "manifest.json"));
  CHECK(manifest["status"] == "completed");
  CHECK(manifest["iterations"] == 5);
  CHECK(manifest["seed"] == 1);

  // Same settings again reproduce the curve byte for byte.
  const fs::path again = fresh_dir("hjbac_cli_train2");
  args[args.size() - 2] = again.string();
  REQUIRE(call(args) == kExitOk);
  CHECK(slurp(again / "training_curve.csv") == slurp(dir / "training_curve.csv"));

  const fs::path dens = fresh_dir("hjbac_cli_density");
  auto dargs = std::vector<std::string>{"density", "--checkpoint", (dir / "checkpoint.bin").string(),
                                        "--samples", "2000", "--bins", "20", "--out-dir", dens.string(),
                                        "--problem", "lqr", "--dim", "2"};
  REQUIRE(call(dargs) == kExitOk);
  const auto rows = lines(slurp(dens / "density.csv"));
  REQUIRE(rows.size() == 21);
  CHECK(rows[0] == "bin_center,true_density,learned_density");
  dargs.back() = "3";
  CHECK(call(dargs) != kExitOk);

  const fs::path cmp = fresh_dir("hjbac_cli_compare");
  auto cargs = kTiny;
  cargs.insert(cargs.begin(), "compare");
  cargs.insert(cargs.end(), {"--schemes", "naive,adaptive", "--tds", "lstd", "--out-dir", cmp.string()});
  REQUIRE(call(cargs) == kExitOk);
  const auto grid = lines(slurp(cmp / "compare.csv"));
  REQUIRE(grid.size() == 3);
  CHECK(grid[0] == "scheme,td,err_v,err_u,status");
  CHECK(grid[1].rfind("naive,lstd,", 0) == 0);
}

TEST_CASE("resume continues the same run") {
  const fs::path a = fresh_dir("hjbac_cli_resume_a");
  const fs::path b = fresh_dir("hjbac_cli_resume_b");
  auto full = kTiny;
  full.insert(full.begin(), "train");
  full.insert(full.end(), {"--out-dir", a.string()});
  REQUIRE(call(full) == kExitOk);

  // A finished checkpoint resumes with nothing left to do.
  auto resume = kTiny;
  resume.insert(resume.begin(), "train");
  resume.insert(resume.end(), {"--out-dir", b.string(), "--resume", (a / "checkpoint.bin").string()});
  REQUIRE(call(resume) == kExitOk);
  const auto na = read_networks_any((a / "checkpoint.bin").string());
  const auto nb = read_networks_any((b / "checkpoint.bin").string());
  CHECK((na.control.params().values().array() == nb.control.params().values().array()).all());

  auto mismatched = resume;
  mismatched[mismatched.size() - 3] = fresh_dir("hjbac_cli_resume_c").string();
  mismatched.insert(mismatched.end(), {"--eta", "5"});
  CHECK(call(mismatched) != kExitOk);
}
