#include <doctest.h>

#include <cstdlib>
#include <fstream>
#include <sstream>
#include <string>

#include <nlohmann/json.hpp>

#include "support.hpp"

namespace {

int run_cli(const std::string& args, const std::filesystem::path& log) {
  const std::string cmd = std::string("\"") + YOPINN_CLI_PATH + "\" " + args + " > \"" +
                          log.string() + "\" 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

std::string slurp(const std::filesystem::path& p) {
  std::ifstream is(p);
  std::stringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

void write_tiny_config(const std::filesystem::path& p, const std::string& extra) {
  std::ofstream os(p);
  os << R"({"domain": {"nx": 41, "nt": 21}, "n_q": 30, "n_f": 60, "hidden_layers": 2,
            "width": 6, "schedule": {"adam_iters": 10, "lbfgs_iters": 5},
            "checkpoint_every": 0, "export_stride": {"x": 4, "t": 4})"
     << extra << "}";
}

}  // namespace

using yopinn::testing::scratch_dir;

TEST_CASE("verify and selftest succeed") {
  const auto dir = scratch_dir("cli-verify");
  CHECK(run_cli("verify --export \"" + dir.string() + "\"", dir / "log.txt") == 0);
  CHECK(std::filesystem::exists(dir / "exact_bright.csv"));
  CHECK(std::filesystem::exists(dir / "exact_dark.csv"));
  CHECK(slurp(dir / "log.txt").find("FAIL") == std::string::npos);
  CHECK(run_cli("selftest", dir / "self.txt") == 0);
  CHECK(slurp(dir / "self.txt").find("PASS") != std::string::npos);
}

TEST_CASE("print-config resolves presets and flags") {
  const auto dir = scratch_dir("cli-print");
  CHECK(run_cli("inverse --scale full --seed 9 --alpha 0.01 --noise 0.02 --print-config",
                dir / "out.json") == 0);
  const auto j = nlohmann::json::parse(slurp(dir / "out.json"));
  CHECK(j.at("kind") == "inverse");
  CHECK(j.at("seed") == 9);
  CHECK(j.at("alpha") == 0.01);
  CHECK(j.at("noise") == 0.02);
  CHECK(j.at("n_q") == 2000);

  CHECK(run_cli("forward --kind dark --print-config", dir / "dark.json") == 0);
  CHECK(nlohmann::json::parse(slurp(dir / "dark.json")).at("kind") == "forward-dark");
}

TEST_CASE("a tiny forward run from a config file") {
  const auto dir = scratch_dir("cli-forward");
  write_tiny_config(dir / "c.json", "");
  const auto out = dir / "run";
  CHECK(run_cli("forward --config \"" + (dir / "c.json").string() + "\" --no-targets --out \"" +
                    out.string() + "\"",
                dir / "log.txt") == 0);
  REQUIRE(std::filesystem::exists(out / "run.json"));
  std::ifstream is(out / "run.json");
  const auto j = nlohmann::json::parse(is);
  CHECK(j.at("iterations") == 15);
  CHECK(std::filesystem::exists(out / "trace.csv"));
}

TEST_CASE("an unmet target exits 1") {
  const auto dir = scratch_dir("cli-target");
  write_tiny_config(dir / "c.json", R"(, "targets": {"max_error_S": 1e-12})");
  CHECK(run_cli("forward --config \"" + (dir / "c.json").string() + "\" --out \"" +
                    (dir / "run").string() + "\"",
                dir / "log.txt") == 1);
  CHECK(slurp(dir / "log.txt").find("FAIL") != std::string::npos);
}

TEST_CASE("a tiny sweep writes its table") {
  const auto dir = scratch_dir("cli-sweep");
  write_tiny_config(dir / "c.json", "");
  CHECK(run_cli("sweep --config \"" + (dir / "c.json").string() +
                    "\" --alphas 0,1e-2 --noises 0 --out \"" + dir.string() + "\"",
                dir / "log.txt") == 0);
  std::ifstream is(dir / "sweep.csv");
  int rows = 0;
  for (std::string line; std::getline(is, line);) ++rows;
  CHECK(rows == 3);
}

TEST_CASE("usage errors exit 2") {
  const auto dir = scratch_dir("cli-usage");
  CHECK(run_cli("forward --preset no-such-preset", dir / "a.txt") == 2);
  CHECK(run_cli("forward --kind purple", dir / "b.txt") == 2);
  CHECK(run_cli("nonsense", dir / "c.txt") == 2);
  CHECK(run_cli("forward --config \"" + (dir / "missing.json").string() + "\"", dir / "d.txt") != 0);
}
