// yopinn: command-line front end.
//
//   yopinn forward  [--kind bright|intermediate|dark] [--scale desk|full] ...
//   yopinn inverse  [--scale desk|full] [--noise 0.02] ...
//   yopinn sweep    --alphas 0,1e-4,1e-3,1e-2 --noises 0,0.01,0.02,0.03
//   yopinn verify   [--export DIR]
//   yopinn selftest
//
// Exit status: 0 when every assertion of the mode passes, 1 when one fails,
// 2 on a usage or configuration error.

#include <cstdlib>
#include <filesystem>
#include <iomanip>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "yopinn/checks.hpp"
#include "yopinn/datagen.hpp"
#include "yopinn/exact_yo.hpp"
#include "yopinn/experiment.hpp"

namespace fs = std::filesystem;
namespace ex = yopinn::experiment;

namespace {

struct RunFlags {
  std::string preset;
  std::string kind = "bright";
  std::string scale = "desk";
  std::string config;
  std::string out;
  std::optional<std::uint64_t> seed;
  std::optional<double> alpha;
  std::optional<double> noise;
  std::optional<int> adam;
  std::optional<int> lbfgs;
  std::optional<std::size_t> n_q;
  std::optional<std::size_t> n_f;
  std::optional<int> hidden_layers;
  std::optional<int> width;
  std::optional<int> threads;
  std::optional<std::size_t> chunk;
  std::optional<long> log_every;
  bool no_targets = false;
  bool print_config = false;
};

void add_run_flags(CLI::App* cmd, RunFlags& f, bool forward) {
  cmd->add_option("--preset", f.preset, "Named preset (overrides --kind/--scale)");
  if (forward) {
    cmd->add_option("--kind", f.kind, "Rogue-wave family")
        ->check(CLI::IsMember({"bright", "intermediate", "dark"}));
  }
  cmd->add_option("--scale", f.scale, "desk (minutes) or full (hours)")
      ->check(CLI::IsMember({"desk", "full"}));
  cmd->add_option("--config", f.config, "JSON config overlaid on the preset")
      ->check(CLI::ExistingFile);
  cmd->add_option("--out", f.out, "Run directory (default under $YOPINN_OUTPUT_DIR)");
  cmd->add_option("--seed", f.seed, "Data and initialization seed");
  cmd->add_option("--alpha", f.alpha, "Weight-decay coefficient");
  if (!forward) cmd->add_option("--noise", f.noise, "Relative noise level, e.g. 0.02");
  cmd->add_option("--adam", f.adam, "Adam iterations");
  cmd->add_option("--lbfgs", f.lbfgs, "L-BFGS iterations");
  cmd->add_option("--nq", f.n_q, "Initial/boundary training points");
  cmd->add_option("--nf", f.n_f, "Collocation points");
  cmd->add_option("--hidden-layers", f.hidden_layers, "Hidden layers");
  cmd->add_option("--width", f.width, "Neurons per hidden layer");
  cmd->add_option("--threads", f.threads, "Worker threads for loss evaluation");
  cmd->add_option("--chunk", f.chunk, "Points per tape recording");
  cmd->add_option("--log-every", f.log_every, "Progress line every N iterations (0: quiet)");
  cmd->add_flag("--no-targets", f.no_targets, "Do not check the preset's error targets");
  cmd->add_flag("--print-config", f.print_config, "Print the resolved config and exit");
}

ex::ExperimentConfig resolve(const RunFlags& f, bool forward) {
  std::string name = f.preset;
  if (name.empty()) {
    name = forward ? "forward-" + f.kind : "inverse";
    if (f.scale == "desk") name += "-desk";
  }
  ex::ExperimentConfig c = ex::preset(name);
  if (!f.config.empty()) c = ex::load_config(f.config, c);
  if (f.seed) c.seed = *f.seed;
  if (f.alpha) c.alpha = *f.alpha;
  if (f.noise) c.noise = *f.noise;
  if (f.adam) c.schedule.adam_iters = *f.adam;
  if (f.lbfgs) c.schedule.lbfgs_iters = *f.lbfgs;
  if (f.n_q) c.n_q = *f.n_q;
  if (f.n_f) c.n_f = *f.n_f;
  if (f.hidden_layers || f.width) {
    const int layers = f.hidden_layers.value_or(c.arch.hidden_layers());
    const int width = f.width.value_or(c.arch.widths.at(1));
    c.arch = yopinn::net::Architecture::uniform(layers, width);
  }
  if (f.threads) c.threads = *f.threads;
  if (f.chunk) c.chunk_size = *f.chunk;
  if (f.log_every) c.log_every = *f.log_every;
  if (f.no_targets) c.targets = {};
  if (forward != c.is_forward()) {
    throw std::invalid_argument("config kind '" + ex::to_string(c.kind) +
                                "' does not match the subcommand");
  }
  c.validate();
  return c;
}

fs::path run_dir(const RunFlags& f, const ex::ExperimentConfig& c) {
  if (!f.out.empty()) return f.out;
  return ex::default_output_dir() / (c.name + "-seed" + std::to_string(c.seed));
}

int report(const ex::RunRecord& r) {
  std::cout << std::setprecision(6);
  std::cout << "run       " << r.config.name << " seed " << r.config.seed << " -> "
            << r.dir.string() << '\n';
  std::cout << "status    " << (r.ok ? "ok" : "failed: " + r.message) << '\n';
  std::cout << "loss      " << r.final_loss.total << " after " << r.iterations
            << " iterations (L-BFGS " << r.lbfgs_status << ")\n";
  std::cout << "error_S   " << r.error_S << "\nerror_L   " << r.error_L << '\n';
  if (!r.config.is_forward()) {
    std::cout << "lambda1   " << r.lambda1 << " (RE " << r.re_lambda1 << "%)\n";
    std::cout << "lambda2   " << r.lambda2 << " (RE " << r.re_lambda2 << "%)\n";
  }
  std::cout << "wall      " << r.wall_seconds << " s\n";
  const auto failures = r.check_targets();
  for (const auto& f : failures) std::cout << "FAIL " << f << '\n';
  if (failures.empty()) std::cout << "PASS all targets\n";
  return failures.empty() ? 0 : 1;
}

int cmd_run(const RunFlags& f, bool forward) {
  const ex::ExperimentConfig c = resolve(f, forward);
  if (f.print_config) {
    std::cout << ex::to_json(c).dump(2) << '\n';
    return 0;
  }
  return report(ex::run(c, run_dir(f, c)));
}

std::vector<double> parse_list(const std::string& s) {
  std::vector<double> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) {
    std::size_t used = 0;
    const double v = std::stod(item, &used);
    if (used != item.size()) throw std::invalid_argument("bad number '" + item + "'");
    out.push_back(v);
  }
  if (out.empty()) throw std::invalid_argument("empty list");
  return out;
}

int cmd_sweep(const RunFlags& f, const std::string& alphas_s, const std::string& noises_s) {
  const ex::ExperimentConfig base = resolve(f, false);
  const auto alphas = parse_list(alphas_s);
  const auto noises = parse_list(noises_s);
  const fs::path dir =
      f.out.empty() ? ex::default_output_dir() / (base.name + "-sweep") : fs::path(f.out);
  const auto cells = ex::run_sweep(alphas, noises, base, dir);
  std::cout << std::setprecision(6);
  std::cout << "noise     alpha     RE(l1)%      RE(l2)%      status\n";
  bool ok = true;
  for (const auto& r : cells) {
    std::cout << std::left << std::setw(10) << r.config.noise << std::setw(10) << r.config.alpha
              << std::setw(13) << r.re_lambda1 << std::setw(13) << r.re_lambda2
              << (r.ok ? "ok" : "failed: " + r.message) << '\n';
    ok = ok && r.ok;
  }
  std::cout << "table     " << (dir / "sweep.csv").string() << '\n';
  return ok ? 0 : 1;
}

int cmd_verify(const std::string& export_dir) {
  const auto results = yopinn::checks::exact_solution_suite();
  yopinn::checks::print(std::cout, results);
  if (!export_dir.empty()) {
    fs::create_directories(export_dir);
    yopinn::data::Domain dom;
    dom.nx = 201;
    dom.nt = 81;
    for (const auto& [name, p] : {std::pair{"bright", yopinn::exact::bright_params()},
                                  std::pair{"intermediate", yopinn::exact::intermediate_params()},
                                  std::pair{"dark", yopinn::exact::dark_params()}}) {
      const auto g = yopinn::data::build_grid(p, dom);
      const fs::path path = fs::path(export_dir) / (std::string("exact_") + name + ".csv");
      yopinn::data::write_grid_csv(path, g.xs, g.ts, g.u, g.v, g.L);
      std::cout << "wrote " << path.string() << '\n';
    }
  }
  return yopinn::checks::all_passed(results) ? 0 : 1;
}

int cmd_selftest() {
  const auto results = yopinn::checks::property_suite();
  yopinn::checks::print(std::cout, results);
  return yopinn::checks::all_passed(results) ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"PINN solver for Yajima-Oikawa rogue waves"};
  app.require_subcommand(1);

  RunFlags fwd, inv, swp;
  auto* forward = app.add_subcommand("forward", "Train on initial/boundary data of a rogue wave");
  add_run_flags(forward, fwd, true);
  auto* inverse = app.add_subcommand("inverse", "Recover lambda1, lambda2 from field data");
  add_run_flags(inverse, inv, false);

  std::string alphas = "0,1e-4,1e-3,1e-2";
  std::string noises = "0,0.01,0.02,0.03";
  auto* sweep = app.add_subcommand("sweep", "Inverse runs over an (alpha, noise) grid");
  add_run_flags(sweep, swp, false);
  sweep->add_option("--alphas", alphas, "Comma-separated weight-decay values");
  sweep->add_option("--noises", noises, "Comma-separated noise levels");

  std::string export_dir;
  auto* verify = app.add_subcommand("verify", "Check the closed-form solutions");
  verify->add_option("--export", export_dir, "Also write exact grids as CSV here");
  auto* selftest = app.add_subcommand("selftest", "Run the property suite");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    if (*forward) return cmd_run(fwd, true);
    if (*inverse) return cmd_run(inv, false);
    if (*sweep) return cmd_sweep(swp, alphas, noises);
    if (*verify) return cmd_verify(export_dir);
    if (*selftest) return cmd_selftest();
  } catch (const std::invalid_argument& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 2;
}
