#include <doctest.h>

#include <cmath>
#include <fstream>

#include <nlohmann/json.hpp>

#include "support.hpp"
#include "yopinn/experiment.hpp"

using namespace yopinn;
using namespace yopinn::experiment;

namespace {

ExperimentConfig tiny(Kind kind) {
  ExperimentConfig c = preset(kind == Kind::Inverse ? "inverse-desk" : "forward-bright-desk");
  c.kind = kind;
  c.domain.nx = 41;
  c.domain.nt = 21;
  c.n_q = 30;
  c.n_f = 60;
  c.arch = net::Architecture::uniform(2, 6);
  c.schedule = {15, 10};
  c.checkpoint_every = 0;
  c.export_stride_x = 4;
  c.export_stride_t = 4;
  c.targets = {};
  return c;
}

std::vector<std::string> lines_of(const std::filesystem::path& p) {
  std::ifstream is(p);
  std::vector<std::string> out;
  for (std::string line; std::getline(is, line);) out.push_back(line);
  return out;
}

}  // namespace

TEST_CASE("relative L2 error") {
  const std::vector<double> exact{3.0, 4.0}, pred{3.0, 3.0};
  CHECK(relative_l2_error(pred, exact) == doctest::Approx(0.2).epsilon(1e-15));
  CHECK(relative_l2_error(exact, exact) == 0.0);
  CHECK_THROWS_AS(relative_l2_error(pred, std::vector<double>{0.0, 0.0}), std::domain_error);
  CHECK_THROWS(relative_l2_error(pred, std::vector<double>{1.0}));

  // complex modulus over (u, v)
  const std::vector<double> eu{1.0, 0.0}, ev{0.0, 1.0}, pu{1.0, 0.0}, pv{0.0, 0.0};
  CHECK(relative_l2_error(pu, pv, eu, ev) == doctest::Approx(std::sqrt(0.5)).epsilon(1e-15));
}

TEST_CASE("parameter relative error in percent") {
  CHECK(parameter_relative_error(0.4984611, 0.5) == doctest::Approx(0.30778).epsilon(1e-4));
  CHECK(parameter_relative_error(1.00985, 1.0) == doctest::Approx(0.985).epsilon(1e-6));
  CHECK(parameter_relative_error(-0.5, -0.5) == 0.0);
  CHECK_THROWS_AS(parameter_relative_error(0.1, 0.0), std::domain_error);
}

TEST_CASE("presets") {
  const auto names = preset_names();
  CHECK(names.size() == 8);
  for (const auto& n : names) CHECK_NOTHROW(preset(n).validate());
  CHECK_THROWS_AS(preset("forward-purple"), std::invalid_argument);

  const auto b = preset("forward-bright");
  CHECK(b.domain.t_lo == -2.0);
  CHECK(b.n_q == 1000);
  CHECK(b.n_f == 20000);
  CHECK(b.arch.hidden_layers() == 9);
  CHECK(b.arch.widths[1] == 40);
  CHECK(b.schedule.adam_iters == 20000);
  CHECK(b.schedule.lbfgs_iters == 50000);
  CHECK(b.alpha == 1e-4);

  const auto d = preset("forward-dark");
  CHECK(d.domain.t_hi == 3.0);
  CHECK(d.n_f == 30000);
  CHECK(d.slice_times.size() == 5);

  const auto inv = preset("inverse");
  CHECK(inv.domain.t_lo == -0.5);
  CHECK(inv.domain.t_hi == 0.5);
  CHECK(inv.n_q == 2000);
  CHECK_FALSE(inv.is_forward());

  const auto desk = preset("forward-bright-desk");
  CHECK(desk.arch.hidden_layers() == 4);
  CHECK(desk.n_q == 600);
  CHECK(desk.n_f == 5000);
  CHECK(*desk.targets.max_error_S == 5e-2);
  CHECK(*desk.targets.max_error_L == 1e-1);
  const auto idesk = preset("inverse-desk");
  CHECK(idesk.arch.widths[1] == 20);
  CHECK(*idesk.targets.max_re_lambda1 == 5.0);
  CHECK(*idesk.targets.max_re_lambda2 == 10.0);
}

TEST_CASE("config validation") {
  auto c = preset("forward-bright");
  c.noise = 0.01;
  CHECK_THROWS_AS(c.validate(), std::invalid_argument);
  c = preset("inverse");
  c.scale_n = 1.0;
  CHECK_THROWS_AS(c.validate(), std::invalid_argument);
  c = preset("inverse");
  c.alpha = -1.0;
  CHECK_THROWS_AS(c.validate(), std::invalid_argument);
  CHECK(kind_from_string(to_string(Kind::ForwardDark)) == Kind::ForwardDark);
  CHECK_THROWS_AS(kind_from_string("sideways"), std::invalid_argument);
}

TEST_CASE("config JSON round trip, overlay and strictness") {
  auto c = preset("inverse-desk");
  c.seed = 77;
  c.alpha = 3e-3;
  c.noise = 0.02;
  const auto j = to_json(c);
  const auto back = config_from_json(j, preset("forward-bright"));
  CHECK(to_json(back) == j);

  const auto over = config_from_json(nlohmann::json::parse(R"({"preset": "inverse", "seed": 5,
      "hidden_layers": 3, "width": 12, "adam": {"lr": 0.01}, "targets": {"max_re_lambda1": null}})"),
                                     preset("forward-dark"));
  CHECK(over.kind == Kind::Inverse);
  CHECK(over.seed == 5);
  CHECK(over.n_q == 2000);
  CHECK(over.arch.hidden_layers() == 3);
  CHECK(over.arch.widths[2] == 12);
  CHECK(over.adam.lr == 0.01);
  CHECK(over.adam.beta1 == 0.9);
  CHECK_FALSE(over.targets.max_re_lambda1.has_value());

  CHECK_THROWS_AS(config_from_json(nlohmann::json::parse(R"({"sede": 1})"), c), std::invalid_argument);
  CHECK_THROWS_AS(config_from_json(nlohmann::json::parse(R"({"adam": {"rate": 1}})"), c),
                  std::invalid_argument);

  const auto dir = testing::scratch_dir("experiment-config");
  {
    std::ofstream os(dir / "c.json");
    os << R"({"preset": "forward-intermediate-desk", "alpha": 0})";
  }
  const auto loaded = load_config(dir / "c.json", preset("inverse"));
  CHECK(loaded.kind == Kind::ForwardIntermediate);
  CHECK(loaded.alpha == 0.0);
  CHECK_THROWS(load_config(dir / "missing.json", c));
}

TEST_CASE("forward run writes every artifact and is reproducible") {
  const auto c = tiny(Kind::ForwardBright);
  const auto root = testing::scratch_dir("experiment-forward");
  const auto r = run_forward(c, root / "a");
  CHECK(r.ok);
  CHECK(r.iterations == 25);
  CHECK(std::isfinite(r.error_S));
  CHECK(r.error_S > 0.0);
  CHECK(r.lambda1 == 0.5);
  for (const auto& p : {r.trace_path, r.fields_path, r.params_path, r.dir / "run.json"}) {
    CHECK(std::filesystem::exists(p));
  }
  REQUIRE(r.slice_paths.size() == c.slice_times.size());
  const auto slice = lines_of(r.slice_paths[0]);
  CHECK(slice.front() == "x,t,u_exact,v_exact,L_exact,S_exact,u_pred,v_pred,L_pred,S_pred");
  CHECK(slice.size() == 1 + 41);
  const auto fields = lines_of(r.fields_path);
  CHECK(fields.size() == 1 + 11 * 6);
  CHECK(lines_of(r.trace_path).size() == 1 + 25);

  std::ifstream is(r.dir / "run.json");
  const auto j = nlohmann::json::parse(is);
  CHECK(j.at("format") == "yopinn-run");
  CHECK(j.at("error_S").get<double>() == r.error_S);

  const auto again = run_forward(c, root / "b");
  CHECK(again.error_S == r.error_S);
  CHECK(again.final_loss.total == r.final_loss.total);
  std::ifstream pa(r.params_path), pb(again.params_path);
  CHECK(nlohmann::json::parse(pa) == nlohmann::json::parse(pb));

  CHECK_THROWS_AS(run_inverse(c, root / "c"), std::invalid_argument);
}

TEST_CASE("targets are checked") {
  RunRecord r;
  r.ok = true;
  r.config = tiny(Kind::ForwardBright);
  r.error_S = 0.2;
  r.error_L = 0.01;
  CHECK(r.check_targets().empty());
  r.config.targets.max_error_S = 0.1;
  r.config.targets.max_error_L = 0.1;
  const auto fails = r.check_targets();
  REQUIRE(fails.size() == 1);
  CHECK(fails[0].find("error_S") != std::string::npos);
  r.ok = false;
  r.message = "diverged";
  CHECK(r.check_targets().size() == 2);
}

TEST_CASE("sweep: grid layout, shared data, single-cell equivalence") {
  auto base = tiny(Kind::Inverse);
  base.schedule = {10, 5};
  const auto root = testing::scratch_dir("experiment-sweep");
  const std::vector<double> alphas{0.0, 1e-2}, noises{0.0, 0.02};
  const auto cells = run_sweep(alphas, noises, base, root);
  REQUIRE(cells.size() == 4);
  CHECK(cells[0].config.noise == 0.0);
  CHECK(cells[1].config.noise == 0.0);
  CHECK(cells[1].config.alpha == 1e-2);
  CHECK(cells[2].config.noise == 0.02);
  for (const auto& c : cells) CHECK(c.ok);

  const auto grid = data::build_grid(base.rw_params(), base.domain);
  auto c2 = base;
  c2.noise = 0.02;
  c2.alpha = 0.0;
  auto c3 = c2;
  c3.alpha = 1e-2;
  CHECK(make_training_set(c2, grid).ib == make_training_set(c3, grid).ib);
  CHECK(make_training_set(c2, grid).ib != make_training_set(base, grid).ib);

  const auto single = run_inverse(c3, root / "single");
  CHECK(single.lambda1 == cells[3].lambda1);
  CHECK(single.lambda2 == cells[3].lambda2);
  CHECK(single.final_loss.total == cells[3].final_loss.total);

  const auto rows = lines_of(root / "sweep.csv");
  REQUIRE(rows.size() == 5);
  CHECK(rows[0] ==
        "noise,alpha,lambda1,lambda2,re_lambda1,re_lambda2,error_S,error_L,total_loss,status,message");
}

TEST_CASE("sweep: a failing cell is recorded, not fatal") {
  auto base = tiny(Kind::Inverse);
  base.schedule = {3, 0};
  const auto root = testing::scratch_dir("experiment-sweep-fail");
  const std::vector<double> alphas{1e-4, -1.0}, noises{0.0};
  const auto cells = run_sweep(alphas, noises, base, root);
  REQUIRE(cells.size() == 2);
  CHECK(cells[0].ok);
  CHECK_FALSE(cells[1].ok);
  CHECK_FALSE(cells[1].message.empty());
  CHECK(std::isnan(cells[1].lambda1));
  CHECK(lines_of(root / "sweep.csv").size() == 3);
}

TEST_CASE("output directory honours the environment") {
  ::setenv("YOPINN_OUTPUT_DIR", "/tmp/somewhere", 1);
  CHECK(default_output_dir() == std::filesystem::path("/tmp/somewhere"));
  ::unsetenv("YOPINN_OUTPUT_DIR");
  CHECK(default_output_dir() == std::filesystem::path("yopinn-runs"));
}
