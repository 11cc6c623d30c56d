#include "yopinn/experiment.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <limits>
#include <set>
#include <sstream>
#include <stdexcept>

namespace yopinn::experiment {

namespace fs = std::filesystem;
using nlohmann::json;
using Clock = std::chrono::steady_clock;

std::string to_string(Kind k) {
  switch (k) {
    case Kind::ForwardBright: return "forward-bright";
    case Kind::ForwardIntermediate: return "forward-intermediate";
    case Kind::ForwardDark: return "forward-dark";
    case Kind::Inverse: return "inverse";
  }
  return "unknown";
}

Kind kind_from_string(const std::string& s) {
  for (Kind k : {Kind::ForwardBright, Kind::ForwardIntermediate, Kind::ForwardDark,
                 Kind::Inverse}) {
    if (to_string(k) == s) return k;
  }
  throw std::invalid_argument("unknown experiment kind '" + s + "'");
}

exact::RWParams ExperimentConfig::rw_params() const {
  switch (kind) {
    case Kind::ForwardIntermediate: return exact::intermediate_params();
    case Kind::ForwardDark: return exact::dark_params();
    case Kind::ForwardBright:
    case Kind::Inverse: break;
  }
  return exact::bright_params();
}

void ExperimentConfig::validate() const {
  const auto fail = [&](const std::string& what) {
    throw std::invalid_argument("config '" + name + "': " + what);
  };
  domain.validate();
  arch.validate();
  if (arch.widths.front() != net::kInputs || arch.widths.back() != net::kOutputs) {
    fail("architecture must map 2 inputs to 3 outputs, got " + arch.to_string());
  }
  if (n_q == 0 || n_f == 0) fail("n_q and n_f must be positive");
  if (!std::isfinite(alpha) || alpha < 0.0) fail("alpha must be finite and >= 0");
  if (!std::isfinite(noise) || noise < 0.0) fail("noise must be finite and >= 0");
  if (schedule.adam_iters < 0 || schedule.lbfgs_iters < 0) fail("iteration counts must be >= 0");
  if (N_a <= 0) fail("N_a must be positive");
  if (!(scale_n > 1.0)) fail("scale_n must exceed 1");
  if (chunk_size == 0) fail("chunk_size must be positive");
  if (threads < 1) fail("threads must be >= 1");
  if (checkpoint_every < 0 || log_every < 0) fail("checkpoint_every and log_every must be >= 0");
  if (export_stride_x < 1 || export_stride_t < 1) fail("export strides must be >= 1");
  for (double t : slice_times) {
    if (t < domain.t_lo || t > domain.t_hi) {
      fail("slice time " + std::to_string(t) + " outside the time domain");
    }
  }
  if (kind == Kind::Inverse && (lambda1_true == 0.0 || lambda2_true == 0.0)) {
    fail("true lambdas must be nonzero");
  }
  if (kind != Kind::Inverse && noise > 0.0) fail("noise applies to inverse runs only");
}

// ---------------------------------------------------------------------------
// Presets

namespace {

ExperimentConfig make_forward(Kind kind, const std::string& name) {
  ExperimentConfig c;
  c.name = name;
  c.kind = kind;
  if (kind == Kind::ForwardBright) {
    c.domain.t_lo = -2.0;
    c.domain.t_hi = 2.0;
    c.n_q = 1000;
    c.n_f = 20000;
    c.slice_times = {-1.34, -0.67, 0.0, 0.67, 1.34};
  } else {
    c.domain.t_lo = -3.0;
    c.domain.t_hi = 3.0;
    c.n_q = 2000;
    c.n_f = 30000;
    c.slice_times = {-2.0, -1.0, 0.0, 1.0, 2.0};
  }
  return c;
}

// Reported full-scale errors for S and L, used as 10x targets.
std::pair<double, double> reported_errors(Kind kind) {
  switch (kind) {
    case Kind::ForwardIntermediate: return {1.168852e-3, 6.766132e-3};
    case Kind::ForwardDark: return {1.964839e-3, 1.692152e-2};
    default: break;
  }
  return {4.968430e-4, 1.763312e-3};
}

ExperimentConfig make_inverse(const std::string& name) {
  ExperimentConfig c;
  c.name = name;
  c.kind = Kind::Inverse;
  c.domain.t_lo = -0.5;
  c.domain.t_hi = 0.5;
  c.n_q = 2000;
  c.n_f = 30000;
  c.slice_times = {-0.5, 0.0, 0.5};
  return c;
}

const std::vector<std::string> kPresetNames = {
    "forward-bright",      "forward-intermediate",      "forward-dark",      "inverse",
    "forward-bright-desk", "forward-intermediate-desk", "forward-dark-desk", "inverse-desk",
};

}  // namespace

std::vector<std::string> preset_names() { return kPresetNames; }

ExperimentConfig preset(const std::string& name) {
  const bool desk = name.size() > 5 && name.ends_with("-desk");
  const std::string base = desk ? name.substr(0, name.size() - 5) : name;
  if (std::find(kPresetNames.begin(), kPresetNames.end(), name) == kPresetNames.end()) {
    throw std::invalid_argument("unknown preset '" + name + "'");
  }
  ExperimentConfig c;
  if (base == "inverse") {
    c = make_inverse(name);
    if (desk) {
      c.arch = net::Architecture::uniform(4, 20);
      c.n_q = 800;
      c.n_f = 8000;
      c.schedule = {3000, 3000};
      c.targets.max_re_lambda1 = 5.0;
      c.targets.max_re_lambda2 = 10.0;
    } else {
      c.targets.max_re_lambda1 = 10.0 * 0.307775;
      c.targets.max_re_lambda2 = 10.0 * 0.984997;
    }
    return c;
  }
  c = make_forward(kind_from_string(base), name);
  if (desk) {
    c.arch = net::Architecture::uniform(4, 40);
    c.n_q = 600;
    c.n_f = 5000;
    c.schedule = {3000, 2000};
    c.targets.max_error_S = 5e-2;
    c.targets.max_error_L = 1e-1;
  } else {
    const auto [s, l] = reported_errors(c.kind);
    c.targets.max_error_S = 10.0 * s;
    c.targets.max_error_L = 10.0 * l;
  }
  return c;
}

// ---------------------------------------------------------------------------
// JSON

namespace {

json optional_json(const std::optional<double>& v) { return v ? json(*v) : json(nullptr); }

void read_optional(const json& j, const char* key, std::optional<double>& out) {
  if (!j.contains(key)) return;
  if (j.at(key).is_null()) {
    out.reset();
  } else {
    out = j.at(key).get<double>();
  }
}

template <class T>
void read_if(const json& j, const char* key, T& out) {
  if (j.contains(key)) out = j.at(key).get<T>();
}

void reject_unknown(const json& j, const std::set<std::string>& known, const std::string& where) {
  for (const auto& [key, _] : j.items()) {
    if (!known.count(key)) throw std::invalid_argument("unknown key '" + key + "' in " + where);
  }
}

}  // namespace

json to_json(const ExperimentConfig& c) {
  json j;
  j["name"] = c.name;
  j["kind"] = to_string(c.kind);
  j["domain"] = {{"x_lo", c.domain.x_lo}, {"x_hi", c.domain.x_hi}, {"t_lo", c.domain.t_lo},
                 {"t_hi", c.domain.t_hi}, {"nx", c.domain.nx},     {"nt", c.domain.nt}};
  j["n_q"] = c.n_q;
  j["n_f"] = c.n_f;
  j["alpha"] = c.alpha;
  j["noise"] = c.noise;
  j["schedule"] = {{"adam_iters", c.schedule.adam_iters},
                   {"lbfgs_iters", c.schedule.lbfgs_iters}};
  j["widths"] = c.arch.widths;
  j["seed"] = c.seed;
  j["N_a"] = c.N_a;
  j["scale_n"] = c.scale_n;
  j["adam"] = {{"lr", c.adam.lr}, {"beta1", c.adam.beta1}, {"beta2", c.adam.beta2},
               {"eps", c.adam.eps}};
  j["lbfgs"] = {{"memory", c.lbfgs.memory}, {"c1", c.lbfgs.c1},
                {"c2", c.lbfgs.c2},         {"gtol", c.lbfgs.gtol},
                {"ftol", c.lbfgs.ftol},     {"max_line_search", c.lbfgs.max_line_search}};
  j["chunk_size"] = c.chunk_size;
  j["threads"] = c.threads;
  j["checkpoint_every"] = c.checkpoint_every;
  j["log_every"] = c.log_every;
  j["export_stride"] = {{"x", c.export_stride_x}, {"t", c.export_stride_t}};
  j["slice_times"] = c.slice_times;
  j["lambda1_true"] = c.lambda1_true;
  j["lambda2_true"] = c.lambda2_true;
  j["targets"] = {{"max_error_S", optional_json(c.targets.max_error_S)},
                  {"max_error_L", optional_json(c.targets.max_error_L)},
                  {"max_re_lambda1", optional_json(c.targets.max_re_lambda1)},
                  {"max_re_lambda2", optional_json(c.targets.max_re_lambda2)}};
  return j;
}

ExperimentConfig config_from_json(const json& j, ExperimentConfig c) {
  if (!j.is_object()) throw std::invalid_argument("config must be a JSON object");
  reject_unknown(j,
                 {"preset", "name", "kind", "domain", "n_q", "n_f", "alpha", "noise",
                  "schedule", "widths", "hidden_layers", "width", "seed", "N_a", "scale_n",
                  "adam", "lbfgs", "chunk_size", "threads", "checkpoint_every", "log_every",
                  "export_stride", "slice_times", "lambda1_true", "lambda2_true", "targets"},
                 "config");
  if (j.contains("preset")) c = preset(j.at("preset").get<std::string>());
  read_if(j, "name", c.name);
  if (j.contains("kind")) c.kind = kind_from_string(j.at("kind").get<std::string>());
  if (j.contains("domain")) {
    const json& d = j.at("domain");
    reject_unknown(d, {"x_lo", "x_hi", "t_lo", "t_hi", "nx", "nt"}, "domain");
    read_if(d, "x_lo", c.domain.x_lo);
    read_if(d, "x_hi", c.domain.x_hi);
    read_if(d, "t_lo", c.domain.t_lo);
    read_if(d, "t_hi", c.domain.t_hi);
    read_if(d, "nx", c.domain.nx);
    read_if(d, "nt", c.domain.nt);
  }
  read_if(j, "n_q", c.n_q);
  read_if(j, "n_f", c.n_f);
  read_if(j, "alpha", c.alpha);
  read_if(j, "noise", c.noise);
  if (j.contains("schedule")) {
    const json& s = j.at("schedule");
    reject_unknown(s, {"adam_iters", "lbfgs_iters"}, "schedule");
    read_if(s, "adam_iters", c.schedule.adam_iters);
    read_if(s, "lbfgs_iters", c.schedule.lbfgs_iters);
  }
  if (j.contains("widths")) {
    c.arch.widths = j.at("widths").get<std::vector<int>>();
  } else if (j.contains("hidden_layers") || j.contains("width")) {
    int layers = c.arch.hidden_layers();
    int width = c.arch.widths.size() > 2 ? c.arch.widths[1] : 40;
    read_if(j, "hidden_layers", layers);
    read_if(j, "width", width);
    c.arch = net::Architecture::uniform(layers, width);
  }
  read_if(j, "seed", c.seed);
  read_if(j, "N_a", c.N_a);
  read_if(j, "scale_n", c.scale_n);
  if (j.contains("adam")) {
    const json& a = j.at("adam");
    reject_unknown(a, {"lr", "beta1", "beta2", "eps"}, "adam");
    read_if(a, "lr", c.adam.lr);
    read_if(a, "beta1", c.adam.beta1);
    read_if(a, "beta2", c.adam.beta2);
    read_if(a, "eps", c.adam.eps);
  }
  if (j.contains("lbfgs")) {
    const json& l = j.at("lbfgs");
    reject_unknown(l, {"memory", "c1", "c2", "gtol", "ftol", "max_line_search"}, "lbfgs");
    read_if(l, "memory", c.lbfgs.memory);
    read_if(l, "c1", c.lbfgs.c1);
    read_if(l, "c2", c.lbfgs.c2);
    read_if(l, "gtol", c.lbfgs.gtol);
    read_if(l, "ftol", c.lbfgs.ftol);
    read_if(l, "max_line_search", c.lbfgs.max_line_search);
  }
  read_if(j, "chunk_size", c.chunk_size);
  read_if(j, "threads", c.threads);
  read_if(j, "checkpoint_every", c.checkpoint_every);
  read_if(j, "log_every", c.log_every);
  if (j.contains("export_stride")) {
    const json& e = j.at("export_stride");
    reject_unknown(e, {"x", "t"}, "export_stride");
    read_if(e, "x", c.export_stride_x);
    read_if(e, "t", c.export_stride_t);
  }
  read_if(j, "slice_times", c.slice_times);
  read_if(j, "lambda1_true", c.lambda1_true);
  read_if(j, "lambda2_true", c.lambda2_true);
  if (j.contains("targets")) {
    const json& t = j.at("targets");
    reject_unknown(t, {"max_error_S", "max_error_L", "max_re_lambda1", "max_re_lambda2"},
                   "targets");
    read_optional(t, "max_error_S", c.targets.max_error_S);
    read_optional(t, "max_error_L", c.targets.max_error_L);
    read_optional(t, "max_re_lambda1", c.targets.max_re_lambda1);
    read_optional(t, "max_re_lambda2", c.targets.max_re_lambda2);
  }
  return c;
}

ExperimentConfig load_config(const fs::path& path, const ExperimentConfig& base) {
  std::ifstream is(path);
  if (!is) throw std::runtime_error("cannot open config " + path.string());
  json j;
  try {
    is >> j;
  } catch (const json::exception& e) {
    throw std::invalid_argument("malformed config " + path.string() + ": " + e.what());
  }
  return config_from_json(j, base);
}

// ---------------------------------------------------------------------------
// Metrics

double relative_l2_error(std::span<const double> predicted, std::span<const double> exact) {
  if (predicted.size() != exact.size()) {
    throw std::invalid_argument("relative_l2_error: size mismatch");
  }
  double num = 0.0;
  double den = 0.0;
  for (std::size_t i = 0; i < exact.size(); ++i) {
    const double d = exact[i] - predicted[i];
    num += d * d;
    den += exact[i] * exact[i];
  }
  if (den == 0.0) throw std::domain_error("relative_l2_error: exact field has zero norm");
  return std::sqrt(num) / std::sqrt(den);
}

double relative_l2_error(std::span<const double> pred_u, std::span<const double> pred_v,
                         std::span<const double> exact_u, std::span<const double> exact_v) {
  const std::size_t n = exact_u.size();
  if (pred_u.size() != n || pred_v.size() != n || exact_v.size() != n) {
    throw std::invalid_argument("relative_l2_error: size mismatch");
  }
  double num = 0.0;
  double den = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double du = exact_u[i] - pred_u[i];
    const double dv = exact_v[i] - pred_v[i];
    num += du * du + dv * dv;
    den += exact_u[i] * exact_u[i] + exact_v[i] * exact_v[i];
  }
  if (den == 0.0) throw std::domain_error("relative_l2_error: exact field has zero norm");
  return std::sqrt(num) / std::sqrt(den);
}

double parameter_relative_error(double learned, double truth) {
  if (truth == 0.0) throw std::domain_error("parameter_relative_error: true value is 0");
  return std::abs(learned - truth) / std::abs(truth) * 100.0;
}

std::vector<std::string> RunRecord::check_targets() const {
  std::vector<std::string> failures;
  if (!ok) failures.push_back("run failed: " + message);
  const auto check = [&](const std::optional<double>& limit, double value, const char* what) {
    if (limit && !(value < *limit)) {
      std::ostringstream os;
      os << what << " = " << value << " not below " << *limit;
      failures.push_back(os.str());
    }
  };
  if (config.is_forward()) {
    check(config.targets.max_error_S, error_S, "error_S");
    check(config.targets.max_error_L, error_L, "error_L");
  } else {
    check(config.targets.max_re_lambda1, re_lambda1, "RE(lambda1) %");
    check(config.targets.max_re_lambda2, re_lambda2, "RE(lambda2) %");
  }
  return failures;
}

json to_json(const RunRecord& r) {
  const auto num = [](double v) { return std::isfinite(v) ? json(v) : json(nullptr); };
  const auto& b = r.final_loss;
  json j;
  j["format"] = "yopinn-run";
  j["config"] = to_json(r.config);
  j["ok"] = r.ok;
  j["message"] = r.message;
  j["final_loss"] = {{"loss_S", num(b.loss_S)},   {"loss_L", num(b.loss_L)},
                     {"loss_fS", num(b.loss_fS)}, {"loss_fL", num(b.loss_fL)},
                     {"loss_a", num(b.loss_a)},   {"penalty", num(b.penalty)},
                     {"total", num(b.total)}};
  j["error_S"] = num(r.error_S);
  j["error_L"] = num(r.error_L);
  if (!r.config.is_forward()) {
    j["lambda1"] = num(r.lambda1);
    j["lambda2"] = num(r.lambda2);
    j["re_lambda1"] = num(r.re_lambda1);
    j["re_lambda2"] = num(r.re_lambda2);
  }
  j["iterations"] = r.iterations;
  j["lbfgs_status"] = r.lbfgs_status;
  j["wall_seconds"] = r.wall_seconds;
  j["trace"] = r.trace_path.filename().string();
  j["fields"] = r.fields_path.filename().string();
  j["params"] = r.params_path.filename().string();
  json slices = json::array();
  for (const auto& p : r.slice_paths) slices.push_back(p.filename().string());
  j["slices"] = slices;
  return j;
}

// ---------------------------------------------------------------------------
// Runs

FieldGrid predict_grid(const net::NetworkParams& params, const data::GridData& grid) {
  const auto nx = static_cast<Eigen::Index>(grid.xs.size());
  const auto nt = static_cast<Eigen::Index>(grid.ts.size());
  FieldGrid out{Eigen::MatrixXd(nt, nx), Eigen::MatrixXd(nt, nx), Eigen::MatrixXd(nt, nx)};
  constexpr Eigen::Index kRowsPerBlock = 32;
  std::vector<double> x;
  std::vector<double> t;
  for (Eigen::Index j0 = 0; j0 < nt; j0 += kRowsPerBlock) {
    const Eigen::Index rows = std::min(kRowsPerBlock, nt - j0);
    x.clear();
    t.clear();
    for (Eigen::Index j = j0; j < j0 + rows; ++j) {
      x.insert(x.end(), grid.xs.begin(), grid.xs.end());
      t.insert(t.end(), static_cast<std::size_t>(nx), grid.ts[static_cast<std::size_t>(j)]);
    }
    const net::Matrix y = net::predict(params, x, t);
    for (Eigen::Index r = 0; r < rows; ++r) {
      out.u.row(j0 + r) = y.row(0).segment(r * nx, nx);
      out.v.row(j0 + r) = y.row(1).segment(r * nx, nx);
      out.L.row(j0 + r) = y.row(2).segment(r * nx, nx);
    }
  }
  return out;
}

data::TrainingSet make_training_set(const ExperimentConfig& c, const data::GridData& grid) {
  data::TrainingSet ts = data::make_training_set(grid, c.n_q, c.n_f, c.seed);
  if (c.noise > 0.0) ts = data::inject_noise(ts, c.noise, data::derive_seed(c.seed, 3));
  return ts;
}

namespace {

std::span<const double> span_of(const Eigen::MatrixXd& m) {
  return {m.data(), static_cast<std::size_t>(m.size())};
}

std::vector<Eigen::Index> strided(Eigen::Index n, int stride) {
  std::vector<Eigen::Index> idx;
  for (Eigen::Index i = 0; i < n; i += stride) idx.push_back(i);
  if (idx.back() != n - 1) idx.push_back(n - 1);
  return idx;
}

fs::path write_fields(const fs::path& dir, const data::GridData& grid, const FieldGrid& pred,
                      int stride_x, int stride_t) {
  const auto ix = strided(static_cast<Eigen::Index>(grid.xs.size()), stride_x);
  const auto it = strided(static_cast<Eigen::Index>(grid.ts.size()), stride_t);
  std::vector<double> xs;
  std::vector<double> ts;
  for (auto i : ix) xs.push_back(grid.xs[static_cast<std::size_t>(i)]);
  for (auto j : it) ts.push_back(grid.ts[static_cast<std::size_t>(j)]);
  std::vector<int> ri(it.begin(), it.end());
  std::vector<int> ci(ix.begin(), ix.end());
  const fs::path path = dir / "fields.csv";
  data::write_grid_csv(path, xs, ts, pred.u(ri, ci), pred.v(ri, ci), pred.L(ri, ci));
  return path;
}

std::string slice_name(std::size_t k, double t) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "slice_%zu_t%+.2f.csv", k, t);
  return buf;
}

std::vector<fs::path> write_slices(const fs::path& dir, const ExperimentConfig& c,
                                   const data::GridData& grid, const net::NetworkParams& params) {
  const exact::RWParams rw = c.rw_params();
  std::vector<fs::path> paths;
  const std::size_t nx = grid.xs.size();
  for (std::size_t k = 0; k < c.slice_times.size(); ++k) {
    const double t = c.slice_times[k];
    const std::vector<double> ts(nx, t);
    const net::Matrix y = net::predict(params, grid.xs, ts);
    const fs::path path = dir / slice_name(k, t);
    std::ofstream os(path);
    if (!os) throw std::runtime_error("cannot write " + path.string());
    os << std::setprecision(17);
    os << "x,t,u_exact,v_exact,L_exact,S_exact,u_pred,v_pred,L_pred,S_pred\n";
    for (std::size_t i = 0; i < nx; ++i) {
      const auto i_ = static_cast<Eigen::Index>(i);
      const exact::FieldSample e = exact::eval_general_rw(rw, grid.xs[i], t);
      os << grid.xs[i] << ',' << t << ',' << e.u << ',' << e.v << ',' << e.L << ','
         << e.modulus() << ',' << y(0, i_) << ',' << y(1, i_) << ',' << y(2, i_) << ','
         << std::hypot(y(0, i_), y(1, i_)) << '\n';
    }
    if (!os) throw std::runtime_error("write failed for " + path.string());
    paths.push_back(path);
  }
  return paths;
}

void write_run_json(const RunRecord& r) {
  std::ofstream os(r.dir / "run.json");
  if (!os) throw std::runtime_error("cannot write " + (r.dir / "run.json").string());
  os << to_json(r).dump(2) << '\n';
}

RunRecord run_impl(const ExperimentConfig& c, const fs::path& out_dir) {
  c.validate();
  const auto start = Clock::now();
  RunRecord rec;
  rec.config = c;
  rec.dir = out_dir;
  fs::create_directories(out_dir);

  const data::GridData grid = data::build_grid(c.rw_params(), c.domain);
  const data::TrainingSet ts = make_training_set(c, grid);

  const phys::PhysicsMode mode = c.is_forward() ? phys::PhysicsMode::forward()
                                                : phys::PhysicsMode::inverse(0.0, 0.0);
  loss::ObjectiveOptions oo;
  oo.alpha = c.alpha;
  oo.N_a = c.N_a;
  oo.chunk_size = c.chunk_size;
  oo.threads = c.threads;
  loss::Objective objective(c.arch, c.scale_n, mode, ts, oo);

  net::NetworkParams init = net::init_xavier(c.arch, data::derive_seed(c.seed, 4));
  init.scale_n = c.scale_n;

  opt::TrainOptions to;
  to.schedule = c.schedule;
  to.adam = c.adam;
  to.lbfgs = c.lbfgs;
  to.checkpoint_every = c.checkpoint_every;
  if (c.checkpoint_every > 0) to.checkpoint_dir = out_dir / "checkpoints";
  if (c.log_every > 0) {
    to.on_record = [&c, start](const opt::TraceRecord& r) {
      if (r.iteration % c.log_every != 0) return;
      const double secs = std::chrono::duration<double>(Clock::now() - start).count();
      std::clog << c.name << " it " << r.iteration << ' ' << opt::to_string(r.phase) << " loss "
                << r.loss.total;
      if (!c.is_forward()) std::clog << " lambda " << r.lambda1 << ' ' << r.lambda2;
      std::clog << " (" << std::fixed << std::setprecision(1) << secs << " s)"
                << std::defaultfloat << std::setprecision(6) << '\n';
    };
  }

  const opt::TrainResult tr = opt::train(objective, init, mode, to);
  rec.ok = !tr.aborted;
  rec.message = tr.abort_reason;
  rec.final_loss = tr.final_loss;
  rec.iterations = tr.trace.empty() ? 0 : tr.trace.back().iteration + 1;
  rec.lbfgs_status = c.schedule.lbfgs_iters > 0 ? opt::to_string(tr.lbfgs_status) : "skipped";

  rec.trace_path = out_dir / "trace.csv";
  opt::write_trace_csv(rec.trace_path, tr.trace);
  rec.params_path = out_dir / "params.json";
  opt::save_checkpoint(rec.params_path, tr.params, tr.mode, rec.iterations);

  const FieldGrid pred = predict_grid(tr.params, grid);
  rec.error_S = relative_l2_error(span_of(pred.u), span_of(pred.v), span_of(grid.u),
                                  span_of(grid.v));
  rec.error_L = relative_l2_error(span_of(pred.L), span_of(grid.L));
  rec.lambda1 = tr.mode.lambda1;
  rec.lambda2 = tr.mode.lambda2;
  if (!c.is_forward()) {
    rec.re_lambda1 = parameter_relative_error(rec.lambda1, c.lambda1_true);
    rec.re_lambda2 = parameter_relative_error(rec.lambda2, c.lambda2_true);
  }
  if (rec.ok && !(std::isfinite(rec.error_S) && std::isfinite(rec.error_L))) {
    rec.ok = false;
    rec.message = "prediction is not finite";
  }
  rec.fields_path = write_fields(out_dir, grid, pred, c.export_stride_x, c.export_stride_t);
  rec.slice_paths = write_slices(out_dir, c, grid, tr.params);

  rec.wall_seconds =
      std::chrono::duration<double>(Clock::now() - start).count();
  write_run_json(rec);
  return rec;
}

}  // namespace

RunRecord run_forward(const ExperimentConfig& c, const fs::path& out_dir) {
  if (!c.is_forward()) throw std::invalid_argument("run_forward: config kind is inverse");
  return run_impl(c, out_dir);
}

RunRecord run_inverse(const ExperimentConfig& c, const fs::path& out_dir) {
  if (c.is_forward()) {
    throw std::invalid_argument("run_inverse: config kind is " + to_string(c.kind));
  }
  return run_impl(c, out_dir);
}

RunRecord run(const ExperimentConfig& c, const fs::path& out_dir) {
  return c.is_forward() ? run_forward(c, out_dir) : run_inverse(c, out_dir);
}

std::vector<RunRecord> run_sweep(std::span<const double> alphas, std::span<const double> noises,
                                 const ExperimentConfig& base, const fs::path& out_dir) {
  if (alphas.empty() || noises.empty()) {
    throw std::invalid_argument("run_sweep: alphas and noises must be nonempty");
  }
  if (base.is_forward()) throw std::invalid_argument("run_sweep: base config must be inverse");
  fs::create_directories(out_dir);
  std::vector<RunRecord> cells;
  for (double noise : noises) {
    for (double alpha : alphas) {
      ExperimentConfig c = base;
      c.noise = noise;
      c.alpha = alpha;
      char dir[96];
      std::snprintf(dir, sizeof dir, "noise_%g_alpha_%g", noise, alpha);
      try {
        cells.push_back(run_inverse(c, out_dir / dir));
      } catch (const std::exception& e) {
        RunRecord r;
        r.config = c;
        r.dir = out_dir / dir;
        r.ok = false;
        r.message = e.what();
        const double nan = std::numeric_limits<double>::quiet_NaN();
        r.error_S = r.error_L = r.lambda1 = r.lambda2 = r.re_lambda1 = r.re_lambda2 = nan;
        cells.push_back(r);
      }
    }
  }
  write_sweep_csv(out_dir / "sweep.csv", cells);
  return cells;
}

void write_sweep_csv(const fs::path& path, const std::vector<RunRecord>& cells) {
  std::ofstream os(path);
  if (!os) throw std::runtime_error("cannot write " + path.string());
  os << std::setprecision(17);
  os << "noise,alpha,lambda1,lambda2,re_lambda1,re_lambda2,error_S,error_L,total_loss,status,"
        "message\n";
  for (const auto& r : cells) {
    std::string msg = r.message;
    std::replace(msg.begin(), msg.end(), '"', '\'');
    os << r.config.noise << ',' << r.config.alpha << ',' << r.lambda1 << ',' << r.lambda2 << ','
       << r.re_lambda1 << ',' << r.re_lambda2 << ',' << r.error_S << ',' << r.error_L << ','
       << r.final_loss.total << ',' << (r.ok ? "ok" : "failed") << ",\"" << msg << "\"\n";
  }
  if (!os) throw std::runtime_error("write failed for " + path.string());
}

fs::path default_output_dir() {
  if (const char* env = std::getenv("YOPINN_OUTPUT_DIR"); env && *env) return env;
  return "yopinn-runs";
}

}  // namespace yopinn::experiment
