#pragma once

// Experiment orchestration: configuration presets, forward and inverse runs,
// (alpha, noise) sweeps, error metrics and result files.

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "yopinn/datagen.hpp"
#include "yopinn/exact_yo.hpp"
#include "yopinn/loss.hpp"
#include "yopinn/network.hpp"
#include "yopinn/optim.hpp"

namespace yopinn::experiment {

enum class Kind { ForwardBright, ForwardIntermediate, ForwardDark, Inverse };

std::string to_string(Kind k);
Kind kind_from_string(const std::string& s);

/// Pass/fail thresholds checked by the CLI after a run. Unset entries are
/// not checked.
struct Targets {
  std::optional<double> max_error_S;
  std::optional<double> max_error_L;
  std::optional<double> max_re_lambda1;  // percent
  std::optional<double> max_re_lambda2;  // percent
};

struct ExperimentConfig {
  std::string name;
  Kind kind = Kind::ForwardBright;
  data::Domain domain;
  std::size_t n_q = 1000;
  std::size_t n_f = 20000;
  double alpha = 1e-4;
  double noise = 0.0;
  opt::Schedule schedule;
  net::Architecture arch = net::Architecture::uniform(9, 40);
  std::uint64_t seed = 1;
  int N_a = loss::kDefaultNa;
  double scale_n = net::kDefaultScale;
  opt::AdamOptions adam;
  opt::LbfgsOptions lbfgs;
  std::size_t chunk_size = 128;
  int threads = 1;
  long checkpoint_every = 5000;
  /// Progress line on stderr every this many iterations (0 silences).
  long log_every = 0;
  /// The predicted-field export keeps every stride-th grid node per axis.
  int export_stride_x = 10;
  int export_stride_t = 10;
  std::vector<double> slice_times;
  /// True coefficients (inverse runs report relative errors against them).
  double lambda1_true = 0.5;
  double lambda2_true = 1.0;
  Targets targets;

  bool is_forward() const { return kind != Kind::Inverse; }
  exact::RWParams rw_params() const;
  void validate() const;
};

/// Named presets: forward-{bright,intermediate,dark}, inverse (full scale)
/// and the same names with a -desk suffix (reduced scale).
ExperimentConfig preset(const std::string& name);
std::vector<std::string> preset_names();

nlohmann::json to_json(const ExperimentConfig& c);
/// Overlays the keys present in j onto base. A "preset" key selects the
/// base instead.
ExperimentConfig config_from_json(const nlohmann::json& j, ExperimentConfig base);
ExperimentConfig load_config(const std::filesystem::path& path,
                             const ExperimentConfig& base);

struct RunRecord {
  ExperimentConfig config;
  bool ok = false;
  std::string message;
  loss::LossBreakdown final_loss;
  double error_S = 0.0;
  double error_L = 0.0;
  double lambda1 = 0.0;
  double lambda2 = 0.0;
  double re_lambda1 = 0.0;  // percent, inverse only
  double re_lambda2 = 0.0;
  long iterations = 0;
  std::string lbfgs_status;
  double wall_seconds = 0.0;
  std::filesystem::path dir;
  std::filesystem::path trace_path;
  std::filesystem::path fields_path;
  std::filesystem::path params_path;
  std::vector<std::filesystem::path> slice_paths;

  /// Failures of config.targets, one message each; empty means all passed.
  std::vector<std::string> check_targets() const;
};

nlohmann::json to_json(const RunRecord& r);

/// sqrt(sum (exact - pred)^2) / sqrt(sum exact^2). Throws on a zero exact
/// field or a size mismatch.
double relative_l2_error(std::span<const double> predicted, std::span<const double> exact);
/// Same, with |.| the complex modulus of (u, v).
double relative_l2_error(std::span<const double> pred_u, std::span<const double> pred_v,
                         std::span<const double> exact_u, std::span<const double> exact_v);
/// |learned - truth| / |truth| * 100. Throws when truth is 0.
double parameter_relative_error(double learned, double truth);

/// Network prediction on every node of the grid, as (nt x nx) matrices.
struct FieldGrid {
  Eigen::MatrixXd u;
  Eigen::MatrixXd v;
  Eigen::MatrixXd L;
};
FieldGrid predict_grid(const net::NetworkParams& params, const data::GridData& grid);

/// Builds the training set the config describes (noise included).
data::TrainingSet make_training_set(const ExperimentConfig& c, const data::GridData& grid);

RunRecord run_forward(const ExperimentConfig& c, const std::filesystem::path& out_dir);
RunRecord run_inverse(const ExperimentConfig& c, const std::filesystem::path& out_dir);
RunRecord run(const ExperimentConfig& c, const std::filesystem::path& out_dir);

/// One inverse run per (noise, alpha) cell, noise-major. Cells with the same
/// noise level see identical training data. Writes sweep.csv in out_dir.
std::vector<RunRecord> run_sweep(std::span<const double> alphas,
                                 std::span<const double> noises,
                                 const ExperimentConfig& base,
                                 const std::filesystem::path& out_dir);
void write_sweep_csv(const std::filesystem::path& path, const std::vector<RunRecord>& cells);

/// Output root: $YOPINN_OUTPUT_DIR if set, else ./yopinn-runs.
std::filesystem::path default_output_dir();

}  // namespace yopinn::experiment
