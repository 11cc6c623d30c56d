#pragma once

// Training data: uniform grids of an exact solution, initial/boundary subsets,
// Latin hypercube collocation points and measurement noise.

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include <Eigen/Dense>

#include "yopinn/exact_yo.hpp"

namespace yopinn::data {

struct Domain {
  double x_lo = -5.0;
  double x_hi = 5.0;
  double t_lo = -2.0;
  double t_hi = 2.0;
  int nx = 2000;
  int nt = 1000;

  void validate() const;
  double dx() const { return (x_hi - x_lo) / (nx - 1); }
  double dt() const { return (t_hi - t_lo) / (nt - 1); }
  double x_at(int i) const;
  double t_at(int j) const;
  bool contains(double x, double t) const {
    return x >= x_lo && x <= x_hi && t >= t_lo && t <= t_hi;
  }
};

struct LabeledPoint {
  double x = 0.0;
  double t = 0.0;
  double u = 0.0;
  double v = 0.0;
  double L = 0.0;
  bool operator==(const LabeledPoint&) const = default;
};

struct CollocationPoint {
  double x = 0.0;
  double t = 0.0;
  bool operator==(const CollocationPoint&) const = default;
};

/// Exact solution sampled on the full nx x nt grid. Field matrices are
/// indexed (time row j, space column i).
struct GridData {
  Domain domain;
  std::vector<double> xs;
  std::vector<double> ts;
  Eigen::MatrixXd u;
  Eigen::MatrixXd v;
  Eigen::MatrixXd L;
  /// Nodes on t = t_lo, x = x_lo and x = x_hi, each corner once.
  std::vector<LabeledPoint> boundary;

  std::size_t size() const { return xs.size() * ts.size(); }
};

GridData build_grid(const exact::RWParams& rw, const Domain& dom);

/// Uniform sample of n_q points without replacement.
std::vector<LabeledPoint> subsample_ib(std::span<const LabeledPoint> pool,
                                       std::size_t n_q, std::uint64_t seed);

/// Latin hypercube sample: for each coordinate, exactly one point falls in
/// each of the n_f equal-width strata.
std::vector<CollocationPoint> lhs_sample(const Domain& dom, std::size_t n_f,
                                         std::uint64_t seed);

/// Stratum of `value` among n equal-width bins of [lo, hi].
std::size_t lhs_stratum(double value, double lo, double hi, std::size_t n);

struct TrainingSet {
  Domain domain;
  std::vector<LabeledPoint> ib;
  std::vector<CollocationPoint> collocation;
  std::uint64_t seed = 0;
  double noise_level = 0.0;
  std::uint64_t noise_seed = 0;
};

/// Draws N_q initial/boundary points and N_f collocation points.
TrainingSet make_training_set(const GridData& grid, std::size_t n_q,
                              std::size_t n_f, std::uint64_t seed);

/// Population standard deviation of the (u, v, L) values taken together.
double value_std(std::span<const LabeledPoint> points);

/// Adds noise * value_std * N(0, 1) to every u, v, L target.
TrainingSet inject_noise(const TrainingSet& ts, double noise, std::uint64_t seed);

/// Stable seed derivation for independent random streams.
std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream);

// Serialization: <dir>/manifest.json, <dir>/ib.csv, <dir>/collocation.csv.
void save_training_set(const TrainingSet& ts, const std::filesystem::path& dir);
TrainingSet load_training_set(const std::filesystem::path& dir);

/// CSV header x,t,u,v,L; rows ordered t-outer, 17 significant digits.
void write_grid_csv(const std::filesystem::path& path, std::span<const double> xs,
                    std::span<const double> ts, const Eigen::MatrixXd& u,
                    const Eigen::MatrixXd& v, const Eigen::MatrixXd& L);

}  // namespace yopinn::data
