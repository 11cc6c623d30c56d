#pragma once

#include <filesystem>
#include <random>
#include <string>

#include "yopinn/datagen.hpp"
#include "yopinn/residuals.hpp"

namespace yopinn::testing {

inline std::filesystem::path scratch_dir(const std::string& name) {
  const auto dir = std::filesystem::temp_directory_path() / "yopinn-tests" / name;
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

inline data::TrainingSet random_training_set(std::uint64_t seed, std::size_t n_ib,
                                             std::size_t n_f) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> ux(-5.0, 5.0), ut(-2.0, 2.0), uv(-1.0, 1.0);
  data::TrainingSet ts;
  ts.seed = seed;
  for (std::size_t i = 0; i < n_ib; ++i) ts.ib.push_back({ux(rng), ut(rng), uv(rng), uv(rng), uv(rng)});
  for (std::size_t i = 0; i < n_f; ++i) ts.collocation.push_back({ux(rng), ut(rng)});
  return ts;
}

/// The explicit bright-bright rogue wave written with tape operations.
inline net::Fields bright_oracle(const ad::Var& x, const ad::Var& t) {
  const ad::Var q = 3.0 * (t * t) + 3.0 * (t * x) + 3.0 * (x * x);
  const ad::Var den = q + 1.0;
  const ad::Var inv = ad::reciprocal(den);
  return {(q - 2.0) * inv, (3.0 * x - 3.0 * t) * inv,
          3.0 * (3.0 * (t * t) - 6.0 * (t * x) - 6.0 * (x * x) + 2.0) * (inv * inv)};
}

inline ad::Matrix row(std::initializer_list<double> v) {
  ad::Matrix m(1, static_cast<Eigen::Index>(v.size()));
  Eigen::Index i = 0;
  for (double d : v) m(0, i++) = d;
  return m;
}

}  // namespace yopinn::testing
