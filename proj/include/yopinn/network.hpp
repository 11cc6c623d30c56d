#pragma once

// Fully connected network with neuron-wise locally adaptive tanh activations.
//
// Hidden layer d maps h -> tanh(n * a^d .* (W^d h + b^d)), where a^d holds one
// trainable slope per neuron and n is a fixed scale factor. The output layer
// is affine. Inputs are (x, t); outputs are (u, v, L).

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "yopinn/autodiff.hpp"

namespace yopinn::net {

using ad::Matrix;
using ad::Var;
using ad::Vector;

inline constexpr int kInputs = 2;
inline constexpr int kOutputs = 3;
inline constexpr double kDefaultScale = 10.0;
inline constexpr double kDefaultSlope = 0.1;

struct Architecture {
  std::vector<int> widths;  // input, hidden..., output

  /// 2 -> hidden_layers x width -> 3
  static Architecture uniform(int hidden_layers, int width);

  int depth() const { return static_cast<int>(widths.size()) - 1; }
  int hidden_layers() const { return depth() - 1; }
  /// Throws std::invalid_argument on a malformed layer chain.
  void validate() const;
  std::string to_string() const;
};

struct NetworkParams {
  std::vector<Matrix> weights;  // W^d is widths[d] x widths[d-1]
  std::vector<Vector> biases;
  std::vector<Vector> slopes;   // hidden layers only
  double scale_n = kDefaultScale;
  std::uint64_t seed = 0;

  Architecture architecture() const;
  void validate() const;
  std::size_t num_parameters() const;
  std::size_t num_weights() const;
};

/// Glorot-normal weights (variance 2/(fan_in+fan_out)), zero biases,
/// slopes all kDefaultSlope with n = kDefaultScale.
NetworkParams init_xavier(const Architecture& arch, std::uint64_t seed);

/// Flat layout: W^1 (column-major), b^1, ..., W^D, b^D, a^1, ..., a^{D-1}.
struct ParamLayout {
  struct Block {
    std::size_t offset;
    Eigen::Index rows;
    Eigen::Index cols;
  };
  std::vector<Block> weights;
  std::vector<Block> biases;
  std::vector<Block> slopes;
  std::size_t size = 0;

  explicit ParamLayout(const Architecture& arch);
  /// 1 for entries that belong to a weight matrix, 0 otherwise.
  Vector weight_mask() const;
};

Vector flatten(const NetworkParams& params);
void unflatten(std::span<const double> flat, NetworkParams& params);

/// Network parameters bound as leaves on a tape.
struct NetworkVars {
  std::vector<Var> weights;
  std::vector<Var> biases;
  std::vector<Var> slopes;
  double scale_n = kDefaultScale;

  std::vector<Var> all() const;  // in flat-layout order
};

NetworkVars bind(ad::Tape& tape, const NetworkParams& params);

struct Fields {
  Var u;
  Var v;
  Var L;
};

/// Forward pass on the tape. x and t are 1 x B row vectors.
/// Throws ad::NonFiniteError naming the layer if an activation input is not
/// finite.
Fields forward(const NetworkVars& vars, const Var& x, const Var& t);

/// Plain numeric forward pass over a batch; returns a 3 x B matrix.
Matrix predict(const NetworkParams& params, std::span<const double> x,
               std::span<const double> t);

// Checkpoint I/O (JSON, see README for the layout).
nlohmann::json to_json(const NetworkParams& params);
NetworkParams params_from_json(const nlohmann::json& j);
void save_params(const NetworkParams& params, const std::string& path);
NetworkParams load_params(const std::string& path);

}  // namespace yopinn::net
