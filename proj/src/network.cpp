#include "yopinn/network.hpp"

#include <cmath>
#include <fstream>
#include <random>
#include <sstream>
#include <stdexcept>

#include <nlohmann/json.hpp>

namespace yopinn::net {

Architecture Architecture::uniform(int hidden_layers, int width) {
  Architecture arch;
  arch.widths.push_back(kInputs);
  for (int i = 0; i < hidden_layers; ++i) arch.widths.push_back(width);
  arch.widths.push_back(kOutputs);
  return arch;
}

void Architecture::validate() const {
  if (widths.size() < 3) {
    throw std::invalid_argument("architecture needs at least one hidden layer");
  }
  if (widths.front() != kInputs) throw std::invalid_argument("architecture input width must be 2");
  if (widths.back() != kOutputs) throw std::invalid_argument("architecture output width must be 3");
  for (int w : widths) {
    if (w <= 0) throw std::invalid_argument("architecture has a zero-width layer");
  }
}

std::string Architecture::to_string() const {
  std::ostringstream os;
  for (std::size_t i = 0; i < widths.size(); ++i) os << (i ? "-" : "") << widths[i];
  return os.str();
}

Architecture NetworkParams::architecture() const {
  Architecture arch;
  if (weights.empty()) return arch;
  arch.widths.push_back(static_cast<int>(weights.front().cols()));
  for (const auto& w : weights) arch.widths.push_back(static_cast<int>(w.rows()));
  return arch;
}

void NetworkParams::validate() const {
  if (weights.empty() || weights.size() != biases.size()) {
    throw std::invalid_argument("network: weights and biases disagree in depth");
  }
  if (slopes.size() + 1 != weights.size()) {
    throw std::invalid_argument("network: slopes must cover hidden layers only");
  }
  for (std::size_t d = 0; d < weights.size(); ++d) {
    if (d > 0 && weights[d].cols() != weights[d - 1].rows()) {
      throw std::invalid_argument("network: inconsistent layer chain at layer " +
                                  std::to_string(d + 1));
    }
    if (biases[d].size() != weights[d].rows()) {
      throw std::invalid_argument("network: bias size mismatch at layer " +
                                  std::to_string(d + 1));
    }
    if (d < slopes.size() && slopes[d].size() != weights[d].rows()) {
      throw std::invalid_argument("network: slope size mismatch at layer " +
                                  std::to_string(d + 1));
    }
  }
  if (!(scale_n > 1.0)) throw std::invalid_argument("network: scale factor n must exceed 1");
  architecture().validate();
}

std::size_t NetworkParams::num_parameters() const {
  std::size_t n = 0;
  for (const auto& w : weights) n += static_cast<std::size_t>(w.size());
  for (const auto& b : biases) n += static_cast<std::size_t>(b.size());
  for (const auto& a : slopes) n += static_cast<std::size_t>(a.size());
  return n;
}

std::size_t NetworkParams::num_weights() const {
  std::size_t n = 0;
  for (const auto& w : weights) n += static_cast<std::size_t>(w.size());
  return n;
}

NetworkParams init_xavier(const Architecture& arch, std::uint64_t seed) {
  arch.validate();
  std::mt19937_64 rng(seed);
  NetworkParams p;
  p.seed = seed;
  p.scale_n = kDefaultScale;
  const auto depth = arch.widths.size() - 1;
  for (std::size_t d = 1; d <= depth; ++d) {
    const int fan_in = arch.widths[d - 1];
    const int fan_out = arch.widths[d];
    std::normal_distribution<double> normal(0.0, std::sqrt(2.0 / (fan_in + fan_out)));
    Matrix w(fan_out, fan_in);
    for (Eigen::Index j = 0; j < w.cols(); ++j) {
      for (Eigen::Index i = 0; i < w.rows(); ++i) w(i, j) = normal(rng);
    }
    p.weights.push_back(std::move(w));
    p.biases.push_back(Vector::Zero(fan_out));
    if (d < depth) p.slopes.push_back(Vector::Constant(fan_out, kDefaultSlope));
  }
  return p;
}

ParamLayout::ParamLayout(const Architecture& arch) {
  arch.validate();
  const auto depth = arch.widths.size() - 1;
  for (std::size_t d = 1; d <= depth; ++d) {
    const Eigen::Index r = arch.widths[d];
    const Eigen::Index c = arch.widths[d - 1];
    weights.push_back({size, r, c});
    size += static_cast<std::size_t>(r * c);
    biases.push_back({size, r, 1});
    size += static_cast<std::size_t>(r);
  }
  for (std::size_t d = 1; d < depth; ++d) {
    const Eigen::Index r = arch.widths[d];
    slopes.push_back({size, r, 1});
    size += static_cast<std::size_t>(r);
  }
}

Vector ParamLayout::weight_mask() const {
  Vector mask = Vector::Zero(static_cast<Eigen::Index>(size));
  for (const auto& b : weights) {
    mask.segment(static_cast<Eigen::Index>(b.offset), b.rows * b.cols).setOnes();
  }
  return mask;
}

Vector flatten(const NetworkParams& params) {
  const ParamLayout layout(params.architecture());
  Vector flat(static_cast<Eigen::Index>(layout.size));
  for (std::size_t d = 0; d < params.weights.size(); ++d) {
    const auto& wb = layout.weights[d];
    flat.segment(static_cast<Eigen::Index>(wb.offset), wb.rows * wb.cols) =
        params.weights[d].reshaped();
    const auto& bb = layout.biases[d];
    flat.segment(static_cast<Eigen::Index>(bb.offset), bb.rows) = params.biases[d];
  }
  for (std::size_t d = 0; d < params.slopes.size(); ++d) {
    const auto& sb = layout.slopes[d];
    flat.segment(static_cast<Eigen::Index>(sb.offset), sb.rows) = params.slopes[d];
  }
  return flat;
}

void unflatten(std::span<const double> flat, NetworkParams& params) {
  const ParamLayout layout(params.architecture());
  if (flat.size() < layout.size) throw std::invalid_argument("unflatten: vector too short");
  const Eigen::Map<const Vector> v(flat.data(), static_cast<Eigen::Index>(flat.size()));
  for (std::size_t d = 0; d < params.weights.size(); ++d) {
    const auto& wb = layout.weights[d];
    params.weights[d].reshaped() =
        v.segment(static_cast<Eigen::Index>(wb.offset), wb.rows * wb.cols);
    const auto& bb = layout.biases[d];
    params.biases[d] = v.segment(static_cast<Eigen::Index>(bb.offset), bb.rows);
  }
  for (std::size_t d = 0; d < params.slopes.size(); ++d) {
    const auto& sb = layout.slopes[d];
    params.slopes[d] = v.segment(static_cast<Eigen::Index>(sb.offset), sb.rows);
  }
}

std::vector<Var> NetworkVars::all() const {
  std::vector<Var> out;
  for (std::size_t d = 0; d < weights.size(); ++d) {
    out.push_back(weights[d]);
    out.push_back(biases[d]);
  }
  out.insert(out.end(), slopes.begin(), slopes.end());
  return out;
}

NetworkVars bind(ad::Tape& tape, const NetworkParams& params) {
  NetworkVars vars;
  vars.scale_n = params.scale_n;
  for (std::size_t d = 0; d < params.weights.size(); ++d) {
    vars.weights.push_back(tape.variable(params.weights[d]));
    vars.biases.push_back(tape.variable(params.biases[d]));
  }
  for (const auto& a : params.slopes) vars.slopes.push_back(tape.variable(a));
  return vars;
}

Fields forward(const NetworkVars& vars, const Var& x, const Var& t) {
  Var h = ad::vstack(x, t);
  const std::size_t depth = vars.weights.size();
  for (std::size_t d = 0; d + 1 < depth; ++d) {
    const Var z = ad::add_col(ad::matmul(vars.weights[d], h), vars.biases[d]);
    if (!z.value().allFinite()) {
      throw ad::NonFiniteError("non-finite activation input at hidden layer " +
                               std::to_string(d + 1));
    }
    h = ad::scaled_tanh(z, vars.scale_n * vars.slopes[d]);
  }
  const Var out = ad::add_col(ad::matmul(vars.weights[depth - 1], h), vars.biases[depth - 1]);
  return {ad::row(out, 0), ad::row(out, 1), ad::row(out, 2)};
}

Matrix predict(const NetworkParams& params, std::span<const double> x,
               std::span<const double> t) {
  if (x.size() != t.size()) throw std::invalid_argument("predict: x and t differ in length");
  const auto n = static_cast<Eigen::Index>(x.size());
  Matrix h(2, n);
  h.row(0) = Eigen::Map<const Eigen::RowVectorXd>(x.data(), n);
  h.row(1) = Eigen::Map<const Eigen::RowVectorXd>(t.data(), n);
  const std::size_t depth = params.weights.size();
  for (std::size_t d = 0; d + 1 < depth; ++d) {
    Matrix z = (params.weights[d] * h).colwise() + params.biases[d];
    if (!z.allFinite()) {
      throw ad::NonFiniteError("non-finite activation input at hidden layer " +
                               std::to_string(d + 1));
    }
    const Vector s = params.scale_n * params.slopes[d];
    h = (z.array().colwise() * s.array()).matrix();
    ad::tanh_inplace(h);
  }
  return (params.weights[depth - 1] * h).colwise() + params.biases[depth - 1];
}

nlohmann::json to_json(const NetworkParams& params) {
  nlohmann::json j;
  j["format"] = "yopinn-network";
  j["version"] = 1;
  j["architecture"] = params.architecture().widths;
  j["scale_n"] = params.scale_n;
  j["seed"] = params.seed;
  auto layers = nlohmann::json::array();
  for (std::size_t d = 0; d < params.weights.size(); ++d) {
    nlohmann::json layer;
    const Matrix& w = params.weights[d];
    layer["rows"] = w.rows();
    layer["cols"] = w.cols();
    // row-major
    std::vector<double> wv;
    wv.reserve(static_cast<std::size_t>(w.size()));
    for (Eigen::Index i = 0; i < w.rows(); ++i) {
      for (Eigen::Index k = 0; k < w.cols(); ++k) wv.push_back(w(i, k));
    }
    layer["weights"] = wv;
    layer["biases"] = std::vector<double>(params.biases[d].data(),
                                          params.biases[d].data() + params.biases[d].size());
    if (d < params.slopes.size()) {
      layer["slopes"] = std::vector<double>(params.slopes[d].data(),
                                            params.slopes[d].data() + params.slopes[d].size());
    }
    layers.push_back(std::move(layer));
  }
  j["layers"] = std::move(layers);
  return j;
}

NetworkParams params_from_json(const nlohmann::json& j) {
  if (j.value("format", std::string{}) != "yopinn-network") {
    throw std::invalid_argument("not a yopinn-network checkpoint");
  }
  NetworkParams p;
  p.scale_n = j.at("scale_n").get<double>();
  p.seed = j.value("seed", std::uint64_t{0});
  for (const auto& layer : j.at("layers")) {
    const auto rows = layer.at("rows").get<Eigen::Index>();
    const auto cols = layer.at("cols").get<Eigen::Index>();
    const auto wv = layer.at("weights").get<std::vector<double>>();
    if (static_cast<Eigen::Index>(wv.size()) != rows * cols) {
      throw std::invalid_argument("checkpoint: weight count mismatch");
    }
    Matrix w(rows, cols);
    for (Eigen::Index i = 0; i < rows; ++i) {
      for (Eigen::Index k = 0; k < cols; ++k) w(i, k) = wv[static_cast<std::size_t>(i * cols + k)];
    }
    p.weights.push_back(std::move(w));
    const auto bv = layer.at("biases").get<std::vector<double>>();
    p.biases.push_back(Eigen::Map<const Vector>(bv.data(), static_cast<Eigen::Index>(bv.size())));
    if (layer.contains("slopes")) {
      const auto sv = layer.at("slopes").get<std::vector<double>>();
      p.slopes.push_back(Eigen::Map<const Vector>(sv.data(), static_cast<Eigen::Index>(sv.size())));
    }
  }
  p.validate();
  return p;
}

void save_params(const NetworkParams& params, const std::string& path) {
  std::ofstream os(path);
  if (!os) throw std::runtime_error("cannot write " + path);
  // dump() prints doubles with round-trip precision
  os << to_json(params).dump(1) << "\n";
}

NetworkParams load_params(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw std::runtime_error("cannot read " + path);
  return params_from_json(nlohmann::json::parse(is));
}

}  // namespace yopinn::net
