#include "yopinn/datagen.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <numeric>
#include <random>
#include <sstream>
#include <stdexcept>
#include <string>

#include <nlohmann/json.hpp>

namespace yopinn::data {

void Domain::validate() const {
  if (!(x_lo < x_hi)) throw std::invalid_argument("domain: x_lo must be below x_hi");
  if (!(t_lo < t_hi)) throw std::invalid_argument("domain: t_lo must be below t_hi");
  if (nx < 2 || nt < 2) throw std::invalid_argument("domain: nx and nt must be >= 2");
}

double Domain::x_at(int i) const { return i == nx - 1 ? x_hi : x_lo + i * dx(); }
double Domain::t_at(int j) const { return j == nt - 1 ? t_hi : t_lo + j * dt(); }

GridData build_grid(const exact::RWParams& rw, const Domain& dom) {
  dom.validate();
  GridData g;
  g.domain = dom;
  g.xs.resize(static_cast<std::size_t>(dom.nx));
  g.ts.resize(static_cast<std::size_t>(dom.nt));
  for (int i = 0; i < dom.nx; ++i) g.xs[i] = dom.x_at(i);
  for (int j = 0; j < dom.nt; ++j) g.ts[j] = dom.t_at(j);
  g.u.resize(dom.nt, dom.nx);
  g.v.resize(dom.nt, dom.nx);
  g.L.resize(dom.nt, dom.nx);
  for (int j = 0; j < dom.nt; ++j) {
    for (int i = 0; i < dom.nx; ++i) {
      const auto f = exact::eval_general_rw(rw, g.xs[i], g.ts[j]);
      g.u(j, i) = f.u;
      g.v(j, i) = f.v;
      g.L(j, i) = f.L;
    }
  }
  const auto node = [&](int i, int j) {
    return LabeledPoint{g.xs[i], g.ts[j], g.u(j, i), g.v(j, i), g.L(j, i)};
  };
  g.boundary.reserve(static_cast<std::size_t>(dom.nx + 2 * (dom.nt - 1)));
  for (int i = 0; i < dom.nx; ++i) g.boundary.push_back(node(i, 0));
  for (int j = 1; j < dom.nt; ++j) g.boundary.push_back(node(0, j));
  for (int j = 1; j < dom.nt; ++j) g.boundary.push_back(node(dom.nx - 1, j));
  return g;
}

std::vector<LabeledPoint> subsample_ib(std::span<const LabeledPoint> pool,
                                       std::size_t n_q, std::uint64_t seed) {
  if (n_q > pool.size()) {
    throw std::invalid_argument("subsample_ib: requested " + std::to_string(n_q) +
                                " points from a pool of " + std::to_string(pool.size()));
  }
  std::vector<std::size_t> idx(pool.size());
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  std::mt19937_64 rng(seed);
  // partial Fisher-Yates
  for (std::size_t i = 0; i < n_q; ++i) {
    std::uniform_int_distribution<std::size_t> pick(i, idx.size() - 1);
    std::swap(idx[i], idx[pick(rng)]);
  }
  std::vector<LabeledPoint> out;
  out.reserve(n_q);
  for (std::size_t i = 0; i < n_q; ++i) out.push_back(pool[idx[i]]);
  return out;
}

std::size_t lhs_stratum(double value, double lo, double hi, std::size_t n) {
  const double s = std::floor((value - lo) / (hi - lo) * static_cast<double>(n));
  if (s <= 0.0) return 0;
  return std::min(static_cast<std::size_t>(s), n - 1);
}

std::vector<CollocationPoint> lhs_sample(const Domain& dom, std::size_t n_f,
                                         std::uint64_t seed) {
  dom.validate();
  if (n_f == 0) throw std::invalid_argument("lhs_sample: n_f must be >= 1");
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  const auto axis = [&](double lo, double hi) {
    std::vector<std::size_t> perm(n_f);
    std::iota(perm.begin(), perm.end(), std::size_t{0});
    std::shuffle(perm.begin(), perm.end(), rng);
    std::vector<double> values(n_f);
    const double width = (hi - lo) / static_cast<double>(n_f);
    for (std::size_t i = 0; i < n_f; ++i) {
      double x = lo + (static_cast<double>(perm[i]) + unit(rng)) * width;
      // rounding can push a point across a stratum edge
      if (lhs_stratum(x, lo, hi, n_f) != perm[i]) {
        x = lo + (static_cast<double>(perm[i]) + 0.5) * width;
      }
      values[i] = x;
    }
    return values;
  };
  const auto xs = axis(dom.x_lo, dom.x_hi);
  const auto ts = axis(dom.t_lo, dom.t_hi);
  std::vector<CollocationPoint> out(n_f);
  for (std::size_t i = 0; i < n_f; ++i) out[i] = {xs[i], ts[i]};
  return out;
}

std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream) {
  // splitmix64 over (seed, stream)
  std::uint64_t z = seed + 0x9E3779B97F4A7C15ULL * (stream + 1);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

TrainingSet make_training_set(const GridData& grid, std::size_t n_q,
                              std::size_t n_f, std::uint64_t seed) {
  TrainingSet ts;
  ts.domain = grid.domain;
  ts.seed = seed;
  ts.ib = subsample_ib(grid.boundary, n_q, derive_seed(seed, 1));
  ts.collocation = lhs_sample(grid.domain, n_f, derive_seed(seed, 2));
  return ts;
}

double value_std(std::span<const LabeledPoint> points) {
  if (points.empty()) return 0.0;
  double sum = 0.0;
  for (const auto& p : points) sum += p.u + p.v + p.L;
  const double n = 3.0 * static_cast<double>(points.size());
  const double mean = sum / n;
  double ss = 0.0;
  for (const auto& p : points) {
    ss += (p.u - mean) * (p.u - mean) + (p.v - mean) * (p.v - mean) +
          (p.L - mean) * (p.L - mean);
  }
  return std::sqrt(ss / n);
}

TrainingSet inject_noise(const TrainingSet& ts, double noise, std::uint64_t seed) {
  if (!(noise >= 0.0)) throw std::invalid_argument("inject_noise: noise must be >= 0");
  TrainingSet out = ts;
  out.noise_level = noise;
  out.noise_seed = seed;
  if (noise == 0.0) return out;
  const double scale = noise * value_std(ts.ib);
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  for (auto& p : out.ib) {
    p.u += scale * normal(rng);
    p.v += scale * normal(rng);
    p.L += scale * normal(rng);
  }
  return out;
}

namespace {

nlohmann::json domain_json(const Domain& d) {
  return {{"x_lo", d.x_lo}, {"x_hi", d.x_hi}, {"t_lo", d.t_lo},
          {"t_hi", d.t_hi}, {"nx", d.nx},     {"nt", d.nt}};
}

Domain domain_from(const nlohmann::json& j) {
  Domain d;
  d.x_lo = j.at("x_lo").get<double>();
  d.x_hi = j.at("x_hi").get<double>();
  d.t_lo = j.at("t_lo").get<double>();
  d.t_hi = j.at("t_hi").get<double>();
  d.nx = j.at("nx").get<int>();
  d.nt = j.at("nt").get<int>();
  return d;
}

std::vector<std::vector<double>> read_csv(const std::filesystem::path& path,
                                          std::size_t columns) {
  std::ifstream is(path);
  if (!is) throw std::runtime_error("cannot read " + path.string());
  std::string line;
  std::getline(is, line);  // header
  std::vector<std::vector<double>> rows;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    std::vector<double> row;
    row.reserve(columns);
    const char* p = line.c_str();
    char* end = nullptr;
    for (std::size_t c = 0; c < columns; ++c) {
      row.push_back(std::strtod(p, &end));
      if (end == p) throw std::runtime_error("malformed CSV row in " + path.string());
      p = (*end == ',') ? end + 1 : end;
    }
    rows.push_back(std::move(row));
  }
  return rows;
}

}  // namespace

void save_training_set(const TrainingSet& ts, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  nlohmann::json m;
  m["format"] = "yopinn-training-set";
  m["version"] = 1;
  m["seed"] = ts.seed;
  m["noise_level"] = ts.noise_level;
  m["noise_seed"] = ts.noise_seed;
  m["n_q"] = ts.ib.size();
  m["n_f"] = ts.collocation.size();
  m["domain"] = domain_json(ts.domain);
  m["files"] = {{"ib", "ib.csv"}, {"collocation", "collocation.csv"}};
  {
    std::ofstream os(dir / "manifest.json");
    if (!os) throw std::runtime_error("cannot write manifest in " + dir.string());
    os << m.dump(2) << "\n";
  }
  {
    std::ofstream os(dir / "ib.csv");
    os << std::setprecision(17) << "x,t,u,v,L\n";
    for (const auto& p : ts.ib) {
      os << p.x << ',' << p.t << ',' << p.u << ',' << p.v << ',' << p.L << '\n';
    }
  }
  {
    std::ofstream os(dir / "collocation.csv");
    os << std::setprecision(17) << "x,t\n";
    for (const auto& p : ts.collocation) os << p.x << ',' << p.t << '\n';
  }
}

TrainingSet load_training_set(const std::filesystem::path& dir) {
  std::ifstream is(dir / "manifest.json");
  if (!is) throw std::runtime_error("no manifest.json in " + dir.string());
  const auto m = nlohmann::json::parse(is);
  if (m.value("format", std::string{}) != "yopinn-training-set") {
    throw std::runtime_error("not a yopinn training set: " + dir.string());
  }
  TrainingSet ts;
  ts.seed = m.at("seed").get<std::uint64_t>();
  ts.noise_level = m.at("noise_level").get<double>();
  ts.noise_seed = m.at("noise_seed").get<std::uint64_t>();
  ts.domain = domain_from(m.at("domain"));
  for (const auto& r : read_csv(dir / m.at("files").at("ib").get<std::string>(), 5)) {
    ts.ib.push_back({r[0], r[1], r[2], r[3], r[4]});
  }
  for (const auto& r :
       read_csv(dir / m.at("files").at("collocation").get<std::string>(), 2)) {
    ts.collocation.push_back({r[0], r[1]});
  }
  if (ts.ib.size() != m.at("n_q").get<std::size_t>() ||
      ts.collocation.size() != m.at("n_f").get<std::size_t>()) {
    throw std::runtime_error("training set counts disagree with manifest");
  }
  return ts;
}

void write_grid_csv(const std::filesystem::path& path, std::span<const double> xs,
                    std::span<const double> ts, const Eigen::MatrixXd& u,
                    const Eigen::MatrixXd& v, const Eigen::MatrixXd& L) {
  std::ofstream os(path);
  if (!os) throw std::runtime_error("cannot write " + path.string());
  os << std::setprecision(17) << "x,t,u,v,L\n";
  for (std::size_t j = 0; j < ts.size(); ++j) {
    for (std::size_t i = 0; i < xs.size(); ++i) {
      const auto r = static_cast<Eigen::Index>(j);
      const auto c = static_cast<Eigen::Index>(i);
      os << xs[i] << ',' << ts[j] << ',' << u(r, c) << ',' << v(r, c) << ','
         << L(r, c) << '\n';
    }
  }
}

}  // namespace yopinn::data
