#include "yopinn/exact_yo.hpp"

#include <algorithm>
#include <array>
#include <cmath>

namespace yopinn::exact {

std::string to_string(Regime r) {
  switch (r) {
    case Regime::Bright: return "bright";
    case Regime::Intermediate: return "intermediate";
    case Regime::Dark: return "dark";
  }
  return "?";
}

// rho -+ sqrt(rho^2 - sigma^3) loses every digit when sigma^3 << rho^2 (near
// k = -3 k_n), so the cancelling side is rewritten as sigma^3 / (rho +- root).
double eta_lower_branch(double sigma, double rho) {
  const double root = std::sqrt(rho * rho - sigma * sigma * sigma);
  const double s3 = sigma * sigma * sigma;
  return -std::cbrt(rho > 0.0 ? s3 / (rho + root) : rho - root);
}

double eta_upper_branch(double sigma, double rho) {
  const double root = std::sqrt(rho * rho - sigma * sigma * sigma);
  const double s3 = sigma * sigma * sigma;
  return std::cbrt(rho > 0.0 ? -s3 / (rho + root) : root - rho);
}

RWParams derive_rw_parameters(double a, double b, double k) {
  if (!(a > 0.0)) throw RogueWaveError("background amplitude a must be positive");
  if (!(b >= 0.0)) throw RogueWaveError("long-wave offset b must be non-negative");
  RWParams p;
  p.a = a;
  p.b = b;
  p.k = k;
  p.k_n = std::cbrt(2.0 * a * a);
  if (!(k < 1.5 * p.k_n)) {
    throw RogueWaveError("wavenumber k must lie below 1.5 k_n");
  }
  const double a2 = a * a;
  const double k3 = k * k * k;
  p.sigma = k3 * k / 9.0 + 6.0 * a2 * k;
  const double c = 27.0 * a2 + 5.0 * k3;
  p.rho = k3 * k3 / 2.0 - c * c / 54.0;
  const double disc = p.rho * p.rho - p.sigma * p.sigma * p.sigma;
  if (disc < 0.0) {
    throw RogueWaveError("rho^2 - sigma^3 < 0: eta has no real branch for k = " +
                         std::to_string(k));
  }
  p.eta = (k <= -3.0 * p.k_n) ? eta_lower_branch(p.sigma, p.rho)
                              : eta_upper_branch(p.sigma, p.rho);
  if (p.eta == 0.0) throw RogueWaveError("degenerate parameters: eta = 0");
  const double inner = 3.0 * (k * k + p.eta + p.sigma / p.eta);
  if (inner < 0.0) throw RogueWaveError("no real m for k = " + std::to_string(k));
  p.m = (5.0 * k - std::sqrt(inner)) / 6.0;
  const double n2 = (3.0 * p.m - k) * (p.m - k);
  if (!(n2 > 0.0)) {
    throw RogueWaveError("(3m - k)(m - k) <= 0: no real rogue wave for k = " +
                         std::to_string(k));
  }
  p.n = std::sqrt(n2);
  return p;
}

Regime classify(double a, double k) {
  const double k_n = std::cbrt(2.0 * a * a);
  if (k <= 0.0) return Regime::Bright;
  if (k < std::cbrt(4.0 / 3.0) * k_n) return Regime::Intermediate;
  if (k < 1.5 * k_n) return Regime::Dark;
  throw RogueWaveError("k outside the rogue-wave range");
}

FieldSample eval_general_rw(const RWParams& p, double x, double t) {
  using cd = std::complex<double>;
  const double n2 = p.n * p.n;
  const double xi = x - p.m * t;
  const double den = xi * xi + n2 * t * t + 1.0 / (4.0 * n2);
  const double two_m_k = 2.0 * p.m - p.k;
  const cd num(1.0 / (2.0 * two_m_k * (p.m - p.k)), t + x / two_m_k);
  const double phase = p.k * x - (0.5 * p.k * p.k - p.b) * t;
  const cd carrier = p.a * cd(std::cos(phase), std::sin(phase));
  const cd s = carrier * (1.0 - num / den);
  FieldSample f;
  f.x = x;
  f.t = t;
  f.u = s.real();
  f.v = s.imag();
  f.L = p.b + 2.0 * (n2 * t * t - xi * xi + 1.0 / (4.0 * n2)) / (den * den);
  return f;
}

FieldSample eval_bright_bright(double x, double t) {
  const double q = 3.0 * t * t + 3.0 * t * x + 3.0 * x * x;
  const double den = q + 1.0;
  FieldSample f;
  f.x = x;
  f.t = t;
  f.u = (q - 2.0) / den;
  f.v = (3.0 * x - 3.0 * t) / den;
  f.L = 3.0 * (3.0 * t * t - 6.0 * t * x - 6.0 * x * x + 2.0) / (den * den);
  return f;
}

RWParams bright_params() { return derive_rw_parameters(1.0, 0.0, 0.0); }
RWParams intermediate_params() { return derive_rw_parameters(1.0, 0.0, 0.5 * std::cbrt(2.0)); }
RWParams dark_params() { return derive_rw_parameters(1.0, 0.0, 1.2 * std::cbrt(2.0)); }

namespace {

// 6th-order central stencils on offsets -3..3.
constexpr std::array<double, 7> kFirst = {-1.0, 9.0, -45.0, 0.0, 45.0, -9.0, 1.0};
constexpr double kFirstDen = 60.0;
constexpr std::array<double, 7> kSecond = {2.0, -27.0, 270.0, -490.0, 270.0, -27.0, 2.0};
constexpr double kSecondDen = 180.0;

}  // namespace

double verify_pde_residual(const RWParams& p, std::span<const Coordinate> grid,
                           double step) {
  using cd = std::complex<double>;
  double worst = 0.0;
  for (const auto& c : grid) {
    cd s_t{}, s_xx{};
    double l_t = 0.0, mod2_x = 0.0;
    for (int j = -3; j <= 3; ++j) {
      const auto wx = eval_general_rw(p, c.x + j * step, c.t);
      const auto wt = eval_general_rw(p, c.x, c.t + j * step);
      const double w1 = kFirst[j + 3];
      const double w2 = kSecond[j + 3];
      s_t += w1 * wt.S();
      l_t += w1 * wt.L;
      s_xx += w2 * wx.S();
      mod2_x += w1 * std::norm(wx.S());
    }
    s_t /= kFirstDen * step;
    l_t /= kFirstDen * step;
    mod2_x /= kFirstDen * step;
    s_xx /= kSecondDen * step * step;
    const auto f = eval_general_rw(p, c.x, c.t);
    const double r1 = std::abs(cd(0.0, 1.0) * s_t + 0.5 * s_xx + f.S() * f.L);
    const double r2 = std::abs(l_t - mod2_x);
    worst = std::max({worst, r1, r2});
  }
  return worst;
}

std::vector<Coordinate> tensor_grid(double x_lo, double x_hi, int nx, double t_lo,
                                    double t_hi, int nt) {
  if (nx < 2 || nt < 2) throw std::invalid_argument("tensor_grid needs at least 2x2 nodes");
  std::vector<Coordinate> g;
  g.reserve(static_cast<std::size_t>(nx) * static_cast<std::size_t>(nt));
  const double dx = (x_hi - x_lo) / (nx - 1);
  const double dt = (t_hi - t_lo) / (nt - 1);
  for (int j = 0; j < nt; ++j) {
    for (int i = 0; i < nx; ++i) g.push_back({x_lo + i * dx, t_lo + j * dt});
  }
  return g;
}

}  // namespace yopinn::exact
