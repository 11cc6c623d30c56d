#pragma once

// Closed-form vector rogue waves of the Yajima-Oikawa system
//
//   i S_t + 0.5 S_xx + S L = 0,   L_t = (|S|^2)_x
//
// on a plane-wave background of amplitude a, long-wave offset b and
// wavenumber k.

#include <complex>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace yopinn::exact {

class RogueWaveError : public std::domain_error {
 public:
  using std::domain_error::domain_error;
};

enum class Regime { Bright, Intermediate, Dark };

std::string to_string(Regime r);

/// Background parameters (a, b, k) with the derived quantities.
struct RWParams {
  double a = 1.0;
  double b = 0.0;
  double k = 0.0;
  double m = 0.0;
  double n = 0.0;  // stored positive; the solution depends on n^2 only
  double sigma = 0.0;
  double rho = 0.0;
  double eta = 0.0;
  double k_n = 0.0;  // (2 a^2)^(1/3)
};

struct FieldSample {
  double x = 0.0;
  double t = 0.0;
  double u = 0.0;  // Re S
  double v = 0.0;  // Im S
  double L = 0.0;

  std::complex<double> S() const { return {u, v}; }
  double modulus() const { return std::abs(S()); }
};

/// Requires a > 0, b >= 0, k < 1.5 k_n. Throws RogueWaveError when the
/// cube-root branch would go complex, eta vanishes, or n^2 < 0.
RWParams derive_rw_parameters(double a, double b, double k);

/// The eta branch formula used for k <= -3 k_n (exposed so the seam at
/// k = -3 k_n can be checked against the other branch).
double eta_lower_branch(double sigma, double rho);
double eta_upper_branch(double sigma, double rho);

Regime classify(double a, double k);

FieldSample eval_general_rw(const RWParams& p, double x, double t);

/// The explicit rational bright-bright solution (a, b, k) = (1, 0, 0).
FieldSample eval_bright_bright(double x, double t);

/// Parameter sets used for the three families.
RWParams bright_params();
RWParams intermediate_params();  // k = 2^(1/3) / 2
RWParams dark_params();          // k = 1.2 * 2^(1/3)

struct Coordinate {
  double x;
  double t;
};

/// Max over the grid of |i S_t + 0.5 S_xx + S L| and |L_t - (|S|^2)_x|,
/// with derivatives of the closed form taken by 6th-order central
/// differences of the given step.
double verify_pde_residual(const RWParams& p, std::span<const Coordinate> grid,
                           double step = 1e-3);

/// Uniform nx x nt tensor grid over [x_lo, x_hi] x [t_lo, t_hi].
std::vector<Coordinate> tensor_grid(double x_lo, double x_hi, int nx, double t_lo,
                                    double t_hi, int nt);

}  // namespace yopinn::exact
