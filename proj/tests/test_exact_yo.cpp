#include <doctest.h>

#include <cmath>
#include <random>

#include "yopinn/exact_yo.hpp"

using namespace yopinn::exact;

// Reference values computed independently at 30 digits (mpmath).
constexpr double kIntermediateM = -0.099091597516168935784;
constexpr double kIntermediateN = 0.8221939407728766913;
constexpr double kDarkM = 0.41792630564809853957;
constexpr double kDarkN = 0.53139889602462350139;

TEST_CASE("bright parameters") {
  const auto p = derive_rw_parameters(1.0, 0.0, 0.0);
  CHECK(std::abs(p.m + 0.5) < 1e-12);
  CHECK(std::abs(p.n - std::sqrt(3.0) / 2.0) < 1e-12);
  CHECK(p.k_n == doctest::Approx(std::cbrt(2.0)).epsilon(1e-15));
}

TEST_CASE("intermediate and dark parameters match the reference") {
  const auto mid = intermediate_params();
  CHECK(std::abs(mid.m - kIntermediateM) < 1e-12);
  CHECK(std::abs(mid.n - kIntermediateN) < 1e-12);
  const auto dark = dark_params();
  CHECK(std::abs(dark.m - kDarkM) < 1e-12);
  CHECK(std::abs(dark.n - kDarkN) < 1e-12);
}

TEST_CASE("parameter domain errors") {
  CHECK_THROWS_AS(derive_rw_parameters(0.0, 0.0, 0.0), RogueWaveError);
  CHECK_THROWS_AS(derive_rw_parameters(-1.0, 0.0, 0.0), RogueWaveError);
  CHECK_THROWS_AS(derive_rw_parameters(1.0, -0.1, 0.0), RogueWaveError);
  CHECK_THROWS_AS(derive_rw_parameters(1.0, 0.0, 1.5 * std::cbrt(2.0)), RogueWaveError);
  CHECK_THROWS_AS(derive_rw_parameters(1.0, 0.0, 3.0), RogueWaveError);
}

TEST_CASE("eta branches agree at the seam k = -3 k_n") {
  for (double a : {0.5, 1.0, 2.0}) {
    const double k_n = std::cbrt(2.0 * a * a);
    const double k = -3.0 * k_n;
    const double sigma = std::pow(k, 4) / 9.0 + 6.0 * a * a * k;
    const double rho = std::pow(k, 6) / 2.0 - std::pow(27.0 * a * a + 5.0 * k * k * k, 2) / 54.0;
    const double lo = eta_lower_branch(sigma, rho);
    const double hi = eta_upper_branch(sigma, rho);
    CHECK(std::abs(lo - hi) <= 1e-9 * std::abs(lo));
    const auto below = derive_rw_parameters(a, 0.0, k * (1 + 1e-9));
    const auto above = derive_rw_parameters(a, 0.0, k * (1 - 1e-9));
    CHECK(std::abs(below.m - above.m) < 1e-6);
  }
}

TEST_CASE("regime classification") {
  const double kn = std::cbrt(2.0);
  CHECK(classify(1.0, -1.0) == Regime::Bright);
  CHECK(classify(1.0, 0.0) == Regime::Bright);
  CHECK(classify(1.0, 0.5 * kn) == Regime::Intermediate);
  CHECK(classify(1.0, 1.11 * kn) == Regime::Dark);
  CHECK(classify(1.0, 1.10 * kn) == Regime::Intermediate);
  CHECK(classify(1.0, 1.2 * kn) == Regime::Dark);
  CHECK(to_string(Regime::Intermediate) == "intermediate");
}

TEST_CASE("bright-bright values") {
  const auto o = eval_bright_bright(0.0, 0.0);
  CHECK(o.u == -2.0);
  CHECK(o.v == 0.0);
  CHECK(o.L == 6.0);
  CHECK(o.modulus() == 2.0);
  const auto g = eval_general_rw(bright_params(), 0.0, 0.0);
  CHECK(std::abs(g.modulus() - 2.0) < 1e-14);
  CHECK(std::abs(g.L - 6.0) < 1e-14);

  const auto one = eval_bright_bright(1.0, 0.0);
  CHECK(one.u == 0.25);
  CHECK(one.v == 0.75);
  CHECK(one.L == -0.75);
}

TEST_CASE("closed form equals the general formula for (a,b,k) = (1,0,0)") {
  std::mt19937_64 rng(1);
  std::uniform_real_distribution<double> ux(-5.0, 5.0), ut(-2.0, 2.0);
  const auto p = bright_params();
  double worst = 0.0;
  for (int i = 0; i < 10000; ++i) {
    const double x = ux(rng), t = ut(rng);
    const auto a = eval_bright_bright(x, t);
    const auto b = eval_general_rw(p, x, t);
    worst = std::max({worst, std::abs(a.u - b.u), std::abs(a.v - b.v), std::abs(a.L - b.L)});
  }
  CHECK(worst < 1e-12);
}

TEST_CASE("plane-wave background far from the core") {
  const auto f = eval_general_rw(bright_params(), 1000.0, 0.0);
  CHECK(std::abs(f.modulus() - 1.0) < 1e-4);
  CHECK(std::abs(f.L) < 1e-4);
  auto p = derive_rw_parameters(1.0, 0.7, -0.5);
  const auto g = eval_general_rw(p, -2000.0, 3.0);
  CHECK(std::abs(g.L - 0.7) < 1e-4);
}

TEST_CASE("determinism, symmetry and the sign of n") {
  const auto p = dark_params();
  const auto a = eval_general_rw(p, 0.37, -1.1);
  const auto b = eval_general_rw(p, 0.37, -1.1);
  CHECK(a.L == b.L);
  CHECK(a.u == b.u);
  auto q = p;
  q.n = -p.n;
  const auto c = eval_general_rw(q, 0.37, -1.1);
  CHECK(c.u == a.u);
  CHECK(c.L == a.L);

  std::mt19937_64 rng(4);
  std::uniform_real_distribution<double> u(-4.0, 4.0);
  for (int i = 0; i < 100; ++i) {
    const double x = u(rng), t = u(rng);
    CHECK(eval_bright_bright(x, t).modulus() ==
          doctest::Approx(eval_bright_bright(-x, -t).modulus()).epsilon(1e-14));
  }
}

TEST_CASE("denominator never drops below 1/(4 n^2)") {
  for (const auto& p : {bright_params(), intermediate_params(), dark_params()}) {
    const double floor = 1.0 / (4.0 * p.n * p.n);
    std::mt19937_64 rng(6);
    std::uniform_real_distribution<double> u(-5.0, 5.0);
    for (int i = 0; i < 1000; ++i) {
      const double x = u(rng), t = u(rng);
      const double den = (x - p.m * t) * (x - p.m * t) + p.n * p.n * t * t + floor;
      CHECK(den >= floor);
      CHECK(std::isfinite(eval_general_rw(p, x, t).L));
    }
  }
}

TEST_CASE("closed forms satisfy the PDE") {
  const auto grid = tensor_grid(-5.0, 5.0, 101, -2.0, 2.0, 41);
  CHECK(grid.size() == 101 * 41);
  CHECK(verify_pde_residual(bright_params(), grid) < 1e-6);
  CHECK(verify_pde_residual(intermediate_params(), grid) < 1e-6);
  CHECK(verify_pde_residual(dark_params(), grid) < 1e-6);

  const auto far = tensor_grid(995.0, 1005.0, 5, -1.0, 1.0, 3);
  CHECK(verify_pde_residual(bright_params(), far, 0.05) < 1e-10);
}

TEST_CASE("a perturbed solution is caught by the residual check") {
  // m nudged away from its derived value
  auto p = bright_params();
  p.m += 1e-3;
  const auto grid = tensor_grid(-2.0, 2.0, 11, -1.0, 1.0, 5);
  CHECK(verify_pde_residual(p, grid) > 1e-4);
}
