#include <doctest.h>

#include <cmath>
#include <random>
#include <vector>

#include "support.hpp"
#include "yopinn/autodiff.hpp"
#include "yopinn/loss.hpp"
#include "yopinn/network.hpp"

using namespace yopinn;
using ad::Matrix;
using ad::Tape;
using ad::Var;

TEST_CASE("record: custom node partials") {
  Tape tape;
  const Var x = tape.variable(2.0);
  const Var y = tape.variable(3.0);
  const std::vector<Var> in{x, y};
  const std::vector<double> partials{3.0, 2.0};
  const Var p = tape.record(in, 6.0, partials);
  CHECK(p.scalar() == 6.0);
  const auto g = ad::gradient(p, {x, y});
  CHECK(g[0](0, 0) == 3.0);
  CHECK(g[1](0, 0) == 2.0);

  const std::vector<Var> in1{x};
  const std::vector<double> two{1.0, 2.0};
  CHECK_THROWS_AS(tape.record(in1, 0.0, two), ad::TapeError);
}

TEST_CASE("elementary derivatives") {
  Tape tape;
  const Var z = tape.variable(0.0);
  CHECK(ad::gradient(ad::tanh(z), {z})[0](0, 0) == 1.0);
  const Var a = tape.variable(0.1);
  const Var e = ad::exp(a);
  CHECK(ad::gradient(e, {a})[0](0, 0) == e.scalar());
  CHECK(e.scalar() == std::exp(0.1));
}

TEST_CASE("gradient of x*y at (2,3)") {
  Tape tape;
  const Var x = tape.variable(2.0);
  const Var y = tape.variable(3.0);
  const auto g = ad::gradient(x * y, {x, y});
  CHECK(g[0](0, 0) == 3.0);
  CHECK(g[1](0, 0) == 2.0);
}

TEST_CASE("gradient of half squared norm is the matrix itself") {
  std::mt19937_64 rng(3);
  std::normal_distribution<double> n;
  Matrix W(4, 3);
  for (Eigen::Index i = 0; i < W.size(); ++i) W.data()[i] = n(rng);
  Tape tape;
  const Var w = tape.variable(W);
  const auto g = ad::gradient(0.5 * ad::sum(ad::square(w)), {w});
  CHECK(g[0] == W);
}

TEST_CASE("gradient rejects non-scalar output and foreign tapes") {
  Tape tape;
  const Var x = tape.variable(testing::row({1.0, 2.0}));
  CHECK_THROWS_AS(ad::gradient(x * x, {x}), ad::TapeError);

  Tape other;
  const Var y = other.variable(1.0);
  CHECK_THROWS_AS(ad::sum(x) + y, ad::TapeError);

  const Var stale = tape.variable(1.0);
  tape.clear();
  CHECK_THROWS_AS(stale.value(), ad::TapeError);
}

TEST_CASE("zero-path leaves get exact zeros") {
  Tape tape;
  const Var x = tape.variable(1.5);
  const Var unused = tape.variable(testing::row({4.0, 5.0}));
  const auto g = ad::gradient(ad::sin(x), {x, unused});
  CHECK(g[1].rows() == 1);
  CHECK(g[1].cols() == 2);
  CHECK(g[1].isZero(0.0));
}

TEST_CASE("linearity of the gradient") {
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  const Matrix X = Matrix::NullaryExpr(1, 6, [&] { return u(rng); });
  Tape tape;
  const Var x = tape.variable(X);
  const Var f = ad::sum(ad::tanh(x) * ad::exp(x));
  const Var g = ad::sum(ad::sin(x) * x);
  const double c1 = 0.7, c2 = -1.3;
  const Matrix combined = ad::gradient(c1 * f + c2 * g, {x})[0];
  const Matrix separate = c1 * ad::gradient(f, {x})[0] + c2 * ad::gradient(g, {x})[0];
  CHECK((combined - separate).cwiseAbs().maxCoeff() < 1e-15);
}

TEST_CASE("reverse sweeps are bit-reproducible") {
  const auto arch = net::Architecture::uniform(3, 8);
  const auto params = net::init_xavier(arch, 9);
  Tape tape;
  const auto vars = net::bind(tape, params);
  const Var x = tape.constant(testing::row({0.1, -0.4, 2.0}));
  const Var t = tape.constant(testing::row({0.3, 1.1, -1.0}));
  const auto out = net::forward(vars, x, t);
  const Var loss = ad::sum(ad::square(out.u)) + ad::sum(out.L);
  const auto all = vars.all();
  const auto g1 = ad::gradient(loss, all);
  const auto g2 = ad::gradient(loss, all);
  for (std::size_t i = 0; i < g1.size(); ++i) CHECK(g1[i] == g2[i]);
}

TEST_CASE("derivative_graph of x^3 twice at 2 gives 12") {
  Tape tape;
  const Var x = tape.variable(2.0);
  const Var f = x * x * x;
  const Var fx = ad::derivative_graph(f, x);
  CHECK(fx.scalar() == 12.0);
  const Var fxx = ad::derivative_graph(fx, x);
  CHECK(fxx.scalar() == 12.0);
}

TEST_CASE("derivative_graph of sin(x) t twice in x at (0,1) is 0") {
  Tape tape;
  const Var x = tape.variable(0.0);
  const Var t = tape.variable(1.0);
  const Var f = ad::sin(x) * t;
  const Var fxx = ad::derivative_graph(ad::derivative_graph(f, x), x);
  CHECK(fxx.scalar() == 0.0);
  const Var fxt = ad::derivative_graph(ad::derivative_graph(f, x), t);
  CHECK(fxt.scalar() == 1.0);
}

TEST_CASE("derivative_graph requires a leaf and a scalar output") {
  Tape tape;
  const Var x = tape.variable(1.0);
  const Var y = x * x;
  CHECK_THROWS_AS(ad::derivative_graph(y * y, y), ad::TapeError);
  const Var v = tape.variable(testing::row({1.0, 2.0}));
  CHECK_THROWS_AS(ad::derivative_graph(v * v, v), ad::TapeError);
}

TEST_CASE("polynomial second derivatives match the analytic values") {
  std::mt19937_64 rng(21);
  std::uniform_real_distribution<double> u(-3.0, 3.0);
  const Matrix X = Matrix::NullaryExpr(1, 32, [&] { return u(rng); });
  const Matrix T = Matrix::NullaryExpr(1, 32, [&] { return u(rng); });
  Tape tape;
  const Var x = tape.variable(X);
  const Var t = tape.variable(T);
  // f = x^4 t - 2 x^2 t^3 + 5 x t + t^2
  const Var x2 = x * x;
  const Var f = x2 * x2 * t - 2.0 * x2 * (t * t * t) + 5.0 * x * t + t * t;
  const Var fx = ad::derivative_graph(ad::sum(f), x);
  const Var ft = ad::derivative_graph(ad::sum(f), t);
  const Var fxx = ad::derivative_graph(ad::sum(fx), x);
  const Var ftt = ad::derivative_graph(ad::sum(ft), t);
  const Var ftx = ad::derivative_graph(ad::sum(ft), x);
  for (Eigen::Index i = 0; i < X.cols(); ++i) {
    const double a = X(0, i), b = T(0, i);
    const double exx = 12 * a * a * b - 4 * b * b * b;
    const double ett = -12 * a * a * b + 2;
    const double ext = 4 * a * a * a - 12 * a * b * b + 5;
    CHECK(std::abs(fxx.value()(0, i) - exx) <= 1e-10 * std::max(1.0, std::abs(exx)));
    CHECK(std::abs(ftt.value()(0, i) - ett) <= 1e-10 * std::max(1.0, std::abs(ett)));
    CHECK(std::abs(ftx.value()(0, i) - ext) <= 1e-10 * std::max(1.0, std::abs(ext)));
  }
}

namespace {

// Sum of all network outputs at a fixed batch, as a function of the flat
// parameter vector.
double net_sum(const net::Architecture& arch, std::span<const double> flat,
               Eigen::VectorXd* grad) {
  net::NetworkParams p = net::init_xavier(arch, 0);
  net::unflatten(flat, p);
  Tape tape;
  const auto vars = net::bind(tape, p);
  const Var x = tape.constant(testing::row({-1.0, 0.2, 0.9, 3.0}));
  const Var t = tape.constant(testing::row({0.5, -0.7, 1.4, 0.0}));
  const auto out = net::forward(vars, x, t);
  const Var s = ad::sum(out.u) + ad::sum(out.v) + ad::sum(out.L);
  if (grad != nullptr) {
    const auto g = ad::gradient(s, vars.all());
    grad->resize(static_cast<Eigen::Index>(flat.size()));
    Eigen::Index k = 0;
    for (const auto& m : g) {
      for (Eigen::Index i = 0; i < m.size(); ++i) (*grad)(k++) = m.data()[i];
    }
  }
  return s.scalar();
}

}  // namespace

TEST_CASE("2-16-3 network gradient against central differences") {
  const net::Architecture arch{{2, 16, 3}};
  std::mt19937_64 rng(8);
  std::uniform_real_distribution<double> jitter(-0.05, 0.05);
  net::NetworkParams p = net::init_xavier(arch, 77);
  for (auto& a : p.slopes) a.array() += 0.02;
  for (auto& b : p.biases) b = b.unaryExpr([&](double) { return jitter(rng); });
  Eigen::VectorXd flat = net::flatten(p);
  Eigen::VectorXd grad;
  net_sum(arch, {flat.data(), static_cast<std::size_t>(flat.size())}, &grad);
  const double h = 1e-5;
  double worst = 0.0;
  for (Eigen::Index i = 0; i < flat.size(); ++i) {
    const double orig = flat(i);
    flat(i) = orig + h;
    const double fp = net_sum(arch, {flat.data(), static_cast<std::size_t>(flat.size())}, nullptr);
    flat(i) = orig - h;
    const double fm = net_sum(arch, {flat.data(), static_cast<std::size_t>(flat.size())}, nullptr);
    flat(i) = orig;
    const double fd = (fp - fm) / (2 * h);
    worst = std::max(worst, std::abs(grad(i) - fd) / (std::abs(grad(i)) + ad::kRelativeFloor));
  }
  CHECK(worst < 1e-6);
}

TEST_CASE("network u_xx against a fourth-order finite-difference stencil") {
  const auto arch = net::Architecture::uniform(3, 12);
  const auto params = net::init_xavier(arch, 4);
  const Matrix X = testing::row({-2.0, -0.3, 0.0, 1.7});
  const Matrix T = testing::row({0.4, -1.0, 0.2, 1.5});
  Tape tape;
  const auto vars = net::bind(tape, params);
  const Var x = tape.variable(X);
  const Var t = tape.variable(T);
  const Var u = net::forward(vars, x, t).u;
  const Var ux = ad::derivative_graph(ad::sum(u), x);
  const Var uxx = ad::derivative_graph(ad::sum(ux), x);
  const double h = 1e-3;
  for (Eigen::Index i = 0; i < X.cols(); ++i) {
    const auto at = [&](double dx) {
      const double xs[] = {X(0, i) + dx};
      const double ts[] = {T(0, i)};
      return net::predict(params, xs, ts)(0, 0);
    };
    const double fd =
        (-at(2 * h) + 16 * at(h) - 30 * at(0) + 16 * at(-h) - at(-2 * h)) / (12 * h * h);
    CHECK(std::abs(uxx.value()(0, i) - fd) <= 1e-4 * std::abs(fd) + 1e-7);
  }
}

TEST_CASE("check_gradient_fd on a quadratic form") {
  const ad::TapeFunction f = [](Tape&, std::span<const Var> p) {
    return 3.0 * p[0] * p[0] + p[0] * p[1] - 2.0 * p[1] * p[1] + 0.5 * p[2] * p[2] + p[1] * p[2];
  };
  const double point[] = {0.3, -1.2, 2.5};
  const auto r = ad::check_gradient_fd(f, point, 1e-4);
  CHECK(r.max_relative_deviation < 1e-9);
  CHECK(r.analytic.size() == 3);
  CHECK_THROWS_AS(ad::check_gradient_fd(f, point, 0.0), std::invalid_argument);
}

TEST_CASE("check_gradient_fd propagates NaN as an error") {
  const ad::TapeFunction f = [](Tape&, std::span<const Var> p) {
    return ad::reciprocal(p[0] - p[0]) * 0.0;
  };
  const double point[] = {1.0};
  CHECK_THROWS_AS(ad::check_gradient_fd(f, point, 1e-4), ad::NonFiniteError);
}

TEST_CASE("slope recovery gradient against its closed form") {
  const auto arch = net::Architecture::uniform(3, 5);
  net::NetworkParams p = net::init_xavier(arch, 2);
  std::mt19937_64 rng(2);
  std::uniform_real_distribution<double> u(0.05, 0.3);
  for (auto& a : p.slopes) a = a.unaryExpr([&](double) { return u(rng); });
  Tape tape;
  const auto vars = net::bind(tape, p);
  const Var la = loss::slope_recovery(vars, 100);
  const auto g = ad::gradient(la, vars.slopes);
  const double D1 = static_cast<double>(p.slopes.size());
  double s = 0.0;
  for (const auto& a : p.slopes) s += std::exp(a.mean());
  const double value = 1.0 / ((100.0 / D1) * s);
  CHECK(std::abs(la.scalar() - value) < 1e-15);
  for (std::size_t d = 0; d < p.slopes.size(); ++d) {
    const double Nd = static_cast<double>(p.slopes[d].size());
    const double expect = -value * value * (100.0 / D1) * std::exp(p.slopes[d].mean()) / Nd;
    for (Eigen::Index i = 0; i < g[d].size(); ++i) {
      CHECK(std::abs(g[d](i) - expect) <= 1e-8 * std::abs(expect));
    }
  }
}

TEST_CASE("vectorized tanh matches std::tanh") {
  Matrix m(1, 9);
  m << -800.0, -20.0, -1.0, -0.625, -1e-300, 0.0, 0.3, 0.7, 19.5;
  Matrix r = m;
  ad::tanh_inplace(r);
  for (Eigen::Index i = 0; i < m.size(); ++i) {
    const double e = std::tanh(m(0, i));
    CHECK(std::abs(r(0, i) - e) <= 1e-15 * std::max(std::abs(e), 1e-300));
  }
  Matrix nan(1, 1);
  nan(0, 0) = std::nan("");
  ad::tanh_inplace(nan);
  CHECK(std::isnan(nan(0, 0)));
}

TEST_CASE("ensure_finite names the quantity") {
  Matrix m = Matrix::Zero(2, 2);
  m(1, 0) = std::numeric_limits<double>::infinity();
  try {
    ad::ensure_finite(m, "widget");
    FAIL("expected NonFiniteError");
  } catch (const ad::NonFiniteError& e) {
    CHECK(std::string(e.what()).find("widget") != std::string::npos);
  }
}
