#include "yopinn/checks.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <functional>
#include <iomanip>
#include <numbers>
#include <ostream>
#include <random>
#include <sstream>

#include <Eigen/Dense>

#include "yopinn/autodiff.hpp"
#include "yopinn/datagen.hpp"
#include "yopinn/exact_yo.hpp"
#include "yopinn/loss.hpp"
#include "yopinn/network.hpp"
#include "yopinn/optim.hpp"
#include "yopinn/residuals.hpp"

namespace yopinn::checks {

namespace {

using Clock = std::chrono::steady_clock;
using Eigen::MatrixXd;
using Eigen::VectorXd;

std::string fmt(double v) {
  std::ostringstream os;
  os << std::setprecision(3) << std::scientific << v;
  return os.str();
}

/// Runs body, which returns (passed, detail), and times it.
CheckResult timed(std::string name, const std::function<std::pair<bool, std::string>()>& body) {
  CheckResult r;
  r.name = std::move(name);
  const auto start = Clock::now();
  try {
    std::tie(r.passed, r.detail) = body();
  } catch (const std::exception& e) {
    r.passed = false;
    r.detail = std::string("exception: ") + e.what();
  }
  r.seconds = std::chrono::duration<double>(Clock::now() - start).count();
  return r;
}

std::span<const double> span_of(const VectorXd& v) {
  return {v.data(), static_cast<std::size_t>(v.size())};
}

data::TrainingSet random_training_set(std::mt19937_64& rng, std::size_t n_ib, std::size_t n_f) {
  std::uniform_real_distribution<double> ux(-5.0, 5.0), ut(-2.0, 2.0), uv(-1.5, 1.5);
  data::TrainingSet ts;
  for (std::size_t i = 0; i < n_ib; ++i) ts.ib.push_back({ux(rng), ut(rng), uv(rng), uv(rng), uv(rng)});
  for (std::size_t i = 0; i < n_f; ++i) ts.collocation.push_back({ux(rng), ut(rng)});
  return ts;
}

/// Xavier init with slopes jittered around their default so the slope
/// gradients are not all identical.
net::NetworkParams random_params(const net::Architecture& arch, std::mt19937_64& rng) {
  net::NetworkParams p = net::init_xavier(arch, rng());
  std::uniform_real_distribution<double> jitter(-0.03, 0.03);
  for (auto& a : p.slopes) {
    for (Eigen::Index i = 0; i < a.size(); ++i) a(i) += jitter(rng);
  }
  for (auto& b : p.biases) {
    for (Eigen::Index i = 0; i < b.size(); ++i) b(i) = jitter(rng);
  }
  return p;
}

}  // namespace

// ---------------------------------------------------------------------------

std::vector<CheckResult> exact_solution_suite(std::uint64_t seed) {
  std::vector<CheckResult> out;
  out.push_back(timed("exact: bright parameters m=-1/2, n=sqrt(3)/2", [] {
    const auto p = exact::derive_rw_parameters(1.0, 0.0, 0.0);
    const double dm = std::abs(p.m + 0.5);
    const double dn = std::abs(p.n - std::sqrt(3.0) / 2.0);
    return std::pair{dm < 1e-12 && dn < 1e-12, "|dm|=" + fmt(dm) + " |dn|=" + fmt(dn)};
  }));
  out.push_back(timed("exact: bright-bright closed form equals general formula", [seed] {
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> ux(-5.0, 5.0), ut(-2.0, 2.0);
    const auto p = exact::derive_rw_parameters(1.0, 0.0, 0.0);
    double worst = 0.0;
    for (int i = 0; i < 10000; ++i) {
      const double x = ux(rng), t = ut(rng);
      const auto a = exact::eval_bright_bright(x, t);
      const auto b = exact::eval_general_rw(p, x, t);
      worst = std::max({worst, std::abs(a.u - b.u), std::abs(a.v - b.v), std::abs(a.L - b.L)});
    }
    return std::pair{worst < 1e-12, "max dev " + fmt(worst) + " over 1e4 points"};
  }));
  out.push_back(timed("exact: PDE residual of bright, intermediate, dark", [] {
    const auto grid = exact::tensor_grid(-5.0, 5.0, 201, -2.0, 2.0, 81);
    double worst = 0.0;
    std::string detail;
    for (const auto& [name, p] : {std::pair{"bright", exact::bright_params()},
                                  std::pair{"intermediate", exact::intermediate_params()},
                                  std::pair{"dark", exact::dark_params()}}) {
      const double r = exact::verify_pde_residual(p, grid);
      worst = std::max(worst, r);
      detail += std::string(name) + "=" + fmt(r) + " ";
    }
    return std::pair{worst < 1e-6, detail + "on 201x81 grid"};
  }));
  out.back().passed = out.back().passed && out.back().seconds < 30.0;
  out.push_back(timed("exact: |S(0,0)| = 2 and L(0,0) = 6", [] {
    const auto f = exact::eval_bright_bright(0.0, 0.0);
    const bool ok = f.modulus() == 2.0 && f.L == 6.0;
    std::ostringstream os;
    os << std::setprecision(17) << "|S|=" << f.modulus() << " L=" << f.L;
    return std::pair{ok, os.str()};
  }));
  return out;
}

// ---------------------------------------------------------------------------

std::vector<CheckResult> autodiff_suite(std::uint64_t seed) {
  std::vector<CheckResult> out;
  out.push_back(timed("autodiff: objective gradient vs central differences, 20 nets", [seed] {
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> lam(0.2, 1.5), alpha(0.0, 0.1);
    double worst = 0.0;
    for (int k = 0; k < 20; ++k) {
      const auto arch = net::Architecture::uniform(1 + k % 3, 3 + k % 4);
      const data::TrainingSet ts = random_training_set(rng, 5, 6);
      const bool inverse = k % 2 == 1;
      const phys::PhysicsMode mode = inverse ? phys::PhysicsMode::inverse(lam(rng), lam(rng))
                                             : phys::PhysicsMode::forward();
      loss::ObjectiveOptions oo;
      oo.alpha = alpha(rng);
      oo.chunk_size = 4;
      loss::Objective obj(arch, net::kDefaultScale, mode, ts, oo);
      VectorXd theta = obj.pack(random_params(arch, rng), mode);
      VectorXd grad;
      obj.evaluate(span_of(theta), &grad);
      VectorXd fd(theta.size());
      const double h = 1e-6;
      for (Eigen::Index i = 0; i < theta.size(); ++i) {
        const double orig = theta(i);
        theta(i) = orig + h;
        const double fp = obj.evaluate(span_of(theta), nullptr).total;
        theta(i) = orig - h;
        const double fm = obj.evaluate(span_of(theta), nullptr).total;
        theta(i) = orig;
        fd(i) = (fp - fm) / (2.0 * h);
      }
      const double dev = (grad - fd).lpNorm<Eigen::Infinity>() / grad.lpNorm<Eigen::Infinity>();
      worst = std::max(worst, dev);
    }
    return std::pair{worst < 1e-6, "max relative deviation " + fmt(worst)};
  }));
  out.push_back(timed("autodiff: second derivatives of polynomial fixtures", [seed] {
    std::mt19937_64 rng(seed + 1);
    std::uniform_real_distribution<double> u(-2.0, 2.0);
    constexpr int B = 16;
    MatrixXd xv(1, B), tv(1, B);
    for (int i = 0; i < B; ++i) {
      xv(0, i) = u(rng);
      tv(0, i) = u(rng);
    }
    ad::Tape tape;
    const ad::Var x = tape.variable(xv);
    const ad::Var t = tape.variable(tv);
    // f = x^3 t^2 + 2 x^2 t - 3 t^4 + x^5 - 7 x t
    const ad::Var x2 = x * x, t2 = t * t;
    const ad::Var f = x2 * x * t2 + 2.0 * x2 * t - 3.0 * t2 * t2 + x2 * x2 * x - 7.0 * x * t;
    const ad::Var fx = ad::derivative_graph(ad::sum(f), x);
    const ad::Var ft = ad::derivative_graph(ad::sum(f), t);
    const ad::Var fxx = ad::derivative_graph(ad::sum(fx), x);
    const ad::Var ftt = ad::derivative_graph(ad::sum(ft), t);
    const ad::Var fxt = ad::derivative_graph(ad::sum(fx), t);
    double worst = 0.0;
    for (int i = 0; i < B; ++i) {
      const double X = xv(0, i), T = tv(0, i);
      const double exx = 6 * X * T * T + 4 * T + 20 * X * X * X;
      const double ett = 2 * X * X * X - 36 * T * T;
      const double ext = 6 * X * X * T + 4 * X - 7;
      worst = std::max({worst, std::abs(fxx.value()(0, i) - exx) / std::max(1.0, std::abs(exx)),
                        std::abs(ftt.value()(0, i) - ett) / std::max(1.0, std::abs(ett)),
                        std::abs(fxt.value()(0, i) - ext) / std::max(1.0, std::abs(ext))});
    }
    return std::pair{worst < 1e-10, "max deviation " + fmt(worst)};
  }));
  double total = 0.0;
  for (const auto& r : out) total += r.seconds;
  if (total >= 10.0) {
    for (auto& r : out) {
      r.passed = false;
      r.detail += " (suite took " + fmt(total) + " s)";
    }
  }
  return out;
}

// ---------------------------------------------------------------------------

std::vector<CheckResult> regularization_suite(std::uint64_t seed) {
  std::vector<CheckResult> out;
  out.push_back(timed("regularization: gradient step shrinks weights by (1 - eta*alpha)", [seed] {
    std::mt19937_64 rng(seed);
    const auto arch = net::Architecture::uniform(2, 4);  // 55 parameters
    const net::ParamLayout layout(arch);
    const VectorXd mask = layout.weight_mask();
    const double eta = 1e-2;
    double worst = 0.0;
    for (int k = 0; k < 5; ++k) {
      const data::TrainingSet ts = random_training_set(rng, 6, 6);
      const double alpha = std::pow(10.0, -1.0 - k);
      loss::ObjectiveOptions with, without;
      with.alpha = alpha;
      without.alpha = 0.0;
      const auto mode = phys::PhysicsMode::forward();
      loss::Objective reg(arch, net::kDefaultScale, mode, ts, with);
      loss::Objective plain(arch, net::kDefaultScale, mode, ts, without);
      const VectorXd theta = reg.pack(random_params(arch, rng), mode);
      VectorXd g_reg, g_plain;
      reg.evaluate(span_of(theta), &g_reg);
      plain.evaluate(span_of(theta), &g_plain);
      const VectorXd step = theta - eta * g_reg;
      const VectorXd shrink =
          (mask.array() * (1.0 - eta * alpha) + (1.0 - mask.array())) * theta.array() -
          eta * g_plain.array();
      const VectorXd scale = theta.cwiseAbs() + eta * g_plain.cwiseAbs();
      worst = std::max(worst, ((step - shrink).cwiseAbs().array() / scale.array()).maxCoeff());
    }
    const double eps = std::numeric_limits<double>::epsilon();
    return std::pair{worst < 8 * eps, "max relative deviation " + fmt(worst)};
  }));
  out.push_back(timed("regularization: quadratic minimizer and eigen-rescaling", [seed] {
    std::mt19937_64 rng(seed + 1);
    std::normal_distribution<double> normal;
    std::uniform_real_distribution<double> loguni(-2.0, 1.0);
    double worst_min = 0.0, worst_eig = 0.0;
    for (int d : {2, 5, 10, 20}) {
      MatrixXd A(d, d);
      for (Eigen::Index i = 0; i < A.size(); ++i) A.data()[i] = normal(rng);
      const MatrixXd Q = Eigen::HouseholderQR<MatrixXd>(A).householderQ();
      VectorXd lambda(d);
      for (int i = 0; i < d; ++i) lambda(i) = std::pow(10.0, loguni(rng));
      const MatrixXd H = Q * lambda.asDiagonal() * Q.transpose();
      VectorXd w_star(d);
      for (int i = 0; i < d; ++i) w_star(i) = normal(rng);
      for (double alpha : {1e-4, 1e-2, 1.0}) {
        const opt::ObjectiveFn f = [&](const VectorXd& w, VectorXd& g) {
          const VectorXd r = w - w_star;
          const VectorXd Hr = H * r;
          g = Hr + alpha * w;
          return 0.5 * r.dot(Hr) + 0.5 * alpha * w.squaredNorm();
        };
        opt::LbfgsOptions lo;
        lo.max_iters = 1000;
        lo.gtol = 1e-13;
        lo.ftol = 0.0;
        const auto res = opt::lbfgs_minimize(f, VectorXd::Zero(d), lo);
        const MatrixXd Hreg = H + alpha * MatrixXd::Identity(d, d);
        const VectorXd oracle = Hreg.ldlt().solve(H * w_star);
        worst_min = std::max(worst_min, (res.x - oracle).lpNorm<Eigen::Infinity>());
        const VectorXd in_basis = Q.transpose() * res.x;
        const VectorXd star_basis = Q.transpose() * w_star;
        for (int i = 0; i < d; ++i) {
          const double expect = lambda(i) / (lambda(i) + alpha) * star_basis(i);
          worst_eig = std::max(worst_eig, std::abs(in_basis(i) - expect));
        }
      }
    }
    return std::pair{worst_min < 1e-8 && worst_eig < 1e-8,
                     "minimizer dev " + fmt(worst_min) + ", eigen dev " + fmt(worst_eig)};
  }));
  return out;
}

// ---------------------------------------------------------------------------

std::vector<CheckResult> loss_suite(std::uint64_t seed) {
  std::vector<CheckResult> out;
  out.push_back(timed("loss: slope recovery at initialization is 1/(100 e^0.1)", [seed] {
    const double expect = 1.0 / (100.0 * std::exp(0.1));
    double worst = 0.0;
    for (int layers : {1, 2, 4, 9}) {
      const auto p = net::init_xavier(net::Architecture::uniform(layers, 40), seed + layers);
      worst = std::max(worst, std::abs(loss::slope_recovery(p) - expect));
    }
    return std::pair{worst < 1e-12, "max deviation " + fmt(worst) + " over depths 1,2,4,9"};
  }));
  out.push_back(timed("loss: penalty gradient equals the weights", [seed] {
    std::mt19937_64 rng(seed);
    const auto arch = net::Architecture::uniform(3, 7);
    const auto p = random_params(arch, rng);
    ad::Tape tape;
    const net::NetworkVars vars = net::bind(tape, p);
    const auto grads = ad::gradient(loss::l2_penalty(vars), vars.all());
    bool exact = true;
    for (std::size_t d = 0; d < p.weights.size(); ++d) {
      exact = exact && grads[2 * d] == p.weights[d];
      exact = exact && grads[2 * d + 1].isZero(0.0);
    }
    return std::pair{exact, exact ? "bitwise equal" : "mismatch"};
  }));
  return out;
}

// ---------------------------------------------------------------------------

std::vector<CheckResult> sampling_suite(std::uint64_t seed) {
  std::vector<CheckResult> out;
  out.push_back(timed("sampling: one LHS point per stratum per axis", [seed] {
    data::Domain dom;
    std::string detail;
    bool ok = true;
    for (std::size_t n : {std::size_t{1}, std::size_t{100}, std::size_t{20000}}) {
      const auto pts = data::lhs_sample(dom, n, seed + n);
      std::vector<int> cx(n, 0), ct(n, 0);
      for (const auto& p : pts) {
        ++cx[data::lhs_stratum(p.x, dom.x_lo, dom.x_hi, n)];
        ++ct[data::lhs_stratum(p.t, dom.t_lo, dom.t_hi, n)];
      }
      const bool exact = pts.size() == n &&
                         std::all_of(cx.begin(), cx.end(), [](int c) { return c == 1; }) &&
                         std::all_of(ct.begin(), ct.end(), [](int c) { return c == 1; });
      ok = ok && exact;
      detail += "N_f=" + std::to_string(n) + (exact ? " ok " : " FAIL ");
    }
    return std::pair{ok, detail};
  }));
  out.push_back(timed("sampling: injected noise std within 5% of target", [seed] {
    data::Domain dom;
    dom.nx = 1200;
    dom.nt = 500;
    const auto grid = data::build_grid(exact::bright_params(), dom);
    const auto clean = data::make_training_set(grid, 2000, 10, seed);
    const double level = 0.02;
    const auto noisy = data::inject_noise(clean, level, seed + 1);
    double sum = 0.0, sum2 = 0.0;
    std::size_t n = 0;
    for (std::size_t i = 0; i < clean.ib.size(); ++i) {
      for (double d : {noisy.ib[i].u - clean.ib[i].u, noisy.ib[i].v - clean.ib[i].v,
                       noisy.ib[i].L - clean.ib[i].L}) {
        sum += d;
        sum2 += d * d;
        ++n;
      }
    }
    const double mean = sum / n;
    const double sd = std::sqrt(sum2 / n - mean * mean);
    const double target = level * data::value_std(clean.ib);
    const double rel = std::abs(sd / target - 1.0);
    return std::pair{rel < 0.05, "std/target - 1 = " + fmt(rel)};
  }));
  return out;
}

std::vector<CheckResult> property_suite() {
  std::vector<CheckResult> all;
  for (auto&& suite : {autodiff_suite(), regularization_suite(), loss_suite(), sampling_suite()}) {
    all.insert(all.end(), suite.begin(), suite.end());
  }
  return all;
}

void print(std::ostream& os, const std::vector<CheckResult>& results) {
  for (const auto& r : results) {
    os << (r.passed ? "PASS " : "FAIL ") << r.name << " (" << r.detail << ", "
       << std::fixed << std::setprecision(2) << r.seconds << " s)" << std::defaultfloat << '\n';
  }
}

bool all_passed(const std::vector<CheckResult>& results) {
  return std::all_of(results.begin(), results.end(), [](const auto& r) { return r.passed; });
}

}  // namespace yopinn::checks
