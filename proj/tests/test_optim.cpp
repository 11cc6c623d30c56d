#include <doctest.h>

#include <cmath>
#include <fstream>
#include <limits>
#include <random>

#include <nlohmann/json.hpp>

#include "support.hpp"
#include "yopinn/optim.hpp"

using namespace yopinn;
using opt::Vector;

namespace {

opt::ObjectiveFn quadratic(const Eigen::MatrixXd& A, const Vector& b) {
  return [A, b](const Vector& x, Vector& g) {
    g = A * x - b;
    return 0.5 * x.dot(A * x) - b.dot(x);
  };
}

double rosenbrock(const Vector& x, Vector& g) {
  const double a = 1.0 - x(0), b = x(1) - x(0) * x(0);
  g.resize(2);
  g(0) = -2.0 * a - 400.0 * x(0) * b;
  g(1) = 200.0 * b;
  return a * a + 100.0 * b * b;
}

struct TinyProblem {
  net::NetworkParams init = net::init_xavier(net::Architecture::uniform(2, 6), 31);
  data::TrainingSet ts = testing::random_training_set(32, 20, 30);
};

opt::TrainOptions small_schedule(int adam, int lbfgs) {
  opt::TrainOptions o;
  o.schedule = {adam, lbfgs};
  o.checkpoint_every = 0;
  return o;
}

}  // namespace

TEST_CASE("adam: first step has magnitude lr") {
  opt::Adam adam(3);
  Vector x = Vector::Zero(3);
  Vector g(3);
  g << 2.0, -0.5, 1e-3;
  adam.step(x, g);
  CHECK(adam.steps() == 1);
  for (int i = 0; i < 3; ++i) {
    CHECK(std::abs(x(i)) == doctest::Approx(1e-3).epsilon(1e-4));
    CHECK(x(i) * g(i) < 0.0);
  }
  Vector y = Vector::Constant(2, 4.0);
  opt::Adam a2(2);
  a2.step(y, Vector::Zero(2));
  CHECK(y == Vector::Constant(2, 4.0));
}

TEST_CASE("adam: converges on a bowl with bounded steps") {
  const opt::AdamOptions o{1e-2, 0.9, 0.999, 1e-8};
  opt::Adam adam(4, o);
  Vector x(4);
  x << 1.0, -2.0, 0.5, 3.0;
  Vector d(4);
  d << 1.0, 10.0, 0.1, 3.0;
  double worst_step = 0.0;
  for (int k = 0; k < 5000; ++k) {
    const Vector g = d.cwiseProduct(x);
    const Vector before = x;
    adam.step(x, g);
    worst_step = std::max(worst_step, (x - before).cwiseAbs().maxCoeff());
  }
  CHECK(0.5 * x.dot(d.cwiseProduct(x)) < 1e-3);
  // |m_hat / sqrt(v_hat)| <= (1 - b1) / sqrt(1 - b2) in general, but ~1 here
  CHECK(worst_step <= o.lr * (1.0 + 1e-6) * 3.17);
  CHECK_THROWS_AS(opt::Adam(2, {0.0}), std::invalid_argument);
}

TEST_CASE("adam: non-finite gradient names the step") {
  opt::Adam adam(2);
  Vector x = Vector::Ones(2);
  adam.step(x, Vector::Ones(2));
  const Vector kept = x;
  Vector g(2);
  g << 1.0, std::numeric_limits<double>::quiet_NaN();
  try {
    adam.step(x, g);
    FAIL("expected OptimizerError");
  } catch (const opt::OptimizerError& e) {
    CHECK(std::string(e.what()).find("step 2") != std::string::npos);
  }
  CHECK(x == kept);
}

TEST_CASE("lbfgs: SPD quadratic converges in at most d + 2 iterations") {
  std::mt19937_64 rng(12);
  std::normal_distribution<double> n01;
  const int d = 10;
  Eigen::MatrixXd Q(d, d);
  for (int i = 0; i < d * d; ++i) Q.data()[i] = n01(rng);
  const Eigen::MatrixXd A = Q * Q.transpose() + Eigen::MatrixXd::Identity(d, d);
  Vector b(d);
  for (int i = 0; i < d; ++i) b(i) = n01(rng);
  const Vector xstar = A.ldlt().solve(b);
  // a tight curvature condition makes the line search (nearly) exact
  opt::LbfgsOptions o;
  o.gtol = 1e-12;
  o.c2 = 1e-3;
  const auto res = opt::lbfgs_minimize(quadratic(A, b), Vector::Zero(d), o);
  INFO("iterations " << res.iterations);
  CHECK(res.iterations <= d + 2);
  CHECK((res.x - xstar).cwiseAbs().maxCoeff() < 1e-10);
  CHECK(res.status == opt::LbfgsStatus::GradientTolerance);
}

TEST_CASE("lbfgs: rosenbrock") {
  Vector x0(2);
  x0 << -1.2, 1.0;
  opt::LbfgsOptions o;
  o.max_iters = 100;
  const auto res = opt::lbfgs_minimize(rosenbrock, x0, o);
  CHECK(res.f < 1e-8);
  CHECK(res.iterations <= 100);
  for (std::size_t i = 1; i < res.trace.size(); ++i) CHECK(res.trace[i] <= res.trace[i - 1]);
  CHECK(static_cast<int>(res.trace.size()) == res.iterations);
}

TEST_CASE("lbfgs: already at the minimum") {
  Vector x0 = Vector::Ones(2);
  const auto res = opt::lbfgs_minimize(rosenbrock, x0, {});
  CHECK(res.iterations == 0);
  CHECK(res.status == opt::LbfgsStatus::GradientTolerance);
  CHECK(res.x == x0);
}

TEST_CASE("lbfgs: inconsistent gradient fails gracefully") {
  // the reported gradient points uphill
  const opt::ObjectiveFn bad = [](const Vector& x, Vector& g) {
    g = -x;
    return 0.5 * x.squaredNorm();
  };
  const auto res = opt::lbfgs_minimize(bad, Vector::Ones(3), {});
  CHECK(res.status == opt::LbfgsStatus::LineSearchFailed);
  CHECK(res.x.allFinite());
  CHECK(res.f <= 1.5);
  CHECK_THROWS_AS(opt::lbfgs_minimize(bad, Vector::Ones(3), {.memory = 0}), std::invalid_argument);
}

TEST_CASE("train: empty schedule returns the initial parameters") {
  TinyProblem tp;
  loss::Objective obj(tp.init.architecture(), tp.init.scale_n, phys::PhysicsMode::forward(), tp.ts, {});
  const auto r = opt::train(obj, tp.init, phys::PhysicsMode::forward(), small_schedule(0, 0));
  CHECK(r.trace.empty());
  CHECK(net::flatten(r.params) == net::flatten(tp.init));
  CHECK_FALSE(r.aborted);
  CHECK(r.final_loss.total == loss::total_loss(tp.init, phys::PhysicsMode::forward(), tp.ts, 1e-4).total);
  CHECK_THROWS_AS(opt::train(obj, tp.init, phys::PhysicsMode::forward(), small_schedule(-1, 0)),
                  std::invalid_argument);
}

TEST_CASE("train: deterministic, decreasing, traced") {
  TinyProblem tp;
  const auto mode = phys::PhysicsMode::forward();
  auto run = [&] {
    loss::Objective obj(tp.init.architecture(), tp.init.scale_n, mode, tp.ts, {});
    return opt::train(obj, tp.init, mode, small_schedule(30, 20));
  };
  const auto a = run();
  const auto b = run();
  CHECK(net::flatten(a.params) == net::flatten(b.params));
  CHECK(a.final_loss.total == b.final_loss.total);
  REQUIRE(a.trace.size() >= 31);
  CHECK(a.trace.front().phase == opt::Phase::Adam);
  CHECK(a.trace.back().phase == opt::Phase::Lbfgs);
  CHECK(a.trace[29].iteration == 29);
  CHECK(a.final_loss.total < a.trace.front().loss.total);
  for (std::size_t i = 31; i < a.trace.size(); ++i) {
    CHECK(a.trace[i].loss.total <= a.trace[i - 1].loss.total);
  }

  const auto dir = testing::scratch_dir("optim-trace");
  opt::write_trace_csv(dir / "trace.csv", a.trace);
  const auto back = opt::read_trace_csv(dir / "trace.csv");
  REQUIRE(back.size() == a.trace.size());
  for (std::size_t i = 0; i < back.size(); ++i) {
    CHECK(back[i].iteration == a.trace[i].iteration);
    CHECK(back[i].phase == a.trace[i].phase);
    CHECK(back[i].loss.total == a.trace[i].loss.total);
    CHECK(back[i].loss.loss_fL == a.trace[i].loss.loss_fL);
  }
  std::ifstream is(dir / "trace.csv");
  std::string header;
  std::getline(is, header);
  CHECK(header == "iteration,phase,loss_S,loss_L,loss_fS,loss_fL,loss_a,penalty,total,lambda1,lambda2");
}

TEST_CASE("train: periodic checkpoints") {
  TinyProblem tp;
  const auto mode = phys::PhysicsMode::forward();
  loss::Objective obj(tp.init.architecture(), tp.init.scale_n, mode, tp.ts, {});
  auto o = small_schedule(10, 0);
  o.checkpoint_every = 4;
  o.checkpoint_dir = testing::scratch_dir("optim-ckpt");
  const auto r = opt::train(obj, tp.init, mode, o);
  CHECK(std::filesystem::exists(o.checkpoint_dir / "checkpoint_4.json"));
  CHECK(std::filesystem::exists(o.checkpoint_dir / "checkpoint_8.json"));
  CHECK_FALSE(std::filesystem::exists(o.checkpoint_dir / "checkpoint_10.json"));
  std::ifstream is(o.checkpoint_dir / "checkpoint_8.json");
  const auto j = nlohmann::json::parse(is);
  CHECK(j.at("iteration").get<long>() == 8);
  CHECK_FALSE(r.aborted);
}

TEST_CASE("train: a non-finite objective aborts with a checkpoint") {
  TinyProblem tp;
  tp.ts.ib[3].L = std::numeric_limits<double>::quiet_NaN();
  const auto mode = phys::PhysicsMode::forward();
  loss::Objective obj(tp.init.architecture(), tp.init.scale_n, mode, tp.ts, {});
  auto o = small_schedule(5, 5);
  o.checkpoint_dir = testing::scratch_dir("optim-abort");
  const auto r = opt::train(obj, tp.init, mode, o);
  CHECK(r.aborted);
  CHECK_FALSE(r.abort_reason.empty());
  CHECK(std::filesystem::exists(o.checkpoint_dir / "checkpoint_abort.json"));
  CHECK(net::flatten(r.params) == net::flatten(tp.init));
}

TEST_CASE("train: inverse mode learns and logs the coefficients") {
  TinyProblem tp;
  const auto mode = phys::PhysicsMode::inverse();
  loss::Objective obj(tp.init.architecture(), tp.init.scale_n, mode, tp.ts, {});
  std::size_t seen = 0;
  auto o = small_schedule(15, 5);
  o.on_record = [&](const opt::TraceRecord&) { ++seen; };
  const auto r = opt::train(obj, tp.init, mode, o);
  CHECK(seen == r.trace.size());
  CHECK(r.trace.front().lambda1 == 0.0);
  CHECK(r.trace.back().lambda1 != 0.0);
  CHECK(r.mode.trainable());
  CHECK(r.mode.lambda1 == r.trace.back().lambda1);
  CHECK(r.mode.lambda2 == r.trace.back().lambda2);
}
