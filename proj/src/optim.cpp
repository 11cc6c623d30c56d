#include "yopinn/optim.hpp"

#include <algorithm>
#include <cmath>
#include <deque>
#include <fstream>
#include <iomanip>
#include <sstream>

#include <nlohmann/json.hpp>

namespace yopinn::opt {

std::string to_string(Phase p) { return p == Phase::Adam ? "adam" : "lbfgs"; }

std::string to_string(LbfgsStatus s) {
  switch (s) {
    case LbfgsStatus::GradientTolerance: return "gradient_tolerance";
    case LbfgsStatus::FunctionTolerance: return "function_tolerance";
    case LbfgsStatus::MaxIterations: return "max_iterations";
    case LbfgsStatus::LineSearchFailed: return "line_search_failed";
  }
  return "?";
}

// ---------------------------------------------------------------------------
// Adam

Adam::Adam(std::size_t dim, const AdamOptions& options)
    : opt_(options),
      m_(Vector::Zero(static_cast<Eigen::Index>(dim))),
      v_(Vector::Zero(static_cast<Eigen::Index>(dim))) {
  if (!(opt_.lr > 0.0)) throw std::invalid_argument("adam: learning rate must be > 0");
  if (!(opt_.beta1 >= 0.0 && opt_.beta1 < 1.0) || !(opt_.beta2 >= 0.0 && opt_.beta2 < 1.0)) {
    throw std::invalid_argument("adam: betas must lie in [0, 1)");
  }
}

void Adam::step(Vector& x, const Vector& grad) {
  if (grad.size() != m_.size() || x.size() != m_.size()) {
    throw std::invalid_argument("adam: dimension mismatch");
  }
  if (!grad.allFinite()) {
    throw OptimizerError("adam: non-finite gradient at step " + std::to_string(t_ + 1));
  }
  ++t_;
  m_ = opt_.beta1 * m_ + (1.0 - opt_.beta1) * grad;
  v_ = opt_.beta2 * v_ + (1.0 - opt_.beta2) * grad.cwiseAbs2();
  const double bc1 = 1.0 - std::pow(opt_.beta1, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(opt_.beta2, static_cast<double>(t_));
  x.array() -= opt_.lr * (m_.array() / bc1) / ((v_.array() / bc2).sqrt() + opt_.eps);
}

// ---------------------------------------------------------------------------
// Strong-Wolfe line search (bracketing, then zoom with safeguarded cubic
// interpolation).

namespace {

double cubic_minimizer(double x1, double f1, double g1, double x2, double f2, double g2,
                       double lo, double hi) {
  const double mid = 0.5 * (lo + hi);
  if (!std::isfinite(f1) || !std::isfinite(f2) || x1 == x2) return mid;
  const double d1 = g1 + g2 - 3.0 * (f1 - f2) / (x1 - x2);
  const double d2sq = d1 * d1 - g1 * g2;
  if (!(d2sq >= 0.0)) return mid;
  const double d2 = std::sqrt(d2sq);
  const double t = x1 <= x2 ? x2 - (x2 - x1) * ((g2 + d2 - d1) / (g2 - g1 + 2.0 * d2))
                            : x1 - (x1 - x2) * ((g1 + d2 - d1) / (g1 - g2 + 2.0 * d2));
  if (!std::isfinite(t)) return mid;
  return std::clamp(t, lo, hi);
}

struct Trial {
  double t = 0.0;
  double f = 0.0;
  double gtd = 0.0;
  Vector g;
};

struct LineSearch {
  Trial best;
  bool wolfe = false;
  int evaluations = 0;
};

LineSearch strong_wolfe(const ObjectiveFn& fn, const Vector& x, const Vector& d,
                        double t, const Trial& start, const LbfgsOptions& o) {
  LineSearch ls;
  const double f0 = start.f;
  const double gtd0 = start.gtd;
  const double dnorm = d.cwiseAbs().maxCoeff();
  const auto eval = [&](double step) {
    Trial r;
    r.t = step;
    r.f = fn(x + step * d, r.g);
    r.gtd = std::isfinite(r.f) ? r.g.dot(d) : 0.0;
    ++ls.evaluations;
    return r;
  };
  const auto armijo_fails = [&](const Trial& r) {
    return !std::isfinite(r.f) || r.f > f0 + o.c1 * r.t * gtd0;
  };
  const auto curvature_ok = [&](const Trial& r) { return std::abs(r.gtd) <= -o.c2 * gtd0; };
  // Approximate Wolfe conditions (Hager and Zhang) for steps where the
  // decrease in f is below what double precision can resolve.
  const double f_slack = 1e-12 * std::abs(f0);
  const auto approx_wolfe = [&](const Trial& r) {
    return std::isfinite(r.f) && r.f <= f0 + f_slack && r.gtd >= o.c2 * gtd0 &&
           r.gtd <= (2.0 * o.c1 - 1.0) * gtd0;
  };

  Trial prev = start;
  Trial cur = eval(t);
  Trial lo, hi;
  bool bracketed = false;
  while (true) {
    if (armijo_fails(cur) && approx_wolfe(cur)) {
      ls.best = cur;
      ls.wolfe = true;
      return ls;
    }
    if (armijo_fails(cur) || (ls.evaluations > 1 && cur.f >= prev.f)) {
      lo = prev;
      hi = cur;
      bracketed = true;
      break;
    }
    if (curvature_ok(cur)) {
      ls.best = cur;
      ls.wolfe = true;
      return ls;
    }
    if (cur.gtd >= 0.0) {
      lo = cur;
      hi = prev;
      bracketed = true;
      break;
    }
    if (ls.evaluations >= o.max_line_search) break;
    const double next = cubic_minimizer(prev.t, prev.f, prev.gtd, cur.t, cur.f, cur.gtd,
                                        cur.t + 0.01 * (cur.t - prev.t), 10.0 * cur.t);
    prev = std::move(cur);
    cur = eval(next);
  }
  if (!bracketed) {
    // budget exhausted while still extrapolating downhill
    ls.best = armijo_fails(cur) ? prev : cur;
    return ls;
  }

  // zoom: lo always holds the best Armijo point found so far
  bool insufficient = false;
  while (ls.evaluations < o.max_line_search) {
    const double a = std::min(lo.t, hi.t);
    const double b = std::max(lo.t, hi.t);
    if ((b - a) * dnorm < 1e-12) break;
    double step = cubic_minimizer(lo.t, lo.f, lo.gtd, hi.t, hi.f, hi.gtd, a, b);
    const double eps = 0.1 * (b - a);
    if (std::min(b - step, step - a) < eps) {
      if (insufficient || step >= b || step <= a) {
        step = std::abs(step - b) < std::abs(step - a) ? b - eps : a + eps;
        insufficient = false;
      } else {
        insufficient = true;
      }
    } else {
      insufficient = false;
    }
    Trial r = eval(step);
    if (armijo_fails(r) && approx_wolfe(r)) {
      ls.best = std::move(r);
      ls.wolfe = true;
      return ls;
    }
    if (armijo_fails(r) || r.f >= lo.f) {
      hi = std::move(r);
    } else {
      if (curvature_ok(r)) {
        ls.best = std::move(r);
        ls.wolfe = true;
        return ls;
      }
      if (r.gtd * (hi.t - lo.t) >= 0.0) hi = lo;
      lo = std::move(r);
    }
  }
  ls.best = std::move(lo);
  return ls;
}

}  // namespace

LbfgsResult lbfgs_minimize(const ObjectiveFn& fn, Vector x0, const LbfgsOptions& o,
                           const IterationCallback& on_iteration) {
  if (o.max_iters < 0) throw std::invalid_argument("lbfgs: max_iters must be >= 0");
  if (o.memory < 1) throw std::invalid_argument("lbfgs: memory must be >= 1");
  if (!(0.0 < o.c1 && o.c1 < o.c2 && o.c2 < 1.0)) {
    throw std::invalid_argument("lbfgs: need 0 < c1 < c2 < 1");
  }
  LbfgsResult res;
  res.x = std::move(x0);
  res.f = fn(res.x, res.g);
  res.evaluations = 1;
  if (!std::isfinite(res.f)) throw OptimizerError("lbfgs: objective is not finite at the start");
  if (res.g.cwiseAbs().maxCoeff() <= o.gtol) {
    res.status = LbfgsStatus::GradientTolerance;
    return res;
  }

  std::deque<Vector> S, Y;
  std::deque<double> rho;
  std::vector<double> alpha(static_cast<std::size_t>(o.memory));
  Vector d;
  res.status = LbfgsStatus::MaxIterations;
  for (int k = 0; k < o.max_iters; ++k) {
    // two-loop recursion
    d = -res.g;
    const auto m = static_cast<int>(S.size());
    for (int i = m - 1; i >= 0; --i) {
      alpha[i] = rho[i] * S[i].dot(d);
      d -= alpha[i] * Y[i];
    }
    if (m > 0) d *= S.back().dot(Y.back()) / Y.back().squaredNorm();
    for (int i = 0; i < m; ++i) {
      const double beta = rho[i] * Y[i].dot(d);
      d += (alpha[i] - beta) * S[i];
    }
    double gtd = res.g.dot(d);
    if (!(gtd < 0.0)) {
      // lost descent; restart from steepest descent
      S.clear();
      Y.clear();
      rho.clear();
      d = -res.g;
      gtd = -res.g.squaredNorm();
    }
    const double t0 = S.empty() ? std::min(1.0, 1.0 / res.g.cwiseAbs().sum()) : 1.0;

    Trial start;
    start.f = res.f;
    start.gtd = gtd;
    LineSearch ls = strong_wolfe(fn, res.x, d, t0, start, o);
    res.evaluations += ls.evaluations;
    if (ls.best.t == 0.0 || !std::isfinite(ls.best.f) || !(ls.wolfe || ls.best.f < res.f)) {
      res.status = LbfgsStatus::LineSearchFailed;
      break;
    }

    Vector s = ls.best.t * d;
    Vector y = ls.best.g - res.g;
    const double ys = y.dot(s);
    if (ys > 1e-10 * y.squaredNorm()) {
      if (static_cast<int>(S.size()) == o.memory) {
        S.pop_front();
        Y.pop_front();
        rho.pop_front();
      }
      S.push_back(std::move(s));
      Y.push_back(std::move(y));
      rho.push_back(1.0 / ys);
    }
    const double f_old = res.f;
    res.x += ls.best.t * d;
    res.f = ls.best.f;
    res.g = std::move(ls.best.g);
    ++res.iterations;
    res.trace.push_back(res.f);
    if (on_iteration) on_iteration(res.iterations, res.x, res.f);

    if (res.g.cwiseAbs().maxCoeff() <= o.gtol) {
      res.status = LbfgsStatus::GradientTolerance;
      break;
    }
    if (o.ftol > 0.0 && f_old - res.f <= o.ftol * std::max({std::abs(f_old), std::abs(res.f), 1.0})) {
      res.status = LbfgsStatus::FunctionTolerance;
      break;
    }
  }
  return res;
}

// ---------------------------------------------------------------------------
// Training driver

namespace {

nlohmann::json checkpoint_json(const net::NetworkParams& params, const phys::PhysicsMode& mode,
                               long iteration) {
  nlohmann::json j;
  j["format"] = "yopinn-checkpoint";
  j["version"] = 1;
  j["iteration"] = iteration;
  j["mode"] = mode.trainable() ? "inverse" : "forward";
  j["lambda1"] = mode.lambda1;
  j["lambda2"] = mode.lambda2;
  j["network"] = net::to_json(params);
  return j;
}

}  // namespace

void save_checkpoint(const std::filesystem::path& path, const net::NetworkParams& params,
                     const phys::PhysicsMode& mode, long iteration) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream os(path);
  if (!os) throw std::runtime_error("cannot write checkpoint " + path.string());
  os << checkpoint_json(params, mode, iteration).dump(1) << "\n";
}

TrainResult train(loss::Objective& objective, const net::NetworkParams& init,
                  const phys::PhysicsMode& mode, const TrainOptions& options) {
  if (options.schedule.adam_iters < 0 || options.schedule.lbfgs_iters < 0) {
    throw std::invalid_argument("train: iteration counts must be >= 0");
  }
  TrainResult result;
  result.params = init;
  result.mode = mode;
  Vector x = objective.pack(init, mode);
  Vector last_good = x;
  long it = 0;

  const auto lambdas_of = [&](const Vector& v) -> std::pair<double, double> {
    if (!mode.trainable()) return {mode.lambda1, mode.lambda2};
    return {v(v.size() - 2), v(v.size() - 1)};
  };
  const auto record = [&](Phase phase, const loss::LossBreakdown& b, const Vector& at) {
    TraceRecord r;
    r.iteration = it;
    r.phase = phase;
    r.loss = b;
    std::tie(r.lambda1, r.lambda2) = lambdas_of(at);
    result.trace.push_back(r);
    if (options.on_record) options.on_record(r);
  };
  const auto checkpoint = [&](const Vector& at, const std::string& name) {
    if (options.checkpoint_dir.empty()) return;
    net::NetworkParams p = init;
    phys::PhysicsMode md;
    objective.unpack({at.data(), static_cast<std::size_t>(at.size())}, p, md);
    save_checkpoint(options.checkpoint_dir / name, p, md, it);
  };
  const auto after_step = [&](const Vector& at) {
    ++it;
    last_good = at;
    if (options.checkpoint_every > 0 && it % options.checkpoint_every == 0) {
      checkpoint(at, "checkpoint_" + std::to_string(it) + ".json");
    }
  };
  const auto span_of = [](const Vector& v) {
    return std::span<const double>(v.data(), static_cast<std::size_t>(v.size()));
  };

  try {
    Adam adam(objective.dimension(), options.adam);
    Vector g;
    for (int i = 0; i < options.schedule.adam_iters; ++i) {
      const auto b = objective.evaluate(span_of(x), &g);
      record(Phase::Adam, b, x);
      adam.step(x, g);
      after_step(x);
    }

    if (options.schedule.lbfgs_iters > 0) {
      // breakdowns of recent evaluations, matched to accepted iterates by value
      std::deque<loss::LossBreakdown> recent;
      const ObjectiveFn fn = [&](const Vector& v, Vector& grad) {
        try {
          const auto b = objective.evaluate(span_of(v), &grad);
          recent.push_back(b);
          if (recent.size() > static_cast<std::size_t>(options.lbfgs.max_line_search) + 2) {
            recent.pop_front();
          }
          return b.total;
        } catch (const ad::NonFiniteError&) {
          grad.setZero(v.size());
          return std::numeric_limits<double>::infinity();
        }
      };
      const IterationCallback on_iter = [&](int, const Vector& v, double f) {
        auto match = std::find_if(recent.rbegin(), recent.rend(),
                                  [f](const loss::LossBreakdown& b) { return b.total == f; });
        record(Phase::Lbfgs, match != recent.rend() ? *match : objective.evaluate(span_of(v), nullptr), v);
        after_step(v);
      };
      LbfgsOptions lo = options.lbfgs;
      lo.max_iters = options.schedule.lbfgs_iters;
      auto res = lbfgs_minimize(fn, x, lo, on_iter);
      x = std::move(res.x);
      result.lbfgs_status = res.status;
    }
  } catch (const std::exception& e) {
    result.aborted = true;
    result.abort_reason = e.what();
    x = last_good;
    try {
      checkpoint(x, "checkpoint_abort.json");
    } catch (const std::exception&) {
      // the abort reason is the more useful error to surface
    }
  }

  objective.unpack(span_of(x), result.params, result.mode);
  try {
    result.final_loss = objective.evaluate(span_of(x), nullptr);
  } catch (const std::exception& e) {
    if (!result.aborted) {
      result.aborted = true;
      result.abort_reason = e.what();
    }
  }
  return result;
}

void write_trace_csv(const std::filesystem::path& path, const std::vector<TraceRecord>& trace) {
  std::ofstream os(path);
  if (!os) throw std::runtime_error("cannot write " + path.string());
  os << std::setprecision(17)
     << "iteration,phase,loss_S,loss_L,loss_fS,loss_fL,loss_a,penalty,total,lambda1,lambda2\n";
  for (const auto& r : trace) {
    os << r.iteration << ',' << to_string(r.phase) << ',' << r.loss.loss_S << ','
       << r.loss.loss_L << ',' << r.loss.loss_fS << ',' << r.loss.loss_fL << ','
       << r.loss.loss_a << ',' << r.loss.penalty << ',' << r.loss.total << ','
       << r.lambda1 << ',' << r.lambda2 << '\n';
  }
}

std::vector<TraceRecord> read_trace_csv(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw std::runtime_error("cannot read " + path.string());
  std::string line;
  std::getline(is, line);
  std::vector<TraceRecord> out;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    std::istringstream ss(line);
    std::string cell;
    std::vector<std::string> cells;
    while (std::getline(ss, cell, ',')) cells.push_back(cell);
    if (cells.size() != 11) throw std::runtime_error("malformed trace row in " + path.string());
    TraceRecord r;
    r.iteration = std::stol(cells[0]);
    r.phase = cells[1] == "adam" ? Phase::Adam : Phase::Lbfgs;
    r.loss.loss_S = std::stod(cells[2]);
    r.loss.loss_L = std::stod(cells[3]);
    r.loss.loss_fS = std::stod(cells[4]);
    r.loss.loss_fL = std::stod(cells[5]);
    r.loss.loss_a = std::stod(cells[6]);
    r.loss.penalty = std::stod(cells[7]);
    r.loss.total = std::stod(cells[8]);
    r.lambda1 = std::stod(cells[9]);
    r.lambda2 = std::stod(cells[10]);
    out.push_back(r);
  }
  return out;
}

}  // namespace yopinn::opt
