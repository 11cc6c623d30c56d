#include "yopinn/loss.hpp"

#include <cmath>
#include <exception>
#include <stdexcept>
#include <thread>

namespace yopinn::loss {

namespace {

using ad::Matrix;

Matrix row_of(std::span<const data::LabeledPoint> pts, double data::LabeledPoint::*field) {
  Matrix m(1, static_cast<Eigen::Index>(pts.size()));
  for (std::size_t i = 0; i < pts.size(); ++i) m(0, static_cast<Eigen::Index>(i)) = pts[i].*field;
  return m;
}

Matrix row_of(std::span<const data::CollocationPoint> pts,
              double data::CollocationPoint::*field) {
  Matrix m(1, static_cast<Eigen::Index>(pts.size()));
  for (std::size_t i = 0; i < pts.size(); ++i) m(0, static_cast<Eigen::Index>(i)) = pts[i].*field;
  return m;
}

Var sum_squares(const Var& a) { return ad::sum(ad::square(a)); }

}  // namespace

DataTerms data_terms(const net::NetworkVars& vars,
                     std::span<const data::LabeledPoint> points, double weight) {
  if (points.empty()) throw std::invalid_argument("data loss: no labelled points");
  ad::Tape& tape = vars.weights.front().tape();
  using P = data::LabeledPoint;
  const Var x = tape.constant(row_of(points, &P::x));
  const Var t = tape.constant(row_of(points, &P::t));
  const net::Fields f = net::forward(vars, x, t);
  const Var du = f.u - tape.constant(row_of(points, &P::u));
  const Var dv = f.v - tape.constant(row_of(points, &P::v));
  const Var dL = f.L - tape.constant(row_of(points, &P::L));
  return {weight * (sum_squares(du) + sum_squares(dv)), weight * sum_squares(dL)};
}

ResidualTerms residual_terms(const phys::Residuals& r, double weight) {
  return {weight * (sum_squares(r.f_u) + sum_squares(r.f_v)), weight * sum_squares(r.f_L)};
}

ResidualTerms residual_terms(const net::NetworkVars& vars,
                             const phys::Coefficients& coeffs,
                             std::span<const data::CollocationPoint> points,
                             double weight) {
  if (points.empty()) throw std::invalid_argument("residual loss: no collocation points");
  ad::Tape& tape = vars.weights.front().tape();
  using P = data::CollocationPoint;
  const Var x = tape.variable(row_of(points, &P::x));
  const Var t = tape.variable(row_of(points, &P::t));
  return residual_terms(phys::residuals_at(vars, coeffs, x, t), weight);
}

Var slope_recovery(const net::NetworkVars& vars, int N_a) {
  if (vars.slopes.empty()) throw std::invalid_argument("slope recovery needs a hidden layer");
  Var acc;
  for (std::size_t d = 0; d < vars.slopes.size(); ++d) {
    const Var e = ad::exp(ad::mean(vars.slopes[d]));
    acc = d == 0 ? e : acc + e;
  }
  const double scale = static_cast<double>(N_a) / static_cast<double>(vars.slopes.size());
  return ad::reciprocal(scale * acc);
}

Var l2_penalty(const net::NetworkVars& vars) {
  Var acc;
  for (std::size_t d = 0; d < vars.weights.size(); ++d) {
    const Var s = sum_squares(vars.weights[d]);
    acc = d == 0 ? s : acc + s;
  }
  return 0.5 * acc;
}

DataLoss data_loss(const net::NetworkParams& params,
                   std::span<const data::LabeledPoint> points) {
  ad::Tape tape;
  const auto vars = net::bind(tape, params);
  const auto terms = data_terms(vars, points, 1.0 / static_cast<double>(points.size()));
  return {terms.loss_S.scalar(), terms.loss_L.scalar()};
}

ResidualLoss residual_loss(const net::NetworkParams& params,
                           const phys::PhysicsMode& mode,
                           std::span<const data::CollocationPoint> points) {
  ad::Tape tape;
  const auto vars = net::bind(tape, params);
  const auto coeffs = phys::bind(tape, mode);
  const auto terms =
      residual_terms(vars, coeffs, points, 1.0 / static_cast<double>(points.size()));
  return {terms.loss_fS.scalar(), terms.loss_fL.scalar()};
}

double slope_recovery(const net::NetworkParams& params, int N_a) {
  ad::Tape tape;
  return slope_recovery(net::bind(tape, params), N_a).scalar();
}

double l2_penalty(const net::NetworkParams& params) {
  double s = 0.0;
  for (const auto& w : params.weights) s += w.squaredNorm();
  return 0.5 * s;
}

void ensure_finite(const LossBreakdown& b) {
  const std::pair<const char*, double> parts[] = {
      {"Loss_S", b.loss_S},   {"Loss_L", b.loss_L}, {"Loss_fS", b.loss_fS},
      {"Loss_fL", b.loss_fL}, {"Loss_a", b.loss_a}, {"penalty", b.penalty},
      {"total", b.total},
  };
  for (const auto& [name, v] : parts) {
    if (!std::isfinite(v)) throw ad::NonFiniteError(std::string("non-finite ") + name);
  }
}

LossBreakdown total_loss(const net::NetworkParams& params,
                         const phys::PhysicsMode& mode,
                         const data::TrainingSet& ts, double alpha, int N_a) {
  ObjectiveOptions opt;
  opt.alpha = alpha;
  opt.N_a = N_a;
  Objective obj(params.architecture(), params.scale_n, mode, ts, opt);
  const Vector theta = obj.pack(params, mode);
  return obj.evaluate(std::span<const double>(theta.data(), static_cast<std::size_t>(theta.size())), nullptr);
}

// ---------------------------------------------------------------------------

struct Objective::Chunk {
  enum class Kind { Data, Collocation, Global };
  Kind kind = Kind::Data;
  std::vector<data::LabeledPoint> labeled;
  std::vector<data::CollocationPoint> collocation;
  double weight = 1.0;

  // results of the last run
  double first = 0.0;
  double second = 0.0;
  Vector grad;
  std::exception_ptr error;
};

Objective::Objective(const net::Architecture& arch, double scale_n,
                     const phys::PhysicsMode& mode, const data::TrainingSet& ts,
                     const ObjectiveOptions& options)
    : arch_(arch), layout_(arch), scale_n_(scale_n), mode_(mode), options_(options) {
  if (ts.ib.empty()) throw std::invalid_argument("objective: no labelled points");
  if (ts.collocation.empty()) throw std::invalid_argument("objective: no collocation points");
  if (options_.chunk_size == 0) throw std::invalid_argument("objective: chunk_size must be >= 1");
  if (!(options_.alpha >= 0.0)) throw std::invalid_argument("objective: alpha must be >= 0");
  const std::size_t cs = options_.chunk_size;
  const double wq = 1.0 / static_cast<double>(ts.ib.size());
  const double wf = 1.0 / static_cast<double>(ts.collocation.size());
  for (std::size_t i = 0; i < ts.ib.size(); i += cs) {
    auto c = std::make_unique<Chunk>();
    c->kind = Chunk::Kind::Data;
    c->weight = wq;
    c->labeled.assign(ts.ib.begin() + static_cast<std::ptrdiff_t>(i),
                      ts.ib.begin() + static_cast<std::ptrdiff_t>(std::min(i + cs, ts.ib.size())));
    chunks_.push_back(std::move(c));
  }
  for (std::size_t i = 0; i < ts.collocation.size(); i += cs) {
    auto c = std::make_unique<Chunk>();
    c->kind = Chunk::Kind::Collocation;
    c->weight = wf;
    c->collocation.assign(
        ts.collocation.begin() + static_cast<std::ptrdiff_t>(i),
        ts.collocation.begin() +
            static_cast<std::ptrdiff_t>(std::min(i + cs, ts.collocation.size())));
    chunks_.push_back(std::move(c));
  }
  auto g = std::make_unique<Chunk>();
  g->kind = Chunk::Kind::Global;
  chunks_.push_back(std::move(g));

  const int workers = std::max(1, std::min<int>(options_.threads, static_cast<int>(chunks_.size())));
  for (int w = 0; w < workers; ++w) tapes_.push_back(std::make_unique<ad::Tape>());
}

Objective::~Objective() = default;

std::size_t Objective::dimension() const {
  return layout_.size + (mode_.trainable() ? 2 : 0);
}

Vector Objective::pack(const net::NetworkParams& params, const phys::PhysicsMode& mode) const {
  Vector theta(static_cast<Eigen::Index>(dimension()));
  theta.head(static_cast<Eigen::Index>(layout_.size)) = net::flatten(params);
  if (mode_.trainable()) {
    theta(theta.size() - 2) = mode.lambda1;
    theta(theta.size() - 1) = mode.lambda2;
  }
  return theta;
}

void Objective::unpack(std::span<const double> theta, net::NetworkParams& params,
                       phys::PhysicsMode& mode) const {
  if (theta.size() != dimension()) {
    throw std::invalid_argument("objective: parameter vector has length " +
                                std::to_string(theta.size()) + ", expected " +
                                std::to_string(dimension()));
  }
  if (params.weights.size() + 1 != arch_.widths.size()) {
    params = net::init_xavier(arch_, 0);
  }
  params.scale_n = scale_n_;
  net::unflatten(theta.first(layout_.size), params);
  mode = mode_;
  if (mode_.trainable()) {
    mode.lambda1 = theta[layout_.size];
    mode.lambda2 = theta[layout_.size + 1];
  }
}

void Objective::run_chunk(Chunk& c, ad::Tape& tape, const net::NetworkParams& params,
                          const phys::PhysicsMode& mode, bool want_grad) const {
  tape.clear();
  const auto vars = net::bind(tape, params);
  const auto coeffs = phys::bind(tape, mode);
  Var out;
  switch (c.kind) {
    case Chunk::Kind::Data: {
      const auto d = data_terms(vars, c.labeled, c.weight);
      c.first = d.loss_S.scalar();
      c.second = d.loss_L.scalar();
      out = d.loss_S + d.loss_L;
      break;
    }
    case Chunk::Kind::Collocation: {
      const auto r = residual_terms(vars, coeffs, c.collocation, c.weight);
      c.first = r.loss_fS.scalar();
      c.second = r.loss_fL.scalar();
      out = r.loss_fS + r.loss_fL;
      break;
    }
    case Chunk::Kind::Global: {
      const Var la = slope_recovery(vars, options_.N_a);
      const Var pen = l2_penalty(vars);
      c.first = la.scalar();
      c.second = pen.scalar();
      out = la + options_.alpha * pen;
      break;
    }
  }
  if (!want_grad) return;

  std::vector<Var> wrt = vars.all();
  if (mode.trainable()) {
    wrt.push_back(coeffs.lambda1);
    wrt.push_back(coeffs.lambda2);
  }
  const auto grads = tape.gradient(out, wrt);
  c.grad.setZero(static_cast<Eigen::Index>(dimension()));
  std::size_t k = 0;
  const auto put = [&](const net::ParamLayout::Block& b) {
    c.grad.segment(static_cast<Eigen::Index>(b.offset), b.rows * b.cols) =
        grads[k++].reshaped();
  };
  for (std::size_t d = 0; d < layout_.weights.size(); ++d) {
    put(layout_.weights[d]);
    put(layout_.biases[d]);
  }
  for (const auto& b : layout_.slopes) put(b);
  if (mode.trainable()) {
    c.grad(c.grad.size() - 2) = grads[k++](0, 0);
    c.grad(c.grad.size() - 1) = grads[k++](0, 0);
  }
}

LossBreakdown Objective::evaluate(std::span<const double> theta, Vector* grad) {
  net::NetworkParams params;
  phys::PhysicsMode mode;
  unpack(theta, params, mode);

  const bool want_grad = grad != nullptr;
  const std::size_t workers = tapes_.size();
  const auto work = [&](std::size_t w) {
    for (std::size_t i = w; i < chunks_.size(); i += workers) {
      auto& c = *chunks_[i];
      c.error = nullptr;
      try {
        run_chunk(c, *tapes_[w], params, mode, want_grad);
      } catch (...) {
        c.error = std::current_exception();
      }
    }
  };
  if (workers == 1) {
    work(0);
  } else {
    std::vector<std::thread> pool;
    for (std::size_t w = 1; w < workers; ++w) pool.emplace_back(work, w);
    work(0);
    for (auto& th : pool) th.join();
  }

  LossBreakdown b;
  b.alpha = options_.alpha;
  b.N_a = options_.N_a;
  if (want_grad) grad->setZero(static_cast<Eigen::Index>(dimension()));
  // fixed reduction order
  for (const auto& cp : chunks_) {
    const auto& c = *cp;
    if (c.error) std::rethrow_exception(c.error);
    switch (c.kind) {
      case Chunk::Kind::Data:
        b.loss_S += c.first;
        b.loss_L += c.second;
        break;
      case Chunk::Kind::Collocation:
        b.loss_fS += c.first;
        b.loss_fL += c.second;
        break;
      case Chunk::Kind::Global:
        b.loss_a = c.first;
        b.penalty = c.second;
        break;
    }
    if (want_grad) *grad += c.grad;
  }
  b.total = b.sum();
  ensure_finite(b);
  if (want_grad) ad::ensure_finite(*grad, "loss gradient");
  return b;
}

}  // namespace yopinn::loss
