#include "yopinn/autodiff.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <sstream>

namespace yopinn::ad {

namespace {

std::atomic<std::uint64_t> g_next_generation{1};

std::string shape(const Matrix& m) {
  std::ostringstream os;
  os << m.rows() << "x" << m.cols();
  return os.str();
}

[[noreturn]] void shape_error(std::string_view what, const Matrix& a,
                              const Matrix& b) {
  throw TapeError(std::string(what) + ": shape mismatch " + shape(a) +
                  " vs " + shape(b));
}

}  // namespace

void tanh_inplace(Matrix& m) {
  // Rational approximation below 0.625 and 1 - 2/(e^{2|x|}+1) above it
  // (Cephes coefficients), so that Eigen's packet exp does the heavy work.
  constexpr double P0 = -9.64399179425052238628e-1;
  constexpr double P1 = -9.92877231001918586564e1;
  constexpr double P2 = -1.61468768441708447952e3;
  constexpr double Q0 = 1.12811678491632931402e2;
  constexpr double Q1 = 2.23548839060100448583e3;
  constexpr double Q2 = 4.84406305325125486048e3;
  auto x = m.array();
  const auto a = x.abs();
  const auto z = x.square();
  const auto small = x + x * z * (((P0 * z + P1) * z + P2) / (((z + Q0) * z + Q1) * z + Q2));
  const auto large = x.sign() * (1.0 - 2.0 / ((2.0 * a).exp() + 1.0));
  m = (a > 0.625).select(large, small).matrix();
}

std::string_view op_name(Op op) {
  switch (op) {
    case Op::Leaf: return "leaf";
    case Op::Constant: return "constant";
    case Op::Add: return "add";
    case Op::Sub: return "sub";
    case Op::Mul: return "mul";
    case Op::Neg: return "neg";
    case Op::Scale: return "scale";
    case Op::AddScalar: return "add_scalar";
    case Op::Square: return "square";
    case Op::Tanh: return "tanh";
    case Op::Exp: return "exp";
    case Op::Sin: return "sin";
    case Op::Cos: return "cos";
    case Op::Reciprocal: return "reciprocal";
    case Op::MatMul: return "matmul";
    case Op::AddCol: return "add_col";
    case Op::MulCol: return "mul_col";
    case Op::SumCols: return "sum_cols";
    case Op::BroadcastCols: return "broadcast_cols";
    case Op::MulScalar: return "mul_scalar";
    case Op::Sum: return "sum";
    case Op::Fill: return "fill";
    case Op::VStack: return "vstack";
    case Op::SliceRows: return "slice_rows";
    case Op::PadRows: return "pad_rows";
    case Op::ScaledTanh: return "scaled_tanh";
    case Op::ScaledTanhBackward: return "scaled_tanh_backward";
    case Op::TanhBackward: return "tanh_backward";
    case Op::Custom: return "custom";
  }
  return "?";
}

// ---------------------------------------------------------------------------
// Var

const Matrix& Var::value() const {
  if (!valid()) throw TapeError("Var: stale or empty handle");
  return tape_->nodes_[id_].value;
}

double Var::scalar() const {
  const Matrix& v = value();
  if (v.size() != 1) throw TapeError("Var::scalar on " + shape(v) + " value");
  return v(0, 0);
}

Tape& Var::tape() const {
  if (tape_ == nullptr) throw TapeError("Var: empty handle");
  return *tape_;
}

bool Var::valid() const {
  return tape_ != nullptr && generation_ == tape_->generation_ &&
         id_ >= 0 && static_cast<std::size_t>(id_) < tape_->size_;
}

// ---------------------------------------------------------------------------
// Tape: construction

Tape::Tape() : generation_(g_next_generation.fetch_add(1)) {}

void Tape::clear() {
  size_ = 0;
  generation_ = g_next_generation.fetch_add(1);
}

std::int32_t Tape::alloc(Op op, std::int32_t p0, std::int32_t p1,
                         std::int32_t p2) {
  if (size_ == nodes_.size()) nodes_.emplace_back();
  Node& n = nodes_[size_];
  n.op = op;
  n.p0 = p0;
  n.p1 = p1;
  n.p2 = p2;
  n.k = 0.0;
  n.i0 = 0;
  n.i1 = 0;
  n.trans_a = false;
  n.trans_b = false;
  n.extra.clear();
  n.partials.clear();
  return static_cast<std::int32_t>(size_++);
}

void Tape::check(const Var& v) const {
  if (v.tape_ != this || v.generation_ != generation_ || v.id_ < 0 ||
      static_cast<std::size_t>(v.id_) >= size_) {
    throw TapeError("Var belongs to a different tape or tape generation");
  }
}

Var Tape::variable(const Matrix& value) {
  const auto id = alloc(Op::Leaf);
  nodes_[id].value = value;
  return handle(id);
}

Var Tape::variable(double value) {
  const auto id = alloc(Op::Leaf);
  nodes_[id].value.setConstant(1, 1, value);
  return handle(id);
}

Var Tape::constant(const Matrix& value) {
  const auto id = alloc(Op::Constant);
  nodes_[id].value = value;
  return handle(id);
}

Var Tape::constant(double value) {
  const auto id = alloc(Op::Constant);
  nodes_[id].value.setConstant(1, 1, value);
  return handle(id);
}

Var Tape::record(std::span<const Var> inputs, double value,
                 std::span<const double> partials) {
  if (inputs.size() != partials.size()) {
    throw TapeError("record: partials and inputs differ in length");
  }
  for (const Var& v : inputs) {
    check(v);
    if (v.value().size() != 1) throw TapeError("record: inputs must be 1x1");
  }
  const auto id = alloc(Op::Custom);
  Node& n = nodes_[id];
  for (const Var& v : inputs) n.extra.push_back(v.id_);
  n.partials.assign(partials.begin(), partials.end());
  n.value.setConstant(1, 1, value);
  return handle(id);
}

Var Tape::unary(Op op, const Var& a, double k) {
  check(a);
  const auto id = alloc(op, a.id_);
  Node& n = nodes_[id];
  n.k = k;
  const Matrix& x = nodes_[a.id_].value;
  switch (op) {
    case Op::Neg: n.value = -x; break;
    case Op::Scale: n.value = k * x; break;
    case Op::AddScalar: n.value = (x.array() + k).matrix(); break;
    case Op::Square: n.value = x.array().square().matrix(); break;
    case Op::Tanh:
      n.value = x;
      tanh_inplace(n.value);
      break;
    case Op::Exp: n.value = x.array().exp().matrix(); break;
    case Op::Sin: n.value = x.array().sin().matrix(); break;
    case Op::Cos: n.value = x.array().cos().matrix(); break;
    case Op::Reciprocal: n.value = x.array().inverse().matrix(); break;
    case Op::SumCols: n.value = x.rowwise().sum(); break;
    case Op::Sum: n.value.setConstant(1, 1, x.sum()); break;
    default: throw TapeError("unary: unsupported op " + std::string(op_name(op)));
  }
  return handle(id);
}

Var Tape::binary(Op op, const Var& a, const Var& b) {
  check(a);
  check(b);
  const Matrix& x0 = nodes_[a.id_].value;
  const Matrix& y0 = nodes_[b.id_].value;
  switch (op) {
    case Op::Add:
    case Op::Sub:
    case Op::Mul:
      if (x0.rows() != y0.rows() || x0.cols() != y0.cols()) {
        shape_error(op_name(op), x0, y0);
      }
      break;
    case Op::AddCol:
    case Op::MulCol:
      if (y0.cols() != 1 || y0.rows() != x0.rows()) shape_error(op_name(op), x0, y0);
      break;
    case Op::MulScalar:
      if (x0.size() != 1) shape_error(op_name(op), x0, y0);
      break;
    default:
      throw TapeError("binary: unsupported op " + std::string(op_name(op)));
  }
  const auto id = alloc(op, a.id_, b.id_);
  Node& n = nodes_[id];
  const Matrix& x = nodes_[a.id_].value;
  const Matrix& y = nodes_[b.id_].value;
  switch (op) {
    case Op::Add: n.value = x + y; break;
    case Op::Sub: n.value = x - y; break;
    case Op::Mul: n.value = (x.array() * y.array()).matrix(); break;
    case Op::AddCol: n.value = x.colwise() + y.col(0); break;
    case Op::MulCol:
      n.value = (x.array().colwise() * y.col(0).array()).matrix();
      break;
    case Op::MulScalar: n.value = x(0, 0) * y; break;
    default: break;
  }
  return handle(id);
}

Var Tape::matmul(const Var& a, const Var& b, bool trans_a, bool trans_b) {
  check(a);
  check(b);
  {
    const Matrix& x = nodes_[a.id_].value;
    const Matrix& y = nodes_[b.id_].value;
    const auto inner_a = trans_a ? x.rows() : x.cols();
    const auto inner_b = trans_b ? y.cols() : y.rows();
    if (inner_a != inner_b) shape_error("matmul", x, y);
  }
  const auto id = alloc(Op::MatMul, a.id_, b.id_);
  Node& n = nodes_[id];
  n.trans_a = trans_a;
  n.trans_b = trans_b;
  const Matrix& x = nodes_[a.id_].value;
  const Matrix& y = nodes_[b.id_].value;
  const auto r = trans_a ? x.cols() : x.rows();
  const auto c = trans_b ? y.rows() : y.cols();
  n.value.resize(r, c);
  if (!trans_a && !trans_b) n.value.noalias() = x * y;
  else if (trans_a && !trans_b) n.value.noalias() = x.transpose() * y;
  else if (!trans_a && trans_b) n.value.noalias() = x * y.transpose();
  else n.value.noalias() = x.transpose() * y.transpose();
  return handle(id);
}

Var Tape::broadcast_cols(const Var& a, Eigen::Index cols) {
  check(a);
  if (nodes_[a.id_].value.cols() != 1) {
    throw TapeError("broadcast_cols: input must be a column vector");
  }
  const auto id = alloc(Op::BroadcastCols, a.id_);
  Node& n = nodes_[id];
  n.i0 = cols;
  n.value = nodes_[a.id_].value.replicate(1, cols);
  return handle(id);
}

Var Tape::fill(const Var& scalar, Eigen::Index rows, Eigen::Index cols) {
  check(scalar);
  if (nodes_[scalar.id_].value.size() != 1) throw TapeError("fill: input must be 1x1");
  const auto id = alloc(Op::Fill, scalar.id_);
  Node& n = nodes_[id];
  n.i0 = rows;
  n.i1 = cols;
  n.value.setConstant(rows, cols, nodes_[scalar.id_].value(0, 0));
  return handle(id);
}

Var Tape::vstack(const Var& a, const Var& b) {
  check(a);
  check(b);
  if (nodes_[a.id_].value.cols() != nodes_[b.id_].value.cols()) {
    shape_error("vstack", nodes_[a.id_].value, nodes_[b.id_].value);
  }
  const auto id = alloc(Op::VStack, a.id_, b.id_);
  Node& n = nodes_[id];
  const Matrix& x = nodes_[a.id_].value;
  const Matrix& y = nodes_[b.id_].value;
  n.value.resize(x.rows() + y.rows(), x.cols());
  n.value.topRows(x.rows()) = x;
  n.value.bottomRows(y.rows()) = y;
  return handle(id);
}

Var Tape::slice_rows(const Var& a, Eigen::Index start, Eigen::Index count) {
  check(a);
  if (start < 0 || count < 0 || start + count > nodes_[a.id_].value.rows()) {
    throw TapeError("slice_rows: range out of bounds");
  }
  const auto id = alloc(Op::SliceRows, a.id_);
  Node& n = nodes_[id];
  n.i0 = start;
  n.i1 = count;
  n.value = nodes_[a.id_].value.middleRows(start, count);
  return handle(id);
}

Var Tape::pad_rows(const Var& a, Eigen::Index start, Eigen::Index total) {
  check(a);
  const auto rows = nodes_[a.id_].value.rows();
  if (start < 0 || start + rows > total) throw TapeError("pad_rows: range out of bounds");
  const auto id = alloc(Op::PadRows, a.id_);
  Node& n = nodes_[id];
  n.i0 = start;
  n.i1 = total;
  const Matrix& x = nodes_[a.id_].value;
  n.value.setZero(total, x.cols());
  n.value.middleRows(start, rows) = x;
  return handle(id);
}

Var Tape::scaled_tanh(const Var& z, const Var& slope) {
  check(z);
  check(slope);
  {
    const Matrix& x = nodes_[z.id_].value;
    const Matrix& s = nodes_[slope.id_].value;
    if (s.cols() != 1 || s.rows() != x.rows()) shape_error("scaled_tanh", x, s);
  }
  const auto id = alloc(Op::ScaledTanh, z.id_, slope.id_);
  Node& n = nodes_[id];
  const Matrix& x = nodes_[z.id_].value;
  const Matrix& s = nodes_[slope.id_].value;
  n.value = (x.array().colwise() * s.col(0).array()).matrix();
  tanh_inplace(n.value);
  return handle(id);
}

Var Tape::scaled_tanh_backward(const Var& g, const Var& y, const Var& slope) {
  check(g);
  check(y);
  check(slope);
  const auto id = alloc(Op::ScaledTanhBackward, g.id_, y.id_, slope.id_);
  Node& n = nodes_[id];
  const Matrix& gv = nodes_[g.id_].value;
  const Matrix& yv = nodes_[y.id_].value;
  const Matrix& s = nodes_[slope.id_].value;
  if (gv.rows() != yv.rows() || gv.cols() != yv.cols() || s.rows() != yv.rows()) {
    shape_error("scaled_tanh_backward", gv, yv);
  }
  n.value = ((gv.array() * (1.0 - yv.array().square())).colwise() *
             s.col(0).array())
                .matrix();
  return handle(id);
}

Var Tape::tanh_backward(const Var& g, const Var& y) {
  check(g);
  check(y);
  const auto id = alloc(Op::TanhBackward, g.id_, y.id_);
  Node& n = nodes_[id];
  const Matrix& gv = nodes_[g.id_].value;
  const Matrix& yv = nodes_[y.id_].value;
  if (gv.rows() != yv.rows() || gv.cols() != yv.cols()) shape_error("tanh_backward", gv, yv);
  n.value = (gv.array() * (1.0 - yv.array().square())).matrix();
  return handle(id);
}

// ---------------------------------------------------------------------------
// Tape: backward sweeps

void Tape::parents_of(std::int32_t id, std::vector<std::int32_t>& out) const {
  out.clear();
  const Node& n = nodes_[id];
  if (n.op == Op::Custom) {
    out = n.extra;
    return;
  }
  if (n.p0 >= 0) out.push_back(n.p0);
  if (n.p1 >= 0) out.push_back(n.p1);
  if (n.p2 >= 0) out.push_back(n.p2);
}

std::vector<char> Tape::reachable(std::int32_t output,
                                  std::span<const Var> wrt) const {
  std::vector<char> reach(static_cast<std::size_t>(output) + 1, 0);
  std::int32_t lo = output + 1;
  for (const Var& w : wrt) {
    if (w.id_ <= output) {
      reach[w.id_] = 1;
      lo = std::min(lo, w.id_);
    }
  }
  std::vector<std::int32_t> ps;
  for (std::int32_t i = lo + 1; i <= output; ++i) {
    if (reach[i]) continue;
    parents_of(i, ps);
    for (auto p : ps) {
      if (reach[p]) {
        reach[i] = 1;
        break;
      }
    }
  }
  return reach;
}

void Tape::accumulate(std::int32_t id, const Matrix& g) {
  if (has_adj_[id]) {
    adj_[id] += g;
  } else {
    adj_[id] = g;
    has_adj_[id] = 1;
  }
}

template <class Expr>
void Tape::accumulate_expr(std::int32_t id, const Expr& g, Eigen::Index rows,
                           Eigen::Index cols) {
  if (has_adj_[id]) {
    adj_[id] += g;
  } else {
    adj_[id].resize(rows, cols);
    adj_[id] = g;
    has_adj_[id] = 1;
  }
}

std::vector<Matrix> Tape::gradient(const Var& output, std::span<const Var> wrt) {
  check(output);
  for (const Var& w : wrt) check(w);
  if (output.value().size() != 1) {
    throw TapeError("gradient: output must be a 1x1 scalar, got " +
                    shape(output.value()));
  }
  const auto out = output.id_;
  const auto reach = reachable(out, wrt);
  if (adj_.size() < static_cast<std::size_t>(out) + 1) adj_.resize(out + 1);
  has_adj_.assign(static_cast<std::size_t>(out) + 1, 0);
  adj_[out].setOnes(1, 1);
  has_adj_[out] = 1;

  std::int32_t lo = out;
  for (const Var& w : wrt) lo = std::min(lo, w.id_);
  for (std::int32_t i = out; i > lo; --i) {
    if (!has_adj_[i] || !reach[i]) continue;
    numeric_vjp(i, adj_[i], reach);
  }

  std::vector<Matrix> result;
  result.reserve(wrt.size());
  for (const Var& w : wrt) {
    if (w.id_ <= out && has_adj_[w.id_] && reach[w.id_]) {
      result.push_back(adj_[w.id_]);
    } else {
      result.push_back(Matrix::Zero(w.rows(), w.cols()));
    }
  }
  return result;
}

void Tape::numeric_vjp(std::int32_t id, const Matrix& g,
                       const std::vector<char>& reach) {
  const Node& n = nodes_[id];
  const auto want = [&](std::int32_t p) { return p >= 0 && reach[p]; };
  const auto a = n.p0;
  const auto b = n.p1;
  const auto c = n.p2;
  const Matrix& y = n.value;

  switch (n.op) {
    case Op::Leaf:
    case Op::Constant:
      break;
    case Op::Add:
      if (want(a)) accumulate(a, g);
      if (want(b)) accumulate(b, g);
      break;
    case Op::Sub:
      if (want(a)) accumulate(a, g);
      if (want(b)) accumulate_expr(b, -g, g.rows(), g.cols());
      break;
    case Op::Mul:
      if (want(a)) {
        accumulate_expr(a, (g.array() * nodes_[b].value.array()).matrix(),
                        g.rows(), g.cols());
      }
      if (want(b)) {
        accumulate_expr(b, (g.array() * nodes_[a].value.array()).matrix(),
                        g.rows(), g.cols());
      }
      break;
    case Op::Neg:
      if (want(a)) accumulate_expr(a, -g, g.rows(), g.cols());
      break;
    case Op::Scale:
      if (want(a)) accumulate_expr(a, n.k * g, g.rows(), g.cols());
      break;
    case Op::AddScalar:
      if (want(a)) accumulate(a, g);
      break;
    case Op::Square:
      if (want(a)) {
        accumulate_expr(a, (2.0 * g.array() * nodes_[a].value.array()).matrix(),
                        g.rows(), g.cols());
      }
      break;
    case Op::Tanh:
      if (want(a)) {
        accumulate_expr(a, (g.array() * (1.0 - y.array().square())).matrix(),
                        g.rows(), g.cols());
      }
      break;
    case Op::Exp:
      if (want(a)) accumulate_expr(a, (g.array() * y.array()).matrix(), g.rows(), g.cols());
      break;
    case Op::Sin:
      if (want(a)) {
        accumulate_expr(a, (g.array() * nodes_[a].value.array().cos()).matrix(),
                        g.rows(), g.cols());
      }
      break;
    case Op::Cos:
      if (want(a)) {
        accumulate_expr(a, (-g.array() * nodes_[a].value.array().sin()).matrix(),
                        g.rows(), g.cols());
      }
      break;
    case Op::Reciprocal:
      if (want(a)) {
        accumulate_expr(a, (-g.array() * y.array().square()).matrix(), g.rows(),
                        g.cols());
      }
      break;
    case Op::MatMul: {
      const Matrix& A = nodes_[a].value;
      const Matrix& B = nodes_[b].value;
      if (want(a)) {
        if (!has_adj_[a]) {
          adj_[a].setZero(A.rows(), A.cols());
          has_adj_[a] = 1;
        }
        Matrix& ga = adj_[a];
        if (!n.trans_a) {
          if (!n.trans_b) ga.noalias() += g * B.transpose();
          else ga.noalias() += g * B;
        } else {
          if (!n.trans_b) ga.noalias() += B * g.transpose();
          else ga.noalias() += B.transpose() * g.transpose();
        }
      }
      if (want(b)) {
        if (!has_adj_[b]) {
          adj_[b].setZero(B.rows(), B.cols());
          has_adj_[b] = 1;
        }
        Matrix& gb = adj_[b];
        if (!n.trans_b) {
          if (!n.trans_a) gb.noalias() += A.transpose() * g;
          else gb.noalias() += A * g;
        } else {
          if (!n.trans_a) gb.noalias() += g.transpose() * A;
          else gb.noalias() += g.transpose() * A.transpose();
        }
      }
      break;
    }
    case Op::AddCol:
      if (want(a)) accumulate(a, g);
      if (want(b)) accumulate_expr(b, g.rowwise().sum(), g.rows(), 1);
      break;
    case Op::MulCol: {
      const Matrix& z = nodes_[a].value;
      const Matrix& s = nodes_[b].value;
      if (want(a)) {
        accumulate_expr(a, (g.array().colwise() * s.col(0).array()).matrix(),
                        g.rows(), g.cols());
      }
      if (want(b)) {
        accumulate_expr(b, (g.array() * z.array()).rowwise().sum().matrix(),
                        g.rows(), 1);
      }
      break;
    }
    case Op::SumCols:
      if (want(a)) {
        const auto cols = nodes_[a].value.cols();
        accumulate_expr(a, g.replicate(1, cols), g.rows(), cols);
      }
      break;
    case Op::BroadcastCols:
      if (want(a)) accumulate_expr(a, g.rowwise().sum(), g.rows(), 1);
      break;
    case Op::MulScalar: {
      const Matrix& s = nodes_[a].value;
      const Matrix& z = nodes_[b].value;
      if (want(a)) {
        const double v = (g.array() * z.array()).sum();
        accumulate_expr(a, Matrix::Constant(1, 1, v), 1, 1);
      }
      if (want(b)) accumulate_expr(b, s(0, 0) * g, g.rows(), g.cols());
      break;
    }
    case Op::Sum:
      if (want(a)) {
        const Matrix& x = nodes_[a].value;
        accumulate_expr(a, Matrix::Constant(x.rows(), x.cols(), g(0, 0)),
                        x.rows(), x.cols());
      }
      break;
    case Op::Fill:
      if (want(a)) accumulate_expr(a, Matrix::Constant(1, 1, g.sum()), 1, 1);
      break;
    case Op::VStack: {
      const auto ra = nodes_[a].value.rows();
      const auto rb = nodes_[b].value.rows();
      if (want(a)) accumulate_expr(a, g.topRows(ra), ra, g.cols());
      if (want(b)) accumulate_expr(b, g.bottomRows(rb), rb, g.cols());
      break;
    }
    case Op::SliceRows:
      if (want(a)) {
        const Matrix& x = nodes_[a].value;
        if (!has_adj_[a]) {
          adj_[a].setZero(x.rows(), x.cols());
          has_adj_[a] = 1;
        }
        adj_[a].middleRows(n.i0, n.i1) += g;
      }
      break;
    case Op::PadRows:
      if (want(a)) {
        const auto rows = nodes_[a].value.rows();
        accumulate_expr(a, g.middleRows(n.i0, rows), rows, g.cols());
      }
      break;
    case Op::ScaledTanh: {
      const Matrix& z = nodes_[a].value;
      const Matrix& s = nodes_[b].value;
      const auto dt = (g.array() * (1.0 - y.array().square()));
      if (want(a)) {
        accumulate_expr(a, (dt.colwise() * s.col(0).array()).matrix(), g.rows(),
                        g.cols());
      }
      if (want(b)) {
        accumulate_expr(b, (dt * z.array()).rowwise().sum().matrix(), g.rows(), 1);
      }
      break;
    }
    case Op::ScaledTanhBackward: {
      // out = G * (1 - Y^2) * s
      const Matrix& G = nodes_[a].value;
      const Matrix& Y = nodes_[b].value;
      const Matrix& s = nodes_[c].value;
      if (want(a)) {
        accumulate_expr(
            a,
            ((g.array() * (1.0 - Y.array().square())).colwise() * s.col(0).array())
                .matrix(),
            g.rows(), g.cols());
      }
      if (want(b)) {
        accumulate_expr(
            b,
            ((-2.0 * g.array() * G.array() * Y.array()).colwise() *
             s.col(0).array())
                .matrix(),
            g.rows(), g.cols());
      }
      if (want(c)) {
        accumulate_expr(
            c,
            (g.array() * G.array() * (1.0 - Y.array().square()))
                .rowwise()
                .sum()
                .matrix(),
            g.rows(), 1);
      }
      break;
    }
    case Op::TanhBackward: {
      const Matrix& G = nodes_[a].value;
      const Matrix& Y = nodes_[b].value;
      if (want(a)) {
        accumulate_expr(a, (g.array() * (1.0 - Y.array().square())).matrix(),
                        g.rows(), g.cols());
      }
      if (want(b)) {
        accumulate_expr(b, (-2.0 * g.array() * G.array() * Y.array()).matrix(),
                        g.rows(), g.cols());
      }
      break;
    }
    case Op::Custom:
      for (std::size_t i = 0; i < n.extra.size(); ++i) {
        if (want(n.extra[i])) {
          accumulate_expr(n.extra[i], n.partials[i] * g, 1, 1);
        }
      }
      break;
  }
}

std::vector<Var> Tape::derivative_graph(const Var& output,
                                        std::span<const Var> wrt) {
  check(output);
  for (const Var& w : wrt) {
    check(w);
    if (nodes_[w.id_].op != Op::Leaf) {
      throw TapeError("derivative_graph: wrt must be an input leaf, got " +
                      std::string(op_name(nodes_[w.id_].op)));
    }
  }
  if (output.value().size() != 1) {
    throw TapeError("derivative_graph: output must be a 1x1 scalar");
  }
  const auto out = output.id_;
  const auto reach = reachable(out, wrt);
  std::vector<std::int32_t> adj(static_cast<std::size_t>(out) + 1, -1);
  adj[out] = constant(1.0).id_;

  std::int32_t lo = out;
  for (const Var& w : wrt) lo = std::min(lo, w.id_);
  for (std::int32_t i = out; i > lo; --i) {
    if (adj[i] < 0 || !reach[i]) continue;
    graph_vjp(i, adj[i], reach, adj);
  }

  std::vector<Var> result;
  result.reserve(wrt.size());
  for (const Var& w : wrt) {
    if (w.id_ <= out && adj[w.id_] >= 0 && reach[w.id_]) {
      result.push_back(handle(adj[w.id_]));
    } else {
      result.push_back(constant(Matrix::Zero(w.rows(), w.cols())));
    }
  }
  return result;
}

void Tape::graph_vjp(std::int32_t id, std::int32_t gid,
                     const std::vector<char>& reach,
                     std::vector<std::int32_t>& adj) {
  // Copy what we need: recording new nodes may reallocate nodes_.
  const Op op = nodes_[id].op;
  const auto a = nodes_[id].p0;
  const auto b = nodes_[id].p1;
  const auto c = nodes_[id].p2;
  const double k = nodes_[id].k;
  const bool ta = nodes_[id].trans_a;
  const bool tb = nodes_[id].trans_b;
  const auto i0 = nodes_[id].i0;
  const auto i1 = nodes_[id].i1;

  const auto want = [&](std::int32_t p) { return p >= 0 && reach[p]; };
  const auto contribute = [&](std::int32_t p, const Var& v) {
    if (adj[p] < 0) {
      adj[p] = v.id_;
    } else {
      adj[p] = binary(Op::Add, handle(adj[p]), v).id_;
    }
  };
  const Var G = handle(gid);
  const auto H = [&](std::int32_t p) { return handle(p); };

  switch (op) {
    case Op::Leaf:
    case Op::Constant:
      break;
    case Op::Add:
      if (want(a)) contribute(a, G);
      if (want(b)) contribute(b, G);
      break;
    case Op::Sub:
      if (want(a)) contribute(a, G);
      if (want(b)) contribute(b, unary(Op::Neg, G));
      break;
    case Op::Mul:
      if (want(a)) contribute(a, binary(Op::Mul, G, H(b)));
      if (want(b)) contribute(b, binary(Op::Mul, G, H(a)));
      break;
    case Op::Neg:
      if (want(a)) contribute(a, unary(Op::Neg, G));
      break;
    case Op::Scale:
      if (want(a)) contribute(a, unary(Op::Scale, G, k));
      break;
    case Op::AddScalar:
      if (want(a)) contribute(a, G);
      break;
    case Op::Square:
      if (want(a)) contribute(a, binary(Op::Mul, G, unary(Op::Scale, H(a), 2.0)));
      break;
    case Op::Tanh:
      if (want(a)) contribute(a, tanh_backward(G, H(id)));
      break;
    case Op::Exp:
      if (want(a)) contribute(a, binary(Op::Mul, G, H(id)));
      break;
    case Op::Sin:
      if (want(a)) contribute(a, binary(Op::Mul, G, unary(Op::Cos, H(a))));
      break;
    case Op::Cos:
      if (want(a)) {
        contribute(a, unary(Op::Neg, binary(Op::Mul, G, unary(Op::Sin, H(a)))));
      }
      break;
    case Op::Reciprocal:
      if (want(a)) {
        contribute(a, unary(Op::Neg, binary(Op::Mul, G, unary(Op::Square, H(id)))));
      }
      break;
    case Op::MatMul:
      if (want(a)) {
        contribute(a, ta ? matmul(H(b), G, tb, true) : matmul(G, H(b), false, !tb));
      }
      if (want(b)) {
        contribute(b, tb ? matmul(G, H(a), true, ta) : matmul(H(a), G, !ta, false));
      }
      break;
    case Op::AddCol:
      if (want(a)) contribute(a, G);
      if (want(b)) contribute(b, unary(Op::SumCols, G));
      break;
    case Op::MulCol:
      if (want(a)) contribute(a, binary(Op::MulCol, G, H(b)));
      if (want(b)) contribute(b, unary(Op::SumCols, binary(Op::Mul, G, H(a))));
      break;
    case Op::SumCols:
      if (want(a)) contribute(a, broadcast_cols(G, nodes_[a].value.cols()));
      break;
    case Op::BroadcastCols:
      if (want(a)) contribute(a, unary(Op::SumCols, G));
      break;
    case Op::MulScalar:
      if (want(a)) contribute(a, unary(Op::Sum, binary(Op::Mul, G, H(b))));
      if (want(b)) contribute(b, binary(Op::MulScalar, H(a), G));
      break;
    case Op::Sum:
      if (want(a)) {
        const auto r = nodes_[a].value.rows();
        const auto cc = nodes_[a].value.cols();
        contribute(a, fill(G, r, cc));
      }
      break;
    case Op::Fill:
      if (want(a)) contribute(a, unary(Op::Sum, G));
      break;
    case Op::VStack: {
      const auto ra = nodes_[a].value.rows();
      const auto rb = nodes_[b].value.rows();
      if (want(a)) contribute(a, slice_rows(G, 0, ra));
      if (want(b)) contribute(b, slice_rows(G, ra, rb));
      break;
    }
    case Op::SliceRows:
      if (want(a)) contribute(a, pad_rows(G, i0, nodes_[a].value.rows()));
      break;
    case Op::PadRows:
      if (want(a)) contribute(a, slice_rows(G, i0, nodes_[a].value.rows()));
      (void)i1;
      break;
    case Op::ScaledTanh:
      if (want(a)) contribute(a, scaled_tanh_backward(G, H(id), H(b)));
      if (want(b)) {
        contribute(b, unary(Op::SumCols,
                            binary(Op::Mul, tanh_backward(G, H(id)), H(a))));
      }
      break;
    case Op::ScaledTanhBackward:
      // out = Gin * (1 - Y^2) * s, with (Gin, Y, s) = (a, b, c)
      if (want(a)) contribute(a, scaled_tanh_backward(G, H(b), H(c)));
      if (want(b)) {
        const Var hgy = binary(Op::Mul, binary(Op::Mul, G, H(a)), H(b));
        contribute(b, binary(Op::MulCol, hgy, unary(Op::Scale, H(c), -2.0)));
      }
      if (want(c)) {
        contribute(c, unary(Op::SumCols, binary(Op::Mul, G, tanh_backward(H(a), H(b)))));
      }
      break;
    case Op::TanhBackward:
      if (want(a)) contribute(a, tanh_backward(G, H(b)));
      if (want(b)) {
        contribute(b, unary(Op::Scale,
                            binary(Op::Mul, binary(Op::Mul, G, H(a)), H(b)), -2.0));
      }
      break;
    case Op::Custom: {
      const auto parents = nodes_[id].extra;
      const auto partials = nodes_[id].partials;
      for (std::size_t i = 0; i < parents.size(); ++i) {
        if (want(parents[i])) contribute(parents[i], unary(Op::Scale, G, partials[i]));
      }
      break;
    }
  }
}

// ---------------------------------------------------------------------------
// Free functions

namespace {

Tape& same_tape(const Var& a, const Var& b) {
  if (&a.tape() != &b.tape()) throw TapeError("operands live on different tapes");
  return a.tape();
}

}  // namespace

Var operator+(const Var& a, const Var& b) { return same_tape(a, b).binary(Op::Add, a, b); }
Var operator-(const Var& a, const Var& b) { return same_tape(a, b).binary(Op::Sub, a, b); }

Var operator*(const Var& a, const Var& b) {
  Tape& t = same_tape(a, b);
  const bool sa = a.value().size() == 1;
  const bool sb = b.value().size() == 1;
  if (a.rows() == b.rows() && a.cols() == b.cols()) return t.binary(Op::Mul, a, b);
  if (sa) return t.binary(Op::MulScalar, a, b);
  if (sb) return t.binary(Op::MulScalar, b, a);
  throw TapeError("operator*: incompatible shapes");
}

Var operator-(const Var& a) { return a.tape().unary(Op::Neg, a); }
Var operator*(double k, const Var& a) { return a.tape().unary(Op::Scale, a, k); }
Var operator*(const Var& a, double k) { return a.tape().unary(Op::Scale, a, k); }
Var operator+(const Var& a, double k) { return a.tape().unary(Op::AddScalar, a, k); }
Var operator+(double k, const Var& a) { return a.tape().unary(Op::AddScalar, a, k); }
Var operator-(const Var& a, double k) { return a.tape().unary(Op::AddScalar, a, -k); }
Var operator-(double k, const Var& a) { return k + (-a); }

Var square(const Var& a) { return a.tape().unary(Op::Square, a); }
Var tanh(const Var& a) { return a.tape().unary(Op::Tanh, a); }
Var exp(const Var& a) { return a.tape().unary(Op::Exp, a); }
Var sin(const Var& a) { return a.tape().unary(Op::Sin, a); }
Var cos(const Var& a) { return a.tape().unary(Op::Cos, a); }
Var reciprocal(const Var& a) { return a.tape().unary(Op::Reciprocal, a); }
Var operator/(const Var& a, const Var& b) { return a * reciprocal(b); }

Var matmul(const Var& a, const Var& b, bool trans_a, bool trans_b) {
  return same_tape(a, b).matmul(a, b, trans_a, trans_b);
}
Var add_col(const Var& z, const Var& b) { return same_tape(z, b).binary(Op::AddCol, z, b); }
Var mul_col(const Var& z, const Var& s) { return same_tape(z, s).binary(Op::MulCol, z, s); }
Var sum_cols(const Var& a) { return a.tape().unary(Op::SumCols, a); }
Var sum(const Var& a) { return a.tape().unary(Op::Sum, a); }
Var mean(const Var& a) {
  return a.tape().unary(Op::Scale, sum(a), 1.0 / static_cast<double>(a.value().size()));
}
Var vstack(const Var& a, const Var& b) { return same_tape(a, b).vstack(a, b); }
Var row(const Var& a, Eigen::Index i) { return a.tape().slice_rows(a, i, 1); }
Var scaled_tanh(const Var& z, const Var& slope) {
  return same_tape(z, slope).scaled_tanh(z, slope);
}

std::vector<Matrix> gradient(const Var& output, std::span<const Var> wrt) {
  return output.tape().gradient(output, wrt);
}

std::vector<Matrix> gradient(const Var& output, std::initializer_list<Var> wrt) {
  return output.tape().gradient(output, std::span<const Var>(wrt.begin(), wrt.size()));
}

std::vector<Var> derivative_graph(const Var& output, std::span<const Var> wrt) {
  return output.tape().derivative_graph(output, wrt);
}

Var derivative_graph(const Var& output, const Var& wrt) {
  return output.tape().derivative_graph(output, std::span<const Var>(&wrt, 1)).front();
}

void ensure_finite(const Matrix& m, std::string_view what) {
  if (!m.allFinite()) {
    throw NonFiniteError("non-finite value in " + std::string(what));
  }
}

void ensure_finite(const Var& v, std::string_view what) { ensure_finite(v.value(), what); }

FdCheck check_gradient_fd(const TapeFunction& f, std::span<const double> point,
                          double step) {
  if (!(step > 0.0)) throw std::invalid_argument("check_gradient_fd: step must be > 0");
  const auto evaluate = [&](std::span<const double> p, std::vector<double>* grad) {
    Tape tape;
    std::vector<Var> leaves;
    leaves.reserve(p.size());
    for (double v : p) leaves.push_back(tape.variable(v));
    const Var out = f(tape, leaves);
    const double value = out.scalar();
    if (!std::isfinite(value)) throw NonFiniteError("check_gradient_fd: f is not finite");
    if (grad != nullptr) {
      const auto g = tape.gradient(out, leaves);
      grad->resize(g.size());
      for (std::size_t i = 0; i < g.size(); ++i) (*grad)[i] = g[i](0, 0);
    }
    return value;
  };

  FdCheck result;
  evaluate(point, &result.analytic);
  std::vector<double> p(point.begin(), point.end());
  result.numeric.resize(p.size());
  for (std::size_t i = 0; i < p.size(); ++i) {
    const double orig = p[i];
    p[i] = orig + step;
    const double fp = evaluate(p, nullptr);
    p[i] = orig - step;
    const double fm = evaluate(p, nullptr);
    p[i] = orig;
    result.numeric[i] = (fp - fm) / (2.0 * step);
    const double dev = std::abs(result.analytic[i] - result.numeric[i]) /
                       (std::abs(result.analytic[i]) + kRelativeFloor);
    result.max_relative_deviation = std::max(result.max_relative_deviation, dev);
  }
  return result;
}

}  // namespace yopinn::ad
