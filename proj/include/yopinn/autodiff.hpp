#pragma once

// Tape-based reverse-mode automatic differentiation over dense matrices.
//
// Every value on the tape is an Eigen matrix. Scalars are 1x1 matrices, and
// batched per-point quantities are laid out as (features x points), so that a
// whole batch of collocation points flows through the network as one matrix.
//
// Two backward sweeps are provided:
//   * gradient()         plain numeric sweep, returns matrices;
//   * derivative_graph() records the sweep itself on the tape, so the result
//                        can be differentiated again (reverse-over-reverse).
//
// A tape is single-threaded. Independent tapes share no state.

#include <cstdint>
#include <functional>
#include <initializer_list>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Dense>

namespace yopinn::ad {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

class TapeError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

class NonFiniteError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

enum class Op : std::uint8_t {
  Leaf,
  Constant,
  Add,
  Sub,
  Mul,
  Neg,
  Scale,
  AddScalar,
  Square,
  Tanh,
  Exp,
  Sin,
  Cos,
  Reciprocal,
  MatMul,
  AddCol,
  MulCol,
  SumCols,
  BroadcastCols,
  MulScalar,
  Sum,
  Fill,
  VStack,
  SliceRows,
  PadRows,
  ScaledTanh,
  ScaledTanhBackward,
  TanhBackward,
  Custom,
};

std::string_view op_name(Op op);

class Tape;

/// Handle to a node on a tape. Cheap to copy. Only valid while the owning
/// tape has not been cleared.
class Var {
 public:
  Var() = default;

  const Matrix& value() const;
  /// Value of a 1x1 node.
  double scalar() const;
  Eigen::Index rows() const { return value().rows(); }
  Eigen::Index cols() const { return value().cols(); }

  Tape& tape() const;
  std::int32_t id() const { return id_; }
  std::uint64_t generation() const { return generation_; }
  bool valid() const;

 private:
  friend class Tape;
  Var(Tape* tape, std::int32_t id, std::uint64_t generation)
      : tape_(tape), id_(id), generation_(generation) {}

  Tape* tape_ = nullptr;
  std::int32_t id_ = -1;
  std::uint64_t generation_ = 0;
};

class Tape {
 public:
  Tape();
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;
  Tape(Tape&&) = delete;
  Tape& operator=(Tape&&) = delete;

  /// Differentiable input leaf.
  Var variable(const Matrix& value);
  Var variable(double value);
  /// Non-differentiable input (data, fixed coefficients).
  Var constant(const Matrix& value);
  Var constant(double value);

  /// Custom scalar node: value plus constant local partials, one per input.
  /// Inputs must be 1x1. Under derivative_graph the partials act as
  /// constants, so nesting through a custom node is first-order only.
  Var record(std::span<const Var> inputs, double value,
             std::span<const double> partials);

  /// d(output)/d(wrt_i) by one numeric reverse sweep. Output must be 1x1.
  /// Entries with no path to the output come back as exact zeros.
  std::vector<Matrix> gradient(const Var& output, std::span<const Var> wrt);

  /// Like gradient(), but the sweep is recorded on this tape and the results
  /// are Vars that can be differentiated again. All wrt must be leaves.
  std::vector<Var> derivative_graph(const Var& output,
                                    std::span<const Var> wrt);

  /// Drops all nodes and bumps the generation. Node buffers are kept and
  /// reused by the next recording.
  void clear();

  std::size_t size() const { return size_; }
  std::uint64_t generation() const { return generation_; }
  Op op(std::int32_t id) const { return nodes_[id].op; }

  // Node construction, used by the free-function operators below.
  Var unary(Op op, const Var& a, double k = 0.0);
  Var binary(Op op, const Var& a, const Var& b);
  Var matmul(const Var& a, const Var& b, bool trans_a, bool trans_b);
  Var broadcast_cols(const Var& a, Eigen::Index cols);
  Var fill(const Var& scalar, Eigen::Index rows, Eigen::Index cols);
  Var vstack(const Var& a, const Var& b);
  Var slice_rows(const Var& a, Eigen::Index start, Eigen::Index count);
  Var pad_rows(const Var& a, Eigen::Index start, Eigen::Index total);
  Var scaled_tanh(const Var& z, const Var& slope);
  Var scaled_tanh_backward(const Var& g, const Var& y, const Var& slope);
  Var tanh_backward(const Var& g, const Var& y);

  const Matrix& value_of(std::int32_t id) const { return nodes_[id].value; }

 private:
  friend class Var;

  struct Node {
    Op op = Op::Leaf;
    std::int32_t p0 = -1;
    std::int32_t p1 = -1;
    std::int32_t p2 = -1;
    double k = 0.0;
    Eigen::Index i0 = 0;
    Eigen::Index i1 = 0;
    bool trans_a = false;
    bool trans_b = false;
    Matrix value;
    std::vector<std::int32_t> extra;  // Custom: parents
    std::vector<double> partials;     // Custom: local partials
  };

  std::int32_t alloc(Op op, std::int32_t p0 = -1, std::int32_t p1 = -1,
                     std::int32_t p2 = -1);
  Var handle(std::int32_t id) { return Var(this, id, generation_); }
  void check(const Var& v) const;
  void parents_of(std::int32_t id, std::vector<std::int32_t>& out) const;
  std::vector<char> reachable(std::int32_t output,
                              std::span<const Var> wrt) const;

  void numeric_vjp(std::int32_t id, const Matrix& g,
                   const std::vector<char>& reach);
  void accumulate(std::int32_t id, const Matrix& g);
  template <class Expr>
  void accumulate_expr(std::int32_t id, const Expr& g, Eigen::Index rows,
                       Eigen::Index cols);

  void graph_vjp(std::int32_t id, std::int32_t g,
                 const std::vector<char>& reach,
                 std::vector<std::int32_t>& adj);

  std::vector<Node> nodes_;
  std::size_t size_ = 0;
  std::uint64_t generation_ = 0;

  // Numeric sweep workspace, reused across calls.
  std::vector<Matrix> adj_;
  std::vector<char> has_adj_;
};

// ---------------------------------------------------------------------------
// Operators. Operands must live on the same tape generation.

Var operator+(const Var& a, const Var& b);
Var operator-(const Var& a, const Var& b);
/// Elementwise product; a 1x1 operand is broadcast against the other.
Var operator*(const Var& a, const Var& b);
Var operator-(const Var& a);
Var operator*(double k, const Var& a);
Var operator*(const Var& a, double k);
Var operator+(const Var& a, double k);
Var operator+(double k, const Var& a);
Var operator-(const Var& a, double k);
Var operator-(double k, const Var& a);

Var square(const Var& a);
Var tanh(const Var& a);
Var exp(const Var& a);
Var sin(const Var& a);
Var cos(const Var& a);
Var reciprocal(const Var& a);
Var operator/(const Var& a, const Var& b);

Var matmul(const Var& a, const Var& b, bool trans_a = false,
           bool trans_b = false);
/// z + b for every column of z; b is a column vector.
Var add_col(const Var& z, const Var& b);
/// z * s (row-wise) for every column of z; s is a column vector.
Var mul_col(const Var& z, const Var& s);
/// Row sums, (n x m) -> (n x 1).
Var sum_cols(const Var& a);
Var sum(const Var& a);
Var mean(const Var& a);
Var vstack(const Var& a, const Var& b);
Var row(const Var& a, Eigen::Index i);
/// tanh(z * s) with s a per-row column vector.
Var scaled_tanh(const Var& z, const Var& slope);

std::vector<Matrix> gradient(const Var& output, std::span<const Var> wrt);
std::vector<Matrix> gradient(const Var& output, std::initializer_list<Var> wrt);
std::vector<Var> derivative_graph(const Var& output, std::span<const Var> wrt);
Var derivative_graph(const Var& output, const Var& wrt);

/// Elementwise tanh, vectorized. Agrees with std::tanh to a few ulp.
void tanh_inplace(Matrix& m);

/// Throws NonFiniteError naming `what` if any entry is NaN or infinite.
void ensure_finite(const Var& v, std::string_view what);
void ensure_finite(const Matrix& m, std::string_view what);

// ---------------------------------------------------------------------------
// Finite-difference gradient checking.

/// Scalar function of a flat point, built on the given tape.
using TapeFunction = std::function<Var(Tape&, std::span<const Var>)>;

struct FdCheck {
  double max_relative_deviation = 0.0;
  std::vector<double> analytic;
  std::vector<double> numeric;
};

inline constexpr double kRelativeFloor = 1e-12;

/// Compares the tape gradient of f at `point` against central differences
/// with the given step. Each coordinate is its own 1x1 leaf.
FdCheck check_gradient_fd(const TapeFunction& f, std::span<const double> point,
                          double step);

}  // namespace yopinn::ad
