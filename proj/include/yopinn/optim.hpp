#pragma once

// Adam and L-BFGS over a flat parameter vector, and the two-phase training
// driver (Adam, then L-BFGS) for the PINN objective.

#include <cstdint>
#include <filesystem>
#include <functional>
#include <limits>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "yopinn/loss.hpp"

namespace yopinn::opt {

using Vector = Eigen::VectorXd;

class OptimizerError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

enum class Phase { Adam, Lbfgs };
std::string to_string(Phase p);

// ---------------------------------------------------------------------------
// Adam

struct AdamOptions {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

class Adam {
 public:
  Adam(std::size_t dim, const AdamOptions& options = {});

  /// One bias-corrected update of x. Throws OptimizerError naming the step
  /// if the gradient is not finite; x is left untouched in that case.
  void step(Vector& x, const Vector& grad);

  long steps() const { return t_; }
  const Vector& first_moment() const { return m_; }
  const Vector& second_moment() const { return v_; }
  const AdamOptions& options() const { return opt_; }

 private:
  AdamOptions opt_;
  Vector m_;
  Vector v_;
  long t_ = 0;
};

// ---------------------------------------------------------------------------
// L-BFGS with a strong-Wolfe line search

/// f(x), writing the gradient into g (resized by the callee as needed).
using ObjectiveFn = std::function<double(const Vector& x, Vector& g)>;

struct LbfgsOptions {
  int max_iters = 50000;
  int memory = 50;
  double c1 = 1e-4;
  double c2 = 0.9;
  double gtol = 1e-9;  // on the max-norm of the gradient
  double ftol = 10.0 * std::numeric_limits<double>::epsilon();  // 0 disables
  int max_line_search = 25;  // evaluations per line search
};

enum class LbfgsStatus {
  GradientTolerance,
  FunctionTolerance,
  MaxIterations,
  LineSearchFailed,
};
std::string to_string(LbfgsStatus s);

struct LbfgsResult {
  Vector x;
  double f = 0.0;
  Vector g;
  int iterations = 0;
  int evaluations = 0;
  LbfgsStatus status = LbfgsStatus::MaxIterations;
  std::vector<double> trace;  // f after each accepted iteration
};

/// Called after each accepted iteration with (iteration, x, f).
using IterationCallback = std::function<void(int, const Vector&, double)>;

LbfgsResult lbfgs_minimize(const ObjectiveFn& f, Vector x0, const LbfgsOptions& options,
                           const IterationCallback& on_iteration = {});

// ---------------------------------------------------------------------------
// Training

struct Schedule {
  int adam_iters = 20000;
  int lbfgs_iters = 50000;
};

struct TraceRecord {
  long iteration = 0;  // global, counting across both phases
  Phase phase = Phase::Adam;
  loss::LossBreakdown loss;
  double lambda1 = 0.0;
  double lambda2 = 0.0;
};

struct TrainOptions {
  Schedule schedule;
  AdamOptions adam;
  LbfgsOptions lbfgs;
  /// Checkpoint every K global iterations (0 disables); also on abort.
  long checkpoint_every = 5000;
  std::filesystem::path checkpoint_dir;  // empty: no checkpoints
  /// Invoked for every trace record as it is produced.
  std::function<void(const TraceRecord&)> on_record;
};

struct TrainResult {
  net::NetworkParams params;
  phys::PhysicsMode mode;  // carries the learned lambdas in inverse mode
  std::vector<TraceRecord> trace;
  loss::LossBreakdown final_loss;
  LbfgsStatus lbfgs_status = LbfgsStatus::MaxIterations;
  bool aborted = false;
  std::string abort_reason;
};

/// Adam for schedule.adam_iters steps, then L-BFGS for up to
/// schedule.lbfgs_iters iterations, on the given objective. One trace record
/// per iteration holds the loss at the iterate that step started from (Adam)
/// or arrived at (L-BFGS). An optimizer error ends training with
/// aborted = true and the last good parameters.
TrainResult train(loss::Objective& objective, const net::NetworkParams& init,
                  const phys::PhysicsMode& mode, const TrainOptions& options);

/// CSV: iteration,phase,loss_S,loss_L,loss_fS,loss_fL,loss_a,penalty,total,lambda1,lambda2
void write_trace_csv(const std::filesystem::path& path,
                     const std::vector<TraceRecord>& trace);
std::vector<TraceRecord> read_trace_csv(const std::filesystem::path& path);

/// Network checkpoint plus lambdas and iteration count, as JSON.
void save_checkpoint(const std::filesystem::path& path, const net::NetworkParams& params,
                     const phys::PhysicsMode& mode, long iteration);

}  // namespace yopinn::opt
