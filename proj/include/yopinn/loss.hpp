#pragma once

// Composite training objective:
//
//   total = Loss_S + Loss_L + Loss_fS + Loss_fL + Loss_a + alpha * Omega
//
// Loss_S, Loss_L   mean squared mismatch on labelled initial/boundary points
// Loss_fS, Loss_fL mean squared residuals on collocation points
// Loss_a           slope recovery, 1 / ((N_a/(D-1)) sum_d exp(mean(a^d)))
// Omega            0.5 * sum of squared weight-matrix entries (all layers)

#include <cstddef>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "yopinn/autodiff.hpp"
#include "yopinn/datagen.hpp"
#include "yopinn/network.hpp"
#include "yopinn/residuals.hpp"

namespace yopinn::loss {

using ad::Var;
using ad::Vector;

inline constexpr int kDefaultNa = 100;

struct LossBreakdown {
  double loss_S = 0.0;
  double loss_L = 0.0;
  double loss_fS = 0.0;
  double loss_fL = 0.0;
  double loss_a = 0.0;
  double penalty = 0.0;
  double alpha = 0.0;
  int N_a = kDefaultNa;
  double total = 0.0;

  /// Recomputes total from the components.
  double sum() const {
    return loss_S + loss_L + loss_fS + loss_fL + loss_a + alpha * penalty;
  }
};

// Tape-level terms. `weight` multiplies the per-point sums, so passing 1/N
// for a chunk of a larger set lets chunk results be added.
struct DataTerms {
  Var loss_S;
  Var loss_L;
};
struct ResidualTerms {
  Var loss_fS;
  Var loss_fL;
};

DataTerms data_terms(const net::NetworkVars& vars,
                     std::span<const data::LabeledPoint> points, double weight);
ResidualTerms residual_terms(const net::NetworkVars& vars,
                             const phys::Coefficients& coeffs,
                             std::span<const data::CollocationPoint> points,
                             double weight);
ResidualTerms residual_terms(const phys::Residuals& r, double weight);
Var slope_recovery(const net::NetworkVars& vars, int N_a = kDefaultNa);
Var l2_penalty(const net::NetworkVars& vars);

// Numeric evaluations.
struct DataLoss {
  double loss_S;
  double loss_L;
};
struct ResidualLoss {
  double loss_fS;
  double loss_fL;
};

DataLoss data_loss(const net::NetworkParams& params,
                   std::span<const data::LabeledPoint> points);
ResidualLoss residual_loss(const net::NetworkParams& params,
                           const phys::PhysicsMode& mode,
                           std::span<const data::CollocationPoint> points);
double slope_recovery(const net::NetworkParams& params, int N_a = kDefaultNa);
double l2_penalty(const net::NetworkParams& params);
LossBreakdown total_loss(const net::NetworkParams& params,
                         const phys::PhysicsMode& mode,
                         const data::TrainingSet& ts, double alpha,
                         int N_a = kDefaultNa);

/// Throws ad::NonFiniteError naming the first non-finite component.
void ensure_finite(const LossBreakdown& b);

struct ObjectiveOptions {
  double alpha = 1e-4;
  int N_a = kDefaultNa;
  /// Points per tape recording. Chunks are recorded and swept one at a time.
  std::size_t chunk_size = 512;
  /// Worker threads over chunks; the reduction order is fixed regardless.
  int threads = 1;
};

/// The training objective over a flat parameter vector theta: the network
/// parameters in ParamLayout order, followed by (lambda1, lambda2) in
/// inverse mode. Lambdas are never penalized.
class Objective {
 public:
  Objective(const net::Architecture& arch, double scale_n,
            const phys::PhysicsMode& mode, const data::TrainingSet& ts,
            const ObjectiveOptions& options);
  ~Objective();
  Objective(const Objective&) = delete;
  Objective& operator=(const Objective&) = delete;

  std::size_t dimension() const;
  const net::ParamLayout& layout() const { return layout_; }
  const ObjectiveOptions& options() const { return options_; }

  Vector pack(const net::NetworkParams& params, const phys::PhysicsMode& mode) const;
  void unpack(std::span<const double> theta, net::NetworkParams& params,
              phys::PhysicsMode& mode) const;

  /// Loss breakdown at theta; fills grad (resized) when non-null.
  LossBreakdown evaluate(std::span<const double> theta, Vector* grad);

 private:
  struct Chunk;
  void run_chunk(Chunk& c, ad::Tape& tape, const net::NetworkParams& params,
                 const phys::PhysicsMode& mode, bool want_grad) const;

  net::Architecture arch_;
  net::ParamLayout layout_;
  double scale_n_;
  phys::PhysicsMode mode_;
  ObjectiveOptions options_;
  std::vector<std::unique_ptr<Chunk>> chunks_;
  std::vector<std::unique_ptr<ad::Tape>> tapes_;  // one per worker
};

}  // namespace yopinn::loss
