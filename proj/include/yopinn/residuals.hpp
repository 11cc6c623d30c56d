#pragma once

// Physics residuals of the Yajima-Oikawa system for S = u + i v:
//
//   f_u = -v_t + l1 u_xx + u L
//   f_v =  u_t + l1 v_xx + v L
//   f_L =  L_t - l2 (2 u u_x + 2 v v_x)
//
// with (l1, l2) = (0.5, 1) in the forward problem and trainable in the
// inverse problem.

#include <functional>

#include "yopinn/autodiff.hpp"
#include "yopinn/network.hpp"

namespace yopinn::phys {

using ad::Var;

struct PhysicsMode {
  enum class Kind { Forward, Inverse };

  Kind kind = Kind::Forward;
  double lambda1 = 0.5;
  double lambda2 = 1.0;

  static PhysicsMode forward(double lambda1 = 0.5, double lambda2 = 1.0) {
    return {Kind::Forward, lambda1, lambda2};
  }
  /// Trainable coefficients, starting from the given values.
  static PhysicsMode inverse(double lambda1 = 0.0, double lambda2 = 0.0) {
    return {Kind::Inverse, lambda1, lambda2};
  }
  bool trainable() const { return kind == Kind::Inverse; }
};

/// lambda1, lambda2 on a tape: leaves in inverse mode, constants otherwise.
struct Coefficients {
  Var lambda1;
  Var lambda2;
};

Coefficients bind(ad::Tape& tape, const PhysicsMode& mode);

/// Any differentiable map (x, t) -> (u, v, L) on a tape; x and t are 1 x B.
using FieldFunction = std::function<net::Fields(const Var& x, const Var& t)>;

struct Derivatives {
  Var u, v, L;
  Var u_x, u_t, v_x, v_t, L_t;
  Var u_xx, v_xx;
};

struct Residuals {
  Var f_u;
  Var f_v;
  Var f_L;
};

/// Input derivatives of f at the batch (x, t), recorded on the tape. x and t
/// must be leaves. Throws ad::NonFiniteError naming the first bad point.
Derivatives differentiate(const FieldFunction& f, const Var& x, const Var& t);

Residuals assemble(const Derivatives& d, const Coefficients& c);

/// Residuals of the network at the batch (x, t).
Residuals residuals_at(const net::NetworkVars& vars, const Coefficients& c,
                       const Var& x, const Var& t);

}  // namespace yopinn::phys
