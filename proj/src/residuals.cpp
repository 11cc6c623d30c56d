#include "yopinn/residuals.hpp"

#include <array>
#include <sstream>
#include <string>

namespace yopinn::phys {

Coefficients bind(ad::Tape& tape, const PhysicsMode& mode) {
  if (mode.trainable()) {
    return {tape.variable(mode.lambda1), tape.variable(mode.lambda2)};
  }
  return {tape.constant(mode.lambda1), tape.constant(mode.lambda2)};
}

namespace {

void check_columns(const Var& q, const char* name, const Var& x, const Var& t) {
  const auto& m = q.value();
  if (m.allFinite()) return;
  for (Eigen::Index c = 0; c < m.cols(); ++c) {
    if (!m.col(c).allFinite()) {
      std::ostringstream os;
      os << "non-finite " << name << " at (x, t) = (" << x.value()(0, c) << ", "
         << t.value()(0, c) << ")";
      throw ad::NonFiniteError(os.str());
    }
  }
}

}  // namespace

Derivatives differentiate(const FieldFunction& f, const Var& x, const Var& t) {
  Derivatives d;
  const net::Fields out = f(x, t);
  d.u = out.u;
  d.v = out.v;
  d.L = out.L;

  // Points are independent, so the gradient of a column sum is the
  // per-point derivative.
  const std::array<Var, 2> xt = {x, t};
  auto du = ad::derivative_graph(ad::sum(d.u), xt);
  auto dv = ad::derivative_graph(ad::sum(d.v), xt);
  d.u_x = du[0];
  d.u_t = du[1];
  d.v_x = dv[0];
  d.v_t = dv[1];
  d.L_t = ad::derivative_graph(ad::sum(d.L), t);
  d.u_xx = ad::derivative_graph(ad::sum(d.u_x), x);
  d.v_xx = ad::derivative_graph(ad::sum(d.v_x), x);

  const std::array<std::pair<const Var*, const char*>, 10> all = {{
      {&d.u, "u"}, {&d.v, "v"}, {&d.L, "L"}, {&d.u_x, "u_x"}, {&d.u_t, "u_t"},
      {&d.v_x, "v_x"}, {&d.v_t, "v_t"}, {&d.L_t, "L_t"}, {&d.u_xx, "u_xx"},
      {&d.v_xx, "v_xx"},
  }};
  for (const auto& [q, name] : all) check_columns(*q, name, x, t);
  return d;
}

Residuals assemble(const Derivatives& d, const Coefficients& c) {
  Residuals r;
  r.f_u = c.lambda1 * d.u_xx - d.v_t + d.u * d.L;
  r.f_v = c.lambda1 * d.v_xx + d.u_t + d.v * d.L;
  r.f_L = d.L_t - c.lambda2 * (2.0 * (d.u * d.u_x + d.v * d.v_x));
  return r;
}

Residuals residuals_at(const net::NetworkVars& vars, const Coefficients& c,
                       const Var& x, const Var& t) {
  const FieldFunction f = [&vars](const Var& xx, const Var& tt) {
    return net::forward(vars, xx, tt);
  };
  return assemble(differentiate(f, x, t), c);
}

}  // namespace yopinn::phys
