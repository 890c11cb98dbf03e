// SPDX-License-Identifier: Apache-2.0
#include "p2l/proximal.hpp"

#include <fmt/format.h>

#include <cmath>

namespace p2l {

void ProxConfig::validate() const {
  if (!(lambda > 0.0)) {
    throw ParameterError(fmt::format("prox lambda must be > 0, got {}", lambda));
  }
  if (cg_iters < 1) throw ParameterError("prox cg_iters must be >= 1");
  if (!(cg_tol > 0.0)) throw ParameterError("prox cg_tol must be > 0");
}

CgResult cg_solve(const SpdApply& apply_spd, const Vector& b, Vector x_init,
                  int iters, double tol) {
  if (!(tol > 0.0)) throw ParameterError("cg_solve: tol must be > 0");
  if (iters < 0) throw ParameterError("cg_solve: iters must be >= 0");
  if (x_init.size() != b.size()) {
    throw DimensionError(fmt::format("cg_solve: x_init has {} entries, b has {}",
                                     x_init.size(), b.size()));
  }

  CgResult out;
  const double b_norm = b.norm();
  if (b_norm == 0.0) {
    out.x = Vector::Zero(b.size());
    return out;
  }

  Vector x = std::move(x_init);
  Vector r = b - apply_spd(x);
  double rr = r.squaredNorm();
  if (std::sqrt(rr) / b_norm <= tol) {
    out.x = std::move(x);
    return out;
  }
  Vector p = r;
  for (int k = 0; k < iters; ++k) {
    const Vector mp = apply_spd(p);
    const double curvature = p.dot(mp);
    if (!(curvature > 0.0)) {
      if (!std::isfinite(curvature)) {
        throw NumericError(fmt::format("cg_solve: non-finite curvature at iteration {}", k));
      }
      throw SpdViolation(fmt::format(
          "cg_solve: non-positive curvature {} at iteration {}", curvature, k));
    }
    const double alpha = rr / curvature;
    x += alpha * p;
    r -= alpha * mp;
    const double rr_next = r.squaredNorm();
    if (!x.allFinite() || !std::isfinite(rr_next)) {
      throw NumericError(fmt::format("cg_solve: non-finite iterate at iteration {}", k));
    }
    const double rel = std::sqrt(rr_next) / b_norm;
    out.residual_history.push_back(rel);
    out.iterations = k + 1;
    if (rel <= tol) break;
    p = r + (rr_next / rr) * p;
    rr = rr_next;
  }
  out.x = std::move(x);
  return out;
}

CgResult prox_gamma_solve(const LinearOperator& op, const Vector& y,
                          const Vector& anchor, const ProxConfig& cfg) {
  cfg.validate();
  if (anchor.size() != op.input_size()) {
    throw DimensionError(fmt::format("prox_gamma: anchor has {} entries, image has {}",
                                     anchor.size(), op.input_size()));
  }
  const double lambda = cfg.lambda;
  const Vector rhs = op.adjoint(y) + lambda * anchor;
  auto normal = [&op, lambda](const Vector& x) -> Vector {
    return op.adjoint(op.forward(x)) + lambda * x;
  };
  return cg_solve(normal, rhs, anchor, cfg.cg_iters, cfg.cg_tol);
}

Vector prox_gamma(const LinearOperator& op, const Vector& y,
                  const Vector& anchor, const ProxConfig& cfg) {
  return prox_gamma_solve(op, y, anchor, cfg).x;
}

Vector glue_gamma(const LinearOperator& op, const Vector& y,
                  const Vector& anchor) {
  if (anchor.size() != op.input_size()) {
    throw DimensionError(fmt::format("glue_gamma: anchor has {} entries, image has {}",
                                     anchor.size(), op.input_size()));
  }
  return op.adjoint(y) + anchor - op.adjoint(op.forward(anchor));
}

}  // namespace p2l
