// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "p2l/common.hpp"
#include "p2l/operators.hpp"

#include <functional>
#include <vector>

namespace p2l {

struct ProxConfig {
  double lambda = 1.0;
  int cg_iters = 10;
  double cg_tol = 1e-6;

  void validate() const;
};

struct CgResult {
  Vector x;
  std::vector<double> residual_history;  // ||b - Mx|| / ||b|| after each step
  int iterations = 0;
};

using SpdApply = std::function<Vector(const Vector&)>;

/// Unpreconditioned conjugate gradients on M x = b from `x_init`.
///
/// Stops after `iters` steps or once the relative residual drops to `tol`.
/// Throws SpdViolation when <p, Mp> <= 0 and NumericError on NaN/Inf.
[[nodiscard]] CgResult cg_solve(const SpdApply& apply_spd, const Vector& b,
                                Vector x_init, int iters, double tol);

/// argmin_x 1/2 ||y - Ax||^2 + lambda/2 ||x - anchor||^2, by CG on the normal
/// equations (A^T A + lambda I) x = A^T y + lambda anchor, warm-started at the
/// anchor.
[[nodiscard]] Vector prox_gamma(const LinearOperator& op, const Vector& y,
                                const Vector& anchor, const ProxConfig& cfg);

/// Same as prox_gamma but also returns the CG diagnostics.
[[nodiscard]] CgResult prox_gamma_solve(const LinearOperator& op,
                                        const Vector& y, const Vector& anchor,
                                        const ProxConfig& cfg);

/// A^T y + (I - A^T A) anchor.
[[nodiscard]] Vector glue_gamma(const LinearOperator& op, const Vector& y,
                                const Vector& anchor);

[[nodiscard]] inline Vector prox_gamma(const LinearOperator& op,
                                       const Measurement& m,
                                       const Vector& anchor,
                                       const ProxConfig& cfg) {
  return prox_gamma(op, m.y, anchor, cfg);
}

[[nodiscard]] inline Vector glue_gamma(const LinearOperator& op,
                                       const Measurement& m,
                                       const Vector& anchor) {
  return glue_gamma(op, m.y, anchor);
}

}  // namespace p2l
