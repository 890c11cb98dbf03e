// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "p2l/codec.hpp"
#include "p2l/common.hpp"
#include "p2l/operators.hpp"
#include "p2l/score.hpp"

namespace p2l {

struct OracleResult {
  Vector posterior_mean;      // image space, D mean_z
  Vector posterior_cov_diag;  // latent posterior covariance diagonal
  Vector latent_mean;
  double log_evidence = 0.0;
};

/// Exact posterior of z ~ N(mu, Sigma), x = D z, y | x ~ N(A x, sigma^2 I).
[[nodiscard]] OracleResult gaussian_posterior_oracle(const Vector& prior_mean,
                                                     const Matrix& prior_cov,
                                                     const Matrix& decoder,
                                                     const LinearOperator& op,
                                                     const Measurement& y);

/// Convenience overload for a Gaussian score model and a linear codec.
[[nodiscard]] OracleResult gaussian_posterior_oracle(const ScoreModel& prior,
                                                     const LatentCodec& codec,
                                                     const LinearOperator& op,
                                                     const Measurement& y);

struct GaussianMoments {
  Vector mean;
  Matrix cov;
};

/// Mean and covariance of a single-component analytic model.
[[nodiscard]] GaussianMoments prior_moments(const ScoreModel& model);

inline constexpr double kPsnrCap = 99.0;

[[nodiscard]] double mse(const Vector& x, const Vector& ref);
/// 10 log10(peak^2 / MSE), capped at kPsnrCap.
[[nodiscard]] double psnr(const Vector& x, const Vector& ref, double peak);

}  // namespace p2l
