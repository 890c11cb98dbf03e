// SPDX-License-Identifier: Apache-2.0
#include "p2l/oracle.hpp"

#include <fmt/format.h>

#include <Eigen/Cholesky>

#include <cmath>
#include <numbers>

namespace p2l {

OracleResult gaussian_posterior_oracle(const Vector& prior_mean,
                                       const Matrix& prior_cov,
                                       const Matrix& decoder,
                                       const LinearOperator& op,
                                       const Measurement& y) {
  const Index k = prior_mean.size();
  if (prior_cov.rows() != k || prior_cov.cols() != k || decoder.cols() != k) {
    throw DimensionError(fmt::format("oracle: prior is {}-dim, covariance {}x{}, decoder {}x{}",
                                     k, prior_cov.rows(), prior_cov.cols(),
                                     decoder.rows(), decoder.cols()));
  }
  if (decoder.rows() != op.input_size() || y.y.size() != op.output_size()) {
    throw DimensionError("oracle: decoder, operator and measurement sizes disagree");
  }
  if (!(y.sigma_y > 0.0)) throw ParameterError("oracle: sigma_y must be > 0");

  Eigen::LLT<Matrix> prior_llt(prior_cov);
  if (prior_llt.info() != Eigen::Success ||
      prior_llt.matrixL().toDenseMatrix().diagonal().minCoeff() <= 1e-150) {
    throw NumericError("oracle: prior covariance is singular");
  }

  // G = A D, built column by column.
  Matrix g(op.output_size(), k);
  for (Index j = 0; j < k; ++j) g.col(j) = op.forward(decoder.col(j));

  const double s2 = y.sigma_y * y.sigma_y;
  const Matrix sg = prior_cov * g.transpose();  // Sigma G^T
  Matrix s = g * sg;
  s.diagonal().array() += s2;
  Eigen::LLT<Matrix> s_llt(s);
  if (s_llt.info() != Eigen::Success) {
    throw NumericError("oracle: innovation covariance is not positive definite");
  }
  const Vector innovation = y.y - g * prior_mean;
  const Vector alpha = s_llt.solve(innovation);

  OracleResult out;
  out.latent_mean = prior_mean + sg * alpha;
  out.posterior_mean = decoder * out.latent_mean;
  const Matrix cov = prior_cov - sg * s_llt.solve(sg.transpose());
  out.posterior_cov_diag = cov.diagonal();
  if ((out.posterior_cov_diag.array() <= 0.0).any()) {
    throw NumericError("oracle: posterior covariance lost positivity");
  }

  const Matrix l = s_llt.matrixL();
  const double logdet = 2.0 * l.diagonal().array().log().sum();
  const auto m = static_cast<double>(innovation.size());
  out.log_evidence = -0.5 * (innovation.dot(alpha) + logdet +
                             m * std::log(2.0 * std::numbers::pi));
  return out;
}

GaussianMoments prior_moments(const ScoreModel& model) {
  if (model.kind() != ScoreModelKind::gaussian_analytic ||
      model.components().size() != 1) {
    throw ParameterError("prior_moments: model is not a single Gaussian");
  }
  const auto& comp = model.components().front();
  GaussianMoments out;
  if (model.basis()) {
    const Matrix& u = *model.basis();
    out.mean = u * comp.mean;
    out.cov = u * comp.variance.asDiagonal() * u.transpose();
  } else {
    out.mean = comp.mean;
    out.cov = comp.variance.asDiagonal();
  }
  return out;
}

OracleResult gaussian_posterior_oracle(const ScoreModel& prior,
                                       const LatentCodec& codec,
                                       const LinearOperator& op,
                                       const Measurement& y) {
  if (!codec.decoder_matrix()) throw ParameterError("oracle: codec must be linear");
  const GaussianMoments m = prior_moments(prior);
  return gaussian_posterior_oracle(m.mean, m.cov, *codec.decoder_matrix(), op, y);
}

double mse(const Vector& x, const Vector& ref) {
  if (x.size() != ref.size() || x.size() == 0) {
    throw DimensionError(fmt::format("mse: sizes {} and {} differ", x.size(), ref.size()));
  }
  return (x - ref).squaredNorm() / static_cast<double>(x.size());
}

double psnr(const Vector& x, const Vector& ref, double peak) {
  if (!(peak > 0.0)) throw ParameterError("psnr: peak must be > 0");
  const double err = mse(x, ref);
  if (err == 0.0) return kPsnrCap;
  return std::min(kPsnrCap, 10.0 * std::log10(peak * peak / err));
}

}  // namespace p2l
