// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "p2l/common.hpp"

#include <cmath>

namespace p2l {

struct AdamParams {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

/// Textbook Adam with 1 - beta^t bias correction.
class Adam {
 public:
  Adam(Index dim, double learning_rate, AdamParams params = {})
      : lr_(learning_rate),
        p_(params),
        m_(Vector::Zero(dim)),
        v_(Vector::Zero(dim)) {}

  /// Returns the increment to subtract from the parameters.
  [[nodiscard]] Vector step(const Vector& grad) {
    ++t_;
    m_ = p_.beta1 * m_ + (1.0 - p_.beta1) * grad;
    v_ = p_.beta2 * v_ + (1.0 - p_.beta2) * grad.cwiseProduct(grad);
    const double c1 = 1.0 - std::pow(p_.beta1, t_);
    const double c2 = 1.0 - std::pow(p_.beta2, t_);
    return (lr_ * (m_ / c1).array() /
            ((v_ / c2).array().sqrt() + p_.eps))
        .matrix();
  }

  void reset() {
    m_.setZero();
    v_.setZero();
    t_ = 0;
  }
  void set_learning_rate(double lr) { lr_ = lr; }
  [[nodiscard]] double learning_rate() const { return lr_; }
  [[nodiscard]] int iterations() const { return t_; }

 private:
  double lr_;
  AdamParams p_;
  Vector m_;
  Vector v_;
  int t_ = 0;
};

/// Moment-history update applied to latents: the moments carry across
/// diffusion steps and are rescaled by fixed (1 - beta) factors rather than
/// 1 - beta^t.
class HistoryGradient {
 public:
  explicit HistoryGradient(Index dim, AdamParams params = {})
      : p_(params), m_(Vector::Zero(dim)), v_(Vector::Zero(dim)) {}

  /// Returns m_hat / (sqrt(v_hat) + eps); caller scales by the step size.
  [[nodiscard]] Vector direction(const Vector& grad) {
    m_ = p_.beta1 * m_ + (1.0 - p_.beta1) * grad;
    v_ = p_.beta2 * v_ + (1.0 - p_.beta2) * grad.cwiseProduct(grad);
    const Eigen::ArrayXd m_hat = m_.array() / (1.0 - p_.beta1);
    const Eigen::ArrayXd v_hat = v_.array() / (1.0 - p_.beta2);
    return (m_hat / (v_hat.sqrt() + p_.eps)).matrix();
  }

  [[nodiscard]] const Vector& first_moment() const { return m_; }
  [[nodiscard]] const Vector& second_moment() const { return v_; }

 private:
  AdamParams p_;
  Vector m_;
  Vector v_;
};

}  // namespace p2l
