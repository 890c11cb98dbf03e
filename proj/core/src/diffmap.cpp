// SPDX-License-Identifier: Apache-2.0
#include "p2l/diffmap.hpp"

#include "p2l/rng.hpp"

#include <fmt/format.h>

#include <algorithm>
#include <cmath>
#include <limits>

namespace p2l {

std::string Shape::to_string() const {
  std::string s = "[";
  for (std::size_t i = 0; i < dims_.size(); ++i) {
    if (i) s += "x";
    s += std::to_string(dims_[i]);
  }
  return s + "]";
}

bool all_finite(const Vector& v) { return v.allFinite(); }

namespace {

void require_size(const std::string& what, const Shape& expected,
                  Index actual) {
  if (expected.size() != actual) {
    throw DimensionError(fmt::format("{}: expected {} ({} entries), got {}",
                                     what, expected.to_string(),
                                     expected.size(), actual));
  }
}

}  // namespace

DiffMap::DiffMap(std::string name, Shape input, Shape output,
                 ForwardFn forward, VjpFn vjp, bool linear)
    : impl_(std::make_shared<const Impl>(Impl{std::move(name), std::move(input),
                                              std::move(output),
                                              std::move(forward),
                                              std::move(vjp), linear})) {}

Vector DiffMap::apply(const Vector& x) const {
  require_size(impl_->name + " input", impl_->input, x.size());
  return impl_->forward(x);
}

Vector DiffMap::vjp(const Vector& x, const Vector& u) const {
  require_size(impl_->name + " vjp point", impl_->input, x.size());
  require_size(impl_->name + " cotangent", impl_->output, u.size());
  return impl_->vjp(x, u);
}

Vector DiffMap::adjoint(const Vector& u) const {
  if (!impl_->linear) {
    throw ParameterError(impl_->name + ": adjoint requested for nonlinear map");
  }
  require_size(impl_->name + " cotangent", impl_->output, u.size());
  return impl_->vjp(Vector::Zero(impl_->input.size()), u);
}

DiffMap compose(const DiffMap& outer, const DiffMap& inner) {
  if (inner.output_size() != outer.input_size()) {
    throw DimensionError(fmt::format(
        "compose: {} output {} does not match {} input {}", inner.name(),
        inner.output_shape().to_string(), outer.name(),
        outer.input_shape().to_string()));
  }
  auto forward = [outer, inner](const Vector& x) {
    return outer.apply(inner.apply(x));
  };
  auto vjp = [outer, inner](const Vector& x, const Vector& u) {
    return inner.vjp(x, outer.vjp(inner.apply(x), u));
  };
  return DiffMap(outer.name() + "∘" + inner.name(), inner.input_shape(),
                 outer.output_shape(), forward, vjp,
                 outer.is_linear() && inner.is_linear());
}

DiffMap identity_map(const Shape& shape) {
  return DiffMap(
      "identity", shape, shape, [](const Vector& x) { return x; },
      [](const Vector&, const Vector& u) { return u; }, true);
}

DiffMap scale_map(const Shape& shape, double factor) {
  return DiffMap(
      fmt::format("scale({})", factor), shape, shape,
      [factor](const Vector& x) -> Vector { return factor * x; },
      [factor](const Vector&, const Vector& u) -> Vector { return factor * u; },
      true);
}

DiffMap linear_map(Matrix m, std::string name) {
  auto shared = std::make_shared<const Matrix>(std::move(m));
  const Shape in = Shape::flat(shared->cols());
  const Shape out = Shape::flat(shared->rows());
  return DiffMap(
      std::move(name), in, out,
      [shared](const Vector& x) -> Vector { return *shared * x; },
      [shared](const Vector&, const Vector& u) -> Vector {
        return shared->transpose() * u;
      },
      true);
}

DiffMap affine_map(Matrix m, Vector offset, std::string name) {
  if (offset.size() != m.rows()) {
    throw DimensionError(fmt::format("affine_map: offset has {} entries, {} rows",
                                     offset.size(), m.rows()));
  }
  auto shared = std::make_shared<const Matrix>(std::move(m));
  auto b = std::make_shared<const Vector>(std::move(offset));
  const Shape in = Shape::flat(shared->cols());
  const Shape out = Shape::flat(shared->rows());
  return DiffMap(
      std::move(name), in, out,
      [shared, b](const Vector& x) -> Vector { return *shared * x + *b; },
      [shared](const Vector&, const Vector& u) -> Vector {
        return shared->transpose() * u;
      });
}

DiffMap tanh_map(const Shape& shape) {
  return DiffMap(
      "tanh", shape, shape,
      [](const Vector& x) -> Vector { return x.array().tanh().matrix(); },
      [](const Vector& x, const Vector& u) -> Vector {
        const Eigen::ArrayXd th = x.array().tanh();
        return ((1.0 - th.square()) * u.array()).matrix();
      });
}

DiffMap mlp_tanh_map(Matrix w1, Vector b1, Matrix w2, Vector b2,
                     std::string name) {
  if (b1.size() != w1.rows() || w2.cols() != w1.rows() ||
      b2.size() != w2.rows()) {
    throw DimensionError(fmt::format(
        "mlp_tanh_map: inconsistent layer sizes W1 {}x{}, b1 {}, W2 {}x{}, b2 {}",
        w1.rows(), w1.cols(), b1.size(), w2.rows(), w2.cols(), b2.size()));
  }
  struct Weights {
    Matrix w1;
    Vector b1;
    Matrix w2;
    Vector b2;
  };
  auto p = std::make_shared<const Weights>(
      Weights{std::move(w1), std::move(b1), std::move(w2), std::move(b2)});
  const Shape in = Shape::flat(p->w1.cols());
  const Shape out = Shape::flat(p->w2.rows());
  return DiffMap(
      std::move(name), in, out,
      [p](const Vector& x) -> Vector {
        const Vector h = (p->w1 * x + p->b1).array().tanh().matrix();
        return p->w2 * h + p->b2;
      },
      [p](const Vector& x, const Vector& u) -> Vector {
        const Eigen::ArrayXd h = (p->w1 * x + p->b1).array().tanh();
        const Vector gh = p->w2.transpose() * u;
        const Vector gpre = ((1.0 - h.square()) * gh.array()).matrix();
        return p->w1.transpose() * gpre;
      });
}

DiffMap sum_map(const DiffMap& a, const DiffMap& b) {
  if (a.input_size() != b.input_size() || a.output_size() != b.output_size()) {
    throw DimensionError(fmt::format("sum_map: {} -> {} vs {} -> {}",
                                     a.input_shape().to_string(),
                                     a.output_shape().to_string(),
                                     b.input_shape().to_string(),
                                     b.output_shape().to_string()));
  }
  return DiffMap(
      a.name() + "+" + b.name(), a.input_shape(), a.output_shape(),
      [a, b](const Vector& x) -> Vector { return a.apply(x) + b.apply(x); },
      [a, b](const Vector& x, const Vector& u) -> Vector {
        return a.vjp(x, u) + b.vjp(x, u);
      },
      a.is_linear() && b.is_linear());
}

Matrix materialize(const DiffMap& map) {
  const Index n = map.input_size();
  Matrix m(map.output_size(), n);
  Vector e = Vector::Zero(n);
  for (Index j = 0; j < n; ++j) {
    e[j] = 1.0;
    m.col(j) = map.apply(e);
    e[j] = 0.0;
  }
  return m;
}

VjpReport check_vjp(const DiffMap& map, const Vector& x, int trials,
                    double step, double tol, Seed seed) {
  if (!(step > 0.0)) throw ParameterError("check_vjp: step must be positive");
  if (trials < 1) throw ParameterError("check_vjp: trials must be >= 1");

  Rng rng(seed);
  VjpReport report;
  for (int trial = 0; trial < trials; ++trial) {
    const Vector u = random_unit(map.output_size(), rng);
    const Vector d = random_unit(map.input_size(), rng);
    const Vector fp = map.apply(x + step * d);
    const Vector fm = map.apply(x - step * d);
    if (!fp.allFinite() || !fm.allFinite()) {
      throw NumericError(map.name() + ": non-finite forward output in check_vjp");
    }
    const double numeric = u.dot(fp - fm) / (2.0 * step);
    const double analytic = map.vjp(x, u).dot(d);
    const double denom =
        std::max({std::abs(numeric), std::abs(analytic), 1e-12});
    report.max_rel_err =
        std::max(report.max_rel_err, std::abs(numeric - analytic) / denom);
  }
  report.pass = report.max_rel_err <= tol;
  return report;
}

double dot_test(const DiffMap& map, int trials, Seed seed) {
  if (trials < 1) throw ParameterError("dot_test: trials must be >= 1");
  Rng rng(seed);
  double worst = 0.0;
  for (int trial = 0; trial < trials; ++trial) {
    const Vector x = standard_normal(map.input_size(), rng);
    const Vector u = standard_normal(map.output_size(), rng);
    const double lhs = map.apply(x).dot(u);
    const double rhs = x.dot(map.vjp(x, u));
    const double err = std::abs(lhs - rhs) /
                       (std::abs(lhs) + std::numeric_limits<double>::epsilon());
    worst = std::max(worst, err);
  }
  return worst;
}

}  // namespace p2l
