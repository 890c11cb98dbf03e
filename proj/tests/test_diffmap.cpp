// SPDX-License-Identifier: Apache-2.0
#include "p2l/diffmap.hpp"

#include "test_util.hpp"

#include <cmath>

namespace p2l {
namespace {

using test::randn;
using test::rel_err;

DiffMap scaled_vjp(const DiffMap& m, double s) {
  return DiffMap(
      "wrong", m.input_shape(), m.output_shape(), [m](const Vector& x) { return m.apply(x); },
      [m, s](const Vector& x, const Vector& u) -> Vector { return s * m.vjp(x, u); });
}

TEST(DiffMapApply, ScaleByTwo) {
  const DiffMap m = scale_map(Shape::flat(1), 2.0);
  EXPECT_DOUBLE_EQ(m.apply(Vector::Constant(1, 3.0))[0], 6.0);
}

TEST(DiffMapApply, IdentityReturnsInput) {
  const Vector x = (Vector(3) << 1, 2, 3).finished();
  EXPECT_EQ(identity_map(Shape::flat(3)).apply(x), x);
}

TEST(DiffMapApply, TanhAtOrigin) {
  EXPECT_EQ(tanh_map(Shape::flat(1)).apply(Vector::Zero(1))[0], 0.0);
}

TEST(DiffMapApply, ShapeMismatchNamesBothShapes) {
  const DiffMap m = identity_map(Shape{2, 3});
  try {
    (void)m.apply(Vector::Zero(5));
    FAIL() << "expected DimensionError";
  } catch (const DimensionError& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("[2x3]"), std::string::npos) << msg;
    EXPECT_NE(msg.find("5"), std::string::npos) << msg;
  }
}

TEST(DiffMapApply, ForwardIsDeterministic) {
  const DiffMap m = mlp_tanh_map(randn(5, 4, 1), randn(5, 2), randn(3, 5, 3), randn(3, 4));
  const Vector x = randn(4, 5);
  EXPECT_EQ(m.apply(x), m.apply(x));
}

TEST(DiffMapVjp, ScaleByTwo) {
  const DiffMap m = scale_map(Shape::flat(1), 2.0);
  EXPECT_DOUBLE_EQ(m.vjp(Vector::Constant(1, -7.0), Vector::Constant(1, 3.0))[0], 6.0);
}

TEST(DiffMapVjp, ZeroCotangentGivesZero) {
  const DiffMap m = mlp_tanh_map(randn(5, 4, 1), randn(5, 2), randn(3, 5, 3), randn(3, 4));
  EXPECT_EQ(m.vjp(randn(4, 9), Vector::Zero(3)), Vector::Zero(4));
}

TEST(DiffMapVjp, TanhMatchesCentralDifference) {
  const DiffMap m = tanh_map(Shape::flat(1));
  const double x = 0.5;
  const double h = 1e-5;
  const double fd = (std::tanh(x + h) - std::tanh(x - h)) / (2 * h);
  const double an = m.vjp(Vector::Constant(1, x), Vector::Ones(1))[0];
  EXPECT_NEAR(an, 1.0 - std::tanh(x) * std::tanh(x), 1e-15);
  EXPECT_LE(std::abs(fd - an) / std::abs(an), 1e-6);
}

TEST(DiffMapVjp, LinearInCotangent) {
  const DiffMap m = mlp_tanh_map(randn(6, 4, 1), randn(6, 2), randn(3, 6, 3), randn(3, 4));
  const Vector x = randn(4, 5);
  const Vector u = randn(3, 6);
  const Vector v = randn(3, 7);
  const Vector lhs = m.vjp(x, 1.5 * u - 0.25 * v);
  const Vector rhs = 1.5 * m.vjp(x, u) - 0.25 * m.vjp(x, v);
  EXPECT_LE(rel_err(lhs, rhs), 1e-10);
}

TEST(DiffMapVjp, LinearMapIgnoresPoint) {
  const DiffMap m = linear_map(randn(3, 4, 8));
  const Vector u = randn(3, 9);
  EXPECT_EQ(m.vjp(randn(4, 10), u), m.vjp(randn(4, 11), u));
}

TEST(DiffMapVjp, ShapeMismatchThrows) {
  const DiffMap m = linear_map(randn(3, 4, 8));
  EXPECT_THROW((void)m.vjp(Vector::Zero(4), Vector::Zero(4)), DimensionError);
  EXPECT_THROW((void)m.vjp(Vector::Zero(3), Vector::Zero(3)), DimensionError);
}

TEST(DiffMapAdjoint, RejectsNonlinearMap) {
  EXPECT_THROW((void)tanh_map(Shape::flat(2)).adjoint(Vector::Zero(2)), ParameterError);
}

TEST(Compose, AffineChainRule) {
  const DiffMap f = scale_map(Shape::flat(1), 2.0);
  const DiffMap g = affine_map(Matrix::Identity(1, 1), Vector::Ones(1));
  const DiffMap fg = compose(f, g);
  EXPECT_DOUBLE_EQ(fg.apply(Vector::Ones(1))[0], 4.0);
  EXPECT_DOUBLE_EQ(fg.vjp(Vector::Constant(1, 9.0), Vector::Ones(1))[0], 2.0);
}

TEST(Compose, IdentityIsNeutral) {
  const DiffMap m = mlp_tanh_map(randn(5, 4, 1), randn(5, 2), randn(3, 5, 3), randn(3, 4));
  const DiffMap im = compose(identity_map(Shape::flat(3)), m);
  const Vector x = randn(4, 5);
  const Vector u = randn(3, 6);
  EXPECT_EQ(im.apply(x), m.apply(x));
  EXPECT_EQ(im.vjp(x, u), m.vjp(x, u));
}

TEST(Compose, MatchesDenseJacobianProduct) {
  // A o D with D = W2 tanh(W1 z + b1) + b2; oracle J = A W2 diag(1 - h^2) W1.
  const Matrix a = randn(8, 8, 1);
  const Matrix w1 = randn(8, 8, 2);
  const Vector b1 = randn(8, 3);
  const Matrix w2 = randn(8, 8, 4);
  const Vector b2 = randn(8, 5);
  const DiffMap chain = compose(linear_map(a), mlp_tanh_map(w1, b1, w2, b2));
  const Vector z = 0.3 * randn(8, 6);
  const Vector u = randn(8, 7);
  const Eigen::ArrayXd h = (w1 * z + b1).array().tanh();
  const Matrix jac = a * w2 * (1.0 - h.square()).matrix().asDiagonal() * w1;
  EXPECT_LE(rel_err(chain.vjp(z, u), jac.transpose() * u), 1e-12);
}

TEST(Compose, IncompatibleShapesThrow) {
  EXPECT_THROW((void)compose(linear_map(randn(2, 3, 1)), linear_map(randn(4, 2, 2))),
               DimensionError);
}

TEST(Compose, Associative) {
  const DiffMap f = mlp_tanh_map(randn(5, 4, 1), randn(5, 2), randn(3, 5, 3), randn(3, 4));
  const DiffMap g = tanh_map(Shape::flat(4));
  const DiffMap h = linear_map(randn(4, 6, 5));
  const DiffMap left = compose(compose(f, g), h);
  const DiffMap right = compose(f, compose(g, h));
  for (Seed s = 0; s < 10; ++s) {
    const Vector x = randn(6, 100 + s);
    const Vector u = randn(3, 200 + s);
    EXPECT_LE(rel_err(left.apply(x), right.apply(x)), 1e-12);
    EXPECT_LE(rel_err(left.vjp(x, u), right.vjp(x, u)), 1e-12);
  }
}

TEST(CheckVjp, LinearMapIsExact) {
  const auto r = check_vjp(linear_map(randn(5, 7, 1)), randn(7, 2), 10, 1e-3, 1e-10);
  EXPECT_LE(r.max_rel_err, 1e-10);
  EXPECT_TRUE(r.pass);
}

TEST(CheckVjp, TanhMlpPasses) {
  const DiffMap m = mlp_tanh_map(randn(16, 8, 1), randn(16, 2), randn(4, 16, 3), randn(4, 4));
  EXPECT_TRUE(check_vjp(m, randn(8, 5), 20, 1e-5, 1e-4).pass);
}

TEST(CheckVjp, DetectsScaledVjp) {
  const DiffMap bad = scaled_vjp(linear_map(randn(5, 7, 1)), 1.01);
  const auto r = check_vjp(bad, randn(7, 2), 5, 1e-5, 1e-4);
  EXPECT_FALSE(r.pass);
  EXPECT_GT(r.max_rel_err, 5e-3);
}

TEST(CheckVjp, RejectsBadArguments) {
  const DiffMap m = identity_map(Shape::flat(2));
  EXPECT_THROW((void)check_vjp(m, Vector::Zero(2), 1, 0.0, 1e-4), ParameterError);
  EXPECT_THROW((void)check_vjp(m, Vector::Zero(2), 0, 1e-5, 1e-4), ParameterError);
}

TEST(CheckVjp, NonFiniteForwardThrows) {
  const DiffMap blowup(
      "blowup", Shape::flat(1), Shape::flat(1),
      [](const Vector& x) -> Vector { return x.array().log().matrix(); },
      [](const Vector& x, const Vector& u) -> Vector { return u.cwiseQuotient(x); });
  EXPECT_THROW((void)check_vjp(blowup, Vector::Zero(1), 1, 1e-5, 1e-4), NumericError);
}

TEST(DotTest, LinearMapsSatisfyAdjointIdentity) {
  const DiffMap chain = compose(linear_map(randn(6, 9, 1)), linear_map(randn(9, 4, 2)));
  EXPECT_LE(dot_test(chain, 100, 3), 1e-8);
  EXPECT_LE(dot_test(sum_map(scale_map(Shape::flat(4), 3.0), identity_map(Shape::flat(4))), 100, 4),
            1e-8);
}

TEST(Materialize, RecoversMatrix) {
  const Matrix a = randn(3, 5, 1);
  EXPECT_LE((materialize(linear_map(a)) - a).norm(), 1e-15);
}

}  // namespace
}  // namespace p2l
