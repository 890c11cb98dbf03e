// SPDX-License-Identifier: Apache-2.0
#include "p2l/proximal.hpp"

#include "test_util.hpp"

#include <limits>

namespace p2l {
namespace {

using test::randn;
using test::rel_err;

LinearOperator op_of(OperatorKind kind, ImageShape shape = {8, 8}) {
  OperatorSpec s;
  s.kind = kind;
  s.kernel_size = 5;
  s.drop_probability = 0.5;
  s.seed = 11;
  return make_operator(s, shape);
}

Matrix spd(Index n, Seed seed) {
  const Matrix g = randn(n, n, seed);
  return g * g.transpose() + 0.5 * Matrix::Identity(n, n);
}

TEST(Cg, SolvesSmallSystemExactly) {
  // [[4,1],[1,3]] x = [1,2] has x = [1/11, 7/11].
  Matrix m(2, 2);
  m << 4, 1, 1, 3;
  const auto r = cg_solve([&m](const Vector& x) { return Vector(m * x); },
                          (Vector(2) << 1, 2).finished(), Vector::Zero(2), 10, 1e-14);
  EXPECT_NEAR(r.x[0], 1.0 / 11.0, 1e-15);
  EXPECT_NEAR(r.x[1], 7.0 / 11.0, 1e-15);
  EXPECT_LE(r.iterations, 2);
}

TEST(Cg, ConvergesWithinDimensionSteps) {
  const Matrix m = spd(20, 3);
  const Vector b = randn(20, 4);
  const auto r = cg_solve([&m](const Vector& x) { return Vector(m * x); }, b, Vector::Zero(20),
                          200, 1e-12);
  EXPECT_LE(rel_err(r.x, m.ldlt().solve(b)), 1e-8);
  EXPECT_EQ(r.residual_history.size(), static_cast<std::size_t>(r.iterations));
  EXPECT_LE(r.residual_history.back(), 1e-12);
}

TEST(Cg, IterationCapRespected) {
  const Matrix m = spd(30, 5);
  const auto r = cg_solve([&m](const Vector& x) { return Vector(m * x); }, randn(30, 6),
                          Vector::Zero(30), 3, 1e-14);
  EXPECT_EQ(r.iterations, 3);
}

TEST(Cg, WarmStartAtSolutionTakesNoSteps) {
  const Matrix m = spd(5, 1);
  const Vector x = randn(5, 2);
  const auto r =
      cg_solve([&m](const Vector& v) { return Vector(m * v); }, m * x, x, 10, 1e-10);
  EXPECT_EQ(r.iterations, 0);
  EXPECT_EQ(r.x, x);
}

TEST(Cg, ZeroRightHandSide) {
  const auto r = cg_solve([](const Vector& v) { return v; }, Vector::Zero(3), Vector::Ones(3), 5,
                          1e-10);
  EXPECT_EQ(r.x, Vector::Zero(3));
}

TEST(Cg, IndefiniteOperatorRaises) {
  const Matrix m = -Matrix::Identity(3, 3);
  EXPECT_THROW((void)cg_solve([&m](const Vector& v) { return Vector(m * v); }, Vector::Ones(3),
                              Vector::Zero(3), 5, 1e-10),
               SpdViolation);
}

TEST(Cg, NonFiniteOperatorRaises) {
  const double nan = std::numeric_limits<double>::quiet_NaN();
  EXPECT_THROW((void)cg_solve([nan](const Vector& v) { return Vector(v * nan); }, Vector::Ones(3),
                              Vector::Zero(3), 5, 1e-10),
               NumericError);
}

TEST(Cg, ArgumentChecks) {
  auto id = [](const Vector& v) { return v; };
  EXPECT_THROW((void)cg_solve(id, Vector::Ones(3), Vector::Zero(2), 5, 1e-10), DimensionError);
  EXPECT_THROW((void)cg_solve(id, Vector::Ones(3), Vector::Zero(3), 5, 0.0), ParameterError);
  EXPECT_THROW((void)cg_solve(id, Vector::Ones(3), Vector::Zero(3), -1, 1e-6), ParameterError);
}

TEST(ProxConfig, Validation) {
  EXPECT_NO_THROW(ProxConfig{}.validate());
  EXPECT_THROW((ProxConfig{0.0, 10, 1e-6}.validate()), ParameterError);
  EXPECT_THROW((ProxConfig{1.0, 0, 1e-6}.validate()), ParameterError);
  EXPECT_THROW((ProxConfig{1.0, 10, 0.0}.validate()), ParameterError);
}

TEST(Prox, MatchesDenseNormalEquations) {
  for (auto kind : {OperatorKind::identity, OperatorKind::sr_avgpool, OperatorKind::gaussian_blur,
                    OperatorKind::motion_blur, OperatorKind::inpaint_random,
                    OperatorKind::inpaint_freeform}) {
    const LinearOperator op = op_of(kind);
    const Matrix a = materialize(op.map());
    const Vector y = randn(op.output_size(), 1);
    const Vector anchor = randn(64, 2);
    const double lam = 0.3;
    const Vector oracle = (a.transpose() * a + lam * Matrix::Identity(64, 64))
                              .ldlt()
                              .solve(a.transpose() * y + lam * anchor);
    const Vector got = prox_gamma(op, y, anchor, {lam, 500, 1e-14});
    EXPECT_LE(rel_err(got, oracle), 1e-10) << to_string(kind);
  }
}

TEST(Prox, StationarityOfObjective) {
  const LinearOperator op = op_of(OperatorKind::gaussian_blur);
  const Vector y = randn(64, 3);
  const Vector anchor = randn(64, 4);
  const double lam = 2.0;
  const Vector x = prox_gamma(op, y, anchor, {lam, 200, 1e-14});
  const Vector grad = op.adjoint(op.forward(x) - y) + lam * (x - anchor);
  EXPECT_LE(grad.norm(), 1e-10 * (op.adjoint(y).norm() + lam * anchor.norm()));
}

TEST(Prox, LargeLambdaReturnsAnchor) {
  const LinearOperator op = op_of(OperatorKind::sr_avgpool);
  const Vector anchor = randn(64, 4);
  const Vector x = prox_gamma(op, randn(16, 5), anchor, {1e12, 50, 1e-14});
  EXPECT_LE(rel_err(x, anchor), 1e-10);
}

TEST(Prox, MaskClosedForm) {
  // For a selection operator the prox is (y + lam a) / (1 + lam) on kept pixels.
  const LinearOperator op = op_of(OperatorKind::inpaint_random);
  const Vector y = randn(op.output_size(), 1);
  const Vector anchor = randn(64, 2);
  const double lam = 0.7;
  const Vector got = prox_gamma(op, y, anchor, {lam, 50, 1e-15});
  for (Index i = 0; i < 64; ++i) {
    const bool kept = op.mask()->keep[static_cast<std::size_t>(i)];
    const double yi = op.adjoint(y)[i];
    const double want = kept ? (yi + lam * anchor[i]) / (1.0 + lam) : anchor[i];
    EXPECT_NEAR(got[i], want, 1e-13) << i;
  }
}

TEST(Prox, SmallLambdaApproachesGlueOnObservedPixels) {
  const LinearOperator op = op_of(OperatorKind::inpaint_random);
  const Vector y = randn(op.output_size(), 1);
  const Vector anchor = randn(64, 2);
  const Vector p = prox_gamma(op, y, anchor, {1e-8, 100, 1e-15});
  const Vector g = glue_gamma(op, y, anchor);
  EXPECT_LE((op.forward(p) - op.forward(g)).lpNorm<Eigen::Infinity>(), 1e-6);
}

TEST(Prox, AnchorShapeChecked) {
  const LinearOperator op = op_of(OperatorKind::identity);
  EXPECT_THROW((void)prox_gamma(op, Vector::Zero(64), Vector::Zero(10), {}), DimensionError);
  EXPECT_THROW((void)glue_gamma(op, Vector::Zero(64), Vector::Zero(10)), DimensionError);
  EXPECT_THROW((void)prox_gamma(op, Vector::Zero(64), Vector::Zero(64), {-1.0, 10, 1e-6}),
               ParameterError);
}

TEST(Glue, ReplacesObservedKeepsRest) {
  const LinearOperator op = op_of(OperatorKind::inpaint_random);
  const Vector y = randn(op.output_size(), 1);
  const Vector anchor = randn(64, 2);
  const Vector g = glue_gamma(op, y, anchor);
  EXPECT_LE((op.forward(g) - y).norm(), 1e-15);
  for (Index i = 0; i < 64; ++i)
    if (!op.mask()->keep[static_cast<std::size_t>(i)]) {
      EXPECT_EQ(g[i], anchor[i]);
    }
}

TEST(Glue, ConsistentWhenRowsOrthonormal) {
  const LinearOperator op = op_of(OperatorKind::identity);
  const Vector y = randn(64, 1);
  EXPECT_LE(rel_err(glue_gamma(op, y, randn(64, 2)), y), 1e-15);
}

}  // namespace
}  // namespace p2l
