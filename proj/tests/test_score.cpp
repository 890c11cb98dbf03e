// SPDX-License-Identifier: Apache-2.0
#include "p2l/score.hpp"

#include "p2l/codec.hpp"
#include "test_util.hpp"

#include <cmath>
#include <memory>

namespace p2l {
namespace {

using test::randn;
using test::rel_err;

std::shared_ptr<const NoiseSchedule> standard_schedule() {
  static const auto s =
      std::make_shared<const NoiseSchedule>(make_vp_schedule(1000, 1e-4, 2e-2));
  return s;
}

ScoreModel gaussian6() {
  const Vector mean = randn(6, 1);
  const Vector var = (Vector(6) << 0.5, 1.0, 2.0, 0.1, 3.0, 0.0).finished();
  Matrix basis = random_orthonormal_rows(6, 6, 2).transpose();
  return make_gaussian_model(standard_schedule(), mean, var, basis, 4);
}

ScoreModel gmm3() {
  std::vector<MixtureComponent> comps;
  for (int i = 0; i < 3; ++i) {
    MixtureComponent c;
    c.mean = 2.0 * randn(5, 10 + i);
    c.variance = (0.3 + 0.2 * i) * Vector::Ones(5);
    c.log_weight = std::log(0.2 + 0.1 * i);
    c.tag = Vector::Zero(4);
    c.tag[i] = 2.0;
    comps.push_back(c);
  }
  return make_gmm_model(standard_schedule(), comps, random_orthonormal_rows(5, 5, 7).transpose(), 4);
}

ScoreModel toy5() {
  ToyArch arch;
  arch.hidden = 16;
  arch.embedding_dim = 3;
  ToyNetwork n = init_toy_network(5, arch, 4);
  Rng rng(9);
  n.w_c = standard_normal(16, 3, rng);
  n.w_out = standard_normal(5, 16, rng);
  return make_toy_model(standard_schedule(), n);
}

TEST(Schedule, EndpointsAndInitialValue) {
  const auto& s = *standard_schedule();
  EXPECT_EQ(s.T, 1000);
  EXPECT_DOUBLE_EQ(s.beta.front(), 1e-4);
  EXPECT_DOUBLE_EQ(s.beta.back(), 2e-2);
  EXPECT_EQ(s.abar(0), 1.0);
}

TEST(Schedule, CumulativeProductMatchesLogSum) {
  const auto& s = *standard_schedule();
  double log_sum = 0.0;
  for (int t = 1; t <= 1000; ++t) {
    log_sum += std::log1p(-(1e-4 + (2e-2 - 1e-4) * (t - 1) / 999.0));
    if (t % 100 == 0) {
      EXPECT_NEAR(std::log(s.abar(t)), log_sum, 1e-10) << t;
    }
  }
}

TEST(Schedule, AlphaBarStrictlyDecreasingInUnitInterval) {
  const auto& s = *standard_schedule();
  for (int t = 1; t <= s.T; ++t) {
    EXPECT_LT(s.abar(t), s.abar(t - 1));
    EXPECT_GT(s.abar(t), 0.0);
  }
  EXPECT_LT(s.abar(1000), 1e-4);
}

TEST(Schedule, InvalidArgumentsRejected) {
  EXPECT_THROW((void)make_vp_schedule(0, 1e-4, 2e-2), ParameterError);
  EXPECT_THROW((void)make_vp_schedule(10, 2e-2, 1e-4), ParameterError);
  EXPECT_THROW((void)make_vp_schedule(10, 0.0, 1e-2), ParameterError);
  EXPECT_THROW((void)standard_schedule()->abar(1001), ParameterError);
  EXPECT_THROW((void)standard_schedule()->abar(-1), ParameterError);
}

TEST(GaussianModel, EpsilonMatchesDenseScore) {
  const Vector mean = randn(6, 1);
  const Vector var = (Vector(6) << 0.5, 1.0, 2.0, 0.1, 3.0, 0.0).finished();
  const Matrix u = random_orthonormal_rows(6, 6, 2).transpose();
  const ScoreModel m = make_gaussian_model(standard_schedule(), mean, var, u, 4);
  for (int t : {1, 10, 250, 999}) {
    const double ab = standard_schedule()->abar(t);
    const Matrix cov = ab * u * var.asDiagonal() * u.transpose() +
                       (1.0 - ab) * Matrix::Identity(6, 6);
    const Vector z = randn(6, 20 + t);
    const Vector oracle = std::sqrt(1.0 - ab) * cov.ldlt().solve(z - std::sqrt(ab) * mean);
    EXPECT_LE(rel_err(m.epsilon(z, t, Vector::Zero(4)), oracle), 1e-12) << t;
  }
}

TEST(GaussianModel, EmbeddingHasNoEffect) {
  const ScoreModel m = gaussian6();
  const Vector z = randn(6, 3);
  EXPECT_EQ(m.epsilon(z, 50, Vector::Zero(4)), m.epsilon(z, 50, randn(4, 5)));
  EXPECT_EQ(m.vjp_c(z, 50, Vector::Zero(4), randn(6, 1)), Vector::Zero(4));
}

TEST(GaussianModel, SamplesHaveRequestedMoments) {
  const Vector mean = (Vector(2) << 1.0, -2.0).finished();
  const Vector var = (Vector(2) << 0.25, 4.0).finished();
  const ScoreModel m = make_gaussian_model(standard_schedule(), mean, var);
  Rng rng(1);
  constexpr int kN = 20000;
  Vector sum = Vector::Zero(2);
  Vector sq = Vector::Zero(2);
  for (int i = 0; i < kN; ++i) {
    const Vector s = m.sample_prior(rng, Vector::Zero(8));
    sum += s;
    sq += s.cwiseProduct(s);
  }
  const Vector mu = sum / kN;
  const Vector v = sq / kN - mu.cwiseProduct(mu);
  for (Index i = 0; i < 2; ++i) {
    EXPECT_NEAR(mu[i], mean[i], 5.0 * std::sqrt(var[i] / kN));
    EXPECT_NEAR(v[i], var[i], 5.0 * var[i] * std::sqrt(2.0 / kN));
  }
}

TEST(GmmModel, EpsilonIsScaledNegativeScore) {
  const ScoreModel m = gmm3();
  const Vector c = randn(4, 2);
  const Vector z = randn(5, 3);
  const int t = 300;
  const double h = 1e-5;
  Vector grad(5);
  for (Index i = 0; i < 5; ++i) {
    Vector zp = z, zm = z;
    zp[i] += h;
    zm[i] -= h;
    grad[i] = (m.log_density(zp, t, c) - m.log_density(zm, t, c)) / (2 * h);
  }
  const double sn = std::sqrt(1.0 - standard_schedule()->abar(t));
  EXPECT_LE(rel_err(m.epsilon(z, t, c), -sn * grad), 1e-7);
}

TEST(GmmModel, TweedieIsPosteriorMean) {
  const ScoreModel m = gmm3();
  const Vector c = randn(4, 2);
  for (int t : {5, 200, 900}) {
    const Vector z = randn(5, 30 + t);
    const Vector est = tweedie(m.schedule(), z, t, m.epsilon(z, t, c));
    EXPECT_LE(rel_err(est, m.posterior_mean(z, t, c)), 1e-10) << t;
  }
}

TEST(GmmModel, MixtureWeightsAreSoftmax) {
  const ScoreModel m = gmm3();
  const Vector c = (Vector(4) << 0.5, -0.3, 1.0, 7.0).finished();
  Eigen::ArrayXd logits(3);
  for (int i = 0; i < 3; ++i) logits[i] = std::log(0.2 + 0.1 * i) + 2.0 * c[i];
  const Eigen::ArrayXd expected = logits.exp() / logits.exp().sum();
  EXPECT_LE(rel_err(m.mixture_weights(c), expected.matrix()), 1e-14);
  EXPECT_NEAR(m.mixture_weights(c).sum(), 1.0, 1e-15);
}

TEST(GmmModel, TagDirectionSelectsComponent) {
  const ScoreModel m = gmm3();
  Vector c = Vector::Zero(4);
  c[1] = 10.0;
  EXPECT_GT(m.mixture_weights(c)[1], 0.999);
  // At small t the responsibilities follow the data, not the tag.
  const Vector z = m.components()[0].mean;
  const Vector zi = *m.basis() * z;
  EXPECT_GT(m.responsibilities(zi, 1, Vector::Zero(4))[0], 0.99);
}

TEST(GmmModel, ResponsibilitiesSumToOne) {
  const ScoreModel m = gmm3();
  EXPECT_NEAR(m.responsibilities(randn(5, 1), 500, randn(4, 2)).sum(), 1.0, 1e-14);
}

TEST(ScoreVjp, CertifiedForAllModels) {
  const ScoreModel g = gaussian6();
  const ScoreModel mix = gmm3();
  const ScoreModel toy = toy5();
  for (int t : {3, 100, 700}) {
    EXPECT_TRUE(check_vjp(g.epsilon_map_z(t, Vector::Zero(4)), randn(6, 1), 10, 1e-5, 1e-5).pass);
    EXPECT_TRUE(check_vjp(mix.epsilon_map_z(t, randn(4, 2)), randn(5, 3), 10, 1e-5, 1e-5).pass);
    EXPECT_TRUE(check_vjp(mix.epsilon_map_c(t, randn(5, 4)), randn(4, 5), 10, 1e-5, 1e-5).pass);
    EXPECT_TRUE(check_vjp(toy.epsilon_map_z(t, randn(3, 6)), randn(5, 7), 10, 1e-5, 1e-5).pass);
    EXPECT_TRUE(check_vjp(toy.epsilon_map_c(t, randn(5, 8)), randn(3, 9), 10, 1e-5, 1e-5).pass);
  }
}

TEST(ScoreModel, ArgumentChecks) {
  const ScoreModel m = gmm3();
  EXPECT_THROW((void)m.epsilon(randn(4, 1), 10, Vector::Zero(4)), DimensionError);
  EXPECT_THROW((void)m.epsilon(randn(5, 1), 10, Vector::Zero(3)), DimensionError);
  EXPECT_THROW((void)m.epsilon(randn(5, 1), 0, Vector::Zero(4)), ParameterError);
  EXPECT_THROW((void)m.epsilon(randn(5, 1), 1001, Vector::Zero(4)), ParameterError);
  EXPECT_THROW((void)toy5().log_density(randn(5, 1), 10, Vector::Zero(3)), ParameterError);
  EXPECT_THROW((void)make_gaussian_model(standard_schedule(), Vector::Zero(2), -Vector::Ones(2)),
               ParameterError);
  EXPECT_THROW((void)make_gaussian_model(standard_schedule(), Vector::Zero(2), Vector::Ones(2),
                                         Matrix::Ones(2, 2)),
               ParameterError);
  EXPECT_THROW((void)make_gmm_model(standard_schedule(), {}), ParameterError);
}

TEST(Tweedie, InvertsForwardNoising) {
  const auto& s = *standard_schedule();
  const Vector z0 = randn(8, 1);
  const Vector eps = randn(8, 2);
  const int t = 400;
  const Vector zt = std::sqrt(s.abar(t)) * z0 + std::sqrt(1.0 - s.abar(t)) * eps;
  EXPECT_LE(rel_err(tweedie(s, zt, t, eps), z0), 1e-13);
  EXPECT_THROW((void)tweedie(s, zt, t, randn(7, 3)), DimensionError);
}

TEST(ToyNetwork, FlattenCountsEveryParameter) {
  ToyArch arch;
  arch.hidden = 7;
  arch.embedding_dim = 3;
  const ToyNetwork n = init_toy_network(4, arch, 1);
  EXPECT_EQ(n.flatten().size(), std::size_t(7 * 4 + 7 * 3 + 7 * 2 + 7 + 4 * 7 + 4));
  EXPECT_EQ(init_toy_network(4, arch, 1), n);
}

TEST(ToyTraining, LossDecreasesAndIsReproducible) {
  Rng rng(3);
  const Matrix data = standard_normal(4, 256, rng) * 0.5;
  ToyArch arch;
  arch.hidden = 16;
  arch.embedding_dim = 2;
  arch.epochs = 30;
  arch.batch_size = 32;
  const auto a = train_toy_denoiser(data, standard_schedule(), arch, 5);
  const auto b = train_toy_denoiser(data, standard_schedule(), arch, 5);
  ASSERT_EQ(a.epoch_loss.size(), 30u);
  EXPECT_EQ(a.epoch_loss, b.epoch_loss);
  EXPECT_LT(a.epoch_loss.back(), a.epoch_loss.front());
  EXPECT_EQ(a.model.kind(), ScoreModelKind::learned_toy);
}

TEST(ToyTraining, RejectsBadArguments) {
  ToyArch arch;
  arch.batch_size = 0;
  EXPECT_THROW((void)train_toy_denoiser(Matrix::Zero(2, 4), standard_schedule(), arch, 0),
               ParameterError);
  EXPECT_THROW((void)train_toy_denoiser(Matrix(2, 0), standard_schedule(), ToyArch{}, 0),
               ParameterError);
}

}  // namespace
}  // namespace p2l
