// SPDX-License-Identifier: Apache-2.0
#include "p2l/checks.hpp"

#include "p2l/codec.hpp"
#include "p2l/operators.hpp"
#include "p2l/proximal.hpp"
#include "p2l/rng.hpp"
#include "p2l/score.hpp"
#include "p2l/solvers.hpp"

#include <fmt/format.h>

#include <algorithm>
#include <cmath>
#include <functional>
#include <memory>

namespace p2l {

namespace {

constexpr OperatorKind kAllKinds[] = {
    OperatorKind::identity,      OperatorKind::sr_avgpool,     OperatorKind::gaussian_blur,
    OperatorKind::motion_blur,   OperatorKind::inpaint_random, OperatorKind::inpaint_freeform};

OperatorSpec small_spec(OperatorKind kind, Seed seed) {
  OperatorSpec s;
  s.kind = kind;
  s.kernel_size = 5;
  s.seed = seed;
  return s;
}

CheckResult at_most(std::string name, double value, double threshold) {
  return {std::move(name), value, threshold, value <= threshold};
}

// Max relative error between a directional derivative from central
// differences and <grad, d> over random unit directions.
double scalar_fd_error(const std::function<double(const Vector&)>& f, const Vector& x,
                       const Vector& grad, int trials, double h, Rng& rng) {
  double worst = 0.0;
  for (int i = 0; i < trials; ++i) {
    const Vector d = random_unit(x.size(), rng);
    const double fd = (f(x + h * d) - f(x - h * d)) / (2.0 * h);
    const double an = grad.dot(d);
    worst = std::max(worst, std::abs(fd - an) / std::max({std::abs(fd), std::abs(an), 1e-12}));
  }
  return worst;
}

}  // namespace

std::vector<CheckResult> run_property_checks(Seed seed) {
  std::vector<CheckResult> out;
  const ImageShape img{16, 16};

  for (auto kind : kAllKinds) {
    const LinearOperator op = make_operator(small_spec(kind, seed), img);
    out.push_back(at_most(fmt::format("dot/{}", to_string(kind)),
                          dot_product_check(op, 100, derive_seed(seed, 1)), 1e-8));
  }
  {
    const LinearOperator bad =
        with_scaled_adjoint(make_operator(small_spec(OperatorKind::gaussian_blur, seed), img), 1.01);
    const double err = dot_product_check(bad, 100, derive_seed(seed, 2));
    out.push_back({"dot/corrupted_adjoint_detected", err, 1e-8, err > 1e-8});
  }

  Rng rng(derive_seed(seed, 3));
  for (auto kind : {CodecKind::linear_orthogonal, CodecKind::linear_perturbed, CodecKind::mlp_tanh}) {
    const LatentCodec codec = make_codec({kind, 64, 16, 0.05, 16, seed});
    const double tol = kind == CodecKind::mlp_tanh ? 1e-4 : 1e-6;
    const auto enc = check_vjp(codec.encoder(), standard_normal(64, rng), 8, 1e-5, tol, seed);
    const auto dec = check_vjp(codec.decoder(), standard_normal(16, rng), 8, 1e-5, tol, seed);
    out.push_back({fmt::format("vjp/{}/encoder", to_string(kind)), enc.max_rel_err, tol, enc.pass});
    out.push_back({fmt::format("vjp/{}/decoder", to_string(kind)), dec.max_rel_err, tol, dec.pass});
  }

  auto schedule = std::make_shared<const NoiseSchedule>(make_vp_schedule(1000, 1e-4, 2e-2));
  const Index k = 16;
  std::vector<MixtureComponent> comps(2);
  for (int i = 0; i < 2; ++i) {
    comps[static_cast<std::size_t>(i)] = {2.0 * standard_normal(k, rng),
                                          Vector::Constant(k, 0.5 + i),
                                          0.0, 2.0 * Vector::Unit(8, i)};
  }
  const ScoreModel gmm = make_gmm_model(schedule, comps);
  {
    const Vector z = standard_normal(k, rng);
    const Vector c = 0.3 * standard_normal(8, rng);
    const auto rz = check_vjp(gmm.epsilon_map_z(400, c), z, 8, 1e-5, 1e-6, seed);
    const auto rc = check_vjp(gmm.epsilon_map_c(400, z), c, 8, 1e-5, 1e-6, seed);
    out.push_back({"vjp/gmm/z", rz.max_rel_err, 1e-6, rz.pass});
    out.push_back({"vjp/gmm/c", rc.max_rel_err, 1e-6, rc.pass});
    const ScoreModel toy = make_toy_model(schedule, init_toy_network(k, ToyArch{}, seed));
    const auto tz = check_vjp(toy.epsilon_map_z(400, c), z, 8, 1e-5, 1e-4, seed);
    const auto tc = check_vjp(toy.epsilon_map_c(400, z), c, 8, 1e-5, 1e-4, seed);
    out.push_back({"vjp/toy/z", tz.max_rel_err, 1e-4, tz.pass});
    out.push_back({"vjp/toy/c", tc.max_rel_err, 1e-4, tc.pass});
  }

  {
    // Fully linear configuration: Gaussian prior, orthogonal codec, blur.
    const ImageShape small{8, 8};
    const LatentCodec codec = make_codec({CodecKind::linear_orthogonal, 64, k, 0.0, 16, seed});
    const LinearOperator op = make_operator(small_spec(OperatorKind::gaussian_blur, seed), small);
    const ScoreModel gauss = make_gaussian_model(schedule, standard_normal(k, rng),
                                                 Vector::Constant(k, 0.7));
    const Vector y = op.forward(codec.decode(standard_normal(k, rng)));
    const Vector z = standard_normal(k, rng);
    const Vector c = Vector::Zero(8);
    const int t = 300;
    const auto lg = likelihood_grad(gauss, codec, op, y, z, t, c);
    auto f = [&](const Vector& zz) {
      const Vector z0 = tweedie(*schedule, zz, t, gauss.epsilon(zz, t, c));
      return (op.forward(codec.decode(z0)) - y).norm();
    };
    out.push_back(at_most("grad/likelihood_linear", scalar_fd_error(f, z, lg.grad, 8, 1e-5, rng), 1e-5));

    const LatentCodec codec_k = make_codec({CodecKind::linear_orthogonal, 64, k, 0.0, 16, seed});
    const Vector cc = 0.2 * standard_normal(8, rng);
    const Vector g = prompt_loss_grad(gmm, codec_k, op, y, z, t, cc, true, 1.0);
    auto L = [&](const Vector& cv) { return prompt_loss(gmm, codec_k, op, y, z, t, cv, true, 1.0); };
    out.push_back(at_most("grad/prompt_loss", scalar_fd_error(L, cc, g, 8, 1e-5, rng), 1e-5));
  }

  for (auto kind : kAllKinds) {
    const ImageShape small{8, 8};
    const LinearOperator op = make_operator(small_spec(kind, seed), small);
    const Matrix a = materialize(op.map());
    const Vector anchor = standard_normal(64, rng);
    const Vector y = standard_normal(op.output_size(), rng);
    const double lambda = 0.3;
    Matrix m = a.transpose() * a;
    m.diagonal().array() += lambda;
    const Vector dense = m.ldlt().solve(a.transpose() * y + lambda * anchor);
    const Vector cg = prox_gamma(op, y, anchor, {lambda, 500, 1e-14});
    out.push_back(at_most(fmt::format("prox/{}", to_string(kind)),
                          (cg - dense).norm() / dense.norm(), 1e-6));
  }

  {
    const int seeds = 32;
    const int iters = 25;
    std::vector<double> orth(iters, 0.0);
    std::vector<double> pert(iters, 0.0);
    const LatentCodec co = make_codec({CodecKind::linear_orthogonal, 256, 64, 0.0, 16, seed});
    const LatentCodec cp = make_codec({CodecKind::linear_perturbed, 256, 64, 0.05, 16, seed});
    for (int s = 0; s < seeds; ++s) {
      Rng r(derive_seed(seed, 100 + static_cast<std::uint64_t>(s)));
      const Vector x0 = standard_normal(256, r);
      const auto d_o = autoencode_iterate(co, x0, iters);
      const auto d_p = autoencode_iterate(cp, x0, iters);
      for (int i = 0; i < iters; ++i) {
        orth[static_cast<std::size_t>(i)] += d_o[static_cast<std::size_t>(i)] / seeds;
        pert[static_cast<std::size_t>(i)] += d_p[static_cast<std::size_t>(i)] / seeds;
      }
    }
    const double orth_tail = *std::max_element(orth.begin() + 1, orth.end());
    out.push_back(at_most("fixed_point/orthogonal_after_first", orth_tail, 1e-10));
    double worst_drop = 0.0;
    for (int i = iters - 12; i < iters; ++i) {
      worst_drop = std::max(worst_drop, pert[static_cast<std::size_t>(i - 1)] -
                                            pert[static_cast<std::size_t>(i)]);
    }
    out.push_back(at_most("fixed_point/perturbed_non_decreasing", worst_drop, 0.0));
  }
  return out;
}

}  // namespace p2l
