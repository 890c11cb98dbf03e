// SPDX-License-Identifier: Apache-2.0
#include "p2l/codec.hpp"
#include "p2l/operators.hpp"
#include "p2l/proximal.hpp"
#include "p2l/solvers.hpp"

#include <benchmark/benchmark.h>

#include <memory>

namespace {

using namespace p2l;

OperatorSpec spec(OperatorKind kind) {
  OperatorSpec s;
  s.kind = kind;
  s.kernel_size = 9;
  s.seed = 1;
  return s;
}

void BM_OperatorForwardAdjoint(benchmark::State& state) {
  const auto kind = static_cast<OperatorKind>(state.range(0));
  const Index side = state.range(1);
  const LinearOperator op = make_operator(spec(kind), {side, side});
  Rng rng(0);
  const Vector x = standard_normal(side * side, rng);
  for (auto _ : state) {
    Vector y = op.forward(x);
    benchmark::DoNotOptimize(op.adjoint(y));
  }
  state.SetLabel(std::string(to_string(kind)));
}
BENCHMARK(BM_OperatorForwardAdjoint)
    ->ArgsProduct({{0, 1, 2, 3, 4}, {16, 64}});

void BM_ProxCg(benchmark::State& state) {
  const LinearOperator op = make_operator(spec(OperatorKind::gaussian_blur), {32, 32});
  Rng rng(0);
  const Vector anchor = standard_normal(1024, rng);
  const Vector y = op.forward(standard_normal(1024, rng));
  const ProxConfig cfg{0.1, static_cast<int>(state.range(0)), 1e-12};
  for (auto _ : state) benchmark::DoNotOptimize(prox_gamma(op, y, anchor, cfg));
}
BENCHMARK(BM_ProxCg)->Arg(5)->Arg(10)->Arg(50);

void BM_P2lRun(benchmark::State& state) {
  auto sched = std::make_shared<const NoiseSchedule>(make_vp_schedule(1000, 1e-4, 2e-2));
  const ScoreModel model = make_gaussian_model(sched, Vector::Zero(64), Vector::Ones(64));
  CodecSpec cs;
  cs.image_dim = 256;
  cs.latent_dim = 64;
  const LatentCodec codec = make_codec(cs);
  const LinearOperator op = make_operator(spec(OperatorKind::inpaint_random), {16, 16});
  Rng rng(3);
  const Vector y = op.forward(codec.decode(standard_normal(64, rng)));
  InverseProblem problem{model, codec, op, y, 0.01};
  SolverConfig cfg = default_config(SolverKind::p2l);
  cfg.nfe = 50;
  cfg.prompt_iters = static_cast<int>(state.range(0));
  for (auto _ : state) benchmark::DoNotOptimize(run_p2l(problem, cfg).x0);
  state.SetItemsProcessed(state.iterations() * cfg.nfe);
}
BENCHMARK(BM_P2lRun)->Arg(0)->Arg(3)->Unit(benchmark::kMillisecond);

}  // namespace

BENCHMARK_MAIN();
