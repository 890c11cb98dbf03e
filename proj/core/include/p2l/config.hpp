// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "p2l/codec.hpp"
#include "p2l/operators.hpp"
#include "p2l/score.hpp"
#include "p2l/solvers.hpp"

#include <filesystem>
#include <string>
#include <vector>

namespace p2l {

struct ScheduleSpec {
  int T = 1000;
  double beta_min = 1e-4;
  double beta_max = 2e-2;
};

/// Latent prior. gaussian_analytic: N(mean_offset 1, variance I).
/// gmm_conditional: components with means +/- separation along seeded unit
/// directions and tags of norm tag_scale. learned_toy: a toy network trained
/// on samples of the gmm described by the same fields.
struct PriorSpec {
  ScoreModelKind kind = ScoreModelKind::gaussian_analytic;
  int components = 2;
  double separation = 3.0;
  double variance = 1.0;
  double mean_offset = 0.0;
  Index embedding_dim = 8;
  double tag_scale = 4.0;
  double pixel_floor_variance = 1e-4;  // complement variance of the pixel prior
  ScheduleSpec schedule{};
  ToyArch toy{};
  int toy_samples = 512;
  Seed seed = 0;
};

struct DatasetSpec {
  int n_instances = 4;
  ImageShape shape{16, 16};
  Seed seed = 0;
};

struct NamedSolver {
  std::string label;
  SolverConfig config;
};

struct ExperimentConfig {
  std::string name = "experiment";
  OperatorSpec op{};
  CodecSpec codec{};
  PriorSpec prior{};
  std::vector<NamedSolver> solvers;
  DatasetSpec dataset{};
  double sigma_y = 0.01;
  double psnr_peak = 0.0;  // 0: dynamic range of each ground truth
  std::filesystem::path output_dir = "p2l_out";
  bool write_images = true;
  Seed seed = 0;

  void validate() const;
};

/// Parses the JSON experiment description. Missing keys keep their defaults;
/// unknown keys are rejected.
[[nodiscard]] ExperimentConfig parse_experiment_config(const std::string& text);
[[nodiscard]] ExperimentConfig load_experiment_config(const std::filesystem::path& path);

}  // namespace p2l
