// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "p2l/codec.hpp"
#include "p2l/config.hpp"
#include "p2l/operators.hpp"
#include "p2l/oracle.hpp"
#include "p2l/score.hpp"
#include "p2l/solvers.hpp"

#include <filesystem>
#include <memory>
#include <optional>
#include <string>
#include <vector>

namespace p2l {

struct ExperimentSetup {
  std::shared_ptr<const NoiseSchedule> schedule;
  LatentCodec codec;
  ScoreModel truth_prior;                  // analytic latent prior of the data
  ScoreModel latent_model;                 // prior used by latent solvers
  std::optional<ScoreModel> image_model;   // pushforward prior over pixels
  LinearOperator op;
};

[[nodiscard]] ExperimentSetup build_setup(const ExperimentConfig& cfg);

/// Latent components: means separation * q_i on seeded orthonormal
/// directions (plus mean_offset), variance * I, tags tag_scale * e_i.
[[nodiscard]] ScoreModel make_latent_prior(const PriorSpec& spec, Index latent_dim,
                                           std::shared_ptr<const NoiseSchedule> schedule);

/// Pixel prior x = D z for a linear decoder and isotropic components, in the
/// left-singular basis of D; the orthogonal complement gets `floor_variance`.
[[nodiscard]] ScoreModel pushforward_prior(const ScoreModel& latent, const Matrix& decoder,
                                           double floor_variance,
                                           std::shared_ptr<const NoiseSchedule> schedule);

struct Instance {
  int index = 0;
  int component = 0;
  Vector z_true;
  Vector x_true;
  Measurement y;
  std::optional<OracleResult> oracle;
  Seed solver_seed = 0;
};

[[nodiscard]] Instance make_instance(const ExperimentConfig& cfg,
                                     const ExperimentSetup& setup, int index);

struct InstanceResult {
  std::string label;
  SolverKind solver = SolverKind::p2l;
  int instance = 0;
  bool ok = false;
  std::string error;
  double mse = 0.0;
  double psnr = 0.0;
  double residual = 0.0;     // ||A x - y||
  std::optional<double> oracle_dist;  // ||x - oracle mean|| / ||oracle mean||
  Trajectory trajectory;
};

struct ExperimentResult {
  std::vector<Instance> instances;
  std::vector<InstanceResult> runs;  // solver-major, instance-minor

  [[nodiscard]] std::vector<const InstanceResult*> runs_for(const std::string& label) const;
  [[nodiscard]] bool all_failed() const;
};

/// Runs every solver on every instance without touching the filesystem.
[[nodiscard]] ExperimentResult evaluate_experiment(const ExperimentConfig& cfg);

inline constexpr const char* kSummaryHeader =
    "solver,label,instances,failures,mse_mean,mse_std,psnr_mean,psnr_std,"
    "residual_mean,residual_std,oracle_dist_mean,oracle_dist_std";
inline constexpr const char* kInstanceHeader =
    "label,solver,instance,status,mse,psnr,residual,oracle_dist,error";
inline constexpr const char* kTrajectoryHeader =
    "step,t,residual,prompt_loss,projected,embedding_norm,lr_retry";

[[nodiscard]] std::string summary_csv(const ExperimentConfig& cfg, const ExperimentResult& result);
[[nodiscard]] std::string instances_csv(const ExperimentResult& result);
[[nodiscard]] std::string trajectory_csv(const Trajectory& traj);

/// Final restoration, measurement (adjoint-upsampled) and ground truth as
/// 16-bit PGM plus float PFM.
void emit_images(const std::filesystem::path& dir, const std::string& stem,
                 const Vector& restoration, const Vector& measurement_display,
                 const Vector& truth, ImageShape shape);

struct ExperimentReport {
  ExperimentResult result;
  std::vector<std::filesystem::path> files;
};

/// Evaluates and writes summary.csv, instances.csv, trajectories/ and images/.
ExperimentReport run_experiment(const ExperimentConfig& cfg,
                                const std::filesystem::path& output_dir);

}  // namespace p2l
