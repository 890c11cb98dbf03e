// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "p2l/adam.hpp"
#include "p2l/codec.hpp"
#include "p2l/common.hpp"
#include "p2l/operators.hpp"
#include "p2l/proximal.hpp"
#include "p2l/rng.hpp"
#include "p2l/score.hpp"

#include <limits>
#include <string_view>
#include <vector>

namespace p2l {

enum class SolverKind { p2l, p2l_adam, ldps, gml_dps, psld, ldir, dps, dds, diffpir };

[[nodiscard]] std::string_view to_string(SolverKind kind);
[[nodiscard]] SolverKind solver_kind_from_string(std::string_view name);
/// DPS, DDS and DiffPIR operate on pixels with an image-space prior.
[[nodiscard]] bool is_image_space(SolverKind kind);

enum class GradType { gd, adam };
enum class GammaKind { prox, glue };

/// Step size rho_t: either a constant or c * abar_t.
struct StepRule {
  enum class Kind { constant, alpha_bar_scaled };
  Kind kind = Kind::constant;
  double c = 1.0;

  [[nodiscard]] double at(double abar_t) const {
    return kind == Kind::constant ? c : c * abar_t;
  }
};

struct DiffPirParams {
  double zeta = 0.3;
  double lambda = 7.0;
};

struct SolverConfig {
  SolverKind solver = SolverKind::p2l;
  int nfe = 200;
  double eta = 0.0;
  StepRule rho{};
  GradType grad_type = GradType::gd;
  AdamParams adam{};

  // Encoder-range projection. Applied at sampling steps whose index is a
  // multiple of gamma_proj; gamma_proj > nfe disables it.
  int gamma_proj = 4;
  GammaKind gamma = GammaKind::prox;
  ProxConfig prox{};
  bool renoise_projected = true;  // false: renoise z0_hat, as in the 1st listing

  // Prompt tuning.
  int prompt_iters = 0;
  double prompt_lr = 1e-4;
  bool use_conditional_mean = true;
  double rho_shift = 1.0;
  bool persist_prompt_moments = false;
  bool prompt_retry = true;

  // Baselines.
  double lambda_fix = 0.1;  // GML-DPS / PSLD penalty weight
  double dds_gamma = 1.0;
  int dds_cg_iters = 5;
  DiffPirParams diffpir{};

  Seed seed = 0;

  void validate() const;
};

/// Per-solver defaults taken from the reference settings.
[[nodiscard]] SolverConfig default_config(SolverKind kind);

struct StepRecord {
  int index = 0;  // sampling step, nfe .. 1
  int t = 0;      // diffusion time
  double residual = 0.0;
  double prompt_loss = std::numeric_limits<double>::quiet_NaN();
  bool projected = false;
  double embedding_norm = 0.0;
  bool lr_retry = false;
  bool closed_form = true;  // DiffPIR: false when the data step fell back to CG
};

struct Trajectory {
  std::vector<StepRecord> steps;
  Vector z0;  // final latent (image for image-space solvers)
  Vector x0;  // final image
  Vector embedding;
};

/// Everything a solver reads. The references must outlive the run.
struct InverseProblem {
  const ScoreModel& model;         // latent prior
  const LatentCodec& codec;
  const LinearOperator& op;
  const Vector& y;
  double sigma_y = 0.0;
  const ScoreModel* image_model = nullptr;  // pixel prior for DPS/DDS/DiffPIR
};

/// Descending diffusion times t_i = floor(i T / nfe), i = nfe .. 1.
[[nodiscard]] std::vector<int> timestep_grid(int T, int nfe);

/// DDIM move from t to t_prev (t_prev = 0 means abar = 1).
[[nodiscard]] Vector ddim_transition(const NoiseSchedule& schedule,
                                     const Vector& z0_hat,
                                     const Vector& eps_hat, int t, int t_prev,
                                     double eta, Rng& rng);
[[nodiscard]] Vector ddim_transition(const NoiseSchedule& schedule,
                                     const Vector& z0_hat,
                                     const Vector& eps_hat, int t, double eta,
                                     Seed seed);
/// sigma_tilde of the eta-DDIM transition.
[[nodiscard]] double ddim_sigma(const NoiseSchedule& schedule, int t,
                                int t_prev, double eta);

struct LikelihoodGrad {
  Vector grad;       // d/dz_t of the guidance objective
  double residual;   // ||A D(z0_hat) - y||
  Vector z0_hat;
  Vector eps_hat;
};

enum class Penalty { none, fixed_point, psld };

/// Gradient of ||A D(z0_hat(z_t)) - y|| (unsquared) with respect to z_t,
/// optionally plus `weight` times a fixed-point penalty. The gradient of the
/// norm is taken as 0 where the residual vanishes.
[[nodiscard]] LikelihoodGrad likelihood_grad(
    const ScoreModel& model, const DiffMap& decoder, const LinearOperator& op,
    const Vector& y, const Vector& z_t, int t, const Vector& c,
    Penalty penalty = Penalty::none, double weight = 0.0,
    const DiffMap* encoder = nullptr);

[[nodiscard]] inline LikelihoodGrad likelihood_grad(
    const ScoreModel& model, const LatentCodec& codec, const LinearOperator& op,
    const Vector& y, const Vector& z_t, int t, const Vector& c) {
  return likelihood_grad(model, codec.decoder(), op, y, z_t, t, c);
}

struct EmbeddingOptions {
  int iters = 0;
  double lr = 1e-4;
  AdamParams adam{};
  bool use_conditional_mean = true;
  double rho_shift = 1.0;
  bool retry = true;
};

struct EmbeddingResult {
  Vector c;
  std::vector<double> loss_history;  // L(C^(k-1)) for k = 1..K
  double final_loss = std::numeric_limits<double>::quiet_NaN();
  bool retried = false;
};

/// L(C) = ||A D(z0'(C)) - y||^2 with the one-step measurement shift on z0'.
[[nodiscard]] double prompt_loss(const ScoreModel& model,
                                 const LatentCodec& codec,
                                 const LinearOperator& op, const Vector& y,
                                 const Vector& z_t, int t, const Vector& c,
                                 bool use_conditional_mean, double rho_shift);

/// dL/dC for prompt_loss.
[[nodiscard]] Vector prompt_loss_grad(const ScoreModel& model,
                                      const LatentCodec& codec,
                                      const LinearOperator& op, const Vector& y,
                                      const Vector& z_t, int t, const Vector& c,
                                      bool use_conditional_mean,
                                      double rho_shift, double* loss = nullptr);

/// K Adam steps on the prompt loss starting from `c_init`. When `adam` is
/// given its moments are reused (and not reset); otherwise a fresh optimiser
/// is used.
[[nodiscard]] EmbeddingResult optimize_embedding(
    const ScoreModel& model, const LatentCodec& codec, const LinearOperator& op,
    const Vector& y, const Vector& z_t, int t, const Vector& c_init,
    const EmbeddingOptions& opts, Adam* adam = nullptr);

/// E(Gamma(D(z0_hat))).
[[nodiscard]] Vector project_to_encoder_range(const LatentCodec& codec,
                                              const LinearOperator& op,
                                              const Vector& y,
                                              const Vector& z0_hat,
                                              const ProxConfig& prox,
                                              GammaKind gamma = GammaKind::prox);

[[nodiscard]] Trajectory run_p2l(const InverseProblem& problem,
                                 const SolverConfig& cfg);
[[nodiscard]] Trajectory run_baseline(const InverseProblem& problem,
                                      const SolverConfig& cfg);
/// Dispatches on cfg.solver.
[[nodiscard]] Trajectory run_solver(const InverseProblem& problem,
                                    const SolverConfig& cfg);

/// One reverse step of a latent or image baseline from (z_t, t) to t_prev,
/// with the moment state for LDIR. Exposed for single-step verification.
struct BaselineState {
  Vector z;
  HistoryGradient history;
};
StepRecord baseline_step(const InverseProblem& problem, const SolverConfig& cfg,
                         BaselineState& state, int t, int t_prev, Rng& rng);

/// DiffPIR data step: argmin 1/2||y - Ax||^2 + w/2 ||x - x0_hat||^2. Closed
/// form when A A^T = cI, CG otherwise (sets *closed_form = false).
[[nodiscard]] Vector diffpir_data_step(const LinearOperator& op,
                                       const Vector& y, const Vector& x0_hat,
                                       double weight, bool* closed_form);

enum class PatchWeighting { uniform, gaussian };

struct PatchOptions {
  Index patch = 0;
  Index stride = 0;
  PatchWeighting weighting = PatchWeighting::uniform;
  double variance = 0.01;
};

struct PatchedResult {
  Vector eps;
  Vector weight;  // accumulated weight per latent pixel
};

/// Evaluates a patch-sized model over strided windows of a larger latent
/// grid and blends the predictions. The last window in each axis is clamped
/// to the grid edge.
[[nodiscard]] PatchedResult patched_epsilon(const ScoreModel& model,
                                            const Vector& z_t,
                                            ImageShape grid, int t,
                                            const Vector& c,
                                            const PatchOptions& opts);

}  // namespace p2l
