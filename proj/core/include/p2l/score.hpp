// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "p2l/adam.hpp"
#include "p2l/common.hpp"
#include "p2l/rng.hpp"
#include "p2l/diffmap.hpp"

#include <memory>
#include <optional>
#include <string_view>
#include <vector>

namespace p2l {

/// Variance-preserving schedule: z_t = sqrt(abar_t) z_0 + sqrt(1-abar_t) eps.
struct NoiseSchedule {
  int T = 0;
  std::vector<double> beta;       // index t-1
  std::vector<double> alpha;
  std::vector<double> alpha_bar;

  /// abar_t for t in [0, T]; abar_0 := 1.
  [[nodiscard]] double abar(int t) const;
  void require_step(int t) const;
};

/// Linear beta ramp from beta_min (t=1) to beta_max (t=T).
[[nodiscard]] NoiseSchedule make_vp_schedule(int T, double beta_min,
                                             double beta_max);

enum class EmbeddingOrigin { null, tuned, fixed };

/// The continuous conditioning vector. The null embedding is all zeros.
struct Embedding {
  Vector c;
  EmbeddingOrigin origin = EmbeddingOrigin::null;

  [[nodiscard]] static Embedding null(Index dim) {
    return {Vector::Zero(dim), EmbeddingOrigin::null};
  }
};

/// One Gaussian of a mixture prior over z_0. `variance` is diagonal in the
/// model's basis; `tag` is the direction in embedding space that upweights
/// this component.
struct MixtureComponent {
  Vector mean;
  Vector variance;
  double log_weight = 0.0;
  Vector tag;
};

/// Weights of the x0-parameterised toy denoiser:
///   h   = W_out tanh(W_in z + W_c c + W_t [sqrt(abar), sqrt(1-abar)] + b) + b_out
///   eps = (z - sqrt(abar) h) / sqrt(1 - abar)
struct ToyNetwork {
  Matrix w_in;
  Matrix w_c;
  Matrix w_t;
  Vector b;
  Matrix w_out;
  Vector b_out;

  [[nodiscard]] std::vector<double> flatten() const;
  friend bool operator==(const ToyNetwork&, const ToyNetwork&) = default;
};

enum class ScoreModelKind { gaussian_analytic, gmm_conditional, learned_toy };

[[nodiscard]] std::string_view to_string(ScoreModelKind kind);

/// Noise-prediction model eps(z_t, t, C) with vjps in z_t and C.
class ScoreModel {
 public:
  [[nodiscard]] ScoreModelKind kind() const { return kind_; }
  [[nodiscard]] Index dim() const { return dim_; }
  [[nodiscard]] Index embedding_dim() const { return embedding_dim_; }
  [[nodiscard]] const NoiseSchedule& schedule() const { return *schedule_; }
  [[nodiscard]] bool is_analytic() const {
    return kind_ != ScoreModelKind::learned_toy;
  }
  [[nodiscard]] const std::vector<MixtureComponent>& components() const {
    return components_;
  }
  [[nodiscard]] const std::optional<Matrix>& basis() const { return basis_; }
  [[nodiscard]] const ToyNetwork& network() const { return network_; }

  [[nodiscard]] Vector epsilon(const Vector& z, int t, const Vector& c) const;
  [[nodiscard]] Vector vjp_z(const Vector& z, int t, const Vector& c,
                             const Vector& u) const;
  [[nodiscard]] Vector vjp_c(const Vector& z, int t, const Vector& c,
                             const Vector& u) const;

  /// z -> eps(z, t, c) as a DiffMap.
  [[nodiscard]] DiffMap epsilon_map_z(int t, const Vector& c) const;
  /// c -> eps(z, t, c) as a DiffMap.
  [[nodiscard]] DiffMap epsilon_map_c(int t, const Vector& z) const;

  /// Analytic models only: log p_t(z | c).
  [[nodiscard]] double log_density(const Vector& z, int t,
                                   const Vector& c) const;
  /// Analytic models only: exact E[z_0 | z_t, c].
  [[nodiscard]] Vector posterior_mean(const Vector& z, int t,
                                      const Vector& c) const;
  /// Analytic models only: softmax(log w_i + <c, tag_i>).
  [[nodiscard]] Vector mixture_weights(const Vector& c) const;
  /// Analytic models only: p(component i | z_t, c).
  [[nodiscard]] Vector responsibilities(const Vector& z, int t,
                                        const Vector& c) const;
  /// Analytic models only: draw z_0 from the conditional prior.
  [[nodiscard]] Vector sample_prior(std::mt19937_64& rng, const Vector& c,
                                    int* component = nullptr) const;

  friend ScoreModel make_gaussian_model(std::shared_ptr<const NoiseSchedule>,
                                        Vector, Vector, std::optional<Matrix>,
                                        Index);
  friend ScoreModel make_gmm_model(std::shared_ptr<const NoiseSchedule>,
                                   std::vector<MixtureComponent>,
                                   std::optional<Matrix>, Index);
  friend ScoreModel make_toy_model(std::shared_ptr<const NoiseSchedule>,
                                   ToyNetwork);

 private:
  ScoreModel() = default;

  struct MixtureTerms;
  [[nodiscard]] MixtureTerms mixture_terms(const Vector& z, int t,
                                           const Vector& c) const;
  [[nodiscard]] Vector to_basis(const Vector& v) const;
  [[nodiscard]] Vector from_basis(const Vector& w) const;
  void check_args(const Vector& z, int t, const Vector& c) const;

  ScoreModelKind kind_ = ScoreModelKind::gaussian_analytic;
  Index dim_ = 0;
  Index embedding_dim_ = 0;
  std::shared_ptr<const NoiseSchedule> schedule_;
  std::optional<Matrix> basis_;  // orthogonal, columns are basis vectors
  std::vector<MixtureComponent> components_;
  ToyNetwork network_;
};

/// N(mean, U diag(variance) U^T); U = identity when `basis` is empty.
/// The embedding is accepted but has no effect.
[[nodiscard]] ScoreModel make_gaussian_model(
    std::shared_ptr<const NoiseSchedule> schedule, Vector mean,
    Vector variance, std::optional<Matrix> basis = std::nullopt,
    Index embedding_dim = 8);

/// Mixture whose weights are reweighted by softmax(log w_i + <c, tag_i>).
[[nodiscard]] ScoreModel make_gmm_model(
    std::shared_ptr<const NoiseSchedule> schedule,
    std::vector<MixtureComponent> components,
    std::optional<Matrix> basis = std::nullopt, Index embedding_dim = 8);

[[nodiscard]] ScoreModel make_toy_model(
    std::shared_ptr<const NoiseSchedule> schedule, ToyNetwork network);

/// z0_hat = (z_t - sqrt(1 - abar_t) eps_hat) / sqrt(abar_t).
[[nodiscard]] Vector tweedie(const NoiseSchedule& schedule, const Vector& z_t,
                             int t, const Vector& eps_hat);

struct ToyArch {
  Index hidden = 64;
  Index embedding_dim = 8;
  int epochs = 100;
  Index batch_size = 32;
  double learning_rate = 1e-2;
};

struct ToyTrainingResult {
  ScoreModel model;
  std::vector<double> epoch_loss;
};

/// Seeded untrained network with the given architecture.
[[nodiscard]] ToyNetwork init_toy_network(Index dim, const ToyArch& arch,
                                          Seed seed);

/// Denoising score matching on `dataset` (one sample per column) with Adam.
/// Trains with the null embedding.
[[nodiscard]] ToyTrainingResult train_toy_denoiser(
    const Matrix& dataset, std::shared_ptr<const NoiseSchedule> schedule,
    const ToyArch& arch, Seed seed);

}  // namespace p2l
