// SPDX-License-Identifier: Apache-2.0
#include "p2l/score.hpp"

#include "p2l/rng.hpp"

#include <fmt/format.h>

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>

namespace p2l {

double NoiseSchedule::abar(int t) const {
  if (t == 0) return 1.0;
  require_step(t);
  return alpha_bar[static_cast<std::size_t>(t - 1)];
}

void NoiseSchedule::require_step(int t) const {
  if (t < 1 || t > T) {
    throw ParameterError(fmt::format("diffusion step {} outside [1, {}]", t, T));
  }
}

NoiseSchedule make_vp_schedule(int T, double beta_min, double beta_max) {
  if (T < 1) throw ParameterError("schedule needs T >= 1");
  if (!(0.0 < beta_min && beta_min <= beta_max && beta_max < 1.0)) {
    throw ParameterError(fmt::format(
        "schedule needs 0 < beta_min <= beta_max < 1, got [{}, {}]", beta_min,
        beta_max));
  }
  NoiseSchedule s;
  s.T = T;
  s.beta.resize(static_cast<std::size_t>(T));
  s.alpha.resize(s.beta.size());
  s.alpha_bar.resize(s.beta.size());
  double running = 1.0;
  for (int t = 1; t <= T; ++t) {
    const double frac = T == 1 ? 0.0 : double(t - 1) / double(T - 1);
    const auto i = static_cast<std::size_t>(t - 1);
    s.beta[i] = beta_min + frac * (beta_max - beta_min);
    s.alpha[i] = 1.0 - s.beta[i];
    running *= s.alpha[i];
    s.alpha_bar[i] = running;
  }
  return s;
}

std::string_view to_string(ScoreModelKind kind) {
  switch (kind) {
    case ScoreModelKind::gaussian_analytic: return "gaussian_analytic";
    case ScoreModelKind::gmm_conditional: return "gmm_conditional";
    case ScoreModelKind::learned_toy: return "learned_toy";
  }
  return "unknown";
}

std::vector<double> ToyNetwork::flatten() const {
  std::vector<double> out;
  auto put = [&out](const Matrix& m) {
    for (Index i = 0; i < m.rows(); ++i)
      for (Index j = 0; j < m.cols(); ++j) out.push_back(m(i, j));
  };
  put(w_in);
  put(w_c);
  put(w_t);
  put(b);
  put(w_out);
  put(b_out);
  return out;
}

// Per-component quantities in basis coordinates.
struct ScoreModel::MixtureTerms {
  double sa = 0.0;                       // sqrt(abar)
  double sn = 0.0;                       // sqrt(1 - abar)
  Vector w;                              // basis coords of z
  std::vector<Eigen::ArrayXd> inv_var;   // 1 / (abar s^2 + 1 - abar)
  std::vector<Vector> d;                 // (w - sa m_i) / v_i
  Eigen::ArrayXd log_joint;              // log pi_i(c) + log N_i
  Eigen::ArrayXd r;                      // responsibilities
};

namespace {

double log_sum_exp(const Eigen::ArrayXd& a) {
  const double m = a.maxCoeff();
  return m + std::log((a - m).exp().sum());
}

Eigen::ArrayXd softmax(const Eigen::ArrayXd& a) {
  const Eigen::ArrayXd e = (a - a.maxCoeff()).exp();
  return e / e.sum();
}

}  // namespace

void ScoreModel::check_args(const Vector& z, int t, const Vector& c) const {
  schedule_->require_step(t);
  if (z.size() != dim_) {
    throw DimensionError(fmt::format("score model: z has {} entries, expected {}",
                                     z.size(), dim_));
  }
  if (c.size() != embedding_dim_) {
    throw DimensionError(fmt::format(
        "score model: embedding has {} entries, expected {}", c.size(),
        embedding_dim_));
  }
}

Vector ScoreModel::to_basis(const Vector& v) const {
  return basis_ ? Vector(basis_->transpose() * v) : v;
}

Vector ScoreModel::from_basis(const Vector& w) const {
  return basis_ ? Vector(*basis_ * w) : w;
}

Vector ScoreModel::mixture_weights(const Vector& c) const {
  if (!is_analytic()) throw ParameterError("mixture_weights: not a mixture model");
  Eigen::ArrayXd logits(static_cast<Index>(components_.size()));
  for (std::size_t i = 0; i < components_.size(); ++i) {
    const auto& comp = components_[i];
    logits[static_cast<Index>(i)] =
        comp.log_weight + (comp.tag.size() ? comp.tag.dot(c) : 0.0);
  }
  return softmax(logits).matrix();
}

ScoreModel::MixtureTerms ScoreModel::mixture_terms(const Vector& z, int t,
                                                   const Vector& c) const {
  const double ab = schedule_->abar(t);
  MixtureTerms m;
  m.sa = std::sqrt(ab);
  m.sn = std::sqrt(1.0 - ab);
  m.w = to_basis(z);
  const auto count = static_cast<Index>(components_.size());
  const Eigen::ArrayXd log_pi = mixture_weights(c).array().log();
  m.log_joint.resize(count);
  m.inv_var.reserve(components_.size());
  m.d.reserve(components_.size());
  constexpr double kLog2Pi = 1.8378770664093454835606594728112;
  for (Index i = 0; i < count; ++i) {
    const auto& comp = components_[static_cast<std::size_t>(i)];
    const Eigen::ArrayXd var = ab * comp.variance.array() + (1.0 - ab);
    const Eigen::ArrayXd inv = var.inverse();
    const Eigen::ArrayXd diff = m.w.array() - m.sa * comp.mean.array();
    Vector d = (diff * inv).matrix();
    m.log_joint[i] = log_pi[i] - 0.5 * (diff * diff * inv).sum() -
                     0.5 * (var.log().sum() + double(dim_) * kLog2Pi);
    m.inv_var.push_back(inv);
    m.d.push_back(std::move(d));
  }
  m.r = softmax(m.log_joint);
  return m;
}

Vector ScoreModel::epsilon(const Vector& z, int t, const Vector& c) const {
  check_args(z, t, c);
  if (kind_ == ScoreModelKind::learned_toy) {
    const double ab = schedule_->abar(t);
    const ToyNetwork& n = network_;
    Vector feat(2);
    feat << std::sqrt(ab), std::sqrt(1.0 - ab);
    const Vector a =
        (n.w_in * z + n.w_c * c + n.w_t * feat + n.b).array().tanh().matrix();
    const Vector h = n.w_out * a + n.b_out;
    return (z - std::sqrt(ab) * h) / std::sqrt(1.0 - ab);
  }
  const MixtureTerms m = mixture_terms(z, t, c);
  Vector dbar = Vector::Zero(dim_);
  for (std::size_t i = 0; i < m.d.size(); ++i)
    dbar += m.r[static_cast<Index>(i)] * m.d[i];
  // eps = -sqrt(1-abar) * score, score = -U dbar.
  return m.sn * from_basis(dbar);
}

Vector ScoreModel::vjp_z(const Vector& z, int t, const Vector& c,
                         const Vector& u) const {
  check_args(z, t, c);
  if (u.size() != dim_) throw DimensionError("vjp_z: cotangent size mismatch");
  if (kind_ == ScoreModelKind::learned_toy) {
    const double ab = schedule_->abar(t);
    const ToyNetwork& n = network_;
    Vector feat(2);
    feat << std::sqrt(ab), std::sqrt(1.0 - ab);
    const Eigen::ArrayXd a =
        (n.w_in * z + n.w_c * c + n.w_t * feat + n.b).array().tanh();
    const Vector gpre = ((1.0 - a.square()) *
                         (n.w_out.transpose() * u).array())
                            .matrix();
    return (u - std::sqrt(ab) * (n.w_in.transpose() * gpre)) /
           std::sqrt(1.0 - ab);
  }
  const MixtureTerms m = mixture_terms(z, t, c);
  const Vector uw = to_basis(u);
  Eigen::ArrayXd diag = Eigen::ArrayXd::Zero(dim_);
  Vector dbar = Vector::Zero(dim_);
  Vector second = Vector::Zero(dim_);
  for (std::size_t i = 0; i < m.d.size(); ++i) {
    const double ri = m.r[static_cast<Index>(i)];
    diag += ri * m.inv_var[i];
    dbar += ri * m.d[i];
    second += ri * m.d[i].dot(uw) * m.d[i];
  }
  // Hessian of log p_t in basis coords applied to uw.
  const Vector hess_u =
      -(diag * uw.array()).matrix() - dbar * dbar.dot(uw) + second;
  return -m.sn * from_basis(hess_u);
}

Vector ScoreModel::vjp_c(const Vector& z, int t, const Vector& c,
                         const Vector& u) const {
  check_args(z, t, c);
  if (u.size() != dim_) throw DimensionError("vjp_c: cotangent size mismatch");
  if (kind_ == ScoreModelKind::learned_toy) {
    const double ab = schedule_->abar(t);
    const ToyNetwork& n = network_;
    Vector feat(2);
    feat << std::sqrt(ab), std::sqrt(1.0 - ab);
    const Eigen::ArrayXd a =
        (n.w_in * z + n.w_c * c + n.w_t * feat + n.b).array().tanh();
    const Vector gpre = ((1.0 - a.square()) *
                         (n.w_out.transpose() * u).array())
                            .matrix();
    return -std::sqrt(ab) / std::sqrt(1.0 - ab) * (n.w_c.transpose() * gpre);
  }
  if (kind_ == ScoreModelKind::gaussian_analytic) {
    return Vector::Zero(embedding_dim_);
  }
  const MixtureTerms m = mixture_terms(z, t, c);
  const Vector uw = to_basis(u);
  Vector tag_bar = Vector::Zero(embedding_dim_);
  for (std::size_t i = 0; i < components_.size(); ++i)
    tag_bar += m.r[static_cast<Index>(i)] * components_[i].tag;
  Vector out = Vector::Zero(embedding_dim_);
  for (std::size_t i = 0; i < components_.size(); ++i) {
    const double ri = m.r[static_cast<Index>(i)];
    out += ri * m.d[i].dot(uw) * (components_[i].tag - tag_bar);
  }
  return m.sn * out;
}

DiffMap ScoreModel::epsilon_map_z(int t, const Vector& c) const {
  schedule_->require_step(t);
  auto self = std::make_shared<const ScoreModel>(*this);
  return DiffMap(
      fmt::format("eps_z(t={})", t), Shape::flat(dim_), Shape::flat(dim_),
      [self, t, c](const Vector& z) { return self->epsilon(z, t, c); },
      [self, t, c](const Vector& z, const Vector& u) {
        return self->vjp_z(z, t, c, u);
      });
}

DiffMap ScoreModel::epsilon_map_c(int t, const Vector& z) const {
  schedule_->require_step(t);
  auto self = std::make_shared<const ScoreModel>(*this);
  return DiffMap(
      fmt::format("eps_c(t={})", t), Shape::flat(embedding_dim_),
      Shape::flat(dim_),
      [self, t, z](const Vector& c) { return self->epsilon(z, t, c); },
      [self, t, z](const Vector& c, const Vector& u) {
        return self->vjp_c(z, t, c, u);
      });
}

double ScoreModel::log_density(const Vector& z, int t, const Vector& c) const {
  if (!is_analytic()) throw ParameterError("log_density: model is not analytic");
  check_args(z, t, c);
  return log_sum_exp(mixture_terms(z, t, c).log_joint);
}

Vector ScoreModel::posterior_mean(const Vector& z, int t,
                                  const Vector& c) const {
  if (!is_analytic()) {
    throw ParameterError("posterior_mean: model is not analytic");
  }
  check_args(z, t, c);
  const MixtureTerms m = mixture_terms(z, t, c);
  Vector mean_w = Vector::Zero(dim_);
  for (std::size_t i = 0; i < components_.size(); ++i) {
    const auto& comp = components_[i];
    // Per-component Gaussian conditioning: mu + sqrt(abar) s^2 / v (w - sqrt(abar) mu).
    const Vector cond =
        comp.mean + (m.sa * comp.variance.array() * m.inv_var[i] *
                     (m.w.array() - m.sa * comp.mean.array()))
                        .matrix();
    mean_w += m.r[static_cast<Index>(i)] * cond;
  }
  return from_basis(mean_w);
}

Vector ScoreModel::responsibilities(const Vector& z, int t,
                                    const Vector& c) const {
  if (!is_analytic()) {
    throw ParameterError("responsibilities: model is not analytic");
  }
  check_args(z, t, c);
  return mixture_terms(z, t, c).r.matrix();
}

Vector ScoreModel::sample_prior(std::mt19937_64& rng, const Vector& c,
                                int* component) const {
  if (!is_analytic()) throw ParameterError("sample_prior: model is not analytic");
  const Vector weights = mixture_weights(c);
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  const double draw = unif(rng);
  Index pick = weights.size() - 1;
  double acc = 0.0;
  for (Index i = 0; i < weights.size(); ++i) {
    acc += weights[i];
    if (draw < acc) {
      pick = i;
      break;
    }
  }
  if (component) *component = static_cast<int>(pick);
  const auto& comp = components_[static_cast<std::size_t>(pick)];
  const Vector g = standard_normal(dim_, rng);
  const Vector w = comp.mean + (comp.variance.array().sqrt() * g.array()).matrix();
  return from_basis(w);
}

namespace {

void validate_basis(const std::optional<Matrix>& basis, Index dim) {
  if (!basis) return;
  if (basis->rows() != dim || basis->cols() != dim) {
    throw DimensionError(fmt::format("model basis must be {}x{}", dim, dim));
  }
  const double err =
      (basis->transpose() * *basis - Matrix::Identity(dim, dim)).norm();
  if (err > 1e-8) {
    throw ParameterError(fmt::format("model basis is not orthogonal (err {})", err));
  }
}

}  // namespace

ScoreModel make_gaussian_model(std::shared_ptr<const NoiseSchedule> schedule,
                               Vector mean, Vector variance,
                               std::optional<Matrix> basis,
                               Index embedding_dim) {
  if (!schedule) throw ParameterError("score model needs a schedule");
  if (variance.size() != mean.size()) {
    throw DimensionError("gaussian model: mean and variance sizes differ");
  }
  if ((variance.array() < 0.0).any()) {
    throw ParameterError("gaussian model: variances must be >= 0");
  }
  validate_basis(basis, mean.size());
  ScoreModel model;
  model.kind_ = ScoreModelKind::gaussian_analytic;
  model.dim_ = mean.size();
  model.embedding_dim_ = embedding_dim;
  model.schedule_ = std::move(schedule);
  // Stored in basis coordinates.
  Vector mean_w = basis ? Vector(basis->transpose() * mean) : mean;
  model.basis_ = std::move(basis);
  model.components_.push_back(
      {std::move(mean_w), std::move(variance), 0.0, Vector::Zero(embedding_dim)});
  return model;
}

ScoreModel make_gmm_model(std::shared_ptr<const NoiseSchedule> schedule,
                          std::vector<MixtureComponent> components,
                          std::optional<Matrix> basis, Index embedding_dim) {
  if (!schedule) throw ParameterError("score model needs a schedule");
  if (components.empty()) throw ParameterError("gmm model needs components");
  const Index dim = components.front().mean.size();
  validate_basis(basis, dim);
  for (auto& comp : components) {
    if (comp.mean.size() != dim || comp.variance.size() != dim) {
      throw DimensionError("gmm model: component dimensions differ");
    }
    if ((comp.variance.array() < 0.0).any()) {
      throw ParameterError("gmm model: variances must be >= 0");
    }
    if (comp.tag.size() == 0) comp.tag = Vector::Zero(embedding_dim);
    if (comp.tag.size() != embedding_dim) {
      throw DimensionError("gmm model: tag dimension differs from embedding");
    }
    if (basis) comp.mean = basis->transpose() * comp.mean;
  }
  ScoreModel model;
  model.kind_ = ScoreModelKind::gmm_conditional;
  model.dim_ = dim;
  model.embedding_dim_ = embedding_dim;
  model.schedule_ = std::move(schedule);
  model.basis_ = std::move(basis);
  model.components_ = std::move(components);
  return model;
}

ScoreModel make_toy_model(std::shared_ptr<const NoiseSchedule> schedule,
                          ToyNetwork network) {
  if (!schedule) throw ParameterError("score model needs a schedule");
  const Index h = network.w_in.rows();
  const Index dim = network.w_in.cols();
  if (network.w_c.rows() != h || network.w_t.rows() != h ||
      network.w_t.cols() != 2 || network.b.size() != h ||
      network.w_out.rows() != dim || network.w_out.cols() != h ||
      network.b_out.size() != dim) {
    throw DimensionError("toy network: inconsistent layer shapes");
  }
  ScoreModel model;
  model.kind_ = ScoreModelKind::learned_toy;
  model.dim_ = dim;
  model.embedding_dim_ = network.w_c.cols();
  model.schedule_ = std::move(schedule);
  model.network_ = std::move(network);
  return model;
}

Vector tweedie(const NoiseSchedule& schedule, const Vector& z_t, int t,
               const Vector& eps_hat) {
  if (z_t.size() != eps_hat.size()) {
    throw DimensionError("tweedie: z_t and eps_hat sizes differ");
  }
  const double ab = schedule.abar(t);
  return (z_t - std::sqrt(1.0 - ab) * eps_hat) / std::sqrt(ab);
}

ToyNetwork init_toy_network(Index dim, const ToyArch& arch, Seed seed) {
  if (arch.hidden < 1 || dim < 1) {
    throw ParameterError("toy network needs positive sizes");
  }
  Rng rng(seed);
  const Index h = arch.hidden;
  ToyNetwork n;
  n.w_in = standard_normal(h, dim, rng) / std::sqrt(double(dim));
  n.w_c = arch.embedding_dim > 0
              ? Matrix(standard_normal(h, arch.embedding_dim, rng) /
                       std::sqrt(double(arch.embedding_dim)))
              : Matrix(h, 0);
  n.w_t = standard_normal(h, 2, rng);
  n.b = Vector::Zero(h);
  n.w_out = 0.1 * standard_normal(dim, h, rng) / std::sqrt(double(h));
  n.b_out = Vector::Zero(dim);
  return n;
}

ToyTrainingResult train_toy_denoiser(
    const Matrix& dataset, std::shared_ptr<const NoiseSchedule> schedule,
    const ToyArch& arch, Seed seed) {
  if (!schedule) throw ParameterError("training needs a schedule");
  if (dataset.cols() < 1 || dataset.rows() < 1) {
    throw ParameterError("training dataset is empty");
  }
  if (arch.epochs < 0 || arch.batch_size < 1) {
    throw ParameterError("training needs epochs >= 0 and batch_size >= 1");
  }
  const Index dim = dataset.rows();
  ToyNetwork net = init_toy_network(dim, arch, seed);
  const Index h = arch.hidden;
  const Index dc = arch.embedding_dim;

  // Parameter block offsets within the flat Adam state.
  const Index n_win = h * dim, n_wt = h * 2, n_b = h, n_wout = dim * h;
  const Index total = n_win + n_wt + n_b + n_wout + dim;
  Adam adam(total, arch.learning_rate);

  Rng rng(derive_seed(seed, 17));
  std::uniform_int_distribution<int> step_dist(1, schedule->T);
  std::vector<Index> order(static_cast<std::size_t>(dataset.cols()));
  std::iota(order.begin(), order.end(), Index{0});
  const Vector c = Vector::Zero(dc);

  std::vector<double> epoch_loss;
  for (int epoch = 0; epoch < arch.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    double loss_sum = 0.0;
    Index seen = 0;
    for (std::size_t start = 0; start < order.size();
         start += static_cast<std::size_t>(arch.batch_size)) {
      const std::size_t stop =
          std::min(order.size(), start + static_cast<std::size_t>(arch.batch_size));
      Matrix g_win = Matrix::Zero(h, dim);
      Matrix g_wt = Matrix::Zero(h, 2);
      Vector g_b = Vector::Zero(h);
      Matrix g_wout = Matrix::Zero(dim, h);
      Vector g_bout = Vector::Zero(dim);
      double batch_loss = 0.0;
      const double scale = 1.0 / double((stop - start) * std::size_t(dim));
      for (std::size_t s = start; s < stop; ++s) {
        const int t = step_dist(rng);
        const double ab = schedule->abar(t);
        const double sa = std::sqrt(ab), sn = std::sqrt(1.0 - ab);
        const Vector noise = standard_normal(dim, rng);
        const Vector z = sa * dataset.col(order[s]) + sn * noise;
        Vector feat(2);
        feat << sa, sn;
        const Vector pre = net.w_in * z + net.w_c * c + net.w_t * feat + net.b;
        const Eigen::ArrayXd a = pre.array().tanh();
        const Vector hout = net.w_out * a.matrix() + net.b_out;
        const Vector eps_hat = (z - sa * hout) / sn;
        const Vector resid = eps_hat - noise;
        batch_loss += resid.squaredNorm();
        const Vector g_eps = 2.0 * scale * resid;
        const Vector g_h = -(sa / sn) * g_eps;
        g_wout += g_h * a.matrix().transpose();
        g_bout += g_h;
        const Vector g_pre =
            ((1.0 - a.square()) * (net.w_out.transpose() * g_h).array())
                .matrix();
        g_win += g_pre * z.transpose();
        g_wt += g_pre * feat.transpose();
        g_b += g_pre;
      }
      Vector grad(total);
      grad << Eigen::Map<const Vector>(g_win.data(), n_win),
          Eigen::Map<const Vector>(g_wt.data(), n_wt), g_b,
          Eigen::Map<const Vector>(g_wout.data(), n_wout), g_bout;
      const Vector delta = adam.step(grad);
      Index off = 0;
      net.w_in -= Eigen::Map<const Matrix>(delta.data() + off, h, dim);
      off += n_win;
      net.w_t -= Eigen::Map<const Matrix>(delta.data() + off, h, 2);
      off += n_wt;
      net.b -= delta.segment(off, n_b);
      off += n_b;
      net.w_out -= Eigen::Map<const Matrix>(delta.data() + off, dim, h);
      off += n_wout;
      net.b_out -= delta.segment(off, dim);
      loss_sum += batch_loss;
      seen += static_cast<Index>(stop - start);
    }
    const double mean_loss = loss_sum / double(seen * dim);
    if (!std::isfinite(mean_loss)) {
      throw TrainingError(
          fmt::format("toy denoiser training diverged at epoch {}", epoch));
    }
    epoch_loss.push_back(mean_loss);
  }
  return {make_toy_model(std::move(schedule), std::move(net)),
          std::move(epoch_loss)};
}

}  // namespace p2l
