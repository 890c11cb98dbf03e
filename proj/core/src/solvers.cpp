// SPDX-License-Identifier: Apache-2.0
#include "p2l/solvers.hpp"

#include <fmt/format.h>

#include <algorithm>
#include <cmath>

namespace p2l {

std::string_view to_string(SolverKind kind) {
  switch (kind) {
    case SolverKind::p2l: return "p2l";
    case SolverKind::p2l_adam: return "p2l_adam";
    case SolverKind::ldps: return "ldps";
    case SolverKind::gml_dps: return "gml_dps";
    case SolverKind::psld: return "psld";
    case SolverKind::ldir: return "ldir";
    case SolverKind::dps: return "dps";
    case SolverKind::dds: return "dds";
    case SolverKind::diffpir: return "diffpir";
  }
  return "unknown";
}

SolverKind solver_kind_from_string(std::string_view name) {
  for (auto kind : {SolverKind::p2l, SolverKind::p2l_adam, SolverKind::ldps,
                    SolverKind::gml_dps, SolverKind::psld, SolverKind::ldir,
                    SolverKind::dps, SolverKind::dds, SolverKind::diffpir}) {
    if (to_string(kind) == name) return kind;
  }
  throw ParameterError(fmt::format("unknown solver '{}'", name));
}

bool is_image_space(SolverKind kind) {
  return kind == SolverKind::dps || kind == SolverKind::dds ||
         kind == SolverKind::diffpir;
}

void SolverConfig::validate() const {
  if (nfe < 1) throw ParameterError("solver nfe must be >= 1");
  if (!(eta >= 0.0 && eta <= 1.0)) throw ParameterError("solver eta must lie in [0, 1]");
  if (gamma_proj < 1) throw ParameterError("gamma_proj must be >= 1");
  if (prompt_iters < 0) throw ParameterError("prompt_iters must be >= 0");
  if (prompt_iters > 0 && !(prompt_lr > 0.0)) {
    throw ParameterError("prompt_lr must be > 0");
  }
  if (!(rho.c >= 0.0)) throw ParameterError("step size must be >= 0");
  if (!(lambda_fix >= 0.0)) throw ParameterError("lambda_fix must be >= 0");
  if (!(dds_gamma > 0.0)) throw ParameterError("dds_gamma must be > 0");
  if (dds_cg_iters < 1) throw ParameterError("dds_cg_iters must be >= 1");
  if (!(diffpir.zeta >= 0.0 && diffpir.zeta <= 1.0)) {
    throw ParameterError("diffpir zeta must lie in [0, 1]");
  }
  if (!(diffpir.lambda >= 0.0)) throw ParameterError("diffpir lambda must be >= 0");
  prox.validate();
}

SolverConfig default_config(SolverKind kind) {
  SolverConfig cfg;
  cfg.solver = kind;
  switch (kind) {
    case SolverKind::p2l:
      cfg.grad_type = GradType::gd;
      cfg.rho = {StepRule::Kind::constant, 1.0};
      cfg.gamma_proj = 4;
      cfg.prompt_iters = 5;
      break;
    case SolverKind::p2l_adam:
      cfg.grad_type = GradType::adam;
      cfg.rho = {StepRule::Kind::constant, 0.05};
      cfg.gamma_proj = 3;
      cfg.prox.lambda = 0.1;
      cfg.prompt_iters = 1;
      break;
    case SolverKind::ldir:
      cfg.rho = {StepRule::Kind::constant, 0.05};
      break;
    case SolverKind::dds:
      cfg.nfe = 100;
      cfg.eta = 1.0;
      break;
    case SolverKind::diffpir:
      cfg.nfe = 100;
      break;
    default:
      break;
  }
  return cfg;
}

std::vector<int> timestep_grid(int T, int nfe) {
  if (nfe < 1 || nfe > T) {
    throw ParameterError(fmt::format("nfe must lie in [1, {}], got {}", T, nfe));
  }
  std::vector<int> out;
  out.reserve(static_cast<std::size_t>(nfe));
  for (int i = nfe; i >= 1; --i) {
    out.push_back(static_cast<int>((static_cast<long long>(i) * T) / nfe));
  }
  return out;
}

double ddim_sigma(const NoiseSchedule& schedule, int t, int t_prev, double eta) {
  if (eta == 0.0) return 0.0;
  const double ab = schedule.abar(t);
  const double ab_prev = schedule.abar(t_prev);
  const double var = (1.0 - ab_prev) / (1.0 - ab) * (1.0 - ab / ab_prev);
  return eta * std::sqrt(std::max(var, 0.0));
}

Vector ddim_transition(const NoiseSchedule& schedule, const Vector& z0_hat,
                       const Vector& eps_hat, int t, int t_prev, double eta,
                       Rng& rng) {
  schedule.require_step(t);
  if (t_prev < 0 || t_prev >= t) {
    throw ParameterError(fmt::format("ddim: t_prev {} must lie in [0, {})", t_prev, t));
  }
  if (z0_hat.size() != eps_hat.size()) {
    throw DimensionError("ddim: z0_hat and eps_hat sizes differ");
  }
  const double ab_prev = schedule.abar(t_prev);
  const double sigma = ddim_sigma(schedule, t, t_prev, eta);
  const double dir = std::sqrt(std::max(1.0 - ab_prev - sigma * sigma, 0.0));
  Vector out = std::sqrt(ab_prev) * z0_hat + dir * eps_hat;
  if (sigma > 0.0) out += sigma * standard_normal(z0_hat.size(), rng);
  return out;
}

Vector ddim_transition(const NoiseSchedule& schedule, const Vector& z0_hat,
                       const Vector& eps_hat, int t, double eta, Seed seed) {
  Rng rng(seed);
  return ddim_transition(schedule, z0_hat, eps_hat, t, t - 1, eta, rng);
}

namespace {

// Gradient of ||q|| with q = z0 - E(target(z0)); `project` maps the encoder
// cotangent back through d target / d x before the decoder vjp.
Vector fixed_point_grad(const DiffMap& decoder, const DiffMap& encoder,
                        const LinearOperator* op, const Vector& y,
                        const Vector& z0, const Vector& x) {
  Vector target = x;
  if (op) target = op->adjoint(y) + x - op->adjoint(op->forward(x));
  const Vector q = z0 - encoder.apply(target);
  const double qn = q.norm();
  if (qn == 0.0) return Vector::Zero(z0.size());
  const Vector qhat = q / qn;
  Vector back = encoder.vjp(target, qhat);
  if (op) back -= op->adjoint(op->forward(back));
  return qhat - decoder.vjp(z0, back);
}

// Chain a z0_hat cotangent through Tweedie and the eps network to z_t.
Vector through_tweedie(const ScoreModel& model, const Vector& z_t, int t,
                       const Vector& c, const Vector& g_z0) {
  const double ab = model.schedule().abar(t);
  return (g_z0 - std::sqrt(1.0 - ab) * model.vjp_z(z_t, t, c, g_z0)) /
         std::sqrt(ab);
}

}  // namespace

LikelihoodGrad likelihood_grad(const ScoreModel& model, const DiffMap& decoder,
                               const LinearOperator& op, const Vector& y,
                               const Vector& z_t, int t, const Vector& c,
                               Penalty penalty, double weight,
                               const DiffMap* encoder) {
  if (y.size() != op.output_size()) {
    throw DimensionError(fmt::format("likelihood_grad: y has {} entries, operator outputs {}",
                                     y.size(), op.output_size()));
  }
  LikelihoodGrad out;
  out.eps_hat = model.epsilon(z_t, t, c);
  out.z0_hat = tweedie(model.schedule(), z_t, t, out.eps_hat);
  const Vector x = decoder.apply(out.z0_hat);
  const Vector r = op.forward(x) - y;
  out.residual = r.norm();

  Vector g_z0 = Vector::Zero(out.z0_hat.size());
  if (out.residual > 0.0) {
    g_z0 = decoder.vjp(out.z0_hat, op.adjoint(r / out.residual));
  }
  if (penalty != Penalty::none && weight != 0.0) {
    if (!encoder) throw ParameterError("likelihood_grad: penalty needs an encoder");
    g_z0 += weight * fixed_point_grad(decoder, *encoder,
                                      penalty == Penalty::psld ? &op : nullptr,
                                      y, out.z0_hat, x);
  }
  out.grad = through_tweedie(model, z_t, t, c, g_z0);
  return out;
}

namespace {

struct ShiftedPrediction {
  Vector eps;
  Vector z0;        // Tweedie estimate
  Vector z0_shift;  // after the measurement shift
  double shift_residual = 0.0;
};

ShiftedPrediction shifted_prediction(const ScoreModel& model,
                                     const LatentCodec& codec,
                                     const LinearOperator& op, const Vector& y,
                                     const Vector& z_t, int t, const Vector& c,
                                     bool use_conditional_mean,
                                     double rho_shift) {
  ShiftedPrediction p;
  p.eps = model.epsilon(z_t, t, c);
  p.z0 = tweedie(model.schedule(), z_t, t, p.eps);
  p.z0_shift = p.z0;
  if (use_conditional_mean) {
    const Vector r = op.forward(codec.decode(p.z0)) - y;
    p.shift_residual = r.norm();
    if (p.shift_residual > 0.0) {
      p.z0_shift -= rho_shift * codec.decoder().vjp(
                                    p.z0, op.adjoint(r / p.shift_residual));
    }
  }
  return p;
}

// Directional derivative of the decoder at z along v.
Vector decoder_jvp(const DiffMap& decoder, const Vector& z, const Vector& v) {
  if (decoder.is_linear()) return decoder.apply(v);
  const double vn = v.norm();
  if (vn == 0.0) return Vector::Zero(decoder.output_size());
  const double h = 1e-6 * std::max(1.0, z.norm()) / vn;
  return (decoder.apply(z + h * v) - decoder.apply(z - h * v)) / (2.0 * h);
}

}  // namespace

double prompt_loss(const ScoreModel& model, const LatentCodec& codec,
                   const LinearOperator& op, const Vector& y,
                   const Vector& z_t, int t, const Vector& c,
                   bool use_conditional_mean, double rho_shift) {
  const ShiftedPrediction p = shifted_prediction(
      model, codec, op, y, z_t, t, c, use_conditional_mean, rho_shift);
  return (op.forward(codec.decode(p.z0_shift)) - y).squaredNorm();
}

Vector prompt_loss_grad(const ScoreModel& model, const LatentCodec& codec,
                        const LinearOperator& op, const Vector& y,
                        const Vector& z_t, int t, const Vector& c,
                        bool use_conditional_mean, double rho_shift,
                        double* loss) {
  const ShiftedPrediction p = shifted_prediction(
      model, codec, op, y, z_t, t, c, use_conditional_mean, rho_shift);
  const DiffMap& dec = codec.decoder();
  const Vector r = op.forward(dec.apply(p.z0_shift)) - y;
  if (loss) *loss = r.squaredNorm();

  Vector g = dec.vjp(p.z0_shift, 2.0 * op.adjoint(r));
  if (use_conditional_mean && p.shift_residual > 0.0) {
    // Shift map S(z0) = z0 - rho grad||A D z0 - y||; its Jacobian is
    // I - rho H with H = (1/s) J^T A^T (I - rhat rhat^T) A J (symmetric).
    const Vector r0 = op.forward(dec.apply(p.z0)) - y;
    const Vector rhat = r0 / p.shift_residual;
    const Vector ajg = op.forward(decoder_jvp(dec, p.z0, g));
    const Vector proj = ajg - rhat * rhat.dot(ajg);
    g -= rho_shift / p.shift_residual * dec.vjp(p.z0, op.adjoint(proj));
  }
  const double ab = model.schedule().abar(t);
  const Vector g_eps = -std::sqrt(1.0 - ab) / std::sqrt(ab) * g;
  return model.vjp_c(z_t, t, c, g_eps);
}

namespace {

bool non_increasing(const std::vector<double>& h, double final_loss) {
  double prev = h.empty() ? final_loss : h.front();
  auto ok = [&prev](double v) {
    const bool good = v <= prev * (1.0 + 1e-12) + 1e-300;
    prev = v;
    return good;
  };
  for (std::size_t i = 1; i < h.size(); ++i)
    if (!ok(h[i])) return false;
  return ok(final_loss);
}

}  // namespace

EmbeddingResult optimize_embedding(const ScoreModel& model,
                                   const LatentCodec& codec,
                                   const LinearOperator& op, const Vector& y,
                                   const Vector& z_t, int t,
                                   const Vector& c_init,
                                   const EmbeddingOptions& opts, Adam* adam) {
  if (opts.iters < 0) throw ParameterError("optimize_embedding: K must be >= 0");
  EmbeddingResult result;
  result.c = c_init;
  if (opts.iters == 0) return result;

  const Adam saved = adam ? *adam : Adam(c_init.size(), opts.lr, opts.adam);
  auto attempt = [&](double lr) {
    Adam opt = saved;
    opt.set_learning_rate(lr);
    EmbeddingResult r;
    r.c = c_init;
    for (int k = 1; k <= opts.iters; ++k) {
      double loss = 0.0;
      const Vector g = prompt_loss_grad(model, codec, op, y, z_t, t, r.c,
                                        opts.use_conditional_mean,
                                        opts.rho_shift, &loss);
      if (!std::isfinite(loss) || !g.allFinite()) {
        throw OptimizationError(fmt::format(
            "prompt tuning: non-finite loss at iteration {} (t={})", k, t));
      }
      r.loss_history.push_back(loss);
      r.c -= opt.step(g);
    }
    r.final_loss = prompt_loss(model, codec, op, y, z_t, t, r.c,
                               opts.use_conditional_mean, opts.rho_shift);
    return std::pair{std::move(r), std::move(opt)};
  };

  auto [first, first_opt] = attempt(opts.lr);
  if (!opts.retry || non_increasing(first.loss_history, first.final_loss)) {
    if (adam) *adam = first_opt;
    return first;
  }
  auto [second, second_opt] = attempt(opts.lr / 2.0);
  second.retried = true;
  if (adam) {
    *adam = second_opt;
    adam->set_learning_rate(opts.lr);
  }
  return second;
}

Vector project_to_encoder_range(const LatentCodec& codec,
                                const LinearOperator& op, const Vector& y,
                                const Vector& z0_hat, const ProxConfig& prox,
                                GammaKind gamma) {
  const Vector x = codec.decode(z0_hat);
  const Vector corrected = gamma == GammaKind::prox
                               ? prox_gamma(op, y, x, prox)
                               : glue_gamma(op, y, x);
  return codec.encode(corrected);
}

namespace {

void require_finite(const Vector& v, SolverKind kind, int index, int t) {
  if (!v.allFinite()) {
    throw SolverError(fmt::format("{}: non-finite state at step {} (t={})",
                                  to_string(kind), index, t));
  }
}

}  // namespace

Trajectory run_p2l(const InverseProblem& problem, const SolverConfig& cfg) {
  cfg.validate();
  if (cfg.solver != SolverKind::p2l && cfg.solver != SolverKind::p2l_adam) {
    throw ParameterError("run_p2l: solver must be p2l or p2l_adam");
  }
  const ScoreModel& model = problem.model;
  const NoiseSchedule& sched = model.schedule();
  const LatentCodec& codec = problem.codec;
  if (codec.latent_dim() != model.dim()) {
    throw DimensionError("run_p2l: codec latent size differs from model size");
  }
  const GradType grad_type =
      cfg.solver == SolverKind::p2l_adam ? GradType::adam : cfg.grad_type;

  Rng rng(cfg.seed);
  Vector z = standard_normal(model.dim(), rng);
  Vector c = Vector::Zero(model.embedding_dim());
  const std::vector<int> times = timestep_grid(sched.T, cfg.nfe);

  EmbeddingOptions prompt{cfg.prompt_iters, cfg.prompt_lr, cfg.adam,
                          cfg.use_conditional_mean, cfg.rho_shift,
                          cfg.prompt_retry};
  Adam prompt_adam(model.embedding_dim(), cfg.prompt_lr, cfg.adam);
  HistoryGradient history(model.dim(), cfg.adam);

  Trajectory traj;
  traj.steps.reserve(times.size());
  for (std::size_t j = 0; j < times.size(); ++j) {
    const int t = times[j];
    const int t_prev = j + 1 < times.size() ? times[j + 1] : 0;
    const int index = cfg.nfe - static_cast<int>(j);
    StepRecord rec;
    rec.index = index;
    rec.t = t;

    if (cfg.prompt_iters > 0) {
      EmbeddingResult er = optimize_embedding(
          model, codec, problem.op, problem.y, z, t, c, prompt,
          cfg.persist_prompt_moments ? &prompt_adam : nullptr);
      c = std::move(er.c);
      rec.prompt_loss = er.final_loss;
      rec.lr_retry = er.retried;
    }

    const LikelihoodGrad lg = likelihood_grad(model, codec.decoder(), problem.op,
                                              problem.y, z, t, c);
    rec.residual = lg.residual;

    Vector z0_renoise = lg.z0_hat;
    if (index % cfg.gamma_proj == 0) {
      const Vector projected = project_to_encoder_range(
          codec, problem.op, problem.y, lg.z0_hat, cfg.prox, cfg.gamma);
      rec.projected = true;
      if (cfg.renoise_projected) z0_renoise = projected;
    }
    const Vector z_prime =
        ddim_transition(sched, z0_renoise, lg.eps_hat, t, t_prev, cfg.eta, rng);
    const double step = cfg.rho.at(sched.abar(t));
    if (grad_type == GradType::gd) {
      z = z_prime - step * lg.grad;
    } else {
      z = z_prime - step * history.direction(lg.grad);
    }
    require_finite(z, cfg.solver, index, t);
    rec.embedding_norm = c.norm();
    traj.steps.push_back(rec);
  }
  traj.z0 = z;
  traj.x0 = codec.decode(z);
  traj.embedding = c;
  if (!traj.x0.allFinite()) {
    throw SolverError(fmt::format("{}: non-finite final image", to_string(cfg.solver)));
  }
  return traj;
}

Vector diffpir_data_step(const LinearOperator& op, const Vector& y,
                         const Vector& x0_hat, double weight,
                         bool* closed_form) {
  const auto c = op.row_gram_scale();
  if (c) {
    if (closed_form) *closed_form = true;
    if (weight > 0.0) {
      // (A^T A + w I)^{-1} = (I - A^T A / (w + c)) / w when A A^T = c I.
      const Vector b = op.adjoint(y) + weight * x0_hat;
      return (b - op.adjoint(op.forward(b)) / (weight + *c)) / weight;
    }
    return op.adjoint(y) / *c + x0_hat - op.adjoint(op.forward(x0_hat)) / *c;
  }
  if (closed_form) *closed_form = false;
  ProxConfig cfg{std::max(weight, 1e-10), 100, 1e-10};
  return prox_gamma(op, y, x0_hat, cfg);
}

StepRecord baseline_step(const InverseProblem& problem, const SolverConfig& cfg,
                         BaselineState& state, int t, int t_prev, Rng& rng) {
  StepRecord rec;
  rec.t = t;
  const LinearOperator& op = problem.op;
  const Vector& y = problem.y;

  if (!is_image_space(cfg.solver)) {
    const ScoreModel& model = problem.model;
    const Vector c = Vector::Zero(model.embedding_dim());
    Penalty penalty = Penalty::none;
    if (cfg.solver == SolverKind::gml_dps) penalty = Penalty::fixed_point;
    if (cfg.solver == SolverKind::psld) penalty = Penalty::psld;
    const LikelihoodGrad lg = likelihood_grad(
        model, problem.codec.decoder(), op, y, state.z, t, c, penalty,
        cfg.lambda_fix, &problem.codec.encoder());
    rec.residual = lg.residual;
    const Vector z_prime = ddim_transition(model.schedule(), lg.z0_hat,
                                           lg.eps_hat, t, t_prev, cfg.eta, rng);
    const double step = cfg.rho.at(model.schedule().abar(t));
    if (cfg.solver == SolverKind::ldir) {
      state.z = z_prime - step * state.history.direction(lg.grad);
    } else {
      state.z = z_prime - step * lg.grad;
    }
    return rec;
  }

  if (!problem.image_model) {
    throw ParameterError(fmt::format("{} needs an image-space score model",
                                     to_string(cfg.solver)));
  }
  const ScoreModel& model = *problem.image_model;
  const NoiseSchedule& sched = model.schedule();
  const Vector c = Vector::Zero(model.embedding_dim());
  switch (cfg.solver) {
    case SolverKind::dps: {
      const DiffMap identity = identity_map(Shape::flat(model.dim()));
      const LikelihoodGrad lg =
          likelihood_grad(model, identity, op, y, state.z, t, c);
      rec.residual = lg.residual;
      const Vector x_prime = ddim_transition(sched, lg.z0_hat, lg.eps_hat, t,
                                             t_prev, cfg.eta, rng);
      state.z = x_prime - cfg.rho.at(sched.abar(t)) * lg.grad;
      break;
    }
    case SolverKind::dds: {
      const Vector eps = model.epsilon(state.z, t, c);
      const Vector x0 = tweedie(sched, state.z, t, eps);
      rec.residual = (op.forward(x0) - y).norm();
      const ProxConfig prox{cfg.dds_gamma, cfg.dds_cg_iters, 1e-14};
      const Vector x0_data = prox_gamma(op, y, x0, prox);
      state.z = ddim_transition(sched, x0_data, eps, t, t_prev, cfg.eta, rng);
      break;
    }
    case SolverKind::diffpir: {
      const Vector eps = model.epsilon(state.z, t, c);
      const Vector x0 = tweedie(sched, state.z, t, eps);
      rec.residual = (op.forward(x0) - y).norm();
      const double ab = sched.abar(t);
      const double weight = cfg.diffpir.lambda * problem.sigma_y *
                            problem.sigma_y * ab / (1.0 - ab);
      const Vector x0_data =
          diffpir_data_step(op, y, x0, weight, &rec.closed_form);
      const double ab_prev = sched.abar(t_prev);
      const double zeta = cfg.diffpir.zeta;
      Vector noise = std::sqrt(1.0 - zeta) * eps;
      if (zeta > 0.0) noise += std::sqrt(zeta) * standard_normal(eps.size(), rng);
      state.z = std::sqrt(ab_prev) * x0_data + std::sqrt(1.0 - ab_prev) * noise;
      break;
    }
    default:
      throw ParameterError("baseline_step: unsupported solver");
  }
  return rec;
}

Trajectory run_baseline(const InverseProblem& problem, const SolverConfig& cfg) {
  cfg.validate();
  if (cfg.solver == SolverKind::p2l || cfg.solver == SolverKind::p2l_adam) {
    throw ParameterError("run_baseline: use run_p2l for p2l solvers");
  }
  const bool image = is_image_space(cfg.solver);
  if (image && !problem.image_model) {
    throw ParameterError(fmt::format("{} needs an image-space score model",
                                     to_string(cfg.solver)));
  }
  const ScoreModel& model = image ? *problem.image_model : problem.model;
  const NoiseSchedule& sched = model.schedule();

  Rng rng(cfg.seed);
  BaselineState state{standard_normal(model.dim(), rng),
                      HistoryGradient(model.dim(), cfg.adam)};
  const std::vector<int> times = timestep_grid(sched.T, cfg.nfe);
  Trajectory traj;
  traj.steps.reserve(times.size());
  for (std::size_t j = 0; j < times.size(); ++j) {
    const int t = times[j];
    const int t_prev = j + 1 < times.size() ? times[j + 1] : 0;
    StepRecord rec = baseline_step(problem, cfg, state, t, t_prev, rng);
    rec.index = cfg.nfe - static_cast<int>(j);
    require_finite(state.z, cfg.solver, rec.index, t);
    traj.steps.push_back(rec);
  }
  traj.z0 = state.z;
  traj.x0 = image ? state.z : problem.codec.decode(state.z);
  traj.embedding = Vector::Zero(model.embedding_dim());
  return traj;
}

Trajectory run_solver(const InverseProblem& problem, const SolverConfig& cfg) {
  if (cfg.solver == SolverKind::p2l || cfg.solver == SolverKind::p2l_adam) {
    return run_p2l(problem, cfg);
  }
  return run_baseline(problem, cfg);
}

}  // namespace p2l
