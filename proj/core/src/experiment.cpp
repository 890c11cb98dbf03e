// SPDX-License-Identifier: Apache-2.0
#include "p2l/experiment.hpp"

#include "p2l/image_io.hpp"
#include "p2l/rng.hpp"

#include <fmt/format.h>

#include <Eigen/SVD>

#include <cmath>
#include <fstream>
#include <limits>

namespace p2l {

ScoreModel make_latent_prior(const PriorSpec& spec, Index latent_dim,
                             std::shared_ptr<const NoiseSchedule> schedule) {
  const Vector var = Vector::Constant(latent_dim, spec.variance);
  if (spec.kind == ScoreModelKind::gaussian_analytic) {
    return make_gaussian_model(std::move(schedule),
                               Vector::Constant(latent_dim, spec.mean_offset), var,
                               std::nullopt, spec.embedding_dim);
  }
  if (spec.components >= latent_dim) {
    throw ParameterError(fmt::format("prior: {} components need a latent size above {}",
                                     spec.components, spec.components));
  }
  const Matrix q = random_orthonormal_rows(spec.components, latent_dim, spec.seed);
  std::vector<MixtureComponent> comps;
  for (int i = 0; i < spec.components; ++i) {
    MixtureComponent c;
    c.mean = (spec.separation * q.row(i).transpose()).array() + spec.mean_offset;
    c.variance = var;
    c.tag = spec.tag_scale * Vector::Unit(spec.embedding_dim, i % spec.embedding_dim);
    comps.push_back(std::move(c));
  }
  return make_gmm_model(std::move(schedule), std::move(comps), std::nullopt,
                        spec.embedding_dim);
}

ScoreModel pushforward_prior(const ScoreModel& latent, const Matrix& decoder,
                             double floor_variance,
                             std::shared_ptr<const NoiseSchedule> schedule) {
  if (!latent.is_analytic()) throw ParameterError("pushforward: latent prior is not analytic");
  if (decoder.cols() != latent.dim()) throw DimensionError("pushforward: decoder width differs");
  const Index n = decoder.rows();
  const Index k = decoder.cols();
  Eigen::JacobiSVD<Matrix> svd(decoder, Eigen::ComputeFullU);
  const Matrix& basis = svd.matrixU();
  const Vector s2 = svd.singularValues().array().square();

  std::vector<MixtureComponent> comps;
  for (const auto& lc : latent.components()) {
    const double v = lc.variance.maxCoeff();
    if (v - lc.variance.minCoeff() > 1e-12 * std::max(v, 1.0)) {
      throw ParameterError("pushforward: component covariances must be isotropic");
    }
    const Vector mean_z = latent.basis() ? Vector(*latent.basis() * lc.mean) : lc.mean;
    MixtureComponent pc;
    pc.mean = decoder * mean_z;
    pc.variance = Vector::Constant(n, floor_variance);
    for (Index i = 0; i < std::min(n, k); ++i) {
      pc.variance[i] = std::max(v * s2[i], floor_variance);
    }
    pc.log_weight = lc.log_weight;
    pc.tag = lc.tag;
    comps.push_back(std::move(pc));
  }
  if (latent.kind() == ScoreModelKind::gaussian_analytic) {
    const auto& c = comps.front();
    // make_gaussian_model expects the mean in pixel coordinates.
    return make_gaussian_model(std::move(schedule), c.mean, c.variance, basis,
                               latent.embedding_dim());
  }
  return make_gmm_model(std::move(schedule), std::move(comps), basis, latent.embedding_dim());
}

namespace {

bool wants_image_prior(const ExperimentConfig& cfg) {
  for (const auto& s : cfg.solvers)
    if (is_image_space(s.config.solver)) return true;
  return false;
}

LatentCodec build_codec(const ExperimentConfig& cfg) {
  if (cfg.codec.kind == CodecKind::identity) return make_identity_codec(cfg.dataset.shape.size());
  CodecSpec spec = cfg.codec;
  spec.image_dim = cfg.dataset.shape.size();
  return make_codec(spec);
}

}  // namespace

ExperimentSetup build_setup(const ExperimentConfig& cfg) {
  const auto& sc = cfg.prior.schedule;
  auto schedule = std::make_shared<const NoiseSchedule>(
      make_vp_schedule(sc.T, sc.beta_min, sc.beta_max));
  LatentCodec codec = build_codec(cfg);

  PriorSpec truth_spec = cfg.prior;
  if (truth_spec.kind == ScoreModelKind::learned_toy) {
    truth_spec.kind = ScoreModelKind::gmm_conditional;
  }
  ScoreModel truth = make_latent_prior(truth_spec, codec.latent_dim(), schedule);
  ScoreModel latent = truth;
  if (cfg.prior.kind == ScoreModelKind::learned_toy) {
    Rng rng(derive_seed(cfg.prior.seed, 17));
    Matrix data(codec.latent_dim(), cfg.prior.toy_samples);
    const Vector null_c = Vector::Zero(truth.embedding_dim());
    for (int i = 0; i < cfg.prior.toy_samples; ++i) data.col(i) = truth.sample_prior(rng, null_c);
    latent = train_toy_denoiser(data, schedule, cfg.prior.toy, derive_seed(cfg.prior.seed, 18)).model;
  }

  std::optional<ScoreModel> image;
  if (wants_image_prior(cfg)) {
    if (!codec.decoder_matrix()) {
      throw ParameterError("image-space solvers need a linear codec for the pixel prior");
    }
    image = pushforward_prior(truth, *codec.decoder_matrix(),
                              cfg.prior.pixel_floor_variance, schedule);
  }
  return ExperimentSetup{schedule, std::move(codec), std::move(truth), std::move(latent),
                         std::move(image), make_operator(cfg.op, cfg.dataset.shape)};
}

Instance make_instance(const ExperimentConfig& cfg, const ExperimentSetup& setup,
                       int index) {
  Instance inst;
  inst.index = index;
  Rng rng(derive_seed(cfg.dataset.seed, static_cast<std::uint64_t>(index)));
  const Vector null_c = Vector::Zero(setup.truth_prior.embedding_dim());
  inst.z_true = setup.truth_prior.sample_prior(rng, null_c, &inst.component);
  inst.x_true = setup.codec.decode(inst.z_true);
  const auto stream = 2 * static_cast<std::uint64_t>(index);
  inst.y = add_noise(setup.op.forward(inst.x_true), cfg.sigma_y,
                     derive_seed(cfg.seed, stream), setup.op.id());
  inst.solver_seed = derive_seed(cfg.seed, stream + 1);
  if (setup.truth_prior.kind() == ScoreModelKind::gaussian_analytic &&
      setup.codec.is_linear() && cfg.sigma_y > 0.0) {
    inst.oracle = gaussian_posterior_oracle(setup.truth_prior, setup.codec, setup.op, inst.y);
  }
  return inst;
}

std::vector<const InstanceResult*> ExperimentResult::runs_for(const std::string& label) const {
  std::vector<const InstanceResult*> out;
  for (const auto& r : runs)
    if (r.label == label) out.push_back(&r);
  return out;
}

bool ExperimentResult::all_failed() const {
  for (const auto& r : runs)
    if (r.ok) return false;
  return true;
}

ExperimentResult evaluate_experiment(const ExperimentConfig& cfg) {
  cfg.validate();
  const ExperimentSetup setup = build_setup(cfg);
  ExperimentResult result;
  for (int i = 0; i < cfg.dataset.n_instances; ++i) {
    result.instances.push_back(make_instance(cfg, setup, i));
  }
  for (const auto& named : cfg.solvers) {
    for (const Instance& inst : result.instances) {
      InstanceResult r;
      r.label = named.label;
      r.solver = named.config.solver;
      r.instance = inst.index;
      SolverConfig sc = named.config;
      sc.seed = inst.solver_seed;
      const InverseProblem problem{setup.latent_model, setup.codec, setup.op, inst.y.y,
                                   cfg.sigma_y,
                                   setup.image_model ? &*setup.image_model : nullptr};
      try {
        r.trajectory = run_solver(problem, sc);
        const Vector& x = r.trajectory.x0;
        double peak = cfg.psnr_peak;
        if (peak == 0.0) peak = inst.x_true.maxCoeff() - inst.x_true.minCoeff();
        if (!(peak > 0.0)) peak = 1.0;
        r.mse = mse(x, inst.x_true);
        r.psnr = psnr(x, inst.x_true, peak);
        r.residual = (setup.op.forward(x) - inst.y.y).norm();
        if (inst.oracle) {
          const Vector& m = inst.oracle->posterior_mean;
          r.oracle_dist = (x - m).norm() / m.norm();
        }
        r.ok = true;
      } catch (const Error& e) {
        r.error = e.what();
      }
      result.runs.push_back(std::move(r));
    }
  }
  return result;
}

namespace {

std::string num(double v) {
  if (std::isnan(v)) return "nan";
  return fmt::format("{:.10g}", v);
}

std::pair<double, double> mean_std(const std::vector<double>& v) {
  if (v.empty()) return {std::numeric_limits<double>::quiet_NaN(),
                         std::numeric_limits<double>::quiet_NaN()};
  double mean = 0.0;
  for (double x : v) mean += x;
  mean /= static_cast<double>(v.size());
  double var = 0.0;
  for (double x : v) var += (x - mean) * (x - mean);
  const double denom = v.size() > 1 ? static_cast<double>(v.size() - 1) : 1.0;
  return {mean, std::sqrt(var / denom)};
}

std::string csv_field(std::string s) {
  for (char& ch : s)
    if (ch == '\n' || ch == '\r') ch = ' ';
  if (s.find_first_of(",\"") == std::string::npos) return s;
  std::string out = "\"";
  for (char ch : s) {
    if (ch == '"') out += '"';
    out += ch;
  }
  return out + '"';
}

void write_text(const std::filesystem::path& path, const std::string& text,
                std::vector<std::filesystem::path>& files) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError(fmt::format("cannot open '{}' for writing", path.string()));
  out << text;
  if (!out) throw IoError(fmt::format("write to '{}' failed", path.string()));
  files.push_back(path);
}

}  // namespace

std::string summary_csv(const ExperimentConfig& cfg, const ExperimentResult& result) {
  std::string out = fmt::format(
      "# experiment '{}': FID and LPIPS are not computed; metrics are MSE, PSNR "
      "and relative distance to the closed-form posterior mean\n",
      cfg.name);
  out += kSummaryHeader;
  out += '\n';
  for (const auto& named : cfg.solvers) {
    std::vector<double> m, p, r, o;
    int failures = 0;
    bool has_oracle = false;
    const auto runs = result.runs_for(named.label);
    for (const auto* run : runs) {
      if (!run->ok) {
        ++failures;
        continue;
      }
      m.push_back(run->mse);
      p.push_back(run->psnr);
      r.push_back(run->residual);
      if (run->oracle_dist) {
        has_oracle = true;
        o.push_back(*run->oracle_dist);
      }
    }
    const auto [mm, ms] = mean_std(m);
    const auto [pm, ps] = mean_std(p);
    const auto [rm, rs] = mean_std(r);
    std::string oracle = ",";
    if (has_oracle) {
      const auto [om, os] = mean_std(o);
      oracle = num(om) + "," + num(os);
    }
    out += fmt::format("{},{},{},{},{},{},{},{},{},{},{}\n", to_string(named.config.solver),
                       csv_field(named.label), runs.size(), failures, num(mm), num(ms),
                       num(pm), num(ps), num(rm), num(rs), oracle);
  }
  return out;
}

std::string instances_csv(const ExperimentResult& result) {
  std::string out = kInstanceHeader;
  out += '\n';
  for (const auto& r : result.runs) {
    out += fmt::format("{},{},{},{},{},{},{},{},{}\n", csv_field(r.label), to_string(r.solver),
                       r.instance, r.ok ? "ok" : "failed", r.ok ? num(r.mse) : "",
                       r.ok ? num(r.psnr) : "", r.ok ? num(r.residual) : "",
                       r.oracle_dist ? num(*r.oracle_dist) : "", csv_field(r.error));
  }
  return out;
}

std::string trajectory_csv(const Trajectory& traj) {
  std::string out = kTrajectoryHeader;
  out += '\n';
  for (const auto& s : traj.steps) {
    out += fmt::format("{},{},{},{},{},{},{}\n", s.index, s.t, num(s.residual),
                       num(s.prompt_loss), s.projected ? 1 : 0, num(s.embedding_norm),
                       s.lr_retry ? 1 : 0);
  }
  return out;
}

void emit_images(const std::filesystem::path& dir, const std::string& stem,
                 const Vector& restoration, const Vector& measurement_display,
                 const Vector& truth, ImageShape shape) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw IoError(fmt::format("cannot create '{}': {}", dir.string(), ec.message()));
  const std::pair<const char*, const Vector*> items[] = {
      {"restoration", &restoration}, {"measurement", &measurement_display}, {"truth", &truth}};
  for (const auto& [name, img] : items) {
    write_pgm16(dir / fmt::format("{}_{}.pgm", stem, name), *img, shape);
    write_pfm(dir / fmt::format("{}_{}.pfm", stem, name), *img, shape);
  }
}

ExperimentReport run_experiment(const ExperimentConfig& cfg,
                                const std::filesystem::path& output_dir) {
  ExperimentReport report{evaluate_experiment(cfg), {}};
  std::error_code ec;
  std::filesystem::create_directories(output_dir / "trajectories", ec);
  if (ec) {
    throw IoError(fmt::format("cannot create '{}': {}", output_dir.string(), ec.message()));
  }
  write_text(output_dir / "summary.csv", summary_csv(cfg, report.result), report.files);
  write_text(output_dir / "instances.csv", instances_csv(report.result), report.files);
  for (const auto& r : report.result.runs) {
    if (!r.ok) continue;
    write_text(output_dir / "trajectories" / fmt::format("{}_{}.csv", r.label, r.instance),
               trajectory_csv(r.trajectory), report.files);
  }
  if (cfg.write_images) {
    const LinearOperator op = make_operator(cfg.op, cfg.dataset.shape);
    const double c = op.row_gram_scale().value_or(1.0);
    for (const auto& inst : report.result.instances) {
      for (const auto& r : report.result.runs) {
        if (!r.ok || r.instance != inst.index) continue;
        emit_images(output_dir / "images", fmt::format("{}_{}", r.label, inst.index),
                    r.trajectory.x0, op.adjoint(inst.y.y) / c, inst.x_true, cfg.dataset.shape);
      }
    }
  }
  return report;
}

}  // namespace p2l
