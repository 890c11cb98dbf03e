// SPDX-License-Identifier: Apache-2.0
// Acceptance suite: one PASS/FAIL line per criterion, nonzero exit on any FAIL.
#include "p2l/checks.hpp"
#include "p2l/config.hpp"
#include "p2l/experiment.hpp"
#include "p2l/oracle.hpp"
#include "p2l/proximal.hpp"
#include "p2l/solvers.hpp"

#include <fmt/format.h>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <functional>
#include <memory>
#include <sstream>
#include <string>
#include <vector>

namespace {

using namespace p2l;
namespace fs = std::filesystem;

struct Verdict {
  bool pass = false;
  std::string detail;
};

struct Criterion {
  int id;
  const char* title;
  double budget_s;  // 0: no runtime bound
  std::function<Verdict()> run;
};

double mean_of(const std::vector<double>& v) {
  double s = 0.0;
  for (double x : v) s += x;
  return v.empty() ? std::nan("") : s / static_cast<double>(v.size());
}

ExperimentConfig load(const char* name) {
  return load_experiment_config(fs::path(P2L_CONFIG_DIR) / name);
}

// Per-instance metric of one labelled solver; failed runs count as +inf.
std::vector<double> metric(const ExperimentResult& r, const std::string& label,
                           double InstanceResult::*field) {
  std::vector<double> out;
  for (const auto* run : r.runs_for(label))
    out.push_back(run->ok ? run->*field : std::numeric_limits<double>::infinity());
  return out;
}

std::vector<double> oracle_dists(const ExperimentResult& r, const std::string& label) {
  std::vector<double> out;
  for (const auto* run : r.runs_for(label))
    out.push_back(run->ok && run->oracle_dist ? *run->oracle_dist
                                              : std::numeric_limits<double>::infinity());
  return out;
}

Verdict from_checks(const std::vector<CheckResult>& all, const std::string& prefix) {
  Verdict v{true, ""};
  double worst = 0.0;
  int n = 0;
  for (const auto& c : all) {
    if (c.name.rfind(prefix, 0) != 0) continue;
    ++n;
    if (!c.pass) {
      v.pass = false;
      v.detail += fmt::format(" {}={:.3g}", c.name, c.value);
    }
    if (c.name.find("corrupted") == std::string::npos) worst = std::max(worst, c.value);
  }
  if (v.pass) v.detail = fmt::format("{} checks, worst {:.3g}", n, worst);
  return v;
}

// ---- 1-3, 8: property checks -------------------------------------------

Verdict c1() {
  return from_checks(run_property_checks(0), "dot/");
}

Verdict c2() {
  const auto all = run_property_checks(0);
  Verdict a = from_checks(all, "vjp/");
  Verdict b = from_checks(all, "grad/");
  return {a.pass && b.pass, "vjp: " + a.detail + "; chain: " + b.detail};
}

Verdict c3() {
  Verdict v = from_checks(run_property_checks(0), "prox/");
  double anchor_err = 0.0;
  double meas_err = 0.0;
  for (auto kind : {OperatorKind::identity, OperatorKind::sr_avgpool, OperatorKind::gaussian_blur,
                    OperatorKind::motion_blur, OperatorKind::inpaint_random,
                    OperatorKind::inpaint_freeform}) {
    OperatorSpec s;
    s.kind = kind;
    s.kernel_size = 5;
    s.seed = 2;
    const LinearOperator op = make_operator(s, {8, 8});
    Rng rng(derive_seed(7, static_cast<std::uint64_t>(kind)));
    const Vector anchor = standard_normal(64, rng);
    const Vector y = standard_normal(op.output_size(), rng);
    const Vector big = prox_gamma(op, y, anchor, {1e6, 100, 1e-14});
    anchor_err = std::max(anchor_err, (big - anchor).norm() / anchor.norm());
    if (op.mask()) {
      const Vector small = prox_gamma(op, y, anchor, {1e-6, 100, 1e-14});
      meas_err = std::max(meas_err, (op.forward(small) - y).norm() / y.norm());
    }
  }
  const bool ok = v.pass && anchor_err <= 1e-4 && meas_err <= 1e-4;
  return {ok, fmt::format("dense: {}; lambda=1e6 anchor {:.2e}; lambda=1e-6 mask residual {:.2e}",
                          v.detail, anchor_err, meas_err)};
}

Verdict c8() {
  return from_checks(run_property_checks(0), "fixed_point/");
}

// ---- 4: exact posterior recovery -------------------------------------------

Verdict c4() {
  ExperimentConfig cfg = load("gaussian_sr.json");
  // Identity measurement: at sigma_y = 0.01 the posterior is concentrated
  // enough that its mean is a meaningful target for a single sample.
  cfg.op = OperatorSpec{};
  cfg.write_images = false;
  const ExperimentResult r = evaluate_experiment(cfg);
  const auto p = oracle_dists(r, "p2l");
  const auto l = oracle_dists(r, "ldps");
  const double pmax = *std::max_element(p.begin(), p.end());
  const double lmax = *std::max_element(l.begin(), l.end());
  return {pmax <= 0.10 && lmax <= 0.15,
          fmt::format("p2l max {:.4f} (mean {:.4f}) <= 0.10; ldps max {:.4f} (mean {:.4f}) <= 0.15",
                      pmax, mean_of(p), lmax, mean_of(l))};
}

// ---- 5: prompt tuning ------------------------------------------------------

Verdict c5() {
  ExperimentConfig cfg = load("gmm_prompt.json");
  cfg.prior.tag_scale = 30.0;
  for (auto& s : cfg.solvers) {
    s.config.rho.c = 0.5;
    s.config.gamma_proj = 3;
    s.config.prox.lambda = 0.1;
  }
  const ExperimentResult r = evaluate_experiment(cfg);
  const auto k0 = metric(r, "k0", &InstanceResult::residual);
  const auto k3 = metric(r, "k3", &InstanceResult::residual);
  int no_worse = 0;
  for (std::size_t i = 0; i < k0.size(); ++i) no_worse += k3[i] <= k0[i];
  const double frac = double(no_worse) / double(k0.size());
  const double m0 = mean_of(k0);
  const double m3 = mean_of(k3);
  return {m3 < m0 && frac >= 0.8,
          fmt::format("residual mean K=3 {:.6f} vs K=0 {:.6f}; no worse in {}/{} seeds ({:.0f}%, need 80%)",
                      m3, m0, no_worse, k0.size(), 100 * frac)};
}

// ---- 6: projection ablation -------------------------------------------------

std::pair<double, double> ablation(OperatorSpec op, double rho, int gamma, double lambda) {
  ExperimentConfig cfg = load("ablation_inpaint.json");
  cfg.op = op;
  for (auto& s : cfg.solvers) {
    s.config.rho.c = rho;
    s.config.prompt_iters = 0;
    s.config.prox.lambda = lambda;
    if (s.label == "p2l_proj") s.config.gamma_proj = gamma;
  }
  const ExperimentResult r = evaluate_experiment(cfg);
  return {mean_of(metric(r, "p2l_proj", &InstanceResult::mse)),
          mean_of(metric(r, "p2l_noproj", &InstanceResult::mse))};
}

Verdict c6() {
  OperatorSpec inpaint;
  inpaint.kind = OperatorKind::inpaint_random;
  inpaint.drop_probability = 0.8;
  inpaint.seed = 6;
  OperatorSpec sr;
  sr.kind = OperatorKind::sr_avgpool;
  sr.factor = 2;
  const auto [ip, in] = ablation(inpaint, 0.5, 3, 0.1);
  const auto [sp, sn] = ablation(sr, 1.0, 4, 1.0);
  return {ip <= in && sp <= sn,
          fmt::format("inpaint mse proj {:.5f} vs none {:.5f}; sr x2 proj {:.5f} vs none {:.5f}",
                      ip, in, sp, sn)};
}

// ---- 7: choice of the measurement-consistency map -----------------------------

Verdict c7() {
  ExperimentConfig cfg = load("ablation_inpaint.json");
  cfg.sigma_y = 0.05;
  cfg.solvers.resize(1);
  SolverConfig base = cfg.solvers[0].config;
  base.rho.c = 0.5;
  base.gamma_proj = 3;
  base.prox.lambda = 0.1;
  base.prompt_iters = 0;
  SolverConfig glue = base;
  glue.gamma = GammaKind::glue;
  cfg.solvers = {{"prox", base}, {"glue", glue}};
  const ExperimentResult r = evaluate_experiment(cfg);
  const double mp = mean_of(metric(r, "prox", &InstanceResult::mse));
  const double mg = mean_of(metric(r, "glue", &InstanceResult::mse));

  // Noiseless limit: the noise-matched prox weight vanishes, so both maps must
  // reproduce y on the observed pixels for any anchor.
  ExperimentConfig clean = cfg;
  clean.sigma_y = 0.0;
  const ExperimentSetup setup = build_setup(clean);
  double worst = 0.0;
  for (int i = 0; i < clean.dataset.n_instances; ++i) {
    const Instance inst = make_instance(clean, setup, i);
    Rng rng(derive_seed(99, static_cast<std::uint64_t>(i)));
    const Vector anchor = setup.codec.decode(standard_normal(setup.codec.latent_dim(), rng));
    const Vector xp = prox_gamma(setup.op, inst.y.y, anchor, {1e-8, 100, 1e-15});
    const Vector xg = glue_gamma(setup.op, inst.y.y, anchor);
    worst = std::max(worst, (setup.op.forward(xp) - setup.op.forward(xg)).lpNorm<Eigen::Infinity>());
  }
  return {mp <= mg && worst <= 1e-6,
          fmt::format("sigma 0.05 mse prox {:.5f} vs glue {:.5f}; sigma 0 observed-pixel gap {:.2e}",
                      mp, mg, worst)};
}

// ---- 9: single-step scalar baselines ----------------------------------------

struct Scalar {
  std::shared_ptr<const NoiseSchedule> sched =
      std::make_shared<const NoiseSchedule>(make_vp_schedule(1000, 1e-4, 2e-2));
  double m = 0.4, v = 1.7;     // prior N(m, v)
  double d = 1.3, e = 0.6;     // decoder and encoder gains
  double y = 0.9;
  double z = -0.35;
  int t = 420, tp = 380;
  double ab() const { return sched->abar(t); }
  double abp() const { return sched->abar(tp); }
  double eps() const {
    const double a = ab();
    return std::sqrt(1 - a) * (z - std::sqrt(a) * m) / (a * v + 1 - a);
  }
  double z0() const { return (z - std::sqrt(1 - ab()) * eps()) / std::sqrt(ab()); }
  double dz0_dz() const {
    const double a = ab();
    return (1 - (1 - a) / (a * v + 1 - a)) / std::sqrt(a);
  }
  double ddim(double z0v, double epsv) const {
    return std::sqrt(abp()) * z0v + std::sqrt(1 - abp()) * epsv;
  }
};

double sgn(double x) { return (x > 0) - (x < 0); }

Verdict c9() {
  const Scalar s;
  const ScoreModel prior =
      make_gaussian_model(s.sched, Vector::Constant(1, s.m), Vector::Constant(1, s.v));
  const LinearOperator op = make_operator(OperatorSpec{}, {1, 1});
  const LatentCodec codec(CodecKind::linear_perturbed, 0.0,
                          scale_map(Shape::flat(1), s.e), scale_map(Shape::flat(1), s.d),
                          Matrix::Constant(1, 1, s.e), Matrix::Constant(1, 1, s.d), {});
  const Vector y = Vector::Constant(1, s.y);
  const double sigma = 0.1;
  InverseProblem prob{prior, codec, op, y, sigma, &prior};

  auto step = [&](SolverConfig c) {
    c.eta = 0.0;
    BaselineState st{Vector::Constant(1, s.z), HistoryGradient(1, c.adam)};
    Rng rng(0);
    (void)baseline_step(prob, c, st, s.t, s.tp, rng);
    return st.z[0];
  };
  std::vector<std::pair<std::string, double>> errs;
  const double z0 = s.z0();
  const double r = s.d * z0 - s.y;
  const double g_lik = sgn(r) * s.d * s.dz0_dz();
  const double zprime = s.ddim(z0, s.eps());

  SolverConfig ldps = default_config(SolverKind::ldps);
  ldps.rho.c = 0.7;
  errs.emplace_back("ldps", std::abs(step(ldps) - (zprime - 0.7 * g_lik)));

  SolverConfig gml = default_config(SolverKind::gml_dps);
  gml.rho.c = 0.7;
  gml.lambda_fix = 0.0;
  errs.emplace_back("gml_dps/off", std::abs(step(gml) - (zprime - 0.7 * g_lik)));
  gml.lambda_fix = 0.25;
  const double q = z0 - s.e * s.d * z0;
  const double g_fix = sgn(q) * (1 - s.e * s.d) * s.dz0_dz();
  errs.emplace_back("gml_dps/on", std::abs(step(gml) - (zprime - 0.7 * (g_lik + 0.25 * g_fix))));

  // Identity A: the PSLD target collapses to y, so the penalty is |z0 - E y|.
  SolverConfig psld = default_config(SolverKind::psld);
  psld.rho.c = 0.7;
  psld.lambda_fix = 0.25;
  const double g_psld = sgn(z0 - s.e * s.y) * s.dz0_dz();
  errs.emplace_back("psld", std::abs(step(psld) - (zprime - 0.7 * (g_lik + 0.25 * g_psld))));

  SolverConfig ldir = default_config(SolverKind::ldir);
  const double sign_like = g_lik / (std::abs(g_lik) + ldir.adam.eps);
  errs.emplace_back("ldir", std::abs(step(ldir) - (zprime - ldir.rho.c * sign_like)));

  // Image-space solvers see x directly (decoder = identity).
  const double x0 = z0;
  SolverConfig pir = default_config(SolverKind::diffpir);
  pir.diffpir.zeta = 0.0;
  const double w = pir.diffpir.lambda * sigma * sigma * s.ab() / (1 - s.ab());
  const double pir_data = (s.y + w * x0) / (1 + w);
  errs.emplace_back("diffpir", std::abs(step(pir) - s.ddim(pir_data, s.eps())));

  SolverConfig dds = default_config(SolverKind::dds);
  dds.dds_gamma = 0.8;
  const double dds_data = (s.y + 0.8 * x0) / 1.8;
  errs.emplace_back("dds", std::abs(step(dds) - s.ddim(dds_data, s.eps())));

  Verdict v{true, ""};
  for (const auto& [name, err] : errs) {
    v.pass &= err <= 1e-12;
    v.detail += fmt::format("{} {:.1e}; ", name, err);
  }
  v.detail.resize(v.detail.size() - 2);
  return v;
}

// ---- 10: patched aggregation ---------------------------------------------------

Verdict c10() {
  auto sched = std::make_shared<const NoiseSchedule>(make_vp_schedule(1000, 1e-4, 2e-2));
  const ScoreModel iso = make_gaussian_model(sched, Vector::Constant(16, 0.3), Vector::Ones(16));
  const Vector c = Vector::Zero(8);
  const ImageShape grid{10, 10};
  const Vector field = Vector::Constant(100, 0.7);
  const double expected = iso.epsilon(Vector::Constant(16, 0.7), 250, c)[0];
  double const_err = 0.0;
  for (auto w : {PatchWeighting::uniform, PatchWeighting::gaussian}) {
    const PatchedResult r = patched_epsilon(iso, field, grid, 250, c, {4, 2, w, 0.05});
    const_err = std::max(const_err, (r.eps.array() - expected).abs().maxCoeff());
  }

  Rng rng(5);
  const Matrix u = random_orthonormal_rows(16, 16, 3).transpose();
  const ScoreModel corr = make_gaussian_model(sched, standard_normal(16, rng),
                                              Vector::LinSpaced(16, 0.05, 3.0), u);
  const Vector z = standard_normal(16, rng);
  const Vector single = patched_epsilon(corr, z, {4, 4}, 250, c, {4, 1}).eps;
  const bool exact = single == corr.epsilon(z, 250, c);

  const PatchedResult counts = patched_epsilon(corr, standard_normal(64, rng), {8, 8}, 250, c, {4, 2});
  bool interior_four = true;
  for (Index i = 2; i < 6; ++i)
    for (Index j = 2; j < 6; ++j) interior_four &= counts.weight[i * 8 + j] == 4.0;

  return {const_err <= 1e-10 && exact && interior_four,
          fmt::format("constant field {:.1e}; single window {}; interior count 4 {}", const_err,
                      exact ? "exact" : "differs", interior_four ? "yes" : "no")};
}

// ---- 11: determinism ------------------------------------------------------------

Verdict c11() {
  ExperimentConfig cfg = load("gaussian_sr.json");
  cfg.write_images = true;
  const fs::path root = fs::temp_directory_path() / "p2l_acceptance_determinism";
  fs::remove_all(root);
  const ExperimentReport a = run_experiment(cfg, root / "a");
  const ExperimentReport b = run_experiment(cfg, root / "b");
  auto slurp = [](const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
  };
  int csv = 0;
  int differ = 0;
  for (const auto& f : a.files) {
    if (f.extension() != ".csv") continue;
    ++csv;
    differ += slurp(f) != slurp(root / "b" / fs::relative(f, root / "a"));
  }
  const bool same_count = a.files.size() == b.files.size();
  fs::remove_all(root);
  return {same_count && differ == 0 && csv > 0,
          fmt::format("{} csv files compared, {} differ", csv, differ)};
}

}  // namespace

int main() {
  const std::vector<Criterion> criteria = {
      {1, "adjoint certification", 5, c1},
      {2, "gradient correctness", 10, c2},
      {3, "cg/prox oracle", 5, c3},
      {4, "exact-posterior recovery", 120, c4},
      {5, "prompt-tuning benefit", 180, c5},
      {6, "projection ablation", 180, c6},
      {7, "measurement-consistency map choice", 120, c7},
      {8, "fixed-point analysis", 5, c8},
      {9, "baseline single-step fidelity", 0, c9},
      {10, "patched aggregation", 0, c10},
      {11, "determinism", 0, c11},
  };
  int failures = 0;
  for (const auto& c : criteria) {
    const auto start = std::chrono::steady_clock::now();
    Verdict v;
    try {
      v = c.run();
    } catch (const std::exception& e) {
      v = {false, fmt::format("exception: {}", e.what())};
    }
    const double secs =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    std::string timing = fmt::format("{:.2f}s", secs);
    if (c.budget_s > 0) {
      timing += fmt::format(" (budget {:.0f}s)", c.budget_s);
      if (secs > c.budget_s) {
        v.pass = false;
        timing += " over budget";
      }
    }
    failures += !v.pass;
    fmt::print("{} {:>2} {}: {} [{}]\n", v.pass ? "PASS" : "FAIL", c.id, c.title, v.detail, timing);
    std::fflush(stdout);
  }
  fmt::print("{}/{} criteria passed\n", criteria.size() - failures, criteria.size());
  return failures == 0 ? 0 : 1;
}
