// SPDX-License-Identifier: Apache-2.0
#include "p2l/config.hpp"

#include <fmt/format.h>

#include <json.hpp>

#include <fstream>
#include <initializer_list>
#include <sstream>

namespace p2l {

namespace {

using Json = nlohmann::json;

void require_keys(const Json& j, std::string_view section,
                  std::initializer_list<std::string_view> allowed) {
  if (!j.is_object()) throw ParameterError(fmt::format("config: '{}' must be an object", section));
  for (const auto& item : j.items()) {
    bool known = false;
    for (auto key : allowed) known = known || key == item.key();
    if (!known) {
      throw ParameterError(fmt::format("config: unknown key '{}' in '{}'", item.key(), section));
    }
  }
}

template <typename T>
void read(const Json& j, const char* key, T& out) {
  if (!j.contains(key)) return;
  try {
    out = j.at(key).get<T>();
  } catch (const Json::exception& e) {
    throw ParameterError(fmt::format("config: bad value for '{}': {}", key, e.what()));
  }
}

ScoreModelKind score_kind_from_string(std::string_view name) {
  for (auto kind : {ScoreModelKind::gaussian_analytic, ScoreModelKind::gmm_conditional,
                    ScoreModelKind::learned_toy}) {
    if (to_string(kind) == name) return kind;
  }
  throw ParameterError(fmt::format("config: unknown prior kind '{}'", name));
}

Matrix read_matrix(const Json& j, const char* what) {
  if (!j.is_array() || j.empty() || !j.front().is_array()) {
    throw ParameterError(fmt::format("config: '{}' must be a 2-D array", what));
  }
  const auto rows = static_cast<Index>(j.size());
  const auto cols = static_cast<Index>(j.front().size());
  Matrix m(rows, cols);
  for (Index r = 0; r < rows; ++r) {
    const Json& row = j[static_cast<std::size_t>(r)];
    if (!row.is_array() || static_cast<Index>(row.size()) != cols) {
      throw ParameterError(fmt::format("config: '{}' rows differ in length", what));
    }
    for (Index c = 0; c < cols; ++c) m(r, c) = row[static_cast<std::size_t>(c)].get<double>();
  }
  return m;
}

OperatorSpec parse_operator(const Json& j) {
  require_keys(j, "operator", {"kind", "factor", "kernel_size", "blur_sigma",
                               "motion_intensity", "drop_probability", "freeform_min",
                               "freeform_max", "stroke_width", "seed", "kernel", "mask"});
  OperatorSpec s;
  std::string kind = std::string(to_string(s.kind));
  read(j, "kind", kind);
  s.kind = operator_kind_from_string(kind);
  read(j, "factor", s.factor);
  read(j, "kernel_size", s.kernel_size);
  read(j, "blur_sigma", s.blur_sigma);
  read(j, "motion_intensity", s.motion_intensity);
  read(j, "drop_probability", s.drop_probability);
  read(j, "freeform_min", s.freeform_min);
  read(j, "freeform_max", s.freeform_max);
  read(j, "stroke_width", s.stroke_width);
  read(j, "seed", s.seed);
  if (j.contains("kernel")) s.kernel = read_matrix(j.at("kernel"), "kernel");
  if (j.contains("mask")) {
    const Matrix m = read_matrix(j.at("mask"), "mask");
    Mask mask{{m.rows(), m.cols()}, {}};
    for (Index r = 0; r < m.rows(); ++r)
      for (Index c = 0; c < m.cols(); ++c) mask.keep.push_back(m(r, c) != 0.0);
    s.mask = std::move(mask);
  }
  return s;
}

CodecSpec parse_codec(const Json& j) {
  require_keys(j, "codec", {"kind", "latent_dim", "imperfection", "hidden", "seed"});
  CodecSpec s;
  std::string kind = std::string(to_string(s.kind));
  read(j, "kind", kind);
  s.kind = codec_kind_from_string(kind);
  read(j, "latent_dim", s.latent_dim);
  read(j, "imperfection", s.imperfection);
  read(j, "hidden", s.hidden);
  read(j, "seed", s.seed);
  return s;
}

PriorSpec parse_prior(const Json& j) {
  require_keys(j, "prior", {"kind", "components", "separation", "variance", "mean_offset",
                            "embedding_dim", "tag_scale", "pixel_floor_variance",
                            "schedule", "toy", "toy_samples", "seed"});
  PriorSpec s;
  std::string kind = std::string(to_string(s.kind));
  read(j, "kind", kind);
  s.kind = score_kind_from_string(kind);
  read(j, "components", s.components);
  read(j, "separation", s.separation);
  read(j, "variance", s.variance);
  read(j, "mean_offset", s.mean_offset);
  read(j, "embedding_dim", s.embedding_dim);
  read(j, "tag_scale", s.tag_scale);
  read(j, "pixel_floor_variance", s.pixel_floor_variance);
  read(j, "toy_samples", s.toy_samples);
  read(j, "seed", s.seed);
  if (j.contains("schedule")) {
    const Json& sj = j.at("schedule");
    require_keys(sj, "prior.schedule", {"T", "beta_min", "beta_max"});
    read(sj, "T", s.schedule.T);
    read(sj, "beta_min", s.schedule.beta_min);
    read(sj, "beta_max", s.schedule.beta_max);
  }
  if (j.contains("toy")) {
    const Json& tj = j.at("toy");
    require_keys(tj, "prior.toy", {"hidden", "epochs", "batch_size", "learning_rate"});
    read(tj, "hidden", s.toy.hidden);
    read(tj, "epochs", s.toy.epochs);
    read(tj, "batch_size", s.toy.batch_size);
    read(tj, "learning_rate", s.toy.learning_rate);
  }
  s.toy.embedding_dim = s.embedding_dim;
  return s;
}

NamedSolver parse_solver(const Json& j) {
  require_keys(j, "solvers[]",
               {"label", "solver", "nfe", "eta", "rho", "rho_rule", "grad_type", "adam",
                "gamma_proj", "gamma", "prox", "renoise_projected", "prompt_iters",
                "prompt_lr", "use_conditional_mean", "rho_shift", "persist_prompt_moments",
                "prompt_retry", "lambda_fix", "dds_gamma", "dds_cg_iters", "diffpir"});
  if (!j.contains("solver")) throw ParameterError("config: solver entry needs 'solver'");
  const auto kind = solver_kind_from_string(j.at("solver").get<std::string>());
  NamedSolver out{std::string(to_string(kind)), default_config(kind)};
  SolverConfig& c = out.config;
  read(j, "label", out.label);
  read(j, "nfe", c.nfe);
  read(j, "eta", c.eta);
  read(j, "rho", c.rho.c);
  if (j.contains("rho_rule")) {
    const auto rule = j.at("rho_rule").get<std::string>();
    if (rule == "constant") {
      c.rho.kind = StepRule::Kind::constant;
    } else if (rule == "alpha_bar_scaled") {
      c.rho.kind = StepRule::Kind::alpha_bar_scaled;
    } else {
      throw ParameterError(fmt::format("config: unknown rho_rule '{}'", rule));
    }
  }
  if (j.contains("grad_type")) {
    const auto g = j.at("grad_type").get<std::string>();
    if (g != "gd" && g != "adam") throw ParameterError(fmt::format("config: unknown grad_type '{}'", g));
    c.grad_type = g == "gd" ? GradType::gd : GradType::adam;
  }
  if (j.contains("adam")) {
    const Json& a = j.at("adam");
    require_keys(a, "adam", {"beta1", "beta2", "eps"});
    read(a, "beta1", c.adam.beta1);
    read(a, "beta2", c.adam.beta2);
    read(a, "eps", c.adam.eps);
  }
  read(j, "gamma_proj", c.gamma_proj);
  if (j.contains("gamma")) {
    const auto g = j.at("gamma").get<std::string>();
    if (g != "prox" && g != "glue") throw ParameterError(fmt::format("config: unknown gamma '{}'", g));
    c.gamma = g == "prox" ? GammaKind::prox : GammaKind::glue;
  }
  if (j.contains("prox")) {
    const Json& p = j.at("prox");
    require_keys(p, "prox", {"lambda", "cg_iters", "cg_tol"});
    read(p, "lambda", c.prox.lambda);
    read(p, "cg_iters", c.prox.cg_iters);
    read(p, "cg_tol", c.prox.cg_tol);
  }
  read(j, "renoise_projected", c.renoise_projected);
  read(j, "prompt_iters", c.prompt_iters);
  read(j, "prompt_lr", c.prompt_lr);
  read(j, "use_conditional_mean", c.use_conditional_mean);
  read(j, "rho_shift", c.rho_shift);
  read(j, "persist_prompt_moments", c.persist_prompt_moments);
  read(j, "prompt_retry", c.prompt_retry);
  read(j, "lambda_fix", c.lambda_fix);
  read(j, "dds_gamma", c.dds_gamma);
  read(j, "dds_cg_iters", c.dds_cg_iters);
  if (j.contains("diffpir")) {
    const Json& d = j.at("diffpir");
    require_keys(d, "diffpir", {"zeta", "lambda"});
    read(d, "zeta", c.diffpir.zeta);
    read(d, "lambda", c.diffpir.lambda);
  }
  c.validate();
  return out;
}

}  // namespace

void ExperimentConfig::validate() const {
  if (dataset.n_instances < 1) throw ParameterError("config: n_instances must be >= 1");
  if (dataset.shape.height < 1 || dataset.shape.width < 1) {
    throw ParameterError("config: image shape must be positive");
  }
  if (solvers.empty()) throw ParameterError("config: at least one solver is required");
  if (!(sigma_y >= 0.0)) throw ParameterError("config: sigma_y must be >= 0");
  if (!(psnr_peak >= 0.0)) throw ParameterError("config: psnr_peak must be >= 0");
  if (prior.components < 1) throw ParameterError("config: prior needs >= 1 component");
  if (!(prior.variance > 0.0)) throw ParameterError("config: prior variance must be > 0");
  if (!(prior.pixel_floor_variance > 0.0)) {
    throw ParameterError("config: pixel_floor_variance must be > 0");
  }
  if (prior.embedding_dim < 1) throw ParameterError("config: embedding_dim must be >= 1");
  for (std::size_t i = 0; i < solvers.size(); ++i) {
    for (std::size_t j = 0; j < i; ++j) {
      if (solvers[i].label == solvers[j].label) {
        throw ParameterError(fmt::format("config: duplicate solver label '{}'", solvers[i].label));
      }
    }
    solvers[i].config.validate();
  }
}

ExperimentConfig parse_experiment_config(const std::string& text) {
  Json root;
  try {
    root = Json::parse(text);
  } catch (const Json::parse_error& e) {
    throw ParameterError(fmt::format("config: invalid JSON: {}", e.what()));
  }
  require_keys(root, "root", {"name", "seed", "sigma_y", "psnr_peak", "output_dir",
                              "write_images", "dataset", "operator", "codec", "prior",
                              "solvers"});
  ExperimentConfig cfg;
  read(root, "name", cfg.name);
  read(root, "seed", cfg.seed);
  read(root, "sigma_y", cfg.sigma_y);
  read(root, "psnr_peak", cfg.psnr_peak);
  read(root, "write_images", cfg.write_images);
  if (root.contains("output_dir")) cfg.output_dir = root.at("output_dir").get<std::string>();
  if (root.contains("dataset")) {
    const Json& d = root.at("dataset");
    require_keys(d, "dataset", {"n_instances", "height", "width", "seed"});
    read(d, "n_instances", cfg.dataset.n_instances);
    read(d, "height", cfg.dataset.shape.height);
    read(d, "width", cfg.dataset.shape.width);
    read(d, "seed", cfg.dataset.seed);
  }
  if (root.contains("operator")) cfg.op = parse_operator(root.at("operator"));
  if (root.contains("codec")) cfg.codec = parse_codec(root.at("codec"));
  if (root.contains("prior")) cfg.prior = parse_prior(root.at("prior"));
  if (root.contains("solvers")) {
    const Json& list = root.at("solvers");
    if (!list.is_array()) throw ParameterError("config: 'solvers' must be an array");
    for (const Json& s : list) cfg.solvers.push_back(parse_solver(s));
  }
  cfg.codec.image_dim = cfg.dataset.shape.size();
  cfg.validate();
  return cfg;
}

ExperimentConfig load_experiment_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError(fmt::format("cannot open config '{}'", path.string()));
  std::stringstream buf;
  buf << in.rdbuf();
  return parse_experiment_config(buf.str());
}

}  // namespace p2l
