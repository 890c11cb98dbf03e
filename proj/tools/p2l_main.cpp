// SPDX-License-Identifier: Apache-2.0
// p2l: run experiments, property checks and kernel previews.

#include "p2l/checks.hpp"
#include "p2l/config.hpp"
#include "p2l/experiment.hpp"
#include "p2l/image_io.hpp"
#include "p2l/operators.hpp"

#include <CLI11.hpp>
#include <fmt/format.h>

#include <cstdlib>
#include <filesystem>
#include <map>
#include <string>

namespace {

constexpr const char* kOutputEnv = "P2L_OUTPUT_DIR";

int cmd_run(const std::string& config_path, const std::string& out_flag) {
  const p2l::ExperimentConfig cfg = p2l::load_experiment_config(config_path);
  std::filesystem::path out = cfg.output_dir;
  if (const char* env = std::getenv(kOutputEnv); env && *env) out = env;
  if (!out_flag.empty()) out = out_flag;

  const auto report = p2l::run_experiment(cfg, out);
  for (const auto& r : report.result.runs) {
    if (!r.ok) fmt::print(stderr, "{} instance {} failed: {}\n", r.label, r.instance, r.error);
  }
  fmt::print("{}", p2l::summary_csv(cfg, report.result));
  fmt::print("wrote {} files under {}\n", report.files.size(), out.string());
  return report.result.all_failed() ? 2 : 0;
}

int cmd_check(std::uint64_t seed) {
  int failures = 0;
  for (const auto& c : p2l::run_property_checks(seed)) {
    fmt::print("{:<40} {:>12.4e}  (limit {:.1e})  {}\n", c.name, c.value, c.threshold,
               c.pass ? "PASS" : "FAIL");
    failures += c.pass ? 0 : 1;
  }
  fmt::print("{} check(s) failed\n", failures);
  return failures == 0 ? 0 : 1;
}

// "kind[:key=value,...]", e.g. "motion_blur:size=31,intensity=0.5,seed=3".
p2l::OperatorSpec parse_kernel_spec(const std::string& text, p2l::ImageShape& shape) {
  const auto colon = text.find(':');
  p2l::OperatorSpec spec;
  spec.kind = p2l::operator_kind_from_string(text.substr(0, colon));
  std::map<std::string, std::string> kv;
  if (colon != std::string::npos) {
    std::string rest = text.substr(colon + 1);
    std::size_t pos = 0;
    while (pos <= rest.size()) {
      const auto comma = rest.find(',', pos);
      const std::string item = rest.substr(pos, comma - pos);
      const auto eq = item.find('=');
      if (eq == std::string::npos) throw p2l::ParameterError(fmt::format("bad kernel option '{}'", item));
      kv[item.substr(0, eq)] = item.substr(eq + 1);
      if (comma == std::string::npos) break;
      pos = comma + 1;
    }
  }
  for (const auto& [key, value] : kv) {
    if (key == "size") spec.kernel_size = std::stoi(value);
    else if (key == "sigma") spec.blur_sigma = std::stod(value);
    else if (key == "intensity") spec.motion_intensity = std::stod(value);
    else if (key == "p") spec.drop_probability = std::stod(value);
    else if (key == "seed") spec.seed = std::stoull(value);
    else if (key == "width") shape.width = std::stol(value);
    else if (key == "height") shape.height = std::stol(value);
    else if (key == "stroke") spec.stroke_width = std::stoi(value);
    else throw p2l::ParameterError(fmt::format("unknown kernel option '{}'", key));
  }
  return spec;
}

int cmd_kernel(const std::string& text, const std::string& out_path) {
  p2l::ImageShape shape{64, 64};
  const p2l::OperatorSpec spec = parse_kernel_spec(text, shape);
  p2l::Vector pixels;
  p2l::ImageShape img;
  switch (spec.kind) {
    case p2l::OperatorKind::gaussian_blur:
    case p2l::OperatorKind::motion_blur: {
      const p2l::Matrix k = spec.kind == p2l::OperatorKind::gaussian_blur
                                ? p2l::make_gaussian_kernel(spec.kernel_size, spec.blur_sigma)
                                : p2l::make_motion_kernel(spec.kernel_size, spec.motion_intensity, spec.seed);
      img = {k.rows(), k.cols()};
      pixels.resize(k.size());
      for (p2l::Index r = 0; r < k.rows(); ++r)
        for (p2l::Index c = 0; c < k.cols(); ++c) pixels[r * k.cols() + c] = k(r, c);
      pixels /= pixels.maxCoeff();
      break;
    }
    case p2l::OperatorKind::inpaint_random:
    case p2l::OperatorKind::inpaint_freeform: {
      const p2l::LinearOperator op = p2l::make_operator(spec, shape);
      img = shape;
      pixels.resize(shape.size());
      for (p2l::Index i = 0; i < shape.size(); ++i) pixels[i] = op.mask()->keep[static_cast<std::size_t>(i)] ? 1.0 : 0.0;
      break;
    }
    default:
      throw p2l::ParameterError(fmt::format("operator '{}' has no kernel or mask",
                                            p2l::to_string(spec.kind)));
  }
  p2l::write_pgm16(out_path, pixels, img);
  fmt::print("wrote {}x{} image to {}\n", img.height, img.width, out_path);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"p2l latent-diffusion inverse problem toolkit"};
  app.require_subcommand(1);

  std::string config_path;
  std::string out_flag;
  auto* run = app.add_subcommand("run", "Run an experiment described by a JSON config");
  run->add_option("config", config_path, "Experiment config")->required()->check(CLI::ExistingFile);
  run->add_option("-o,--output", out_flag,
                  fmt::format("Output directory (overrides {} and the config)", kOutputEnv));

  std::uint64_t check_seed = 0;
  auto* check = app.add_subcommand("check", "Run adjoint, gradient, CG and fixed-point checks");
  check->add_option("--seed", check_seed, "Seed for the random instances");

  std::string kernel_spec;
  std::string kernel_out = "kernel.pgm";
  auto* kernel = app.add_subcommand("kernel", "Write a blur kernel or inpainting mask as a PGM");
  kernel->add_option("spec", kernel_spec, "kind[:key=value,...]")->required();
  kernel->add_option("-o,--output", kernel_out, "Output PGM path");

  CLI11_PARSE(app, argc, argv);
  try {
    if (*run) return cmd_run(config_path, out_flag);
    if (*check) return cmd_check(check_seed);
    if (*kernel) return cmd_kernel(kernel_spec, kernel_out);
  } catch (const std::exception& e) {
    fmt::print(stderr, "error: {}\n", e.what());
    return 1;
  }
  return 0;
}
