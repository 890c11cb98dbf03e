// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "p2l/common.hpp"
#include "p2l/diffmap.hpp"

#include <optional>
#include <string>
#include <string_view>

namespace p2l {

enum class OperatorKind {
  identity,
  sr_avgpool,
  gaussian_blur,
  motion_blur,
  inpaint_random,
  inpaint_freeform,
};

[[nodiscard]] std::string_view to_string(OperatorKind kind);
[[nodiscard]] OperatorKind operator_kind_from_string(std::string_view name);

/// Row-major boolean grid; true marks an observed (kept) pixel.
struct Mask {
  ImageShape shape;
  std::vector<bool> keep;

  [[nodiscard]] Index kept() const;
  [[nodiscard]] double dropped_fraction() const;
};

/// Everything needed to build a degradation. Only the fields relevant to
/// `kind` are read.
struct OperatorSpec {
  OperatorKind kind = OperatorKind::identity;
  int factor = 2;                  // sr_avgpool
  int kernel_size = 9;             // blurs
  double blur_sigma = 1.5;         // gaussian_blur
  double motion_intensity = 0.5;   // motion_blur
  double drop_probability = 0.8;   // inpaint_random
  double freeform_min = 0.10;      // inpaint_freeform coverage range
  double freeform_max = 0.20;
  int stroke_width = 2;
  Seed seed = 0;
  std::optional<Matrix> kernel;    // overrides the generated blur kernel
  std::optional<Mask> mask;        // overrides the generated inpainting mask
};

/// A linear degradation A acting on flattened row-major images.
///
/// The adjoint is the vjp of the forward map; no separate transpose code
/// path exists outside the map itself.
class LinearOperator {
 public:
  LinearOperator(OperatorKind kind, ImageShape image, DiffMap map,
                 std::optional<Matrix> kernel, std::optional<Mask> mask,
                 int factor);

  [[nodiscard]] OperatorKind kind() const { return kind_; }
  [[nodiscard]] const ImageShape& image_shape() const { return image_; }
  [[nodiscard]] Index input_size() const { return map_.input_size(); }
  [[nodiscard]] Index output_size() const { return map_.output_size(); }
  [[nodiscard]] const DiffMap& map() const { return map_; }
  [[nodiscard]] const std::optional<Matrix>& kernel() const { return kernel_; }
  [[nodiscard]] const std::optional<Mask>& mask() const { return mask_; }
  [[nodiscard]] int factor() const { return factor_; }
  [[nodiscard]] std::string id() const;

  [[nodiscard]] Vector forward(const Vector& x) const { return map_.apply(x); }
  [[nodiscard]] Vector adjoint(const Vector& u) const { return map_.adjoint(u); }

  /// c such that A A^T = c I, when the rows are orthogonal with equal norm
  /// (identity and masks: 1, average pooling: 1/f^2). Empty for blurs.
  [[nodiscard]] std::optional<double> row_gram_scale() const;

 private:
  OperatorKind kind_;
  ImageShape image_;
  DiffMap map_;
  std::optional<Matrix> kernel_;
  std::optional<Mask> mask_;
  int factor_;
};

[[nodiscard]] LinearOperator make_operator(const OperatorSpec& spec,
                                           ImageShape image);

/// Same operator with an adjoint scaled by `factor`; used to check that the
/// adjoint certification catches a wrong transpose.
[[nodiscard]] LinearOperator with_scaled_adjoint(const LinearOperator& op,
                                                 double factor);

/// max over trials of |<Ax,u> - <x,A^T u>| / (|<Ax,u>| + eps).
[[nodiscard]] double dot_product_check(const LinearOperator& op, int trials,
                                       Seed seed);

struct Measurement {
  Vector y;
  double sigma_y = 0.0;
  std::string operator_id;
  Seed seed = 0;
};

/// y = y_clean + sigma_y * g with g ~ N(0, I) drawn from `seed`.
[[nodiscard]] Measurement add_noise(const Vector& y_clean, double sigma_y,
                                    Seed seed, std::string operator_id = {});

/// Normalized isotropic Gaussian kernel, size odd.
[[nodiscard]] Matrix make_gaussian_kernel(int size, double sigma);

/// Rasterized seeded random walk through the kernel centre. The walk starts
/// axis-aligned; its heading diffuses with a spread proportional to
/// `intensity`, so intensity 0 yields a straight centred segment.
[[nodiscard]] Matrix make_motion_kernel(int size, double intensity, Seed seed);

/// Independent Bernoulli(1-p) keep mask.
[[nodiscard]] Mask make_random_mask(ImageShape shape, double drop_probability,
                                    Seed seed);

/// Union of seeded thick strokes until the dropped fraction lands in
/// [min_coverage, max_coverage].
[[nodiscard]] Mask make_freeform_mask(ImageShape shape, double min_coverage,
                                      double max_coverage, int stroke_width,
                                      Seed seed);

/// Reflect-padded 2-D convolution (edge pixel not repeated).
[[nodiscard]] Vector convolve_reflect(const Vector& image, ImageShape shape,
                                      const Matrix& kernel);
/// Exact transpose of convolve_reflect.
[[nodiscard]] Vector convolve_reflect_transpose(const Vector& image,
                                                ImageShape shape,
                                                const Matrix& kernel);

}  // namespace p2l
