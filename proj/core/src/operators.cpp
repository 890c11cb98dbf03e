// SPDX-License-Identifier: Apache-2.0
#include "p2l/operators.hpp"

#include "p2l/rng.hpp"

#include <fmt/format.h>

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>

namespace p2l {

std::string_view to_string(OperatorKind kind) {
  switch (kind) {
    case OperatorKind::identity: return "identity";
    case OperatorKind::sr_avgpool: return "sr_avgpool";
    case OperatorKind::gaussian_blur: return "gaussian_blur";
    case OperatorKind::motion_blur: return "motion_blur";
    case OperatorKind::inpaint_random: return "inpaint_random";
    case OperatorKind::inpaint_freeform: return "inpaint_freeform";
  }
  return "unknown";
}

OperatorKind operator_kind_from_string(std::string_view name) {
  for (auto kind : {OperatorKind::identity, OperatorKind::sr_avgpool,
                    OperatorKind::gaussian_blur, OperatorKind::motion_blur,
                    OperatorKind::inpaint_random,
                    OperatorKind::inpaint_freeform}) {
    if (to_string(kind) == name) return kind;
  }
  throw ParameterError(fmt::format("unknown operator kind '{}'", name));
}

Index Mask::kept() const {
  return static_cast<Index>(std::count(keep.begin(), keep.end(), true));
}

double Mask::dropped_fraction() const {
  if (keep.empty()) return 0.0;
  return 1.0 - static_cast<double>(kept()) / static_cast<double>(keep.size());
}

namespace {

Index reflect(Index i, Index n) {
  if (n == 1) return 0;
  const Index period = 2 * (n - 1);
  i %= period;
  if (i < 0) i += period;
  return i < n ? i : period - i;
}

void validate_kernel(const Matrix& k) {
  if (k.rows() != k.cols() || k.rows() % 2 == 0) {
    throw ParameterError(fmt::format(
        "blur kernel must be square with odd size, got {}x{}", k.rows(),
        k.cols()));
  }
  if ((k.array() < 0.0).any()) {
    throw ParameterError("blur kernel must be nonnegative");
  }
  if (std::abs(k.sum() - 1.0) > 1e-9) {
    throw ParameterError(fmt::format("blur kernel must sum to 1, sums to {}",
                                     k.sum()));
  }
}

DiffMap blur_map(ImageShape shape, Matrix kernel, std::string name) {
  auto k = std::make_shared<const Matrix>(std::move(kernel));
  return DiffMap(
      std::move(name), shape.shape(), shape.shape(),
      [k, shape](const Vector& x) { return convolve_reflect(x, shape, *k); },
      [k, shape](const Vector&, const Vector& u) {
        return convolve_reflect_transpose(u, shape, *k);
      },
      true);
}

DiffMap avgpool_map(ImageShape shape, int f) {
  const ImageShape low{shape.height / f, shape.width / f};
  const double inv = 1.0 / (static_cast<double>(f) * f);
  return DiffMap(
      fmt::format("sr_avgpool(x{})", f), shape.shape(), low.shape(),
      [shape, low, f, inv](const Vector& x) {
        Vector y = Vector::Zero(low.size());
        for (Index i = 0; i < shape.height; ++i)
          for (Index j = 0; j < shape.width; ++j)
            y[(i / f) * low.width + j / f] += x[i * shape.width + j];
        return Vector(y * inv);
      },
      [shape, low, f, inv](const Vector&, const Vector& u) {
        Vector x(shape.size());
        for (Index i = 0; i < shape.height; ++i)
          for (Index j = 0; j < shape.width; ++j)
            x[i * shape.width + j] = u[(i / f) * low.width + j / f] * inv;
        return x;
      },
      true);
}

DiffMap mask_map(const Mask& mask, std::string name) {
  auto kept = std::make_shared<std::vector<Index>>();
  for (std::size_t i = 0; i < mask.keep.size(); ++i)
    if (mask.keep[i]) kept->push_back(static_cast<Index>(i));
  const Index n = mask.shape.size();
  std::shared_ptr<const std::vector<Index>> idx = kept;
  return DiffMap(
      std::move(name), mask.shape.shape(),
      Shape::flat(static_cast<Index>(idx->size())),
      [idx](const Vector& x) {
        Vector y(static_cast<Index>(idx->size()));
        for (std::size_t m = 0; m < idx->size(); ++m) y[m] = x[(*idx)[m]];
        return y;
      },
      [idx, n](const Vector&, const Vector& u) {
        Vector x = Vector::Zero(n);
        for (std::size_t m = 0; m < idx->size(); ++m) x[(*idx)[m]] = u[m];
        return x;
      },
      true);
}

}  // namespace

Vector convolve_reflect(const Vector& image, ImageShape shape,
                        const Matrix& kernel) {
  const Index r = kernel.rows() / 2;
  Vector out = Vector::Zero(shape.size());
  for (Index i = 0; i < shape.height; ++i) {
    for (Index j = 0; j < shape.width; ++j) {
      double acc = 0.0;
      for (Index a = 0; a < kernel.rows(); ++a) {
        const Index si = reflect(i - (a - r), shape.height);
        for (Index b = 0; b < kernel.cols(); ++b) {
          const Index sj = reflect(j - (b - r), shape.width);
          acc += kernel(a, b) * image[si * shape.width + sj];
        }
      }
      out[i * shape.width + j] = acc;
    }
  }
  return out;
}

Vector convolve_reflect_transpose(const Vector& image, ImageShape shape,
                                  const Matrix& kernel) {
  const Index r = kernel.rows() / 2;
  Vector out = Vector::Zero(shape.size());
  for (Index i = 0; i < shape.height; ++i) {
    for (Index j = 0; j < shape.width; ++j) {
      const double u = image[i * shape.width + j];
      for (Index a = 0; a < kernel.rows(); ++a) {
        const Index si = reflect(i - (a - r), shape.height);
        for (Index b = 0; b < kernel.cols(); ++b) {
          const Index sj = reflect(j - (b - r), shape.width);
          out[si * shape.width + sj] += kernel(a, b) * u;
        }
      }
    }
  }
  return out;
}

LinearOperator::LinearOperator(OperatorKind kind, ImageShape image, DiffMap map,
                               std::optional<Matrix> kernel,
                               std::optional<Mask> mask, int factor)
    : kind_(kind),
      image_(image),
      map_(std::move(map)),
      kernel_(std::move(kernel)),
      mask_(std::move(mask)),
      factor_(factor) {}

std::string LinearOperator::id() const {
  return fmt::format("{}[{}x{}->{}]", to_string(kind_), image_.height,
                     image_.width, output_size());
}

std::optional<double> LinearOperator::row_gram_scale() const {
  switch (kind_) {
    case OperatorKind::identity:
    case OperatorKind::inpaint_random:
    case OperatorKind::inpaint_freeform:
      return 1.0;
    case OperatorKind::sr_avgpool:
      return 1.0 / (static_cast<double>(factor_) * factor_);
    default:
      return std::nullopt;
  }
}

LinearOperator make_operator(const OperatorSpec& spec, ImageShape image) {
  if (image.height < 1 || image.width < 1) {
    throw ParameterError("operator image shape must be positive");
  }
  switch (spec.kind) {
    case OperatorKind::identity:
      return LinearOperator(spec.kind, image, identity_map(image.shape()),
                            std::nullopt, std::nullopt, 1);
    case OperatorKind::sr_avgpool: {
      const int f = spec.factor;
      if (f < 1 || image.height % f != 0 || image.width % f != 0) {
        throw ParameterError(fmt::format(
            "sr_avgpool: factor {} does not divide image {}x{}", f,
            image.height, image.width));
      }
      return LinearOperator(spec.kind, image, avgpool_map(image, f),
                            std::nullopt, std::nullopt, f);
    }
    case OperatorKind::gaussian_blur:
    case OperatorKind::motion_blur: {
      Matrix kernel;
      if (spec.kernel) {
        kernel = *spec.kernel;
      } else if (spec.kind == OperatorKind::gaussian_blur) {
        kernel = make_gaussian_kernel(spec.kernel_size, spec.blur_sigma);
      } else {
        kernel = make_motion_kernel(spec.kernel_size, spec.motion_intensity,
                                    spec.seed);
      }
      validate_kernel(kernel);
      DiffMap map = blur_map(image, kernel, std::string(to_string(spec.kind)));
      return LinearOperator(spec.kind, image, std::move(map), std::move(kernel),
                            std::nullopt, 1);
    }
    case OperatorKind::inpaint_random:
    case OperatorKind::inpaint_freeform: {
      Mask mask;
      if (spec.mask) {
        mask = *spec.mask;
        if (!(mask.shape == image) ||
            static_cast<Index>(mask.keep.size()) != image.size()) {
          throw DimensionError("inpainting mask does not match image shape");
        }
      } else if (spec.kind == OperatorKind::inpaint_random) {
        mask = make_random_mask(image, spec.drop_probability, spec.seed);
      } else {
        mask = make_freeform_mask(image, spec.freeform_min, spec.freeform_max,
                                  spec.stroke_width, spec.seed);
      }
      DiffMap map = mask_map(mask, std::string(to_string(spec.kind)));
      return LinearOperator(spec.kind, image, std::move(map), std::nullopt,
                            std::move(mask), 1);
    }
  }
  throw ParameterError("make_operator: unhandled kind");
}

LinearOperator with_scaled_adjoint(const LinearOperator& op, double factor) {
  const DiffMap base = op.map();
  DiffMap corrupted(
      base.name() + "(corrupted)", base.input_shape(), base.output_shape(),
      [base](const Vector& x) { return base.apply(x); },
      [base, factor](const Vector& x, const Vector& u) -> Vector {
        return factor * base.vjp(x, u);
      },
      true);
  return LinearOperator(op.kind(), op.image_shape(), std::move(corrupted),
                        op.kernel(), op.mask(), op.factor());
}

double dot_product_check(const LinearOperator& op, int trials, Seed seed) {
  return dot_test(op.map(), trials, seed);
}

Measurement add_noise(const Vector& y_clean, double sigma_y, Seed seed,
                      std::string operator_id) {
  if (!(sigma_y >= 0.0)) {
    throw ParameterError(fmt::format("add_noise: sigma_y must be >= 0, got {}",
                                     sigma_y));
  }
  Measurement m{y_clean, sigma_y, std::move(operator_id), seed};
  if (sigma_y > 0.0) {
    Rng rng(seed);
    m.y += sigma_y * standard_normal(y_clean.size(), rng);
  }
  if (!m.y.allFinite()) throw NumericError("add_noise: measurement not finite");
  return m;
}

Matrix make_gaussian_kernel(int size, double sigma) {
  if (size < 1 || size % 2 == 0) {
    throw ParameterError(fmt::format("gaussian kernel size must be odd, got {}",
                                     size));
  }
  if (!(sigma > 0.0)) throw ParameterError("gaussian kernel sigma must be > 0");
  const int r = size / 2;
  Matrix k(size, size);
  for (int a = 0; a < size; ++a)
    for (int b = 0; b < size; ++b) {
      const double di = a - r;
      const double dj = b - r;
      k(a, b) = std::exp(-(di * di + dj * dj) / (2.0 * sigma * sigma));
    }
  return k / k.sum();
}

Matrix make_motion_kernel(int size, double intensity, Seed seed) {
  if (size < 1 || size % 2 == 0) {
    throw ParameterError(fmt::format("motion kernel size must be odd, got {}",
                                     size));
  }
  if (!(intensity >= 0.0 && intensity <= 1.0)) {
    throw ParameterError("motion kernel intensity must lie in [0, 1]");
  }
  Matrix k = Matrix::Zero(size, size);
  const double centre = (size - 1) / 2.0;
  if (size == 1) {
    k(0, 0) = 1.0;
    return k;
  }

  Rng rng(seed);
  std::uniform_int_distribution<int> axis(0, 1);
  std::normal_distribution<double> gauss(0.0, 1.0);
  const double heading0 = axis(rng) == 0 ? 0.0 : std::numbers::pi / 2.0;

  constexpr double kSubstep = 0.25;
  constexpr double kHeadingSpread = 1.2;  // rad per sqrt(pixel) at intensity 1
  const int substeps = static_cast<int>(std::lround(centre / kSubstep));

  auto splat = [&](double row, double col) {
    row = std::clamp(row, 0.0, size - 1.0);
    col = std::clamp(col, 0.0, size - 1.0);
    const int r0 = static_cast<int>(std::floor(row));
    const int c0 = static_cast<int>(std::floor(col));
    const double fr = row - r0;
    const double fc = col - c0;
    const int r1 = std::min(r0 + 1, size - 1);
    const int c1 = std::min(c0 + 1, size - 1);
    k(r0, c0) += (1 - fr) * (1 - fc);
    k(r0, c1) += (1 - fr) * fc;
    k(r1, c0) += fr * (1 - fc);
    k(r1, c1) += fr * fc;
  };

  splat(centre, centre);
  // Two arms leaving the centre in opposite directions.
  for (int arm = 0; arm < 2; ++arm) {
    double heading = heading0 + (arm == 0 ? 0.0 : std::numbers::pi);
    double turn_rate = 0.0;
    double row = centre;
    double col = centre;
    for (int s = 0; s < substeps; ++s) {
      turn_rate += intensity * kHeadingSpread * std::sqrt(kSubstep) *
                   gauss(rng);
      heading += turn_rate * kSubstep;
      row += kSubstep * std::sin(heading);
      col += kSubstep * std::cos(heading);
      splat(row, col);
    }
  }
  return k / k.sum();
}

Mask make_random_mask(ImageShape shape, double drop_probability, Seed seed) {
  if (!(drop_probability >= 0.0 && drop_probability <= 1.0)) {
    throw ParameterError(fmt::format(
        "inpaint drop probability must lie in [0, 1], got {}",
        drop_probability));
  }
  Mask mask{shape, std::vector<bool>(static_cast<std::size_t>(shape.size()))};
  Rng rng(seed);
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  for (std::size_t i = 0; i < mask.keep.size(); ++i)
    mask.keep[i] = unif(rng) >= drop_probability;
  return mask;
}

Mask make_freeform_mask(ImageShape shape, double min_coverage,
                        double max_coverage, int stroke_width, Seed seed) {
  if (!(0.0 <= min_coverage && min_coverage <= max_coverage &&
        max_coverage <= 1.0)) {
    throw ParameterError("freeform coverage range must satisfy 0<=min<=max<=1");
  }
  if (stroke_width < 1) throw ParameterError("stroke width must be >= 1");

  const std::size_t n = static_cast<std::size_t>(shape.size());
  std::vector<bool> dropped(n, false);
  auto fraction = [&](const std::vector<bool>& d) {
    return static_cast<double>(std::count(d.begin(), d.end(), true)) /
           static_cast<double>(n);
  };

  Rng rng(seed);
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  const double radius = stroke_width / 2.0;
  const double extent = static_cast<double>(std::max(shape.height, shape.width));

  constexpr int kMaxAttempts = 10000;
  for (int attempt = 0; attempt < kMaxAttempts; ++attempt) {
    if (fraction(dropped) >= min_coverage) break;
    std::vector<bool> trial = dropped;
    const double r0 = unif(rng) * (shape.height - 1);
    const double c0 = unif(rng) * (shape.width - 1);
    const double angle = unif(rng) * 2.0 * std::numbers::pi;
    const double length = extent * (0.15 + 0.35 * unif(rng));
    const double r1 = r0 + length * std::sin(angle);
    const double c1 = c0 + length * std::cos(angle);
    for (Index i = 0; i < shape.height; ++i) {
      for (Index j = 0; j < shape.width; ++j) {
        // Distance from pixel centre to the segment.
        const double dr = r1 - r0;
        const double dc = c1 - c0;
        const double len2 = dr * dr + dc * dc;
        double s = len2 > 0.0 ? ((i - r0) * dr + (j - c0) * dc) / len2 : 0.0;
        s = std::clamp(s, 0.0, 1.0);
        const double pr = r0 + s * dr - i;
        const double pc = c0 + s * dc - j;
        if (pr * pr + pc * pc <= radius * radius)
          trial[static_cast<std::size_t>(i * shape.width + j)] = true;
      }
    }
    if (fraction(trial) <= max_coverage) dropped = std::move(trial);
  }
  const double covered = fraction(dropped);
  if (covered < min_coverage || covered > max_coverage) {
    throw ParameterError(fmt::format(
        "freeform mask: could not reach coverage in [{}, {}] (got {})",
        min_coverage, max_coverage, covered));
  }
  Mask mask{shape, std::vector<bool>(n)};
  for (std::size_t i = 0; i < n; ++i) mask.keep[i] = !dropped[i];
  return mask;
}

}  // namespace p2l
