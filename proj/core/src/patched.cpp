// SPDX-License-Identifier: Apache-2.0
#include "p2l/solvers.hpp"

#include <fmt/format.h>

#include <cmath>

namespace p2l {

namespace {

std::vector<Index> window_starts(Index extent, Index patch, Index stride) {
  std::vector<Index> starts;
  for (Index s = 0; s + patch < extent; s += stride) starts.push_back(s);
  starts.push_back(extent - patch);
  return starts;
}

Vector axis_weights(Index patch, PatchWeighting weighting, double variance) {
  Vector w = Vector::Ones(patch);
  if (weighting == PatchWeighting::gaussian) {
    for (Index i = 0; i < patch; ++i) {
      const double u = (static_cast<double>(i) + 0.5) / static_cast<double>(patch) - 0.5;
      w(i) = std::exp(-u * u / (2.0 * variance));
    }
  }
  return w;
}

}  // namespace

PatchedResult patched_epsilon(const ScoreModel& model, const Vector& z_t,
                              ImageShape grid, int t, const Vector& c,
                              const PatchOptions& opts) {
  const Index p = opts.patch;
  if (p < 1 || opts.stride < 1) {
    throw ParameterError("patched_epsilon: patch and stride must be >= 1");
  }
  if (opts.stride > p) {
    throw ParameterError(fmt::format(
        "patched_epsilon: stride {} exceeds patch {}; pixels would be skipped",
        opts.stride, p));
  }
  if (!(opts.variance > 0.0)) {
    throw ParameterError("patched_epsilon: variance must be > 0");
  }
  if (model.dim() != p * p) {
    throw DimensionError(fmt::format("patched_epsilon: model size {} is not {}x{}",
                                     model.dim(), p, p));
  }
  if (grid.height < p || grid.width < p) {
    throw DimensionError("patched_epsilon: grid smaller than one patch");
  }
  if (z_t.size() != grid.height * grid.width) {
    throw DimensionError("patched_epsilon: latent does not match grid");
  }

  const Vector aw = axis_weights(p, opts.weighting, opts.variance);
  PatchedResult out{Vector::Zero(z_t.size()), Vector::Zero(z_t.size())};
  Vector patch(p * p);
  for (Index r0 : window_starts(grid.height, p, opts.stride)) {
    for (Index c0 : window_starts(grid.width, p, opts.stride)) {
      for (Index i = 0; i < p; ++i)
        for (Index j = 0; j < p; ++j)
          patch(i * p + j) = z_t((r0 + i) * grid.width + c0 + j);
      const Vector eps = model.epsilon(patch, t, c);
      for (Index i = 0; i < p; ++i) {
        for (Index j = 0; j < p; ++j) {
          const Index k = (r0 + i) * grid.width + c0 + j;
          const double w = aw(i) * aw(j);
          out.eps(k) += w * eps(i * p + j);
          out.weight(k) += w;
        }
      }
    }
  }
  out.eps = out.eps.cwiseQuotient(out.weight);
  return out;
}

}  // namespace p2l
