// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "p2l/common.hpp"

#include <functional>
#include <memory>
#include <string>

namespace p2l {

/// A differentiable map R^a -> R^b carrying its own vector-Jacobian product.
///
/// Instances are immutable and cheap to copy (the callables are shared).
/// `vjp(x, u)` returns J(x)^T u. For maps flagged linear the point is ignored
/// and the vjp is the adjoint, which is how operator transposes are obtained.
class DiffMap {
 public:
  using ForwardFn = std::function<Vector(const Vector&)>;
  using VjpFn = std::function<Vector(const Vector& x, const Vector& u)>;

  DiffMap(std::string name, Shape input, Shape output, ForwardFn forward,
          VjpFn vjp, bool linear = false);

  [[nodiscard]] const std::string& name() const { return impl_->name; }
  [[nodiscard]] const Shape& input_shape() const { return impl_->input; }
  [[nodiscard]] const Shape& output_shape() const { return impl_->output; }
  [[nodiscard]] Index input_size() const { return impl_->input.size(); }
  [[nodiscard]] Index output_size() const { return impl_->output.size(); }
  [[nodiscard]] bool is_linear() const { return impl_->linear; }

  /// forward(x); throws DimensionError when x does not conform.
  [[nodiscard]] Vector apply(const Vector& x) const;
  [[nodiscard]] Vector operator()(const Vector& x) const { return apply(x); }

  /// J(x)^T u.
  [[nodiscard]] Vector vjp(const Vector& x, const Vector& u) const;

  /// Transpose of a linear map applied to u.
  [[nodiscard]] Vector adjoint(const Vector& u) const;

 private:
  struct Impl {
    std::string name;
    Shape input;
    Shape output;
    ForwardFn forward;
    VjpFn vjp;
    bool linear;
  };
  std::shared_ptr<const Impl> impl_;
};

/// outer ∘ inner, with the chain rule for the vjp.
[[nodiscard]] DiffMap compose(const DiffMap& outer, const DiffMap& inner);

[[nodiscard]] DiffMap identity_map(const Shape& shape);
[[nodiscard]] DiffMap scale_map(const Shape& shape, double factor);
[[nodiscard]] DiffMap linear_map(Matrix m, std::string name = "linear");
[[nodiscard]] DiffMap affine_map(Matrix m, Vector offset,
                                 std::string name = "affine");
[[nodiscard]] DiffMap tanh_map(const Shape& shape);

/// x -> W2 tanh(W1 x + b1) + b2.
[[nodiscard]] DiffMap mlp_tanh_map(Matrix w1, Vector b1, Matrix w2, Vector b2,
                                   std::string name = "mlp_tanh");

/// Sum of two maps on the same domain and codomain.
[[nodiscard]] DiffMap sum_map(const DiffMap& a, const DiffMap& b);

/// Densifies a linear map column by column (forward of unit vectors).
[[nodiscard]] Matrix materialize(const DiffMap& linear);

struct VjpReport {
  double max_rel_err = 0.0;
  bool pass = false;
};

/// Central-difference certification of a vjp.
///
/// For each trial draws a unit cotangent u and unit direction d and compares
/// <u, (f(x+hd) - f(x-hd)) / 2h> with <vjp(x,u), d>.
[[nodiscard]] VjpReport check_vjp(const DiffMap& map, const Vector& x,
                                  int trials, double step, double tol,
                                  Seed seed = 0);

/// Max relative violation of <f(x),u> = <x, vjp(u)> over random pairs.
/// Only meaningful for linear maps.
[[nodiscard]] double dot_test(const DiffMap& map, int trials, Seed seed);

}  // namespace p2l
