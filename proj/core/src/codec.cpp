// SPDX-License-Identifier: Apache-2.0
#include "p2l/codec.hpp"

#include "p2l/rng.hpp"

#include <fmt/format.h>

namespace p2l {

std::string_view to_string(CodecKind kind) {
  switch (kind) {
    case CodecKind::identity: return "identity";
    case CodecKind::linear_orthogonal: return "linear_orthogonal";
    case CodecKind::linear_perturbed: return "linear_perturbed";
    case CodecKind::mlp_tanh: return "mlp_tanh";
  }
  return "unknown";
}

CodecKind codec_kind_from_string(std::string_view name) {
  for (auto kind : {CodecKind::identity, CodecKind::linear_orthogonal,
                    CodecKind::linear_perturbed, CodecKind::mlp_tanh}) {
    if (to_string(kind) == name) return kind;
  }
  throw ParameterError(fmt::format("unknown codec kind '{}'", name));
}

LatentCodec::LatentCodec(CodecKind kind, double imperfection, DiffMap encoder,
                         DiffMap decoder, std::optional<Matrix> encoder_matrix,
                         std::optional<Matrix> decoder_matrix,
                         std::vector<double> weights)
    : kind_(kind),
      imperfection_(imperfection),
      encoder_(std::move(encoder)),
      decoder_(std::move(decoder)),
      encoder_matrix_(std::move(encoder_matrix)),
      decoder_matrix_(std::move(decoder_matrix)),
      weights_(std::move(weights)) {
  if (encoder_.output_size() != decoder_.input_size() ||
      decoder_.output_size() != encoder_.input_size()) {
    throw DimensionError("codec encoder/decoder shapes are inconsistent");
  }
}

Matrix random_orthonormal_rows(Index k, Index n, Seed seed) {
  Rng rng(seed);
  const Matrix g = standard_normal(n, k, rng);
  Eigen::HouseholderQR<Matrix> qr(g);
  Matrix q = qr.householderQ() * Matrix::Identity(n, k);
  // Fix column signs so the basis is a deterministic function of the draw.
  const Matrix r = qr.matrixQR().topRows(k).triangularView<Eigen::Upper>();
  for (Index j = 0; j < k; ++j)
    if (r(j, j) < 0.0) q.col(j) *= -1.0;
  return q.transpose();
}

namespace {

void append(std::vector<double>& out, const Matrix& m) {
  // Row-major order.
  for (Index i = 0; i < m.rows(); ++i)
    for (Index j = 0; j < m.cols(); ++j) out.push_back(m(i, j));
}

}  // namespace

LatentCodec make_codec(const CodecSpec& spec) {
  const Index n = spec.image_dim;
  const Index k = spec.latent_dim;
  if (k < 1 || k >= n) {
    throw ParameterError(fmt::format(
        "codec requires 1 <= k < n, got k={} n={}", k, n));
  }
  if (!(spec.imperfection >= 0.0)) {
    throw ParameterError("codec imperfection must be >= 0");
  }

  const Matrix e = random_orthonormal_rows(k, n, spec.seed);
  switch (spec.kind) {
    case CodecKind::linear_orthogonal: {
      Matrix d = e.transpose();
      std::vector<double> w;
      append(w, e);
      append(w, d);
      return LatentCodec(spec.kind, 0.0, linear_map(e, "encoder"),
                         linear_map(d, "decoder"), e, d, std::move(w));
    }
    case CodecKind::linear_perturbed: {
      Rng rng(derive_seed(spec.seed, 1));
      const Matrix r = standard_normal(n, k, rng);
      const double spectral =
          Eigen::JacobiSVD<Matrix>(r).singularValues()(0);
      Matrix d = e.transpose() + spec.imperfection * (r / spectral);
      std::vector<double> w;
      append(w, e);
      append(w, d);
      return LatentCodec(spec.kind, spec.imperfection, linear_map(e, "encoder"),
                         linear_map(d, "decoder"), e, d, std::move(w));
    }
    case CodecKind::mlp_tanh: {
      // Linear orthogonal backbone plus an imperfection-weighted tanh branch.
      const Index h = spec.hidden;
      if (h < 1) throw ParameterError("mlp_tanh codec needs hidden >= 1");
      Rng rng(derive_seed(spec.seed, 2));
      const double a = spec.imperfection;
      const Matrix ew1 = standard_normal(h, n, rng) / std::sqrt(double(n));
      const Matrix ew2 = a * standard_normal(k, h, rng) / std::sqrt(double(h));
      const Matrix dw1 = standard_normal(h, k, rng) / std::sqrt(double(k));
      const Matrix dw2 = a * standard_normal(n, h, rng) / std::sqrt(double(h));
      const Vector eb1 = 0.1 * standard_normal(h, rng);
      const Vector db1 = 0.1 * standard_normal(h, rng);
      DiffMap enc = sum_map(
          linear_map(e, "E0"),
          mlp_tanh_map(ew1, eb1, ew2, Vector::Zero(k), "encoder_branch"));
      DiffMap dec = sum_map(
          linear_map(e.transpose(), "D0"),
          mlp_tanh_map(dw1, db1, dw2, Vector::Zero(n), "decoder_branch"));
      std::vector<double> w;
      for (const Matrix* m : {&e, &ew1, &ew2, &dw1, &dw2}) append(w, *m);
      w.insert(w.end(), eb1.data(), eb1.data() + eb1.size());
      w.insert(w.end(), db1.data(), db1.data() + db1.size());
      return LatentCodec(spec.kind, a, std::move(enc), std::move(dec),
                         std::nullopt, std::nullopt, std::move(w));
    }
    case CodecKind::identity:
      break;
  }
  throw ParameterError("make_codec: use make_identity_codec for identity");
}

LatentCodec make_identity_codec(Index n) {
  const Matrix eye = Matrix::Identity(n, n);
  std::vector<double> w;
  return LatentCodec(CodecKind::identity, 0.0, identity_map(Shape::flat(n)),
                     identity_map(Shape::flat(n)), eye, eye, std::move(w));
}

std::vector<double> autoencode_iterate(const LatentCodec& codec,
                                       const Vector& x0, int iters) {
  if (iters < 1) throw ParameterError("autoencode_iterate: iters must be >= 1");
  std::vector<double> distances;
  distances.reserve(static_cast<std::size_t>(iters));
  Vector x = x0;
  for (int i = 0; i < iters; ++i) {
    Vector next = codec.decode(codec.encode(x));
    if (!next.allFinite()) {
      throw NumericError(
          fmt::format("autoencode_iterate: non-finite iterate at step {}", i));
    }
    distances.push_back((next - x).norm());
    x = std::move(next);
  }
  return distances;
}

}  // namespace p2l
