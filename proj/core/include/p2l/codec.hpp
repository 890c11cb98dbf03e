// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "p2l/common.hpp"
#include "p2l/diffmap.hpp"

#include <optional>
#include <string_view>

namespace p2l {

enum class CodecKind { identity, linear_orthogonal, linear_perturbed, mlp_tanh };

[[nodiscard]] std::string_view to_string(CodecKind kind);
[[nodiscard]] CodecKind codec_kind_from_string(std::string_view name);

struct CodecSpec {
  CodecKind kind = CodecKind::linear_orthogonal;
  Index image_dim = 256;
  Index latent_dim = 64;
  double imperfection = 0.0;
  int hidden = 32;  // mlp_tanh only
  Seed seed = 0;
};

/// Encoder/decoder pair E: R^n -> R^k, D: R^k -> R^n.
class LatentCodec {
 public:
  LatentCodec(CodecKind kind, double imperfection, DiffMap encoder,
              DiffMap decoder, std::optional<Matrix> encoder_matrix,
              std::optional<Matrix> decoder_matrix,
              std::vector<double> weights);

  [[nodiscard]] CodecKind kind() const { return kind_; }
  [[nodiscard]] double imperfection() const { return imperfection_; }
  [[nodiscard]] Index image_dim() const { return encoder_.input_size(); }
  [[nodiscard]] Index latent_dim() const { return encoder_.output_size(); }
  [[nodiscard]] const DiffMap& encoder() const { return encoder_; }
  [[nodiscard]] const DiffMap& decoder() const { return decoder_; }
  [[nodiscard]] bool is_linear() const { return encoder_matrix_.has_value(); }

  /// Dense E (k x n) and D (n x k) for linear codecs.
  [[nodiscard]] const std::optional<Matrix>& encoder_matrix() const {
    return encoder_matrix_;
  }
  [[nodiscard]] const std::optional<Matrix>& decoder_matrix() const {
    return decoder_matrix_;
  }

  [[nodiscard]] Vector encode(const Vector& x) const { return encoder_.apply(x); }
  [[nodiscard]] Vector decode(const Vector& z) const { return decoder_.apply(z); }

  /// All parameters in a fixed order, for the flat binary snapshot format.
  [[nodiscard]] const std::vector<double>& weights() const { return weights_; }

 private:
  CodecKind kind_;
  double imperfection_;
  DiffMap encoder_;
  DiffMap decoder_;
  std::optional<Matrix> encoder_matrix_;
  std::optional<Matrix> decoder_matrix_;
  std::vector<double> weights_;
};

/// Throws ParameterError unless 1 <= k < n and imperfection >= 0.
[[nodiscard]] LatentCodec make_codec(const CodecSpec& spec);

/// E = D = I on R^n.
[[nodiscard]] LatentCodec make_identity_codec(Index n);

/// Seeded k x n matrix with orthonormal rows.
[[nodiscard]] Matrix random_orthonormal_rows(Index k, Index n, Seed seed);

/// Iterates x <- D(E(x)) and returns ||x_{i+1} - x_i||_2 for each step.
[[nodiscard]] std::vector<double> autoencode_iterate(const LatentCodec& codec,
                                                     const Vector& x0,
                                                     int iters);

}  // namespace p2l
