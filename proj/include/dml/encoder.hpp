#pragma once

#include <cstdint>
#include <span>
#include <string_view>
#include <vector>

#include "dml/numeric.hpp"
#include "dml/rng.hpp"

namespace dml {

struct EncoderDims {
  int vocab = 4096;   // V hash buckets, bucket 0 reserved for blank text
  int embed = 32;     // d_emb
  int dim = 16;       // d, size of the representation z
  int classes = 2;    // C
};

/// Parameters of the reference encoder and its dense classifier head:
///   z      = tanh(projectionᵀ · mean(embedding_table[tokens]) + projection_bias)
///   logits = classifierᵀ · z + classifier_bias
/// The same struct doubles as a gradient accumulator.
struct EncoderParams {
  Mat embedding_table;   // V x d_emb
  Mat projection;        // d_emb x d
  Vec projection_bias;   // d
  Mat classifier;        // d x C
  Vec classifier_bias;   // C

  EncoderDims dims() const;
  void validate() const;
  void set_zero();
  static EncoderParams zeros(const EncoderDims& dims);
  /// Global L2 norm over every block.
  double squared_norm() const;
  bool all_finite() const;
};

/// Gaussian(0, 0.1) in every block.
EncoderParams init_encoder(const EncoderDims& dims, Rng& rng);

struct TokenizedText {
  std::vector<int> bucket_ids;
};

std::uint64_t fnv1a64(std::string_view bytes);

/// Lowercases ASCII letters, splits on Unicode whitespace, strips leading and
/// trailing ASCII punctuation from each token and hashes the remainder with
/// FNV-1a 64 into buckets [1, V). Text without tokens maps to [0].
TokenizedText tokenize(std::string_view text, int buckets);

/// Mean of the embedding rows of the tokens.
Vec pool(const EncoderParams& params, const TokenizedText& tokens);
Vec encode(const EncoderParams& params, const TokenizedText& tokens);
Vec classify_logits(const EncoderParams& params, const Vec& z);

/// Accumulates into `grads` the parameter gradient of a loss whose gradient
/// w.r.t. z = encode(params, tokens) is `grad_z`.
void encode_backward(const EncoderParams& params, const TokenizedText& tokens, const Vec& z,
                     const Vec& grad_z, EncoderParams& grads);

/// Accumulates the classifier-head gradient for `grad_logits` and returns the
/// gradient w.r.t. z.
Vec classify_backward(const EncoderParams& params, const Vec& z, const Vec& grad_logits,
                      EncoderParams& grads);

/// One z per row.
Mat encode_all(const EncoderParams& params, std::span<const TokenizedText> texts);
/// One logit vector per row of `z`.
Mat logits_all(const EncoderParams& params, const Mat& z);

}  // namespace dml
