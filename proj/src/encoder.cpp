#include "dml/encoder.hpp"

#include <string>

namespace dml {

namespace {

bool is_ascii_punct(unsigned char c) {
  return (c >= 0x21 && c <= 0x2F) || (c >= 0x3A && c <= 0x40) || (c >= 0x5B && c <= 0x60) ||
         (c >= 0x7B && c <= 0x7E);
}

/// Length in bytes of the whitespace code point starting at `s[i]`, or 0.
/// Covers the Unicode White_Space property.
std::size_t whitespace_len(std::string_view s, std::size_t i) {
  const auto b = [&](std::size_t k) { return static_cast<unsigned char>(s[k]); };
  const unsigned char c = b(i);
  if (c == ' ' || (c >= 0x09 && c <= 0x0D)) return 1;
  const std::size_t left = s.size() - i;
  if (c == 0xC2 && left >= 2 && (b(i + 1) == 0x85 || b(i + 1) == 0xA0)) return 2;
  if (c == 0xE1 && left >= 3 && b(i + 1) == 0x9A && b(i + 2) == 0x80) return 3;  // U+1680
  if (c == 0xE2 && left >= 3) {
    const unsigned char c1 = b(i + 1);
    const unsigned char c2 = b(i + 2);
    if (c1 == 0x80 && (c2 <= 0x8A || c2 == 0xA8 || c2 == 0xA9 || c2 == 0xAF)) return 3;
    if (c1 == 0x81 && c2 == 0x9F) return 3;  // U+205F
  }
  if (c == 0xE3 && left >= 3 && b(i + 1) == 0x80 && b(i + 2) == 0x80) return 3;  // U+3000
  return 0;
}

int bucket_of(std::string_view token, int buckets) {
  if (buckets <= 1) return 0;
  return 1 + static_cast<int>(fnv1a64(token) % static_cast<std::uint64_t>(buckets - 1));
}

}  // namespace

EncoderDims EncoderParams::dims() const {
  return {static_cast<int>(embedding_table.rows()), static_cast<int>(embedding_table.cols()),
          static_cast<int>(projection.cols()), static_cast<int>(classifier.cols())};
}

void EncoderParams::validate() const {
  const auto d = dims();
  if (d.vocab < 1 || d.embed < 1 || d.dim < 1 || d.classes < 1) {
    throw ConfigError("EncoderParams: every dimension must be >= 1");
  }
  if (projection.rows() != d.embed || projection_bias.size() != d.dim || classifier.rows() != d.dim ||
      classifier_bias.size() != d.classes) {
    throw DimensionError("EncoderParams: inconsistent block shapes");
  }
  if (!all_finite()) throw DivergenceError("EncoderParams: non-finite entry");
}

void EncoderParams::set_zero() {
  embedding_table.setZero();
  projection.setZero();
  projection_bias.setZero();
  classifier.setZero();
  classifier_bias.setZero();
}

EncoderParams EncoderParams::zeros(const EncoderDims& d) {
  EncoderParams p;
  p.embedding_table = Mat::Zero(d.vocab, d.embed);
  p.projection = Mat::Zero(d.embed, d.dim);
  p.projection_bias = Vec::Zero(d.dim);
  p.classifier = Mat::Zero(d.dim, d.classes);
  p.classifier_bias = Vec::Zero(d.classes);
  return p;
}

double EncoderParams::squared_norm() const {
  return embedding_table.squaredNorm() + projection.squaredNorm() + projection_bias.squaredNorm() +
         classifier.squaredNorm() + classifier_bias.squaredNorm();
}

bool EncoderParams::all_finite() const {
  return dml::all_finite(embedding_table) && dml::all_finite(projection) &&
         dml::all_finite(projection_bias) && dml::all_finite(classifier) &&
         dml::all_finite(classifier_bias);
}

EncoderParams init_encoder(const EncoderDims& dims, Rng& rng) {
  if (dims.vocab < 1 || dims.embed < 1 || dims.dim < 1 || dims.classes < 1) {
    throw ConfigError("init_encoder: every dimension must be >= 1");
  }
  auto p = EncoderParams::zeros(dims);
  auto fill = [&](auto& block) {
    for (Eigen::Index i = 0; i < block.size(); ++i) block.data()[i] = rng.normal(0.0, 0.1);
  };
  fill(p.embedding_table);
  fill(p.projection);
  fill(p.projection_bias);
  fill(p.classifier);
  fill(p.classifier_bias);
  return p;
}

std::uint64_t fnv1a64(std::string_view bytes) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

TokenizedText tokenize(std::string_view text, int buckets) {
  TokenizedText out;
  std::string token;
  auto flush = [&] {
    std::size_t begin = 0;
    std::size_t end = token.size();
    while (begin < end && is_ascii_punct(static_cast<unsigned char>(token[begin]))) ++begin;
    while (end > begin && is_ascii_punct(static_cast<unsigned char>(token[end - 1]))) --end;
    if (end > begin) out.bucket_ids.push_back(bucket_of(std::string_view(token).substr(begin, end - begin), buckets));
    token.clear();
  };
  std::size_t i = 0;
  while (i < text.size()) {
    if (const std::size_t ws = whitespace_len(text, i)) {
      flush();
      i += ws;
      continue;
    }
    char c = text[i];
    if (c >= 'A' && c <= 'Z') c = static_cast<char>(c - 'A' + 'a');
    token.push_back(c);
    ++i;
  }
  flush();
  if (out.bucket_ids.empty()) out.bucket_ids.push_back(0);
  return out;
}

Vec pool(const EncoderParams& params, const TokenizedText& tokens) {
  const auto vocab = params.embedding_table.rows();
  if (tokens.bucket_ids.empty()) throw DimensionError("pool: empty token sequence");
  Vec sum = Vec::Zero(params.embedding_table.cols());
  for (int id : tokens.bucket_ids) {
    if (id < 0 || id >= vocab) {
      throw DimensionError("pool: bucket " + std::to_string(id) + " outside vocabulary of " +
                           std::to_string(vocab));
    }
    sum += params.embedding_table.row(id).transpose();
  }
  return sum / static_cast<double>(tokens.bucket_ids.size());
}

Vec encode(const EncoderParams& params, const TokenizedText& tokens) {
  const Vec pooled = pool(params, tokens);
  return (params.projection.transpose() * pooled + params.projection_bias).array().tanh().matrix();
}

Vec classify_logits(const EncoderParams& params, const Vec& z) {
  if (z.size() != params.classifier.rows()) {
    throw DimensionError("classify_logits: z has length " + std::to_string(z.size()) + ", expected " +
                         std::to_string(params.classifier.rows()));
  }
  return params.classifier.transpose() * z + params.classifier_bias;
}

void encode_backward(const EncoderParams& params, const TokenizedText& tokens, const Vec& z,
                     const Vec& grad_z, EncoderParams& grads) {
  require_same_size(z, grad_z, "encode_backward");
  const Vec pooled = pool(params, tokens);
  const Vec grad_pre = grad_z.cwiseProduct((1.0 - z.array().square()).matrix());
  grads.projection.noalias() += pooled * grad_pre.transpose();
  grads.projection_bias += grad_pre;
  const Vec grad_pooled = params.projection * grad_pre / static_cast<double>(tokens.bucket_ids.size());
  for (int id : tokens.bucket_ids) grads.embedding_table.row(id) += grad_pooled.transpose();
}

Vec classify_backward(const EncoderParams& params, const Vec& z, const Vec& grad_logits,
                      EncoderParams& grads) {
  require_same_size(params.classifier_bias, grad_logits, "classify_backward");
  grads.classifier.noalias() += z * grad_logits.transpose();
  grads.classifier_bias += grad_logits;
  return params.classifier * grad_logits;
}

Mat encode_all(const EncoderParams& params, std::span<const TokenizedText> texts) {
  Mat z(static_cast<Eigen::Index>(texts.size()), params.projection.cols());
  for (std::size_t i = 0; i < texts.size(); ++i) {
    z.row(static_cast<Eigen::Index>(i)) = encode(params, texts[i]).transpose();
  }
  return z;
}

Mat logits_all(const EncoderParams& params, const Mat& z) {
  if (z.cols() != params.classifier.rows()) throw DimensionError("logits_all: z width mismatch");
  return (z * params.classifier).rowwise() + params.classifier_bias.transpose();
}

}  // namespace dml
