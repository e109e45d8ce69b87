#pragma once

#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "dml/numeric.hpp"
#include "dml/proxy_bank.hpp"
#include "dml/rng.hpp"

namespace dml {

/// L pooled representations (one row each) with aligned class labels.
struct EmbeddingBatch {
  Mat embeddings;
  std::vector<int> labels;

  Eigen::Index size() const { return embeddings.rows(); }
  Eigen::Index dim() const { return embeddings.cols(); }
  /// Throws unless L >= 1, d >= 1, labels are aligned and non-negative and
  /// every entry is finite.
  void validate() const;
};

struct TripletSpec {
  int anchor = 0;
  int positive = 0;
  int negative = 0;
  double margin = 1.0;
};

/// One anchor/positive pair for the N-pairs loss. Negatives are every batch
/// row whose label differs from the anchor's.
struct PairSpec {
  int anchor = 0;
  int positive = 0;
};

/// Scalar loss with gradients w.r.t. the embeddings (or logits, for CCE) and,
/// for proxy losses, the proxy bank.
struct LossOutput {
  double value = 0;
  Mat grad_embeddings;
  std::optional<Mat> grad_proxies;
};

enum class LossKind { CCE, Triplet, NPairs, SupCon, ProxyNCA, SoftTriple, ProxyAnchor };

std::string_view to_string(LossKind kind);
/// Accepts the lower-case CLI names ("cce", "triplet", ..., "proxyanchor").
LossKind parse_loss_kind(std::string_view name);
/// Display name as used in report rows ("Triplet", "ProxyAnchor", ...).
std::string_view display_name(LossKind kind);
bool is_proxy_based(LossKind kind);

/// Hyperparameters for every loss. Only the fields of the selected kind are read.
struct LossConfig {
  LossKind kind = LossKind::CCE;
  double margin = 1.0;             // Triplet m
  double temperature = 0.1;        // SupCon tau
  double softmax_scale = 1.0;      // ProxyNCA
  double st_lambda = 3.3;          // SoftTriple scale
  double st_gamma = 0.1;           // SoftTriple softmax temperature
  double st_delta = 0.1;           // SoftTriple margin
  int st_proxies = 5;              // SoftTriple K
  double pa_alpha = 32.0;          // ProxyAnchor scale
  double pa_delta = 0.1;           // ProxyAnchor margin
  double beta = 0.5;               // CCE weight in the combined objective
  /// L2-normalize embeddings and proxies before ProxyNCA distances and
  /// SoftTriple inner products. ProxyAnchor is cosine-based regardless.
  bool normalize = true;
  /// Train on the DML term alone, without the cross-entropy head.
  bool dml_only = false;
  /// Cap on mined triplets / pairs per batch.
  int mining_cap = 512;

  /// Proxies per class for the bank this configuration needs (0 when none).
  int proxies_per_class() const;
  /// Proxies are kept on the unit sphere after every optimizer step.
  bool renormalizes_proxies() const { return is_proxy_based(kind); }
  void validate() const;
};

/// Cross-entropy of row-stochastic `probs` (N x C). The gradient is taken
/// w.r.t. the pre-softmax logits: (probs - onehot) / N.
LossOutput cce_loss(const Mat& probs, std::span<const int> labels);

/// Sum over triplets of [‖a−p‖² − ‖a−n‖² + m]₊.
LossOutput triplet_loss(const EmbeddingBatch& batch, std::span<const TripletSpec> triplets);

/// N-pairs loss with dot-product similarity, averaged over the anchors in `pairs`.
LossOutput npairs_loss(const EmbeddingBatch& batch, std::span<const PairSpec> pairs);

/// Supervised contrastive loss summed over anchors. Anchors without a
/// positive contribute nothing.
LossOutput supcon_loss(const EmbeddingBatch& batch, double temperature);

/// ProxyNCA with Euclidean distance; the positive proxy is excluded from the
/// denominator, so the value can be negative.
LossOutput proxynca_loss(const EmbeddingBatch& batch, const ProxyBank& proxies, double scale,
                         bool normalize = true);

struct SoftTripleParams {
  double lambda = 3.3;
  double gamma = 0.1;
  double delta = 0.1;
};

/// SoftTriple over K proxies per class with softmax-weighted relaxed similarity.
LossOutput softtriple_loss(const EmbeddingBatch& batch, const ProxyBank& proxies,
                           const SoftTripleParams& params, bool normalize = true);

/// Proxy-Anchor loss with cosine similarity.
LossOutput proxyanchor_loss(const EmbeddingBatch& batch, const ProxyBank& proxies, double alpha,
                            double delta);

/// beta * cce + (1 - beta) * dml, entry by entry. A missing proxy gradient
/// counts as zero.
LossOutput combined_loss(const LossOutput& cce, const LossOutput& dml, double beta);

/// All valid (anchor, positive, negative) triplets of `labels`, uniformly
/// subsampled without replacement when there are more than `cap`.
std::vector<TripletSpec> mine_triplets(std::span<const int> labels, double margin, int cap, Rng& rng);

/// One positive per anchor for every row that has a same-class partner. The
/// positive is drawn uniformly among the partners; anchors are subsampled
/// down to `cap`.
std::vector<PairSpec> mine_pairs(std::span<const int> labels, int cap, Rng& rng);

/// Evaluates the DML term selected by `config`. Triplet/N-pairs structures are
/// mined with `mining`. A batch with no usable structure (no triplet, no pair,
/// no SupCon positive) yields a zero loss with zero gradient.
LossOutput dml_loss(const LossConfig& config, const EmbeddingBatch& batch, const ProxyBank* proxies,
                    Rng& mining);

}  // namespace dml
