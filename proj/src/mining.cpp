#include "dml/losses.hpp"

#include <algorithm>

namespace dml {

namespace {

/// Keeps a uniformly random subset of `cap` elements, preserving input order.
template <typename T>
void subsample(std::vector<T>& xs, int cap, Rng& rng) {
  if (cap < 0 || xs.size() <= static_cast<std::size_t>(cap)) return;
  std::vector<std::size_t> order(xs.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  rng.shuffle(order);
  order.resize(static_cast<std::size_t>(cap));
  std::sort(order.begin(), order.end());
  std::vector<T> kept;
  kept.reserve(order.size());
  for (std::size_t i : order) kept.push_back(xs[i]);
  xs = std::move(kept);
}

}  // namespace

std::vector<TripletSpec> mine_triplets(std::span<const int> labels, double margin, int cap, Rng& rng) {
  std::vector<TripletSpec> out;
  const int n = static_cast<int>(labels.size());
  for (int a = 0; a < n; ++a) {
    for (int p = 0; p < n; ++p) {
      if (p == a || labels[p] != labels[a]) continue;
      for (int neg = 0; neg < n; ++neg) {
        if (labels[neg] != labels[a]) out.push_back({a, p, neg, margin});
      }
    }
  }
  subsample(out, cap, rng);
  return out;
}

std::vector<PairSpec> mine_pairs(std::span<const int> labels, int cap, Rng& rng) {
  std::vector<PairSpec> out;
  const int n = static_cast<int>(labels.size());
  std::vector<int> partners;
  for (int a = 0; a < n; ++a) {
    partners.clear();
    for (int p = 0; p < n; ++p) {
      if (p != a && labels[p] == labels[a]) partners.push_back(p);
    }
    if (partners.empty()) continue;
    out.push_back({a, partners[rng.uniform_index(partners.size())]});
  }
  subsample(out, cap, rng);
  return out;
}

LossOutput dml_loss(const LossConfig& config, const EmbeddingBatch& batch, const ProxyBank* proxies,
                    Rng& mining) {
  config.validate();
  auto zero = [&] {
    LossOutput out;
    out.grad_embeddings = Mat::Zero(batch.size(), batch.dim());
    if (proxies) out.grad_proxies = Mat::Zero(proxies->rows(), proxies->dim());
    return out;
  };
  auto need_bank = [&]() -> const ProxyBank& {
    if (!proxies) throw ConfigError(std::string(display_name(config.kind)) + " needs a proxy bank");
    return *proxies;
  };

  switch (config.kind) {
    case LossKind::CCE:
      throw ConfigError("dml_loss: CCE is not a DML loss");
    case LossKind::Triplet: {
      const auto triplets = mine_triplets(batch.labels, config.margin, config.mining_cap, mining);
      if (triplets.empty()) return zero();
      return triplet_loss(batch, triplets);
    }
    case LossKind::NPairs: {
      const auto pairs = mine_pairs(batch.labels, config.mining_cap, mining);
      if (pairs.empty()) return zero();
      return npairs_loss(batch, pairs);
    }
    case LossKind::SupCon: {
      const auto present = present_classes(batch.labels);
      if (present.size() == batch.labels.size()) return zero();
      return supcon_loss(batch, config.temperature);
    }
    case LossKind::ProxyNCA:
      return proxynca_loss(batch, need_bank(), config.softmax_scale, config.normalize);
    case LossKind::SoftTriple:
      return softtriple_loss(batch, need_bank(),
                             {config.st_lambda, config.st_gamma, config.st_delta}, config.normalize);
    case LossKind::ProxyAnchor:
      return proxyanchor_loss(batch, need_bank(), config.pa_alpha, config.pa_delta);
  }
  throw ConfigError("dml_loss: unhandled loss kind");
}

}  // namespace dml
