#include "dml/losses.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <string>

namespace dml {

namespace {

constexpr double kProbFloor = 1e-12;

struct KindName {
  LossKind kind;
  std::string_view cli;
  std::string_view display;
};

constexpr std::array<KindName, 7> kKindNames{{
    {LossKind::CCE, "cce", "CCE"},
    {LossKind::Triplet, "triplet", "Triplet"},
    {LossKind::NPairs, "npairs", "NPairs"},
    {LossKind::SupCon, "supcon", "SupCon"},
    {LossKind::ProxyNCA, "proxynca", "ProxyNCA"},
    {LossKind::SoftTriple, "softtriple", "SoftTriple"},
    {LossKind::ProxyAnchor, "proxyanchor", "ProxyAnchor"},
}};

void require_labels_below(std::span<const int> labels, int classes, const char* what) {
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] < 0 || labels[i] >= classes) {
      throw LabelError(std::string(what) + ": label " + std::to_string(labels[i]) + " at row " +
                       std::to_string(i) + " outside [0, " + std::to_string(classes) + ")");
    }
  }
}

void require_bank_for(const EmbeddingBatch& batch, const ProxyBank& bank, const char* what) {
  bank.validate();
  if (bank.dim() != batch.dim()) {
    throw DimensionError(std::string(what) + ": proxy dim " + std::to_string(bank.dim()) +
                         " != embedding dim " + std::to_string(batch.dim()));
  }
  require_labels_below(batch.labels, bank.classes, what);
}

}  // namespace

std::string_view to_string(LossKind kind) {
  for (const auto& n : kKindNames) {
    if (n.kind == kind) return n.cli;
  }
  return "unknown";
}

std::string_view display_name(LossKind kind) {
  for (const auto& n : kKindNames) {
    if (n.kind == kind) return n.display;
  }
  return "unknown";
}

LossKind parse_loss_kind(std::string_view name) {
  for (const auto& n : kKindNames) {
    if (n.cli == name) return n.kind;
  }
  throw ConfigError("unknown loss '" + std::string(name) + "'");
}

bool is_proxy_based(LossKind kind) {
  return kind == LossKind::ProxyNCA || kind == LossKind::SoftTriple || kind == LossKind::ProxyAnchor;
}

int LossConfig::proxies_per_class() const {
  switch (kind) {
    case LossKind::ProxyNCA:
    case LossKind::ProxyAnchor:
      return 1;
    case LossKind::SoftTriple:
      return st_proxies;
    default:
      return 0;
  }
}

void LossConfig::validate() const {
  if (!(beta >= 0.0 && beta <= 1.0)) throw ConfigError("beta must lie in [0, 1]");
  if (mining_cap < 1) throw ConfigError("mining cap must be >= 1");
  switch (kind) {
    case LossKind::CCE:
      if (dml_only) throw ConfigError("dml_only requires a DML loss");
      break;
    case LossKind::Triplet:
      if (!(margin >= 0)) throw ConfigError("triplet margin must be >= 0");
      break;
    case LossKind::NPairs:
      break;
    case LossKind::SupCon:
      if (!(temperature > 0)) throw ConfigError("supcon temperature must be > 0");
      break;
    case LossKind::ProxyNCA:
      if (!(softmax_scale > 0)) throw ConfigError("proxynca softmax scale must be > 0");
      break;
    case LossKind::SoftTriple:
      if (!(st_gamma > 0)) throw ConfigError("softtriple gamma must be > 0");
      if (st_proxies < 1) throw ConfigError("softtriple proxies per class must be >= 1");
      break;
    case LossKind::ProxyAnchor:
      if (!(pa_alpha > 0)) throw ConfigError("proxyanchor alpha must be > 0");
      break;
  }
}

void EmbeddingBatch::validate() const {
  if (embeddings.rows() < 1) throw DimensionError("EmbeddingBatch: empty batch");
  if (embeddings.cols() < 1) throw DimensionError("EmbeddingBatch: zero-dimensional embeddings");
  if (static_cast<std::size_t>(embeddings.rows()) != labels.size()) {
    throw DimensionError("EmbeddingBatch: " + std::to_string(labels.size()) + " labels for " +
                         std::to_string(embeddings.rows()) + " rows");
  }
  for (int y : labels) {
    if (y < 0) throw LabelError("EmbeddingBatch: negative label");
  }
  require_finite(embeddings, "EmbeddingBatch");
}

// ---------------------------------------------------------------------------

LossOutput cce_loss(const Mat& probs, std::span<const int> labels) {
  if (static_cast<std::size_t>(probs.rows()) != labels.size() || probs.rows() == 0) {
    throw DimensionError("cce_loss: " + std::to_string(labels.size()) + " labels for " +
                         std::to_string(probs.rows()) + " probability rows");
  }
  require_labels_below(labels, static_cast<int>(probs.cols()), "cce_loss");
  const auto n = static_cast<double>(probs.rows());
  LossOutput out;
  out.grad_embeddings = probs / n;
  for (Eigen::Index i = 0; i < probs.rows(); ++i) {
    if (std::abs(probs.row(i).sum() - 1.0) > 1e-9) {
      throw DimensionError("cce_loss: row " + std::to_string(i) + " does not sum to 1");
    }
    const int y = labels[static_cast<std::size_t>(i)];
    out.value -= std::log(std::max(probs(i, y), kProbFloor));
    out.grad_embeddings(i, y) -= 1.0 / n;
  }
  out.value /= n;
  return out;
}

LossOutput triplet_loss(const EmbeddingBatch& batch, std::span<const TripletSpec> triplets) {
  batch.validate();
  if (triplets.empty()) throw PairingError("triplet_loss: no triplets");
  const auto& z = batch.embeddings;
  const auto rows = static_cast<int>(batch.size());
  LossOutput out;
  out.grad_embeddings = Mat::Zero(z.rows(), z.cols());
  for (const auto& t : triplets) {
    const bool in_range = t.anchor >= 0 && t.anchor < rows && t.positive >= 0 && t.positive < rows &&
                          t.negative >= 0 && t.negative < rows;
    if (!in_range) throw PairingError("triplet_loss: index out of range");
    if (t.anchor == t.positive || t.anchor == t.negative || t.positive == t.negative) {
      throw PairingError("triplet_loss: indices must be distinct");
    }
    const int ya = batch.labels[t.anchor];
    if (batch.labels[t.positive] != ya || batch.labels[t.negative] == ya) {
      throw PairingError("triplet_loss: (" + std::to_string(t.anchor) + ", " +
                         std::to_string(t.positive) + ", " + std::to_string(t.negative) +
                         ") violates the label constraints");
    }
    if (!(t.margin >= 0)) throw ConfigError("triplet_loss: margin must be >= 0");
    const auto a = z.row(t.anchor);
    const auto p = z.row(t.positive);
    const auto n = z.row(t.negative);
    const double slack = (a - p).squaredNorm() - (a - n).squaredNorm() + t.margin;
    if (slack <= 0) continue;
    out.value += slack;
    out.grad_embeddings.row(t.anchor) += 2.0 * (n - p);
    out.grad_embeddings.row(t.positive) += -2.0 * (a - p);
    out.grad_embeddings.row(t.negative) += 2.0 * (a - n);
  }
  return out;
}

LossOutput npairs_loss(const EmbeddingBatch& batch, std::span<const PairSpec> pairs) {
  batch.validate();
  if (pairs.empty()) throw PairingError("npairs_loss: no anchor has a positive");
  const auto& z = batch.embeddings;
  const auto rows = static_cast<int>(batch.size());
  std::vector<char> seen(static_cast<std::size_t>(rows), 0);
  for (const auto& pr : pairs) {
    if (pr.anchor < 0 || pr.anchor >= rows || pr.positive < 0 || pr.positive >= rows) {
      throw PairingError("npairs_loss: index out of range");
    }
    if (pr.anchor == pr.positive || batch.labels[pr.anchor] != batch.labels[pr.positive]) {
      throw PairingError("npairs_loss: row " + std::to_string(pr.positive) +
                         " is not a positive for anchor " + std::to_string(pr.anchor));
    }
    if (seen[pr.anchor]) {
      throw PairingError("npairs_loss: anchor " + std::to_string(pr.anchor) +
                         " has more than one positive");
    }
    seen[pr.anchor] = 1;
  }

  LossOutput out;
  out.grad_embeddings = Mat::Zero(z.rows(), z.cols());
  const double inv_n = 1.0 / static_cast<double>(pairs.size());
  std::vector<int> candidates;
  for (const auto& pr : pairs) {
    const int ya = batch.labels[pr.anchor];
    candidates.assign(1, pr.positive);
    for (int j = 0; j < rows; ++j) {
      if (batch.labels[j] != ya) candidates.push_back(j);
    }
    Vec scores(static_cast<Eigen::Index>(candidates.size()));
    for (std::size_t k = 0; k < candidates.size(); ++k) {
      scores(static_cast<Eigen::Index>(k)) = z.row(pr.anchor).dot(z.row(candidates[k]));
    }
    const double lse = log_sum_exp(scores);
    out.value += (lse - scores(0)) * inv_n;
    Vec weight = (scores.array() - lse).exp().matrix();
    weight(0) -= 1.0;
    weight *= inv_n;
    for (std::size_t k = 0; k < candidates.size(); ++k) {
      const double w = weight(static_cast<Eigen::Index>(k));
      out.grad_embeddings.row(pr.anchor) += w * z.row(candidates[k]);
      out.grad_embeddings.row(candidates[k]) += w * z.row(pr.anchor);
    }
  }
  return out;
}

LossOutput supcon_loss(const EmbeddingBatch& batch, double temperature) {
  if (!(temperature > 0)) throw ConfigError("supcon_loss: temperature must be > 0");
  batch.validate();
  const auto& z = batch.embeddings;
  const Eigen::Index rows = batch.size();
  const Mat sim = (z * z.transpose()) / temperature;
  Mat weight = Mat::Zero(rows, rows);  // dLoss / dsim
  LossOutput out;
  bool any_anchor = false;
  Vec others(rows > 1 ? rows - 1 : 0);
  for (Eigen::Index i = 0; i < rows; ++i) {
    int positives = 0;
    for (Eigen::Index k = 0; k < rows; ++k) {
      if (k != i && batch.labels[k] == batch.labels[i]) ++positives;
    }
    if (positives == 0) continue;
    any_anchor = true;
    Eigen::Index c = 0;
    for (Eigen::Index k = 0; k < rows; ++k) {
      if (k != i) others(c++) = sim(i, k);
    }
    const double lse = log_sum_exp(others);
    const double inv_p = 1.0 / positives;
    for (Eigen::Index k = 0; k < rows; ++k) {
      if (k == i) continue;
      weight(i, k) = std::exp(sim(i, k) - lse);
      if (batch.labels[k] == batch.labels[i]) {
        out.value += (lse - sim(i, k)) * inv_p;
        weight(i, k) -= inv_p;
      }
    }
  }
  if (!any_anchor) throw DegenerateError("supcon_loss: no anchor has a positive in the batch");
  out.grad_embeddings = (weight * z + weight.transpose() * z) / temperature;
  return out;
}

LossOutput proxynca_loss(const EmbeddingBatch& batch, const ProxyBank& proxies, double scale,
                         bool normalize) {
  if (!(scale > 0)) throw ConfigError("proxynca_loss: scale must be > 0");
  batch.validate();
  require_bank_for(batch, proxies, "proxynca_loss");
  if (proxies.proxies_per_class != 1) throw ConfigError("proxynca_loss: needs one proxy per class");
  if (proxies.classes < 2) throw DegenerateError("proxynca_loss: needs at least two classes");

  const Mat z = normalize ? normalize_rows(batch.embeddings) : batch.embeddings;
  const Mat p = normalize ? normalize_rows(proxies.matrix) : proxies.matrix;
  const Eigen::Index rows = z.rows();
  const int classes = proxies.classes;
  const double inv_n = 1.0 / static_cast<double>(rows);

  Mat grad_z = Mat::Zero(z.rows(), z.cols());
  Mat grad_p = Mat::Zero(p.rows(), p.cols());
  LossOutput out;
  Vec dist(classes);
  Vec negatives(classes - 1);
  for (Eigen::Index i = 0; i < rows; ++i) {
    const int y = batch.labels[i];
    for (int j = 0; j < classes; ++j) dist(j) = (z.row(i) - p.row(j)).norm();
    Eigen::Index c = 0;
    for (int j = 0; j < classes; ++j) {
      if (j != y) negatives(c++) = -scale * dist(j);
    }
    const double lse = log_sum_exp(negatives);
    out.value += (scale * dist(y) + lse) * inv_n;
    // dLoss / d dist_j: +scale for the positive, -scale * softmax_j for negatives.
    for (int j = 0; j < classes; ++j) {
      const double d_weight =
          (j == y ? scale : -scale * std::exp(-scale * dist(j) - lse)) * inv_n;
      if (dist(j) == 0) continue;  // subgradient 0 at coincident points
      const auto unit = (z.row(i) - p.row(j)) / dist(j);
      grad_z.row(i) += d_weight * unit;
      grad_p.row(j) -= d_weight * unit;
    }
  }
  out.grad_embeddings = normalize ? normalize_rows_backward(batch.embeddings, grad_z) : grad_z;
  out.grad_proxies = normalize ? normalize_rows_backward(proxies.matrix, grad_p) : grad_p;
  return out;
}

LossOutput softtriple_loss(const EmbeddingBatch& batch, const ProxyBank& proxies,
                           const SoftTripleParams& params, bool normalize) {
  if (!(params.gamma > 0)) throw ConfigError("softtriple_loss: gamma must be > 0");
  batch.validate();
  require_bank_for(batch, proxies, "softtriple_loss");

  const Mat z = normalize ? normalize_rows(batch.embeddings) : batch.embeddings;
  const Mat w = normalize ? normalize_rows(proxies.matrix) : proxies.matrix;
  const Eigen::Index rows = z.rows();
  const int classes = proxies.classes;
  const int per_class = proxies.proxies_per_class;
  const double inv_n = 1.0 / static_cast<double>(rows);
  const Mat sim = z * w.transpose();  // rows x (C*K)

  Mat grad_sim = Mat::Zero(sim.rows(), sim.cols());
  LossOutput out;
  Vec relaxed(classes);
  std::vector<Vec> weights(static_cast<std::size_t>(classes));
  Vec logits(classes);
  for (Eigen::Index i = 0; i < rows; ++i) {
    const int y = batch.labels[i];
    for (int c = 0; c < classes; ++c) {
      const Vec s = sim.row(i).segment(proxies.row_of(c, 0), per_class).transpose();
      weights[c] = softmax(Vec(s / params.gamma));
      relaxed(c) = weights[c].dot(s);
      logits(c) = params.lambda * (relaxed(c) - (c == y ? params.delta : 0.0));
    }
    const double lse = log_sum_exp(logits);
    out.value += (lse - logits(y)) * inv_n;
    for (int c = 0; c < classes; ++c) {
      const double d_logit = (std::exp(logits(c) - lse) - (c == y ? 1.0 : 0.0)) * inv_n;
      const double d_relaxed = d_logit * params.lambda;
      for (int k = 0; k < per_class; ++k) {
        const Eigen::Index col = proxies.row_of(c, k);
        const double q = weights[c](k);
        // d relaxed / d sim_k = q_k + q_k (sim_k - relaxed) / gamma
        grad_sim(i, col) += d_relaxed * q * (1.0 + (sim(i, col) - relaxed(c)) / params.gamma);
      }
    }
  }
  const Mat grad_z = grad_sim * w;
  const Mat grad_w = grad_sim.transpose() * z;
  out.grad_embeddings = normalize ? normalize_rows_backward(batch.embeddings, grad_z) : grad_z;
  out.grad_proxies = normalize ? normalize_rows_backward(proxies.matrix, grad_w) : grad_w;
  return out;
}

LossOutput proxyanchor_loss(const EmbeddingBatch& batch, const ProxyBank& proxies, double alpha,
                            double delta) {
  if (!(alpha > 0)) throw ConfigError("proxyanchor_loss: alpha must be > 0");
  batch.validate();
  require_bank_for(batch, proxies, "proxyanchor_loss");
  if (proxies.proxies_per_class != 1) throw ConfigError("proxyanchor_loss: needs one proxy per class");

  const Mat z = normalize_rows(batch.embeddings);
  const Mat p = normalize_rows(proxies.matrix);
  const Mat cos = z * p.transpose();  // rows x C
  const Eigen::Index rows = z.rows();
  const int classes = proxies.classes;
  const auto present = present_classes(batch.labels);

  Mat grad_cos = Mat::Zero(rows, classes);
  LossOutput out;
  std::vector<Eigen::Index> members;
  // log(1 + Σ exp(x)) over the selected rows and its derivative w.r.t. cos,
  // where x = sign * alpha * (cos + offset).
  auto accumulate = [&](int cls, double sign, double offset, double weight) {
    if (members.empty()) return;
    Vec x(static_cast<Eigen::Index>(members.size()));
    for (std::size_t m = 0; m < members.size(); ++m) {
      x(static_cast<Eigen::Index>(m)) = sign * alpha * (cos(members[m], cls) + offset);
    }
    const double total = softplus(log_sum_exp(x));
    out.value += weight * total;
    for (std::size_t m = 0; m < members.size(); ++m) {
      grad_cos(members[m], cls) += weight * sign * alpha * std::exp(x(static_cast<Eigen::Index>(m)) - total);
    }
  };

  const double pos_weight = 1.0 / static_cast<double>(present.size());
  const double neg_weight = 1.0 / static_cast<double>(classes);
  for (int cls = 0; cls < classes; ++cls) {
    if (present.contains(cls)) {
      members.clear();
      for (Eigen::Index i = 0; i < rows; ++i) {
        if (batch.labels[i] == cls) members.push_back(i);
      }
      accumulate(cls, -1.0, -delta, pos_weight);
    }
    members.clear();
    for (Eigen::Index i = 0; i < rows; ++i) {
      if (batch.labels[i] != cls) members.push_back(i);
    }
    accumulate(cls, 1.0, delta, neg_weight);
  }
  out.grad_embeddings = normalize_rows_backward(batch.embeddings, grad_cos * p);
  out.grad_proxies = normalize_rows_backward(proxies.matrix, grad_cos.transpose() * z);
  return out;
}

LossOutput combined_loss(const LossOutput& cce, const LossOutput& dml, double beta) {
  if (!(beta >= 0.0 && beta <= 1.0)) throw ConfigError("combined_loss: beta must lie in [0, 1]");
  if (cce.grad_embeddings.rows() != dml.grad_embeddings.rows() ||
      cce.grad_embeddings.cols() != dml.grad_embeddings.cols()) {
    throw DimensionError("combined_loss: embedding gradient shapes differ");
  }
  const double keep = 1.0 - beta;
  LossOutput out;
  out.value = beta * cce.value + keep * dml.value;
  out.grad_embeddings = beta * cce.grad_embeddings + keep * dml.grad_embeddings;
  if (cce.grad_proxies && dml.grad_proxies) {
    if (cce.grad_proxies->rows() != dml.grad_proxies->rows() ||
        cce.grad_proxies->cols() != dml.grad_proxies->cols()) {
      throw DimensionError("combined_loss: proxy gradient shapes differ");
    }
    out.grad_proxies = Mat(beta * *cce.grad_proxies + keep * *dml.grad_proxies);
  } else if (cce.grad_proxies) {
    out.grad_proxies = Mat(beta * *cce.grad_proxies);
  } else if (dml.grad_proxies) {
    out.grad_proxies = Mat(keep * *dml.grad_proxies);
  }
  return out;
}

}  // namespace dml
