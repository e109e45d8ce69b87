#include "dml/gradcheck.hpp"

#include <array>
#include <chrono>
#include <functional>

#include "dml/losses.hpp"
#include "dml/trainer.hpp"

namespace dml {

namespace {

constexpr int kRows = 6;
constexpr int kDim = 8;
constexpr int kClasses = 3;

constexpr std::array kMargins{1.0, 3.0, 5.0, 7.0, 9.0};
constexpr std::array kTemperatures{0.1, 0.3, 0.5, 0.7, 0.9};
constexpr std::array kScales{0.4, 0.6, 0.8, 1.0, 1.2, 1.4, 1.6, 1.8, 2.0, 3.0, 5.0};
constexpr std::array kStGammas{0.01, 0.03, 0.05, 0.07, 0.1};
constexpr std::array kStLambdas{1.0, 3.0, 3.3, 4.0, 6.0, 8.0, 10.0};
constexpr std::array kStDeltas{0.1, 0.3, 0.5, 0.7, 0.9, 1.0};
constexpr std::array kPaAlphas{16.0, 128.0};
constexpr std::array kPaDeltas{0.0, 0.1, 0.3, 0.5, 0.7, 0.9};

template <std::size_t N>
double pick(const std::array<double, N>& xs, Rng& rng) {
  return xs[rng.uniform_index(N)];
}

Mat uniform_matrix(Eigen::Index rows, Eigen::Index cols, Rng& rng) {
  Mat m(rows, cols);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = 2.0 * rng.uniform() - 1.0;
  return m;
}

/// Two rows per class in random order, so every anchor has a positive.
std::vector<int> paired_labels(Rng& rng) {
  std::vector<int> labels;
  for (int i = 0; i < kRows; ++i) labels.push_back(i % kClasses);
  rng.shuffle(labels);
  return labels;
}

std::vector<int> random_labels(Rng& rng) {
  std::vector<int> labels;
  for (int i = 0; i < kRows; ++i) labels.push_back(static_cast<int>(rng.uniform_index(kClasses)));
  return labels;
}

ProxyBank random_bank(int per_class, Rng& rng) {
  ProxyBank bank;
  bank.classes = kClasses;
  bank.proxies_per_class = per_class;
  bank.matrix = uniform_matrix(kClasses * per_class, kDim, rng);
  return bank;
}

class Tally {
 public:
  Tally(std::string loss, std::string wrt, const GradcheckOptions& options) : options_(options) {
    row_.loss = std::move(loss);
    row_.wrt = std::move(wrt);
  }

  void check(const Mat& analytic, const std::function<double(const Mat&)>& f, const Mat& at) {
    ++row_.instances;
    GradientAgreement agreement;
    try {
      agreement = compare_gradients(analytic, fd_gradient(f, at, options_.step), options_.rel_tol,
                                    options_.abs_tol, options_.tiny);
    } catch (const OracleError&) {
      ++row_.failures;
      return;
    }
    if (!agreement.ok) ++row_.failures;
    if (!agreement.used_absolute) row_.worst_rel = std::max(row_.worst_rel, agreement.max_rel_error);
    row_.worst_abs = std::max(row_.worst_abs, agreement.max_abs_error);
  }

  GradcheckRow row() const { return row_; }

 private:
  const GradcheckOptions& options_;
  GradcheckRow row_;
};

using BatchLoss = std::function<LossOutput(const EmbeddingBatch&, const ProxyBank*)>;

/// Loss-level check of one instance w.r.t. embeddings and, when a bank is
/// given, proxies.
void check_instance(const BatchLoss& loss, const EmbeddingBatch& batch, const ProxyBank* bank,
                    Tally& embeddings, Tally* proxies) {
  const LossOutput out = loss(batch, bank);
  embeddings.check(
      out.grad_embeddings,
      [&](const Mat& z) {
        EmbeddingBatch moved{z, batch.labels};
        return loss(moved, bank).value;
      },
      batch.embeddings);
  if (bank && proxies) {
    proxies->check(
        *out.grad_proxies,
        [&](const Mat& p) {
          ProxyBank moved = *bank;
          moved.matrix = p;
          return loss(batch, &moved).value;
        },
        bank->matrix);
  }
}

void check_cce(const GradcheckOptions& options, Rng& rng, std::vector<GradcheckRow>& rows) {
  Tally logits_tally("CCE", "logits", options);
  Tally z_tally("CCE", "embeddings", options);
  for (int n = 0; n < options.instances; ++n) {
    const Mat z = uniform_matrix(kRows, kDim, rng);
    const Mat weights = 2.0 * uniform_matrix(kDim, kClasses, rng);
    const Vec bias = uniform_matrix(kClasses, 1, rng);
    const auto labels = random_labels(rng);
    auto logits_of = [&](const Mat& zz) -> Mat { return (zz * weights).rowwise() + bias.transpose(); };
    const Mat logits = logits_of(z);
    const LossOutput out = cce_loss(softmax_rows(logits), labels);
    logits_tally.check(
        out.grad_embeddings, [&](const Mat& l) { return cce_loss(softmax_rows(l), labels).value; }, logits);
    z_tally.check(
        out.grad_embeddings * weights.transpose(),
        [&](const Mat& zz) { return cce_loss(softmax_rows(logits_of(zz)), labels).value; }, z);
  }
  rows.push_back(logits_tally.row());
  rows.push_back(z_tally.row());
}

void check_triplet(const GradcheckOptions& options, Rng& rng, std::vector<GradcheckRow>& rows) {
  Tally tally("Triplet", "embeddings", options);
  int done = 0;
  while (done < options.instances) {
    EmbeddingBatch batch{uniform_matrix(kRows, kDim, rng), paired_labels(rng)};
    const double margin = pick(kMargins, rng);
    Rng unused(0);
    const auto triplets = mine_triplets(batch.labels, margin, 512, unused);
    bool near_kink = false;
    for (const auto& t : triplets) {
      const auto& z = batch.embeddings;
      const double slack = (z.row(t.anchor) - z.row(t.positive)).squaredNorm() -
                           (z.row(t.anchor) - z.row(t.negative)).squaredNorm() + margin;
      if (std::abs(slack) < 1e-3) near_kink = true;
    }
    if (near_kink) continue;
    check_instance([&](const EmbeddingBatch& b, const ProxyBank*) { return triplet_loss(b, triplets); },
                   batch, nullptr, tally, nullptr);
    ++done;
  }
  rows.push_back(tally.row());
}

void check_npairs(const GradcheckOptions& options, Rng& rng, std::vector<GradcheckRow>& rows) {
  Tally tally("NPairs", "embeddings", options);
  for (int n = 0; n < options.instances; ++n) {
    EmbeddingBatch batch{uniform_matrix(kRows, kDim, rng), paired_labels(rng)};
    const auto pairs = mine_pairs(batch.labels, 512, rng);
    check_instance([&](const EmbeddingBatch& b, const ProxyBank*) { return npairs_loss(b, pairs); }, batch,
                   nullptr, tally, nullptr);
  }
  rows.push_back(tally.row());
}

void check_supcon(const GradcheckOptions& options, Rng& rng, std::vector<GradcheckRow>& rows) {
  Tally tally("SupCon", "embeddings", options);
  for (int n = 0; n < options.instances; ++n) {
    EmbeddingBatch batch{uniform_matrix(kRows, kDim, rng), n % 2 ? random_labels(rng) : paired_labels(rng)};
    if (present_classes(batch.labels).size() == batch.labels.size()) batch.labels = paired_labels(rng);
    // Alternate between the two ends of the temperature grid and random grid points.
    const double tau = n % 3 == 0 ? 0.1 : n % 3 == 1 ? 0.9 : pick(kTemperatures, rng);
    check_instance([&](const EmbeddingBatch& b, const ProxyBank*) { return supcon_loss(b, tau); }, batch,
                   nullptr, tally, nullptr);
  }
  rows.push_back(tally.row());
}

void check_proxynca(const GradcheckOptions& options, Rng& rng, std::vector<GradcheckRow>& rows) {
  Tally z_tally("ProxyNCA", "embeddings", options);
  Tally p_tally("ProxyNCA", "proxies", options);
  for (int n = 0; n < options.instances; ++n) {
    EmbeddingBatch batch{uniform_matrix(kRows, kDim, rng), random_labels(rng)};
    const ProxyBank bank = random_bank(1, rng);
    const double scale = pick(kScales, rng);
    const bool normalize = n % 2 == 0;
    check_instance(
        [&](const EmbeddingBatch& b, const ProxyBank* p) { return proxynca_loss(b, *p, scale, normalize); },
        batch, &bank, z_tally, &p_tally);
  }
  rows.push_back(z_tally.row());
  rows.push_back(p_tally.row());
}

void check_softtriple(const GradcheckOptions& options, Rng& rng, std::vector<GradcheckRow>& rows) {
  Tally z_tally("SoftTriple", "embeddings", options);
  Tally p_tally("SoftTriple", "proxies", options);
  for (int n = 0; n < options.instances; ++n) {
    EmbeddingBatch batch{uniform_matrix(kRows, kDim, rng), random_labels(rng)};
    const ProxyBank bank = random_bank(n % 2 == 0 ? 2 : 1, rng);
    const SoftTripleParams params{pick(kStLambdas, rng), pick(kStGammas, rng), pick(kStDeltas, rng)};
    check_instance(
        [&](const EmbeddingBatch& b, const ProxyBank* p) { return softtriple_loss(b, *p, params, true); },
        batch, &bank, z_tally, &p_tally);
  }
  rows.push_back(z_tally.row());
  rows.push_back(p_tally.row());
}

void check_proxyanchor(const GradcheckOptions& options, Rng& rng, std::vector<GradcheckRow>& rows) {
  Tally z_tally("ProxyAnchor", "embeddings", options);
  Tally p_tally("ProxyAnchor", "proxies", options);
  for (int n = 0; n < options.instances; ++n) {
    EmbeddingBatch batch{uniform_matrix(kRows, kDim, rng), random_labels(rng)};
    const ProxyBank bank = random_bank(1, rng);
    const double alpha = kPaAlphas[static_cast<std::size_t>(n) % kPaAlphas.size()];
    const double delta = pick(kPaDeltas, rng);
    check_instance(
        [&](const EmbeddingBatch& b, const ProxyBank* p) { return proxyanchor_loss(b, *p, alpha, delta); },
        batch, &bank, z_tally, &p_tally);
  }
  rows.push_back(z_tally.row());
  rows.push_back(p_tally.row());
}

// --- end-to-end: objective -> logits -> z -> encoder parameters -------------

constexpr EncoderDims kModelDims{12, 5, kDim, kClasses};

LossConfig model_loss_config(LossKind kind, Rng& rng) {
  LossConfig c;
  c.kind = kind;
  c.beta = 0.5;
  c.margin = pick(kMargins, rng);
  c.temperature = pick(kTemperatures, rng);
  c.softmax_scale = pick(kScales, rng);
  c.st_lambda = pick(kStLambdas, rng);
  c.st_gamma = pick(kStGammas, rng);
  c.st_delta = pick(kStDeltas, rng);
  c.st_proxies = 2;
  c.pa_alpha = pick(kPaAlphas, rng);
  c.pa_delta = pick(kPaDeltas, rng);
  return c;
}

/// Every encoder block laid out as one column so a single fd_gradient call
/// covers them all.
Mat flatten(const EncoderParams& p) {
  Mat out(p.embedding_table.size() + p.projection.size() + p.projection_bias.size() +
              p.classifier.size() + p.classifier_bias.size(),
          1);
  Eigen::Index at = 0;
  auto put = [&](const auto& block) {
    for (Eigen::Index i = 0; i < block.size(); ++i) out(at++, 0) = block.data()[i];
  };
  put(p.embedding_table);
  put(p.projection);
  put(p.projection_bias);
  put(p.classifier);
  put(p.classifier_bias);
  return out;
}

EncoderParams unflatten(const Mat& flat, const EncoderDims& dims) {
  auto p = EncoderParams::zeros(dims);
  Eigen::Index at = 0;
  auto get = [&](auto& block) {
    for (Eigen::Index i = 0; i < block.size(); ++i) block.data()[i] = flat(at++, 0);
  };
  get(p.embedding_table);
  get(p.projection);
  get(p.projection_bias);
  get(p.classifier);
  get(p.classifier_bias);
  return p;
}

bool triplet_near_kink(const EncoderParams& params, std::span<const TokenizedText> tokens,
                       std::span<const int> labels, const LossConfig& config, Rng mining) {
  const Mat z = encode_all(params, tokens);
  for (const auto& t : mine_triplets(labels, config.margin, config.mining_cap, mining)) {
    const double slack = (z.row(t.anchor) - z.row(t.positive)).squaredNorm() -
                         (z.row(t.anchor) - z.row(t.negative)).squaredNorm() + config.margin;
    if (std::abs(slack) < 1e-3) return true;
  }
  return false;
}

void check_model(LossKind kind, const GradcheckOptions& options, Rng& rng, std::vector<GradcheckRow>& rows) {
  const std::string name(display_name(kind));
  Tally params_tally(name, "model", options);
  Tally proxy_tally(name, "model-proxies", options);
  int done = 0;
  while (done < options.model_instances) {
    const LossConfig config = model_loss_config(kind, rng);
    auto params = init_encoder(kModelDims, rng);
    // Larger weights than the training init, so tanh is exercised off its linear region.
    params.projection *= 10.0;
    params.embedding_table *= 5.0;
    params.classifier *= 10.0;
    std::vector<TokenizedText> tokens(kRows);
    for (auto& t : tokens) {
      const std::size_t length = 1 + rng.uniform_index(4);
      for (std::size_t k = 0; k < length; ++k) {
        t.bucket_ids.push_back(static_cast<int>(rng.uniform_index(kModelDims.vocab)));
      }
    }
    const auto labels = kind == LossKind::CCE || is_proxy_based(kind) ? random_labels(rng) : paired_labels(rng);
    std::optional<ProxyBank> bank;
    if (is_proxy_based(kind)) bank = random_bank(config.proxies_per_class(), rng);
    const Rng mining(rng.next_u64());
    if (kind == LossKind::Triplet && triplet_near_kink(params, tokens, labels, config, mining)) continue;

    Rng first = mining;
    const StepResult result =
        forward_backward(params, bank ? &*bank : nullptr, config, tokens, labels, first);
    params_tally.check(
        flatten(result.grads),
        [&](const Mat& flat) {
          Rng replay = mining;
          return forward_backward(unflatten(flat, kModelDims), bank ? &*bank : nullptr, config, tokens,
                                  labels, replay)
              .value;
        },
        flatten(params));
    if (bank) {
      proxy_tally.check(
          *result.proxy_grads,
          [&](const Mat& p) {
            ProxyBank moved = *bank;
            moved.matrix = p;
            Rng replay = mining;
            return forward_backward(params, &moved, config, tokens, labels, replay).value;
          },
          bank->matrix);
    }
    ++done;
  }
  rows.push_back(params_tally.row());
  if (is_proxy_based(kind)) rows.push_back(proxy_tally.row());
}

}  // namespace

bool GradcheckReport::ok() const {
  if (rows.empty()) return false;
  for (const auto& r : rows) {
    if (!r.ok()) return false;
  }
  return true;
}

GradcheckReport run_gradcheck(const GradcheckOptions& options) {
  const auto start = std::chrono::steady_clock::now();
  GradcheckReport report;
  Rng rng(options.seed);
  if (options.instances > 0) {
    check_cce(options, rng, report.rows);
    check_triplet(options, rng, report.rows);
    check_npairs(options, rng, report.rows);
    check_supcon(options, rng, report.rows);
    check_proxynca(options, rng, report.rows);
    check_softtriple(options, rng, report.rows);
    check_proxyanchor(options, rng, report.rows);
  }
  if (options.model_instances > 0) {
    for (LossKind kind : {LossKind::CCE, LossKind::Triplet, LossKind::NPairs, LossKind::SupCon,
                          LossKind::ProxyNCA, LossKind::SoftTriple, LossKind::ProxyAnchor}) {
      check_model(kind, options, rng, report.rows);
    }
  }
  report.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return report;
}

}  // namespace dml
