#include "dml/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

namespace dml {

namespace {

enum Stream : std::uint64_t { kEncoderInit = 1, kProxyInit = 2, kShuffle = 3, kMining = 4 };

/// Adam moments with decoupled weight decay: p <- p - lr * (m̂ / (√v̂ + ε) + wd * p).
class AdamW {
 public:
  AdamW(const TrainConfig& config, const EncoderParams& params, const ProxyBank* proxies)
      : config_(config), m_(EncoderParams::zeros(params.dims())), v_(EncoderParams::zeros(params.dims())) {
    if (proxies) {
      proxy_m_ = Mat::Zero(proxies->rows(), proxies->dim());
      proxy_v_ = Mat::Zero(proxies->rows(), proxies->dim());
    }
  }

  void step(double lr, EncoderParams& params, const EncoderParams& grads, ProxyBank* proxies,
            const Mat* proxy_grads) {
    ++t_;
    const double c1 = 1.0 - std::pow(config_.adam_beta1, t_);
    const double c2 = 1.0 - std::pow(config_.adam_beta2, t_);
    update(lr, c1, c2, params.embedding_table, grads.embedding_table, m_.embedding_table, v_.embedding_table);
    update(lr, c1, c2, params.projection, grads.projection, m_.projection, v_.projection);
    update(lr, c1, c2, params.projection_bias, grads.projection_bias, m_.projection_bias, v_.projection_bias);
    update(lr, c1, c2, params.classifier, grads.classifier, m_.classifier, v_.classifier);
    update(lr, c1, c2, params.classifier_bias, grads.classifier_bias, m_.classifier_bias, v_.classifier_bias);
    if (proxies && proxy_grads) update(lr, c1, c2, proxies->matrix, *proxy_grads, proxy_m_, proxy_v_);
  }

 private:
  template <typename Block>
  void update(double lr, double c1, double c2, Block& param, const Block& grad, Block& m, Block& v) {
    const double b1 = config_.adam_beta1;
    const double b2 = config_.adam_beta2;
    const double eps = config_.adam_epsilon;
    const double wd = config_.weight_decay;
    double* p = param.data();
    const double* g = grad.data();
    double* mp = m.data();
    double* vp = v.data();
    const Eigen::Index n = param.size();
    for (Eigen::Index i = 0; i < n; ++i) {
      mp[i] = b1 * mp[i] + (1.0 - b1) * g[i];
      vp[i] = b2 * vp[i] + (1.0 - b2) * g[i] * g[i];
      p[i] -= lr * ((mp[i] / c1) / (std::sqrt(vp[i] / c2) + eps) + wd * p[i]);
    }
  }

  const TrainConfig& config_;
  EncoderParams m_;
  EncoderParams v_;
  Mat proxy_m_;
  Mat proxy_v_;
  int t_ = 0;
};

double global_norm(const EncoderParams& grads, const Mat* proxy_grads) {
  double sq = grads.squared_norm();
  if (proxy_grads) sq += proxy_grads->squaredNorm();
  return std::sqrt(sq);
}

void scale_gradients(double scale, EncoderParams& grads, Mat* proxy_grads) {
  grads.embedding_table *= scale;
  grads.projection *= scale;
  grads.projection_bias *= scale;
  grads.classifier *= scale;
  grads.classifier_bias *= scale;
  if (proxy_grads) *proxy_grads *= scale;
}

}  // namespace

void TrainConfig::validate() const {
  if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
  const bool pairwise = loss.kind == LossKind::Triplet || loss.kind == LossKind::NPairs ||
                        loss.kind == LossKind::SupCon;
  if (pairwise && batch_size < 2) throw ConfigError("batch losses need batch_size >= 2");
  if (epochs < 1) throw ConfigError("epochs must be >= 1");
  if (!(learning_rate >= 0)) throw ConfigError("learning_rate must be >= 0");
  if (!(warmup_fraction >= 0 && warmup_fraction <= 1)) throw ConfigError("warmup_fraction must lie in [0, 1]");
  if (!(weight_decay >= 0)) throw ConfigError("weight_decay must be >= 0");
  if (!(clip_norm >= 0)) throw ConfigError("clip_norm must be >= 0");
  if (encoder.vocab < 1 || encoder.embed < 1 || encoder.dim < 1) throw ConfigError("encoder dims must be >= 1");
  loss.validate();
}

double lr_schedule(int step, int total_steps, double base_lr, double warmup_fraction) {
  if (total_steps < 1) throw ConfigError("lr_schedule: total_steps must be >= 1");
  if (step < 0 || step >= total_steps) {
    throw ConfigError("lr_schedule: step " + std::to_string(step) + " outside [0, " +
                      std::to_string(total_steps) + ")");
  }
  const int warmup = static_cast<int>(std::ceil(warmup_fraction * total_steps));
  if (step < warmup) return base_lr * static_cast<double>(step) / warmup;
  return base_lr * static_cast<double>(total_steps - step) / static_cast<double>(total_steps - warmup);
}

int total_steps(std::size_t examples, const TrainConfig& config) {
  const auto bs = static_cast<std::size_t>(config.batch_size);
  return config.epochs * static_cast<int>((examples + bs - 1) / bs);
}

namespace {

void reset_gradients(const EncoderParams& params, EncoderParams& grads) {
  const bool same = grads.embedding_table.rows() == params.embedding_table.rows() &&
                    grads.embedding_table.cols() == params.embedding_table.cols() &&
                    grads.projection.cols() == params.projection.cols() &&
                    grads.classifier.cols() == params.classifier.cols();
  if (same) {
    grads.set_zero();
  } else {
    grads = EncoderParams::zeros(params.dims());
  }
}

void forward_backward_into(const EncoderParams& params, const ProxyBank* proxies, const LossConfig& loss,
                           std::span<const TokenizedText> tokens, std::span<const int> labels, Rng& mining,
                           StepResult& out) {
  if (tokens.size() != labels.size() || tokens.empty()) {
    throw DimensionError("forward_backward: " + std::to_string(labels.size()) + " labels for " +
                         std::to_string(tokens.size()) + " texts");
  }
  const bool use_dml = loss.kind != LossKind::CCE;
  const bool use_cce = !use_dml || !loss.dml_only;

  EmbeddingBatch batch;
  batch.embeddings = encode_all(params, tokens);
  batch.labels.assign(labels.begin(), labels.end());

  LossOutput total;
  Mat grad_logits;
  double cce_weight = 1.0;
  if (use_cce) {
    const Mat logits = logits_all(params, batch.embeddings);
    LossOutput cce = cce_loss(softmax_rows(logits), batch.labels);
    grad_logits = std::move(cce.grad_embeddings);
    cce.grad_embeddings = grad_logits * params.classifier.transpose();
    total = std::move(cce);
  }
  if (use_dml) {
    LossOutput dml = dml_loss(loss, batch, proxies, mining);
    if (use_cce) {
      total = combined_loss(total, dml, loss.beta);
      cce_weight = loss.beta;
    } else {
      total = std::move(dml);
    }
  }

  out.value = total.value;
  reset_gradients(params, out.grads);
  if (use_cce) {
    // Only the cross-entropy term reaches the classifier head.
    const Mat head = batch.embeddings.transpose() * grad_logits;
    out.grads.classifier = cce_weight * head;
    out.grads.classifier_bias = cce_weight * grad_logits.colwise().sum().transpose();
  }
  for (Eigen::Index r = 0; r < batch.size(); ++r) {
    encode_backward(params, tokens[static_cast<std::size_t>(r)], batch.embeddings.row(r).transpose(),
                    total.grad_embeddings.row(r).transpose(), out.grads);
  }
  out.proxy_grads = std::move(total.grad_proxies);
}

}  // namespace

StepResult forward_backward(const EncoderParams& params, const ProxyBank* proxies,
                            const LossConfig& loss, std::span<const TokenizedText> tokens,
                            std::span<const int> labels, Rng& mining) {
  StepResult out;
  forward_backward_into(params, proxies, loss, tokens, labels, mining, out);
  return out;
}

TrainedModel train(const Dataset& data, const TrainConfig& config) {
  config.validate();
  data.validate();
  if (data.examples.empty()) throw ConfigError("train: empty dataset");
  const LossConfig& loss = config.loss;
  EncoderDims dims = config.encoder;
  dims.classes = data.num_classes();
  Rng init_rng(derive_seed(config.seed, kEncoderInit));
  Rng proxy_rng(derive_seed(config.seed, kProxyInit));
  Rng shuffle_rng(derive_seed(config.seed, kShuffle));
  Rng mining_rng(derive_seed(config.seed, kMining));

  TrainedModel model;
  model.loss = loss;
  model.encoder = init_encoder(dims, init_rng);
  if (is_proxy_based(loss.kind)) {
    model.proxies = init_proxies(dims.classes, loss.proxies_per_class(), dims.dim, proxy_rng);
  }
  ProxyBank* bank = model.proxies ? &*model.proxies : nullptr;

  std::vector<TokenizedText> tokens;
  tokens.reserve(data.size());
  for (const auto& e : data.examples) tokens.push_back(tokenize(e.text, dims.vocab));

  const int steps = total_steps(data.size(), config);
  model.trace.reserve(static_cast<std::size_t>(steps));
  AdamW optimizer(config, model.encoder, bank);
  StepResult result;
  std::vector<TokenizedText> batch_tokens;
  std::vector<int> batch_labels;
  std::vector<std::size_t> order(data.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  const auto batch_size = static_cast<std::size_t>(config.batch_size);

  int step = 0;
  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    shuffle_rng.shuffle(order);
    // The last, possibly smaller, batch is kept.
    for (std::size_t begin = 0; begin < order.size(); begin += batch_size) {
      const std::size_t end = std::min(order.size(), begin + batch_size);
      batch_tokens.clear();
      batch_labels.clear();
      for (std::size_t r = begin; r < end; ++r) {
        batch_tokens.push_back(tokens[order[r]]);
        batch_labels.push_back(data.examples[order[r]].label);
      }

      forward_backward_into(model.encoder, bank, loss, batch_tokens, batch_labels, mining_rng, result);
      if (!std::isfinite(result.value)) {
        throw DivergenceError("non-finite loss at step " + std::to_string(step));
      }
      Mat* proxy_grads = result.proxy_grads ? &*result.proxy_grads : nullptr;
      const double norm = global_norm(result.grads, proxy_grads);
      if (!std::isfinite(norm)) {
        throw DivergenceError("non-finite gradient at step " + std::to_string(step));
      }
      if (config.clip_norm > 0 && norm > config.clip_norm) {
        scale_gradients(config.clip_norm / norm, result.grads, proxy_grads);
      }

      const double lr = lr_schedule(step, steps, config.learning_rate, config.warmup_fraction);
      optimizer.step(lr, model.encoder, result.grads, bank, proxy_grads);
      // A zero-rate step leaves every parameter untouched, proxies included.
      if (bank && loss.renormalizes_proxies() && lr > 0) renormalize(*bank);
      if (bank && !all_finite(bank->matrix)) {
        throw DivergenceError("non-finite proxy after step " + std::to_string(step));
      }
      model.trace.push_back({step, result.value});
      ++step;
    }
  }
  // Finite gradients and a finite rate keep the encoder finite; checked once here.
  if (!model.encoder.all_finite()) throw DivergenceError("non-finite encoder parameter after training");
  return model;
}

}  // namespace dml
