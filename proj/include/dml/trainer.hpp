#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "dml/dataset.hpp"
#include "dml/encoder.hpp"
#include "dml/losses.hpp"
#include "dml/proxy_bank.hpp"

namespace dml {

struct TrainConfig {
  int batch_size = 64;
  double learning_rate = 1e-2;
  int epochs = 64;
  double warmup_fraction = 0.06;
  double weight_decay = 0.01;
  std::uint64_t seed = 0;
  LossConfig loss;
  /// V, d_emb, d. The class count always comes from the dataset.
  EncoderDims encoder;
  /// Global L2 norm the combined gradient is clipped to; 0 disables clipping.
  double clip_norm = 5.0;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_epsilon = 1e-8;

  void validate() const;
};

struct TraceEntry {
  int step = 0;
  double loss = 0;
};

struct TrainedModel {
  EncoderParams encoder;
  std::optional<ProxyBank> proxies;
  LossConfig loss;
  std::vector<TraceEntry> trace;
};

/// Linear warmup from 0 to `base_lr` over the first ceil(warmup_fraction * total)
/// steps, then linear decay towards 0 at `total_steps`.
double lr_schedule(int step, int total_steps, double base_lr, double warmup_fraction);

/// Objective value and parameter gradients for one mini-batch.
struct StepResult {
  double value = 0;
  EncoderParams grads;
  std::optional<Mat> proxy_grads;
};

/// Forward and backward pass of the training objective on one batch:
/// encode -> logits -> beta * CCE + (1 - beta) * DML -> gradients for every
/// encoder block and, for proxy losses, the bank. `mining` is advanced by the
/// triplet/pair sampler only.
StepResult forward_backward(const EncoderParams& params, const ProxyBank* proxies,
                            const LossConfig& loss, std::span<const TokenizedText> tokens,
                            std::span<const int> labels, Rng& mining);

/// Number of optimizer steps train() takes: epochs * ceil(n / batch_size).
int total_steps(std::size_t examples, const TrainConfig& config);

/// Mini-batch AdamW on beta * CCE + (1 - beta) * DML (pure CCE when the loss
/// kind is CCE, pure DML when `loss.dml_only`). Deterministic given the seed:
/// the encoder init, proxy init, epoch shuffles and triplet/pair mining each
/// draw from their own stream derived from `config.seed`.
TrainedModel train(const Dataset& data, const TrainConfig& config);

}  // namespace dml
