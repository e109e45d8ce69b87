#include "dml/eval.hpp"

#include <string>

namespace dml {

void InferenceConfig::validate() const {
  if (!(beta >= 0.0 && beta <= 1.0)) throw ConfigError("inference beta must lie in [0, 1]");
}

Vec blended_scores(const TrainedModel& model, const Vec& z, const InferenceConfig& config) {
  config.validate();
  const Vec probs = softmax(classify_logits(model.encoder, z));
  if (config.mode == InferenceMode::DenseOnly) return probs;

  if (!model.proxies) throw ConfigError("blended inference needs a proxy bank");
  const ProxyBank& bank = *model.proxies;
  if (config.mode == InferenceMode::Blended && bank.proxies_per_class != 1) {
    throw ConfigError("blended inference needs one proxy per class, bank has " +
                      std::to_string(bank.proxies_per_class) + " (use max-over-k)");
  }
  if (bank.classes != probs.size()) throw DimensionError("proxy bank and classifier disagree on C");
  Vec scores(probs.size());
  for (int c = 0; c < bank.classes; ++c) {
    double sim = cosine_sim(z, bank.matrix.row(bank.row_of(c, 0)).transpose());
    for (int k = 1; k < bank.proxies_per_class; ++k) {
      sim = std::max(sim, cosine_sim(z, bank.matrix.row(bank.row_of(c, k)).transpose()));
    }
    scores(c) = config.beta * probs(c) + (1.0 - config.beta) * sim;
    if (!(scores(c) >= -1.0 - 1e-12 && scores(c) <= 2.0 + 1e-12)) {
      throw Error("blended score " + std::to_string(scores(c)) + " outside [-1, 2]");
    }
  }
  return scores;
}

int predict(const TrainedModel& model, const Vec& z, const InferenceConfig& config) {
  return static_cast<int>(argmax(blended_scores(model, z, config)));
}

std::vector<int> predict_all(const TrainedModel& model, const Dataset& data, const InferenceConfig& config) {
  const int vocab = static_cast<int>(model.encoder.embedding_table.rows());
  std::vector<int> out;
  out.reserve(data.size());
  for (const auto& e : data.examples) out.push_back(predict(model, encode(model.encoder, tokenize(e.text, vocab)), config));
  return out;
}

EvalResult macro_f1(std::span<const int> predictions, std::span<const int> labels, int classes) {
  if (predictions.size() != labels.size()) {
    throw DimensionError("macro_f1: " + std::to_string(predictions.size()) + " predictions for " +
                         std::to_string(labels.size()) + " labels");
  }
  if (classes < 1) throw ConfigError("macro_f1: need at least one class");
  EvalResult out;
  const auto c_count = static_cast<std::size_t>(classes);
  out.confusion.assign(c_count, std::vector<long>(c_count, 0));
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const int y = labels[i];
    const int p = predictions[i];
    if (y < 0 || y >= classes || p < 0 || p >= classes) {
      throw LabelError("macro_f1: class index out of range at position " + std::to_string(i));
    }
    ++out.confusion[static_cast<std::size_t>(y)][static_cast<std::size_t>(p)];
  }
  out.n_test = static_cast<long>(labels.size());
  out.per_class_f1.assign(c_count, 0.0);
  out.counted.assign(c_count, false);
  double sum = 0;
  int counted = 0;
  for (std::size_t c = 0; c < c_count; ++c) {
    long tp = out.confusion[c][c];
    long actual = 0;
    long predicted = 0;
    for (std::size_t k = 0; k < c_count; ++k) {
      actual += out.confusion[c][k];
      predicted += out.confusion[k][c];
    }
    if (actual == 0 && predicted == 0) continue;
    // 2PR/(P+R) == 2TP / (actual + predicted)
    const double f1 = 2.0 * static_cast<double>(tp) / static_cast<double>(actual + predicted);
    out.per_class_f1[c] = f1;
    out.counted[c] = true;
    sum += f1;
    ++counted;
  }
  out.macro_f1 = counted > 0 ? sum / counted : 0.0;
  return out;
}

EvalResult evaluate(const TrainedModel& model, const Dataset& test, const InferenceConfig& config) {
  const auto predictions = predict_all(model, test, config);
  return macro_f1(predictions, test.labels(), test.num_classes());
}

}  // namespace dml
