#pragma once

#include <span>
#include <vector>

#include "dml/dataset.hpp"
#include "dml/encoder.hpp"
#include "dml/numeric.hpp"
#include "dml/trainer.hpp"

namespace dml {

enum class InferenceMode {
  DenseOnly,
  /// beta * softmax(dense(z)) + (1 - beta) * cosine(z, proxy_c). One proxy per class.
  Blended,
  /// As Blended, with the class cosine taken as the max over its K proxies.
  BlendedMaxOverK,
};

struct InferenceConfig {
  InferenceMode mode = InferenceMode::DenseOnly;
  double beta = 0.5;

  void validate() const;
};

/// Per-class scores for one representation. Dense-only mode returns the
/// softmax probabilities; blended modes are not renormalized and lie in [-1, 2].
Vec blended_scores(const TrainedModel& model, const Vec& z, const InferenceConfig& config);

/// argmax of blended_scores, ties to the lowest class index.
int predict(const TrainedModel& model, const Vec& z, const InferenceConfig& config);
std::vector<int> predict_all(const TrainedModel& model, const Dataset& data, const InferenceConfig& config);

struct EvalResult {
  double macro_f1 = 0;
  /// F1 of every class; classes absent from both labels and predictions are
  /// excluded from the macro average and marked in `counted`.
  std::vector<double> per_class_f1;
  std::vector<bool> counted;
  std::vector<std::vector<long>> confusion;  // [label][prediction]
  long n_test = 0;
};

EvalResult macro_f1(std::span<const int> predictions, std::span<const int> labels, int classes);

EvalResult evaluate(const TrainedModel& model, const Dataset& test, const InferenceConfig& config);

}  // namespace dml
