#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "dml/dataset.hpp"
#include "dml/eval.hpp"
#include "dml/folds.hpp"
#include "dml/losses.hpp"
#include "dml/trainer.hpp"

#include "json.hpp"

namespace dml {

/// Value lists for every hyperparameter of one loss. Lists that the loss does
/// not read are ignored; `betas` is always enumerated.
struct GridSpec {
  LossKind kind = LossKind::CCE;
  std::vector<double> margins;        // Triplet m
  std::vector<double> temperatures;   // SupCon tau
  std::vector<double> scales;         // ProxyNCA softmax scale
  std::vector<int> st_proxies;        // SoftTriple k
  std::vector<double> st_gammas;
  std::vector<double> st_lambdas;
  std::vector<double> st_deltas;
  std::vector<double> pa_alphas;
  std::vector<double> pa_deltas;
  std::vector<double> betas;

  /// Every configuration of the grid, `base` supplying unlisted fields.
  /// Order: the hyperparameter lists nest in declaration order, beta innermost.
  std::vector<LossConfig> enumerate(const LossConfig& base = {}) const;
  std::size_t size() const;
  void validate() const;
};

/// The published search space for `kind`.
GridSpec paper_grid(LossKind kind);
/// Subsample of the published space with at most 25 points (beta list kept whole).
GridSpec desk_grid(LossKind kind);

struct ReportRow {
  std::string label;            // "CCE", "CCE + Triplet", "CCE + ProxyAnchor + inf"
  std::string loss;             // cli name of the training loss
  bool blended = false;         // evaluated with proxy-blended inference
  std::string dataset;
  std::string shots;
  std::vector<double> fold_scores;  // macro-F1 in [0, 1], one per fold
  double mean = 0;
  double stddev = 0;                // sample standard deviation (n - 1)
  std::optional<double> p_value;    // paired t-test against the CCE row
  bool starred = false;             // p_value < 0.05
  nlohmann::ordered_json hyperparameters = nlohmann::ordered_json::object();
  int grid_points = 0;
  int failed_points = 0;
};

struct ExperimentReport {
  std::uint64_t master_seed = 0;
  int n_folds = 0;
  std::vector<ReportRow> rows;
  /// Every choice in force for the run that the method description leaves open.
  nlohmann::ordered_json decisions = nlohmann::ordered_json::object();
};

struct GridOptions {
  TrainConfig train;              // learning rate, epochs, encoder dims, ...; loss fields are overwritten
  InferenceConfig blend{InferenceMode::Blended, 0.5};
  /// Produce a "+inf" row for SoftTriple using the max cosine over each class's proxies.
  bool softtriple_max_over_k = false;
  int workers = 1;
};

/// Mean and sample standard deviation.
/// Training seed for every model fit on fold `fold`; shared across grid points.
std::uint64_t fold_training_seed(std::uint64_t master_seed, std::size_t fold);

std::pair<double, double> mean_std(const std::vector<double>& xs);

/// Trains every grid point on every fold's few-shot sample, scores macro-F1 on
/// the fold's test split and keeps the grid point with the best mean. The
/// pure-CCE baseline runs on the same folds and every other row carries its
/// paired p-value against it. Grid points with a diverged fold are excluded.
ExperimentReport run_grid(const Dataset& data, const FoldPlan& plan, const std::vector<GridSpec>& grids,
                          const GridOptions& options);

}  // namespace dml
