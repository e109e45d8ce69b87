#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "dml/dataset.hpp"

namespace dml {

struct Fold {
  std::vector<std::size_t> train;
  std::vector<std::size_t> test;
  std::vector<std::size_t> fewshot;
};

struct FoldPlan {
  std::uint64_t master_seed = 0;
  int n_folds = 40;
  /// Few-shot training size; empty means the whole training split.
  std::optional<int> shot_size;
  double test_fraction = 0.2;
  std::vector<Fold> folds;

  std::string shot_label() const;
};

/// Parses "20", "100", "1000" or "full".
std::optional<int> parse_shots(const std::string& text);

struct FoldOptions {
  int n_folds = 40;
  std::optional<int> shot_size = 20;
  double test_fraction = 0.2;
  /// Reject shot sizes smaller than the class count.
  bool strict_stratification = true;
};

/// Per-class few-shot quotas: proportional to class frequency, remainders by
/// largest fractional part (ties to the lower class), and at least one example
/// for every non-empty class when `shots` allows it.
std::vector<int> stratified_quotas(const std::vector<int>& class_counts, int shots);

/// Seeded repeated 80/20 splits with a stratified few-shot sample of each
/// training split. Fold f draws from its own stream derive_seed(master, f).
FoldPlan make_fold_plan(const Dataset& data, std::uint64_t master_seed, const FoldOptions& options);

}  // namespace dml
