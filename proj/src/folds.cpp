#include "dml/folds.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "dml/error.hpp"
#include "dml/rng.hpp"

namespace dml {

std::string FoldPlan::shot_label() const { return shot_size ? std::to_string(*shot_size) : "full"; }

std::optional<int> parse_shots(const std::string& text) {
  if (text == "full") return std::nullopt;
  std::size_t used = 0;
  int value = 0;
  try {
    value = std::stoi(text, &used);
  } catch (const std::exception&) {
    throw ConfigError("shot size must be a positive integer or 'full', got '" + text + "'");
  }
  if (used != text.size() || value < 1) {
    throw ConfigError("shot size must be a positive integer or 'full', got '" + text + "'");
  }
  return value;
}

std::vector<int> stratified_quotas(const std::vector<int>& class_counts, int shots) {
  const long total = std::accumulate(class_counts.begin(), class_counts.end(), 0L);
  std::vector<int> quota(class_counts.size(), 0);
  if (total == 0 || shots <= 0) return quota;
  shots = static_cast<int>(std::min<long>(shots, total));

  std::vector<double> fraction(class_counts.size(), 0.0);
  int assigned = 0;
  for (std::size_t c = 0; c < class_counts.size(); ++c) {
    const double exact = static_cast<double>(shots) * class_counts[c] / static_cast<double>(total);
    quota[c] = static_cast<int>(std::floor(exact));
    fraction[c] = exact - quota[c];
    assigned += quota[c];
  }
  std::vector<std::size_t> order(class_counts.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return fraction[a] > fraction[b]; });
  for (std::size_t i = 0; assigned < shots; i = (i + 1) % order.size()) {
    const std::size_t c = order[i];
    if (quota[c] < class_counts[c]) {
      ++quota[c];
      ++assigned;
    }
  }

  const auto non_empty = static_cast<int>(std::count_if(class_counts.begin(), class_counts.end(), [](int n) { return n > 0; }));
  if (shots >= non_empty) {
    for (std::size_t c = 0; c < class_counts.size(); ++c) {
      if (class_counts[c] == 0 || quota[c] > 0) continue;
      // Take one from the class holding the largest quota (lowest index on ties).
      std::size_t donor = 0;
      for (std::size_t k = 1; k < quota.size(); ++k) {
        if (quota[k] > quota[donor]) donor = k;
      }
      --quota[donor];
      ++quota[c];
    }
  }
  return quota;
}

FoldPlan make_fold_plan(const Dataset& data, std::uint64_t master_seed, const FoldOptions& options) {
  data.validate();
  if (options.n_folds < 1) throw ConfigError("need at least one fold");
  if (data.size() < static_cast<std::size_t>(options.n_folds)) {
    throw ConfigError("dataset has " + std::to_string(data.size()) + " examples, fewer than " +
                      std::to_string(options.n_folds) + " folds");
  }
  if (!(options.test_fraction > 0 && options.test_fraction < 1)) {
    throw ConfigError("test fraction must lie in (0, 1)");
  }
  if (options.shot_size && *options.shot_size < 1) throw ConfigError("shot size must be >= 1");
  if (options.shot_size && options.strict_stratification && *options.shot_size < data.num_classes()) {
    throw ConfigError("stratification: shot size " + std::to_string(*options.shot_size) +
                      " is smaller than the class count " + std::to_string(data.num_classes()));
  }

  const std::size_t n = data.size();
  if (n < 2) throw ConfigError("need at least two examples to split");
  auto n_test = static_cast<std::size_t>(std::llround(options.test_fraction * static_cast<double>(n)));
  n_test = std::clamp<std::size_t>(n_test, 1, n - 1);

  FoldPlan plan;
  plan.master_seed = master_seed;
  plan.n_folds = options.n_folds;
  plan.shot_size = options.shot_size;
  plan.test_fraction = options.test_fraction;
  const auto classes = static_cast<std::size_t>(data.num_classes());

  for (int f = 0; f < options.n_folds; ++f) {
    Rng rng(derive_seed(master_seed, static_cast<std::uint64_t>(f)));
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), std::size_t{0});
    rng.shuffle(order);

    Fold fold;
    fold.test.assign(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(n_test));
    fold.train.assign(order.begin() + static_cast<std::ptrdiff_t>(n_test), order.end());
    std::sort(fold.test.begin(), fold.test.end());
    std::sort(fold.train.begin(), fold.train.end());

    if (!options.shot_size || static_cast<std::size_t>(*options.shot_size) >= fold.train.size()) {
      fold.fewshot = fold.train;
    } else {
      std::vector<std::vector<std::size_t>> by_class(classes);
      for (std::size_t idx : fold.train) by_class[static_cast<std::size_t>(data.examples[idx].label)].push_back(idx);
      std::vector<int> counts;
      for (const auto& members : by_class) counts.push_back(static_cast<int>(members.size()));
      const auto quota = stratified_quotas(counts, *options.shot_size);
      for (std::size_t c = 0; c < classes; ++c) {
        rng.shuffle(by_class[c]);
        fold.fewshot.insert(fold.fewshot.end(), by_class[c].begin(),
                            by_class[c].begin() + quota[c]);
      }
      std::sort(fold.fewshot.begin(), fold.fewshot.end());
    }
    plan.folds.push_back(std::move(fold));
  }
  return plan;
}

}  // namespace dml
