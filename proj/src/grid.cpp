#include "dml/grid.hpp"

#include <atomic>
#include <cmath>
#include <mutex>
#include <numeric>
#include <thread>

#include "dml/significance.hpp"

namespace dml {

namespace {

// Stream id for per-fold training seeds. Every model trained on a fold shares
// this seed, so compared losses start from the same initialization.
constexpr std::uint64_t kTrainStream = 0x747261696eULL;

const std::vector<double> kPaperBetas{0.1, 0.3, 0.5, 0.7, 0.9};

template <typename T>
void require_non_empty(const std::vector<T>& xs, const char* name) {
  if (xs.empty()) throw ConfigError(std::string("grid: empty value list for ") + name);
}

nlohmann::ordered_json hyperparameters_of(const LossConfig& c) {
  nlohmann::ordered_json j = nlohmann::ordered_json::object();
  switch (c.kind) {
    case LossKind::CCE:
      return j;
    case LossKind::Triplet:
      j["m"] = c.margin;
      break;
    case LossKind::NPairs:
      break;
    case LossKind::SupCon:
      j["tau"] = c.temperature;
      break;
    case LossKind::ProxyNCA:
      j["softmax_scale"] = c.softmax_scale;
      break;
    case LossKind::SoftTriple:
      j["k"] = c.st_proxies;
      j["gamma"] = c.st_gamma;
      j["lambda"] = c.st_lambda;
      j["delta"] = c.st_delta;
      break;
    case LossKind::ProxyAnchor:
      j["alpha"] = c.pa_alpha;
      j["delta"] = c.pa_delta;
      break;
  }
  j["beta"] = c.beta;
  return j;
}

struct FoldScore {
  bool ok = false;
  double dense = 0;
  std::optional<double> blended;
};

}  // namespace

void GridSpec::validate() const {
  require_non_empty(betas, "beta");
  switch (kind) {
    case LossKind::CCE:
    case LossKind::NPairs:
      break;
    case LossKind::Triplet:
      require_non_empty(margins, "m");
      break;
    case LossKind::SupCon:
      require_non_empty(temperatures, "tau");
      break;
    case LossKind::ProxyNCA:
      require_non_empty(scales, "softmax scale");
      break;
    case LossKind::SoftTriple:
      require_non_empty(st_proxies, "k");
      require_non_empty(st_gammas, "gamma");
      require_non_empty(st_lambdas, "lambda");
      require_non_empty(st_deltas, "delta");
      break;
    case LossKind::ProxyAnchor:
      require_non_empty(pa_alphas, "alpha");
      require_non_empty(pa_deltas, "delta");
      break;
  }
}

std::vector<LossConfig> GridSpec::enumerate(const LossConfig& base) const {
  validate();
  LossConfig proto = base;
  proto.kind = kind;
  std::vector<LossConfig> out;
  if (kind == LossKind::CCE) {
    out.push_back(proto);
    return out;
  }
  auto with_betas = [&](LossConfig c) {
    for (double b : betas) {
      c.beta = b;
      out.push_back(c);
    }
  };
  switch (kind) {
    case LossKind::CCE:
      break;
    case LossKind::Triplet:
      for (double m : margins) {
        proto.margin = m;
        with_betas(proto);
      }
      break;
    case LossKind::NPairs:
      with_betas(proto);
      break;
    case LossKind::SupCon:
      for (double t : temperatures) {
        proto.temperature = t;
        with_betas(proto);
      }
      break;
    case LossKind::ProxyNCA:
      for (double s : scales) {
        proto.softmax_scale = s;
        with_betas(proto);
      }
      break;
    case LossKind::SoftTriple:
      for (int k : st_proxies) {
        for (double g : st_gammas) {
          for (double l : st_lambdas) {
            for (double d : st_deltas) {
              proto.st_proxies = k;
              proto.st_gamma = g;
              proto.st_lambda = l;
              proto.st_delta = d;
              with_betas(proto);
            }
          }
        }
      }
      break;
    case LossKind::ProxyAnchor:
      for (double a : pa_alphas) {
        for (double d : pa_deltas) {
          proto.pa_alpha = a;
          proto.pa_delta = d;
          with_betas(proto);
        }
      }
      break;
  }
  return out;
}

std::size_t GridSpec::size() const {
  validate();
  const std::size_t b = betas.size();
  switch (kind) {
    case LossKind::CCE:
      return 1;
    case LossKind::Triplet:
      return margins.size() * b;
    case LossKind::NPairs:
      return b;
    case LossKind::SupCon:
      return temperatures.size() * b;
    case LossKind::ProxyNCA:
      return scales.size() * b;
    case LossKind::SoftTriple:
      return st_proxies.size() * st_gammas.size() * st_lambdas.size() * st_deltas.size() * b;
    case LossKind::ProxyAnchor:
      return pa_alphas.size() * pa_deltas.size() * b;
  }
  return 0;
}

GridSpec paper_grid(LossKind kind) {
  GridSpec g;
  g.kind = kind;
  g.betas = kPaperBetas;
  g.margins = {1, 3, 5, 7, 9};
  g.temperatures = {0.1, 0.3, 0.5, 0.7, 0.9};
  g.scales = {0.4, 0.6, 0.8, 1, 1.2, 1.4, 1.6, 1.8, 2, 3, 5};
  g.st_proxies = {5, 25, 1000, 2000};
  g.st_gammas = {0.01, 0.03, 0.05, 0.07, 0.1};
  g.st_lambdas = {1, 3, 3.3, 4, 6, 8, 10};
  g.st_deltas = {0.1, 0.3, 0.5, 0.7, 0.9, 1};
  g.pa_alphas = {16, 32, 64, 128};
  g.pa_deltas = {0, 0.1, 0.3, 0.5, 0.7, 0.9};
  return g;
}

GridSpec desk_grid(LossKind kind) {
  GridSpec g = paper_grid(kind);
  g.scales = {0.4, 1, 2, 3, 5};
  g.st_proxies = {5, 25};
  g.st_gammas = {0.1};
  g.st_lambdas = {4};
  g.st_deltas = {0.1, 0.3};
  g.pa_alphas = {16, 32, 64, 128};
  g.pa_deltas = {0.1};
  return g;
}

std::uint64_t fold_training_seed(std::uint64_t master_seed, std::size_t fold) {
  return derive_seed(master_seed, fold, kTrainStream);
}

std::pair<double, double> mean_std(const std::vector<double>& xs) {
  if (xs.empty()) return {0.0, 0.0};
  const double mean = std::accumulate(xs.begin(), xs.end(), 0.0) / static_cast<double>(xs.size());
  if (xs.size() < 2) return {mean, 0.0};
  double ss = 0;
  for (double x : xs) ss += (x - mean) * (x - mean);
  return {mean, std::sqrt(ss / static_cast<double>(xs.size() - 1))};
}

ExperimentReport run_grid(const Dataset& data, const FoldPlan& plan, const std::vector<GridSpec>& grids,
                          const GridOptions& options) {
  data.validate();
  if (plan.folds.empty()) throw ConfigError("run_grid: empty fold plan");
  if (options.workers < 1) throw ConfigError("run_grid: workers must be >= 1");
  options.blend.validate();

  // Item 0 is the CCE baseline; the rest are grid points in grid order.
  struct Item {
    LossConfig loss;
    int grid = -1;
  };
  std::vector<Item> items;
  LossConfig baseline = options.train.loss;
  baseline.kind = LossKind::CCE;
  baseline.dml_only = false;
  items.push_back({baseline, -1});
  std::vector<std::pair<std::size_t, std::size_t>> grid_span;  // [first item, end item)
  for (std::size_t g = 0; g < grids.size(); ++g) {
    if (grids[g].kind == LossKind::CCE) throw ConfigError("run_grid: CCE is the built-in baseline");
    const std::size_t first = items.size();
    for (const auto& c : grids[g].enumerate(options.train.loss)) items.push_back({c, static_cast<int>(g)});
    grid_span.emplace_back(first, items.size());
  }

  std::vector<Dataset> train_sets;
  std::vector<Dataset> test_sets;
  for (const auto& fold : plan.folds) {
    train_sets.push_back(data.subset(fold.fewshot));
    test_sets.push_back(data.subset(fold.test));
  }

  const std::size_t n_folds = plan.folds.size();
  std::vector<FoldScore> scores(items.size() * n_folds);
  std::atomic<std::size_t> next{0};
  std::mutex error_mutex;
  std::exception_ptr fatal;
  auto worker = [&] {
    for (;;) {
      const std::size_t job = next.fetch_add(1);
      if (job >= scores.size()) return;
      const std::size_t item = job / n_folds;
      const std::size_t fold = job % n_folds;
      TrainConfig config = options.train;
      config.loss = items[item].loss;
      config.seed = fold_training_seed(plan.master_seed, fold);
      FoldScore& out = scores[job];
      try {
        const TrainedModel model = train(train_sets[fold], config);
        out.dense = evaluate(model, test_sets[fold], {InferenceMode::DenseOnly, 1.0}).macro_f1;
        if (model.proxies) {
          InferenceConfig blend = options.blend;
          if (model.proxies->proxies_per_class > 1) {
            blend.mode = options.softtriple_max_over_k ? InferenceMode::BlendedMaxOverK : InferenceMode::DenseOnly;
          }
          if (blend.mode != InferenceMode::DenseOnly) out.blended = evaluate(model, test_sets[fold], blend).macro_f1;
        }
        out.ok = true;
      } catch (const DivergenceError&) {
        out.ok = false;
      } catch (...) {
        std::lock_guard lock(error_mutex);
        if (!fatal) fatal = std::current_exception();
      }
    }
  };
  {
    std::vector<std::jthread> pool;
    for (int w = 0; w < options.workers; ++w) pool.emplace_back(worker);
  }
  if (fatal) std::rethrow_exception(fatal);

  auto fold_scores = [&](std::size_t item, bool blended) {
    std::vector<double> out;
    for (std::size_t f = 0; f < n_folds; ++f) {
      const auto& s = scores[item * n_folds + f];
      out.push_back(blended ? s.blended.value_or(0.0) : s.dense);
    }
    return out;
  };
  auto item_ok = [&](std::size_t item) {
    for (std::size_t f = 0; f < n_folds; ++f) {
      if (!scores[item * n_folds + f].ok) return false;
    }
    return true;
  };

  ExperimentReport report;
  report.master_seed = plan.master_seed;
  report.n_folds = static_cast<int>(n_folds);
  if (!item_ok(0)) throw DivergenceError("run_grid: the CCE baseline diverged");

  const auto make_row = [&](std::string label, const LossConfig& loss, bool blended) {
    ReportRow row;
    row.label = std::move(label);
    row.loss = std::string(to_string(loss.kind));
    row.blended = blended;
    row.dataset = data.name;
    row.shots = plan.shot_label();
    row.hyperparameters = hyperparameters_of(loss);
    return row;
  };

  ReportRow base_row = make_row("CCE", baseline, false);
  base_row.fold_scores = fold_scores(0, false);
  std::tie(base_row.mean, base_row.stddev) = mean_std(base_row.fold_scores);
  base_row.grid_points = 1;
  const std::vector<double> baseline_scores = base_row.fold_scores;
  report.rows.push_back(std::move(base_row));

  auto finish = [&](ReportRow& row) {
    std::tie(row.mean, row.stddev) = mean_std(row.fold_scores);
    if (!row.fold_scores.empty()) {
      row.p_value = paired_significance(row.fold_scores, baseline_scores);
      row.starred = *row.p_value < 0.05;
    }
  };

  for (std::size_t g = 0; g < grids.size(); ++g) {
    const auto [first, end] = grid_span[g];
    std::optional<std::size_t> best;
    double best_mean = -1;
    int failed = 0;
    for (std::size_t item = first; item < end; ++item) {
      if (!item_ok(item)) {
        ++failed;
        continue;
      }
      const double mean = mean_std(fold_scores(item, false)).first;
      if (mean > best_mean) {
        best_mean = mean;
        best = item;
      }
    }
    const LossConfig& chosen = best ? items[*best].loss : items[first].loss;
    const std::string name = "CCE + " + std::string(display_name(grids[g].kind));
    ReportRow row = make_row(name, chosen, false);
    row.grid_points = static_cast<int>(end - first);
    row.failed_points = failed;
    if (best) row.fold_scores = fold_scores(*best, false);
    finish(row);
    report.rows.push_back(row);

    const bool has_blend = best && scores[*best * n_folds].blended.has_value();
    if (has_blend) {
      ReportRow inf = make_row(name + " + inf", chosen, true);
      inf.grid_points = row.grid_points;
      inf.failed_points = failed;
      inf.fold_scores = fold_scores(*best, true);
      inf.hyperparameters["beta_inf"] = options.blend.beta;
      finish(inf);
      report.rows.push_back(inf);
    }
  }

  const TrainConfig& t = options.train;
  auto& d = report.decisions;
  d["split"] = "repeated shuffled train/test split, test fraction " + std::to_string(plan.test_fraction);
  d["fewshot_sampling"] = "stratified, proportional quotas with largest-remainder rounding";
  d["f1"] = "macro";
  d["std"] = "sample (n - 1)";
  d["significance"] = "two-sided paired t-test against CCE, star when p < 0.05";
  d["optimizer"] = {{"name", "AdamW"}, {"beta1", t.adam_beta1}, {"beta2", t.adam_beta2}, {"epsilon", t.adam_epsilon},
                    {"weight_decay", t.weight_decay}, {"warmup_fraction", t.warmup_fraction},
                    {"schedule", "linear warmup then linear decay"}};
  d["grad_clip_norm"] = t.clip_norm;
  d["learning_rate"] = t.learning_rate;
  d["epochs"] = t.epochs;
  d["batch_size"] = t.batch_size;
  d["encoder"] = {{"vocab", t.encoder.vocab}, {"embed", t.encoder.embed}, {"dim", t.encoder.dim}};
  d["proxy_renormalization"] = "unit L2 norm after every step for ProxyNCA, SoftTriple, ProxyAnchor";
  d["proxy_learning_rate"] = "same as encoder";
  d["proxynca_normalize_inputs"] = t.loss.normalize;
  d["softtriple_normalize_inputs"] = t.loss.normalize;
  d["npairs_negatives"] = "cross-class rows only";
  d["mining_cap"] = t.loss.mining_cap;
  d["blended_inference_beta"] = options.blend.beta;
  d["softtriple_inference"] = options.softtriple_max_over_k ? "max cosine over k" : "dense only";
  d["model_selection"] = "best mean dense macro-F1; +inf rows reuse the selected models";
  d["seeds"] = "per-fold training seed shared by all compared models";
  return report;
}

}  // namespace dml
