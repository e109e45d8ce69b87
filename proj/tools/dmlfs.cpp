// dmlfs: few-shot text classification with metric-learning losses.

#include <CLI11.hpp>

#include <cstdio>
#include <fstream>
#include <iostream>
#include <memory>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "dml/checkpoint.hpp"
#include "dml/dataset.hpp"
#include "dml/eval.hpp"
#include "dml/folds.hpp"
#include "dml/gradcheck.hpp"
#include "dml/grid.hpp"
#include "dml/report.hpp"
#include "dml/serialize.hpp"
#include "dml/trainer.hpp"

namespace {

using dml::Json;

// Reads a JSON object into CLI11 config items. Top-level keys naming a
// subcommand hold that subcommand's options; any other key applies to the
// subcommand being run. Flags given on the command line win.
class JsonConfig : public CLI::Config {
 public:
  explicit JsonConfig(const CLI::App* app) : app_(app) {}

  std::string to_config(const CLI::App*, bool, bool, std::string) const override {
    return "{}\n";
  }

  std::vector<CLI::ConfigItem> from_config(std::istream& in) const override {
    Json j;
    try {
      j = Json::parse(in);
    } catch (const Json::parse_error& e) {
      throw CLI::ConversionError(std::string("config: ") + e.what());
    }
    if (!j.is_object()) throw CLI::ConversionError("config: top level must be an object");
    std::vector<std::string> active;
    for (const CLI::App* sub : app_->get_subcommands()) active.push_back(sub->get_name());
    std::vector<CLI::ConfigItem> items;
    for (const auto& [key, value] : j.items()) {
      if (value.is_object()) {
        for (const auto& [k, v] : value.items()) items.push_back(item({key}, k, v));
      } else {
        items.push_back(item(active, key, value));
      }
    }
    return items;
  }

 private:
  static std::string scalar(const Json& v) {
    if (v.is_string()) return v.get<std::string>();
    if (v.is_boolean()) return v.get<bool>() ? "true" : "false";
    return v.dump();
  }

  static CLI::ConfigItem item(std::vector<std::string> parents, std::string name, const Json& v) {
    for (char& c : name) {
      if (c == '_') c = '-';
    }
    CLI::ConfigItem out;
    out.parents = std::move(parents);
    out.name = std::move(name);
    if (v.is_array()) {
      for (const auto& x : v) out.inputs.push_back(scalar(x));
    } else {
      out.inputs.push_back(scalar(v));
    }
    return out;
  }

  const CLI::App* app_;
};

struct DataFlags {
  std::string path;
  dml::SynthSpec synth;
};

void add_data_flags(CLI::App* app, DataFlags& f) {
  app->add_option("--data", f.path, "TSV dataset (label<TAB>text); synthetic data when omitted");
  app->add_option("--synth-classes", f.synth.classes, "synthetic class count")->capture_default_str();
  app->add_option("--synth-examples", f.synth.examples, "synthetic example count")->capture_default_str();
  app->add_option("--synth-noise", f.synth.noise, "synthetic noise-token probability")->capture_default_str();
  app->add_option("--synth-seed", f.synth.seed, "synthetic generator seed")->capture_default_str();
}

dml::Dataset load_data(const DataFlags& f) {
  if (!f.path.empty()) return dml::load_dataset(f.path);
  return dml::synth_dataset(f.synth);
}

struct LossFlags {
  dml::LossConfig config;
  std::string loss = "cce";
  bool raw_inputs = false;
};

void add_loss_flags(CLI::App* app, LossFlags& f) {
  auto& c = f.config;
  app->add_option("--loss", f.loss, "cce|triplet|npairs|supcon|proxynca|softtriple|proxyanchor")
      ->capture_default_str();
  app->add_option("--beta", c.beta, "CCE weight in the combined objective")->capture_default_str();
  app->add_option("--margin", c.margin, "Triplet margin m")->capture_default_str();
  app->add_option("--tau", c.temperature, "SupCon temperature")->capture_default_str();
  app->add_option("--softmax-scale", c.softmax_scale, "ProxyNCA softmax scale")->capture_default_str();
  app->add_option("--st-k", c.st_proxies, "SoftTriple proxies per class")->capture_default_str();
  app->add_option("--st-gamma", c.st_gamma, "SoftTriple gamma")->capture_default_str();
  app->add_option("--st-lambda", c.st_lambda, "SoftTriple lambda")->capture_default_str();
  app->add_option("--st-delta", c.st_delta, "SoftTriple delta")->capture_default_str();
  app->add_option("--pa-alpha", c.pa_alpha, "ProxyAnchor alpha")->capture_default_str();
  app->add_option("--pa-delta", c.pa_delta, "ProxyAnchor delta")->capture_default_str();
  app->add_option("--mining-cap", c.mining_cap, "triplets or pairs per batch")->capture_default_str();
  app->add_flag("--raw-inputs", f.raw_inputs, "ProxyNCA/SoftTriple on unnormalized inputs");
}

dml::LossConfig loss_config(const LossFlags& f) {
  dml::LossConfig c = f.config;
  c.kind = dml::parse_loss_kind(f.loss);
  c.normalize = !f.raw_inputs;
  return c;
}

void add_train_flags(CLI::App* app, dml::TrainConfig& t) {
  app->add_option("--batch-size", t.batch_size)->capture_default_str();
  app->add_option("--lr", t.learning_rate, "base learning rate")->capture_default_str();
  app->add_option("--epochs", t.epochs)->capture_default_str();
  app->add_option("--warmup", t.warmup_fraction, "warmup fraction of steps")->capture_default_str();
  app->add_option("--weight-decay", t.weight_decay)->capture_default_str();
  app->add_option("--clip-norm", t.clip_norm, "global gradient norm cap")->capture_default_str();
  app->add_option("--vocab", t.encoder.vocab, "hash buckets")->capture_default_str();
  app->add_option("--embed-dim", t.encoder.embed, "token embedding width")->capture_default_str();
  app->add_option("--dim", t.encoder.dim, "representation width")->capture_default_str();
}

struct PlanFlags {
  std::uint64_t seed = 1;
  int folds = 40;
  std::string shots = "20";
  double test_fraction = 0.2;
  bool loose = false;
};

void add_plan_flags(CLI::App* app, PlanFlags& f) {
  app->add_option("--seed", f.seed, "master seed")->capture_default_str();
  app->add_option("--folds", f.folds, "number of folds")->capture_default_str();
  app->add_option("--shots", f.shots, "20|100|1000|full or any count")->capture_default_str();
  app->add_option("--test-fraction", f.test_fraction)->capture_default_str();
  app->add_flag("--no-strict", f.loose, "allow fewer shots than classes");
}

dml::FoldPlan make_plan(const dml::Dataset& data, const PlanFlags& f) {
  dml::FoldOptions o;
  o.n_folds = f.folds;
  o.shot_size = dml::parse_shots(f.shots);
  o.test_fraction = f.test_fraction;
  o.strict_stratification = !f.loose;
  return dml::make_fold_plan(data, f.seed, o);
}

void write_text(const std::string& path, const std::string& text) {
  if (path.empty() || path == "-") {
    std::cout << text;
    return;
  }
  std::ofstream out(path, std::ios::binary);
  if (!out) throw dml::IoError("cannot write " + path);
  out << text;
  if (!out) throw dml::IoError("write failed: " + path);
}

// Selects the examples a command works on: the whole dataset, or one part of
// one fold of a saved plan.
struct SplitFlags {
  std::string plan;
  int fold = 0;
};

dml::Dataset select(const dml::Dataset& data, const SplitFlags& s, bool test_part) {
  if (s.plan.empty()) return data;
  const dml::FoldPlan plan = dml::fold_plan_from_json(dml::read_json(s.plan));
  if (s.fold < 0 || s.fold >= static_cast<int>(plan.folds.size())) {
    throw dml::ConfigError("fold " + std::to_string(s.fold) + " not in plan");
  }
  const dml::Fold& f = plan.folds[static_cast<std::size_t>(s.fold)];
  return data.subset(test_part ? f.test : f.fewshot);
}

int cmd_gradcheck(const dml::GradcheckOptions& options) {
  const dml::GradcheckReport report = dml::run_gradcheck(options);
  std::printf("%-12s %-13s %9s %8s %12s %12s\n", "loss", "wrt", "instances", "failures", "worst_rel",
              "worst_abs");
  for (const auto& r : report.rows) {
    std::printf("%-12s %-13s %9d %8d %12.3e %12.3e\n", r.loss.c_str(), r.wrt.c_str(), r.instances, r.failures,
                r.worst_rel, r.worst_abs);
  }
  std::printf("%s in %.2f s\n", report.ok() ? "ok" : "FAILED", report.seconds);
  return report.ok() ? 0 : 1;
}

int cmd_grid_enumerate(const std::vector<dml::GridSpec>& grids) {
  std::size_t total = 0;
  for (const auto& g : grids) {
    const std::size_t n = g.enumerate().size();
    total += n;
    std::printf("%-12s %zu\n", std::string(dml::to_string(g.kind)).c_str(), n);
  }
  std::printf("%-12s %zu\n", "total", total);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Few-shot text classification with metric-learning losses"};
  app.require_subcommand(1);
  app.set_config("--config", "", "JSON file of option values; command-line flags override it");
  app.config_formatter(std::make_shared<JsonConfig>(&app));

  // gradcheck
  dml::GradcheckOptions gc;
  auto* gradcheck = app.add_subcommand("gradcheck", "check analytic gradients against finite differences");
  gradcheck->add_option("--instances", gc.instances, "random instances per loss")->capture_default_str();
  gradcheck->add_option("--model-instances", gc.model_instances, "end-to-end instances per loss")
      ->capture_default_str();
  gradcheck->add_option("--seed", gc.seed)->capture_default_str();
  gradcheck->add_option("--step", gc.step, "finite-difference step")->capture_default_str();

  // synth
  dml::SynthSpec synth_spec;
  std::string synth_out;
  auto* synth = app.add_subcommand("synth", "write a synthetic dataset");
  synth->add_option("--classes", synth_spec.classes)->capture_default_str();
  synth->add_option("--examples", synth_spec.examples)->capture_default_str();
  synth->add_option("--signal-tokens", synth_spec.signal_tokens)->capture_default_str();
  synth->add_option("--noise-tokens", synth_spec.noise_tokens)->capture_default_str();
  synth->add_option("--noise", synth_spec.noise)->capture_default_str();
  synth->add_option("--seed", synth_spec.seed)->capture_default_str();
  synth->add_option("-o,--out", synth_out, "output path, stdout when omitted");

  // folds
  DataFlags folds_data;
  PlanFlags folds_plan;
  std::string folds_out;
  auto* folds = app.add_subcommand("folds", "write a fold plan as JSON");
  add_data_flags(folds, folds_data);
  add_plan_flags(folds, folds_plan);
  folds->add_option("-o,--out", folds_out, "output path, stdout when omitted");

  // train
  DataFlags train_data;
  LossFlags train_loss;
  dml::TrainConfig train_cfg;
  SplitFlags train_split;
  std::string train_out;
  auto* train = app.add_subcommand("train", "train one model");
  add_data_flags(train, train_data);
  add_loss_flags(train, train_loss);
  add_train_flags(train, train_cfg);
  train->add_option("--seed", train_cfg.seed, "training seed")->capture_default_str();
  train->add_option("--plan", train_split.plan, "fold plan JSON; trains on the fold's few-shot set");
  train->add_option("--fold", train_split.fold)->capture_default_str();
  train->add_option("-o,--out", train_out, "model directory")->required();

  // eval
  DataFlags eval_data;
  SplitFlags eval_split;
  std::string eval_model;
  std::string eval_out;
  dml::InferenceConfig eval_cfg{dml::InferenceMode::DenseOnly, 0.5};
  bool eval_blended = false;
  bool eval_max_k = false;
  auto* eval = app.add_subcommand("eval", "score a saved model");
  add_data_flags(eval, eval_data);
  eval->add_option("--model", eval_model, "model directory")->required();
  eval->add_option("--plan", eval_split.plan, "fold plan JSON; scores the fold's test set");
  eval->add_option("--fold", eval_split.fold)->capture_default_str();
  eval->add_flag("--blended", eval_blended, "blend dense scores with proxy cosines");
  eval->add_option("--beta-inf", eval_cfg.beta, "dense weight in blended scores")->capture_default_str();
  eval->add_flag("--max-over-k", eval_max_k, "blend multi-proxy banks with the best cosine per class");
  eval->add_option("-o,--out", eval_out, "output path, stdout when omitted");

  // grid
  DataFlags grid_data;
  PlanFlags grid_plan;
  LossFlags grid_loss;
  dml::GridOptions grid_opts;
  std::vector<std::string> grid_losses{"triplet", "npairs", "supcon", "proxynca", "softtriple", "proxyanchor"};
  bool full_grid = false;
  bool enumerate_only = false;
  std::string grid_out;
  auto* grid = app.add_subcommand("grid", "run the fold-by-grid experiment");
  add_data_flags(grid, grid_data);
  add_plan_flags(grid, grid_plan);
  add_train_flags(grid, grid_opts.train);
  grid->add_option("--loss", grid_losses, "losses to search")->capture_default_str();
  grid->add_option("--mining-cap", grid_loss.config.mining_cap)->capture_default_str();
  grid->add_flag("--raw-inputs", grid_loss.raw_inputs, "ProxyNCA/SoftTriple on unnormalized inputs");
  grid->add_flag("--full-grid", full_grid, "search the complete hyperparameter grids");
  grid->add_flag("--enumerate-only", enumerate_only, "print grid sizes and exit");
  grid->add_option("--workers", grid_opts.workers)->capture_default_str();
  grid->add_option("--beta-inf", grid_opts.blend.beta, "dense weight for +inf rows")->capture_default_str();
  grid->add_flag("--max-over-k", grid_opts.softtriple_max_over_k, "+inf rows for multi-proxy SoftTriple");
  grid->add_option("-o,--out", grid_out, "output prefix for .json/.txt/.csv");

  // report
  std::vector<std::string> report_in;
  std::string report_out;
  bool report_csv = false;
  auto* report = app.add_subcommand("report", "render saved reports as a table");
  report->add_option("inputs", report_in, "report JSON files")->required();
  report->add_flag("--csv", report_csv, "print per-fold CSV instead of the table");
  report->add_option("-o,--out", report_out, "re-emit a single report under this prefix");

  for (auto* sub : app.get_subcommands({})) sub->configurable();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  }

  try {
    if (*gradcheck) return cmd_gradcheck(gc);

    if (*synth) {
      std::ostringstream out;
      dml::write_dataset(out, dml::synth_dataset(synth_spec));
      write_text(synth_out, out.str());
      return 0;
    }

    if (*folds) {
      const dml::Dataset data = load_data(folds_data);
      write_text(folds_out, dml::to_json(make_plan(data, folds_plan)).dump(2) + "\n");
      return 0;
    }

    if (*train) {
      train_cfg.loss = loss_config(train_loss);
      const dml::Dataset all = load_data(train_data);
      const dml::Dataset data = select(all, train_split, false);
      const dml::TrainedModel model = dml::train(data, train_cfg);
      dml::save_model(train_out, model, train_cfg);
      std::printf("steps %zu, final loss %.6g\n", model.trace.size(),
                  model.trace.empty() ? 0.0 : model.trace.back().loss);
      return 0;
    }

    if (*eval) {
      if (eval_blended) eval_cfg.mode = eval_max_k ? dml::InferenceMode::BlendedMaxOverK : dml::InferenceMode::Blended;
      const dml::TrainedModel model = dml::load_model(eval_model);
      const dml::Dataset data = select(load_data(eval_data), eval_split, true);
      write_text(eval_out, dml::to_json(dml::evaluate(model, data, eval_cfg)).dump(2) + "\n");
      return 0;
    }

    if (*grid) {
      std::vector<dml::GridSpec> grids;
      for (const auto& name : grid_losses) {
        const dml::LossKind kind = dml::parse_loss_kind(name);
        if (kind == dml::LossKind::CCE) continue;
        grids.push_back(full_grid ? dml::paper_grid(kind) : dml::desk_grid(kind));
      }
      if (enumerate_only) return cmd_grid_enumerate(grids);
      grid_opts.train.loss = loss_config(grid_loss);
      const dml::Dataset data = load_data(grid_data);
      const dml::FoldPlan plan = make_plan(data, grid_plan);
      const dml::ExperimentReport result = dml::run_grid(data, plan, grids, grid_opts);
      if (!grid_out.empty()) dml::emit_report(result, grid_out);
      std::cout << dml::render_table(std::span(&result, 1));
      return 0;
    }

    if (*report) {
      std::vector<dml::ExperimentReport> reports;
      for (const auto& path : report_in) reports.push_back(dml::load_report(path));
      if (!report_out.empty()) {
        if (reports.size() != 1) throw dml::ConfigError("--out takes exactly one input report");
        dml::emit_report(reports.front(), report_out);
      }
      std::cout << (report_csv ? dml::render_csv(reports) : dml::render_table(reports));
      return 0;
    }
  } catch (const dml::Error& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 2;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 2;
  }
  return 0;
}
