#pragma once

#include <filesystem>

#include "dml/eval.hpp"
#include "dml/folds.hpp"
#include "dml/trainer.hpp"

#include "json.hpp"

namespace dml {

using Json = nlohmann::ordered_json;

Json to_json(const LossConfig& config);
LossConfig loss_config_from_json(const Json& j);
Json to_json(const TrainConfig& config);
TrainConfig train_config_from_json(const Json& j);

/// {"steps": [{"step": int, "loss": float}], "config": {...}}
Json training_log(const TrainedModel& model, const TrainConfig& config);

/// {"macro_f1": float, "per_class_f1": [...], "confusion": [[...]], "n_test": int}.
/// Classes excluded from the macro average appear as null in per_class_f1.
Json to_json(const EvalResult& result);

Json to_json(const FoldPlan& plan);
FoldPlan fold_plan_from_json(const Json& j);

/// Writes encoder.enc, proxies.pxb (proxy losses only) and train_log.json.
void save_model(const std::filesystem::path& dir, const TrainedModel& model, const TrainConfig& config);
TrainedModel load_model(const std::filesystem::path& dir);

Json read_json(const std::filesystem::path& path);
void write_json(const std::filesystem::path& path, const Json& j);

}  // namespace dml
