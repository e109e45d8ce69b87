#include "dml/serialize.hpp"

#include <fstream>

#include "dml/checkpoint.hpp"

namespace dml {

namespace {

template <typename T>
void read_if(const Json& j, const char* key, T& out) {
  if (j.contains(key)) out = j.at(key).get<T>();
}

}  // namespace

Json to_json(const LossConfig& c) {
  Json j;
  j["kind"] = std::string(to_string(c.kind));
  j["margin"] = c.margin;
  j["temperature"] = c.temperature;
  j["softmax_scale"] = c.softmax_scale;
  j["st_lambda"] = c.st_lambda;
  j["st_gamma"] = c.st_gamma;
  j["st_delta"] = c.st_delta;
  j["st_proxies"] = c.st_proxies;
  j["pa_alpha"] = c.pa_alpha;
  j["pa_delta"] = c.pa_delta;
  j["beta"] = c.beta;
  j["normalize"] = c.normalize;
  j["dml_only"] = c.dml_only;
  j["mining_cap"] = c.mining_cap;
  return j;
}

LossConfig loss_config_from_json(const Json& j) {
  try {
    LossConfig c;
    if (j.contains("kind")) c.kind = parse_loss_kind(j.at("kind").get<std::string>());
    read_if(j, "margin", c.margin);
    read_if(j, "temperature", c.temperature);
    read_if(j, "softmax_scale", c.softmax_scale);
    read_if(j, "st_lambda", c.st_lambda);
    read_if(j, "st_gamma", c.st_gamma);
    read_if(j, "st_delta", c.st_delta);
    read_if(j, "st_proxies", c.st_proxies);
    read_if(j, "pa_alpha", c.pa_alpha);
    read_if(j, "pa_delta", c.pa_delta);
    read_if(j, "beta", c.beta);
    read_if(j, "normalize", c.normalize);
    read_if(j, "dml_only", c.dml_only);
    read_if(j, "mining_cap", c.mining_cap);
    return c;
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("loss config: ") + e.what());
  }
}

Json to_json(const TrainConfig& c) {
  Json j;
  j["batch_size"] = c.batch_size;
  j["learning_rate"] = c.learning_rate;
  j["epochs"] = c.epochs;
  j["warmup_fraction"] = c.warmup_fraction;
  j["weight_decay"] = c.weight_decay;
  j["seed"] = c.seed;
  j["clip_norm"] = c.clip_norm;
  j["adam_beta1"] = c.adam_beta1;
  j["adam_beta2"] = c.adam_beta2;
  j["adam_epsilon"] = c.adam_epsilon;
  j["encoder"] = {{"vocab", c.encoder.vocab}, {"embed", c.encoder.embed}, {"dim", c.encoder.dim}};
  j["loss"] = to_json(c.loss);
  return j;
}

TrainConfig train_config_from_json(const Json& j) {
  try {
    TrainConfig c;
    read_if(j, "batch_size", c.batch_size);
    read_if(j, "learning_rate", c.learning_rate);
    read_if(j, "epochs", c.epochs);
    read_if(j, "warmup_fraction", c.warmup_fraction);
    read_if(j, "weight_decay", c.weight_decay);
    read_if(j, "seed", c.seed);
    read_if(j, "clip_norm", c.clip_norm);
    read_if(j, "adam_beta1", c.adam_beta1);
    read_if(j, "adam_beta2", c.adam_beta2);
    read_if(j, "adam_epsilon", c.adam_epsilon);
    if (j.contains("encoder")) {
      const auto& e = j.at("encoder");
      read_if(e, "vocab", c.encoder.vocab);
      read_if(e, "embed", c.encoder.embed);
      read_if(e, "dim", c.encoder.dim);
    }
    if (j.contains("loss")) c.loss = loss_config_from_json(j.at("loss"));
    return c;
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("train config: ") + e.what());
  }
}

Json training_log(const TrainedModel& model, const TrainConfig& config) {
  Json j;
  j["steps"] = Json::array();
  for (const auto& entry : model.trace) j["steps"].push_back({{"step", entry.step}, {"loss", entry.loss}});
  j["config"] = to_json(config);
  return j;
}

Json to_json(const EvalResult& r) {
  Json j;
  j["macro_f1"] = r.macro_f1;
  j["per_class_f1"] = Json::array();
  for (std::size_t c = 0; c < r.per_class_f1.size(); ++c) {
    j["per_class_f1"].push_back(r.counted[c] ? Json(r.per_class_f1[c]) : Json(nullptr));
  }
  j["confusion"] = r.confusion;
  j["n_test"] = r.n_test;
  return j;
}

Json to_json(const FoldPlan& plan) {
  Json j;
  j["master_seed"] = plan.master_seed;
  j["n_folds"] = plan.n_folds;
  j["shot_size"] = plan.shot_size ? Json(*plan.shot_size) : Json("full");
  j["test_fraction"] = plan.test_fraction;
  j["folds"] = Json::array();
  for (const auto& f : plan.folds) {
    j["folds"].push_back({{"train", f.train}, {"test", f.test}, {"fewshot", f.fewshot}});
  }
  return j;
}

FoldPlan fold_plan_from_json(const Json& j) {
  try {
    FoldPlan plan;
    plan.master_seed = j.at("master_seed").get<std::uint64_t>();
    plan.n_folds = j.at("n_folds").get<int>();
    const auto& shots = j.at("shot_size");
    if (shots.is_string()) {
      plan.shot_size = parse_shots(shots.get<std::string>());
    } else {
      plan.shot_size = shots.get<int>();
    }
    plan.test_fraction = j.at("test_fraction").get<double>();
    for (const auto& f : j.at("folds")) {
      plan.folds.push_back({f.at("train").get<std::vector<std::size_t>>(), f.at("test").get<std::vector<std::size_t>>(),
                            f.at("fewshot").get<std::vector<std::size_t>>()});
    }
    return plan;
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("fold plan: ") + e.what());
  }
}

Json read_json(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  try {
    return Json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(path.string() + ": " + e.what());
  }
}

void write_json(const std::filesystem::path& path, const Json& j) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  out << j.dump(2) << '\n';
  if (!out) throw IoError("write failed: " + path.string());
}

void save_model(const std::filesystem::path& dir, const TrainedModel& model, const TrainConfig& config) {
  std::filesystem::create_directories(dir);
  save_encoder(dir / "encoder.enc", model.encoder);
  if (model.proxies) save_proxy_bank(dir / "proxies.pxb", *model.proxies);
  write_json(dir / "train_log.json", training_log(model, config));
}

TrainedModel load_model(const std::filesystem::path& dir) {
  TrainedModel model;
  model.encoder = load_encoder(dir / "encoder.enc");
  if (std::filesystem::exists(dir / "proxies.pxb")) model.proxies = load_proxy_bank(dir / "proxies.pxb");
  const Json log = read_json(dir / "train_log.json");
  model.loss = train_config_from_json(log.at("config")).loss;
  for (const auto& s : log.at("steps")) model.trace.push_back({s.at("step").get<int>(), s.at("loss").get<double>()});
  return model;
}

}  // namespace dml
