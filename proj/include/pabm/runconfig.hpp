#pragma once

#include <set>
#include <string>
#include <vector>

#include <json.hpp>

#include "pabm/checkpoint.hpp"
#include "pabm/train.hpp"

namespace pabm {

// Everything a run needs: model config plus training, data and output
// settings. Serialized as a single flat JSON document; unknown keys are
// rejected, every field has a default.
struct RunConfig {
  ModelConfig model;
  size_t epochs = 50;
  size_t batch_size = 16;
  double lr_max = 1e-3;
  double lr_min = 1e-6;
  double weight_decay = 0.05;
  uint64_t seed = 0;
  bool augment_rotate = true;
  bool augment_scale = false;
  bool augment_translate = false;
  std::string dataset = "synthetic";  // "synthetic" or a labels-manifest path
  std::string eval_dataset = "";      // optional test manifest
  std::string kinds = "sphere,cube,torus,cylinder,cone,plane";
  size_t samples_per_class = 50;
  double noise_sigma = 0.02;
  uint64_t data_seed = 42;
  std::string out_dir = "run";
  size_t save_every = 0;  // checkpoints every k epochs; 0 = final only
  std::string init = "";  // checkpoint to initialize weights from

  TrainOptions train_options() const {
    TrainOptions t;
    t.epochs = epochs;
    t.batch_size = batch_size;
    t.lr_max = lr_max;
    t.lr_min = lr_min;
    t.weight_decay = weight_decay;
    t.seed = seed;
    t.augment.rotate = augment_rotate;
    t.augment.scale = augment_scale;
    t.augment.translate = augment_translate;
    return t;
  }

  std::vector<std::string> kind_list() const {
    std::vector<std::string> out;
    std::string cur;
    for (char c : kinds) {
      if (c == ',') {
        if (!cur.empty()) out.push_back(cur);
        cur.clear();
      } else {
        cur.push_back(c);
      }
    }
    if (!cur.empty()) out.push_back(cur);
    check_usage(!out.empty(), "config: kinds list is empty");
    return out;
  }
};

inline json run_config_to_json(const RunConfig& c) {
  json j = model_config_to_json(c.model);
  j["epochs"] = c.epochs;
  j["batch_size"] = c.batch_size;
  j["lr_max"] = c.lr_max;
  j["lr_min"] = c.lr_min;
  j["weight_decay"] = c.weight_decay;
  j["seed"] = c.seed;
  j["augment_rotate"] = c.augment_rotate;
  j["augment_scale"] = c.augment_scale;
  j["augment_translate"] = c.augment_translate;
  j["dataset"] = c.dataset;
  j["eval_dataset"] = c.eval_dataset;
  j["kinds"] = c.kinds;
  j["samples_per_class"] = c.samples_per_class;
  j["noise_sigma"] = c.noise_sigma;
  j["data_seed"] = c.data_seed;
  j["out_dir"] = c.out_dir;
  j["save_every"] = c.save_every;
  j["init"] = c.init;
  return j;
}

inline const std::set<std::string>& run_config_keys() {
  static const std::set<std::string> keys = [] {
    std::set<std::string> k;
    json defaults = run_config_to_json(RunConfig{});
    for (const auto& [key, _] : defaults.items()) k.insert(key);
    return k;
  }();
  return keys;
}

// Partial documents are fine (missing keys keep defaults); unknown keys are
// an error. Returns the parsed config; `present` collects which keys the
// document actually set.
inline RunConfig run_config_from_json(const json& j, std::set<std::string>* present = nullptr) {
  check_usage(j.is_object(), "config: top-level JSON must be an object");
  for (const auto& [key, _] : j.items())
    check_usage(run_config_keys().count(key) > 0, "config: unknown key: " + key);
  RunConfig c;
  json merged = run_config_to_json(c);
  for (const auto& [key, val] : j.items()) {
    merged[key] = val;
    if (present) present->insert(key);
  }
  c.model = model_config_from_json(merged);
  c.epochs = merged.at("epochs").get<size_t>();
  c.batch_size = merged.at("batch_size").get<size_t>();
  c.lr_max = merged.at("lr_max").get<double>();
  c.lr_min = merged.at("lr_min").get<double>();
  c.weight_decay = merged.at("weight_decay").get<double>();
  c.seed = merged.at("seed").get<uint64_t>();
  c.augment_rotate = merged.at("augment_rotate").get<bool>();
  c.augment_scale = merged.at("augment_scale").get<bool>();
  c.augment_translate = merged.at("augment_translate").get<bool>();
  c.dataset = merged.at("dataset").get<std::string>();
  c.eval_dataset = merged.at("eval_dataset").get<std::string>();
  c.kinds = merged.at("kinds").get<std::string>();
  c.samples_per_class = merged.at("samples_per_class").get<size_t>();
  c.noise_sigma = merged.at("noise_sigma").get<double>();
  c.data_seed = merged.at("data_seed").get<uint64_t>();
  c.out_dir = merged.at("out_dir").get<std::string>();
  c.save_every = merged.at("save_every").get<size_t>();
  c.init = merged.at("init").get<std::string>();
  check_usage(c.batch_size >= 1, "config: batch_size must be >= 1");
  return c;
}

}  // namespace pabm
