#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include "pabm/train.hpp"

using namespace pabm;

namespace {

ModelConfig tiny_config(size_t classes) {
  ModelConfig cfg;
  cfg.points_per_cloud = 32;
  cfg.n_patches = 4;
  cfg.patch_size = 8;
  cfg.width = 16;
  cfg.transformer_layers = 1;
  cfg.heads = 4;
  cfg.bissm_layers = 2;
  cfg.d_state = 8;
  cfg.num_classes = classes;
  cfg.pos_hidden = 16;
  cfg.head_hidden = 32;
  return cfg;
}

}  // namespace

TEST_CASE("train epoch with lr 0 and no decay leaves weights unchanged", "[train]") {
  auto [train, test] = make_synthetic_dataset(5, {"sphere", "cube"}, 32, 0.01, 7);
  ModelConfig cfg = tiny_config(2);
  ClassifierModel m = ClassifierModel::make(cfg, 3);
  std::vector<std::vector<double>> before;
  for (const auto& [_, t] : m.params.items()) before.push_back(t.data());
  TrainOptions opts;
  opts.epochs = 1;
  opts.batch_size = 4;
  opts.lr_max = 0.0;
  opts.lr_min = 0.0;
  opts.weight_decay = 0.0;
  opts.seed = 5;
  train_classifier(m, train, nullptr, opts);
  for (size_t i = 0; i < before.size(); ++i)
    REQUIRE(m.params.items()[i].second.data() == before[i]);
}

TEST_CASE("initial loss is ln(num_classes) for balanced classes", "[train]") {
  auto [train, test] = make_synthetic_dataset(5, {"sphere", "cube", "torus", "cone"}, 32,
                                              0.01, 11);
  ModelConfig cfg = tiny_config(4);
  ClassifierModel m = ClassifierModel::make(cfg, 7);
  EvalResult r = evaluate(m, train, 13);
  REQUIRE(std::abs(r.mean_loss - std::log(4.0)) / std::log(4.0) < 0.05);
}

TEST_CASE("train-time accuracy equals a fresh eval on the train split", "[train]") {
  auto [train, test] = make_synthetic_dataset(5, {"sphere", "plane"}, 32, 0.0, 17);
  ModelConfig cfg = tiny_config(2);
  ClassifierModel m = ClassifierModel::make(cfg, 19);
  TrainOptions opts;
  opts.epochs = 2;
  opts.batch_size = 4;
  opts.seed = 23;
  std::vector<EpochMetrics> ms = train_classifier(m, train, &test, opts);
  EvalResult r = evaluate(m, train, opts.seed);
  REQUIRE(r.accuracy >= ms.back().train_acc - 1e-9);
  REQUIRE(r.accuracy <= ms.back().train_acc + 1e-9);
}

TEST_CASE("training with identical seeds is bit-deterministic", "[train]") {
  auto run = [] {
    auto [train, test] = make_synthetic_dataset(5, {"cube", "cone"}, 32, 0.02, 29);
    ModelConfig cfg = tiny_config(2);
    ClassifierModel m = ClassifierModel::make(cfg, 31);
    TrainOptions opts;
    opts.epochs = 2;
    opts.batch_size = 4;
    opts.seed = 37;
    opts.augment.rotate = true;
    std::vector<EpochMetrics> ms = train_classifier(m, train, &test, opts);
    return std::make_pair(ms.back().loss, m.params.items()[0].second.data());
  };
  auto a = run(), b = run();
  REQUIRE(a.first == b.first);
  REQUIRE(a.second == b.second);
}

TEST_CASE("mae training runs and reports finite chamfer losses", "[train]") {
  auto [train, test] = make_synthetic_dataset(5, {"sphere", "cube"}, 48, 0.01, 41);
  ModelConfig cfg = tiny_config(2);
  cfg.mask_ratio = 0.5;
  cfg.decoder_layers = 1;
  MaeModel m = MaeModel::make(cfg, 43);
  TrainOptions opts;
  opts.epochs = 2;
  opts.batch_size = 4;
  opts.seed = 47;
  std::vector<EpochMetrics> ms = train_mae(m, train, opts);
  REQUIRE(ms.size() == 2);
  for (const EpochMetrics& em : ms) {
    REQUIRE(std::isfinite(em.loss));
    REQUIRE(em.loss > 0.0);
  }
  // Encoder-only checkpoint name contract.
  Checkpoint enc = encoder_checkpoint(m, json::object());
  ClassifierModel cls = ClassifierModel::make(cfg, 49);
  for (const auto& [name, _] : enc.tensors) {
    REQUIRE(name.rfind("encoder.", 0) == 0);
    REQUIRE(cls.params.find(name) != nullptr);
  }
  apply_checkpoint(enc, cls.params, /*strict=*/false);
}
