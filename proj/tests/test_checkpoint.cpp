#include <catch2/catch_amalgamated.hpp>

#include <filesystem>
#include <fstream>

#include "pabm/checkpoint.hpp"
#include "pabm/runconfig.hpp"

using namespace pabm;
namespace fs = std::filesystem;

namespace {

fs::path temp_dir() {
  fs::path p = fs::temp_directory_path() / "pabm_ckpt_test";
  fs::create_directories(p);
  return p;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return std::string(std::istreambuf_iterator<char>(in), {});
}

ModelConfig small_config() {
  ModelConfig cfg;
  cfg.points_per_cloud = 32;
  cfg.n_patches = 4;
  cfg.patch_size = 4;
  cfg.width = 8;
  cfg.heads = 2;
  cfg.transformer_layers = 1;
  cfg.bissm_layers = 1;
  cfg.d_state = 2;
  cfg.num_classes = 3;
  cfg.pos_hidden = 4;
  cfg.head_hidden = 8;
  return cfg;
}

}  // namespace

TEST_CASE("checkpoint: save, load, save is byte-identical", "[checkpoint]") {
  ModelConfig cfg = small_config();
  ClassifierModel m = ClassifierModel::make(cfg, 17);
  Checkpoint ckpt = checkpoint_from_registry(cfg, m.params,
                                             json{{"seed", 17}, {"epoch", 0}});
  fs::path p1 = temp_dir() / "a.pabm", p2 = temp_dir() / "b.pabm";
  save_checkpoint(ckpt, p1.string());
  Checkpoint back = load_checkpoint(p1.string());
  save_checkpoint(back, p2.string());
  REQUIRE(slurp(p1) == slurp(p2));
  REQUIRE(back.tensors.size() == ckpt.tensors.size());
  REQUIRE(back.metadata["seed"] == 17);
}

TEST_CASE("checkpoint: float32 storage round-trips exactly at storage precision",
          "[checkpoint]") {
  ModelConfig cfg = small_config();
  ClassifierModel m = ClassifierModel::make(cfg, 23);
  fs::path p = temp_dir() / "c.pabm";
  save_checkpoint(checkpoint_from_registry(cfg, m.params), p.string());
  Checkpoint back = load_checkpoint(p.string());
  for (size_t i = 0; i < back.tensors.size(); ++i) {
    const auto& [name, src] = m.params.items()[i];
    const auto& [bname, loaded] = back.tensors[i];
    REQUIRE(bname == name);
    REQUIRE(loaded.shape() == src.shape());
    for (size_t k = 0; k < src.size(); ++k)
      REQUIRE(loaded.data()[k] == static_cast<double>(static_cast<float>(src.data()[k])));
  }
}

TEST_CASE("checkpoint: every parameter name appears exactly once", "[checkpoint]") {
  ModelConfig cfg = small_config();
  ClassifierModel m = ClassifierModel::make(cfg, 29);
  std::set<std::string> names;
  for (const auto& [name, _] : m.params.items()) names.insert(name);
  REQUIRE(names.size() == m.params.items().size());
}

TEST_CASE("checkpoint: corrupted magic is rejected as 'bad magic'", "[checkpoint]") {
  fs::path p = temp_dir() / "bad.pabm";
  {
    std::ofstream out(p, std::ios::binary);
    out << "NOPE" << std::string(64, '\0');
  }
  REQUIRE_THROWS_WITH(load_checkpoint(p.string()),
                      Catch::Matchers::ContainsSubstring("bad magic"));
}

TEST_CASE("checkpoint: strict apply demands the full name set", "[checkpoint]") {
  ModelConfig cfg = small_config();
  ClassifierModel m = ClassifierModel::make(cfg, 31);
  Checkpoint ckpt = checkpoint_from_registry(cfg, m.params);
  ckpt.tensors.pop_back();
  ClassifierModel fresh = ClassifierModel::make(cfg, 32);
  REQUIRE_THROWS_AS(apply_checkpoint(ckpt, fresh.params, /*strict=*/true), UsageError);
  apply_checkpoint(ckpt, fresh.params, /*strict=*/false);  // subset is fine loose
}

TEST_CASE("checkpoint: loaded weights reproduce the saved model's behavior",
          "[checkpoint]") {
  ModelConfig cfg = small_config();
  ClassifierModel m = ClassifierModel::make(cfg, 37);
  fs::path p = temp_dir() / "d.pabm";
  save_checkpoint(checkpoint_from_registry(cfg, m.params), p.string());
  Checkpoint back = load_checkpoint(p.string());
  ClassifierModel m2 = ClassifierModel::make(back.config, 0);
  apply_checkpoint(back, m2.params, /*strict=*/true);
  PointCloud cloud = generate_shape("torus", 32, 0.01, 41);
  Tensor a = forward_logits(cloud, m2, 43);
  // Reference: quantize the original model to float32 in place.
  for (const auto& [_, t] : m.params.items())
    for (double& v : const_cast<Tensor&>(t).data())
      v = static_cast<double>(static_cast<float>(v));
  Tensor b = forward_logits(cloud, m, 43);
  REQUIRE(a.data() == b.data());
}

TEST_CASE("run config: parse-serialize-parse is a fixed point", "[config]") {
  RunConfig c;
  c.model.width = 48;
  c.model.fusion = Fusion::concat;
  c.lr_max = 2.5e-4;
  c.kinds = "sphere,cube";
  json j1 = run_config_to_json(c);
  RunConfig c2 = run_config_from_json(j1);
  json j2 = run_config_to_json(c2);
  REQUIRE(j1 == j2);
  REQUIRE(j1.dump() == j2.dump());
}

TEST_CASE("run config: unknown keys rejected, partial documents keep defaults",
          "[config]") {
  REQUIRE_THROWS_AS(run_config_from_json(json{{"wat", 1}}), UsageError);
  std::set<std::string> present;
  RunConfig c = run_config_from_json(json{{"width", 64}}, &present);
  REQUIRE(c.model.width == 64);
  REQUIRE(c.epochs == RunConfig{}.epochs);
  REQUIRE(present == std::set<std::string>{"width"});
}
