#pragma once

#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "pabm/model.hpp"
#include "pabm/params.hpp"

namespace pabm {

using json = nlohmann::json;

inline json model_config_to_json(const ModelConfig& c) {
  return json{{"points_per_cloud", c.points_per_cloud},
              {"n_patches", c.n_patches},
              {"patch_size", c.patch_size},
              {"width", c.width},
              {"transformer_layers", c.transformer_layers},
              {"heads", c.heads},
              {"bissm_layers", c.bissm_layers},
              {"fusion", fusion_name(c.fusion)},
              {"ffn_ratio", c.ffn_ratio},
              {"d_state", c.d_state},
              {"num_classes", c.num_classes},
              {"mask_ratio", c.mask_ratio},
              {"decoder_layers", c.decoder_layers},
              {"conv_width", c.conv_width},
              {"pos_hidden", c.pos_hidden},
              {"head_hidden", c.head_hidden},
              {"head_dropout", c.head_dropout},
              {"pre_norm", c.pre_norm},
              {"serialize_order", c.serialize_strategy}};
}

inline ModelConfig model_config_from_json(const json& j) {
  ModelConfig c;
  c.points_per_cloud = j.at("points_per_cloud").get<size_t>();
  c.n_patches = j.at("n_patches").get<size_t>();
  c.patch_size = j.at("patch_size").get<size_t>();
  c.width = j.at("width").get<size_t>();
  c.transformer_layers = j.at("transformer_layers").get<size_t>();
  c.heads = j.at("heads").get<size_t>();
  c.bissm_layers = j.at("bissm_layers").get<size_t>();
  c.fusion = parse_fusion(j.at("fusion").get<std::string>());
  c.ffn_ratio = j.at("ffn_ratio").get<size_t>();
  c.d_state = j.at("d_state").get<size_t>();
  c.num_classes = j.at("num_classes").get<size_t>();
  c.mask_ratio = j.at("mask_ratio").get<double>();
  c.decoder_layers = j.at("decoder_layers").get<size_t>();
  c.conv_width = j.at("conv_width").get<size_t>();
  c.pos_hidden = j.at("pos_hidden").get<size_t>();
  c.head_hidden = j.at("head_hidden").get<size_t>();
  c.head_dropout = j.at("head_dropout").get<double>();
  c.pre_norm = j.at("pre_norm").get<bool>();
  c.serialize_strategy = j.at("serialize_order").get<std::string>();
  return c;
}

// Named-tensor bundle with config and a free-form metadata blob
// (seed, epoch, metric snapshot, class names).
struct Checkpoint {
  ModelConfig config;
  std::vector<std::pair<std::string, Tensor>> tensors;
  json metadata = json::object();
};

namespace detail_ckpt {

constexpr char kMagic[4] = {'P', 'A', 'B', 'M'};
constexpr uint32_t kVersion = 1;

inline void write_u32(std::ostream& out, uint32_t v) {
  unsigned char b[4] = {static_cast<unsigned char>(v & 0xff),
                        static_cast<unsigned char>((v >> 8) & 0xff),
                        static_cast<unsigned char>((v >> 16) & 0xff),
                        static_cast<unsigned char>((v >> 24) & 0xff)};
  out.write(reinterpret_cast<const char*>(b), 4);
}

inline uint32_t read_u32(std::istream& in) {
  unsigned char b[4];
  in.read(reinterpret_cast<char*>(b), 4);
  check_usage(in.good(), "checkpoint: truncated file");
  return static_cast<uint32_t>(b[0]) | (static_cast<uint32_t>(b[1]) << 8) |
         (static_cast<uint32_t>(b[2]) << 16) | (static_cast<uint32_t>(b[3]) << 24);
}

inline void write_f32(std::ostream& out, float f) {
  uint32_t bits;
  std::memcpy(&bits, &f, 4);
  write_u32(out, bits);
}

inline float read_f32(std::istream& in) {
  uint32_t bits = read_u32(in);
  float f;
  std::memcpy(&f, &bits, 4);
  return f;
}

}  // namespace detail_ckpt

// Layout: magic "PABM", version u32, tensor count u32, then per tensor
// (name length u32, name bytes, rank u32, dims u32 x rank, float32 payload),
// then a length-prefixed JSON metadata blob. Everything little-endian.
inline void save_checkpoint(const Checkpoint& ckpt, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  check(out.good(), "save_checkpoint: cannot open " + path);
  out.write(detail_ckpt::kMagic, 4);
  detail_ckpt::write_u32(out, detail_ckpt::kVersion);
  detail_ckpt::write_u32(out, static_cast<uint32_t>(ckpt.tensors.size()));
  for (const auto& [name, t] : ckpt.tensors) {
    detail_ckpt::write_u32(out, static_cast<uint32_t>(name.size()));
    out.write(name.data(), static_cast<std::streamsize>(name.size()));
    detail_ckpt::write_u32(out, static_cast<uint32_t>(t.rank()));
    for (size_t d : t.shape()) detail_ckpt::write_u32(out, static_cast<uint32_t>(d));
    for (double v : t.data()) detail_ckpt::write_f32(out, static_cast<float>(v));
  }
  json meta = ckpt.metadata;
  meta["config"] = model_config_to_json(ckpt.config);
  std::string blob = meta.dump();
  detail_ckpt::write_u32(out, static_cast<uint32_t>(blob.size()));
  out.write(blob.data(), static_cast<std::streamsize>(blob.size()));
  check(out.good(), "save_checkpoint: write failed for " + path);
}

inline Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  check(in.good(), "load_checkpoint: cannot open " + path);
  char magic[4];
  in.read(magic, 4);
  check_usage(in.good() && std::memcmp(magic, detail_ckpt::kMagic, 4) == 0,
              "load_checkpoint: bad magic in " + path);
  uint32_t version = detail_ckpt::read_u32(in);
  check_usage(version == detail_ckpt::kVersion,
              strformat("load_checkpoint: unsupported format version %u", version));
  uint32_t count = detail_ckpt::read_u32(in);
  Checkpoint ckpt;
  ckpt.tensors.reserve(count);
  for (uint32_t i = 0; i < count; ++i) {
    uint32_t name_len = detail_ckpt::read_u32(in);
    std::string name(name_len, '\0');
    in.read(name.data(), name_len);
    check_usage(in.good(), "load_checkpoint: truncated tensor name");
    uint32_t rank = detail_ckpt::read_u32(in);
    std::vector<size_t> shape(rank);
    size_t numel = 1;
    for (uint32_t d = 0; d < rank; ++d) {
      shape[d] = detail_ckpt::read_u32(in);
      numel *= shape[d];
    }
    std::vector<double> data(numel);
    for (size_t k = 0; k < numel; ++k) data[k] = detail_ckpt::read_f32(in);
    ckpt.tensors.emplace_back(std::move(name), Tensor::from(std::move(shape), std::move(data)));
  }
  uint32_t blob_len = detail_ckpt::read_u32(in);
  std::string blob(blob_len, '\0');
  in.read(blob.data(), blob_len);
  check_usage(in.good(), "load_checkpoint: truncated metadata");
  json meta = json::parse(blob, nullptr, false);
  check_usage(!meta.is_discarded(), "load_checkpoint: corrupt metadata JSON");
  check_usage(meta.contains("config"), "load_checkpoint: metadata missing config");
  ckpt.config = model_config_from_json(meta["config"]);
  meta.erase("config");
  ckpt.metadata = meta;
  return ckpt;
}

inline Checkpoint checkpoint_from_registry(const ModelConfig& cfg, const ParamRegistry& reg,
                                           json metadata = json::object()) {
  Checkpoint ckpt;
  ckpt.config = cfg;
  ckpt.metadata = std::move(metadata);
  for (const auto& [name, t] : reg.items()) ckpt.tensors.emplace_back(name, t);
  return ckpt;
}

// Copy checkpoint tensors into a registry by name. Strict mode demands the
// name sets match exactly; loose mode (fine-tune init) requires only that
// every checkpoint tensor exists in the model.
inline void apply_checkpoint(const Checkpoint& ckpt, ParamRegistry& reg, bool strict) {
  size_t matched = 0;
  for (const auto& [name, src] : ckpt.tensors) {
    const Tensor* dst = reg.find(name);
    check_usage(dst != nullptr, "checkpoint: model has no parameter named " + name);
    check_usage(dst->shape() == src.shape(), "checkpoint: shape mismatch for " + name);
    const_cast<Tensor*>(dst)->data() = src.data();
    ++matched;
  }
  if (strict)
    check_usage(matched == reg.items().size(),
                strformat("checkpoint: model expects %zu tensors, file has %zu",
                          reg.items().size(), matched));
}

}  // namespace pabm
