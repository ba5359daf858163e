#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <string>
#include <vector>

#include "pabm/blocks.hpp"
#include "pabm/data.hpp"
#include "pabm/pointops.hpp"

namespace pabm {

enum class Fusion { residual, concat };

inline Fusion parse_fusion(const std::string& s) {
  if (s == "residual") return Fusion::residual;
  if (s == "concat") return Fusion::concat;
  throw UsageError("unknown fusion mode: " + s);
}

inline std::string fusion_name(Fusion f) {
  return f == Fusion::residual ? "residual" : "concat";
}

struct ModelConfig {
  size_t points_per_cloud = 1024;
  size_t n_patches = 64;
  size_t patch_size = 32;   // s
  size_t width = 384;       // C
  size_t transformer_layers = 1;
  size_t heads = 8;
  size_t bissm_layers = 12;  // N
  Fusion fusion = Fusion::residual;
  size_t ffn_ratio = 4;
  size_t d_state = 16;
  size_t num_classes = 15;
  double mask_ratio = 0.6;
  size_t decoder_layers = 4;
  size_t conv_width = 4;
  size_t pos_hidden = 128;
  size_t head_hidden = 256;
  double head_dropout = 0.5;
  bool pre_norm = true;  // Transformer norm placement; post-norm selectable
  std::string serialize_strategy = "lex";

  // Concat fusion doubles the width the bi-SSM stack runs at.
  size_t stack_width() const { return fusion == Fusion::concat ? 2 * width : width; }
  size_t d_inner() const { return 2 * stack_width(); }
  size_t dt_rank() const { return std::max<size_t>(1, (stack_width() + 15) / 16); }
  size_t embed_h1() const { return std::max<size_t>(8, width / 2); }
  size_t embed_h2() const { return width; }

  void validate() const {
    check_usage(n_patches >= 1, "config: n_patches must be >= 1");
    check_usage(patch_size >= 1, "config: patch_size must be >= 1");
    check_usage(points_per_cloud >= n_patches, "config: points_per_cloud < n_patches");
    check_usage(heads >= 1 && width % heads == 0, "config: width must divide by heads");
    check_usage(width >= 1, "config: width must be >= 1");
    check_usage(d_state >= 1, "config: d_state must be >= 1");
    check_usage(num_classes >= 2, "config: num_classes must be >= 2");
    check_usage(mask_ratio > 0.0 && mask_ratio < 1.0, "config: mask_ratio must be in (0, 1)");
    check_usage(conv_width >= 1, "config: conv_width must be >= 1");
    check_usage(head_dropout >= 0.0 && head_dropout < 1.0,
                "config: head_dropout must be in [0, 1)");
    parse_serialize_strategy(serialize_strategy);
  }
};

// ---------------------------------------------------------------------------
// Chamfer distance: mean over p of min squared distance to q, plus the
// reverse term. One tape node; gradients flow through the nearest pairs.

inline Tensor chamfer(const Tensor& p, const Tensor& q) {
  check(p.rank() == 2 && p.cols() == 3 && q.rank() == 2 && q.cols() == 3,
        "chamfer: inputs must be (n x 3)");
  size_t a = p.rows(), b = q.rows();
  check(a >= 1 && b >= 1, "chamfer: empty point set");
  const auto& pv = p.data();
  const auto& qv = q.data();
  std::vector<size_t> near_pq(a), near_qp(b);
  double total = 0.0;
  for (size_t i = 0; i < a; ++i) {
    double best = 0.0;
    size_t bj = 0;
    for (size_t j = 0; j < b; ++j) {
      double d = 0.0;
      for (int c = 0; c < 3; ++c) {
        double diff = pv[i * 3 + c] - qv[j * 3 + c];
        d += diff * diff;
      }
      if (j == 0 || d < best) {
        best = d;
        bj = j;
      }
    }
    near_pq[i] = bj;
    total += best / static_cast<double>(a);
  }
  for (size_t j = 0; j < b; ++j) {
    double best = 0.0;
    size_t bi = 0;
    for (size_t i = 0; i < a; ++i) {
      double d = 0.0;
      for (int c = 0; c < 3; ++c) {
        double diff = pv[i * 3 + c] - qv[j * 3 + c];
        d += diff * diff;
      }
      if (i == 0 || d < best) {
        best = d;
        bi = i;
      }
    }
    near_qp[j] = bi;
    total += best / static_cast<double>(b);
  }
  return detail::make_op(
      {1}, {total}, {p, q},
      [a, b, near_pq = std::move(near_pq), near_qp = std::move(near_qp)](detail::Node& o) {
        const auto& pv = o.parents[0]->value;
        const auto& qv = o.parents[1]->value;
        double g = o.grad[0];
        double wa = 2.0 * g / static_cast<double>(a);
        double wb = 2.0 * g / static_cast<double>(b);
        for (size_t i = 0; i < a; ++i) {
          size_t j = near_pq[i];
          for (int c = 0; c < 3; ++c) {
            double diff = pv[i * 3 + c] - qv[j * 3 + c];
            if (o.parents[0]->requires_grad) o.parents[0]->grad[i * 3 + c] += wa * diff;
            if (o.parents[1]->requires_grad) o.parents[1]->grad[j * 3 + c] -= wa * diff;
          }
        }
        for (size_t j = 0; j < b; ++j) {
          size_t i = near_qp[j];
          for (int c = 0; c < 3; ++c) {
            double diff = qv[j * 3 + c] - pv[i * 3 + c];
            if (o.parents[1]->requires_grad) o.parents[1]->grad[j * 3 + c] += wb * diff;
            if (o.parents[0]->requires_grad) o.parents[0]->grad[i * 3 + c] -= wb * diff;
          }
        }
      });
}

// ---------------------------------------------------------------------------
// Fusion of the Transformer stage output with the tokens that entered it.

inline Tensor fuse(const Tensor& transformer_out, const Tensor& pre_tokens, Fusion mode) {
  detail::check_same_shape(transformer_out, pre_tokens, "fuse");
  if (mode == Fusion::residual) return transformer_out + pre_tokens;
  return concat_cols({transformer_out, pre_tokens});
}

// ---------------------------------------------------------------------------
// Encoder shared by classification and MAE pretraining.

struct EncoderWeights {
  EmbedWeights embed;
  PosEncWeights pos;
  std::vector<AttentionWeights> tblocks;
  std::vector<SsmParams> ssm;
  LayerNormParams norm;

  static EncoderWeights make(const ModelConfig& cfg, Rng& rng, ParamRegistry& reg) {
    EncoderWeights e;
    e.embed = EmbedWeights::make(cfg.embed_h1(), cfg.embed_h2(), cfg.width, rng, reg,
                                 "encoder.embed");
    e.pos = PosEncWeights::make(cfg.pos_hidden, cfg.width, rng, reg, "encoder.pos");
    for (size_t l = 0; l < cfg.transformer_layers; ++l)
      e.tblocks.push_back(AttentionWeights::make(cfg.width, cfg.heads,
                                                 cfg.ffn_ratio * cfg.width, rng, reg,
                                                 "encoder.tblock." + std::to_string(l)));
    size_t w = cfg.stack_width();
    for (size_t l = 0; l < cfg.bissm_layers; ++l)
      e.ssm.push_back(SsmParams::make(w, cfg.d_inner(), cfg.d_state, cfg.dt_rank(),
                                      cfg.conv_width, rng, reg,
                                      "encoder.ssm." + std::to_string(l)));
    e.norm = LayerNormParams::make(w, reg, "encoder.norm");
    return e;
  }
};

// Patchify: normalize, FPS, kNN grouping, serialization order.
inline PatchSet patchify(const PointCloud& cloud, const ModelConfig& cfg, uint64_t seed) {
  check_usage(cloud.size() >= cfg.n_patches,
              strformat("patchify: cloud has %zu points, need at least %zu", cloud.size(),
                        cfg.n_patches));
  PointCloud norm = normalize_cloud(cloud);
  std::vector<size_t> idx = farthest_point_sample(norm, cfg.n_patches, seed);
  PatchSet ps = knn_group(norm, idx, cfg.patch_size);
  ps.order = serialize_order(ps.centers, parse_serialize_strategy(cfg.serialize_strategy));
  return ps;
}

inline Tensor patch_to_tensor(const std::vector<Point3>& patch) {
  std::vector<double> data;
  data.reserve(patch.size() * 3);
  for (const Point3& p : patch) data.insert(data.end(), p.begin(), p.end());
  return Tensor::from({patch.size(), 3}, std::move(data));
}

inline Tensor centers_to_tensor(const PatchSet& ps, const std::vector<size_t>& positions) {
  std::vector<double> data;
  data.reserve(positions.size() * 3);
  for (size_t k : positions) {
    const Point3& c = ps.centers[ps.order[k]];
    data.insert(data.end(), c.begin(), c.end());
  }
  return Tensor::from({positions.size(), 3}, std::move(data));
}

// Tokens in serialization order for the given sequence positions:
// embed(patch) + pos_encode(center).
inline Tensor tokens_at(const PatchSet& ps, const std::vector<size_t>& positions,
                        const EncoderWeights& enc) {
  std::vector<Tensor> rows;
  rows.reserve(positions.size());
  for (size_t k : positions)
    rows.push_back(embed_patch(patch_to_tensor(ps.patches[ps.order[k]]), enc.embed));
  Tensor tokens = positions.size() == 1 ? rows[0] : concat_rows(rows);
  return tokens + pos_encode(centers_to_tensor(ps, positions), enc.pos);
}

// Transformer stage, fusion, bi-SSM stack, final norm. The fusion step runs
// in every configuration; with zero transformer layers the stage is the
// identity, which is exactly what a Transformer block with zeroed branch
// projections degenerates to.
inline Tensor encode_tokens(const Tensor& tokens, const EncoderWeights& enc,
                            const ModelConfig& cfg) {
  Tensor t = tokens;
  for (const AttentionWeights& w : enc.tblocks) t = transformer_block(t, w, cfg.pre_norm);
  Tensor x = fuse(t, tokens, cfg.fusion);
  for (const SsmParams& p : enc.ssm) x = bi_ssm_block(x, p);
  return enc.norm.apply(x);
}

// ---------------------------------------------------------------------------
// Classification model.

struct ClassifierModel {
  ModelConfig cfg;
  EncoderWeights enc;
  LinearParams head1, head2;
  ParamRegistry params;

  static ClassifierModel make(const ModelConfig& cfg, uint64_t init_seed) {
    cfg.validate();
    ClassifierModel m;
    m.cfg = cfg;
    Rng rng(Rng::mix(init_seed, 0x5eed));
    m.enc = EncoderWeights::make(cfg, rng, m.params);
    size_t pooled = 2 * cfg.stack_width();
    m.head1 = LinearParams::make(pooled, cfg.head_hidden, rng, m.params, "head.l1");
    // Near-zero head output: initial logits ~ 0, initial CE ~ ln(num_classes).
    m.head2 = LinearParams::make(cfg.head_hidden, cfg.num_classes, rng, m.params, "head.l2",
                                 kResidualInitGain);
    return m;
  }
};

inline std::vector<size_t> all_positions(size_t n) {
  std::vector<size_t> v(n);
  std::iota(v.begin(), v.end(), 0);
  return v;
}

// Full pipeline to logits. Deterministic given (cloud, weights, seed);
// dropout only runs in train mode with a caller-provided stream.
inline Tensor forward_logits(const PointCloud& cloud, const ClassifierModel& m,
                             uint64_t fps_seed, bool train_mode = false,
                             Rng* dropout_rng = nullptr) {
  PatchSet ps = patchify(cloud, m.cfg, fps_seed);
  Tensor tokens = tokens_at(ps, all_positions(m.cfg.n_patches), m.enc);
  Tensor h = encode_tokens(tokens, m.enc, m.cfg);
  Tensor pooled = concat_cols({mean_rows(h), max_rows(h)});
  Tensor z = gelu(m.head1.apply(pooled));
  if (train_mode && m.cfg.head_dropout > 0.0) {
    check(dropout_rng != nullptr, "forward_logits: train mode needs an RNG");
    z = dropout(z, m.cfg.head_dropout, *dropout_rng);
  }
  return m.head2.apply(z);
}

inline size_t predict_class(const Tensor& logits) {
  const auto& v = logits.data();
  return static_cast<size_t>(std::max_element(v.begin(), v.end()) - v.begin());
}

// Exact scalar parameter count of an assembled classification model.
inline size_t param_count(const ModelConfig& cfg) {
  return ClassifierModel::make(cfg, 0).params.total_scalars();
}

// ---------------------------------------------------------------------------
// Masked-autoencoder pretraining model.

struct MaeMask {
  std::vector<size_t> visible;  // ascending: keeps serialization order
  std::vector<size_t> masked;   // ascending
};

// Uniformly mask floor(mask_ratio * n) of n patches.
inline MaeMask mae_mask(size_t n, double mask_ratio, Rng& rng) {
  check_usage(mask_ratio > 0.0 && mask_ratio < 1.0, "mae_mask: mask_ratio must be in (0, 1)");
  size_t n_masked = static_cast<size_t>(std::floor(mask_ratio * static_cast<double>(n)));
  check_usage(n_masked >= 1 && n_masked < n,
              strformat("mae_mask: mask_ratio %.3f leaves no %s patches with n=%zu",
                        mask_ratio, n_masked == 0 ? "masked" : "visible", n));
  std::vector<size_t> perm = all_positions(n);
  rng.shuffle(perm);
  MaeMask mm;
  mm.masked.assign(perm.begin(), perm.begin() + static_cast<ptrdiff_t>(n_masked));
  mm.visible.assign(perm.begin() + static_cast<ptrdiff_t>(n_masked), perm.end());
  std::sort(mm.masked.begin(), mm.masked.end());
  std::sort(mm.visible.begin(), mm.visible.end());
  return mm;
}

// Visible tokens gathered in serialization order plus the mask index sets.
inline std::pair<Tensor, MaeMask> mae_mask_tokens(const Tensor& tokens, double mask_ratio,
                                                  Rng& rng) {
  MaeMask mm = mae_mask(tokens.rows(), mask_ratio, rng);
  return {gather_rows(tokens, mm.visible), mm};
}

struct MaeModel {
  ModelConfig cfg;
  EncoderWeights enc;
  Tensor mask_token;  // (1 x W)
  PosEncWeights dec_pos;
  std::vector<SsmParams> dec_ssm;
  LayerNormParams dec_norm;
  LinearParams recon;  // W -> s*3
  ParamRegistry params;

  static MaeModel make(const ModelConfig& cfg, uint64_t init_seed) {
    cfg.validate();
    MaeModel m;
    m.cfg = cfg;
    Rng rng(Rng::mix(init_seed, 0x5eed));
    m.enc = EncoderWeights::make(cfg, rng, m.params);
    size_t w = cfg.stack_width();
    Tensor mt = Tensor::zeros({1, w}, true);
    for (double& v : mt.data()) v = rng.normal(0.0, 0.02);
    m.mask_token = m.params.add("mae.mask_token", mt);
    m.dec_pos = PosEncWeights::make(cfg.pos_hidden, w, rng, m.params, "decoder.pos");
    for (size_t l = 0; l < cfg.decoder_layers; ++l)
      m.dec_ssm.push_back(SsmParams::make(w, 2 * w, cfg.d_state, cfg.dt_rank(),
                                          cfg.conv_width, rng, m.params,
                                          "decoder.ssm." + std::to_string(l)));
    m.dec_norm = LayerNormParams::make(w, m.params, "decoder.norm");
    m.recon = LinearParams::make(w, cfg.patch_size * 3, rng, m.params, "decoder.recon");
    return m;
  }
};

// Encode visible patches, fill masked positions with the mask token, decode
// the full sequence, regress masked patch coordinates; Chamfer loss averaged
// over masked patches.
inline Tensor mae_loss(const PointCloud& cloud, const MaeModel& m, uint64_t fps_seed,
                       Rng& mask_rng) {
  PatchSet ps = patchify(cloud, m.cfg, fps_seed);
  MaeMask mm = mae_mask(m.cfg.n_patches, m.cfg.mask_ratio, mask_rng);
  Tensor vis_tokens = tokens_at(ps, mm.visible, m.enc);
  Tensor enc_out = encode_tokens(vis_tokens, m.enc, m.cfg);

  std::vector<Tensor> rows(m.cfg.n_patches);
  for (size_t i = 0; i < mm.visible.size(); ++i) rows[mm.visible[i]] = row(enc_out, i);
  for (size_t k : mm.masked) rows[k] = m.mask_token;
  Tensor dec_in = concat_rows(rows) +
                  pos_encode(centers_to_tensor(ps, all_positions(m.cfg.n_patches)), m.dec_pos);
  Tensor x = dec_in;
  for (const SsmParams& p : m.dec_ssm) x = bi_ssm_block(x, p);
  x = m.dec_norm.apply(x);

  Tensor total = Tensor::scalar(0.0);
  for (size_t k : mm.masked) {
    Tensor pred = reshape(m.recon.apply(row(x, k)), {m.cfg.patch_size, 3});
    Tensor target = patch_to_tensor(ps.patches[ps.order[k]]);
    total = total + chamfer(pred, target);
  }
  return scalar_mul(total, 1.0 / static_cast<double>(mm.masked.size()));
}

}  // namespace pabm
