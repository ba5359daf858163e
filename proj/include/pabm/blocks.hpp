#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "pabm/params.hpp"
#include "pabm/scan.hpp"

namespace pabm {

// ---------------------------------------------------------------------------
// Positional encoding: learned two-layer MLP on raw center coordinates,
// added to the tokens (X' = X + enc).

struct PosEncWeights {
  LinearParams l1, l2;

  static PosEncWeights make(size_t hidden, size_t width, Rng& rng, ParamRegistry& reg,
                            const std::string& prefix) {
    PosEncWeights w;
    w.l1 = LinearParams::make(3, hidden, rng, reg, prefix + ".l1");
    w.l2 = LinearParams::make(hidden, width, rng, reg, prefix + ".l2");
    return w;
  }
};

// centers: (n x 3) -> (n x C).
inline Tensor pos_encode(const Tensor& centers, const PosEncWeights& w) {
  return w.l2.apply(gelu(w.l1.apply(centers)));
}

// ---------------------------------------------------------------------------
// Patch embedding: shared pointwise MLP per point, channel-wise max pool,
// then a projection to token width. Permutation-invariant in the points.

struct EmbedWeights {
  LinearParams m1, m2, m3;

  static EmbedWeights make(size_t h1, size_t h2, size_t width, Rng& rng, ParamRegistry& reg,
                           const std::string& prefix) {
    EmbedWeights w;
    w.m1 = LinearParams::make(3, h1, rng, reg, prefix + ".m1");
    w.m2 = LinearParams::make(h1, h2, rng, reg, prefix + ".m2");
    w.m3 = LinearParams::make(h2, width, rng, reg, prefix + ".m3");
    return w;
  }
};

// patch: (s x 3), center-relative -> (1 x C).
inline Tensor embed_patch(const Tensor& patch, const EmbedWeights& w) {
  Tensor per_point = w.m2.apply(gelu(w.m1.apply(patch)));
  return w.m3.apply(max_rows(per_point));
}

// ---------------------------------------------------------------------------
// Multi-head self-attention Transformer block, pre-norm.

struct AttentionWeights {
  size_t heads = 1;
  std::vector<LinearParams> wq, wk, wv;  // per head: (C x C/h)
  LinearParams wo;                       // (C x C)
  LinearParams ffn1, ffn2;
  LayerNormParams ln1, ln2;

  static AttentionWeights make(size_t width, size_t heads, size_t ffn_hidden, Rng& rng,
                               ParamRegistry& reg, const std::string& prefix) {
    check(heads >= 1 && width % heads == 0, "AttentionWeights: width must divide by heads");
    AttentionWeights w;
    w.heads = heads;
    size_t dk = width / heads;
    for (size_t h = 0; h < heads; ++h) {
      std::string hp = prefix + "." + std::to_string(h);
      w.wq.push_back(LinearParams::make(width, dk, rng, reg, hp + ".wq"));
      w.wk.push_back(LinearParams::make(width, dk, rng, reg, hp + ".wk"));
      w.wv.push_back(LinearParams::make(width, dk, rng, reg, hp + ".wv"));
    }
    w.wo = LinearParams::make(width, width, rng, reg, prefix + ".wo", kResidualInitGain);
    w.ffn1 = LinearParams::make(width, ffn_hidden, rng, reg, prefix + ".ffn1");
    w.ffn2 = LinearParams::make(ffn_hidden, width, rng, reg, prefix + ".ffn2",
                                kResidualInitGain);
    w.ln1 = LayerNormParams::make(width, reg, prefix + ".ln1");
    w.ln2 = LayerNormParams::make(width, reg, prefix + ".ln2");
    return w;
  }
};

// Scaled dot-product attention for one head: softmax(q k^T / sqrt(dk)) v.
inline Tensor attention(const Tensor& q, const Tensor& k, const Tensor& v) {
  check(q.cols() == k.cols(), "attention: q/k width mismatch");
  check(k.rows() == v.rows(), "attention: k/v length mismatch");
  double scale = 1.0 / std::sqrt(static_cast<double>(q.cols()));
  Tensor scores = scalar_mul(matmul_nt(q, k), scale);
  return matmul(softmax_rows(scores), v);
}

inline Tensor multi_head_attention(const Tensor& x, const AttentionWeights& w) {
  std::vector<Tensor> heads;
  heads.reserve(w.heads);
  for (size_t h = 0; h < w.heads; ++h)
    heads.push_back(attention(w.wq[h].apply(x), w.wk[h].apply(x), w.wv[h].apply(x)));
  return w.wo.apply(w.heads == 1 ? heads[0] : concat_cols(heads));
}

// Pre-norm (default): x + MHSA(norm(x)), then + FFN(norm(.)).
// Post-norm reads the residual-then-normalize order instead.
inline Tensor transformer_block(const Tensor& tokens, const AttentionWeights& w,
                                bool pre_norm = true) {
  if (pre_norm) {
    Tensor a = tokens + multi_head_attention(w.ln1.apply(tokens), w);
    Tensor f = w.ffn2.apply(gelu(w.ffn1.apply(w.ln2.apply(a))));
    return a + f;
  }
  Tensor a = w.ln1.apply(tokens + multi_head_attention(tokens, w));
  Tensor f = w.ffn2.apply(gelu(w.ffn1.apply(a)));
  return w.ln2.apply(a + f);
}

// ---------------------------------------------------------------------------
// Bidirectional selective-SSM block (Mamba-style internals; the two scan
// directions hold disjoint parameter sets, input/output projections shared).

enum class ScanDirection { forward, backward };

struct SsmDirectionParams {
  Tensor conv_w;  // (d_inner x conv_width), depthwise
  Tensor conv_b;  // (d_inner)
  Tensor x_proj_w;  // (d_inner x (dt_rank + 2*d_state)), bias-free
  LinearParams dt_proj;  // (dt_rank x d_inner)
  Tensor a_log;   // (d_inner x d_state); A = -exp(a_log), strictly negative
  Tensor d_skip;  // (d_inner)

  static SsmDirectionParams make(size_t d_inner, size_t d_state, size_t dt_rank,
                                 size_t conv_width, Rng& rng, ParamRegistry& reg,
                                 const std::string& prefix) {
    SsmDirectionParams p;
    p.conv_w = reg.add(prefix + ".conv_w",
                       Tensor::uniform_init({d_inner, conv_width}, conv_width, rng));
    p.conv_b = reg.add(prefix + ".conv_b",
                       Tensor::uniform_init({d_inner}, conv_width, rng));
    p.x_proj_w = reg.add(prefix + ".x_proj_w",
                         Tensor::uniform_init({d_inner, dt_rank + 2 * d_state}, d_inner, rng));
    p.dt_proj = LinearParams::make(dt_rank, d_inner, rng, reg, prefix + ".dt_proj");
    // Step-size bias so softplus(bias) is log-uniform in [1e-3, 1e-1] at init,
    // keeping exp(delta * A) well inside (0, 1).
    for (double& b : p.dt_proj.b.data()) {
      double dt = std::exp(rng.uniform(std::log(1e-3), std::log(1e-1)));
      b = dt + std::log1p(-std::exp(-dt));  // inverse softplus
    }
    // S4D real initialization: A = -(1..d_state) per channel.
    Tensor a_log = Tensor::zeros({d_inner, d_state}, true);
    for (size_t i = 0; i < d_inner; ++i)
      for (size_t s = 0; s < d_state; ++s)
        a_log.data()[i * d_state + s] = std::log(static_cast<double>(s + 1));
    p.a_log = reg.add(prefix + ".a_log", a_log);
    p.d_skip = reg.add(prefix + ".d_skip", Tensor::full({d_inner}, 1.0, true));
    return p;
  }
};

struct SsmParams {
  size_t d_inner = 0, d_state = 0, dt_rank = 0, conv_width = 0;
  LayerNormParams ln;
  LinearParams in_proj;   // (W x 2*d_inner): inner stream and gate
  SsmDirectionParams fwd, bwd;
  LinearParams out_proj;  // (d_inner x W)

  static SsmParams make(size_t width, size_t d_inner, size_t d_state, size_t dt_rank,
                        size_t conv_width, Rng& rng, ParamRegistry& reg,
                        const std::string& prefix) {
    SsmParams p;
    p.d_inner = d_inner;
    p.d_state = d_state;
    p.dt_rank = dt_rank;
    p.conv_width = conv_width;
    p.ln = LayerNormParams::make(width, reg, prefix + ".ln");
    p.in_proj = LinearParams::make(width, 2 * d_inner, rng, reg, prefix + ".in_proj");
    p.fwd = SsmDirectionParams::make(d_inner, d_state, dt_rank, conv_width, rng, reg,
                                     prefix + ".fwd");
    p.bwd = SsmDirectionParams::make(d_inner, d_state, dt_rank, conv_width, rng, reg,
                                     prefix + ".bwd");
    p.out_proj = LinearParams::make(d_inner, width, rng, reg, prefix + ".out_proj",
                                    kResidualInitGain);
    return p;
  }
};

// One selective scan over (L x d_inner) inner activations: short causal
// depthwise conv, SiLU, input-dependent (delta, B, C), zero-order-hold scan.
// The backward direction reverses the sequence, runs the identical forward
// algorithm with its own parameters, and reverses the result.
inline Tensor ssm_scan(const Tensor& u, const SsmDirectionParams& p, size_t d_state,
                       size_t dt_rank, ScanDirection dir) {
  check(u.rows() >= 1, "ssm_scan: empty sequence");
  Tensor seq = (dir == ScanDirection::backward) ? reverse_rows(u) : u;
  Tensor conv = silu(conv1d_depthwise_causal(seq, p.conv_w, p.conv_b));
  Tensor proj = matmul(conv, p.x_proj_w);
  Tensor delta = softplus(p.dt_proj.apply(slice_cols(proj, 0, dt_rank)));
  Tensor b_in = slice_cols(proj, dt_rank, d_state);
  Tensor c_out = slice_cols(proj, dt_rank + d_state, d_state);
  Tensor a = neg(pabm::exp(p.a_log));
  Tensor y = selective_scan(conv, delta, a, b_in, c_out, p.d_skip);
  return (dir == ScanDirection::backward) ? reverse_rows(y) : y;
}

// SSM_forward(x) + SSM_backward(x): the pre-activation sum the block gates.
inline Tensor bi_scan_sum(const Tensor& u, const SsmParams& p) {
  Tensor yf = ssm_scan(u, p.fwd, p.d_state, p.dt_rank, ScanDirection::forward);
  Tensor yb = ssm_scan(u, p.bwd, p.d_state, p.dt_rank, ScanDirection::backward);
  return yf + yb;
}

// T_l = T_{l-1} + Linear(silu(SSM_fwd(x) + SSM_bwd(x)) * silu(gate)), with
// x and the gate both projected from norm(T_{l-1}).
inline Tensor bi_ssm_block(const Tensor& tokens, const SsmParams& p) {
  Tensor xn = p.ln.apply(tokens);
  Tensor proj = p.in_proj.apply(xn);
  Tensor inner = slice_cols(proj, 0, p.d_inner);
  Tensor gate = slice_cols(proj, p.d_inner, p.d_inner);
  Tensor s = bi_scan_sum(inner, p);
  Tensor gated = silu(s) * silu(gate);
  return tokens + p.out_proj.apply(gated);
}

}  // namespace pabm
