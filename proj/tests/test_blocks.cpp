#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <vector>

#include "pabm/blocks.hpp"
#include "pabm/gradcheck.hpp"

using namespace pabm;

namespace {

Tensor rand_t(std::vector<size_t> shape, Rng& rng, double lo = -1.0, double hi = 1.0) {
  Tensor t = Tensor::zeros(std::move(shape));
  for (double& v : t.data()) v = rng.uniform(lo, hi);
  return t;
}

void zero_tensor(Tensor t) {
  for (double& v : t.data()) v = 0.0;
}

// Naive scalar-loop oracle for one attention head; no shared code with the
// library path (plain exp softmax, explicit dot products).
std::vector<double> attention_oracle(const Tensor& q, const Tensor& k, const Tensor& v) {
  size_t n = q.rows(), m = k.rows(), dk = q.cols(), dv = v.cols();
  std::vector<double> out(n * dv, 0.0);
  for (size_t i = 0; i < n; ++i) {
    std::vector<double> w(m);
    double denom = 0.0;
    for (size_t j = 0; j < m; ++j) {
      double dot = 0.0;
      for (size_t c = 0; c < dk; ++c) dot += q.at(i, c) * k.at(j, c);
      w[j] = std::exp(dot / std::sqrt(static_cast<double>(dk)));
      denom += w[j];
    }
    for (size_t j = 0; j < m; ++j)
      for (size_t c = 0; c < dv; ++c) out[i * dv + c] += (w[j] / denom) * v.at(j, c);
  }
  return out;
}

}  // namespace

TEST_CASE("embed: duplicated points give the same token as the original patch", "[blocks]") {
  Rng rng(101);
  ParamRegistry reg;
  EmbedWeights w = EmbedWeights::make(8, 16, 12, rng, reg, "e");
  Tensor patch = rand_t({5, 3}, rng);
  // Pad by repeating row 2 three times.
  std::vector<double> padded = patch.data();
  for (int rep = 0; rep < 3; ++rep)
    for (int c = 0; c < 3; ++c) padded.push_back(patch.at(2, c));
  Tensor t1 = embed_patch(patch, w);
  Tensor t2 = embed_patch(Tensor::from({8, 3}, padded), w);
  REQUIRE(t1.data() == t2.data());
}

TEST_CASE("embed: permutation of points leaves the token bit-identical", "[blocks]") {
  Rng rng(103);
  ParamRegistry reg;
  EmbedWeights w = EmbedWeights::make(8, 16, 12, rng, reg, "e");
  Tensor patch = rand_t({6, 3}, rng);
  std::vector<size_t> perm = {3, 0, 5, 1, 4, 2};
  std::vector<double> permuted;
  for (size_t r : perm)
    for (int c = 0; c < 3; ++c) permuted.push_back(patch.at(r, c));
  Tensor t1 = embed_patch(patch, w);
  Tensor t2 = embed_patch(Tensor::from({6, 3}, permuted), w);
  REQUIRE(t1.data() == t2.data());
}

TEST_CASE("embed matches an explicit per-point loop oracle", "[blocks]") {
  Rng rng(107);
  ParamRegistry reg;
  size_t h1 = 4, h2 = 6, width = 5, s = 7;
  EmbedWeights w = EmbedWeights::make(h1, h2, width, rng, reg, "e");
  Tensor patch = rand_t({s, 3}, rng);
  // Oracle: per point, two affine maps with GELU between, then channel max,
  // then the output affine; everything in scalar loops.
  auto gelu1 = [](double x) { return 0.5 * x * std::erfc(-x * 0.70710678118654752440); };
  std::vector<double> pooled(h2, -1e300);
  for (size_t pt = 0; pt < s; ++pt) {
    std::vector<double> a(h1);
    for (size_t j = 0; j < h1; ++j) {
      double acc = w.m1.b.data()[j];
      for (int c = 0; c < 3; ++c) acc += patch.at(pt, c) * w.m1.w.at(c, j);
      a[j] = gelu1(acc);
    }
    for (size_t j = 0; j < h2; ++j) {
      double acc = w.m2.b.data()[j];
      for (size_t i = 0; i < h1; ++i) acc += a[i] * w.m2.w.at(i, j);
      pooled[j] = std::max(pooled[j], acc);
    }
  }
  std::vector<double> want(width);
  for (size_t j = 0; j < width; ++j) {
    double acc = w.m3.b.data()[j];
    for (size_t i = 0; i < h2; ++i) acc += pooled[i] * w.m3.w.at(i, j);
    want[j] = acc;
  }
  Tensor got = embed_patch(patch, w);
  for (size_t j = 0; j < width; ++j)
    REQUIRE(got.data()[j] == Catch::Approx(want[j]).margin(1e-12));
}

TEST_CASE("pos encode: zero weights add nothing", "[blocks]") {
  Rng rng(109);
  ParamRegistry reg;
  PosEncWeights w = PosEncWeights::make(8, 6, rng, reg, "p");
  zero_tensor(w.l2.w);
  zero_tensor(w.l2.b);
  Tensor tokens = rand_t({4, 6}, rng);
  Tensor centers = rand_t({4, 3}, rng);
  Tensor out = tokens + pos_encode(centers, w);
  REQUIRE(out.data() == tokens.data());
}

TEST_CASE("pos encode: equal centers get equal encodings", "[blocks]") {
  Rng rng(113);
  ParamRegistry reg;
  PosEncWeights w = PosEncWeights::make(8, 6, rng, reg, "p");
  Tensor centers = Tensor::from({2, 3}, {0.3, -0.2, 0.9, 0.3, -0.2, 0.9});
  Tensor enc = pos_encode(centers, w);
  for (size_t c = 0; c < 6; ++c) REQUIRE(enc.at(0, c) == enc.at(1, c));
}

TEST_CASE("pos encode gradient matches finite differences", "[blocks][grad]") {
  Rng rng(127);
  ParamRegistry reg;
  PosEncWeights w = PosEncWeights::make(5, 4, rng, reg, "p");
  Tensor centers = rand_t({3, 3}, rng);
  double err = grad_check(
      [&](const std::vector<Tensor>& xs) {
        PosEncWeights ww;
        ww.l1 = {xs[0], xs[1]};
        ww.l2 = {xs[2], xs[3]};
        Tensor e = pos_encode(centers, ww);
        return sum(e * e);
      },
      {w.l1.w, w.l1.b, w.l2.w, w.l2.b}, 1e-5);
  REQUIRE(err < 1e-6);
}

TEST_CASE("attention: a single token returns its value row exactly", "[blocks]") {
  Rng rng(131);
  Tensor q = rand_t({1, 4}, rng), k = rand_t({1, 4}, rng), v = rand_t({1, 6}, rng);
  Tensor out = attention(q, k, v);
  REQUIRE(out.data() == v.data());
}

TEST_CASE("attention: identical keys average the value rows uniformly", "[blocks]") {
  Rng rng(137);
  size_t n = 5, dk = 3, dv = 4;
  Tensor q = rand_t({n, dk}, rng);
  std::vector<double> krow = {0.4, -0.1, 0.7};
  std::vector<double> kdata;
  for (size_t i = 0; i < n; ++i) kdata.insert(kdata.end(), krow.begin(), krow.end());
  Tensor k = Tensor::from({n, dk}, kdata);
  Tensor v = rand_t({n, dv}, rng);
  Tensor out = attention(q, k, v);
  for (size_t c = 0; c < dv; ++c) {
    double mean = 0.0;
    for (size_t j = 0; j < n; ++j) mean += v.at(j, c);
    mean /= static_cast<double>(n);
    for (size_t i = 0; i < n; ++i)
      REQUIRE(out.at(i, c) == Catch::Approx(mean).margin(1e-12));
  }
}

TEST_CASE("attention matches the double-loop oracle", "[blocks]") {
  Rng rng(139);
  Tensor q = rand_t({3, 4}, rng), k = rand_t({3, 4}, rng), v = rand_t({3, 5}, rng);
  Tensor out = attention(q, k, v);
  std::vector<double> want = attention_oracle(q, k, v);
  for (size_t i = 0; i < want.size(); ++i)
    REQUIRE(out.data()[i] == Catch::Approx(want[i]).margin(1e-12));
}

TEST_CASE("attention rows of the weight matrix sum to one", "[blocks]") {
  Rng rng(149);
  for (int trial = 0; trial < 20; ++trial) {
    Tensor q = rand_t({4, 3}, rng, -5.0, 5.0), k = rand_t({4, 3}, rng, -5.0, 5.0);
    Tensor scores = scalar_mul(matmul_nt(q, k), 1.0 / std::sqrt(3.0));
    Tensor attn = softmax_rows(scores);
    for (size_t i = 0; i < 4; ++i) {
      double s = 0.0;
      for (size_t j = 0; j < 4; ++j) s += attn.at(i, j);
      REQUIRE(s == Catch::Approx(1.0).margin(1e-9));
    }
  }
}

TEST_CASE("transformer block with zeroed branch projections is the identity", "[blocks]") {
  Rng rng(151);
  ParamRegistry reg;
  AttentionWeights w = AttentionWeights::make(8, 2, 16, rng, reg, "t");
  zero_tensor(w.wo.w);
  zero_tensor(w.wo.b);
  zero_tensor(w.ffn2.w);
  zero_tensor(w.ffn2.b);
  Tensor tokens = rand_t({5, 8}, rng);
  Tensor out = transformer_block(tokens, w);
  REQUIRE(out.data() == tokens.data());
}

TEST_CASE("transformer block is permutation-equivariant", "[blocks]") {
  Rng rng(157);
  ParamRegistry reg;
  AttentionWeights w = AttentionWeights::make(12, 3, 24, rng, reg, "t");
  Tensor tokens = rand_t({7, 12}, rng);
  std::vector<size_t> perm = {6, 2, 0, 5, 1, 4, 3};
  Tensor out_then_perm = gather_rows(transformer_block(tokens, w), perm);
  Tensor perm_then_out = transformer_block(gather_rows(tokens, perm), w);
  for (size_t i = 0; i < out_then_perm.size(); ++i)
    REQUIRE(out_then_perm.data()[i] ==
            Catch::Approx(perm_then_out.data()[i]).margin(1e-9));
}

TEST_CASE("transformer block matches a hand-rolled multi-head oracle", "[blocks]") {
  Rng rng(163);
  ParamRegistry reg;
  size_t width = 6, heads = 2, n = 4;
  AttentionWeights w = AttentionWeights::make(width, heads, 12, rng, reg, "t");
  Tensor tokens = rand_t({n, width}, rng);

  // Oracle: explicit pre-norm block in scalar loops.
  auto ln_oracle = [&](const Tensor& x, const LayerNormParams& p) {
    Tensor out = Tensor::zeros(x.shape());
    for (size_t r = 0; r < x.rows(); ++r) {
      double mu = 0.0, var = 0.0;
      for (size_t c = 0; c < x.cols(); ++c) mu += x.at(r, c);
      mu /= static_cast<double>(x.cols());
      for (size_t c = 0; c < x.cols(); ++c)
        var += (x.at(r, c) - mu) * (x.at(r, c) - mu);
      var /= static_cast<double>(x.cols());
      for (size_t c = 0; c < x.cols(); ++c)
        out.at(r, c) = (x.at(r, c) - mu) / std::sqrt(var + 1e-5) * p.gain.data()[c] +
                       p.bias.data()[c];
    }
    return out;
  };
  auto affine = [](const Tensor& x, const LinearParams& p) {
    Tensor out = Tensor::zeros({x.rows(), p.w.cols()});
    for (size_t r = 0; r < x.rows(); ++r)
      for (size_t j = 0; j < p.w.cols(); ++j) {
        double acc = p.b.defined() ? p.b.data()[j] : 0.0;
        for (size_t i = 0; i < x.cols(); ++i) acc += x.at(r, i) * p.w.at(i, j);
        out.at(r, j) = acc;
      }
    return out;
  };
  Tensor xn = ln_oracle(tokens, w.ln1);
  std::vector<Tensor> head_outs;
  for (size_t h = 0; h < heads; ++h) {
    Tensor q = affine(xn, w.wq[h]), k = affine(xn, w.wk[h]), v = affine(xn, w.wv[h]);
    std::vector<double> o = attention_oracle(q, k, v);
    head_outs.push_back(Tensor::from({n, width / heads}, o));
  }
  Tensor mh = Tensor::zeros({n, width});
  for (size_t h = 0; h < heads; ++h)
    for (size_t r = 0; r < n; ++r)
      for (size_t c = 0; c < width / heads; ++c)
        mh.at(r, c + h * (width / heads)) = head_outs[h].at(r, c);
  Tensor a = Tensor::zeros({n, width});
  Tensor mo = affine(mh, w.wo);
  for (size_t i = 0; i < a.size(); ++i) a.data()[i] = tokens.data()[i] + mo.data()[i];
  Tensor an = ln_oracle(a, w.ln2);
  Tensor f1 = affine(an, w.ffn1);
  for (double& v : f1.data()) v = 0.5 * v * std::erfc(-v * 0.70710678118654752440);
  Tensor f2 = affine(f1, w.ffn2);
  for (size_t i = 0; i < a.size(); ++i) f2.data()[i] += a.data()[i];

  Tensor got = transformer_block(tokens, w);
  for (size_t i = 0; i < got.size(); ++i)
    REQUIRE(got.data()[i] == Catch::Approx(f2.data()[i]).margin(1e-10));
}

TEST_CASE("single-head block equals a directly composed attention path", "[blocks]") {
  Rng rng(168);
  ParamRegistry reg;
  size_t width = 6, n = 5;
  AttentionWeights w = AttentionWeights::make(width, 1, 12, rng, reg, "t");
  Tensor tokens = rand_t({n, width}, rng);
  // Compose the h=1 block out of the public pieces, no head loop involved.
  Tensor xn = w.ln1.apply(tokens);
  Tensor head = attention(w.wq[0].apply(xn), w.wk[0].apply(xn), w.wv[0].apply(xn));
  Tensor a = tokens + w.wo.apply(head);
  Tensor want = a + w.ffn2.apply(gelu(w.ffn1.apply(w.ln2.apply(a))));
  Tensor got = transformer_block(tokens, w);
  REQUIRE(got.data() == want.data());
}

TEST_CASE("post-norm variant normalizes after the residual joins", "[blocks]") {
  Rng rng(169);
  ParamRegistry reg;
  AttentionWeights w = AttentionWeights::make(6, 2, 12, rng, reg, "t");
  Tensor tokens = rand_t({4, 6}, rng);
  Tensor pre = transformer_block(tokens, w, /*pre_norm=*/true);
  Tensor post = transformer_block(tokens, w, /*pre_norm=*/false);
  REQUIRE(pre.data() != post.data());
  // Post-norm output rows are normalized (unit gain, zero bias at init).
  for (size_t r = 0; r < post.rows(); ++r) {
    double mu = 0.0;
    for (size_t c = 0; c < post.cols(); ++c) mu += post.at(r, c);
    REQUIRE(mu / 6.0 == Catch::Approx(0.0).margin(1e-9));
  }
}

TEST_CASE("transformer block gradient matches finite differences", "[blocks][grad]") {
  Rng rng(167);
  ParamRegistry reg;
  AttentionWeights w = AttentionWeights::make(4, 2, 8, rng, reg, "t");
  Tensor tokens = rand_t({3, 4}, rng);
  std::vector<Tensor> xs = reg.tensors();
  xs.push_back(tokens);
  double err = grad_check(
      [&](const std::vector<Tensor>& vars) {
        Tensor out = transformer_block(vars.back(), w);
        return sum(out * out);
      },
      xs, 1e-5);
  REQUIRE(err < 1e-4);
}

TEST_CASE("bi-ssm block: zeroed output projection is the identity", "[blocks]") {
  Rng rng(173);
  ParamRegistry reg;
  SsmParams p = SsmParams::make(6, 12, 4, 1, 4, rng, reg, "s");
  zero_tensor(p.out_proj.w);
  zero_tensor(p.out_proj.b);
  Tensor tokens = rand_t({5, 6}, rng);
  Tensor out = bi_ssm_block(tokens, p);
  REQUIRE(out.data() == tokens.data());
}

TEST_CASE("bi-ssm block: zeroed inner projection with identity Linear is the identity",
          "[blocks]") {
  Rng rng(179);
  ParamRegistry reg;
  size_t width = 6, d_inner = 6;
  SsmParams p = SsmParams::make(width, d_inner, 4, 1, 4, rng, reg, "s");
  zero_tensor(p.in_proj.w);
  zero_tensor(p.in_proj.b);
  zero_tensor(p.out_proj.w);
  zero_tensor(p.out_proj.b);
  for (size_t i = 0; i < d_inner; ++i) p.out_proj.w.at(i, i) = 1.0;  // Linear = identity
  Tensor tokens = rand_t({4, width}, rng);
  Tensor out = bi_ssm_block(tokens, p);
  REQUIRE(out.data() == tokens.data());
}

TEST_CASE("tied-parameter bi-scan is reversal-symmetric on palindromic input", "[blocks]") {
  Rng rng(181);
  ParamRegistry reg;
  SsmParams p = SsmParams::make(4, 8, 4, 1, 4, rng, reg, "s");
  p.bwd = p.fwd;  // tie the direction parameters
  // Palindromic sequence: row k equals row (L-1-k).
  size_t half = 3, d = 8;
  Tensor top = rand_t({half, d}, rng);
  Tensor u = concat_rows({top, reverse_rows(top)});
  Tensor s = bi_scan_sum(u, p);
  Tensor rev = reverse_rows(s);
  for (size_t i = 0; i < s.size(); ++i)
    REQUIRE(std::abs(s.data()[i] - rev.data()[i]) < 1e-10);
}

TEST_CASE("bi-ssm block gradient matches finite differences", "[blocks][grad]") {
  Rng rng(191);
  ParamRegistry reg;
  SsmParams p = SsmParams::make(4, 8, 3, 1, 4, rng, reg, "s");
  Tensor tokens = rand_t({4, 4}, rng);
  std::vector<Tensor> xs = reg.tensors();
  xs.push_back(tokens);
  double err = grad_check(
      [&](const std::vector<Tensor>& vars) {
        Tensor out = bi_ssm_block(vars.back(), p);
        return sum(out * out);
      },
      xs, 1e-5);
  REQUIRE(err < 1e-4);
}
