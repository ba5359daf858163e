#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <vector>

#include "pabm/common.hpp"
#include "pabm/random.hpp"
#include "pabm/tensor.hpp"

namespace pabm {

namespace detail {

// C (m x n) += or = A (m x k) @ B (k x n), row-major.
inline void mm(const double* a, const double* b, double* c, size_t m, size_t k, size_t n,
               bool accumulate) {
  if (!accumulate) std::fill(c, c + m * n, 0.0);
  for (size_t i = 0; i < m; ++i) {
    const double* arow = a + i * k;
    double* crow = c + i * n;
    for (size_t l = 0; l < k; ++l) {
      double av = arow[l];
      if (av == 0.0) continue;
      const double* brow = b + l * n;
      for (size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

// C (m x n) += A (m x k) @ B^T, B stored (n x k).
inline void mm_nt(const double* a, const double* b, double* c, size_t m, size_t k, size_t n,
                  bool accumulate) {
  if (!accumulate) std::fill(c, c + m * n, 0.0);
  for (size_t i = 0; i < m; ++i) {
    const double* arow = a + i * k;
    double* crow = c + i * n;
    for (size_t j = 0; j < n; ++j) {
      const double* brow = b + j * k;
      double acc = 0.0;
      for (size_t l = 0; l < k; ++l) acc += arow[l] * brow[l];
      crow[j] += acc;
    }
  }
}

// C (k x n) += A^T @ B, A stored (m x k), B (m x n).
inline void mm_tn(const double* a, const double* b, double* c, size_t m, size_t k, size_t n) {
  for (size_t i = 0; i < m; ++i) {
    const double* arow = a + i * k;
    const double* brow = b + i * n;
    for (size_t l = 0; l < k; ++l) {
      double av = arow[l];
      if (av == 0.0) continue;
      double* crow = c + l * n;
      for (size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

inline void check_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  check(a.shape() == b.shape(), std::string(op) + ": shape mismatch");
}

inline double sigmoid(double x) {
  if (x >= 0.0) {
    double e = std::exp(-x);
    return 1.0 / (1.0 + e);
  }
  double e = std::exp(x);
  return e / (1.0 + e);
}

inline double softplus_val(double x) {
  // max(x,0) + log1p(exp(-|x|)) is overflow-safe on both sides.
  return std::max(x, 0.0) + std::log1p(std::exp(-std::abs(x)));
}

}  // namespace detail

inline Tensor add(const Tensor& a, const Tensor& b) {
  detail::check_same_shape(a, b, "add");
  std::vector<double> out(a.size());
  for (size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] + b.data()[i];
  return detail::make_op(a.shape(), std::move(out), {a, b}, [](detail::Node& o) {
    for (int p = 0; p < 2; ++p)
      if (o.parents[p]->requires_grad)
        for (size_t i = 0; i < o.grad.size(); ++i) o.parents[p]->grad[i] += o.grad[i];
  });
}

inline Tensor sub(const Tensor& a, const Tensor& b) {
  detail::check_same_shape(a, b, "sub");
  std::vector<double> out(a.size());
  for (size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] - b.data()[i];
  return detail::make_op(a.shape(), std::move(out), {a, b}, [](detail::Node& o) {
    if (o.parents[0]->requires_grad)
      for (size_t i = 0; i < o.grad.size(); ++i) o.parents[0]->grad[i] += o.grad[i];
    if (o.parents[1]->requires_grad)
      for (size_t i = 0; i < o.grad.size(); ++i) o.parents[1]->grad[i] -= o.grad[i];
  });
}

// Elementwise (Hadamard) product.
inline Tensor mul(const Tensor& a, const Tensor& b) {
  detail::check_same_shape(a, b, "mul");
  std::vector<double> out(a.size());
  for (size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] * b.data()[i];
  return detail::make_op(a.shape(), std::move(out), {a, b}, [](detail::Node& o) {
    const auto& av = o.parents[0]->value;
    const auto& bv = o.parents[1]->value;
    if (o.parents[0]->requires_grad)
      for (size_t i = 0; i < o.grad.size(); ++i) o.parents[0]->grad[i] += o.grad[i] * bv[i];
    if (o.parents[1]->requires_grad)
      for (size_t i = 0; i < o.grad.size(); ++i) o.parents[1]->grad[i] += o.grad[i] * av[i];
  });
}

inline Tensor scalar_mul(const Tensor& a, double s) {
  std::vector<double> out(a.size());
  for (size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] * s;
  return detail::make_op(a.shape(), std::move(out), {a}, [s](detail::Node& o) {
    if (o.parents[0]->requires_grad)
      for (size_t i = 0; i < o.grad.size(); ++i) o.parents[0]->grad[i] += o.grad[i] * s;
  });
}

inline Tensor neg(const Tensor& a) { return scalar_mul(a, -1.0); }

inline Tensor operator+(const Tensor& a, const Tensor& b) { return add(a, b); }
inline Tensor operator-(const Tensor& a, const Tensor& b) { return sub(a, b); }
inline Tensor operator*(const Tensor& a, const Tensor& b) { return mul(a, b); }

// Matrix (m x n) plus row vector (n), broadcast over rows.
inline Tensor add_rowvec(const Tensor& m, const Tensor& v) {
  size_t rows = m.rows(), cols = m.cols();
  check(v.size() == cols, "add_rowvec: vector length != matrix columns");
  std::vector<double> out(m.size());
  for (size_t r = 0; r < rows; ++r)
    for (size_t c = 0; c < cols; ++c) out[r * cols + c] = m.data()[r * cols + c] + v.data()[c];
  return detail::make_op(m.shape(), std::move(out), {m, v}, [rows, cols](detail::Node& o) {
    if (o.parents[0]->requires_grad)
      for (size_t i = 0; i < o.grad.size(); ++i) o.parents[0]->grad[i] += o.grad[i];
    if (o.parents[1]->requires_grad)
      for (size_t r = 0; r < rows; ++r)
        for (size_t c = 0; c < cols; ++c) o.parents[1]->grad[c] += o.grad[r * cols + c];
  });
}

inline Tensor matmul(const Tensor& a, const Tensor& b) {
  size_t m = a.rows(), k = a.cols(), n = b.cols();
  check(b.rows() == k, "matmul: inner dimensions disagree");
  std::vector<double> out(m * n);
  detail::mm(a.data().data(), b.data().data(), out.data(), m, k, n, false);
  return detail::make_op({m, n}, std::move(out), {a, b}, [m, k, n](detail::Node& o) {
    const auto& av = o.parents[0]->value;
    const auto& bv = o.parents[1]->value;
    if (o.parents[0]->requires_grad)
      detail::mm_nt(o.grad.data(), bv.data(), o.parents[0]->grad.data(), m, n, k, true);
    if (o.parents[1]->requires_grad)
      detail::mm_tn(av.data(), o.grad.data(), o.parents[1]->grad.data(), m, k, n);
  });
}

// a (m x k) @ b^T with b stored (n x k); avoids materialized transposes.
inline Tensor matmul_nt(const Tensor& a, const Tensor& b) {
  size_t m = a.rows(), k = a.cols(), n = b.rows();
  check(b.cols() == k, "matmul_nt: inner dimensions disagree");
  std::vector<double> out(m * n);
  detail::mm_nt(a.data().data(), b.data().data(), out.data(), m, k, n, false);
  return detail::make_op({m, n}, std::move(out), {a, b}, [m, k, n](detail::Node& o) {
    const auto& av = o.parents[0]->value;
    const auto& bv = o.parents[1]->value;
    // C = A B^T: dA = G B, dB = G^T A.
    if (o.parents[0]->requires_grad)
      detail::mm(o.grad.data(), bv.data(), o.parents[0]->grad.data(), m, n, k, true);
    if (o.parents[1]->requires_grad)
      detail::mm_tn(o.grad.data(), av.data(), o.parents[1]->grad.data(), m, n, k);
  });
}

// x @ w + b. w is (in x out); b may be undefined for no bias.
inline Tensor linear(const Tensor& x, const Tensor& w, const Tensor& b) {
  Tensor y = matmul(x, w);
  return b.defined() ? add_rowvec(y, b) : y;
}

inline Tensor exp(const Tensor& a) {
  std::vector<double> out(a.size());
  for (size_t i = 0; i < out.size(); ++i) out[i] = std::exp(a.data()[i]);
  return detail::make_op(a.shape(), std::move(out), {a}, [](detail::Node& o) {
    if (o.parents[0]->requires_grad)
      for (size_t i = 0; i < o.grad.size(); ++i)
        o.parents[0]->grad[i] += o.grad[i] * o.value[i];
  });
}

inline Tensor silu(const Tensor& a) {
  std::vector<double> out(a.size());
  for (size_t i = 0; i < out.size(); ++i) {
    double x = a.data()[i];
    out[i] = x * detail::sigmoid(x);
  }
  return detail::make_op(a.shape(), std::move(out), {a}, [](detail::Node& o) {
    if (!o.parents[0]->requires_grad) return;
    const auto& xv = o.parents[0]->value;
    for (size_t i = 0; i < o.grad.size(); ++i) {
      double s = detail::sigmoid(xv[i]);
      o.parents[0]->grad[i] += o.grad[i] * s * (1.0 + xv[i] * (1.0 - s));
    }
  });
}

inline Tensor gelu(const Tensor& a) {
  constexpr double inv_sqrt2 = 0.70710678118654752440;
  constexpr double inv_sqrt2pi = 0.39894228040143267794;
  std::vector<double> out(a.size());
  for (size_t i = 0; i < out.size(); ++i) {
    double x = a.data()[i];
    out[i] = 0.5 * x * std::erfc(-x * inv_sqrt2);
  }
  return detail::make_op(a.shape(), std::move(out), {a}, [=](detail::Node& o) {
    if (!o.parents[0]->requires_grad) return;
    const auto& xv = o.parents[0]->value;
    for (size_t i = 0; i < o.grad.size(); ++i) {
      double x = xv[i];
      double cdf = 0.5 * std::erfc(-x * inv_sqrt2);
      double pdf = inv_sqrt2pi * std::exp(-0.5 * x * x);
      o.parents[0]->grad[i] += o.grad[i] * (cdf + x * pdf);
    }
  });
}

inline Tensor softplus(const Tensor& a) {
  std::vector<double> out(a.size());
  for (size_t i = 0; i < out.size(); ++i) out[i] = detail::softplus_val(a.data()[i]);
  return detail::make_op(a.shape(), std::move(out), {a}, [](detail::Node& o) {
    if (!o.parents[0]->requires_grad) return;
    const auto& xv = o.parents[0]->value;
    for (size_t i = 0; i < o.grad.size(); ++i)
      o.parents[0]->grad[i] += o.grad[i] * detail::sigmoid(xv[i]);
  });
}

// Row-wise softmax with max subtraction. Rejects non-finite input with the
// offending index in the message.
inline Tensor softmax_rows(const Tensor& a) {
  size_t rows = a.rows(), cols = a.cols();
  check(cols >= 1, "softmax_rows: empty rows");
  std::vector<double> out(a.size());
  for (size_t r = 0; r < rows; ++r) {
    const double* x = a.data().data() + r * cols;
    for (size_t c = 0; c < cols; ++c)
      if (!std::isfinite(x[c]))
        throw std::runtime_error(
            strformat("softmax_rows: non-finite input at (%zu, %zu)", r, c));
    double mx = x[0];
    for (size_t c = 1; c < cols; ++c) mx = std::max(mx, x[c]);
    double denom = 0.0;
    double* y = out.data() + r * cols;
    for (size_t c = 0; c < cols; ++c) {
      y[c] = std::exp(x[c] - mx);
      denom += y[c];
    }
    for (size_t c = 0; c < cols; ++c) y[c] /= denom;
  }
  return detail::make_op(a.shape(), std::move(out), {a}, [rows, cols](detail::Node& o) {
    if (!o.parents[0]->requires_grad) return;
    for (size_t r = 0; r < rows; ++r) {
      const double* y = o.value.data() + r * cols;
      const double* g = o.grad.data() + r * cols;
      double dot = 0.0;
      for (size_t c = 0; c < cols; ++c) dot += y[c] * g[c];
      double* gx = o.parents[0]->grad.data() + r * cols;
      for (size_t c = 0; c < cols; ++c) gx[c] += y[c] * (g[c] - dot);
    }
  });
}

// Row-wise layer norm with affine parameters. Population variance; eps added
// under the square root, so constant rows map to bias.
inline Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias,
                         double eps = 1e-5) {
  size_t rows = x.rows(), cols = x.cols();
  check(gain.size() == cols && bias.size() == cols, "layer_norm: param length != columns");
  check(cols >= 1, "layer_norm: empty rows");
  std::vector<double> out(x.size());
  std::vector<double> inv_std(rows), means(rows);
  for (size_t r = 0; r < rows; ++r) {
    const double* v = x.data().data() + r * cols;
    double mu = 0.0;
    for (size_t c = 0; c < cols; ++c) mu += v[c];
    mu /= static_cast<double>(cols);
    double var = 0.0;
    for (size_t c = 0; c < cols; ++c) var += (v[c] - mu) * (v[c] - mu);
    var /= static_cast<double>(cols);
    double s = 1.0 / std::sqrt(var + eps);
    means[r] = mu;
    inv_std[r] = s;
    double* y = out.data() + r * cols;
    for (size_t c = 0; c < cols; ++c)
      y[c] = (v[c] - mu) * s * gain.data()[c] + bias.data()[c];
  }
  return detail::make_op(
      x.shape(), std::move(out), {x, gain, bias},
      [rows, cols, inv_std = std::move(inv_std), means = std::move(means)](detail::Node& o) {
        const auto& xv = o.parents[0]->value;
        const auto& gv = o.parents[1]->value;
        for (size_t r = 0; r < rows; ++r) {
          const double* v = xv.data() + r * cols;
          const double* g = o.grad.data() + r * cols;
          double s = inv_std[r], mu = means[r];
          double m1 = 0.0, m2 = 0.0;
          for (size_t c = 0; c < cols; ++c) {
            double xhat = (v[c] - mu) * s;
            double gg = g[c] * gv[c];
            m1 += gg;
            m2 += gg * xhat;
          }
          m1 /= static_cast<double>(cols);
          m2 /= static_cast<double>(cols);
          if (o.parents[0]->requires_grad) {
            double* gx = o.parents[0]->grad.data() + r * cols;
            for (size_t c = 0; c < cols; ++c) {
              double xhat = (v[c] - mu) * s;
              gx[c] += s * (g[c] * gv[c] - m1 - xhat * m2);
            }
          }
          if (o.parents[1]->requires_grad)
            for (size_t c = 0; c < cols; ++c)
              o.parents[1]->grad[c] += g[c] * (v[c] - mu) * s;
          if (o.parents[2]->requires_grad)
            for (size_t c = 0; c < cols; ++c) o.parents[2]->grad[c] += g[c];
        }
      });
}

inline Tensor sum(const Tensor& a) {
  double s = 0.0;
  for (double v : a.data()) s += v;
  return detail::make_op({1}, {s}, {a}, [](detail::Node& o) {
    if (o.parents[0]->requires_grad)
      for (double& g : o.parents[0]->grad) g += o.grad[0];
  });
}

// Column means over rows: (m x n) -> (1 x n).
inline Tensor mean_rows(const Tensor& a) {
  size_t rows = a.rows(), cols = a.cols();
  std::vector<double> out(cols, 0.0);
  for (size_t r = 0; r < rows; ++r)
    for (size_t c = 0; c < cols; ++c) out[c] += a.data()[r * cols + c];
  for (double& v : out) v /= static_cast<double>(rows);
  return detail::make_op({1, cols}, std::move(out), {a}, [rows, cols](detail::Node& o) {
    if (!o.parents[0]->requires_grad) return;
    double inv = 1.0 / static_cast<double>(rows);
    for (size_t r = 0; r < rows; ++r)
      for (size_t c = 0; c < cols; ++c)
        o.parents[0]->grad[r * cols + c] += o.grad[c] * inv;
  });
}

// Column-wise max over rows: (m x n) -> (1 x n). Gradient routes to the
// first maximizing row.
inline Tensor max_rows(const Tensor& a) {
  size_t rows = a.rows(), cols = a.cols();
  std::vector<double> out(cols);
  std::vector<size_t> arg(cols, 0);
  for (size_t c = 0; c < cols; ++c) {
    double best = a.data()[c];
    size_t bi = 0;
    for (size_t r = 1; r < rows; ++r) {
      double v = a.data()[r * cols + c];
      if (v > best) {
        best = v;
        bi = r;
      }
    }
    out[c] = best;
    arg[c] = bi;
  }
  return detail::make_op({1, cols}, std::move(out), {a},
                         [cols, arg = std::move(arg)](detail::Node& o) {
                           if (!o.parents[0]->requires_grad) return;
                           for (size_t c = 0; c < cols; ++c)
                             o.parents[0]->grad[arg[c] * cols + c] += o.grad[c];
                         });
}

inline Tensor concat_rows(const std::vector<Tensor>& parts) {
  check(!parts.empty(), "concat_rows: no inputs");
  size_t cols = parts[0].cols(), rows = 0;
  for (const Tensor& p : parts) {
    check(p.cols() == cols, "concat_rows: column mismatch");
    rows += p.rows();
  }
  std::vector<double> out;
  out.reserve(rows * cols);
  for (const Tensor& p : parts) out.insert(out.end(), p.data().begin(), p.data().end());
  return detail::make_op({rows, cols}, std::move(out), parts, [](detail::Node& o) {
    size_t off = 0;
    for (auto& p : o.parents) {
      size_t n = p->value.size();
      if (p->requires_grad)
        for (size_t i = 0; i < n; ++i) p->grad[i] += o.grad[off + i];
      off += n;
    }
  });
}

inline Tensor concat_cols(const std::vector<Tensor>& parts) {
  check(!parts.empty(), "concat_cols: no inputs");
  size_t rows = parts[0].rows(), cols = 0;
  for (const Tensor& p : parts) {
    check(p.rows() == rows, "concat_cols: row mismatch");
    cols += p.cols();
  }
  std::vector<double> out(rows * cols);
  size_t off = 0;
  for (const Tensor& p : parts) {
    size_t pc = p.cols();
    for (size_t r = 0; r < rows; ++r)
      for (size_t c = 0; c < pc; ++c) out[r * cols + off + c] = p.data()[r * pc + c];
    off += pc;
  }
  return detail::make_op({rows, cols}, std::move(out), parts, [rows, cols](detail::Node& o) {
    size_t off = 0;
    for (auto& p : o.parents) {
      size_t pc = p->shape[1];
      if (p->requires_grad)
        for (size_t r = 0; r < rows; ++r)
          for (size_t c = 0; c < pc; ++c)
            p->grad[r * pc + c] += o.grad[r * cols + off + c];
      off += pc;
    }
  });
}

inline Tensor slice_cols(const Tensor& a, size_t c0, size_t len) {
  size_t rows = a.rows(), cols = a.cols();
  check(c0 + len <= cols, "slice_cols: out of range");
  std::vector<double> out(rows * len);
  for (size_t r = 0; r < rows; ++r)
    for (size_t c = 0; c < len; ++c) out[r * len + c] = a.data()[r * cols + c0 + c];
  return detail::make_op({rows, len}, std::move(out), {a},
                         [rows, cols, c0, len](detail::Node& o) {
                           if (!o.parents[0]->requires_grad) return;
                           for (size_t r = 0; r < rows; ++r)
                             for (size_t c = 0; c < len; ++c)
                               o.parents[0]->grad[r * cols + c0 + c] += o.grad[r * len + c];
                         });
}

// Select rows by index; indices may repeat, gradients accumulate.
inline Tensor gather_rows(const Tensor& a, std::vector<size_t> idx) {
  size_t cols = a.cols(), rows = a.rows();
  size_t k = idx.size();  // before the closure takes ownership of idx
  for (size_t i : idx) check(i < rows, "gather_rows: index out of range");
  std::vector<double> out(k * cols);
  for (size_t r = 0; r < k; ++r)
    std::copy_n(a.data().data() + idx[r] * cols, cols, out.data() + r * cols);
  return detail::make_op({k, cols}, std::move(out), {a},
                         [cols, idx = std::move(idx)](detail::Node& o) {
                           if (!o.parents[0]->requires_grad) return;
                           for (size_t r = 0; r < idx.size(); ++r)
                             for (size_t c = 0; c < cols; ++c)
                               o.parents[0]->grad[idx[r] * cols + c] += o.grad[r * cols + c];
                         });
}

inline Tensor row(const Tensor& a, size_t r) { return gather_rows(a, {r}); }

inline Tensor reverse_rows(const Tensor& a) {
  size_t rows = a.rows(), cols = a.cols();
  std::vector<double> out(a.size());
  for (size_t r = 0; r < rows; ++r)
    std::copy_n(a.data().data() + r * cols, cols, out.data() + (rows - 1 - r) * cols);
  return detail::make_op(a.shape(), std::move(out), {a}, [rows, cols](detail::Node& o) {
    if (!o.parents[0]->requires_grad) return;
    for (size_t r = 0; r < rows; ++r)
      for (size_t c = 0; c < cols; ++c)
        o.parents[0]->grad[r * cols + c] += o.grad[(rows - 1 - r) * cols + c];
  });
}

inline Tensor reshape(const Tensor& a, std::vector<size_t> shape) {
  check(numel_of(shape) == a.size(), "reshape: element count mismatch");
  std::vector<double> out = a.data();
  return detail::make_op(std::move(shape), std::move(out), {a}, [](detail::Node& o) {
    if (!o.parents[0]->requires_grad) return;
    for (size_t i = 0; i < o.grad.size(); ++i) o.parents[0]->grad[i] += o.grad[i];
  });
}

// Inverted dropout; identity when p == 0. Train-time only, caller provides
// the stream so runs stay seed-deterministic.
inline Tensor dropout(const Tensor& a, double p, Rng& rng) {
  check(p >= 0.0 && p < 1.0, "dropout: p must be in [0, 1)");
  if (p == 0.0) return a;
  double keep = 1.0 - p;
  std::vector<double> mask(a.size());
  for (double& m : mask) m = (rng.uniform() < keep) ? 1.0 / keep : 0.0;
  std::vector<double> out(a.size());
  for (size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] * mask[i];
  return detail::make_op(a.shape(), std::move(out), {a},
                         [mask = std::move(mask)](detail::Node& o) {
                           if (!o.parents[0]->requires_grad) return;
                           for (size_t i = 0; i < o.grad.size(); ++i)
                             o.parents[0]->grad[i] += o.grad[i] * mask[i];
                         });
}

// Cross-entropy from raw logits (single sample, shape (1 x K) or (K)).
inline Tensor cross_entropy_logits(const Tensor& logits, size_t target) {
  size_t k = logits.size();
  check(target < k, "cross_entropy_logits: target out of range");
  const auto& z = logits.data();
  double mx = z[0];
  for (size_t i = 1; i < k; ++i) mx = std::max(mx, z[i]);
  double denom = 0.0;
  for (size_t i = 0; i < k; ++i) denom += std::exp(z[i] - mx);
  double loss = mx + std::log(denom) - z[target];
  return detail::make_op({1}, {loss}, {logits}, [k, target, mx, denom](detail::Node& o) {
    if (!o.parents[0]->requires_grad) return;
    const auto& z = o.parents[0]->value;
    double g = o.grad[0];
    for (size_t i = 0; i < k; ++i) {
      double p = std::exp(z[i] - mx) / denom;
      o.parents[0]->grad[i] += g * (p - (i == target ? 1.0 : 0.0));
    }
  });
}

}  // namespace pabm
