#pragma once

#include <cmath>
#include <cstdint>
#include <vector>

#include "pabm/common.hpp"
#include "pabm/tensor.hpp"

namespace pabm {

// Cosine decay: lr_min + (lr_max - lr_min) * (1 + cos(pi * step/total)) / 2.
// No warmup.
inline double cosine_lr(int64_t step, int64_t total_steps, double lr_max, double lr_min) {
  check(total_steps > 0, "cosine_lr: total_steps must be positive");
  check(step >= 0 && step <= total_steps, "cosine_lr: step out of [0, total_steps]");
  check(lr_min <= lr_max, "cosine_lr: lr_min > lr_max");
  double phase = 3.14159265358979323846 * static_cast<double>(step) /
                 static_cast<double>(total_steps);
  return lr_min + 0.5 * (lr_max - lr_min) * (1.0 + std::cos(phase));
}

struct AdamWState {
  int64_t step = 0;
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  double weight_decay = 0.05;
  std::vector<std::vector<double>> first_moment;
  std::vector<std::vector<double>> second_moment;

  static AdamWState init(const std::vector<Tensor>& params) {
    AdamWState st;
    st.first_moment.reserve(params.size());
    st.second_moment.reserve(params.size());
    for (const Tensor& p : params) {
      st.first_moment.emplace_back(p.size(), 0.0);
      st.second_moment.emplace_back(p.size(), 0.0);
    }
    return st;
  }
};

// One AdamW update with decoupled weight decay (decay applied to the
// parameter directly, then the bias-corrected moment step). Reads each
// parameter's accumulated gradient; pure arithmetic, so identical inputs
// give bit-identical outputs.
inline void adamw_step(std::vector<Tensor>& params, AdamWState& st) {
  check(params.size() == st.first_moment.size(), "adamw_step: state/param count mismatch");
  st.step += 1;
  double bc1 = 1.0 - std::pow(st.beta1, static_cast<double>(st.step));
  double bc2 = 1.0 - std::pow(st.beta2, static_cast<double>(st.step));
  for (size_t pi = 0; pi < params.size(); ++pi) {
    Tensor& p = params[pi];
    check(p.has_grad(), "adamw_step: parameter has no gradient");
    check(st.first_moment[pi].size() == p.size(), "adamw_step: moment shape mismatch");
    const std::vector<double>& g = p.grad();
    std::vector<double>& m = st.first_moment[pi];
    std::vector<double>& v = st.second_moment[pi];
    std::vector<double>& w = p.data();
    for (size_t i = 0; i < w.size(); ++i) {
      m[i] = st.beta1 * m[i] + (1.0 - st.beta1) * g[i];
      v[i] = st.beta2 * v[i] + (1.0 - st.beta2) * g[i] * g[i];
      double mhat = m[i] / bc1;
      double vhat = v[i] / bc2;
      w[i] -= st.lr * st.weight_decay * w[i];
      w[i] -= st.lr * mhat / (std::sqrt(vhat) + st.epsilon);
    }
  }
}

}  // namespace pabm
