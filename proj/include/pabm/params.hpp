#pragma once

#include <map>
#include <string>
#include <utility>
#include <vector>

#include "pabm/common.hpp"
#include "pabm/ops.hpp"
#include "pabm/random.hpp"
#include "pabm/tensor.hpp"

namespace pabm {

// Insertion-ordered name -> tensor registry. Checkpoints serialize in this
// order, so it must be deterministic for a given config.
class ParamRegistry {
 public:
  Tensor add(const std::string& name, Tensor t) {
    check(!index_.count(name), "ParamRegistry: duplicate parameter name: " + name);
    index_[name] = items_.size();
    items_.emplace_back(name, t);
    return t;
  }

  const std::vector<std::pair<std::string, Tensor>>& items() const { return items_; }

  std::vector<Tensor> tensors() const {
    std::vector<Tensor> out;
    out.reserve(items_.size());
    for (const auto& [_, t] : items_) out.push_back(t);
    return out;
  }

  const Tensor* find(const std::string& name) const {
    auto it = index_.find(name);
    return it == index_.end() ? nullptr : &items_[it->second].second;
  }

  size_t total_scalars() const {
    size_t n = 0;
    for (const auto& [_, t] : items_) n += t.size();
    return n;
  }

 private:
  std::vector<std::pair<std::string, Tensor>> items_;
  std::map<std::string, size_t> index_;
};

// Residual-branch output projections start near zero so every block is close
// to an identity map at init.
constexpr double kResidualInitGain = 0.02;

struct LinearParams {
  Tensor w;  // (in x out)
  Tensor b;  // (out), undefined when bias-free

  static LinearParams make(size_t in, size_t out, Rng& rng, ParamRegistry& reg,
                           const std::string& prefix, double gain = 1.0, bool bias = true) {
    LinearParams p;
    p.w = reg.add(prefix + ".w", Tensor::uniform_init({in, out}, in, rng, gain));
    if (bias) p.b = reg.add(prefix + ".b", Tensor::uniform_init({out}, in, rng, gain));
    return p;
  }

  Tensor apply(const Tensor& x) const { return linear(x, w, b); }
};

struct LayerNormParams {
  Tensor gain;
  Tensor bias;

  static LayerNormParams make(size_t width, ParamRegistry& reg, const std::string& prefix) {
    LayerNormParams p;
    p.gain = reg.add(prefix + ".gain", Tensor::full({width}, 1.0, true));
    p.bias = reg.add(prefix + ".bias", Tensor::zeros({width}, true));
    return p;
  }

  Tensor apply(const Tensor& x, double eps = 1e-5) const {
    return layer_norm(x, gain, bias, eps);
  }
};

}  // namespace pabm
