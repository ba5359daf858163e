#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include "pabm/optim.hpp"

using namespace pabm;

namespace {

Tensor leaf_with_grad(std::vector<double> value, std::vector<double> grad) {
  size_t n = value.size();
  Tensor t = Tensor::from({n}, std::move(value), true);
  t.zero_grad();
  for (size_t i = 0; i < grad.size(); ++i) t.grad()[i] = grad[i];
  return t;
}

}  // namespace

TEST_CASE("adamw: zero gradients and zero decay leave parameters unchanged", "[optim]") {
  std::vector<Tensor> params = {leaf_with_grad({1.0, -2.0, 0.5}, {0.0, 0.0, 0.0})};
  AdamWState st = AdamWState::init(params);
  st.lr = 0.1;
  st.weight_decay = 0.0;
  adamw_step(params, st);
  REQUIRE(params[0].data() == std::vector<double>{1.0, -2.0, 0.5});
  REQUIRE(st.step == 1);
}

TEST_CASE("adamw: single scalar step matches hand execution", "[optim]") {
  // Hand-executed oracle for p=1, g=1, lr=0.1, beta=(0.9, 0.999), eps=1e-8,
  // wd=0, step 1:
  //   m = 0.1, v = 0.001; mhat = m/(1-0.9) = 1, vhat = v/(1-0.999) = 1
  //   p' = 1 - 0.1 * 1 / (sqrt(1) + 1e-8)
  double expected = 1.0 - 0.1 * (1.0 / (std::sqrt(1.0) + 1e-8));
  std::vector<Tensor> params = {leaf_with_grad({1.0}, {1.0})};
  AdamWState st = AdamWState::init(params);
  st.lr = 0.1;
  st.weight_decay = 0.0;
  adamw_step(params, st);
  REQUIRE(params[0].data()[0] == Catch::Approx(expected).margin(1e-15));
}

TEST_CASE("adamw: decoupled decay applies directly to parameters", "[optim]") {
  std::vector<Tensor> params = {leaf_with_grad({2.0}, {0.0})};
  AdamWState st = AdamWState::init(params);
  st.lr = 0.1;
  st.weight_decay = 0.01;
  adamw_step(params, st);
  REQUIRE(params[0].data()[0] == Catch::Approx(2.0 * (1.0 - 0.001)).margin(1e-15));
}

TEST_CASE("adamw is deterministic: identical inputs, bit-identical outputs", "[optim]") {
  auto run = [] {
    std::vector<Tensor> params = {leaf_with_grad({1.0, 0.25, -3.0}, {0.3, -0.7, 0.01})};
    AdamWState st = AdamWState::init(params);
    st.lr = 3e-4;
    for (int i = 0; i < 5; ++i) adamw_step(params, st);
    return params[0].data();
  };
  REQUIRE(run() == run());
}

TEST_CASE("adamw rejects mismatched state", "[optim]") {
  std::vector<Tensor> params = {leaf_with_grad({1.0, 2.0}, {0.1, 0.1})};
  AdamWState st = AdamWState::init(params);
  st.first_moment[0].resize(3);
  REQUIRE_THROWS(adamw_step(params, st));
}

TEST_CASE("cosine schedule endpoints and midpoint", "[optim]") {
  REQUIRE(cosine_lr(0, 100, 1e-3, 1e-6) == Catch::Approx(1e-3));
  REQUIRE(cosine_lr(100, 100, 1e-3, 1e-6) == Catch::Approx(1e-6));
  REQUIRE(cosine_lr(50, 100, 1e-3, 1e-6) == Catch::Approx((1e-3 + 1e-6) / 2.0));
}

TEST_CASE("cosine schedule is monotone non-increasing", "[optim]") {
  double prev = cosine_lr(0, 357, 2e-3, 1e-5);
  for (int s = 1; s <= 357; ++s) {
    double lr = cosine_lr(s, 357, 2e-3, 1e-5);
    REQUIRE(lr <= prev + 1e-18);
    prev = lr;
  }
}

TEST_CASE("cosine schedule rejects out-of-range steps", "[optim]") {
  REQUIRE_THROWS(cosine_lr(-1, 10, 1e-3, 1e-6));
  REQUIRE_THROWS(cosine_lr(11, 10, 1e-3, 1e-6));
  REQUIRE_THROWS(cosine_lr(5, 10, 1e-6, 1e-3));
}
