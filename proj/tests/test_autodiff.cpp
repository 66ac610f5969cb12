#include <doctest.h>

#include <cmath>
#include <cstring>

#include "pillarnest/errors.hpp"
#include "pillarnest/gradcheck.hpp"
#include "pillarnest/ops.hpp"
#include "pillarnest/rng.hpp"
#include "pillarnest/tensor.hpp"

using namespace pillarnest;

namespace {
Tensor random_tensor(const Shape& s, Rng& rng, float scale = 1.0f, bool req = false) {
  Tensor t = Tensor::zeros(s, req);
  for (int64_t i = 0; i < t.numel(); ++i) t.data()[i] = rng.uniform(-scale, scale);
  return t;
}
}  // namespace

TEST_CASE("backward of sum(w*x) is x") {
  Rng rng(5);
  Tensor x = random_tensor({4, 3}, rng);
  Tensor w = random_tensor({4, 3}, rng, 1.0f, true);
  backward(sum(mul(w, x)));
  REQUIRE(w.grad() != nullptr);
  for (int64_t i = 0; i < w.numel(); ++i) CHECK(w.grad()[i] == doctest::Approx(x.data()[i]));
}

TEST_CASE("backward requires a scalar") {
  Tensor v = Tensor::zeros({3}, true);
  CHECK_THROWS_AS(backward(v), UsageError);
}

TEST_CASE("repeated backward accumulates until grads are zeroed") {
  Tensor w = Tensor::from_data({2}, {1.0f, 2.0f}, true);
  backward(sum(mul_scalar(w, 3.0f)));
  backward(sum(mul_scalar(w, 3.0f)));
  CHECK(w.grad()[0] == doctest::Approx(6.0f));
  w.zero_grad();
  backward(sum(mul_scalar(w, 3.0f)));
  CHECK(w.grad()[0] == doctest::Approx(3.0f));
}

TEST_CASE("conv2d weight grads match central finite differences") {
  // fixture kept small so float32 round-off in the loss stays well under the
  // 1e-3 relative budget at h = 1e-3
  Rng rng(17);
  Tensor x = Tensor::zeros({1, 2, 4, 4});
  for (int64_t i = 0; i < x.numel(); ++i) x.data()[i] = rng.uniform(0.2f, 0.8f);
  Tensor w = random_tensor({2, 2, 3, 3}, rng, 0.5f, true);
  Tensor b = random_tensor({2}, rng, 0.5f, true);
  auto loss = [&]() { return sum(conv2d(x, w, b, 1, 1, 1)); };
  GradCheckOptions opts;
  opts.h = 1e-3f;
  opts.rtol = 1e-3f;
  opts.atol = 1e-4f;
  auto res = grad_check(loss, {{"w", w}, {"b", b}}, opts);
  CHECK_MESSAGE(res.ok, res.worst_detail);
}

TEST_CASE("conv2d input grads match finite differences (stride 2, groups)") {
  Rng rng(31);
  Tensor x = random_tensor({1, 4, 6, 6}, rng, 0.5f, true);
  Tensor w = random_tensor({4, 2, 3, 3}, rng, 0.5f, true);
  auto loss = [&]() {
    Tensor y = conv2d(x, w, std::nullopt, 2, 1, 2);
    return sum(mul(y, y));
  };
  auto res = grad_check(loss, {{"x", x}, {"w", w}}, {1e-2f, 2e-3f, 2e-3f, 0, 0});
  CHECK_MESSAGE(res.ok, res.worst_detail);
}

TEST_CASE("depthwise conv grads match finite differences") {
  Rng rng(41);
  Tensor x = random_tensor({1, 3, 8, 8}, rng, 0.5f, true);
  Tensor w = random_tensor({3, 1, 7, 7}, rng, 0.3f, true);
  Tensor b = random_tensor({3}, rng, 0.3f, true);
  auto loss = [&]() {
    Tensor y = conv2d(x, w, b, 1, 3, 3);
    return sum(mul(y, y));
  };
  auto res = grad_check(loss, {{"x", x}, {"w", w}, {"b", b}}, {1e-2f, 2e-3f, 2e-3f, 0, 0});
  CHECK_MESSAGE(res.ok, res.worst_detail);
}

TEST_CASE("elementwise and norm ops pass finite-difference checks") {
  Rng rng(59);
  Tensor x = random_tensor({3, 7}, rng, 0.8f, true);

  SUBCASE("gelu") {
    auto res = grad_check([&]() { return sum(gelu(x)); }, {{"x", x}}, {1e-2f, 2e-3f, 1e-3f, 0, 0});
    CHECK_MESSAGE(res.ok, res.worst_detail);
  }
  SUBCASE("sigmoid+log+sqrt chain") {
    auto loss = [&]() {
      Tensor s = sigmoid(x);
      return sum(pillarnest::sqrt(add_scalar(pillarnest::log(add_scalar(s, 1.0f)), 0.5f)));
    };
    auto res = grad_check(loss, {{"x", x}}, {1e-2f, 2e-3f, 1e-3f, 0, 0});
    CHECK_MESSAGE(res.ok, res.worst_detail);
  }
  SUBCASE("pow and abs") {
    auto loss = [&]() { return sum(pillarnest::pow(pillarnest::abs(x), 2.0f)); };
    auto res = grad_check(loss, {{"x", x}}, {1e-2f, 2e-3f, 2e-3f, 0, 0});
    CHECK_MESSAGE(res.ok, res.worst_detail);
  }
  SUBCASE("exp/mul/add/sub") {
    Tensor y = random_tensor({3, 7}, rng, 0.8f, true);
    auto loss = [&]() { return sum(mul(pillarnest::exp(mul_scalar(x, 0.5f)), sub(add(x, y), mul(x, y)))); };
    auto res = grad_check(loss, {{"x", x}, {"y", y}}, {1e-2f, 3e-3f, 2e-3f, 0, 0});
    CHECK_MESSAGE(res.ok, res.worst_detail);
  }
  SUBCASE("clamp passes grads only inside the window") {
    Tensor c = Tensor::from_data({3}, {-2.0f, 0.2f, 2.0f}, true);
    backward(sum(clamp(c, -1.0f, 1.0f)));
    CHECK(c.grad()[0] == 0.0f);
    CHECK(c.grad()[1] == 1.0f);
    CHECK(c.grad()[2] == 0.0f);
  }
}

TEST_CASE("layer_norm_cf grads match finite differences") {
  Rng rng(73);
  Tensor x = random_tensor({1, 6, 3, 3}, rng, 1.0f, true);
  Tensor gamma = random_tensor({6}, rng, 1.0f, true);
  Tensor beta = random_tensor({6}, rng, 1.0f, true);
  auto loss = [&]() {
    Tensor y = layer_norm_cf(x, gamma, beta, 1e-6f);
    return sum(mul(y, y));
  };
  auto res = grad_check(loss, {{"x", x}, {"g", gamma}, {"b", beta}}, {1e-2f, 5e-3f, 2e-3f, 0, 0});
  CHECK_MESSAGE(res.ok, res.worst_detail);
}

TEST_CASE("layer_norm_lastdim and linear grads match finite differences") {
  Rng rng(83);
  Tensor x = random_tensor({5, 4}, rng, 1.0f, true);
  Tensor w = random_tensor({6, 4}, rng, 0.6f, true);
  Tensor b = random_tensor({6}, rng, 0.6f, true);
  Tensor gamma = random_tensor({6}, rng, 1.0f, true);
  Tensor beta = random_tensor({6}, rng, 1.0f, true);
  auto loss = [&]() {
    Tensor y = layer_norm_lastdim(linear(x, w, b), gamma, beta, 1e-6f);
    return sum(mul(y, y));
  };
  auto res = grad_check(loss, {{"x", x}, {"w", w}, {"b", b}, {"g", gamma}, {"bt", beta}},
                        {1e-2f, 5e-3f, 2e-3f, 0, 0});
  CHECK_MESSAGE(res.ok, res.worst_detail);
}

TEST_CASE("pool_points, scatter, upsample, concat, scale_channels grads") {
  // pool feature values are spaced 0.35 apart per (pillar, dim) column so the
  // max-pool argmax cannot flip under the +-h probes (FD at a kink is garbage)
  Tensor f = Tensor::zeros({3, 4, 5}, true);
  for (int p = 0; p < 3; ++p)
    for (int n = 0; n < 4; ++n)
      for (int k = 0; k < 5; ++k)
        f.data()[(p * 4 + n) * 5 + k] = 0.17f * k - 0.4f + 0.35f * n - 0.11f * p;
  Tensor m = Tensor::zeros({3, 4});
  // pillar 0: 2 valid, pillar 1: 1 valid, pillar 2: 4 valid
  m.data()[0] = m.data()[1] = 1;
  m.data()[4] = 1;
  for (int j = 0; j < 4; ++j) m.data()[8 + j] = 1;
  auto loss = [&]() {
    Tensor pooled = pool_points(f, m);
    Tensor img = scatter_pillars(pooled, {{0, 0}, {1, 2}, {3, 1}}, 4, 4);
    Tensor up = upsample_nearest(img, 2);
    Tensor cat = concat_channels({img, img});
    Tensor sc = scale_channels(cat, Tensor::full({20}, 0.5f));
    return add(sum(mul(up, up)), sum(sc));
  };
  auto res = grad_check(loss, {{"f", f}}, {1e-2f, 3e-3f, 2e-3f, 0, 0});
  CHECK_MESSAGE(res.ok, res.worst_detail);
}

TEST_CASE("no-grad mode keeps the tape empty") {
  Tensor w = Tensor::full({3}, 2.0f, true);
  NoGradGuard ng;
  Tensor y = mul_scalar(w, 3.0f);
  CHECK_FALSE(y.requires_grad());
  CHECK(y.node()->parents.empty());
}

TEST_CASE("gradients are deterministic across runs") {
  auto run = [](uint64_t seed) {
    Rng rng(seed);
    Tensor x = random_tensor({1, 4, 8, 8}, rng);
    Tensor w = random_tensor({8, 4, 3, 3}, rng, 0.5f, true);
    backward(sum(gelu(conv2d(x, w, std::nullopt, 1, 1, 1))));
    return std::vector<float>(w.grad(), w.grad() + w.numel());
  };
  auto a = run(123), b = run(123);
  CHECK(std::memcmp(a.data(), b.data(), a.size() * 4) == 0);
}
