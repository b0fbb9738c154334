#include <doctest.h>

#include <cmath>
#include <cstring>
#include <functional>
#include <vector>

#include "optbench/fd_check.hpp"
#include "optbench/graph.hpp"
#include "optbench/rng.hpp"

using namespace optbench;

namespace {

TensorD random_tensor(Shape s, Philox& rng, bool requires_grad = true,
                      double scale = 1.0) {
  std::vector<double> v(static_cast<size_t>(s.numel()));
  for (double& x : v) x = rng.normal() * scale;
  return TensorD(std::move(s), std::move(v), requires_grad);
}

// Brute-force NHWC "same"-padding stride-1 convolution, the independent
// oracle for the im2col/GEMM path.
std::vector<double> conv2d_oracle(const TensorD& x, const TensorD& k) {
  int B = x.shape[0], H = x.shape[1], W = x.shape[2], C = x.shape[3];
  int kh = k.shape[0], kw = k.shape[1], F = k.shape[3];
  int ph = (kh - 1) / 2, pw = (kw - 1) / 2;
  std::vector<double> out(static_cast<size_t>(B) * H * W * F, 0.0);
  for (int b = 0; b < B; ++b)
    for (int oh = 0; oh < H; ++oh)
      for (int ow = 0; ow < W; ++ow)
        for (int f = 0; f < F; ++f) {
          double acc = 0.0;
          for (int dh = 0; dh < kh; ++dh)
            for (int dw = 0; dw < kw; ++dw)
              for (int c = 0; c < C; ++c) {
                int ih = oh + dh - ph, iw = ow + dw - pw;
                if (ih < 0 || ih >= H || iw < 0 || iw >= W) continue;
                double xv = x.values[((static_cast<size_t>(b) * H + ih) * W + iw) * C + c];
                double kv = k.values[((static_cast<size_t>(dh) * kw + dw) * C + c) * F + f];
                acc += xv * kv;
              }
          out[((static_cast<size_t>(b) * H + oh) * W + ow) * F + f] = acc;
        }
  return out;
}

// Runs one forward+backward of `build` and checks the analytic gradients of
// every tensor in `params` against 64-bit central differences.
void check_gradients(std::vector<TensorD*> params,
                     const std::function<Var<double>(Graph<double>&)>& build,
                     double tol = 1e-4, int max_coords = 512) {
  for (TensorD* p : params) p->zero_grad();
  Graph<double> g;
  Var<double> loss = build(g);
  REQUIRE(g.shape(loss).numel() == 1);
  g.backward(loss);
  auto loss_fn = [&]() {
    Graph<double> h;
    return h.value(build(h))[0];
  };
  Philox rng(2024, Stream::kParamInit);
  FdReport r = central_difference_check(params, loss_fn, max_coords, 1e-4, rng);
  CHECK(r.loss_finite);
  CHECK(r.coords_checked >= std::min<std::int64_t>(
            max_coords, [&] {
              std::int64_t t = 0;
              for (auto* p : params) t += p->numel();
              return t;
            }()));
  CHECK(r.max_rel_err < tol);
}

}  // namespace

TEST_SUITE("tensor_engine") {

TEST_CASE("matmul shape algebra") {
  Graph<double> g;
  TensorD a = TensorD::zeros({2, 3});
  TensorD b = TensorD::zeros({3, 4});
  auto c = matmul(g.constant(a), g.constant(b));
  CHECK(g.shape(c) == Shape{2, 4});
}

TEST_CASE("matmul values against hand computation") {
  Graph<double> g;
  auto a = g.constant({2, 2}, {1, 2, 3, 4});
  auto b = g.constant({2, 2}, {5, 6, 7, 8});
  auto c = matmul(a, b);
  CHECK(g.value(c) == std::vector<double>{19, 22, 43, 50});
}

TEST_CASE("shape mismatch names the primitive and both shapes") {
  Graph<double> g;
  auto a = g.constant(TensorD::zeros({2, 3}));
  auto b = g.constant(TensorD::zeros({4, 5}));
  try {
    matmul(a, b);
    FAIL("expected ShapeError");
  } catch (const ShapeError& e) {
    std::string msg = e.what();
    CHECK(msg.find("matmul") != std::string::npos);
    CHECK(msg.find("[2,3]") != std::string::npos);
    CHECK(msg.find("[4,5]") != std::string::npos);
  }
}

TEST_CASE("uniform logits give ln(C)") {
  Graph<float> g;
  const int B = 3, C = 10;
  auto logits = g.constant(Tensor<float>::full({B, C}, 0.42f));
  std::vector<std::int32_t> labels = {0, 4, 9};
  auto loss = softmax_cross_entropy(logits, std::span<const std::int32_t>(labels));
  CHECK(g.value(loss)[0] == doctest::Approx(std::log(10.0)).epsilon(1e-6));
}

TEST_CASE("conv2d matches the brute-force oracle and same-padding shape") {
  Philox rng(11, Stream::kParamInit);
  TensorD x = random_tensor({1, 8, 8, 1}, rng);
  TensorD k = random_tensor({3, 3, 1, 4}, rng);
  Graph<double> g;
  auto y = conv2d(g.constant(x), g.constant(k));
  CHECK(g.shape(y) == Shape{1, 8, 8, 4});
  auto expect = conv2d_oracle(x, k);
  const auto& got = g.value(y);
  REQUIRE(got.size() == expect.size());
  for (size_t i = 0; i < got.size(); ++i)
    CHECK(got[i] == doctest::Approx(expect[i]).epsilon(1e-12));

  // 5x5 kernel, multi-channel, multi-image
  TensorD x2 = random_tensor({2, 6, 5, 3}, rng);
  TensorD k2 = random_tensor({5, 5, 3, 2}, rng);
  Graph<double> g2;
  auto y2 = conv2d(g2.constant(x2), g2.constant(k2));
  CHECK(g2.shape(y2) == Shape{2, 6, 5, 2});
  auto expect2 = conv2d_oracle(x2, k2);
  const auto& got2 = g2.value(y2);
  for (size_t i = 0; i < got2.size(); ++i)
    CHECK(got2[i] == doctest::Approx(expect2[i]).epsilon(1e-12));
}

TEST_CASE("grad of sum is ones; grad of half norm squared is x") {
  Philox rng(3, Stream::kParamInit);
  TensorD x = random_tensor({4, 5}, rng);

  x.zero_grad();
  {
    Graph<double> g;
    auto loss = sum(g.input(x));
    g.backward(loss);
  }
  for (double v : x.grad) CHECK(v == 1.0);

  x.zero_grad();
  {
    Graph<double> g;
    auto loss = 0.5 * sum(square(g.input(x)));
    g.backward(loss);
  }
  for (size_t i = 0; i < x.grad.size(); ++i) CHECK(x.grad[i] == doctest::Approx(x.values[i]));
}

TEST_CASE("backward rejects non-scalar loss and a consumed graph") {
  TensorD x = TensorD::full({2, 2}, 1.0, true);
  Graph<double> g;
  auto v = square(g.input(x));
  CHECK_THROWS_AS(g.backward(v), GraphError);

  Graph<double> g2;
  auto loss = sum(square(g2.input(x)));
  g2.backward(loss);
  CHECK(g2.consumed());
  CHECK_THROWS_AS(g2.backward(loss), GraphError);
}

TEST_CASE("per-primitive adjoints match central differences") {
  Philox rng(17, Stream::kParamInit);

  auto weighted = [](Graph<double>& g, Var<double> y, const TensorD& w) {
    return sum(g.constant(w) * y);
  };

  SUBCASE("matmul") {
    TensorD a = random_tensor({7, 5}, rng), b = random_tensor({5, 6}, rng);
    TensorD w = random_tensor({7, 6}, rng, false);
    check_gradients({&a, &b}, [&](Graph<double>& g) {
      return weighted(g, matmul(g.input(a), g.input(b)), w);
    });
  }
  SUBCASE("add_bias") {
    TensorD x = random_tensor({6, 4}, rng), b = random_tensor({4}, rng);
    TensorD w = random_tensor({6, 4}, rng, false);
    check_gradients({&x, &b}, [&](Graph<double>& g) {
      return weighted(g, add_bias(g.input(x), g.input(b)), w);
    });
  }
  SUBCASE("conv2d") {
    TensorD x = random_tensor({2, 5, 6, 3}, rng), k = random_tensor({3, 3, 3, 4}, rng);
    TensorD w = random_tensor({2, 5, 6, 4}, rng, false);
    check_gradients({&x, &k}, [&](Graph<double>& g) {
      return weighted(g, conv2d(g.input(x), g.input(k)), w);
    });
  }
  SUBCASE("conv2d 5x5 kernel") {
    TensorD x = random_tensor({1, 7, 7, 2}, rng), k = random_tensor({5, 5, 2, 3}, rng);
    TensorD w = random_tensor({1, 7, 7, 3}, rng, false);
    check_gradients({&x, &k}, [&](Graph<double>& g) {
      return weighted(g, conv2d(g.input(x), g.input(k)), w);
    });
  }
  SUBCASE("maxpool2d") {
    // Margins >> fd step so the argmax never flips under the probe.
    TensorD x = random_tensor({2, 6, 6, 3}, rng);
    TensorD w = random_tensor({2, 3, 3, 3}, rng, false);
    check_gradients({&x}, [&](Graph<double>& g) {
      return weighted(g, maxpool2d(g.input(x)), w);
    });
  }
  SUBCASE("relu") {
    TensorD x = random_tensor({8, 9}, rng);
    for (double& v : x.values)
      if (std::abs(v) < 0.05) v = 0.1;  // keep clear of the kink
    TensorD w = random_tensor({8, 9}, rng, false);
    check_gradients({&x}, [&](Graph<double>& g) {
      return weighted(g, relu(g.input(x)), w);
    });
  }
  SUBCASE("sigmoid") {
    TensorD x = random_tensor({8, 9}, rng);
    TensorD w = random_tensor({8, 9}, rng, false);
    check_gradients({&x}, [&](Graph<double>& g) {
      return weighted(g, sigmoid(g.input(x)), w);
    });
  }
  SUBCASE("flatten") {
    TensorD x = random_tensor({3, 4, 5, 2}, rng);
    TensorD w = random_tensor({3, 40}, rng, false);
    check_gradients({&x}, [&](Graph<double>& g) {
      return weighted(g, flatten(g.input(x)), w);
    });
  }
  SUBCASE("sum and mean") {
    TensorD x = random_tensor({11, 13}, rng);
    check_gradients({&x}, [&](Graph<double>& g) { return sum(g.input(x)); });
    check_gradients({&x}, [&](Graph<double>& g) { return mean(g.input(x)); });
  }
  SUBCASE("square") {
    TensorD x = random_tensor({10, 10}, rng);
    TensorD w = random_tensor({10, 10}, rng, false);
    check_gradients({&x}, [&](Graph<double>& g) {
      return weighted(g, square(g.input(x)), w);
    });
  }
  SUBCASE("cos") {
    TensorD x = random_tensor({10, 10}, rng);
    TensorD w = random_tensor({10, 10}, rng, false);
    check_gradients({&x}, [&](Graph<double>& g) {
      return weighted(g, cos(g.input(x)), w);
    });
  }
  SUBCASE("softmax_cross_entropy") {
    TensorD x = random_tensor({16, 10}, rng);
    std::vector<std::int32_t> labels(16);
    for (auto& l : labels) l = static_cast<std::int32_t>(rng.below(10));
    check_gradients({&x}, [&](Graph<double>& g) {
      return softmax_cross_entropy(g.input(x), std::span<const std::int32_t>(labels));
    });
  }
  SUBCASE("add sub mul") {
    TensorD a = random_tensor({9, 7}, rng), b = random_tensor({9, 7}, rng);
    TensorD w = random_tensor({9, 7}, rng, false);
    check_gradients({&a, &b}, [&](Graph<double>& g) {
      return weighted(g, g.input(a) + g.input(b), w);
    });
    check_gradients({&a, &b}, [&](Graph<double>& g) {
      return weighted(g, g.input(a) - g.input(b), w);
    });
    check_gradients({&a, &b}, [&](Graph<double>& g) {
      return weighted(g, g.input(a) * g.input(b), w);
    });
  }
  SUBCASE("scale and add_const") {
    TensorD x = random_tensor({12, 9}, rng);
    TensorD w = random_tensor({12, 9}, rng, false);
    check_gradients({&x}, [&](Graph<double>& g) {
      return weighted(g, 3.25 * g.input(x) - 1.5, w);
    });
  }
  SUBCASE("select_col") {
    TensorD x = random_tensor({14, 6}, rng);
    TensorD w = random_tensor({14}, rng, false);
    check_gradients({&x}, [&](Graph<double>& g) {
      return weighted(g, select_col(g.input(x), 2), w);
    });
  }
  SUBCASE("l2_penalty composition") {
    TensorD a = random_tensor({5, 4}, rng), b = random_tensor({3}, rng);
    check_gradients({&a, &b}, [&](Graph<double>& g) {
      std::vector<Var<double>> ws = {g.input(a), g.input(b)};
      return l2_penalty(std::span<const Var<double>>(ws));
    });
  }
}

TEST_CASE("small MLP gradient in float matches 64-bit differences to 1e-3") {
  Philox rng(23, Stream::kParamInit);
  TensorD w1d = random_tensor({12, 8}, rng, true, 0.5);
  TensorD b1d = random_tensor({8}, rng, true, 0.1);
  TensorD w2d = random_tensor({8, 5}, rng, true, 0.5);
  TensorD b2d = random_tensor({5}, rng, true, 0.1);
  TensorD xd = random_tensor({4, 12}, rng, false);
  std::vector<std::int32_t> labels = {0, 2, 4, 1};

  auto build = [&](auto& g, auto& w1, auto& b1, auto& w2, auto& b2, auto& x) {
    auto h = relu(affine(g.input(x), g.input(w1), g.input(b1)));
    auto logits = affine(h, g.input(w2), g.input(b2));
    return softmax_cross_entropy(logits, std::span<const std::int32_t>(labels));
  };

  // analytic gradients in training precision (float)
  TensorF w1 = w1d.cast<float>(), b1 = b1d.cast<float>(), w2 = w2d.cast<float>(),
          b2 = b2d.cast<float>(), x = xd.cast<float>();
  for (TensorF* t : {&w1, &b1, &w2, &b2}) t->zero_grad();
  {
    Graph<float> g;
    g.backward(build(g, w1, b1, w2, b2, x));
  }
  // copy float analytic grads into the double tensors for comparison
  auto copy_grad = [](const TensorF& src, TensorD& dst) {
    dst.zero_grad();
    for (size_t i = 0; i < src.grad.size(); ++i) dst.grad[i] = src.grad[i];
  };
  copy_grad(w1, w1d);
  copy_grad(b1, b1d);
  copy_grad(w2, w2d);
  copy_grad(b2, b2d);

  auto loss64 = [&]() {
    Graph<double> g;
    return g.value(build(g, w1d, b1d, w2d, b2d, xd))[0];
  };
  std::vector<TensorD*> params = {&w1d, &b1d, &w2d, &b2d};
  Philox crng(5, Stream::kParamInit);
  FdReport r = central_difference_check(params, loss64, 200, 1e-3, crng);
  CHECK(r.loss_finite);
  CHECK(r.max_rel_err < 1e-3);
}

TEST_CASE("forward+backward is bitwise deterministic") {
  Philox rng(29, Stream::kParamInit);
  TensorD w = random_tensor({6, 4}, rng);
  TensorD x = random_tensor({5, 6}, rng, false);
  TensorD wcopy = w;

  auto run = [&](TensorD& wt) {
    wt.zero_grad();
    Graph<double> g;
    auto loss = mean(square(sigmoid(matmul(g.constant(x), g.input(wt)))));
    g.backward(loss);
    return g.value(loss)[0];
  };
  double l1 = run(w);
  double l2 = run(wcopy);
  CHECK(std::memcmp(&l1, &l2, sizeof(double)) == 0);
  CHECK(std::memcmp(w.grad.data(), wcopy.grad.data(), w.grad.size() * sizeof(double)) == 0);
}

TEST_CASE("backward is linear in the loss") {
  Philox rng(31, Stream::kParamInit);
  TensorD x = random_tensor({6, 6}, rng);
  const double a = 1.7, b = -0.6;

  auto l1 = [](Graph<double>& g, TensorD& t) { return mean(square(g.input(t))); };
  auto l2 = [](Graph<double>& g, TensorD& t) { return sum(cos(g.input(t))); };

  x.zero_grad();
  {
    Graph<double> g;
    g.backward(l1(g, x));
  }
  std::vector<double> g1 = x.grad;
  x.zero_grad();
  {
    Graph<double> g;
    g.backward(l2(g, x));
  }
  std::vector<double> g2 = x.grad;
  x.zero_grad();
  {
    Graph<double> g;
    g.backward(g.add(g.scale(l1(g, x), a), g.scale(l2(g, x), b)));
  }
  for (size_t i = 0; i < x.grad.size(); ++i) {
    double expect = a * g1[i] + b * g2[i];
    CHECK(x.grad[i] == doctest::Approx(expect).epsilon(1e-6));
  }
}

TEST_CASE("softmax cross-entropy gradient closed form") {
  Philox rng(37, Stream::kParamInit);
  const int B = 8, C = 5;
  TensorD logits = random_tensor({B, C}, rng);
  std::vector<std::int32_t> labels(B);
  for (auto& l : labels) l = static_cast<std::int32_t>(rng.below(C));

  logits.zero_grad();
  Graph<double> g;
  auto loss = softmax_cross_entropy(g.input(logits),
                                    std::span<const std::int32_t>(labels));
  g.backward(loss);

  for (int i = 0; i < B; ++i) {
    const double* row = logits.values.data() + i * C;
    double m = *std::max_element(row, row + C);
    double z = 0.0;
    for (int j = 0; j < C; ++j) z += std::exp(row[j] - m);
    for (int j = 0; j < C; ++j) {
      double p = std::exp(row[j] - m) / z;
      double expect = (p - (labels[static_cast<size_t>(i)] == j ? 1.0 : 0.0)) / B;
      CHECK(logits.grad[static_cast<size_t>(i) * C + j] ==
            doctest::Approx(expect).epsilon(1e-6));
    }
  }
}

TEST_CASE("maxpool picks maxima and routes gradient to them") {
  Graph<double> g;
  TensorD x({1, 2, 2, 1}, {1.0, 5.0, 2.0, 3.0}, true);
  x.zero_grad();
  auto y = maxpool2d(g.input(x));
  CHECK(g.value(y) == std::vector<double>{5.0});
  g.backward(g.sum(y));
  CHECK(x.grad == std::vector<double>{0.0, 1.0, 0.0, 0.0});
}

}  // TEST_SUITE
