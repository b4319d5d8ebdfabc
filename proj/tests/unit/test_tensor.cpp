#include <cmath>
#include <numeric>

#include "doctest.h"
#include "deblur_lab/adam.hpp"
#include "deblur_lab/errors.hpp"
#include "deblur_lab/ops.hpp"
#include "deblur_lab/rng.hpp"

using namespace deblur;

namespace {

Tensor random_tensor(const Shape& shape, std::uint64_t seed, bool grad = false) {
  Rng rng(seed);
  std::vector<double> v(shape_numel(shape));
  for (auto& x : v) x = rng.uniform(-1.0, 1.0);
  return Tensor::from_values(shape, v, grad);
}

ConvSpec spec(int k, int stride, Padding pad, int cin, int cout) {
  ConvSpec s;
  s.kernel_height = s.kernel_width = k;
  s.stride = stride;
  s.padding = pad;
  s.in_channels = cin;
  s.out_channels = cout;
  return s;
}

double dot(const Tensor& a, const Tensor& b) {
  return std::inner_product(a.values().begin(), a.values().end(), b.values().begin(), 0.0);
}

}  // namespace

TEST_CASE("tensor construction checks sizes") {
  CHECK_THROWS_AS(Tensor::from_values({2, 3}, {1, 2, 3}), DimensionError);
  CHECK_THROWS_AS(Tensor::zeros({0, 3}), DimensionError);
  const auto t = Tensor::full({2, 3}, 1.5);
  CHECK(t.numel() == 6);
  CHECK(t.values()[5] == 1.5);
  CHECK_FALSE(t.has_grad());
}

TEST_CASE("conv2d with a centered delta kernel is the identity") {
  const Tensor x = random_tensor({5, 5, 1}, 1);
  std::vector<double> w(9, 0.0);
  w[4] = 1.0;
  const Tensor y = conv2d(x, Tensor::from_values({3, 3, 1, 1}, w), Tensor::zeros({1}), spec(3, 1, Padding::kSame, 1, 1));
  REQUIRE(y.shape() == x.shape());
  for (std::size_t i = 0; i < x.numel(); ++i) CHECK(y.at(i) == x.at(i));
}

TEST_CASE("conv2d zero-fills outside a 1x1 input") {
  const Tensor y = conv2d(Tensor::from_values({1, 1, 1}, {2.0}), Tensor::full({3, 3, 1, 1}, 1.0), Tensor::zeros({1}),
                          spec(3, 1, Padding::kSame, 1, 1));
  REQUIRE(y.numel() == 1);
  CHECK(y.item() == 2.0);
}

TEST_CASE("conv2d output shapes") {
  const Tensor x = Tensor::zeros({256, 256, 3});
  const Tensor y = conv2d(x, Tensor::zeros({3, 3, 3, 32}), Tensor::zeros({32}), spec(3, 2, Padding::kSame, 3, 32));
  CHECK(y.shape() == Shape{128, 128, 32});
  const Tensor v = conv2d(Tensor::zeros({7, 9, 2}), Tensor::zeros({3, 3, 2, 4}), Tensor::zeros({4}),
                          spec(3, 1, Padding::kValid, 2, 4));
  CHECK(v.shape() == Shape{5, 7, 4});
  CHECK_THROWS_AS(conv2d(x, Tensor::zeros({3, 3, 2, 32}), Tensor::zeros({32}), spec(3, 2, Padding::kSame, 3, 32)),
                  DimensionError);
  CHECK_THROWS_AS(conv2d(x, Tensor::zeros({3, 3, 3, 32}), Tensor::zeros({31}), spec(3, 2, Padding::kSame, 3, 32)),
                  DimensionError);
}

TEST_CASE("conv2d_transpose shapes and identity") {
  const Tensor y = conv2d_transpose(Tensor::zeros({64, 64, 128}), Tensor::zeros({3, 3, 16, 128}), Tensor::zeros({16}),
                                    spec(3, 2, Padding::kSame, 128, 16));
  CHECK(y.shape() == Shape{128, 128, 16});

  const Tensor x = random_tensor({6, 6, 1}, 2);
  std::vector<double> w(9, 0.0);
  w[4] = 1.0;
  const Tensor id = conv2d_transpose(x, Tensor::from_values({3, 3, 1, 1}, w), Tensor::zeros({1}),
                                     spec(3, 1, Padding::kSame, 1, 1));
  for (std::size_t i = 0; i < x.numel(); ++i) CHECK(id.at(i) == x.at(i));
}

TEST_CASE("conv2d_transpose is the adjoint of conv2d") {
  // Input sizes chosen so that convT maps back onto the conv input shape.
  for (auto [k, s, pad, n] : {std::tuple{3, 1, Padding::kSame, 6}, std::tuple{3, 2, Padding::kSame, 6},
                              std::tuple{5, 2, Padding::kSame, 6}, std::tuple{3, 1, Padding::kValid, 6},
                              std::tuple{3, 2, Padding::kValid, 7}}) {
    const int cin = 2, cout = 3;
    const Tensor w = random_tensor({std::size_t(k), std::size_t(k), std::size_t(cin), std::size_t(cout)}, 10);
    const Tensor x = random_tensor({std::size_t(n), std::size_t(n), std::size_t(cin)}, 11);
    const Tensor cx = conv2d(x, w, Tensor::zeros({std::size_t(cout)}), spec(k, s, pad, cin, cout));
    const Tensor y = random_tensor(cx.shape(), 12);
    // The same weight array serves both: convT layout is [kh,kw,out,in] of the transpose.
    const Tensor ty = conv2d_transpose(y, w, Tensor::zeros({std::size_t(cin)}), spec(k, s, pad, cout, cin));
    REQUIRE(ty.shape() == x.shape());
    CHECK(std::abs(dot(cx, y) - dot(x, ty)) <= 1e-9);
  }
}

TEST_CASE("pointwise ops") {
  const Tensor r = relu(Tensor::from_values({2}, {-1.5, 2.0}));
  CHECK(r.at(0) == 0.0);
  CHECK(r.at(1) == 2.0);
  CHECK(sigmoid(Tensor::scalar(0.0)).item() == 0.5);
  const Tensor c = concat_last({Tensor::zeros({64, 64, 128}), Tensor::zeros({64, 64, 32})});
  CHECK(c.shape() == Shape{64, 64, 160});
  CHECK_THROWS_AS(add(Tensor::zeros({2, 3}), Tensor::zeros({3, 2})), DimensionError);
  CHECK_THROWS_AS(concat_last({Tensor::zeros({2, 3}), Tensor::zeros({3, 3})}), DimensionError);
}

TEST_CASE("layer_norm normalizes the last axis") {
  const Tensor x = random_tensor({4, 16}, 3);
  const Tensor y = layer_norm(x, Tensor::full({16}, 1.0), Tensor::zeros({16}));
  for (std::size_t r = 0; r < 4; ++r) {
    double m = 0, v = 0;
    for (std::size_t c = 0; c < 16; ++c) m += y.at(r * 16 + c);
    m /= 16;
    for (std::size_t c = 0; c < 16; ++c) v += (y.at(r * 16 + c) - m) * (y.at(r * 16 + c) - m);
    CHECK(std::abs(m) < 1e-12);
    CHECK(v / 16 == doctest::Approx(1.0).epsilon(1e-4));
  }
}

TEST_CASE("dropout scaling and inference identity") {
  const Tensor x = Tensor::full({1000}, 1.0);
  const Tensor off = dropout(x, 0.3, 5, false);
  for (std::size_t i = 0; i < x.numel(); ++i) CHECK(off.at(i) == 1.0);
  const Tensor on = dropout(x, 0.25, 5, true);
  std::size_t kept = 0;
  for (std::size_t i = 0; i < on.numel(); ++i) {
    CHECK((on.at(i) == 0.0 || std::abs(on.at(i) - 1.0 / 0.75) < 1e-15));
    kept += on.at(i) != 0.0;
  }
  CHECK(kept > 650);
  CHECK(kept < 850);
  const Tensor again = dropout(x, 0.25, 5, true);
  for (std::size_t i = 0; i < on.numel(); ++i) CHECK(on.at(i) == again.at(i));
}

TEST_CASE("multi-head attention") {
  AttentionSpec s;
  s.embed_dim = 8;
  s.num_heads = 2;
  auto identity = [] {
    std::vector<double> v(64, 0.0);
    for (int i = 0; i < 8; ++i) v[i * 8 + i] = 1.0;
    return Tensor::from_values({8, 8}, v);
  };
  const Tensor zb = Tensor::zeros({8});

  SUBCASE("identical tokens give uniform weights and reproduce the token") {
    std::vector<double> row{0.3, -0.2, 0.5, 0.1, 0.9, -0.7, 0.0, 0.4}, v;
    for (int n = 0; n < 5; ++n) v.insert(v.end(), row.begin(), row.end());
    std::vector<Tensor> attn;
    AttentionOptions opt;
    opt.attention_out = &attn;
    const Tensor out = multi_head_attention(Tensor::from_values({5, 8}, v), s,
                                            {identity(), zb, identity(), zb, identity(), zb, identity(), zb}, opt);
    REQUIRE(attn.size() == 2);
    for (const auto& a : attn)
      for (double w : a.values()) CHECK(w == doctest::Approx(0.2).epsilon(1e-12));
    for (std::size_t i = 0; i < out.numel(); ++i) CHECK(out.at(i) == doctest::Approx(row[i % 8]).epsilon(1e-12));
  }

  SUBCASE("rows of attention sum to one; permutation equivariance") {
    const Tensor x = random_tensor({6, 8}, 4);
    AttentionParams p{random_tensor({8, 8}, 5), random_tensor({8}, 6), random_tensor({8, 8}, 7), random_tensor({8}, 8),
                      random_tensor({8, 8}, 9), random_tensor({8}, 10), random_tensor({8, 8}, 11), random_tensor({8}, 12)};
    std::vector<Tensor> attn;
    AttentionOptions opt;
    opt.attention_out = &attn;
    const Tensor out = multi_head_attention(x, s, p, opt);
    for (const auto& a : attn)
      for (std::size_t r = 0; r < 6; ++r) {
        double sum_r = 0;
        for (std::size_t c = 0; c < 6; ++c) sum_r += a.at(r * 6 + c);
        CHECK(sum_r == doctest::Approx(1.0).epsilon(1e-12));
      }
    const std::vector<std::size_t> perm{3, 0, 5, 1, 4, 2};
    std::vector<std::size_t> idx;
    for (auto r : perm)
      for (std::size_t c = 0; c < 8; ++c) idx.push_back(r * 8 + c);
    const Tensor out_p = multi_head_attention(gather(x, idx, {6, 8}), s, p);
    for (std::size_t i = 0; i < idx.size(); ++i) CHECK(out_p.at(i) == doctest::Approx(out.at(idx[i])).epsilon(1e-12));
  }

  SUBCASE("default sizes") {
    AttentionSpec d;
    const auto w = [] { return Tensor::zeros({256, 256}); };
    const auto b = [] { return Tensor::zeros({256}); };
    const Tensor out = multi_head_attention(Tensor::zeros({64, 256}), d, {w(), b(), w(), b(), w(), b(), w(), b()});
    CHECK(out.shape() == Shape{64, 256});
  }

  SUBCASE("embed dim must divide by heads") {
    AttentionSpec bad;
    bad.embed_dim = 10;
    bad.num_heads = 4;
    CHECK_THROWS_AS(bad.validate(), ConfigError);
  }
}

TEST_CASE("backward") {
  SUBCASE("sum gives ones") {
    Tensor x = random_tensor({3, 4}, 1, true);
    backward(sum(x));
    for (double g : x.grad()) CHECK(g == 1.0);
  }
  SUBCASE("sum of squares") {
    Tensor x = Tensor::from_values({3}, {1, 2, 3}, true);
    backward(sum(mul(x, x)));
    CHECK(x.grad()[0] == 2.0);
    CHECK(x.grad()[1] == 4.0);
    CHECK(x.grad()[2] == 6.0);
  }
  SUBCASE("non-scalar loss rejected") {
    Tensor x = random_tensor({3}, 1, true);
    CHECK_THROWS_AS(backward(scale(x, 2.0)), DimensionError);
  }
  SUBCASE("second backward requires a reset") {
    Tensor x = random_tensor({3}, 1, true);
    const Tensor loss = sum(square(x));
    backward(loss);
    CHECK_THROWS_AS(backward(loss), StateError);
    clear_graph_grads(loss);
    backward(loss);
    CHECK(x.grad()[0] == doctest::Approx(2.0 * x.at(0)));
  }
  SUBCASE("shared subexpressions accumulate") {
    Tensor x = Tensor::from_values({1}, {3.0}, true);
    const Tensor y = mul(x, x);
    backward(sum(add(y, y)));  // 2x^2
    CHECK(x.grad()[0] == 12.0);
  }
  SUBCASE("no-grad guard records nothing") {
    Tensor x = random_tensor({3}, 1, true);
    NoGradGuard guard;
    const Tensor y = square(x);
    CHECK_FALSE(y.requires_grad());
    CHECK(y.is_leaf());
  }
}

TEST_CASE("adam_step") {
  SUBCASE("hand-evaluated first step") {
    std::vector<Tensor> p{Tensor::scalar(0.5, true)};
    p[0].grad_buffer()[0] = 1.0;
    AdamState st;
    AdamHyper h;
    adam_step(p, st, h);
    CHECK(st.step == 1);
    CHECK(p[0].item() == doctest::Approx(0.5 - 1e-4 / (1.0 + 1e-7)).epsilon(1e-12));
  }
  SUBCASE("zero gradient and zero lr leave params unchanged") {
    std::vector<Tensor> p{random_tensor({4}, 3, true)};
    const std::vector<double> before(p[0].values().begin(), p[0].values().end());
    AdamState st;
    adam_step(p, st, {});
    CHECK(st.step == 1);
    for (std::size_t i = 0; i < 4; ++i) CHECK(p[0].at(i) == before[i]);
    p[0].grad_buffer().assign(4, 3.0);
    AdamHyper h;
    h.lr = 0.0;
    adam_step(p, st, h);
    CHECK(st.step == 2);
    for (std::size_t i = 0; i < 4; ++i) CHECK(p[0].at(i) == before[i]);
  }
  SUBCASE("state mismatch") {
    std::vector<Tensor> p{random_tensor({4}, 3, true)};
    AdamState st;
    adam_step(p, st, {});
    std::vector<Tensor> q{random_tensor({5}, 3, true)};
    CHECK_THROWS_AS(adam_step(q, st, {}), DimensionError);
  }
}
