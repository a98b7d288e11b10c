#include <doctest.h>

#include <cmath>
#include <random>

#include "lfg/error.hpp"
#include "lfg/nn/gradcheck.hpp"
#include "lfg/nn/kernels.hpp"
#include "lfg/nn/layers.hpp"

using namespace lfg::nn;

namespace {

Tensor random_tensor(Shape s, std::mt19937_64& rng, double lo = -1, double hi = 1) {
  std::uniform_real_distribution<double> u(lo, hi);
  Tensor t(s);
  for (auto& v : t.values()) v = u(rng);
  return t;
}

Tensor random_mask(Shape s, std::mt19937_64& rng, double hole_fraction) {
  std::bernoulli_distribution hole(hole_fraction);
  Tensor m(s);
  for (auto& v : m.values()) v = hole(rng) ? 0.0 : 1.0;
  return m;
}

ConvParams random_conv(int in, int out, int k, int stride, int pad, std::mt19937_64& rng) {
  ConvParams p("conv", in, out, k, stride, pad);
  p.weight.value = random_tensor(p.weight.value.shape(), rng);
  p.bias.value = random_tensor(p.bias.value.shape(), rng);
  return p;
}

// Direct sliding-window cross-correlation with zero padding.
Tensor naive_conv(const Tensor& x, const ConvParams& p) {
  const int k = p.kernel_h(), s = p.stride, pad = p.padding;
  const int ho = (x.h() + 2 * pad - k) / s + 1, wo = (x.w() + 2 * pad - k) / s + 1;
  Tensor y({x.n(), p.out_channels(), ho, wo});
  for (int n = 0; n < x.n(); ++n)
    for (int o = 0; o < p.out_channels(); ++o)
      for (int i = 0; i < ho; ++i)
        for (int j = 0; j < wo; ++j) {
          double acc = p.bias.value[o];
          for (int c = 0; c < x.c(); ++c)
            for (int a = 0; a < k; ++a)
              for (int b = 0; b < k; ++b) {
                const int yy = i * s - pad + a, xx = j * s - pad + b;
                if (yy >= 0 && xx >= 0 && yy < x.h() && xx < x.w()) {
                  acc += p.weight.value.at(o, c, a, b) * x.at(n, c, yy, xx);
                }
              }
          y.at(n, o, i, j) = acc;
        }
  return y;
}

double max_abs_diff(const Tensor& a, const Tensor& b) {
  REQUIRE(a.shape() == b.shape());
  double m = 0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

double weighted_sum(const Tensor& y, const Tensor& r) {
  double s = 0;
  for (std::size_t i = 0; i < y.size(); ++i) s += y[i] * r[i];
  return s;
}

}  // namespace

TEST_CASE("conv2d examples") {
  std::mt19937_64 rng(1);
  ConvParams id("id", 1, 1, 1, 1, 0);
  id.weight.value[0] = 1;
  const Tensor x = random_tensor({2, 1, 4, 5}, rng);
  CHECK(max_abs_diff(conv2d(x, id), x) == 0.0);

  const ConvParams p = random_conv(2, 3, 3, 1, 1, rng);
  const Tensor y0 = conv2d(Tensor({1, 2, 4, 4}), p);
  for (int o = 0; o < 3; ++o)
    for (int i = 0; i < 16; ++i) CHECK(y0.plane(0, o)[i] == p.bias.value[o]);

  const ConvParams q = random_conv(1, 1, 3, 1, 0, rng);
  const Tensor x5 = random_tensor({1, 1, 5, 5}, rng);
  CHECK(max_abs_diff(conv2d(x5, q), naive_conv(x5, q)) < 1e-6);
  for (int stride : {1, 2})
    for (int pad : {0, 1}) {
      const ConvParams r = random_conv(3, 4, 3, stride, pad, rng);
      const Tensor xi = random_tensor({2, 3, 9, 8}, rng);
      CHECK(max_abs_diff(conv2d(xi, r), naive_conv(xi, r)) < 1e-12);
    }
  CHECK_THROWS_AS(conv2d(Tensor({1, 2, 4, 4}), q), lfg::Error);
}

TEST_CASE("OpenMP kernels agree with the serial reference") {
  std::mt19937_64 rng(2);
  for (const auto& g : {kernels::ConvGeometry{3, 3, 1, 1}, kernels::ConvGeometry{4, 4, 2, 1},
                        kernels::ConvGeometry{3, 3, 2, 1}, kernels::ConvGeometry{1, 1, 1, 0}}) {
    const Tensor x = random_tensor({3, 4, 12, 10}, rng);
    const Tensor w = random_tensor({5, 4, g.kh, g.kw}, rng);
    std::vector<double> bias{0.1, -0.2, 0.3, 0.0, 0.5};
    Tensor y1, y2;
    kernels::conv2d_forward(x, w, bias, g, y1);
    kernels::conv2d_forward_reference(x, w, bias, g, y2);
    CHECK(max_abs_diff(y1, y2) < 1e-12);
    const Tensor gy = random_tensor(y1.shape(), rng);
    Tensor gx1(x.shape()), gx2(x.shape()), gw1(w.shape()), gw2(w.shape());
    std::vector<double> gb1(5), gb2(5);
    kernels::conv2d_backward(x, w, g, gy, &gx1, &gw1, gb1);
    kernels::conv2d_backward_reference(x, w, g, gy, &gx2, &gw2, gb2);
    CHECK(max_abs_diff(gx1, gx2) < 1e-12);
    CHECK(max_abs_diff(gw1, gw2) < 1e-12);
    for (int o = 0; o < 5; ++o) CHECK(std::abs(gb1[o] - gb2[o]) < 1e-12);
  }
}

TEST_CASE("partial conv with an all-ones mask equals conv2d") {
  std::mt19937_64 rng(3);
  for (int t = 0; t < 20; ++t) {
    const int stride = 1 + t % 2;
    const ConvParams p = random_conv(2, 3, 3, stride, 1, rng);
    const Tensor x = random_tensor({2, 2, 8, 8}, rng);
    const auto r = partial_conv2d(x, Tensor({2, 1, 8, 8}, 1.0), p);
    CHECK(max_abs_diff(r.out, conv2d(x, p)) < 1e-12);
    for (double m : r.mask.values()) CHECK(m == 1.0);
  }
}

TEST_CASE("partial conv renormalized window sum") {
  ConvParams p("pc", 1, 1, 3, 1, 0);
  p.weight.value.fill(1.0);
  p.bias.value[0] = 0.1;
  Tensor x({1, 1, 3, 3});
  Tensor m({1, 1, 3, 3});
  const double vals[9] = {0.3, 0.9, 0.2, 0.5, 0.7, 0.4, 0.8, 0.1, 0.6};
  for (int i = 0; i < 9; ++i) x[i] = vals[i];
  double s = 0;
  for (int i : {0, 2, 4, 7}) {
    m[i] = 1;
    s += vals[i];
  }
  const auto r = partial_conv2d(x, m, p);
  REQUIRE(r.out.size() == 1);
  CHECK(r.out[0] == doctest::Approx(s * 9.0 / 4.0 + 0.1).epsilon(1e-12));
  CHECK(r.mask[0] == 1.0);

  const auto z = partial_conv2d(x, Tensor({1, 1, 3, 3}), p);
  CHECK(z.out[0] == 0.0);
  CHECK(z.mask[0] == 0.0);
  Tensor bad({1, 1, 3, 3}, 0.5);
  CHECK_THROWS_AS(partial_conv2d(x, bad, p), lfg::Error);
}

TEST_CASE("partial conv accepts per-channel masks") {
  std::mt19937_64 rng(4);
  const ConvParams p = random_conv(2, 2, 3, 1, 1, rng);
  const Tensor x = random_tensor({1, 2, 6, 6}, rng);
  const Tensor m1 = random_mask({1, 1, 6, 6}, rng, 0.4);
  const auto a = partial_conv2d(x, m1, p);
  const auto b = partial_conv2d(x, broadcast_channels(m1, 2), p);
  CHECK(max_abs_diff(a.out, b.out) < 1e-12);
  CHECK(max_abs_diff(a.mask, b.mask) == 0.0);
}

TEST_CASE("partial conv hole invariance") {
  std::mt19937_64 rng(5);
  for (int t = 0; t < 10; ++t) {
    const ConvParams p = random_conv(1, 4, 3, 1 + t % 2, 1, rng);
    const Tensor x = random_tensor({2, 1, 10, 10}, rng);
    const Tensor m = random_mask(x.shape(), rng, 0.5);
    Tensor y = x;
    for (std::size_t i = 0; i < y.size(); ++i)
      if (m[i] == 0) y[i] += 100.0 * (i % 7 + 1);
    CHECK(max_abs_diff(partial_conv2d(x, m, p).out, partial_conv2d(y, m, p).out) <= 1e-12);
  }
}

TEST_CASE("mask_update dilation") {
  CHECK(max_abs_diff(mask_update(Tensor({1, 1, 5, 5}), 3, 3, 1, 1), Tensor({1, 1, 5, 5})) == 0);
  CHECK(max_abs_diff(mask_update(Tensor({1, 1, 5, 5}, 1.0), 3, 3, 1, 1), Tensor({1, 1, 5, 5}, 1.0)) == 0);
  Tensor m({1, 1, 5, 5});
  m.at(0, 0, 2, 2) = 1;
  const auto d = mask_update(m, 3, 3, 1, 1);
  for (int r = 0; r < 5; ++r)
    for (int c = 0; c < 5; ++c) CHECK(d.at(0, 0, r, c) == ((std::abs(r - 2) <= 1 && std::abs(c - 2) <= 1) ? 1.0 : 0.0));
}

TEST_CASE("mask_update is monotone and idempotent once saturated") {
  std::mt19937_64 rng(6);
  Tensor m = random_mask({1, 1, 16, 16}, rng, 0.9);
  for (int it = 0; it < 20; ++it) {
    const Tensor next = mask_update(m, 3, 3, 1, 1);
    for (std::size_t i = 0; i < m.size(); ++i) CHECK(next[i] >= m[i]);
    m = next;
  }
  for (double v : m.values()) CHECK(v == 1.0);
  CHECK(max_abs_diff(mask_update(m, 3, 3, 1, 1), m) == 0);
}

TEST_CASE("batch_norm examples") {
  std::mt19937_64 rng(7);
  BatchNorm bn("bn", 3);
  BatchNormCache cache;
  // Per channel exactly zero mean and unit (biased) variance.
  Tensor x({2, 3, 4, 4});
  for (int c = 0; c < 3; ++c) {
    for (int n = 0; n < 2; ++n)
      for (int i = 0; i < 16; ++i) x.plane(n, c)[i] = ((n * 16 + i) % 2 ? 1.0 : -1.0);
  }
  CHECK(max_abs_diff(batch_norm(x, bn, NormMode::kTrain, cache), x) < 1e-4);

  BatchNorm zero("bn0", 3);
  zero.gamma.value.fill(0.0);
  for (int c = 0; c < 3; ++c) zero.beta.value[c] = 0.5 * c;
  const Tensor r = random_tensor({2, 3, 4, 4}, rng, -3, 5);
  const auto y0 = batch_norm(r, zero, NormMode::kTrain, cache);
  for (int n = 0; n < 2; ++n)
    for (int c = 0; c < 3; ++c)
      for (int i = 0; i < 16; ++i) CHECK(y0.plane(n, c)[i] == 0.5 * c);

  BatchNorm fresh("bn1", 3);
  const auto y = batch_norm(r, fresh, NormMode::kTrain, cache);
  for (int c = 0; c < 3; ++c) {
    double mean = 0, var = 0, in_mean = 0, in_var = 0;
    for (int n = 0; n < 2; ++n)
      for (int i = 0; i < 16; ++i) {
        mean += y.plane(n, c)[i] / 32;
        in_mean += r.plane(n, c)[i] / 32;
      }
    for (int n = 0; n < 2; ++n)
      for (int i = 0; i < 16; ++i) {
        var += std::pow(y.plane(n, c)[i] - mean, 2) / 32;
        in_var += std::pow(r.plane(n, c)[i] - in_mean, 2) / 32;
      }
    CHECK(std::abs(mean) < 1e-6);
    CHECK(std::abs(var - in_var / (in_var + 1e-5)) < 1e-4);
    // Running stats: momentum 0.1 from (0, 1), unbiased variance.
    CHECK(fresh.running_mean[c] == doctest::Approx(0.1 * in_mean).epsilon(1e-6));
    CHECK(fresh.running_var[c] == doctest::Approx(0.9 + 0.1 * in_var * 32 / 31).epsilon(1e-6));
  }
  const auto e = batch_norm(r, fresh, NormMode::kEval, cache);
  for (int c = 0; c < 3; ++c) {
    const double want = (r.plane(1, c)[3] - fresh.running_mean[c]) / std::sqrt(fresh.running_var[c] + 1e-5);
    CHECK(e.plane(1, c)[3] == doctest::Approx(want).epsilon(1e-9));
  }
  // Zero variance batch is defined through eps.
  BatchNorm one("bn2", 1);
  const auto flat = batch_norm(Tensor({1, 1, 1, 1}, 3.0), one, NormMode::kTrain, cache);
  CHECK(std::isfinite(flat[0]));
}

TEST_CASE("activations") {
  Tensor x({1, 1, 1, 3});
  x[0] = -1;
  x[1] = 2;
  x[2] = 3;
  const auto r = activation(x, Activation::relu());
  CHECK(r[0] == 0.0);
  CHECK(r[1] == 2.0);
  const auto l = activation(x, Activation::leaky(0.2));
  CHECK(l[0] == doctest::Approx(-0.2));
  const Tensor ones({1, 1, 1, 3}, 1.0);
  CHECK(activation_backward(x, ones, Activation::relu())[2] == 1.0);
  CHECK(activation_backward(x, ones, Activation::leaky(0.2))[2] == 1.0);
  CHECK(activation_backward(x, ones, Activation::leaky(0.2))[0] == doctest::Approx(0.2));
  Tensor z({1, 1, 1, 1});
  CHECK(activation_backward(z, Tensor({1, 1, 1, 1}, 1.0), Activation::relu())[0] == 0.0);
}

TEST_CASE("upsample and concat") {
  Tensor v({1, 1, 1, 1}, 0.7);
  const auto u = upsample2x(v);
  CHECK(u.shape() == Shape{1, 1, 2, 2});
  for (double e : u.values()) CHECK(e == 0.7);
  std::mt19937_64 rng(8);
  const Tensor a = random_tensor({2, 3, 4, 4}, rng), b = random_tensor({2, 5, 4, 4}, rng);
  const auto c = concat_channels(a, b);
  CHECK(c.shape() == Shape{2, 8, 4, 4});
  CHECK(c.at(1, 2, 3, 1) == a.at(1, 2, 3, 1));
  CHECK(c.at(1, 3, 0, 2) == b.at(1, 0, 0, 2));
  CHECK_THROWS_AS(concat_channels(a, Tensor({2, 5, 3, 4})), lfg::Error);

  const Tensor ra = random_tensor(a.shape(), rng), rb = random_tensor(b.shape(), rng);
  const Tensor gy = concat_channels(ra, rb);
  const auto [ga, gb] = concat_channels_backward(gy, 3);
  Tensor aa = a, bb = b;
  auto loss = [&] { return weighted_sum(concat_channels(aa, bb), gy); };
  CHECK(grad_check(loss, aa.values(), ga.values()).passed(1e-6));
  CHECK(grad_check(loss, bb.values(), gb.values()).passed(1e-6));
  CHECK(max_abs_diff(ga, ra) == 0);
  CHECK(max_abs_diff(gb, rb) == 0);
}

TEST_CASE("gradient checks") {
  std::mt19937_64 rng(9);
  SUBCASE("conv2d") {
    ConvParams p = random_conv(2, 3, 3, 1, 1, rng);
    Tensor x = random_tensor({1, 2, 5, 5}, rng);
    const Tensor r = random_tensor({1, 3, 5, 5}, rng);
    Tensor gx(x.shape());
    conv2d_backward(x, p, r, &gx);
    auto loss = [&] { return weighted_sum(conv2d(x, p), r); };
    CHECK(grad_check(loss, x.values(), gx.values()).passed(1e-4));
    const Tensor gw = p.weight.grad, gb = p.bias.grad;
    CHECK(grad_check(loss, p.weight.value.values(), gw.values()).passed(1e-4));
    CHECK(grad_check(loss, p.bias.value.values(), gb.values()).passed(1e-4));
  }
  SUBCASE("strided conv2d") {
    ConvParams p = random_conv(2, 2, 4, 2, 1, rng);
    Tensor x = random_tensor({2, 2, 8, 8}, rng);
    const Tensor r = random_tensor({2, 2, 4, 4}, rng);
    Tensor gx(x.shape());
    conv2d_backward(x, p, r, &gx);
    auto loss = [&] { return weighted_sum(conv2d(x, p), r); };
    CHECK(grad_check(loss, x.values(), gx.values()).passed(1e-4));
    const Tensor gw = p.weight.grad;
    CHECK(grad_check(loss, p.weight.value.values(), gw.values()).passed(1e-4));
  }
  SUBCASE("partial_conv2d with 40% holes") {
    ConvParams p = random_conv(2, 3, 3, 2, 1, rng);
    Tensor x = random_tensor({2, 2, 6, 6}, rng);
    const Tensor m = random_mask({2, 1, 6, 6}, rng, 0.4);
    const auto fwd = partial_conv2d(x, m, p);
    const Tensor r = random_tensor(fwd.out.shape(), rng);
    Tensor gx(x.shape());
    partial_conv2d_backward(fwd, m, p, r, &gx);
    auto loss = [&] { return weighted_sum(partial_conv2d(x, m, p).out, r); };
    CHECK(grad_check(loss, x.values(), gx.values()).passed(1e-4));
    const Tensor gw = p.weight.grad, gb = p.bias.grad;
    CHECK(grad_check(loss, p.weight.value.values(), gw.values()).passed(1e-4));
    CHECK(grad_check(loss, p.bias.value.values(), gb.values()).passed(1e-4));
  }
  SUBCASE("batch_norm train mode") {
    BatchNorm bn("bn", 3);
    bn.gamma.value = random_tensor(bn.gamma.value.shape(), rng, 0.5, 1.5);
    bn.beta.value = random_tensor(bn.beta.value.shape(), rng);
    Tensor x = random_tensor({2, 3, 4, 4}, rng);
    const Tensor r = random_tensor(x.shape(), rng);
    BatchNormCache cache;
    batch_norm(x, bn, NormMode::kTrain, cache);
    const Tensor gx = batch_norm_backward(r, bn, cache);
    auto loss = [&] {
      BatchNorm copy = bn;
      BatchNormCache c;
      return weighted_sum(batch_norm(x, copy, NormMode::kTrain, c), r);
    };
    CHECK(grad_check(loss, x.values(), gx.values()).passed(1e-3));
    const Tensor gg = bn.gamma.grad, gb = bn.beta.grad;
    CHECK(grad_check(loss, bn.gamma.value.values(), gg.values()).passed(1e-3));
    CHECK(grad_check(loss, bn.beta.value.values(), gb.values()).passed(1e-3));
  }
  SUBCASE("activations, sigmoid and upsample") {
    Tensor x = random_tensor({1, 2, 4, 4}, rng);
    for (auto& v : x.values())
      if (std::abs(v) < 0.05) v = 0.3;  // keep clear of the kink
    const Tensor r = random_tensor(x.shape(), rng);
    for (const auto a : {Activation::relu(), Activation::leaky(0.2)}) {
      auto loss = [&] { return weighted_sum(activation(x, a), r); };
      CHECK(grad_check(loss, x.values(), activation_backward(x, r, a).values()).passed(1e-6));
    }
    auto sl = [&] { return weighted_sum(sigmoid(x), r); };
    CHECK(grad_check(sl, x.values(), sigmoid_backward(sigmoid(x), r).values()).passed(1e-6));
    const Tensor ru = random_tensor({1, 2, 8, 8}, rng);
    auto ul = [&] { return weighted_sum(upsample2x(x), ru); };
    CHECK(grad_check(ul, x.values(), upsample2x_backward(ru).values()).passed(1e-6));
  }
}

TEST_CASE("he_init variance") {
  std::mt19937_64 rng(10);
  ConvParams p("he", 64, 64, 3, 1, 1);
  he_init(p, rng);
  double mean = 0, var = 0;
  const auto n = static_cast<double>(p.weight.value.size());
  for (double v : p.weight.value.values()) mean += v / n;
  for (double v : p.weight.value.values()) var += (v - mean) * (v - mean) / n;
  CHECK(n >= 1e4);
  CHECK(std::abs(var / (2.0 / (64 * 9)) - 1) < 0.2);
  for (double b : p.bias.value.values()) CHECK(b == 0.0);
  for (double v : p.weight.value.values()) CHECK(static_cast<double>(static_cast<float>(v)) == v);
}
