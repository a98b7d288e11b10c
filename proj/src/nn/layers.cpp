#include "lfg/nn/layers.hpp"

#include <cmath>

#include "lfg/error.hpp"

namespace lfg::nn {

ConvParams::ConvParams(const std::string& name, int in_channels, int out_channels, int kernel,
                       int stride_, int padding_)
    : weight(name + ".weight", {out_channels, in_channels, kernel, kernel}),
      bias(name + ".bias", {1, out_channels, 1, 1}),
      stride(stride_),
      padding(padding_) {}

void he_init(ConvParams& p, std::mt19937_64& rng) {
  const int fan_in = p.in_channels() * p.kernel_h() * p.kernel_w();
  std::normal_distribution<double> dist(0.0, std::sqrt(2.0 / fan_in));
  for (double& v : p.weight.value.values()) v = dist(rng);
  round_to_float(p.weight.value.values());
  p.bias.value.zero();
}

Tensor conv2d(const Tensor& x, const ConvParams& p) {
  Tensor y;
  kernels::conv2d_forward(x, p.weight.value, p.bias.value.values(), p.geometry(), y);
  return y;
}

void conv2d_backward(const Tensor& x, ConvParams& p, const Tensor& gy, Tensor* gx) {
  kernels::conv2d_backward(x, p.weight.value, p.geometry(), gy, gx, &p.weight.grad,
                           p.bias.grad.values());
}

void check_binary_mask(const Tensor& mask, const char* what) {
  for (double v : mask.values()) {
    if (v != 0.0 && v != 1.0) throw_data(std::string(what) + ": non-binary mask");
  }
}

namespace {

void check_mask_dims(const Tensor& x, const Tensor& m) {
  if (m.n() != x.n() || m.h() != x.h() || m.w() != x.w() || (m.c() != 1 && m.c() != x.c())) {
    throw_data("partial_conv2d: mask " + m.shape().str() + " does not match input " +
               x.shape().str());
  }
}

}  // namespace

PartialConvResult partial_conv2d(const Tensor& x, const Tensor& mask, const ConvParams& p) {
  check_mask_dims(x, mask);
  check_binary_mask(mask, "partial_conv2d");
  PartialConvResult r;
  r.masked_input = Tensor(x.shape());
  const std::size_t plane = x.shape().plane();
  for (int n = 0; n < x.n(); ++n) {
    for (int c = 0; c < x.c(); ++c) {
      const double* src = x.plane(n, c);
      const double* m = mask.plane(n, mask.c() == 1 ? 0 : c);
      double* dst = r.masked_input.plane(n, c);
      for (std::size_t i = 0; i < plane; ++i) dst[i] = m[i] != 0.0 ? src[i] : 0.0;
    }
  }

  const auto g = p.geometry();
  kernels::conv2d_forward(r.masked_input, p.weight.value, {}, g, r.out);
  Tensor ones, in_bounds;
  kernels::mask_window_counts(mask, x.c(), g, ones, in_bounds);

  r.scale = Tensor(ones.shape());
  r.mask = Tensor(ones.shape());
  for (std::size_t i = 0; i < ones.size(); ++i) {
    if (ones[i] > 0) {
      r.scale[i] = in_bounds[i] / ones[i];
      r.mask[i] = 1.0;
    }
  }
  const std::size_t oplane = r.out.shape().plane();
  for (int n = 0; n < r.out.n(); ++n) {
    const double* s = r.scale.plane(n, 0);
    const double* valid = r.mask.plane(n, 0);
    for (int o = 0; o < r.out.c(); ++o) {
      double* y = r.out.plane(n, o);
      const double b = p.bias.value[o];
      for (std::size_t i = 0; i < oplane; ++i) y[i] = valid[i] != 0.0 ? y[i] * s[i] + b : 0.0;
    }
  }
  return r;
}

void partial_conv2d_backward(const PartialConvResult& fwd, const Tensor& mask, ConvParams& p,
                             const Tensor& gy, Tensor* gx) {
  check_same_shape(fwd.out, gy, "partial_conv2d_backward");
  Tensor graw(gy.shape());
  const std::size_t oplane = gy.shape().plane();
  for (int n = 0; n < gy.n(); ++n) {
    const double* s = fwd.scale.plane(n, 0);
    const double* valid = fwd.mask.plane(n, 0);
    for (int o = 0; o < gy.c(); ++o) {
      const double* src = gy.plane(n, o);
      double* dst = graw.plane(n, o);
      double gb = 0;
      for (std::size_t i = 0; i < oplane; ++i) {
        dst[i] = src[i] * s[i];
        if (valid[i] != 0.0) gb += src[i];
      }
      p.bias.grad[o] += gb;
    }
  }
  if (!gx) {
    kernels::conv2d_backward(fwd.masked_input, p.weight.value, p.geometry(), graw, nullptr,
                             &p.weight.grad, {});
    return;
  }
  Tensor gxm(fwd.masked_input.shape());
  kernels::conv2d_backward(fwd.masked_input, p.weight.value, p.geometry(), graw, &gxm,
                           &p.weight.grad, {});
  check_same_shape(gxm, *gx, "partial_conv2d_backward gx");
  const std::size_t plane = gxm.shape().plane();
  for (int n = 0; n < gxm.n(); ++n) {
    for (int c = 0; c < gxm.c(); ++c) {
      const double* m = mask.plane(n, mask.c() == 1 ? 0 : c);
      const double* src = gxm.plane(n, c);
      double* dst = gx->plane(n, c);
      for (std::size_t i = 0; i < plane; ++i) {
        if (m[i] != 0.0) dst[i] += src[i];
      }
    }
  }
}

Tensor mask_update(const Tensor& mask, int kernel_h, int kernel_w, int stride, int padding) {
  check_binary_mask(mask, "mask_update");
  Tensor ones, in_bounds;
  kernels::mask_window_counts(mask, mask.c(), {kernel_h, kernel_w, stride, padding}, ones,
                              in_bounds);
  Tensor out(ones.shape());
  for (std::size_t i = 0; i < ones.size(); ++i) out[i] = ones[i] > 0 ? 1.0 : 0.0;
  return out;
}

BatchNorm::BatchNorm(const std::string& name, int channels)
    : gamma(name + ".gamma", {1, channels, 1, 1}),
      beta(name + ".beta", {1, channels, 1, 1}),
      running_mean(channels, 0.0),
      running_var(channels, 1.0) {
  gamma.value.fill(1.0);
}

Tensor batch_norm(const Tensor& x, BatchNorm& bn, NormMode mode, BatchNormCache& cache) {
  if (x.c() != bn.channels()) throw_data("batch_norm: channel mismatch");
  const int channels = x.c();
  const std::size_t plane = x.shape().plane();
  const double count = static_cast<double>(x.n()) * plane;
  cache.mode = mode;
  cache.xhat = Tensor(x.shape());
  cache.inv_std.assign(channels, 0.0);
  Tensor y(x.shape());

#pragma omp parallel for schedule(static)
  for (int c = 0; c < channels; ++c) {
    double mean, var;
    if (mode == NormMode::kTrain) {
      double s = 0;
      for (int n = 0; n < x.n(); ++n) {
        const double* p = x.plane(n, c);
        for (std::size_t i = 0; i < plane; ++i) s += p[i];
      }
      mean = s / count;
      double ss = 0;
      for (int n = 0; n < x.n(); ++n) {
        const double* p = x.plane(n, c);
        for (std::size_t i = 0; i < plane; ++i) ss += (p[i] - mean) * (p[i] - mean);
      }
      var = ss / count;
      const double unbiased = count > 1 ? ss / (count - 1) : var;
      bn.running_mean[c] = static_cast<float>((1 - bn.momentum) * bn.running_mean[c] + bn.momentum * mean);
      bn.running_var[c] = static_cast<float>((1 - bn.momentum) * bn.running_var[c] + bn.momentum * unbiased);
    } else {
      mean = bn.running_mean[c];
      var = bn.running_var[c];
    }
    const double inv = 1.0 / std::sqrt(var + bn.eps);
    cache.inv_std[c] = inv;
    const double g = bn.gamma.value[c], b = bn.beta.value[c];
    for (int n = 0; n < x.n(); ++n) {
      const double* p = x.plane(n, c);
      double* xh = cache.xhat.plane(n, c);
      double* out = y.plane(n, c);
      for (std::size_t i = 0; i < plane; ++i) {
        xh[i] = (p[i] - mean) * inv;
        out[i] = g * xh[i] + b;
      }
    }
  }
  return y;
}

Tensor batch_norm_backward(const Tensor& gy, BatchNorm& bn, const BatchNormCache& cache) {
  check_same_shape(gy, cache.xhat, "batch_norm_backward");
  const int channels = gy.c();
  const std::size_t plane = gy.shape().plane();
  const double count = static_cast<double>(gy.n()) * plane;
  Tensor gx(gy.shape());

#pragma omp parallel for schedule(static)
  for (int c = 0; c < channels; ++c) {
    double sum_g = 0, sum_gx = 0;
    for (int n = 0; n < gy.n(); ++n) {
      const double* g = gy.plane(n, c);
      const double* xh = cache.xhat.plane(n, c);
      for (std::size_t i = 0; i < plane; ++i) {
        sum_g += g[i];
        sum_gx += g[i] * xh[i];
      }
    }
    bn.beta.grad[c] += sum_g;
    bn.gamma.grad[c] += sum_gx;
    const double scale = bn.gamma.value[c] * cache.inv_std[c];
    const double mean_g = sum_g / count, mean_gx = sum_gx / count;
    for (int n = 0; n < gy.n(); ++n) {
      const double* g = gy.plane(n, c);
      const double* xh = cache.xhat.plane(n, c);
      double* out = gx.plane(n, c);
      if (cache.mode == NormMode::kTrain) {
        for (std::size_t i = 0; i < plane; ++i) out[i] = scale * (g[i] - mean_g - xh[i] * mean_gx);
      } else {
        for (std::size_t i = 0; i < plane; ++i) out[i] = scale * g[i];
      }
    }
  }
  return gx;
}

double activation_slope(double x, Activation a) {
  switch (a.kind) {
    case ActKind::kIdentity: return 1.0;
    case ActKind::kRelu: return x > 0 ? 1.0 : 0.0;
    case ActKind::kLeakyRelu: return x > 0 ? 1.0 : a.slope;
  }
  return 1.0;
}

Tensor activation(const Tensor& x, Activation a) {
  Tensor y(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) y[i] = x[i] * activation_slope(x[i], a);
  return y;
}

Tensor activation_backward(const Tensor& x, const Tensor& gy, Activation a) {
  check_same_shape(x, gy, "activation_backward");
  Tensor gx(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) gx[i] = gy[i] * activation_slope(x[i], a);
  return gx;
}

Tensor sigmoid(const Tensor& x) {
  Tensor y(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) y[i] = 1.0 / (1.0 + std::exp(-x[i]));
  return y;
}

Tensor sigmoid_backward(const Tensor& y, const Tensor& gy) {
  check_same_shape(y, gy, "sigmoid_backward");
  Tensor gx(y.shape());
  for (std::size_t i = 0; i < y.size(); ++i) gx[i] = gy[i] * y[i] * (1.0 - y[i]);
  return gx;
}

Tensor upsample2x(const Tensor& x) {
  Tensor y({x.n(), x.c(), 2 * x.h(), 2 * x.w()});
  for (int n = 0; n < x.n(); ++n)
    for (int c = 0; c < x.c(); ++c) {
      const double* src = x.plane(n, c);
      double* dst = y.plane(n, c);
      for (int r = 0; r < y.h(); ++r)
        for (int q = 0; q < y.w(); ++q) dst[r * y.w() + q] = src[(r / 2) * x.w() + q / 2];
    }
  return y;
}

Tensor upsample2x_backward(const Tensor& gy) {
  if (gy.h() % 2 || gy.w() % 2) throw_data("upsample2x_backward: odd spatial dims");
  Tensor gx({gy.n(), gy.c(), gy.h() / 2, gy.w() / 2});
  for (int n = 0; n < gy.n(); ++n)
    for (int c = 0; c < gy.c(); ++c) {
      const double* src = gy.plane(n, c);
      double* dst = gx.plane(n, c);
      for (int r = 0; r < gy.h(); ++r)
        for (int q = 0; q < gy.w(); ++q) dst[(r / 2) * gx.w() + q / 2] += src[r * gy.w() + q];
    }
  return gx;
}

Tensor concat_channels(const Tensor& a, const Tensor& b) {
  if (a.n() != b.n() || a.h() != b.h() || a.w() != b.w()) {
    throw_data("concat_channels: spatial/batch mismatch " + a.shape().str() + " vs " +
               b.shape().str());
  }
  Tensor y({a.n(), a.c() + b.c(), a.h(), a.w()});
  const std::size_t plane = a.shape().plane();
  for (int n = 0; n < a.n(); ++n) {
    std::copy_n(a.plane(n, 0), a.c() * plane, y.plane(n, 0));
    std::copy_n(b.plane(n, 0), b.c() * plane, y.plane(n, a.c()));
  }
  return y;
}

std::pair<Tensor, Tensor> concat_channels_backward(const Tensor& gy, int a_channels) {
  if (a_channels < 1 || a_channels >= gy.c()) throw_data("concat_channels_backward: bad split");
  Tensor ga({gy.n(), a_channels, gy.h(), gy.w()});
  Tensor gb({gy.n(), gy.c() - a_channels, gy.h(), gy.w()});
  const std::size_t plane = gy.shape().plane();
  for (int n = 0; n < gy.n(); ++n) {
    std::copy_n(gy.plane(n, 0), a_channels * plane, ga.plane(n, 0));
    std::copy_n(gy.plane(n, a_channels), gb.c() * plane, gb.plane(n, 0));
  }
  return {std::move(ga), std::move(gb)};
}

Tensor broadcast_channels(const Tensor& single, int channels) {
  if (single.c() != 1) throw_data("broadcast_channels: expected one channel");
  Tensor y({single.n(), channels, single.h(), single.w()});
  const std::size_t plane = single.shape().plane();
  for (int n = 0; n < single.n(); ++n)
    for (int c = 0; c < channels; ++c) std::copy_n(single.plane(n, 0), plane, y.plane(n, c));
  return y;
}

}  // namespace lfg::nn
