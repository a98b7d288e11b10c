#include "lfg/nn/kernels.hpp"

#include <Eigen/Core>
#include <vector>

#include "lfg/error.hpp"

namespace lfg::nn::kernels {

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapMat = Eigen::Map<RowMat>;
using ConstMapMat = Eigen::Map<const RowMat>;

void check_conv(const Tensor& x, const Tensor& weight, const ConvGeometry& g) {
  if (g.kh < 1 || g.kw < 1 || g.stride < 1 || g.pad < 0) {
    throw_config("conv2d: kernel/stride must be >= 1 and padding >= 0");
  }
  if (weight.c() != x.c() || weight.h() != g.kh || weight.w() != g.kw) {
    throw_data("conv2d: weight " + weight.shape().str() + " incompatible with input " +
               x.shape().str());
  }
  if (x.h() + 2 * g.pad < g.kh || x.w() + 2 * g.pad < g.kw) {
    throw_data("conv2d: padded input smaller than kernel");
  }
}

// cols is (C*kh*kw) x (ho*wo), row-major.
void im2col(const double* x, int c, int h, int w, const ConvGeometry& g, int ho, int wo,
            double* cols) {
  const int p = ho * wo;
  for (int ci = 0; ci < c; ++ci) {
    const double* plane = x + static_cast<std::size_t>(ci) * h * w;
    for (int ky = 0; ky < g.kh; ++ky) {
      for (int kx = 0; kx < g.kw; ++kx) {
        double* row = cols + (static_cast<std::size_t>(ci * g.kh + ky) * g.kw + kx) * p;
        for (int oy = 0; oy < ho; ++oy) {
          const int iy = oy * g.stride - g.pad + ky;
          double* out = row + oy * wo;
          if (iy < 0 || iy >= h) {
            for (int ox = 0; ox < wo; ++ox) out[ox] = 0.0;
            continue;
          }
          const double* src = plane + static_cast<std::size_t>(iy) * w;
          for (int ox = 0; ox < wo; ++ox) {
            const int ix = ox * g.stride - g.pad + kx;
            out[ox] = (ix >= 0 && ix < w) ? src[ix] : 0.0;
          }
        }
      }
    }
  }
}

void col2im_add(const double* cols, int c, int h, int w, const ConvGeometry& g, int ho, int wo,
                double* x) {
  const int p = ho * wo;
  for (int ci = 0; ci < c; ++ci) {
    double* plane = x + static_cast<std::size_t>(ci) * h * w;
    for (int ky = 0; ky < g.kh; ++ky) {
      for (int kx = 0; kx < g.kw; ++kx) {
        const double* row = cols + (static_cast<std::size_t>(ci * g.kh + ky) * g.kw + kx) * p;
        for (int oy = 0; oy < ho; ++oy) {
          const int iy = oy * g.stride - g.pad + ky;
          if (iy < 0 || iy >= h) continue;
          double* dst = plane + static_cast<std::size_t>(iy) * w;
          const double* src = row + oy * wo;
          for (int ox = 0; ox < wo; ++ox) {
            const int ix = ox * g.stride - g.pad + kx;
            if (ix >= 0 && ix < w) dst[ix] += src[ox];
          }
        }
      }
    }
  }
}

bool is_pointwise(const ConvGeometry& g) {
  return g.kh == 1 && g.kw == 1 && g.stride == 1 && g.pad == 0;
}

}  // namespace

Shape conv_output_shape(const Shape& x, int out_channels, const ConvGeometry& g) {
  return {x.n, out_channels, conv_out_size(x.h, g.kh, g.stride, g.pad),
          conv_out_size(x.w, g.kw, g.stride, g.pad)};
}

void conv2d_forward(const Tensor& x, const Tensor& weight, std::span<const double> bias,
                    const ConvGeometry& g, Tensor& y) {
  check_conv(x, weight, g);
  const Shape ys = conv_output_shape(x.shape(), weight.n(), g);
  if (!(y.shape() == ys)) y = Tensor(ys);
  const int co = weight.n();
  const int k = x.c() * g.kh * g.kw;
  const int p = ys.h * ys.w;
  const ConstMapMat wmat(weight.data(), co, k);
  const bool pointwise = is_pointwise(g);

#pragma omp parallel
  {
    std::vector<double> cols(pointwise ? 0 : static_cast<std::size_t>(k) * p);
#pragma omp for schedule(static)
    for (int n = 0; n < x.n(); ++n) {
      const double* src = x.plane(n, 0);
      if (!pointwise) im2col(src, x.c(), x.h(), x.w(), g, ys.h, ys.w, cols.data());
      const ConstMapMat cmat(pointwise ? src : cols.data(), k, p);
      MapMat ymat(y.plane(n, 0), co, p);
      ymat.noalias() = wmat * cmat;
      if (!bias.empty()) {
        for (int o = 0; o < co; ++o) ymat.row(o).array() += bias[o];
      }
    }
  }
}

void conv2d_backward(const Tensor& x, const Tensor& weight, const ConvGeometry& g,
                     const Tensor& gy, Tensor* gx, Tensor* gw, std::span<double> gb) {
  check_conv(x, weight, g);
  const Shape ys = conv_output_shape(x.shape(), weight.n(), g);
  if (!(gy.shape() == ys)) throw_data("conv2d_backward: grad shape " + gy.shape().str());
  if (gx) check_same_shape(x, *gx, "conv2d_backward gx");
  if (gw) check_same_shape(weight, *gw, "conv2d_backward gw");
  const int co = weight.n();
  const int k = x.c() * g.kh * g.kw;
  const int p = ys.h * ys.w;
  const int batch = x.n();
  const ConstMapMat wmat(weight.data(), co, k);
  const bool pointwise = is_pointwise(g);

  std::vector<double> gw_items(gw ? static_cast<std::size_t>(batch) * co * k : 0, 0.0);

#pragma omp parallel
  {
    std::vector<double> cols(pointwise ? 0 : static_cast<std::size_t>(k) * p);
    std::vector<double> gcols(gx && !pointwise ? static_cast<std::size_t>(k) * p : 0);
#pragma omp for schedule(static)
    for (int n = 0; n < batch; ++n) {
      const ConstMapMat gymat(gy.plane(n, 0), co, p);
      if (gw) {
        const double* src = x.plane(n, 0);
        if (!pointwise) im2col(src, x.c(), x.h(), x.w(), g, ys.h, ys.w, cols.data());
        const ConstMapMat cmat(pointwise ? src : cols.data(), k, p);
        MapMat gwn(gw_items.data() + static_cast<std::size_t>(n) * co * k, co, k);
        gwn.noalias() = gymat * cmat.transpose();
      }
      if (gx) {
        if (pointwise) {
          MapMat gxn(gx->plane(n, 0), k, p);
          gxn.noalias() += wmat.transpose() * gymat;
        } else {
          MapMat gc(gcols.data(), k, p);
          gc.noalias() = wmat.transpose() * gymat;
          col2im_add(gcols.data(), x.c(), x.h(), x.w(), g, ys.h, ys.w, gx->plane(n, 0));
        }
      }
    }
  }

  if (gw) {
    const std::size_t m = static_cast<std::size_t>(co) * k;
    for (int n = 0; n < batch; ++n) {
      const double* src = gw_items.data() + n * m;
      for (std::size_t i = 0; i < m; ++i) (*gw)[i] += src[i];
    }
  }
  if (!gb.empty()) {
    for (int o = 0; o < co; ++o) {
      double acc = 0;
      for (int n = 0; n < batch; ++n) {
        const double* row = gy.plane(n, o);
        for (int i = 0; i < p; ++i) acc += row[i];
      }
      gb[o] += acc;
    }
  }
}

void mask_window_counts(const Tensor& mask, int channels_represented, const ConvGeometry& g,
                        Tensor& ones, Tensor& in_bounds) {
  const int h = mask.h(), w = mask.w();
  const int ho = conv_out_size(h, g.kh, g.stride, g.pad);
  const int wo = conv_out_size(w, g.kw, g.stride, g.pad);
  const Shape os{mask.n(), 1, ho, wo};
  if (!(ones.shape() == os)) ones = Tensor(os);
  if (!(in_bounds.shape() == os)) in_bounds = Tensor(os);
  const double per_px = mask.c() == 1 ? channels_represented : 1.0;
  const double channels = channels_represented;

  std::vector<double> collapsed(static_cast<std::size_t>(h) * w);
  for (int n = 0; n < mask.n(); ++n) {
    std::fill(collapsed.begin(), collapsed.end(), 0.0);
    for (int c = 0; c < mask.c(); ++c) {
      const double* src = mask.plane(n, c);
      for (std::size_t i = 0; i < collapsed.size(); ++i) collapsed[i] += src[i];
    }
    for (int oy = 0; oy < ho; ++oy) {
      for (int ox = 0; ox < wo; ++ox) {
        double s = 0;
        int taps = 0;
        for (int ky = 0; ky < g.kh; ++ky) {
          const int iy = oy * g.stride - g.pad + ky;
          if (iy < 0 || iy >= h) continue;
          for (int kx = 0; kx < g.kw; ++kx) {
            const int ix = ox * g.stride - g.pad + kx;
            if (ix < 0 || ix >= w) continue;
            s += collapsed[static_cast<std::size_t>(iy) * w + ix];
            ++taps;
          }
        }
        ones.at(n, 0, oy, ox) = s * per_px;
        in_bounds.at(n, 0, oy, ox) = taps * channels;
      }
    }
  }
}

}  // namespace lfg::nn::kernels
