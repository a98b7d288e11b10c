#include "lfg/error.hpp"
#include "lfg/nn/kernels.hpp"

namespace lfg::nn::kernels {

void conv2d_forward_reference(const Tensor& x, const Tensor& weight, std::span<const double> bias,
                              const ConvGeometry& g, Tensor& y) {
  if (weight.c() != x.c() || weight.h() != g.kh || weight.w() != g.kw) {
    throw_data("conv2d_reference: weight/input mismatch");
  }
  const Shape ys = conv_output_shape(x.shape(), weight.n(), g);
  y = Tensor(ys);
  for (int n = 0; n < x.n(); ++n)
    for (int o = 0; o < weight.n(); ++o)
      for (int oy = 0; oy < ys.h; ++oy)
        for (int ox = 0; ox < ys.w; ++ox) {
          double acc = bias.empty() ? 0.0 : bias[o];
          for (int c = 0; c < x.c(); ++c)
            for (int ky = 0; ky < g.kh; ++ky)
              for (int kx = 0; kx < g.kw; ++kx) {
                const int iy = oy * g.stride - g.pad + ky;
                const int ix = ox * g.stride - g.pad + kx;
                if (iy < 0 || ix < 0 || iy >= x.h() || ix >= x.w()) continue;
                acc += weight.at(o, c, ky, kx) * x.at(n, c, iy, ix);
              }
          y.at(n, o, oy, ox) = acc;
        }
}

void conv2d_backward_reference(const Tensor& x, const Tensor& weight, const ConvGeometry& g,
                               const Tensor& gy, Tensor* gx, Tensor* gw, std::span<double> gb) {
  const Shape ys = conv_output_shape(x.shape(), weight.n(), g);
  if (!(gy.shape() == ys)) throw_data("conv2d_backward_reference: grad shape mismatch");
  for (int n = 0; n < x.n(); ++n)
    for (int o = 0; o < weight.n(); ++o)
      for (int oy = 0; oy < ys.h; ++oy)
        for (int ox = 0; ox < ys.w; ++ox) {
          const double d = gy.at(n, o, oy, ox);
          if (!gb.empty()) gb[o] += d;
          for (int c = 0; c < x.c(); ++c)
            for (int ky = 0; ky < g.kh; ++ky)
              for (int kx = 0; kx < g.kw; ++kx) {
                const int iy = oy * g.stride - g.pad + ky;
                const int ix = ox * g.stride - g.pad + kx;
                if (iy < 0 || ix < 0 || iy >= x.h() || ix >= x.w()) continue;
                if (gw) gw->at(o, c, ky, kx) += d * x.at(n, c, iy, ix);
                if (gx) gx->at(n, c, iy, ix) += d * weight.at(o, c, ky, kx);
              }
        }
}

}  // namespace lfg::nn::kernels
