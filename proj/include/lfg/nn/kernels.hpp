#pragma once

#include <span>

#include "lfg/nn/tensor.hpp"

// Convolution kernels. The default entry points are im2col + GEMM with the
// batch loop parallelized by OpenMP; the *_reference variants are plain
// serial loops kept for testing and benchmarking. Both write each output
// element from exactly one thread and reduce per-item weight gradients in
// batch order, so results do not depend on the thread count.
namespace lfg::nn::kernels {

struct ConvGeometry {
  int kh = 3;
  int kw = 3;
  int stride = 1;
  int pad = 1;
};

inline int conv_out_size(int in, int k, int stride, int pad) {
  return (in + 2 * pad - k) / stride + 1;
}

Shape conv_output_shape(const Shape& x, int out_channels, const ConvGeometry& g);

// weight: (out, in, kh, kw); bias may be empty.
void conv2d_forward(const Tensor& x, const Tensor& weight, std::span<const double> bias,
                    const ConvGeometry& g, Tensor& y);

// Accumulates into gx / gw / gb; any of them may be null/empty to skip.
void conv2d_backward(const Tensor& x, const Tensor& weight, const ConvGeometry& g,
                     const Tensor& gy, Tensor* gx, Tensor* gw, std::span<double> gb);

void conv2d_forward_reference(const Tensor& x, const Tensor& weight, std::span<const double> bias,
                              const ConvGeometry& g, Tensor& y);
void conv2d_backward_reference(const Tensor& x, const Tensor& weight, const ConvGeometry& g,
                               const Tensor& gy, Tensor* gx, Tensor* gw, std::span<double> gb);

// For every output position, the number of mask entries equal to 1 inside
// the window summed over channels, and the number of in-bounds window
// entries (channels * in-bounds taps). Both tensors are (n, 1, ho, wo).
void mask_window_counts(const Tensor& mask, int channels_represented, const ConvGeometry& g,
                        Tensor& ones, Tensor& in_bounds);

}  // namespace lfg::nn::kernels
