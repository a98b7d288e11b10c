#pragma once

#include <random>
#include <string>
#include <vector>

#include "lfg/nn/kernels.hpp"
#include "lfg/nn/tensor.hpp"

namespace lfg::nn {

struct ConvParams {
  Param weight;  // (out, in, kh, kw)
  Param bias;    // (1, out, 1, 1)
  int stride = 1;
  int padding = 0;

  ConvParams() = default;
  ConvParams(const std::string& name, int in_channels, int out_channels, int kernel, int stride,
             int padding);

  int in_channels() const { return weight.value.c(); }
  int out_channels() const { return weight.value.n(); }
  int kernel_h() const { return weight.value.h(); }
  int kernel_w() const { return weight.value.w(); }
  kernels::ConvGeometry geometry() const {
    return {kernel_h(), kernel_w(), stride, padding};
  }
};

// He fan-in normal init, zero bias; values rounded to float32.
void he_init(ConvParams& p, std::mt19937_64& rng);

Tensor conv2d(const Tensor& x, const ConvParams& p);
// Accumulates weight/bias grads into p; adds the input grad to *gx if given.
void conv2d_backward(const Tensor& x, ConvParams& p, const Tensor& gy, Tensor* gx);

// Masks are (n, 1, h, w) or (n, c, h, w) with values in {0, 1}; a single
// channel mask applies to every input channel.
struct PartialConvResult {
  Tensor out;
  Tensor mask;          // (n, 1, ho, wo) updated mask
  Tensor masked_input;  // x with holes zeroed
  Tensor scale;         // (n, 1, ho, wo): window count / valid count, 0 where no valid pixel
};

// x' = W^T (X .* M) * (in-bounds window entries / sum M) + b where sum M > 0,
// else 0. Padding taps count neither as valid nor in the window size, so an
// all-ones mask reduces exactly to conv2d.
PartialConvResult partial_conv2d(const Tensor& x, const Tensor& mask, const ConvParams& p);
// The scale and mask are constants of the step.
void partial_conv2d_backward(const PartialConvResult& fwd, const Tensor& mask, ConvParams& p,
                             const Tensor& gy, Tensor* gx);

// Dilation by the kernel footprint: 1 wherever any window entry is 1.
Tensor mask_update(const Tensor& mask, int kernel_h, int kernel_w, int stride, int padding);

void check_binary_mask(const Tensor& mask, const char* what);

enum class NormMode { kTrain, kEval };

struct BatchNorm {
  Param gamma;
  Param beta;
  std::vector<double> running_mean;
  std::vector<double> running_var;
  double momentum = 0.1;
  double eps = 1e-5;

  BatchNorm() = default;
  BatchNorm(const std::string& name, int channels);
  int channels() const { return gamma.value.c(); }
};

struct BatchNormCache {
  Tensor xhat;
  std::vector<double> inv_std;
  NormMode mode = NormMode::kTrain;
};

Tensor batch_norm(const Tensor& x, BatchNorm& bn, NormMode mode, BatchNormCache& cache);
Tensor batch_norm_backward(const Tensor& gy, BatchNorm& bn, const BatchNormCache& cache);

enum class ActKind { kIdentity, kRelu, kLeakyRelu };

struct Activation {
  ActKind kind = ActKind::kRelu;
  double slope = 0.2;

  static Activation relu() { return {ActKind::kRelu, 0.0}; }
  static Activation leaky(double slope = 0.2) { return {ActKind::kLeakyRelu, slope}; }
  static Activation identity() { return {ActKind::kIdentity, 0.0}; }
};

Tensor activation(const Tensor& x, Activation a);
// x is the activation input.
Tensor activation_backward(const Tensor& x, const Tensor& gy, Activation a);
// Derivative as a 0/slope/1 gate; used by the critic's second-order pass.
double activation_slope(double x, Activation a);

Tensor sigmoid(const Tensor& x);
Tensor sigmoid_backward(const Tensor& y, const Tensor& gy);

Tensor upsample2x(const Tensor& x);
Tensor upsample2x_backward(const Tensor& gy);

Tensor concat_channels(const Tensor& a, const Tensor& b);
// Splits a concat gradient back into the a-part (first a_channels) and b-part.
std::pair<Tensor, Tensor> concat_channels_backward(const Tensor& gy, int a_channels);

// Repeats a single-channel tensor along the channel axis.
Tensor broadcast_channels(const Tensor& single, int channels);

}  // namespace lfg::nn
