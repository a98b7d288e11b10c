#include "lfg/nn/tensor.hpp"

#include <algorithm>

#include "lfg/error.hpp"

namespace lfg::nn {

std::string Shape::str() const {
  return std::to_string(n) + "x" + std::to_string(c) + "x" + std::to_string(h) + "x" +
         std::to_string(w);
}

Tensor::Tensor(Shape s, double fill) : shape_(s) {
  if (s.n < 1 || s.c < 1 || s.h < 1 || s.w < 1) {
    throw_config("Tensor: all dims must be >= 1 (got " + s.str() + ")");
  }
  data_.assign(s.count(), fill);
}

void Tensor::fill(double v) { std::fill(data_.begin(), data_.end(), v); }

void Tensor::reshape(Shape s) {
  if (s.count() != data_.size()) throw_config("Tensor::reshape: element count mismatch");
  shape_ = s;
}

void check_same_shape(const Tensor& a, const Tensor& b, const char* what) {
  if (!(a.shape() == b.shape())) {
    throw_data(std::string(what) + ": shape mismatch " + a.shape().str() + " vs " + b.shape().str());
  }
}

void round_to_float(std::span<double> v) {
  for (double& x : v) x = static_cast<double>(static_cast<float>(x));
}

void axpy(double alpha, const Tensor& x, Tensor& out) {
  check_same_shape(x, out, "axpy");
  for (std::size_t i = 0; i < x.size(); ++i) out[i] += alpha * x[i];
}

}  // namespace lfg::nn
