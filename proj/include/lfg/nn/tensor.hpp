#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

namespace lfg::nn {

struct Shape {
  int n = 1;
  int c = 1;
  int h = 1;
  int w = 1;

  std::size_t count() const noexcept {
    return static_cast<std::size_t>(n) * c * h * w;
  }
  std::size_t plane() const noexcept { return static_cast<std::size_t>(h) * w; }
  bool operator==(const Shape&) const = default;
  std::string str() const;
};

// Dense NCHW array. Storage is double so finite-difference checks are
// meaningful; persistent parameters are kept float32-representable.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape s, double fill = 0.0);

  const Shape& shape() const noexcept { return shape_; }
  int n() const noexcept { return shape_.n; }
  int c() const noexcept { return shape_.c; }
  int h() const noexcept { return shape_.h; }
  int w() const noexcept { return shape_.w; }
  std::size_t size() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }

  double& at(int n, int c, int y, int x) { return data_[index(n, c, y, x)]; }
  double at(int n, int c, int y, int x) const { return data_[index(n, c, y, x)]; }
  double& operator[](std::size_t i) { return data_[i]; }
  double operator[](std::size_t i) const { return data_[i]; }

  double* data() noexcept { return data_.data(); }
  const double* data() const noexcept { return data_.data(); }
  std::span<double> values() noexcept { return data_; }
  std::span<const double> values() const noexcept { return data_; }

  // Pointer to item n, channel c.
  double* plane(int n, int c) { return data_.data() + index(n, c, 0, 0); }
  const double* plane(int n, int c) const { return data_.data() + index(n, c, 0, 0); }

  void fill(double v);
  void zero() { fill(0.0); }
  // Same element count required.
  void reshape(Shape s);

  bool operator==(const Tensor&) const = default;

 private:
  std::size_t index(int n, int c, int y, int x) const noexcept {
    return ((static_cast<std::size_t>(n) * shape_.c + c) * shape_.h + y) * shape_.w + x;
  }

  Shape shape_{0, 0, 0, 0};
  std::vector<double> data_;
};

struct Param {
  std::string name;
  Tensor value;
  Tensor grad;

  Param() = default;
  Param(std::string name_, Shape s) : name(std::move(name_)), value(s), grad(s) {}
};

void check_same_shape(const Tensor& a, const Tensor& b, const char* what);

// round-trips every element through float32
void round_to_float(std::span<double> v);

// out += alpha * x
void axpy(double alpha, const Tensor& x, Tensor& out);

}  // namespace lfg::nn
