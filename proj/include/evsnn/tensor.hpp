#pragma once

#include <cstddef>
#include <initializer_list>
#include <vector>

namespace evsnn {

// Dense multidimensional array of doubles in row-major order. The currency of
// all kernels and gradients.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(std::vector<std::size_t> shape);
  Tensor(std::vector<std::size_t> shape, std::vector<double> values);

  static Tensor zeros(std::vector<std::size_t> shape) { return Tensor(std::move(shape)); }

  const std::vector<std::size_t>& shape() const { return shape_; }
  std::size_t rank() const { return shape_.size(); }
  std::size_t size() const { return data_.size(); }
  std::size_t extent(std::size_t dim) const { return shape_[dim]; }

  double* data() { return data_.data(); }
  const double* data() const { return data_.data(); }

  double& operator[](std::size_t i) { return data_[i]; }
  double operator[](std::size_t i) const { return data_[i]; }

  // Multi-index access, bounds-checked. Convenient in tests; hot loops index
  // through data() directly.
  double& at(std::initializer_list<std::size_t> idx);
  double at(std::initializer_list<std::size_t> idx) const;

  bool same_shape(const Tensor& other) const { return shape_ == other.shape_; }

  bool operator==(const Tensor& other) const {
    return shape_ == other.shape_ && data_ == other.data_;
  }

 private:
  std::size_t flat_index(std::initializer_list<std::size_t> idx) const;

  std::vector<std::size_t> shape_;
  std::vector<double> data_;
};

// Valid cross-correlation, stride 1, no padding. The only variant the network
// uses; the spec fields exist so shape agreement is checked in one place.
struct ConvSpec {
  std::size_t in_channels = 0;
  std::size_t out_channels = 0;
  std::size_t kernel_h = 5;
  std::size_t kernel_w = 5;
  std::size_t stride = 1;
  std::size_t padding = 0;
};

// y[o,i,j] = bias[o] + sum_c sum_m sum_n x[c,i+m,j+n] * k[o,c,m,n]
// x: [C_in, H, W], kernel: [C_out, C_in, kh, kw], bias: [C_out]
// -> [C_out, H-kh+1, W-kw+1]
Tensor conv2d_forward(const Tensor& x, const Tensor& kernel, const Tensor& bias,
                      const ConvSpec& spec);

struct ConvGrads {
  Tensor grad_x;
  Tensor grad_kernel;
  Tensor grad_bias;
};

ConvGrads conv2d_backward(const Tensor& grad_y, const Tensor& x, const Tensor& kernel,
                          const ConvSpec& spec);

// Non-overlapping 2x2 windows, stride 2; a trailing odd row/column is dropped.
// argmax holds the flat input index of each window's winner; ties break to the
// first cell in row-major scan order.
struct PoolResult {
  Tensor values;
  std::vector<std::size_t> argmax;
};

PoolResult maxpool2d_forward(const Tensor& x);

Tensor maxpool2d_backward(const Tensor& grad_y, const std::vector<std::size_t>& argmax,
                          const std::vector<std::size_t>& input_shape);

// y = w * x + bias.  x: [D], weight: [K, D], bias: [K] -> [K]
Tensor linear_forward(const Tensor& x, const Tensor& weight, const Tensor& bias);

struct LinearGrads {
  Tensor grad_x;
  Tensor grad_weight;
  Tensor grad_bias;
};

LinearGrads linear_backward(const Tensor& grad_y, const Tensor& x, const Tensor& weight);

// Row-major order is preserved, so reshape(flatten(x), x.shape()) == x.
Tensor flatten(const Tensor& x);
Tensor reshape(const Tensor& x, std::vector<std::size_t> shape);

// Copy of x[index, ...]: drops the leading dimension.
Tensor slice_front(const Tensor& x, std::size_t index);

void add_inplace(Tensor& dst, const Tensor& src);
void scale_inplace(Tensor& dst, double factor);

}  // namespace evsnn
