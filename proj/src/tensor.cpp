#include "evsnn/tensor.hpp"

#include <algorithm>
#include <cstring>
#include <stdexcept>
#include <string>

namespace evsnn {

namespace {

std::size_t shape_product(const std::vector<std::size_t>& shape) {
  std::size_t n = 1;
  for (std::size_t e : shape) {
    if (e == 0) throw std::invalid_argument("Tensor: zero extent");
    n *= e;
  }
  return n;
}

void require(bool cond, const char* msg) {
  if (!cond) throw std::invalid_argument(msg);
}

}  // namespace

Tensor::Tensor(std::vector<std::size_t> shape)
    : shape_(std::move(shape)), data_(shape_product(shape_), 0.0) {}

Tensor::Tensor(std::vector<std::size_t> shape, std::vector<double> values)
    : shape_(std::move(shape)), data_(std::move(values)) {
  if (data_.size() != shape_product(shape_))
    throw std::invalid_argument("Tensor: data length does not match shape");
}

std::size_t Tensor::flat_index(std::initializer_list<std::size_t> idx) const {
  if (idx.size() != shape_.size())
    throw std::invalid_argument("Tensor::at: index rank mismatch");
  std::size_t flat = 0;
  std::size_t dim = 0;
  for (std::size_t i : idx) {
    if (i >= shape_[dim])
      throw std::out_of_range("Tensor::at: index out of range in dim " + std::to_string(dim));
    flat = flat * shape_[dim] + i;
    ++dim;
  }
  return flat;
}

double& Tensor::at(std::initializer_list<std::size_t> idx) { return data_[flat_index(idx)]; }

double Tensor::at(std::initializer_list<std::size_t> idx) const { return data_[flat_index(idx)]; }

namespace {

// Shared shape checks for the conv kernels.
struct ConvDims {
  std::size_t cin, h, w, cout, kh, kw, oh, ow;
};

ConvDims check_conv(const Tensor& x, const Tensor& kernel, const ConvSpec& spec) {
  require(spec.stride == 1, "conv2d: only stride 1 is supported");
  require(spec.padding == 0, "conv2d: only zero padding is supported");
  require(x.rank() == 3, "conv2d: input must be [C, H, W]");
  require(kernel.rank() == 4, "conv2d: kernel must be [C_out, C_in, kh, kw]");
  ConvDims d{};
  d.cin = x.extent(0);
  d.h = x.extent(1);
  d.w = x.extent(2);
  d.cout = kernel.extent(0);
  d.kh = kernel.extent(2);
  d.kw = kernel.extent(3);
  require(kernel.extent(1) == d.cin, "conv2d: kernel in_channels mismatch");
  require(d.cin == spec.in_channels, "conv2d: spec in_channels mismatch");
  require(d.cout == spec.out_channels, "conv2d: spec out_channels mismatch");
  require(d.kh == spec.kernel_h && d.kw == spec.kernel_w, "conv2d: spec kernel size mismatch");
  require(d.kh <= d.h && d.kw <= d.w, "conv2d: kernel larger than input");
  d.oh = d.h - d.kh + 1;
  d.ow = d.w - d.kw + 1;
  return d;
}

}  // namespace

Tensor conv2d_forward(const Tensor& x, const Tensor& kernel, const Tensor& bias,
                      const ConvSpec& spec) {
  const ConvDims d = check_conv(x, kernel, spec);
  require(bias.rank() == 1 && bias.extent(0) == d.cout, "conv2d: bias must be [C_out]");

  Tensor y({d.cout, d.oh, d.ow});
  double* yd = y.data();
  const double* xd = x.data();
  const double* kd = kernel.data();

  for (std::size_t o = 0; o < d.cout; ++o) {
    const double b = bias[o];
    double* ymap = yd + o * d.oh * d.ow;
    for (std::size_t i = 0; i < d.oh * d.ow; ++i) ymap[i] = b;
    for (std::size_t c = 0; c < d.cin; ++c) {
      const double* xmap = xd + c * d.h * d.w;
      const double* kmap = kd + (o * d.cin + c) * d.kh * d.kw;
      for (std::size_t m = 0; m < d.kh; ++m) {
        for (std::size_t n = 0; n < d.kw; ++n) {
          const double wv = kmap[m * d.kw + n];
          for (std::size_t i = 0; i < d.oh; ++i) {
            const double* xrow = xmap + (i + m) * d.w + n;
            double* yrow = ymap + i * d.ow;
            for (std::size_t j = 0; j < d.ow; ++j) yrow[j] += wv * xrow[j];
          }
        }
      }
    }
  }
  return y;
}

ConvGrads conv2d_backward(const Tensor& grad_y, const Tensor& x, const Tensor& kernel,
                          const ConvSpec& spec) {
  const ConvDims d = check_conv(x, kernel, spec);
  require(grad_y.rank() == 3 && grad_y.extent(0) == d.cout && grad_y.extent(1) == d.oh &&
              grad_y.extent(2) == d.ow,
          "conv2d_backward: grad_y shape mismatch");

  ConvGrads g{Tensor({d.cin, d.h, d.w}), Tensor({d.cout, d.cin, d.kh, d.kw}),
              Tensor({d.cout})};
  const double* gyd = grad_y.data();
  const double* xd = x.data();
  const double* kd = kernel.data();

  for (std::size_t o = 0; o < d.cout; ++o) {
    const double* gymap = gyd + o * d.oh * d.ow;
    double acc = 0.0;
    for (std::size_t i = 0; i < d.oh * d.ow; ++i) acc += gymap[i];
    g.grad_bias[o] = acc;

    for (std::size_t c = 0; c < d.cin; ++c) {
      const double* xmap = xd + c * d.h * d.w;
      double* gxmap = g.grad_x.data() + c * d.h * d.w;
      const double* kmap = kd + (o * d.cin + c) * d.kh * d.kw;
      double* gkmap = g.grad_kernel.data() + (o * d.cin + c) * d.kh * d.kw;
      for (std::size_t m = 0; m < d.kh; ++m) {
        for (std::size_t n = 0; n < d.kw; ++n) {
          const double wv = kmap[m * d.kw + n];
          double wacc = 0.0;
          for (std::size_t i = 0; i < d.oh; ++i) {
            const double* xrow = xmap + (i + m) * d.w + n;
            double* gxrow = gxmap + (i + m) * d.w + n;
            const double* gyrow = gymap + i * d.ow;
            for (std::size_t j = 0; j < d.ow; ++j) {
              wacc += gyrow[j] * xrow[j];
              gxrow[j] += gyrow[j] * wv;
            }
          }
          gkmap[m * d.kw + n] = wacc;
        }
      }
    }
  }
  return g;
}

PoolResult maxpool2d_forward(const Tensor& x) {
  require(x.rank() == 3, "maxpool2d: input must be [C, H, W]");
  const std::size_t c = x.extent(0), h = x.extent(1), w = x.extent(2);
  require(h >= 2 && w >= 2, "maxpool2d: input smaller than 2x2 window");
  const std::size_t oh = h / 2, ow = w / 2;

  PoolResult r{Tensor({c, oh, ow}), std::vector<std::size_t>(c * oh * ow)};
  const double* xd = x.data();
  for (std::size_t ch = 0; ch < c; ++ch) {
    const double* xmap = xd + ch * h * w;
    for (std::size_t i = 0; i < oh; ++i) {
      for (std::size_t j = 0; j < ow; ++j) {
        // first-encountered winner in row-major order
        std::size_t best = (2 * i) * w + 2 * j;
        double bestv = xmap[best];
        const std::size_t cand[3] = {(2 * i) * w + 2 * j + 1, (2 * i + 1) * w + 2 * j,
                                     (2 * i + 1) * w + 2 * j + 1};
        for (std::size_t k : cand) {
          if (xmap[k] > bestv) {
            bestv = xmap[k];
            best = k;
          }
        }
        const std::size_t out = (ch * oh + i) * ow + j;
        r.values[out] = bestv;
        r.argmax[out] = ch * h * w + best;
      }
    }
  }
  return r;
}

Tensor maxpool2d_backward(const Tensor& grad_y, const std::vector<std::size_t>& argmax,
                          const std::vector<std::size_t>& input_shape) {
  require(input_shape.size() == 3, "maxpool2d_backward: input shape must be [C, H, W]");
  const std::size_t c = input_shape[0], h = input_shape[1], w = input_shape[2];
  require(grad_y.rank() == 3 && grad_y.extent(0) == c && grad_y.extent(1) == h / 2 &&
              grad_y.extent(2) == w / 2,
          "maxpool2d_backward: grad_y shape mismatch");
  require(argmax.size() == grad_y.size(), "maxpool2d_backward: argmax length mismatch");

  Tensor grad_x(input_shape);
  for (std::size_t i = 0; i < argmax.size(); ++i) {
    require(argmax[i] < grad_x.size(), "maxpool2d_backward: argmax index out of range");
    grad_x[argmax[i]] += grad_y[i];
  }
  return grad_x;
}

Tensor linear_forward(const Tensor& x, const Tensor& weight, const Tensor& bias) {
  require(x.rank() == 1, "linear: input must be [D]");
  require(weight.rank() == 2 && weight.extent(1) == x.extent(0), "linear: weight shape mismatch");
  const std::size_t k = weight.extent(0), dsz = weight.extent(1);
  require(bias.rank() == 1 && bias.extent(0) == k, "linear: bias shape mismatch");

  Tensor y({k});
  const double* wd = weight.data();
  const double* xd = x.data();
  for (std::size_t r = 0; r < k; ++r) {
    double acc = bias[r];
    const double* wrow = wd + r * dsz;
    for (std::size_t i = 0; i < dsz; ++i) acc += wrow[i] * xd[i];
    y[r] = acc;
  }
  return y;
}

LinearGrads linear_backward(const Tensor& grad_y, const Tensor& x, const Tensor& weight) {
  require(x.rank() == 1 && weight.rank() == 2 && weight.extent(1) == x.extent(0),
          "linear_backward: shape mismatch");
  const std::size_t k = weight.extent(0), dsz = weight.extent(1);
  require(grad_y.rank() == 1 && grad_y.extent(0) == k, "linear_backward: grad_y shape mismatch");

  LinearGrads g{Tensor({dsz}), Tensor({k, dsz}), Tensor({k})};
  const double* wd = weight.data();
  const double* xd = x.data();
  for (std::size_t r = 0; r < k; ++r) {
    const double gy = grad_y[r];
    g.grad_bias[r] = gy;
    const double* wrow = wd + r * dsz;
    double* gwrow = g.grad_weight.data() + r * dsz;
    for (std::size_t i = 0; i < dsz; ++i) {
      g.grad_x[i] += gy * wrow[i];
      gwrow[i] = gy * xd[i];
    }
  }
  return g;
}

Tensor flatten(const Tensor& x) {
  return Tensor({x.size()}, std::vector<double>(x.data(), x.data() + x.size()));
}

Tensor reshape(const Tensor& x, std::vector<std::size_t> shape) {
  return Tensor(std::move(shape), std::vector<double>(x.data(), x.data() + x.size()));
}

Tensor slice_front(const Tensor& x, std::size_t index) {
  require(x.rank() >= 2, "slice_front: rank must be >= 2");
  require(index < x.extent(0), "slice_front: index out of range");
  std::vector<std::size_t> shape(x.shape().begin() + 1, x.shape().end());
  const std::size_t block = x.size() / x.extent(0);
  return Tensor(std::move(shape),
                std::vector<double>(x.data() + index * block, x.data() + (index + 1) * block));
}

void add_inplace(Tensor& dst, const Tensor& src) {
  require(dst.same_shape(src), "add_inplace: shape mismatch");
  double* d = dst.data();
  const double* s = src.data();
  for (std::size_t i = 0; i < dst.size(); ++i) d[i] += s[i];
}

void scale_inplace(Tensor& dst, double factor) {
  double* d = dst.data();
  for (std::size_t i = 0; i < dst.size(); ++i) d[i] *= factor;
}

}  // namespace evsnn
