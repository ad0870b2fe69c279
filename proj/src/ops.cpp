#include "mtf/ops.hpp"

#include <cmath>
#include <vector>

#include <Eigen/Core>
#include <fmt/format.h>

#include "mtf/error.hpp"

namespace mtf {

namespace {

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ConstMap = Eigen::Map<const RowMatrix>;
using MutMap = Eigen::Map<RowMatrix>;

void require_odd(std::size_t k, const char* what) {
  if (k % 2 == 0) throw DimensionError(fmt::format("{} kernel size {} is not odd", what, k));
}

// cols[(c, kd, kh, kw), (d, y, x)]
void im2col(const ConvGeometry& g, const double* input, double* cols) {
  const std::size_t P = g.positions();
  const long pd = static_cast<long>(g.kernel_depth / 2);
  const long ph = static_cast<long>(g.kernel_height / 2);
  const long pw = static_cast<long>(g.kernel_width / 2);
  const long D = static_cast<long>(g.depth), H = static_cast<long>(g.height), W = static_cast<long>(g.width);
  std::size_t row = 0;
  for (std::size_t c = 0; c < g.in_channels; ++c) {
    const double* channel = input + c * P;
    for (long kd = 0; kd < static_cast<long>(g.kernel_depth); ++kd) {
      for (long kh = 0; kh < static_cast<long>(g.kernel_height); ++kh) {
        for (long kw = 0; kw < static_cast<long>(g.kernel_width); ++kw, ++row) {
          double* dst = cols + row * P;
          for (long d = 0; d < D; ++d) {
            const long sd = d + kd - pd;
            for (long y = 0; y < H; ++y) {
              const long sy = y + kh - ph;
              double* out = dst + (d * H + y) * W;
              if (sd < 0 || sd >= D || sy < 0 || sy >= H) {
                std::fill(out, out + W, 0.0);
                continue;
              }
              const double* src = channel + (sd * H + sy) * W;
              for (long x = 0; x < W; ++x) {
                const long sx = x + kw - pw;
                out[x] = (sx >= 0 && sx < W) ? src[sx] : 0.0;
              }
            }
          }
        }
      }
    }
  }
}

void col2im_add(const ConvGeometry& g, const double* cols, double* grad_input) {
  const std::size_t P = g.positions();
  const long pd = static_cast<long>(g.kernel_depth / 2);
  const long ph = static_cast<long>(g.kernel_height / 2);
  const long pw = static_cast<long>(g.kernel_width / 2);
  const long D = static_cast<long>(g.depth), H = static_cast<long>(g.height), W = static_cast<long>(g.width);
  std::size_t row = 0;
  for (std::size_t c = 0; c < g.in_channels; ++c) {
    double* channel = grad_input + c * P;
    for (long kd = 0; kd < static_cast<long>(g.kernel_depth); ++kd) {
      for (long kh = 0; kh < static_cast<long>(g.kernel_height); ++kh) {
        for (long kw = 0; kw < static_cast<long>(g.kernel_width); ++kw, ++row) {
          const double* src = cols + row * P;
          for (long d = 0; d < D; ++d) {
            const long sd = d + kd - pd;
            if (sd < 0 || sd >= D) continue;
            for (long y = 0; y < H; ++y) {
              const long sy = y + kh - ph;
              if (sy < 0 || sy >= H) continue;
              const double* in = src + (d * H + y) * W;
              double* dst = channel + (sd * H + sy) * W;
              for (long x = 0; x < W; ++x) {
                const long sx = x + kw - pw;
                if (sx >= 0 && sx < W) dst[sx] += in[x];
              }
            }
          }
        }
      }
    }
  }
}

}  // namespace

ConvGeometry conv2d_geometry(const Shape& input, const Shape& kernel) {
  if (input.size() != 3 || kernel.size() != 4) {
    throw DimensionError(fmt::format("conv2d expects input [C,H,W] and kernel [Co,C,kH,kW], got {} and {}",
                                     to_string(input), to_string(kernel)));
  }
  if (kernel[1] != input[0]) {
    throw DimensionError(fmt::format("conv2d: kernel expects {} input channels, input has {}", kernel[1],
                                     input[0]));
  }
  require_odd(kernel[2], "conv2d");
  require_odd(kernel[3], "conv2d");
  ConvGeometry g;
  g.in_channels = input[0];
  g.out_channels = kernel[0];
  g.height = input[1];
  g.width = input[2];
  g.kernel_height = kernel[2];
  g.kernel_width = kernel[3];
  return g;
}

ConvGeometry conv3d_geometry(const Shape& input, const Shape& kernel) {
  if (input.size() != 4 || kernel.size() != 5) {
    throw DimensionError(fmt::format(
        "conv3d expects input [C,D,H,W] and kernel [Co,C,kD,kH,kW], got {} and {}", to_string(input),
        to_string(kernel)));
  }
  if (kernel[1] != input[0]) {
    throw DimensionError(fmt::format("conv3d: kernel expects {} input channels, input has {}", kernel[1],
                                     input[0]));
  }
  require_odd(kernel[2], "conv3d");
  require_odd(kernel[3], "conv3d");
  require_odd(kernel[4], "conv3d");
  ConvGeometry g;
  g.in_channels = input[0];
  g.out_channels = kernel[0];
  g.depth = input[1];
  g.height = input[2];
  g.width = input[3];
  g.kernel_depth = kernel[2];
  g.kernel_height = kernel[3];
  g.kernel_width = kernel[4];
  return g;
}

namespace kernels {

void gemm(std::size_t m, std::size_t k, std::size_t n, const double* a, const double* b, double* c,
          bool accumulate) {
  ConstMap A(a, static_cast<Eigen::Index>(m), static_cast<Eigen::Index>(k));
  ConstMap B(b, static_cast<Eigen::Index>(k), static_cast<Eigen::Index>(n));
  MutMap C(c, static_cast<Eigen::Index>(m), static_cast<Eigen::Index>(n));
  if (accumulate) {
    C.noalias() += A * B;
  } else {
    C.noalias() = A * B;
  }
}

void matmul_backward(std::size_t m, std::size_t k, std::size_t n, const double* a, const double* b, const double* g,
                     double* grad_a, double* grad_b) {
  const auto M = static_cast<Eigen::Index>(m), K = static_cast<Eigen::Index>(k), N = static_cast<Eigen::Index>(n);
  ConstMap G(g, M, N);
  if (grad_a != nullptr) MutMap(grad_a, M, K).noalias() += G * ConstMap(b, K, N).transpose();
  if (grad_b != nullptr) MutMap(grad_b, K, N).noalias() += ConstMap(a, M, K).transpose() * G;
}

void conv_forward(const ConvGeometry& g, const double* input, const double* kernel, const double* bias,
                  double* out) {
  const std::size_t P = g.positions();
  const std::size_t K = g.patch();
  const double* cols = input;
  AlignedBuffer buffer;
  // A 1x1x1 kernel reads the input directly.
  if (K != g.in_channels) {
    buffer.resize(K * P);
    im2col(g, input, buffer.data());
    cols = buffer.data();
  }
  gemm(g.out_channels, K, P, kernel, cols, out, false);
  if (bias != nullptr) {
    for (std::size_t c = 0; c < g.out_channels; ++c) {
      double* row = out + c * P;
      for (std::size_t p = 0; p < P; ++p) row[p] += bias[c];
    }
  }
}

void conv_backward(const ConvGeometry& g, const double* input, const double* kernel, const double* grad_out,
                   double* grad_input, double* grad_kernel, double* grad_bias) {
  const auto P = static_cast<Eigen::Index>(g.positions());
  const auto K = static_cast<Eigen::Index>(g.patch());
  const auto Co = static_cast<Eigen::Index>(g.out_channels);
  ConstMap dout(grad_out, Co, P);
  if (grad_bias != nullptr) {
    for (Eigen::Index c = 0; c < Co; ++c) grad_bias[c] += dout.row(c).sum();
  }
  const bool direct = K == static_cast<Eigen::Index>(g.in_channels);
  if (grad_kernel != nullptr) {
    const double* cols = input;
    AlignedBuffer buffer;
    if (!direct) {
      buffer.resize(static_cast<std::size_t>(K * P));
      im2col(g, input, buffer.data());
      cols = buffer.data();
    }
    MutMap dk(grad_kernel, Co, K);
    dk.noalias() += dout * ConstMap(cols, K, P).transpose();
  }
  if (grad_input != nullptr) {
    ConstMap w(kernel, Co, K);
    if (direct) {
      MutMap(grad_input, K, P).noalias() += w.transpose() * dout;
    } else {
      RowMatrix dcols = w.transpose() * dout;
      col2im_add(g, dcols.data(), grad_input);
    }
  }
}

}  // namespace kernels

namespace {

Tensor conv_impl(const ConvGeometry& g, const Shape& out_shape, const Tensor& input, const Tensor& kernel,
                 const Tensor* bias) {
  if (bias != nullptr && (bias->rank() != 1 || bias->dim(0) != g.out_channels)) {
    throw DimensionError(fmt::format("conv bias shape {} does not match {} output channels",
                                     to_string(bias->shape()), g.out_channels));
  }
  Tensor out(out_shape);
  kernels::conv_forward(g, input.data().data(), kernel.data().data(),
                        bias != nullptr ? bias->data().data() : nullptr, out.data().data());
  return out;
}

template <class F>
Tensor map(const Tensor& x, F f) {
  Tensor out = x;
  for (double& v : out.data()) v = f(v);
  return out;
}

}  // namespace

Tensor conv2d(const Tensor& input, const Tensor& kernel, const Tensor* bias) {
  const ConvGeometry g = conv2d_geometry(input.shape(), kernel.shape());
  return conv_impl(g, Shape{g.out_channels, g.height, g.width}, input, kernel, bias);
}

Tensor conv3d(const Tensor& input, const Tensor& kernel, const Tensor* bias) {
  const ConvGeometry g = conv3d_geometry(input.shape(), kernel.shape());
  return conv_impl(g, Shape{g.out_channels, g.depth, g.height, g.width}, input, kernel, bias);
}

Tensor hadamard(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "hadamard");
  Tensor out = a;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= b[i];
  return out;
}

Tensor add(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "add");
  Tensor out = a;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += b[i];
  return out;
}

Tensor sub(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "sub");
  Tensor out = a;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] -= b[i];
  return out;
}

double sigmoid(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

Tensor sigmoid(const Tensor& x) { return map(x, [](double v) { return sigmoid(v); }); }

Tensor tanh(const Tensor& x) { return map(x, [](double v) { return std::tanh(v); }); }

Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(0)) {
    throw DimensionError(fmt::format("matmul: incompatible shapes {} and {}", to_string(a.shape()),
                                     to_string(b.shape())));
  }
  Tensor out(Shape{a.dim(0), b.dim(1)});
  kernels::gemm(a.dim(0), a.dim(1), b.dim(1), a.data().data(), b.data().data(), out.data().data(), false);
  return out;
}

double mse_loss(const Tensor& pred, const Tensor& target) {
  require_same_shape(pred, target, "mse_loss");
  double total = 0.0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const double d = pred[i] - target[i];
    total += d * d;
  }
  return total / static_cast<double>(pred.size());
}

}  // namespace mtf
