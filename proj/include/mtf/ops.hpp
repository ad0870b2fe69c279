#pragma once

#include <cstddef>

#include "mtf/tensor.hpp"

namespace mtf {

/// Geometry of a stride-1, zero "same"-padded convolution over a
/// [channels, depth, height, width] volume. 2-D convolutions use depth = 1.
struct ConvGeometry {
  std::size_t in_channels = 0;
  std::size_t out_channels = 0;
  std::size_t depth = 1, height = 1, width = 1;
  std::size_t kernel_depth = 1, kernel_height = 1, kernel_width = 1;

  std::size_t positions() const { return depth * height * width; }
  std::size_t patch() const { return in_channels * kernel_depth * kernel_height * kernel_width; }
};

/// Geometry for input [C,H,W] and kernel [Co,C,kH,kW]. Kernel sizes must be odd.
ConvGeometry conv2d_geometry(const Shape& input, const Shape& kernel);
/// Geometry for input [C,D,H,W] and kernel [Co,C,kD,kH,kW].
ConvGeometry conv3d_geometry(const Shape& input, const Shape& kernel);

namespace kernels {

/// out[Co, P] = kernel[Co, patch] * im2col(input) (+ bias[Co]).
void conv_forward(const ConvGeometry& g, const double* input, const double* kernel, const double* bias,
                  double* out);
/// Accumulates gradients into `grad_input` / `grad_kernel` / `grad_bias` (each may be null).
void conv_backward(const ConvGeometry& g, const double* input, const double* kernel, const double* grad_out,
                   double* grad_input, double* grad_kernel, double* grad_bias);

/// c[M,N] (+)= a[M,K] * b[K,N], row-major.
void gemm(std::size_t m, std::size_t k, std::size_t n, const double* a, const double* b, double* c,
          bool accumulate);
/// For c[M,N] = a[M,K] * b[K,N] with upstream gradient g[M,N]: grad_a += g * b^T,
/// grad_b += a^T * g. Either target may be null.
void matmul_backward(std::size_t m, std::size_t k, std::size_t n, const double* a, const double* b, const double* g,
                     double* grad_a, double* grad_b);

}  // namespace kernels

// Value-level versions of the differentiable operations. The autodiff graph
// evaluates its forward pass through the same kernels.

Tensor conv2d(const Tensor& input, const Tensor& kernel, const Tensor* bias = nullptr);
Tensor conv3d(const Tensor& input, const Tensor& kernel, const Tensor* bias = nullptr);
Tensor hadamard(const Tensor& a, const Tensor& b);
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor sigmoid(const Tensor& x);
Tensor tanh(const Tensor& x);
Tensor matmul(const Tensor& a, const Tensor& b);
/// Mean squared difference over all elements.
double mse_loss(const Tensor& pred, const Tensor& target);

double sigmoid(double x);

}  // namespace mtf
