#pragma once

#include <span>

namespace schoolcount::kernels {

// Square-kernel 2-D convolution over one CHW image, zero padding.
// Weights are laid out (out_c, in_c, k, k).
struct ConvGeometry {
  int in_c = 1, in_h = 1, in_w = 1;
  int out_c = 1;
  int kernel = 3;
  int stride = 1;
  int pad = 1;

  int out_h() const { return (in_h + 2 * pad - kernel) / stride + 1; }
  int out_w() const { return (in_w + 2 * pad - kernel) / stride + 1; }
  long in_size() const { return static_cast<long>(in_c) * in_h * in_w; }
  long out_size() const { return static_cast<long>(out_c) * out_h() * out_w(); }
  long weight_size() const { return static_cast<long>(out_c) * in_c * kernel * kernel; }
};

// Straightforward serial loops; kept as the oracle for the parallel kernels.
namespace reference {

template <typename T>
void conv2d_forward(const ConvGeometry& g, std::span<const T> input, std::span<const T> weight, std::span<T> output);

// d_input += conv^T(d_output)
template <typename T>
void conv2d_backward_input(const ConvGeometry& g, std::span<const T> d_output, std::span<const T> weight,
                           std::span<T> d_input);

// d_weight += correlation(input, d_output)
template <typename T>
void conv2d_backward_weight(const ConvGeometry& g, std::span<const T> input, std::span<const T> d_output,
                            std::span<T> d_weight);

}  // namespace reference

// im2col + GEMM. Work is split across OpenMP threads when called outside a
// parallel region; every output element is reduced in the same order
// regardless of thread count, so results are reproducible.
namespace parallel {

template <typename T>
void conv2d_forward(const ConvGeometry& g, std::span<const T> input, std::span<const T> weight, std::span<T> output);

template <typename T>
void conv2d_backward_input(const ConvGeometry& g, std::span<const T> d_output, std::span<const T> weight,
                           std::span<T> d_input);

template <typename T>
void conv2d_backward_weight(const ConvGeometry& g, std::span<const T> input, std::span<const T> d_output,
                            std::span<T> d_weight);

}  // namespace parallel

}  // namespace schoolcount::kernels
