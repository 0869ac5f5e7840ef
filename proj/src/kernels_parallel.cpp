#include <omp.h>

#include <Eigen/Core>
#include <algorithm>
#include <vector>

#include "schoolcount/kernels.hpp"

namespace schoolcount::kernels::parallel {

namespace {

// Fixed chunk widths: the GEMM blocking (and so the summation order) depends
// only on the problem shape, never on the number of threads.
constexpr long kColumnChunk = 512;
constexpr long kRowChunk = 64;

template <typename T>
using RowMatrix = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using ConstMap = Eigen::Map<const RowMatrix<T>>;
template <typename T>
using MutMap = Eigen::Map<RowMatrix<T>>;

bool is_pointwise(const ConvGeometry& g) { return g.kernel == 1 && g.stride == 1 && g.pad == 0; }

// Columns [p0, p1) of the im2col matrix (rows = in_c * k * k) into `col`,
// stored row-major with row length (p1 - p0).
template <typename T>
void im2col_columns(const ConvGeometry& g, const T* input, long p0, long p1, T* col) {
  const int ow = g.out_w(), k = g.kernel;
  const long n = p1 - p0;
  for (int c = 0; c < g.in_c; ++c) {
    for (int ky = 0; ky < k; ++ky) {
      for (int kx = 0; kx < k; ++kx) {
        T* row = col + ((static_cast<long>(c) * k + ky) * k + kx) * n;
        for (long p = p0; p < p1; ++p) {
          const int oy = static_cast<int>(p / ow), ox = static_cast<int>(p % ow);
          const int iy = oy * g.stride - g.pad + ky;
          const int ix = ox * g.stride - g.pad + kx;
          row[p - p0] = (iy >= 0 && iy < g.in_h && ix >= 0 && ix < g.in_w)
                            ? input[(static_cast<long>(c) * g.in_h + iy) * g.in_w + ix]
                            : T(0);
        }
      }
    }
  }
}

template <typename T>
std::vector<T>& scratch() {
  thread_local std::vector<T> buffer;
  return buffer;
}

}  // namespace

template <typename T>
void conv2d_forward(const ConvGeometry& g, std::span<const T> input, std::span<const T> weight, std::span<T> output) {
  const long K = static_cast<long>(g.in_c) * g.kernel * g.kernel;
  const long P = static_cast<long>(g.out_h()) * g.out_w();
  const long chunks = (P + kColumnChunk - 1) / kColumnChunk;
  ConstMap<T> w(weight.data(), g.out_c, K);
  MutMap<T> out(output.data(), g.out_c, P);
  const bool pointwise = is_pointwise(g);

#pragma omp parallel for schedule(static) if (!omp_in_parallel() && chunks > 1)
  for (long chunk = 0; chunk < chunks; ++chunk) {
    const long p0 = chunk * kColumnChunk, p1 = std::min(P, p0 + kColumnChunk);
    if (pointwise) {
      Eigen::Map<const RowMatrix<T>, 0, Eigen::OuterStride<>> col(input.data() + p0, K, p1 - p0,
                                                                  Eigen::OuterStride<>(P));
      out.middleCols(p0, p1 - p0).noalias() = w * col;
    } else {
      auto& buf = scratch<T>();
      buf.resize(static_cast<std::size_t>(K * (p1 - p0)));
      im2col_columns(g, input.data(), p0, p1, buf.data());
      ConstMap<T> col(buf.data(), K, p1 - p0);
      out.middleCols(p0, p1 - p0).noalias() = w * col;
    }
  }
}

template <typename T>
void conv2d_backward_input(const ConvGeometry& g, std::span<const T> d_output, std::span<const T> weight,
                           std::span<T> d_input) {
  const long K = static_cast<long>(g.in_c) * g.kernel * g.kernel;
  const long P = static_cast<long>(g.out_h()) * g.out_w();
  const long chunks = (P + kColumnChunk - 1) / kColumnChunk;
  ConstMap<T> w(weight.data(), g.out_c, K);
  ConstMap<T> dout(d_output.data(), g.out_c, P);
  const bool parallel = !omp_in_parallel();

  if (is_pointwise(g)) {
    MutMap<T> din(d_input.data(), K, P);
#pragma omp parallel for schedule(static) if (parallel && chunks > 1)
    for (long chunk = 0; chunk < chunks; ++chunk) {
      const long p0 = chunk * kColumnChunk, p1 = std::min(P, p0 + kColumnChunk);
      din.middleCols(p0, p1 - p0).noalias() += w.transpose() * dout.middleCols(p0, p1 - p0);
    }
    return;
  }

  std::vector<T> dcol_storage(static_cast<std::size_t>(K * P));
  MutMap<T> dcol(dcol_storage.data(), K, P);
#pragma omp parallel for schedule(static) if (parallel && chunks > 1)
  for (long chunk = 0; chunk < chunks; ++chunk) {
    const long p0 = chunk * kColumnChunk, p1 = std::min(P, p0 + kColumnChunk);
    dcol.middleCols(p0, p1 - p0).noalias() = w.transpose() * dout.middleCols(p0, p1 - p0);
  }

  // col2im: each input channel only receives from its own rows
  const int ow = g.out_w(), k = g.kernel;
#pragma omp parallel for schedule(static) if (parallel && g.in_c > 1)
  for (int c = 0; c < g.in_c; ++c) {
    T* dst = d_input.data() + static_cast<long>(c) * g.in_h * g.in_w;
    for (int ky = 0; ky < k; ++ky) {
      for (int kx = 0; kx < k; ++kx) {
        const T* row = dcol_storage.data() + ((static_cast<long>(c) * k + ky) * k + kx) * P;
        for (long p = 0; p < P; ++p) {
          const int oy = static_cast<int>(p / ow), ox = static_cast<int>(p % ow);
          const int iy = oy * g.stride - g.pad + ky;
          const int ix = ox * g.stride - g.pad + kx;
          if (iy >= 0 && iy < g.in_h && ix >= 0 && ix < g.in_w) dst[static_cast<long>(iy) * g.in_w + ix] += row[p];
        }
      }
    }
  }
}

template <typename T>
void conv2d_backward_weight(const ConvGeometry& g, std::span<const T> input, std::span<const T> d_output,
                            std::span<T> d_weight) {
  const long K = static_cast<long>(g.in_c) * g.kernel * g.kernel;
  const long P = static_cast<long>(g.out_h()) * g.out_w();
  ConstMap<T> dout(d_output.data(), g.out_c, P);
  MutMap<T> dw(d_weight.data(), g.out_c, K);

  if (is_pointwise(g)) {
    ConstMap<T> col(input.data(), K, P);
    const long chunks = (K + kRowChunk - 1) / kRowChunk;
#pragma omp parallel for schedule(static) if (!omp_in_parallel() && chunks > 1)
    for (long chunk = 0; chunk < chunks; ++chunk) {
      const long r0 = chunk * kRowChunk, r1 = std::min(K, r0 + kRowChunk);
      dw.middleCols(r0, r1 - r0).noalias() += dout * col.middleRows(r0, r1 - r0).transpose();
    }
    return;
  }

  // The reduction runs over all P output pixels; split over weight columns
  // (one input channel each) so no element is summed by two threads.
  const long per_channel = static_cast<long>(g.kernel) * g.kernel;
#pragma omp parallel for schedule(static) if (!omp_in_parallel() && g.in_c > 1)
  for (int c = 0; c < g.in_c; ++c) {
    ConvGeometry one = g;
    one.in_c = 1;
    auto& buf = scratch<T>();
    buf.resize(static_cast<std::size_t>(per_channel * P));
    im2col_columns(one, input.data() + static_cast<long>(c) * g.in_h * g.in_w, 0, P, buf.data());
    ConstMap<T> col(buf.data(), per_channel, P);
    dw.middleCols(c * per_channel, per_channel).noalias() += dout * col.transpose();
  }
}

#define SCHOOLCOUNT_INSTANTIATE(T)                                                                        \
  template void conv2d_forward<T>(const ConvGeometry&, std::span<const T>, std::span<const T>, std::span<T>); \
  template void conv2d_backward_input<T>(const ConvGeometry&, std::span<const T>, std::span<const T>,         \
                                         std::span<T>);                                                     \
  template void conv2d_backward_weight<T>(const ConvGeometry&, std::span<const T>, std::span<const T>,        \
                                          std::span<T>);

SCHOOLCOUNT_INSTANTIATE(float)
SCHOOLCOUNT_INSTANTIATE(double)
#undef SCHOOLCOUNT_INSTANTIATE

}  // namespace schoolcount::kernels::parallel
