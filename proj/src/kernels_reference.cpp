#include "schoolcount/kernels.hpp"

namespace schoolcount::kernels::reference {

template <typename T>
void conv2d_forward(const ConvGeometry& g, std::span<const T> input, std::span<const T> weight, std::span<T> output) {
  const int oh = g.out_h(), ow = g.out_w(), k = g.kernel;
  for (int o = 0; o < g.out_c; ++o) {
    for (int y = 0; y < oh; ++y) {
      for (int x = 0; x < ow; ++x) {
        T acc = 0;
        for (int c = 0; c < g.in_c; ++c) {
          for (int ky = 0; ky < k; ++ky) {
            const int iy = y * g.stride - g.pad + ky;
            if (iy < 0 || iy >= g.in_h) continue;
            for (int kx = 0; kx < k; ++kx) {
              const int ix = x * g.stride - g.pad + kx;
              if (ix < 0 || ix >= g.in_w) continue;
              acc += weight[((static_cast<long>(o) * g.in_c + c) * k + ky) * k + kx] *
                     input[(static_cast<long>(c) * g.in_h + iy) * g.in_w + ix];
            }
          }
        }
        output[(static_cast<long>(o) * oh + y) * ow + x] = acc;
      }
    }
  }
}

template <typename T>
void conv2d_backward_input(const ConvGeometry& g, std::span<const T> d_output, std::span<const T> weight,
                           std::span<T> d_input) {
  const int oh = g.out_h(), ow = g.out_w(), k = g.kernel;
  for (int o = 0; o < g.out_c; ++o) {
    for (int y = 0; y < oh; ++y) {
      for (int x = 0; x < ow; ++x) {
        const T d = d_output[(static_cast<long>(o) * oh + y) * ow + x];
        for (int c = 0; c < g.in_c; ++c) {
          for (int ky = 0; ky < k; ++ky) {
            const int iy = y * g.stride - g.pad + ky;
            if (iy < 0 || iy >= g.in_h) continue;
            for (int kx = 0; kx < k; ++kx) {
              const int ix = x * g.stride - g.pad + kx;
              if (ix < 0 || ix >= g.in_w) continue;
              d_input[(static_cast<long>(c) * g.in_h + iy) * g.in_w + ix] +=
                  weight[((static_cast<long>(o) * g.in_c + c) * k + ky) * k + kx] * d;
            }
          }
        }
      }
    }
  }
}

template <typename T>
void conv2d_backward_weight(const ConvGeometry& g, std::span<const T> input, std::span<const T> d_output,
                            std::span<T> d_weight) {
  const int oh = g.out_h(), ow = g.out_w(), k = g.kernel;
  for (int o = 0; o < g.out_c; ++o) {
    for (int c = 0; c < g.in_c; ++c) {
      for (int ky = 0; ky < k; ++ky) {
        for (int kx = 0; kx < k; ++kx) {
          T acc = 0;
          for (int y = 0; y < oh; ++y) {
            const int iy = y * g.stride - g.pad + ky;
            if (iy < 0 || iy >= g.in_h) continue;
            for (int x = 0; x < ow; ++x) {
              const int ix = x * g.stride - g.pad + kx;
              if (ix < 0 || ix >= g.in_w) continue;
              acc += input[(static_cast<long>(c) * g.in_h + iy) * g.in_w + ix] *
                     d_output[(static_cast<long>(o) * oh + y) * ow + x];
            }
          }
          d_weight[((static_cast<long>(o) * g.in_c + c) * k + ky) * k + kx] += acc;
        }
      }
    }
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

}  // namespace schoolcount::kernels::reference
