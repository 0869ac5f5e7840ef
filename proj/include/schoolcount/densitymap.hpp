#pragma once

#include <filesystem>
#include <span>
#include <vector>

#include "schoolcount/imagedata.hpp"

namespace schoolcount {

// Grid of real values at output stride; cell (r, c) covers input pixels
// [r*stride, (r+1)*stride) x [c*stride, (c+1)*stride).
struct DensityMap {
  int rows = 0;
  int cols = 0;
  int stride = 32;
  std::vector<double> values;

  DensityMap() = default;
  DensityMap(int r, int c, int s = 32) : rows(r), cols(c), stride(s), values(static_cast<std::size_t>(r) * c, 0.0) {}

  double& at(int r, int c) { return values[static_cast<std::size_t>(r) * cols + c]; }
  double at(int r, int c) const { return values[static_cast<std::size_t>(r) * cols + c]; }
};

struct DensityParams {
  int kernel_size = 4;  // s
  double sigma = 1.0;
  int stride = 32;
};

// One Gaussian stamp per point, truncated to the image and renormalised so
// each stamp sums to exactly one, then block-summed by stride x stride.
//
// The stamp is centred on the nearest pixel, round(x), round(y). For even
// kernel sizes the support is offsets [-s/2, s/2 - 1], i.e. the mass sits half
// a pixel up-left of the annotated point.
DensityMap make_density(std::span<const Point> points, int image_h, int image_w,
                        const DensityParams& params = {});

double integrate_count(const DensityMap& map);

// Binary grid: "SCDM", u32 version, u32 rows, u32 cols, u32 stride, then
// rows*cols little-endian f32 values.
void write_density_file(const std::filesystem::path& file, const DensityMap& map);
DensityMap read_density_file(const std::filesystem::path& file);

}  // namespace schoolcount
