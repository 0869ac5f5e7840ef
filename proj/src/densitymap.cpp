#include "schoolcount/densitymap.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>

#include "schoolcount/error.hpp"

namespace schoolcount {

namespace {

constexpr char kDensityMagic[4] = {'S', 'C', 'D', 'M'};
constexpr std::uint32_t kDensityVersion = 1;

static_assert(std::endian::native == std::endian::little, "binary formats assume a little-endian host");

void put_u32(std::ostream& out, std::uint32_t v) { out.write(reinterpret_cast<const char*>(&v), 4); }

std::uint32_t get_u32(std::istream& in) {
  std::uint32_t v = 0;
  in.read(reinterpret_cast<char*>(&v), 4);
  return v;
}

}  // namespace

DensityMap make_density(std::span<const Point> points, int image_h, int image_w,
                        const DensityParams& params) {
  if (params.kernel_size < 1) throw ValidationError("densitymap", "kernel size must be >= 1");
  if (!(params.sigma > 0.0)) throw ValidationError("densitymap", "sigma must be > 0");
  if (params.stride < 1 || image_h % params.stride != 0 || image_w % params.stride != 0) {
    throw ValidationError("densitymap", "stride " + std::to_string(params.stride) +
                                            " does not divide image " + std::to_string(image_h) + "x" +
                                            std::to_string(image_w));
  }
  const int s = params.kernel_size;
  const int lo = -(s / 2);
  const int hi = lo + s - 1;
  const double inv_two_var = 1.0 / (2.0 * params.sigma * params.sigma);

  DensityMap map(image_h / params.stride, image_w / params.stride, params.stride);
  std::vector<double> stamp(static_cast<std::size_t>(s) * s);
  for (const auto& p : points) {
    const int cx = std::clamp(static_cast<int>(std::lround(p.x)), 0, image_w - 1);
    const int cy = std::clamp(static_cast<int>(std::lround(p.y)), 0, image_h - 1);
    double total = 0.0;
    for (int dy = lo; dy <= hi; ++dy) {
      for (int dx = lo; dx <= hi; ++dx) {
        const int x = cx + dx;
        const int y = cy + dy;
        double w = 0.0;
        if (x >= 0 && x < image_w && y >= 0 && y < image_h) {
          w = std::exp(-(dx * dx + dy * dy) * inv_two_var);
        }
        stamp[static_cast<std::size_t>(dy - lo) * s + (dx - lo)] = w;
        total += w;
      }
    }
    for (int dy = lo; dy <= hi; ++dy) {
      for (int dx = lo; dx <= hi; ++dx) {
        const double w = stamp[static_cast<std::size_t>(dy - lo) * s + (dx - lo)];
        if (w == 0.0) continue;
        map.at((cy + dy) / params.stride, (cx + dx) / params.stride) += w / total;
      }
    }
  }
  return map;
}

double integrate_count(const DensityMap& map) {
  double sum = 0.0;
  for (double v : map.values) sum += v;
  return sum;
}

void write_density_file(const std::filesystem::path& file, const DensityMap& map) {
  if (file.has_parent_path()) std::filesystem::create_directories(file.parent_path());
  std::ofstream out(file, std::ios::binary);
  if (!out) throw IoError("densitymap", "cannot write " + file.string());
  out.write(kDensityMagic, 4);
  put_u32(out, kDensityVersion);
  put_u32(out, static_cast<std::uint32_t>(map.rows));
  put_u32(out, static_cast<std::uint32_t>(map.cols));
  put_u32(out, static_cast<std::uint32_t>(map.stride));
  for (double v : map.values) {
    const float f = static_cast<float>(v);
    out.write(reinterpret_cast<const char*>(&f), 4);
  }
}

DensityMap read_density_file(const std::filesystem::path& file) {
  std::ifstream in(file, std::ios::binary);
  if (!in) throw IoError("densitymap", "cannot open " + file.string());
  char magic[4];
  in.read(magic, 4);
  if (!in || std::memcmp(magic, kDensityMagic, 4) != 0) {
    throw ValidationError("densitymap", file.string() + " is not a density map file");
  }
  const auto version = get_u32(in);
  if (version != kDensityVersion) {
    throw ValidationError("densitymap", "unsupported density map version " + std::to_string(version));
  }
  const auto rows = get_u32(in);
  const auto cols = get_u32(in);
  const auto stride = get_u32(in);
  if (!in || rows > (1u << 20) || cols > (1u << 20)) throw ValidationError("densitymap", "corrupt header in " + file.string());
  DensityMap map(static_cast<int>(rows), static_cast<int>(cols), static_cast<int>(stride));
  for (auto& v : map.values) {
    float f = 0.0f;
    in.read(reinterpret_cast<char*>(&f), 4);
    v = f;
  }
  if (!in) throw ValidationError("densitymap", "truncated density map " + file.string());
  return map;
}

}  // namespace schoolcount
