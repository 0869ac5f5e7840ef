#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace schoolcount {

inline constexpr int kChannels = 3;

// 8-bit, 3-channel image stored row-major, channels interleaved (HWC).
struct RawImage {
  int height = 0;
  int width = 0;
  std::vector<std::uint8_t> pixels;
  double meters_per_pixel = 1.0;
  std::string source_id;

  RawImage() = default;
  RawImage(int h, int w, std::uint8_t fill = 0)
      : height(h), width(w), pixels(static_cast<std::size_t>(h) * w * kChannels, fill) {}

  std::size_t index(int y, int x, int c = 0) const {
    return (static_cast<std::size_t>(y) * width + x) * kChannels + c;
  }
  std::uint8_t& at(int y, int x, int c) { return pixels[index(y, x, c)]; }
  std::uint8_t at(int y, int x, int c) const { return pixels[index(y, x, c)]; }
  bool empty() const { return height <= 0 || width <= 0; }

  friend bool operator==(const RawImage&, const RawImage&) = default;
};

// Pixel-index coordinates: integer values sit on pixel centres, valid points
// satisfy 0 <= x < width and 0 <= y < height.
struct Point {
  double x = 0.0;
  double y = 0.0;
  friend bool operator==(const Point&, const Point&) = default;
};

enum class NoiseKind { dolphin, net, other };

std::string_view to_string(NoiseKind kind);
NoiseKind noise_kind_from_string(std::string_view text);

struct NoiseBox {
  double x0 = 0.0, y0 = 0.0, x1 = 0.0, y1 = 0.0;
  NoiseKind kind = NoiseKind::other;

  double area() const { return (x1 - x0) * (y1 - y0); }
  friend bool operator==(const NoiseBox&, const NoiseBox&) = default;
};

struct LabeledSample {
  std::string id;
  RawImage image;
  std::vector<Point> points;
  std::vector<NoiseBox> noise;

  std::size_t count() const { return points.size(); }
};

using Background = std::array<std::uint8_t, kChannels>;

// Throws ValidationError if a point or box lies outside the image.
void validate_sample(const LabeledSample& sample);

// --- annotations (VIA region subset: point + rect) -------------------------

// Accepts either a full VIA project export ({"<key>": {"filename": ...,
// "regions": [...]}}) holding exactly one image entry, or a bare image entry
// ({"filename": ..., "regions": [...]}).
LabeledSample parse_annotations(std::string_view document, const RawImage& image);

// Writes a bare VIA image entry; parse_annotations(serialize_annotations(s))
// reproduces the point and box lists.
std::string serialize_annotations(const LabeledSample& sample);

// --- geometry --------------------------------------------------------------

// Crops the physical window (area_w_m x area_h_m metres) anchored at the
// top-left corner. Points use a closed lower / open upper bound; boxes are
// clipped and dropped when empty.
LabeledSample crop_to_area(const LabeledSample& sample, double area_w_m, double area_h_m);

// Half-pixel-centre bilinear resampling, rounded to nearest.
RawImage resize_image_bilinear(const RawImage& image, int target_h, int target_w);
LabeledSample resize_bilinear(const LabeledSample& sample, int target_h, int target_w);

// --- splits ----------------------------------------------------------------

struct SplitRatios {
  double train = 350.0;
  double val = 70.0;
  double test = 80.0;
};

struct DatasetSplit {
  std::vector<std::string> train;
  std::vector<std::string> val;
  std::vector<std::string> test;
  std::uint64_t seed = 0;
};

// Stratified shuffle split. strata (same length as ids, or empty) tags each id
// with a class; every class is spread over the partitions in proportion.
// Sizes: train = floor(n * r_train), val = floor(n * r_val), remainder to test.
DatasetSplit split_dataset(std::span<const std::string> ids, std::span<const int> strata,
                           SplitRatios ratios, std::uint64_t seed);

// --- dataset directory layout ----------------------------------------------
//   images/<id>.png  images/<id>.meta.json  annotations/<id>.json  splits/<seed>.json

void save_sample(const std::filesystem::path& root, const LabeledSample& sample);
LabeledSample load_sample(const std::filesystem::path& root, const std::string& id);
std::vector<std::string> list_sample_ids(const std::filesystem::path& root);
std::vector<LabeledSample> load_samples(const std::filesystem::path& root,
                                        std::span<const std::string> ids);

void save_split(const std::filesystem::path& root, const DatasetSplit& split);
DatasetSplit load_split(const std::filesystem::path& file);

std::string read_text_file(const std::filesystem::path& file);
void write_text_file(const std::filesystem::path& file, std::string_view text);

}  // namespace schoolcount
