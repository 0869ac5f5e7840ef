#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "schoolcount/imagedata.hpp"
#include "schoolcount/synthgen.hpp"

namespace schoolcount {

inline constexpr std::array<double, 3> kCropFactors{0.25, 0.5, 0.75};
inline constexpr int kSubregionsPerImage = 4;
inline constexpr int kPairsPerImage = 6;  // C(4, 2)

// Where a subregion came from. factor 0 is the untouched source image.
// The crop keeps [crop_x0, crop_x1) x [crop_y0, crop_y1) of the source, i.e.
// it removes factor*h rows from the top and factor*w columns from the right,
// then is (optionally mirrored and) placed with its top-left at (offset_x, offset_y).
struct CropPlacement {
  double factor = 0.0;
  int crop_x0 = 0, crop_y0 = 0, crop_x1 = 0, crop_y1 = 0;
  int offset_x = 0, offset_y = 0;
  bool flipped = false;
};

struct Subregion {
  RawImage image;
  CropPlacement placement;
  std::vector<Point> points;  // source points mapped into this subregion (test-only truth)
};

using SubregionList = std::array<Subregion, kSubregionsPerImage>;

// S = [I, I_0.25, I_0.5, I_0.75]. Translation and flip are drawn once per
// subregion from `seed`. `hidden` may be empty.
SubregionList subregions(const RawImage& image, std::span<const Point> hidden, std::uint64_t seed,
                         const Background& background);

// Ordered pair (S[first], S[second]) of one source, first < second, so the
// second image never holds more fish than the first.
struct RankedPair {
  std::size_t source = 0;
  int first = 0;
  int second = 0;
};

struct PairSet {
  std::vector<std::string> source_ids;
  std::vector<SubregionList> sources;
  std::vector<RankedPair> pairs;

  const Subregion& first(std::size_t i) const { return sources[pairs[i].source][pairs[i].first]; }
  const Subregion& second(std::size_t i) const { return sources[pairs[i].source][pairs[i].second]; }
  std::size_t size() const { return pairs.size(); }
};

// All 6 ordered combinations per source, then a seeded subsample of n_pairs
// (kept in (source, first, second) order). n_pairs must not exceed 6*|U|.
PairSet generate_pairs(std::span<const UnlabelledImage> unlabelled, std::size_t n_pairs, std::uint64_t seed,
                       const Background& background);

// <dir>/images/<source>_s<k>.png for every subregion and <dir>/pairs.json
// listing placements, pairs and image paths. Hidden subregion points, when
// known, are kept in pairs.json for checking; training never reads them.
void save_pair_set(const std::filesystem::path& dir, const PairSet& set);
PairSet load_pair_set(const std::filesystem::path& dir);

}  // namespace schoolcount
