#pragma once

#include <cstdint>
#include <span>
#include <string_view>
#include <variant>
#include <vector>

#include "schoolcount/imagedata.hpp"
#include "schoolcount/rng.hpp"

namespace schoolcount {

// Copy the rectangle [x, x+w) x [y, y+h) onto a blank canvas at (place_x, place_y).
struct CropCompose {
  int x = 0, y = 0, w = 1, h = 1;
  int place_x = 0, place_y = 0;
};

struct Translate {
  int dx = 0, dy = 0;
};

struct HFlip {};

// Rotation about the image centre; |degrees| <= kMaxRotationDegrees.
struct RotateSmall {
  double degrees = 0.0;
};

// Paste noise box `box` of `donor` with its top-left corner at (place_x, place_y).
// Donor fish inside the box are erased before pasting; the target keeps its
// own annotations and gains one noise box.
struct SuperimposeNoise {
  const LabeledSample* donor = nullptr;
  std::size_t box = 0;
  int place_x = 0, place_y = 0;
};

using AugmentOp = std::variant<CropCompose, Translate, HFlip, RotateSmall, SuperimposeNoise>;

enum class AugmentKind { crop_compose, translate, hflip, rotate_small, superimpose_noise };
inline constexpr int kAugmentKinds = 5;
inline constexpr double kMaxRotationDegrees = 10.0;

std::string_view to_string(AugmentKind kind);
AugmentKind kind_of(const AugmentOp& op);

// Applies op; pixels and annotations pass through the same geometric map.
// Image dimensions never change. Throws ValidationError naming the op when
// its parameters do not fit the sample.
LabeledSample apply(const LabeledSample& sample, const AugmentOp& op, const Background& background);

// Draws random parameters for `kind`. `donors` supplies samples with noise
// boxes for superimpose_noise.
AugmentOp sample_op(AugmentKind kind, const LabeledSample& sample,
                    std::span<const LabeledSample* const> donors, Rng& rng);

// Per-channel median of (a subsample of) the training pixels.
Background background_median(std::span<const LabeledSample> samples);

// Originals first (unmodified), then target_n - |train| augmented samples.
// Output index i draws its source, kind and parameters from
// derive_seed(seed, "augment", i), so the result is independent of thread
// count and evaluation order.
std::vector<LabeledSample> augment_dataset(std::span<const LabeledSample> train, std::size_t target_n,
                                           std::uint64_t seed, const Background& background);

}  // namespace schoolcount
