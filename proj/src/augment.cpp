#include "schoolcount/augment.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <numbers>

#include "schoolcount/error.hpp"

namespace schoolcount {

std::string_view to_string(AugmentKind kind) {
  switch (kind) {
    case AugmentKind::crop_compose: return "crop_compose";
    case AugmentKind::translate: return "translate";
    case AugmentKind::hflip: return "hflip";
    case AugmentKind::rotate_small: return "rotate_small";
    case AugmentKind::superimpose_noise: return "superimpose_noise";
  }
  return "unknown";
}

AugmentKind kind_of(const AugmentOp& op) { return static_cast<AugmentKind>(op.index()); }

namespace {

[[noreturn]] void invalid(AugmentKind kind, const std::string& why) {
  throw ValidationError("augment", std::string(to_string(kind)) + ": " + why);
}

RawImage blank_like(const RawImage& img, const Background& bg) {
  RawImage out(img.height, img.width);
  out.meters_per_pixel = img.meters_per_pixel;
  out.source_id = img.source_id;
  for (std::size_t i = 0; i < out.pixels.size(); i += kChannels) {
    for (int c = 0; c < kChannels; ++c) out.pixels[i + c] = bg[c];
  }
  return out;
}

bool inside(const Point& p, double x0, double y0, double x1, double y1) {
  return p.x >= x0 && p.x < x1 && p.y >= y0 && p.y < y1;
}

// Clip box to [0, w] x [0, h]; false if nothing is left.
bool clip_box(NoiseBox& b, double w, double h) {
  b.x0 = std::max(b.x0, 0.0);
  b.y0 = std::max(b.y0, 0.0);
  b.x1 = std::min(b.x1, w);
  b.y1 = std::min(b.y1, h);
  return b.x0 < b.x1 && b.y0 < b.y1;
}

LabeledSample start_from(const LabeledSample& sample, const Background& bg) {
  LabeledSample out;
  out.id = sample.id;
  out.image = blank_like(sample.image, bg);
  return out;
}

LabeledSample apply_crop(const LabeledSample& s, const CropCompose& op, const Background& bg) {
  const int W = s.image.width, H = s.image.height;
  if (op.w < 1 || op.h < 1 || op.x < 0 || op.y < 0 || op.x + op.w > W || op.y + op.h > H) {
    invalid(AugmentKind::crop_compose, "crop rectangle outside the image");
  }
  if (op.place_x < 0 || op.place_y < 0 || op.place_x + op.w > W || op.place_y + op.h > H) {
    invalid(AugmentKind::crop_compose, "placement does not fit the canvas");
  }
  LabeledSample out = start_from(s, bg);
  for (int y = 0; y < op.h; ++y) {
    const auto* src = &s.image.pixels[s.image.index(op.y + y, op.x)];
    std::copy(src, src + static_cast<std::size_t>(op.w) * kChannels,
              &out.image.pixels[out.image.index(op.place_y + y, op.place_x)]);
  }
  const double dx = op.place_x - op.x, dy = op.place_y - op.y;
  for (const auto& p : s.points) {
    if (inside(p, op.x, op.y, op.x + op.w, op.y + op.h)) out.points.push_back({p.x + dx, p.y + dy});
  }
  for (auto b : s.noise) {
    b.x0 = std::max(b.x0, static_cast<double>(op.x)) + dx;
    b.y0 = std::max(b.y0, static_cast<double>(op.y)) + dy;
    b.x1 = std::min(b.x1, static_cast<double>(op.x + op.w)) + dx;
    b.y1 = std::min(b.y1, static_cast<double>(op.y + op.h)) + dy;
    if (clip_box(b, W, H)) out.noise.push_back(b);
  }
  return out;
}

LabeledSample apply_translate(const LabeledSample& s, const Translate& op, const Background& bg) {
  const int W = s.image.width, H = s.image.height;
  if (std::abs(op.dx) >= W || std::abs(op.dy) >= H) invalid(AugmentKind::translate, "offset exceeds image size");
  LabeledSample out = start_from(s, bg);
  for (int y = 0; y < H; ++y) {
    const int sy = y - op.dy;
    if (sy < 0 || sy >= H) continue;
    for (int x = 0; x < W; ++x) {
      const int sx = x - op.dx;
      if (sx < 0 || sx >= W) continue;
      for (int c = 0; c < kChannels; ++c) out.image.at(y, x, c) = s.image.at(sy, sx, c);
    }
  }
  for (const auto& p : s.points) {
    const Point q{p.x + op.dx, p.y + op.dy};
    if (inside(q, 0, 0, W, H)) out.points.push_back(q);
  }
  for (auto b : s.noise) {
    b.x0 += op.dx;
    b.x1 += op.dx;
    b.y0 += op.dy;
    b.y1 += op.dy;
    if (clip_box(b, W, H)) out.noise.push_back(b);
  }
  return out;
}

LabeledSample apply_hflip(const LabeledSample& s) {
  const int W = s.image.width, H = s.image.height;
  LabeledSample out;
  out.id = s.id;
  out.image = s.image;
  for (int y = 0; y < H; ++y) {
    for (int x = 0; x < W; ++x) {
      for (int c = 0; c < kChannels; ++c) out.image.at(y, x, c) = s.image.at(y, W - 1 - x, c);
    }
  }
  for (const auto& p : s.points) {
    // Points in (W-1, W) mirror to just below zero; they land on column 0.
    out.points.push_back({std::max(0.0, (W - 1) - p.x), p.y});
  }
  for (auto b : s.noise) {
    const double x0 = W - b.x1, x1 = W - b.x0;
    b.x0 = x0;
    b.x1 = x1;
    out.noise.push_back(b);
  }
  return out;
}

double sample_channel(const RawImage& img, double fx, double fy, int c, std::uint8_t fill) {
  const int x0 = static_cast<int>(std::floor(fx));
  const int y0 = static_cast<int>(std::floor(fy));
  const double wx = fx - x0, wy = fy - y0;
  auto px = [&](int x, int y) -> double {
    if (x < 0 || y < 0 || x >= img.width || y >= img.height) return fill;
    return img.at(y, x, c);
  };
  const double top = px(x0, y0) * (1 - wx) + px(x0 + 1, y0) * wx;
  const double bottom = px(x0, y0 + 1) * (1 - wx) + px(x0 + 1, y0 + 1) * wx;
  return top * (1 - wy) + bottom * wy;
}

LabeledSample apply_rotate(const LabeledSample& s, const RotateSmall& op, const Background& bg) {
  if (!(std::abs(op.degrees) <= kMaxRotationDegrees)) {
    invalid(AugmentKind::rotate_small, "angle exceeds +/-10 degrees");
  }
  const int W = s.image.width, H = s.image.height;
  const double theta = op.degrees * std::numbers::pi / 180.0;
  const double ct = std::cos(theta), st = std::sin(theta);
  const double cx = (W - 1) / 2.0, cy = (H - 1) / 2.0;
  LabeledSample out = start_from(s, bg);
  for (int y = 0; y < H; ++y) {
    for (int x = 0; x < W; ++x) {
      // inverse map: destination -> source
      const double dx = x - cx, dy = y - cy;
      const double sx = cx + ct * dx + st * dy;
      const double sy = cy - st * dx + ct * dy;
      if (sx <= -1.0 || sy <= -1.0 || sx >= W || sy >= H) continue;
      for (int c = 0; c < kChannels; ++c) {
        const double v = sample_channel(s.image, sx, sy, c, bg[c]);
        out.image.at(y, x, c) = static_cast<std::uint8_t>(std::clamp(std::floor(v + 0.5), 0.0, 255.0));
      }
    }
  }
  for (const auto& p : s.points) {
    const double dx = p.x - cx, dy = p.y - cy;
    const Point q{cx + ct * dx - st * dy, cy + st * dx + ct * dy};
    if (inside(q, 0, 0, W, H)) out.points.push_back(q);
  }
  // boxes live in edge coordinates, centre (W/2, H/2)
  const double ex = W / 2.0, ey = H / 2.0;
  for (const auto& b : s.noise) {
    const std::array<Point, 4> corners{{{b.x0, b.y0}, {b.x1, b.y0}, {b.x0, b.y1}, {b.x1, b.y1}}};
    NoiseBox r{1e300, 1e300, -1e300, -1e300, b.kind};
    for (const auto& c : corners) {
      const double dx = c.x - ex, dy = c.y - ey;
      const double qx = ex + ct * dx - st * dy, qy = ey + st * dx + ct * dy;
      r.x0 = std::min(r.x0, qx);
      r.y0 = std::min(r.y0, qy);
      r.x1 = std::max(r.x1, qx);
      r.y1 = std::max(r.y1, qy);
    }
    if (clip_box(r, W, H)) out.noise.push_back(r);
  }
  return out;
}

LabeledSample apply_superimpose(const LabeledSample& s, const SuperimposeNoise& op, const Background& bg) {
  if (op.donor == nullptr || op.box >= op.donor->noise.size()) {
    invalid(AugmentKind::superimpose_noise, "donor has no such noise box");
  }
  const LabeledSample& donor = *op.donor;
  const NoiseBox& src = donor.noise[op.box];
  const int bx0 = static_cast<int>(std::floor(src.x0)), by0 = static_cast<int>(std::floor(src.y0));
  const int bx1 = std::min(donor.image.width, static_cast<int>(std::ceil(src.x1)));
  const int by1 = std::min(donor.image.height, static_cast<int>(std::ceil(src.y1)));
  const int bw = bx1 - bx0, bh = by1 - by0;
  const int W = s.image.width, H = s.image.height;
  if (bw < 1 || bh < 1) invalid(AugmentKind::superimpose_noise, "empty donor box");
  if (op.place_x < 0 || op.place_y < 0 || op.place_x + bw > W || op.place_y + bh > H) {
    invalid(AugmentKind::superimpose_noise, "pasted region does not fit the target image");
  }

  RawImage patch(bh, bw);
  for (int y = 0; y < bh; ++y) {
    for (int x = 0; x < bw; ++x) {
      for (int c = 0; c < kChannels; ++c) patch.at(y, x, c) = donor.image.at(by0 + y, bx0 + x, c);
    }
  }
  // erase donor fish so no unlabelled fish travel with the noise
  const int radius = static_cast<int>(std::ceil(6.0 * donor.image.width / 576.0)) + 1;
  for (const auto& p : donor.points) {
    const int px = static_cast<int>(std::lround(p.x)) - bx0;
    const int py = static_cast<int>(std::lround(p.y)) - by0;
    for (int y = std::max(0, py - radius); y <= std::min(bh - 1, py + radius); ++y) {
      for (int x = std::max(0, px - radius); x <= std::min(bw - 1, px + radius); ++x) {
        for (int c = 0; c < kChannels; ++c) patch.at(y, x, c) = bg[c];
      }
    }
  }

  LabeledSample out = s;
  for (int y = 0; y < bh; ++y) {
    for (int x = 0; x < bw; ++x) {
      for (int c = 0; c < kChannels; ++c) {
        auto& dst = out.image.at(op.place_y + y, op.place_x + x, c);
        dst = std::max(dst, patch.at(y, x, c));
      }
    }
  }
  NoiseBox pasted{static_cast<double>(op.place_x), static_cast<double>(op.place_y),
                  static_cast<double>(op.place_x + bw), static_cast<double>(op.place_y + bh), src.kind};
  out.noise.push_back(pasted);
  return out;
}

}  // namespace

LabeledSample apply(const LabeledSample& sample, const AugmentOp& op, const Background& background) {
  return std::visit(
      [&](const auto& o) -> LabeledSample {
        using T = std::decay_t<decltype(o)>;
        if constexpr (std::is_same_v<T, CropCompose>) return apply_crop(sample, o, background);
        if constexpr (std::is_same_v<T, Translate>) return apply_translate(sample, o, background);
        if constexpr (std::is_same_v<T, HFlip>) return apply_hflip(sample);
        if constexpr (std::is_same_v<T, RotateSmall>) return apply_rotate(sample, o, background);
        if constexpr (std::is_same_v<T, SuperimposeNoise>) return apply_superimpose(sample, o, background);
      },
      op);
}

AugmentOp sample_op(AugmentKind kind, const LabeledSample& sample,
                    std::span<const LabeledSample* const> donors, Rng& rng) {
  const int W = sample.image.width, H = sample.image.height;
  switch (kind) {
    case AugmentKind::crop_compose: {
      CropCompose op;
      op.w = static_cast<int>(rng.range(std::max(1, W / 4), W));
      op.h = static_cast<int>(rng.range(std::max(1, H / 4), H));
      op.x = static_cast<int>(rng.range(0, W - op.w));
      op.y = static_cast<int>(rng.range(0, H - op.h));
      op.place_x = static_cast<int>(rng.range(0, W - op.w));
      op.place_y = static_cast<int>(rng.range(0, H - op.h));
      return op;
    }
    case AugmentKind::translate: {
      Translate op;
      op.dx = static_cast<int>(rng.range(-(W / 4), W / 4));
      op.dy = static_cast<int>(rng.range(-(H / 4), H / 4));
      return op;
    }
    case AugmentKind::hflip:
      return HFlip{};
    case AugmentKind::rotate_small:
      return RotateSmall{rng.uniform(-kMaxRotationDegrees, kMaxRotationDegrees)};
    case AugmentKind::superimpose_noise: {
      if (donors.empty()) invalid(kind, "no donor samples with noise boxes");
      SuperimposeNoise op;
      op.donor = donors[rng.below(donors.size())];
      op.box = rng.below(op.donor->noise.size());
      const NoiseBox& b = op.donor->noise[op.box];
      const int bw = static_cast<int>(std::ceil(b.x1)) - static_cast<int>(std::floor(b.x0));
      const int bh = static_cast<int>(std::ceil(b.y1)) - static_cast<int>(std::floor(b.y0));
      if (bw > W || bh > H) invalid(kind, "donor box larger than target");
      op.place_x = static_cast<int>(rng.range(0, W - bw));
      op.place_y = static_cast<int>(rng.range(0, H - bh));
      return op;
    }
  }
  invalid(kind, "unknown kind");
}

Background background_median(std::span<const LabeledSample> samples) {
  std::array<std::array<std::uint64_t, 256>, kChannels> hist{};
  std::uint64_t n = 0;
  for (const auto& s : samples) {
    const auto& px = s.image.pixels;
    for (std::size_t i = 0; i + kChannels <= px.size(); i += 7 * kChannels) {
      for (int c = 0; c < kChannels; ++c) ++hist[c][px[i + c]];
      ++n;
    }
  }
  Background bg{0, 0, 0};
  if (n == 0) return bg;
  for (int c = 0; c < kChannels; ++c) {
    std::uint64_t acc = 0;
    for (int v = 0; v < 256; ++v) {
      acc += hist[c][v];
      if (2 * acc >= n) {
        bg[c] = static_cast<std::uint8_t>(v);
        break;
      }
    }
  }
  return bg;
}

std::vector<LabeledSample> augment_dataset(std::span<const LabeledSample> train, std::size_t target_n,
                                           std::uint64_t seed, const Background& background) {
  const std::size_t n = train.size();
  if (target_n < n) {
    throw ValidationError("augment", "target size " + std::to_string(target_n) + " is below the " +
                                         std::to_string(n) + " originals");
  }
  if (n == 0 && target_n > 0) throw ValidationError("augment", "cannot augment an empty training set");

  std::vector<const LabeledSample*> donors;
  for (const auto& s : train) {
    if (!s.noise.empty()) donors.push_back(&s);
  }

  std::vector<LabeledSample> out(target_n);
  for (std::size_t i = 0; i < n; ++i) out[i] = train[i];
  const auto total = static_cast<long long>(target_n);
#pragma omp parallel for schedule(dynamic)
  for (long long i = static_cast<long long>(n); i < total; ++i) {
    Rng rng(derive_seed(seed, "augment", static_cast<std::uint64_t>(i)));
    const LabeledSample& src = train[rng.below(n)];
    const int kinds = donors.empty() ? kAugmentKinds - 1 : kAugmentKinds;
    const auto kind = static_cast<AugmentKind>(rng.below(static_cast<std::uint64_t>(kinds)));
    AugmentOp op = HFlip{};
    try {
      op = sample_op(kind, src, donors, rng);
    } catch (const ValidationError&) {
      // donor box does not fit this target; keep the draw sequence and flip instead
    }
    LabeledSample aug = apply(src, op, background);
    aug.id = src.id + "_a" + std::to_string(i);
    aug.image.source_id = aug.id;
    out[static_cast<std::size_t>(i)] = std::move(aug);
  }
  return out;
}

}  // namespace schoolcount
