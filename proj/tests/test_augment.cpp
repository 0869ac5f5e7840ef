#include <cmath>
#include <numbers>

#include "doctest.h"
#include "schoolcount/augment.hpp"
#include "schoolcount/error.hpp"
#include "schoolcount/synthgen.hpp"

using namespace schoolcount;

namespace {

const Background kBg{20, 20, 20};

LabeledSample synthetic(std::uint64_t index, double noise_rate = 0.5) {
  SynthSpec spec;
  spec.height = 64;
  spec.width = 128;
  spec.noise_rate = noise_rate;
  spec.seed = 77;
  return generate_sample(spec, index);
}

bool in_image(const Point& p, int w, int h) { return p.x >= 0 && p.x < w && p.y >= 0 && p.y < h; }

// Independent point maps for each geometric op.
std::vector<Point> expected_points(const LabeledSample& s, const AugmentOp& op) {
  const int W = s.image.width, H = s.image.height;
  std::vector<Point> out;
  for (const auto& p : s.points) {
    if (const auto* c = std::get_if<CropCompose>(&op)) {
      if (p.x >= c->x && p.x < c->x + c->w && p.y >= c->y && p.y < c->y + c->h)
        out.push_back({p.x - c->x + c->place_x, p.y - c->y + c->place_y});
    } else if (const auto* t = std::get_if<Translate>(&op)) {
      const Point q{p.x + t->dx, p.y + t->dy};
      if (in_image(q, W, H)) out.push_back(q);
    } else if (std::holds_alternative<HFlip>(op)) {
      out.push_back({std::max(0.0, W - 1 - p.x), p.y});
    } else if (const auto* r = std::get_if<RotateSmall>(&op)) {
      const double a = r->degrees * std::numbers::pi / 180, cx = (W - 1) / 2.0, cy = (H - 1) / 2.0;
      const Point q{cx + std::cos(a) * (p.x - cx) - std::sin(a) * (p.y - cy),
                    cy + std::sin(a) * (p.x - cx) + std::cos(a) * (p.y - cy)};
      if (in_image(q, W, H)) out.push_back(q);
    } else {
      out.push_back(p);
    }
  }
  return out;
}

}  // namespace

TEST_CASE("hflip is an involution") {
  const auto s = synthetic(1);
  const auto twice = apply(apply(s, HFlip{}, kBg), HFlip{}, kBg);
  CHECK(twice.image == s.image);
  CHECK(twice.points == s.points);
  CHECK(twice.noise == s.noise);
  CHECK(apply(s, HFlip{}, kBg).count() == s.count());
}

TEST_CASE("crop_compose keeps exactly the points inside") {
  LabeledSample s;
  s.image = RawImage(64, 128, 50);
  // 7 points inside [10, 50) x [5, 35), 8 outside
  s.points = {{10, 5}, {20, 10}, {49.9, 34.9}, {30, 20}, {11, 33}, {45, 6}, {25, 25},
              {9.9, 10}, {50, 10}, {20, 35}, {20, 4.9}, {100, 60}, {0, 0}, {127, 63}, {60, 30}};
  const CropCompose op{10, 5, 40, 30, 70, 20};
  const auto out = apply(s, op, kBg);
  CHECK(out.count() == 7);
  CHECK(out.points == expected_points(s, op));
  CHECK(out.image.at(0, 0, 0) == 20);
  CHECK(out.image.at(20, 70, 0) == 50);
  CHECK(out.image.height == 64);
  CHECK(out.image.width == 128);
}

TEST_CASE("every op moves points like its independent oracle") {
  std::vector<LabeledSample> pool;
  for (std::uint64_t i = 0; i < 12; ++i) pool.push_back(synthetic(i, 0.8));
  std::vector<const LabeledSample*> donors;
  for (const auto& s : pool)
    if (!s.noise.empty()) donors.push_back(&s);
  REQUIRE(!donors.empty());
  Rng rng(4);
  for (int trial = 0; trial < 100; ++trial) {
    const auto& s = pool[trial % pool.size()];
    const auto kind = static_cast<AugmentKind>(trial % kAugmentKinds);
    AugmentOp op;
    try {
      op = sample_op(kind, s, donors, rng);
    } catch (const ValidationError&) {
      continue;
    }
    const auto out = apply(s, op, kBg);
    CHECK(out.image.height == s.image.height);
    CHECK(out.image.width == s.image.width);
    const auto expect = expected_points(s, op);
    REQUIRE(out.points.size() == expect.size());
    for (std::size_t i = 0; i < expect.size(); ++i) {
      CHECK(out.points[i].x == doctest::Approx(expect[i].x).epsilon(1e-12));
      CHECK(out.points[i].y == doctest::Approx(expect[i].y).epsilon(1e-12));
    }
    validate_sample(out);
    if (kind == AugmentKind::superimpose_noise) CHECK(out.noise.size() == s.noise.size() + 1);
  }
}

TEST_CASE("invalid parameters name the op") {
  const auto s = synthetic(2);
  try {
    apply(s, RotateSmall{15.0}, kBg);
    FAIL("expected ValidationError");
  } catch (const ValidationError& e) {
    CHECK(std::string(e.what()).find("rotate_small") != std::string::npos);
  }
  CHECK_THROWS_AS(apply(s, CropCompose{0, 0, 200, 10, 0, 0}, kBg), ValidationError);
  CHECK_THROWS_AS(apply(s, Translate{128, 0}, kBg), ValidationError);
}

TEST_CASE("augment_dataset") {
  std::vector<LabeledSample> train;
  for (std::uint64_t i = 0; i < 10; ++i) train.push_back(synthetic(i));
  const auto bg = background_median(train);

  SUBCASE("target equal to input returns the originals") {
    const auto out = augment_dataset(train, train.size(), 1, bg);
    REQUIRE(out.size() == train.size());
    for (std::size_t i = 0; i < out.size(); ++i) CHECK(out[i].image == train[i].image);
  }
  SUBCASE("expansion keeps originals first and is deterministic") {
    const auto a = augment_dataset(train, 57, 3, bg);
    const auto b = augment_dataset(train, 57, 3, bg);
    REQUIRE(a.size() == 57);
    for (std::size_t i = 0; i < train.size(); ++i) {
      CHECK(a[i].image == train[i].image);
      CHECK(a[i].points == train[i].points);
    }
    for (std::size_t i = 0; i < a.size(); ++i) {
      CHECK(a[i].image == b[i].image);
      CHECK(a[i].points == b[i].points);
      validate_sample(a[i]);
      CHECK(a[i].image.height == 64);
    }
  }
  SUBCASE("target below input size") { CHECK_THROWS_AS(augment_dataset(train, 5, 1, bg), ValidationError); }
}

TEST_CASE("background median") {
  std::vector<LabeledSample> v(1);
  v[0].image = RawImage(10, 10, 33);
  const auto bg = background_median(v);
  CHECK(bg[0] == 33);
  CHECK(bg[2] == 33);
}
