#include <cmath>
#include <filesystem>
#include <set>

#include "doctest.h"
#include "schoolcount/error.hpp"
#include "schoolcount/imagedata.hpp"
#include "schoolcount/rng.hpp"

using namespace schoolcount;

namespace {

RawImage gradient_image(int h, int w) {
  RawImage im(h, w);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x)
      for (int c = 0; c < 3; ++c) im.at(y, x, c) = static_cast<std::uint8_t>((x * 7 + y * 3 + c * 50) % 256);
  return im;
}

std::string point_region(double x, double y) {
  return R"({"shape_attributes":{"name":"point","cx":)" + std::to_string(x) + R"(,"cy":)" + std::to_string(y) +
         R"(},"region_attributes":{}})";
}

}  // namespace

TEST_CASE("parse three points") {
  const RawImage im(100, 100);
  const std::string doc = R"({"filename":"a.png","size":0,"regions":[)" + point_region(1, 2) + "," +
                          point_region(3, 4) + "," + point_region(5, 6) + "]}";
  const auto s = parse_annotations(doc, im);
  CHECK(s.count() == 3);
  CHECK(s.noise.empty());
  CHECK(s.points[1] == Point{3, 4});
}

TEST_CASE("parse empty region list") {
  const auto s = parse_annotations(R"({"filename":"a.png","regions":[]})", RawImage(10, 10));
  CHECK(s.count() == 0);
  CHECK(s.noise.empty());
}

TEST_CASE("parse point and rect") {
  const std::string doc = R"({"img.png123":{"filename":"img.png","size":123,"regions":[
    {"shape_attributes":{"name":"point","cx":10.5,"cy":20.0},"region_attributes":{}},
    {"shape_attributes":{"name":"rect","x":0,"y":0,"width":50,"height":50},"region_attributes":{"noise":"dolphin"}}
  ]}})";
  const auto s = parse_annotations(doc, RawImage(64, 64));
  REQUIRE(s.count() == 1);
  CHECK(s.points[0] == Point{10.5, 20.0});
  REQUIRE(s.noise.size() == 1);
  CHECK(s.noise[0].x0 == 0.0);
  CHECK(s.noise[0].y0 == 0.0);
  CHECK(s.noise[0].x1 == 50.0);
  CHECK(s.noise[0].y1 == 50.0);
  CHECK(s.noise[0].kind == NoiseKind::dolphin);
}

TEST_CASE("parse errors") {
  const RawImage im(10, 10);
  SUBCASE("malformed json reports byte offset") {
    try {
      parse_annotations(R"({"filename": "a.png", "regions": [ )", im);
      FAIL("expected ParseError");
    } catch (const ParseError& e) {
      CHECK(e.byte_offset() > 0);
    }
  }
  SUBCASE("out of bounds names the region") {
    const std::string doc = R"({"filename":"a","regions":[)" + point_region(1, 1) + "," + point_region(10, 3) + "]}";
    try {
      parse_annotations(doc, im);
      FAIL("expected ValidationError");
    } catch (const ValidationError& e) {
      CHECK(std::string(e.what()).find("region 1") != std::string::npos);
    }
  }
  SUBCASE("unsupported shape") {
    const std::string doc =
        R"({"filename":"a","regions":[{"shape_attributes":{"name":"polygon","all_points_x":[1],"all_points_y":[1]}}]})";
    CHECK_THROWS_AS(parse_annotations(doc, im), ValidationError);
  }
}

TEST_CASE("annotation roundtrip") {
  LabeledSample s;
  s.id = "x";
  s.image = RawImage(40, 60);
  s.points = {{1.25, 2.5}, {59.0, 39.5}, {0, 0}};
  s.noise = {{1, 2, 30, 20, NoiseKind::net}, {0, 0, 60, 40, NoiseKind::other}};
  const auto back = parse_annotations(serialize_annotations(s), s.image);
  CHECK(back.points == s.points);
  CHECK(back.noise == s.noise);
  const auto again = parse_annotations(serialize_annotations(back), s.image);
  CHECK(again.points == s.points);
}

TEST_CASE("crop to physical window") {
  LabeledSample s;
  s.image = RawImage(400, 800);
  s.image.meters_per_pixel = 0.0125;
  s.points = {{10, 10}, {679.9, 319.9}, {680, 10}, {10, 320}, {700, 390}};
  const auto c = crop_to_area(s, 8.5, 4.0);
  CHECK(c.image.height == 320);
  CHECK(c.image.width == 680);
  CHECK(c.count() == 2);

  SUBCASE("full image is identity") {
    const auto full = crop_to_area(s, 800 * 0.0125, 400 * 0.0125);
    CHECK(full.image == s.image);
    CHECK(full.points == s.points);
  }
  SUBCASE("too large reports the extent") {
    try {
      crop_to_area(s, 20.0, 4.0);
      FAIL("expected ValidationError");
    } catch (const ValidationError& e) {
      CHECK(std::string(e.what()).find("10") != std::string::npos);
    }
  }
}

TEST_CASE("crop count matches brute force") {
  Rng rng(11);
  for (int trial = 0; trial < 50; ++trial) {
    LabeledSample s;
    s.image = RawImage(64, 96);
    s.image.meters_per_pixel = 0.1;
    for (int i = 0; i < 40; ++i) s.points.push_back({rng.uniform(0, 96), rng.uniform(0, 64)});
    const double aw = rng.uniform(0.5, 9.6), ah = rng.uniform(0.5, 6.4);
    const auto c = crop_to_area(s, aw, ah);
    std::size_t expect = 0;
    for (const auto& p : s.points) expect += (p.x < c.image.width && p.y < c.image.height);
    CHECK(c.count() == expect);
  }
}

namespace {

// Independent scalar resampler: half-pixel centres, clamp at the border.
double reference_bilinear(const RawImage& im, int th, int tw, int y, int x, int c) {
  const double fy = (y + 0.5) * im.height / th - 0.5;
  const double fx = (x + 0.5) * im.width / tw - 0.5;
  auto clampi = [](int v, int hi) { return v < 0 ? 0 : (v > hi ? hi : v); };
  const int y0 = static_cast<int>(std::floor(fy)), x0 = static_cast<int>(std::floor(fx));
  const double wy = fy - y0, wx = fx - x0;
  double v = 0;
  for (int dy = 0; dy < 2; ++dy)
    for (int dx = 0; dx < 2; ++dx)
      v += (dy ? wy : 1 - wy) * (dx ? wx : 1 - wx) *
           im.at(clampi(y0 + dy, im.height - 1), clampi(x0 + dx, im.width - 1), c);
  return v;
}

}  // namespace

TEST_CASE("bilinear resize") {
  SUBCASE("same size is identity") {
    const auto im = gradient_image(17, 23);
    CHECK(resize_image_bilinear(im, 17, 23) == im);
  }
  SUBCASE("constant stays constant") {
    const RawImage im(13, 29, 77);
    const auto r = resize_image_bilinear(im, 5, 41);
    for (auto v : r.pixels) CHECK(v == 77);
  }
  SUBCASE("checker 4x4 to 2x2") {
    RawImage im(4, 4);
    for (int y = 0; y < 4; ++y)
      for (int x = 0; x < 4; ++x)
        for (int c = 0; c < 3; ++c) im.at(y, x, c) = ((x + y) % 2) ? 255 : 0;
    const auto r = resize_image_bilinear(im, 2, 2);
    for (int y = 0; y < 2; ++y)
      for (int x = 0; x < 2; ++x)
        for (int c = 0; c < 3; ++c) {
          const double ref = reference_bilinear(im, 2, 2, y, x, c);
          CHECK(r.at(y, x, c) == static_cast<int>(std::floor(ref + 0.5)));
          CHECK(r.at(y, x, c) == 128);
        }
  }
  SUBCASE("arbitrary sizes match the scalar reference") {
    const auto im = gradient_image(19, 31);
    const auto r = resize_image_bilinear(im, 11, 47);
    for (int y = 0; y < 11; ++y)
      for (int x = 0; x < 47; ++x)
        for (int c = 0; c < 3; ++c) CHECK(r.at(y, x, c) == static_cast<int>(std::floor(reference_bilinear(im, 11, 47, y, x, c) + 0.5)));
  }
  SUBCASE("points scale, count preserved") {
    LabeledSample s;
    s.image = RawImage(320, 680);
    s.points = {{0, 0}, {679.5, 319.5}, {340, 160}};
    for (auto [h, w] : {std::pair{320, 576}, std::pair{1, 1}, std::pair{7, 1000}}) {
      const auto r = resize_bilinear(s, h, w);
      CHECK(r.count() == 3);
      CHECK(r.points[2].x == doctest::Approx(340.0 * w / 680));
      validate_sample(r);
    }
  }
}

TEST_CASE("dataset split") {
  std::vector<std::string> ids;
  std::vector<int> strata;
  for (int i = 0; i < 500; ++i) {
    ids.push_back("id" + std::to_string(i));
    strata.push_back(i % 10 < 7 ? 1 : (i % 10 < 9 ? 2 : 3));
  }
  const auto s = split_dataset(ids, strata, {}, 42);
  CHECK(s.train.size() == 350);
  CHECK(s.val.size() == 70);
  CHECK(s.test.size() == 80);
  CHECK(split_dataset(ids, strata, {}, 42).train == s.train);
  CHECK(split_dataset(ids, strata, {}, 43).train != s.train);

  // class shares in train and test agree
  auto share = [&](const std::vector<std::string>& part, int cls) {
    int n = 0;
    for (const auto& id : part) n += strata[std::stoi(id.substr(2))] == cls;
    return static_cast<double>(n) / static_cast<double>(part.size());
  };
  for (int cls = 1; cls <= 3; ++cls) CHECK(std::abs(share(s.train, cls) - share(s.test, cls)) <= 0.03);

  SUBCASE("rounding rule") {
    const std::vector<std::string> ten(ids.begin(), ids.begin() + 10);
    const auto t = split_dataset(ten, {}, {0.7, 0.15, 0.15}, 1);
    CHECK(t.train.size() == 7);
    CHECK(t.val.size() == 1);
    CHECK(t.test.size() == 2);
  }
  SUBCASE("too few") { CHECK_THROWS_AS(split_dataset(std::span(ids).first(2), {}, {}, 1), ValidationError); }
}

TEST_CASE("split is a disjoint cover for random inputs") {
  Rng rng(5);
  for (int trial = 0; trial < 40; ++trial) {
    const int n = static_cast<int>(rng.range(10, 300));
    std::vector<std::string> ids;
    std::vector<int> strata;
    for (int i = 0; i < n; ++i) {
      ids.push_back("s" + std::to_string(rng.next() % 100000) + "_" + std::to_string(i));
      strata.push_back(static_cast<int>(rng.range(1, 3)));
    }
    const auto s = split_dataset(ids, strata, {}, rng.next());
    std::set<std::string> all;
    for (const auto* part : {&s.train, &s.val, &s.test}) all.insert(part->begin(), part->end());
    CHECK(all.size() == ids.size());
    CHECK(s.train.size() + s.val.size() + s.test.size() == ids.size());
  }
}

TEST_CASE("sample directory roundtrip") {
  const auto root = std::filesystem::temp_directory_path() / "schoolcount_test_imagedata";
  std::filesystem::remove_all(root);
  LabeledSample s;
  s.id = "s000001";
  s.image = gradient_image(32, 48);
  s.image.meters_per_pixel = 0.0125;
  s.image.source_id = "synthetic";
  s.points = {{3.5, 4.25}};
  s.noise = {{0, 0, 10, 10, NoiseKind::net}};
  save_sample(root, s);
  const auto back = load_sample(root, s.id);
  CHECK(back.image == s.image);
  CHECK(back.points == s.points);
  CHECK(back.noise == s.noise);
  CHECK(list_sample_ids(root) == std::vector<std::string>{s.id});

  DatasetSplit sp{{"a"}, {"b"}, {"c"}, 9};
  save_split(root, sp);
  const auto sp2 = load_split(root / "splits" / "9.json");
  CHECK(sp2.train == sp.train);
  CHECK(sp2.test == sp.test);
  std::filesystem::remove_all(root);
}
