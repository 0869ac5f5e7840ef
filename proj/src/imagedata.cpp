#include "schoolcount/imagedata.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <sstream>

#include "json.hpp"

#include "schoolcount/error.hpp"
#include "schoolcount/png_io.hpp"
#include "schoolcount/rng.hpp"

namespace schoolcount {

using nlohmann::json;

std::string_view to_string(NoiseKind kind) {
  switch (kind) {
    case NoiseKind::dolphin: return "dolphin";
    case NoiseKind::net: return "net";
    case NoiseKind::other: return "other";
  }
  return "other";
}

NoiseKind noise_kind_from_string(std::string_view text) {
  if (text == "dolphin") return NoiseKind::dolphin;
  if (text == "net") return NoiseKind::net;
  return NoiseKind::other;
}

namespace {

bool point_inside(const Point& p, int w, int h) {
  return p.x >= 0.0 && p.x < w && p.y >= 0.0 && p.y < h;
}

bool box_inside(const NoiseBox& b, int w, int h) {
  return b.x0 >= 0.0 && b.y0 >= 0.0 && b.x1 <= w && b.y1 <= h && b.x0 < b.x1 && b.y0 < b.y1;
}

double number_field(const json& obj, const char* key, std::size_t region) {
  auto it = obj.find(key);
  if (it == obj.end() || !it->is_number()) {
    throw ValidationError("imagedata", "region " + std::to_string(region) +
                                           ": missing numeric field '" + key + "'");
  }
  return it->get<double>();
}

const json& image_entry(const json& doc) {
  if (!doc.is_object()) throw ValidationError("imagedata", "annotation document must be a JSON object");
  if (doc.contains("regions")) return doc;
  if (doc.size() != 1) {
    throw ValidationError("imagedata", "VIA export must hold exactly one image entry, found " +
                                           std::to_string(doc.size()));
  }
  const json& entry = doc.begin().value();
  if (!entry.is_object() || !entry.contains("regions")) {
    throw ValidationError("imagedata", "VIA image entry has no 'regions' field");
  }
  return entry;
}

}  // namespace

void validate_sample(const LabeledSample& sample) {
  const int w = sample.image.width;
  const int h = sample.image.height;
  if (w < 1 || h < 1) throw ValidationError("imagedata", "sample '" + sample.id + "' has an empty image");
  if (sample.image.pixels.size() != static_cast<std::size_t>(w) * h * kChannels) {
    throw ValidationError("imagedata", "sample '" + sample.id + "' pixel buffer size mismatch");
  }
  for (std::size_t i = 0; i < sample.points.size(); ++i) {
    if (!point_inside(sample.points[i], w, h)) {
      throw ValidationError("imagedata", "sample '" + sample.id + "': point " + std::to_string(i) +
                                             " outside image bounds");
    }
  }
  for (std::size_t i = 0; i < sample.noise.size(); ++i) {
    if (!box_inside(sample.noise[i], w, h)) {
      throw ValidationError("imagedata", "sample '" + sample.id + "': noise box " +
                                             std::to_string(i) + " invalid or outside image");
    }
  }
}

LabeledSample parse_annotations(std::string_view document, const RawImage& image) {
  json doc;
  try {
    doc = json::parse(document.begin(), document.end());
  } catch (const json::parse_error& e) {
    throw ParseError("imagedata", std::string("malformed annotation JSON: ") + e.what(), e.byte);
  }
  const json& entry = image_entry(doc);
  const json& regions = entry.at("regions");
  if (!regions.is_array() && !regions.is_object()) {
    throw ValidationError("imagedata", "'regions' must be an array or object");
  }

  LabeledSample sample;
  sample.image = image;
  sample.id = image.source_id;
  std::size_t index = 0;
  for (const auto& region : regions) {
    const json& shape = region.contains("shape_attributes") ? region.at("shape_attributes") : json();
    if (!shape.is_object() || !shape.contains("name") || !shape.at("name").is_string()) {
      throw ValidationError("imagedata", "region " + std::to_string(index) +
                                             ": missing shape_attributes.name");
    }
    const std::string name = shape.at("name").get<std::string>();
    if (name == "point") {
      Point p{number_field(shape, "cx", index), number_field(shape, "cy", index)};
      if (!point_inside(p, image.width, image.height)) {
        throw ValidationError("imagedata", "region " + std::to_string(index) +
                                               ": point outside image bounds");
      }
      sample.points.push_back(p);
    } else if (name == "rect") {
      NoiseBox b;
      b.x0 = number_field(shape, "x", index);
      b.y0 = number_field(shape, "y", index);
      b.x1 = b.x0 + number_field(shape, "width", index);
      b.y1 = b.y0 + number_field(shape, "height", index);
      if (region.contains("region_attributes")) {
        const json& attrs = region.at("region_attributes");
        if (attrs.is_object() && attrs.contains("noise") && attrs.at("noise").is_string()) {
          b.kind = noise_kind_from_string(attrs.at("noise").get<std::string>());
        }
      }
      if (!box_inside(b, image.width, image.height)) {
        throw ValidationError("imagedata", "region " + std::to_string(index) +
                                               ": rect empty or outside image bounds");
      }
      sample.noise.push_back(b);
    } else {
      throw ValidationError("imagedata", "region " + std::to_string(index) +
                                             ": unsupported shape '" + name + "' (point, rect only)");
    }
    ++index;
  }
  return sample;
}

std::string serialize_annotations(const LabeledSample& sample) {
  json regions = json::array();
  for (const auto& p : sample.points) {
    regions.push_back({{"shape_attributes", {{"name", "point"}, {"cx", p.x}, {"cy", p.y}}},
                       {"region_attributes", json::object()}});
  }
  for (const auto& b : sample.noise) {
    regions.push_back(
        {{"shape_attributes",
          {{"name", "rect"}, {"x", b.x0}, {"y", b.y0}, {"width", b.x1 - b.x0}, {"height", b.y1 - b.y0}}},
         {"region_attributes", {{"noise", std::string(to_string(b.kind))}}}});
  }
  json entry = {{"filename", sample.id + ".png"},
                {"size", -1},
                {"regions", std::move(regions)},
                {"file_attributes", json::object()}};
  return entry.dump(1);
}

LabeledSample crop_to_area(const LabeledSample& sample, double area_w_m, double area_h_m) {
  const RawImage& img = sample.image;
  if (!(img.meters_per_pixel > 0.0)) {
    throw ValidationError("imagedata", "meters_per_pixel must be > 0");
  }
  if (!(area_w_m > 0.0) || !(area_h_m > 0.0)) {
    throw ValidationError("imagedata", "crop area must be positive");
  }
  const long long crop_w = std::llround(area_w_m / img.meters_per_pixel);
  const long long crop_h = std::llround(area_h_m / img.meters_per_pixel);
  if (crop_w > img.width || crop_h > img.height || crop_w < 1 || crop_h < 1) {
    std::ostringstream msg;
    msg << "requested area " << area_w_m << "x" << area_h_m << " m exceeds image extent "
        << img.width * img.meters_per_pixel << "x" << img.height * img.meters_per_pixel << " m";
    throw ValidationError("imagedata", msg.str());
  }
  const int cw = static_cast<int>(crop_w);
  const int ch = static_cast<int>(crop_h);

  LabeledSample out;
  out.id = sample.id;
  out.image = RawImage(ch, cw);
  out.image.meters_per_pixel = img.meters_per_pixel;
  out.image.source_id = img.source_id;
  for (int y = 0; y < ch; ++y) {
    const auto* src = &img.pixels[img.index(y, 0)];
    std::copy(src, src + static_cast<std::size_t>(cw) * kChannels, &out.image.pixels[out.image.index(y, 0)]);
  }
  for (const auto& p : sample.points) {
    if (point_inside(p, cw, ch)) out.points.push_back(p);
  }
  for (auto b : sample.noise) {
    b.x1 = std::min(b.x1, static_cast<double>(cw));
    b.y1 = std::min(b.y1, static_cast<double>(ch));
    if (b.x0 < b.x1 && b.y0 < b.y1) out.noise.push_back(b);
  }
  return out;
}

RawImage resize_image_bilinear(const RawImage& image, int target_h, int target_w) {
  if (target_h < 1 || target_w < 1) {
    throw ValidationError("imagedata", "resize target must be at least 1x1");
  }
  if (image.empty()) throw ValidationError("imagedata", "cannot resize an empty image");
  RawImage out(target_h, target_w);
  out.source_id = image.source_id;
  out.meters_per_pixel = image.meters_per_pixel * static_cast<double>(image.width) / target_w;
  const double sy = static_cast<double>(image.height) / target_h;
  const double sx = static_cast<double>(image.width) / target_w;

#pragma omp parallel for schedule(static)
  for (int y = 0; y < target_h; ++y) {
    double fy = (y + 0.5) * sy - 0.5;
    fy = std::clamp(fy, 0.0, static_cast<double>(image.height - 1));
    const int y0 = static_cast<int>(fy);
    const int y1 = std::min(y0 + 1, image.height - 1);
    const double wy = fy - y0;
    for (int x = 0; x < target_w; ++x) {
      double fx = (x + 0.5) * sx - 0.5;
      fx = std::clamp(fx, 0.0, static_cast<double>(image.width - 1));
      const int x0 = static_cast<int>(fx);
      const int x1 = std::min(x0 + 1, image.width - 1);
      const double wx = fx - x0;
      for (int c = 0; c < kChannels; ++c) {
        const double top = image.at(y0, x0, c) * (1.0 - wx) + image.at(y0, x1, c) * wx;
        const double bottom = image.at(y1, x0, c) * (1.0 - wx) + image.at(y1, x1, c) * wx;
        const double v = top * (1.0 - wy) + bottom * wy;
        out.at(y, x, c) = static_cast<std::uint8_t>(std::clamp(std::floor(v + 0.5), 0.0, 255.0));
      }
    }
  }
  return out;
}

LabeledSample resize_bilinear(const LabeledSample& sample, int target_h, int target_w) {
  LabeledSample out;
  out.id = sample.id;
  out.image = resize_image_bilinear(sample.image, target_h, target_w);
  const double sx = static_cast<double>(target_w) / sample.image.width;
  const double sy = static_cast<double>(target_h) / sample.image.height;
  out.points.reserve(sample.points.size());
  for (const auto& p : sample.points) {
    // Scaling maps [0, W) onto [0, W'), so the count is preserved; the clamp
    // only guards the last ulp.
    Point q{p.x * sx, p.y * sy};
    q.x = std::min(q.x, std::nextafter(static_cast<double>(target_w), 0.0));
    q.y = std::min(q.y, std::nextafter(static_cast<double>(target_h), 0.0));
    out.points.push_back(q);
  }
  for (auto b : sample.noise) {
    b.x0 *= sx;
    b.x1 *= sx;
    b.y0 *= sy;
    b.y1 *= sy;
    out.noise.push_back(b);
  }
  return out;
}

DatasetSplit split_dataset(std::span<const std::string> ids, std::span<const int> strata,
                           SplitRatios ratios, std::uint64_t seed) {
  const std::size_t n = ids.size();
  if (n < 3) throw ValidationError("imagedata", "split needs at least 3 samples, got " + std::to_string(n));
  if (!strata.empty() && strata.size() != n) {
    throw ValidationError("imagedata", "strata length does not match id count");
  }
  const double total = ratios.train + ratios.val + ratios.test;
  if (!(ratios.train > 0.0) || !(ratios.val > 0.0) || !(ratios.test > 0.0)) {
    throw ValidationError("imagedata", "split ratios must all be positive");
  }
  const auto n_train = static_cast<std::size_t>(std::floor(n * (ratios.train / total) + 1e-9));
  const auto n_val = static_cast<std::size_t>(std::floor(n * (ratios.val / total) + 1e-9));
  if (n_train == 0 || n_val == 0 || n_train + n_val >= n) {
    throw ValidationError("imagedata", "too few samples (" + std::to_string(n) +
                                           ") to fill train/val/test at the requested ratios");
  }

  // Class-major order, shuffled inside each class; systematic assignment along
  // that order spreads every class over the partitions proportionally.
  Rng rng(derive_seed(seed, "split"));
  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;
  rng.shuffle(order.begin(), order.end());
  if (!strata.empty()) {
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t a, std::size_t b) { return strata[a] < strata[b]; });
  }

  DatasetSplit split;
  split.seed = seed;
  std::vector<std::size_t> rest;
  for (std::size_t i = 0; i < n; ++i) {
    if ((i + 1) * n_train / n > i * n_train / n) {
      split.train.push_back(ids[order[i]]);
    } else {
      rest.push_back(order[i]);
    }
  }
  const std::size_t m = rest.size();
  for (std::size_t j = 0; j < m; ++j) {
    if ((j + 1) * n_val / m > j * n_val / m) {
      split.val.push_back(ids[rest[j]]);
    } else {
      split.test.push_back(ids[rest[j]]);
    }
  }
  std::sort(split.train.begin(), split.train.end());
  std::sort(split.val.begin(), split.val.end());
  std::sort(split.test.begin(), split.test.end());
  return split;
}

std::string read_text_file(const std::filesystem::path& file) {
  std::ifstream in(file, std::ios::binary);
  if (!in) throw IoError("imagedata", "cannot open " + file.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_text_file(const std::filesystem::path& file, std::string_view text) {
  if (file.has_parent_path()) std::filesystem::create_directories(file.parent_path());
  std::ofstream out(file, std::ios::binary);
  if (!out) throw IoError("imagedata", "cannot write " + file.string());
  out.write(text.data(), static_cast<std::streamsize>(text.size()));
}

void save_sample(const std::filesystem::path& root, const LabeledSample& sample) {
  namespace fs = std::filesystem;
  fs::create_directories(root / "images");
  fs::create_directories(root / "annotations");
  write_png(root / "images" / (sample.id + ".png"), sample.image);
  json meta = {{"meters_per_pixel", sample.image.meters_per_pixel},
               {"source_id", sample.image.source_id},
               {"height", sample.image.height},
               {"width", sample.image.width}};
  write_text_file(root / "images" / (sample.id + ".meta.json"), meta.dump(1) + "\n");
  write_text_file(root / "annotations" / (sample.id + ".json"), serialize_annotations(sample) + "\n");
}

LabeledSample load_sample(const std::filesystem::path& root, const std::string& id) {
  RawImage image = read_png(root / "images" / (id + ".png"));
  const auto meta_file = root / "images" / (id + ".meta.json");
  image.source_id = id;
  if (std::filesystem::exists(meta_file)) {
    json meta;
    try {
      meta = json::parse(read_text_file(meta_file));
    } catch (const json::parse_error& e) {
      throw ParseError("imagedata", "malformed metadata " + meta_file.string(), e.byte);
    }
    image.meters_per_pixel = meta.value("meters_per_pixel", 1.0);
    image.source_id = meta.value("source_id", id);
  }
  LabeledSample sample;
  const auto ann_file = root / "annotations" / (id + ".json");
  if (std::filesystem::exists(ann_file)) {
    sample = parse_annotations(read_text_file(ann_file), image);
  } else {
    sample.image = std::move(image);
  }
  sample.id = id;
  return sample;
}

std::vector<std::string> list_sample_ids(const std::filesystem::path& root) {
  std::vector<std::string> ids;
  const auto dir = root / "images";
  if (!std::filesystem::exists(dir)) return ids;
  for (const auto& entry : std::filesystem::directory_iterator(dir)) {
    if (entry.path().extension() == ".png") ids.push_back(entry.path().stem().string());
  }
  std::sort(ids.begin(), ids.end());
  return ids;
}

std::vector<LabeledSample> load_samples(const std::filesystem::path& root,
                                        std::span<const std::string> ids) {
  std::vector<LabeledSample> out(ids.size());
  for (std::size_t i = 0; i < ids.size(); ++i) out[i] = load_sample(root, ids[i]);
  return out;
}

void save_split(const std::filesystem::path& root, const DatasetSplit& split) {
  json doc = {{"seed", split.seed}, {"train", split.train}, {"val", split.val}, {"test", split.test}};
  write_text_file(root / "splits" / (std::to_string(split.seed) + ".json"), doc.dump(1) + "\n");
}

DatasetSplit load_split(const std::filesystem::path& file) {
  json doc;
  try {
    doc = json::parse(read_text_file(file));
  } catch (const json::parse_error& e) {
    throw ParseError("imagedata", "malformed split file " + file.string(), e.byte);
  }
  DatasetSplit split;
  split.seed = doc.value("seed", std::uint64_t{0});
  split.train = doc.at("train").get<std::vector<std::string>>();
  split.val = doc.at("val").get<std::vector<std::string>>();
  split.test = doc.at("test").get<std::vector<std::string>>();
  return split;
}

}  // namespace schoolcount
