#include "schoolcount/synthgen.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <numbers>

#include "schoolcount/error.hpp"
#include "schoolcount/png_io.hpp"

namespace schoolcount {

using nlohmann::json;

int sample_count(const CountDistribution& dist, Rng& rng) {
  if (dist.kind == CountDistribution::Kind::fixed) return dist.n;
  const double a = std::log(dist.lo + 1.0);
  const double b = std::log(dist.hi + 2.0);
  const int c = static_cast<int>(std::floor(std::exp(rng.uniform(a, b)))) - 1;
  return std::clamp(c, dist.lo, dist.hi);
}

void SynthSpec::validate() const {
  if (counts.kind == CountDistribution::Kind::log_uniform) {
    if (counts.lo < 0 || counts.hi > 500 || counts.lo > counts.hi) {
      throw ValidationError("synthgen", "log-uniform bounds must satisfy 0 <= lo <= hi <= 500");
    }
  } else if (counts.n < 0 || counts.n > 500) {
    throw ValidationError("synthgen", "fixed count must lie in [0, 500]");
  }
  if (!(noise_rate >= 0.0 && noise_rate <= 1.0)) throw ValidationError("synthgen", "noise_rate must lie in [0, 1]");
  if (!(speckle_level >= 0.0 && speckle_level <= 1.0)) {
    throw ValidationError("synthgen", "speckle_level must lie in [0, 1]");
  }
  if (!(speckle_jitter >= 0.0)) throw ValidationError("synthgen", "speckle_jitter must be >= 0");
  if (height < 1 || width < 1) throw ValidationError("synthgen", "image size must be at least 1x1");
  if (!(meters_per_pixel > 0.0)) throw ValidationError("synthgen", "meters_per_pixel must be > 0");
  if (!(school_probability >= 0.0 && school_probability <= 1.0)) {
    throw ValidationError("synthgen", "school_probability must lie in [0, 1]");
  }
}

void to_json(json& j, const SynthSpec& spec) {
  json counts;
  if (spec.counts.kind == CountDistribution::Kind::fixed) {
    counts = {{"kind", "fixed"}, {"n", spec.counts.n}};
  } else {
    counts = {{"kind", "log_uniform"}, {"lo", spec.counts.lo}, {"hi", spec.counts.hi}};
  }
  j = {{"counts", counts},
       {"noise_rate", spec.noise_rate},
       {"speckle_level", spec.speckle_level},
       {"speckle_jitter", spec.speckle_jitter},
       {"height", spec.height},
       {"width", spec.width},
       {"meters_per_pixel", spec.meters_per_pixel},
       {"school_probability", spec.school_probability},
       {"seed", spec.seed}};
}

void from_json(const json& j, SynthSpec& spec) {
  spec = SynthSpec{};
  if (j.contains("counts")) {
    const json& c = j.at("counts");
    const std::string kind = c.value("kind", std::string("log_uniform"));
    if (kind == "fixed") {
      spec.counts.kind = CountDistribution::Kind::fixed;
      spec.counts.n = c.value("n", 0);
    } else if (kind == "log_uniform") {
      spec.counts.kind = CountDistribution::Kind::log_uniform;
      spec.counts.lo = c.value("lo", 0);
      spec.counts.hi = c.value("hi", 438);
    } else {
      throw ValidationError("synthgen", "unknown count distribution '" + kind + "'");
    }
  }
  spec.noise_rate = j.value("noise_rate", spec.noise_rate);
  spec.speckle_level = j.value("speckle_level", spec.speckle_level);
  spec.speckle_jitter = j.value("speckle_jitter", spec.speckle_jitter);
  spec.height = j.value("height", spec.height);
  spec.width = j.value("width", spec.width);
  spec.meters_per_pixel = j.value("meters_per_pixel", spec.meters_per_pixel);
  spec.school_probability = j.value("school_probability", spec.school_probability);
  spec.seed = j.value("seed", spec.seed);
  spec.validate();
}

namespace {

struct Canvas {
  int h, w;
  std::vector<float> v;
  Canvas(int height, int width, float fill) : h(height), w(width), v(static_cast<std::size_t>(height) * width, fill) {}
  float& at(int y, int x) { return v[static_cast<std::size_t>(y) * w + x]; }
};

double quantise(double v, double max_value) {
  return std::clamp(std::floor(v * 16.0) / 16.0, 0.0, max_value);
}

void render_fish(Canvas& canvas, const Point& p, double length, double aspect, double angle, double amplitude) {
  const double s_major = length / 4.0;
  const double s_minor = std::max(s_major * aspect, 0.35);
  const double ca = std::cos(angle), sa = std::sin(angle);
  const int radius = static_cast<int>(std::ceil(3.0 * s_major)) + 1;
  const int cx = static_cast<int>(std::lround(p.x));
  const int cy = static_cast<int>(std::lround(p.y));
  for (int y = std::max(0, cy - radius); y <= std::min(canvas.h - 1, cy + radius); ++y) {
    for (int x = std::max(0, cx - radius); x <= std::min(canvas.w - 1, cx + radius); ++x) {
      const double dx = x - p.x, dy = y - p.y;
      const double u = dx * ca + dy * sa;
      const double t = -dx * sa + dy * ca;
      const double e = 0.5 * (u * u / (s_major * s_major) + t * t / (s_minor * s_minor));
      if (e < 12.0) canvas.at(y, x) += static_cast<float>(amplitude * std::exp(-e));
    }
  }
}

// Adds `contribution(x, y)` over the canvas and returns the bounding box of
// pixels where it exceeds `visible`; x0 >= x1 means nothing was drawn.
template <typename F>
NoiseBox paint(Canvas& canvas, F contribution, double visible) {
  int x0 = canvas.w, y0 = canvas.h, x1 = -1, y1 = -1;
  for (int y = 0; y < canvas.h; ++y) {
    for (int x = 0; x < canvas.w; ++x) {
      const double c = contribution(x, y);
      if (c <= 0.0) continue;
      canvas.at(y, x) += static_cast<float>(c);
      if (c > visible) {
        x0 = std::min(x0, x);
        y0 = std::min(y0, y);
        x1 = std::max(x1, x);
        y1 = std::max(y1, y);
      }
    }
  }
  NoiseBox box;
  if (x1 < 0) {
    box.x0 = box.x1 = 0;
    return box;
  }
  box.x0 = x0;
  box.y0 = y0;
  box.x1 = x1 + 1;
  box.y1 = y1 + 1;
  return box;
}

NoiseBox render_dolphin(Canvas& canvas, Rng& rng) {
  const double length = rng.uniform(0.15, 0.3) * canvas.w;
  const double a = length / 2.0;
  const double b = a * 0.35;
  const double cx = rng.uniform(0.1, 0.9) * canvas.w;
  const double cy = rng.uniform(0.15, 0.85) * canvas.h;
  const double angle = rng.uniform(-0.4, 0.4);
  const double amplitude = rng.uniform(120.0, 200.0);
  const double ca = std::cos(angle), sa = std::sin(angle);
  NoiseBox box = paint(
      canvas,
      [&](int x, int y) {
        const double dx = x - cx, dy = y - cy;
        if (std::abs(dx) > a + 2 && std::abs(dy) > a + 2) return 0.0;
        const double u = (dx * ca + dy * sa) / a;
        const double t = (-dx * sa + dy * ca) / b;
        const double d2 = u * u + t * t;
        return d2 > 2.5 ? 0.0 : amplitude * std::exp(-0.8 * d2 * d2);
      },
      8.0);
  box.kind = NoiseKind::dolphin;
  return box;
}

NoiseBox render_net(Canvas& canvas, Rng& rng) {
  const double radius = rng.uniform(0.5, 0.9) * canvas.w;
  const double cx = rng.uniform(0.0, 1.0) * canvas.w;
  const double cy = canvas.h + rng.uniform(0.1, 0.5) * radius;
  const double thickness = std::max(1.0, rng.uniform(0.004, 0.008) * canvas.w);
  const double amplitude = rng.uniform(80.0, 140.0);
  const double mesh = std::max(2.0, 0.012 * canvas.w);
  NoiseBox box = paint(
      canvas,
      [&](int x, int y) {
        const double d = std::hypot(x - cx, y - cy) - radius;
        double c = 0.0;
        if (std::abs(d) < 3.0 * thickness) c += amplitude * std::exp(-0.5 * d * d / (thickness * thickness));
        // trailing mesh below the float line
        if (d < 0.0 && d > -0.18 * radius) {
          const double gx = std::fmod(x + 0.5 * y, mesh);
          if (gx < 1.0) c += 0.35 * amplitude * (1.0 + d / (0.18 * radius));
        }
        return c;
      },
      8.0);
  box.kind = NoiseKind::net;
  return box;
}

LabeledSample render(const SynthSpec& spec, std::uint64_t seed, std::string id) {
  Rng rng(seed);
  const int h = spec.height, w = spec.width;
  const double scale = w / 576.0;
  Canvas canvas(h, w, 20.0f);

  LabeledSample sample;
  sample.id = std::move(id);

  const int count = sample_count(spec.counts, rng);
  const bool schooled = count > 3 && rng.coin(spec.school_probability);
  std::vector<Point> centres;
  if (schooled) {
    const int n_schools = static_cast<int>(rng.range(1, 3));
    for (int i = 0; i < n_schools; ++i) {
      centres.push_back({rng.uniform(0.0, w - 1.0), rng.uniform(0.0, h - 1.0)});
    }
  }
  const double spread = rng.uniform(0.05, 0.15) * std::min(w, h);
  sample.points.reserve(static_cast<std::size_t>(count));
  for (int i = 0; i < count; ++i) {
    Point p;
    bool placed = false;
    if (schooled) {
      const auto& c = centres[rng.below(centres.size())];
      for (int attempt = 0; attempt < 8 && !placed; ++attempt) {
        p = {rng.normal(c.x, spread), rng.normal(c.y, spread)};
        placed = p.x >= 0.0 && p.x <= w - 1.0 && p.y >= 0.0 && p.y <= h - 1.0;
      }
    }
    if (!placed) p = {rng.uniform(0.0, w - 1.0), rng.uniform(0.0, h - 1.0)};
    p.x = quantise(p.x, w - 1.0);
    p.y = quantise(p.y, h - 1.0);
    sample.points.push_back(p);
    const double length = rng.uniform(6.0, 10.0) * scale;
    const double aspect = rng.uniform(0.3, 0.45);
    const double angle = rng.uniform(0.0, std::numbers::pi);
    const double amplitude = rng.uniform(110.0, 170.0);
    render_fish(canvas, p, length, aspect, angle, amplitude);
  }

  if (rng.coin(spec.noise_rate)) {
    const int n_objects = rng.coin(0.3) ? 2 : 1;
    for (int i = 0; i < n_objects; ++i) {
      NoiseBox box = rng.coin(0.6) ? render_dolphin(canvas, rng) : render_net(canvas, rng);
      if (box.x0 < box.x1 && box.y0 < box.y1) sample.noise.push_back(box);
    }
  }

  const double level = std::min(1.0, spec.speckle_level + rng.uniform() * spec.speckle_jitter);
  RawImage& img = sample.image;
  img = RawImage(h, w);
  img.meters_per_pixel = spec.meters_per_pixel;
  img.source_id = sample.id;
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      double u = rng.uniform();
      while (u <= 0.0) u = rng.uniform();
      const double speckle = level * 60.0 * std::sqrt(-2.0 * std::log(u));
      const double v = std::clamp(static_cast<double>(canvas.at(y, x)) + speckle, 0.0, 255.0);
      img.at(y, x, 0) = static_cast<std::uint8_t>(std::lround(0.45 * v));
      img.at(y, x, 1) = static_cast<std::uint8_t>(std::lround(0.75 * v));
      img.at(y, x, 2) = static_cast<std::uint8_t>(std::lround(v));
    }
  }
  return sample;
}

std::string make_id(const char* prefix, std::uint64_t index) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%s%06llu", prefix, static_cast<unsigned long long>(index));
  return buf;
}

}  // namespace

LabeledSample generate_sample(const SynthSpec& spec, std::uint64_t index) {
  spec.validate();
  return render(spec, derive_seed(spec.seed, "synth.labelled", index), make_id("s", index));
}

UnlabelledImage generate_unlabelled(const SynthSpec& spec, std::uint64_t index) {
  spec.validate();
  LabeledSample s = render(spec, derive_seed(spec.seed, "synth.unlabelled", index), make_id("u", index));
  return {std::move(s.id), std::move(s.image), std::move(s.points)};
}

SynthDataset generate_dataset(const SynthSpec& spec, std::size_t n_labelled, std::size_t n_unlabelled) {
  spec.validate();
  SynthDataset data;
  data.labelled.resize(n_labelled);
  data.unlabelled.resize(n_unlabelled);
  const auto nl = static_cast<long long>(n_labelled);
  const auto nu = static_cast<long long>(n_unlabelled);
#pragma omp parallel for schedule(dynamic)
  for (long long i = 0; i < nl; ++i) data.labelled[i] = generate_sample(spec, static_cast<std::uint64_t>(i));
#pragma omp parallel for schedule(dynamic)
  for (long long i = 0; i < nu; ++i) data.unlabelled[i] = generate_unlabelled(spec, static_cast<std::uint64_t>(i));
  return data;
}

void save_unlabelled(const std::filesystem::path& root, const UnlabelledImage& image) {
  std::filesystem::create_directories(root / "images");
  std::filesystem::create_directories(root / "truth");
  write_png(root / "images" / (image.id + ".png"), image.image);
  nlohmann::json pts = nlohmann::json::array();
  for (const auto& p : image.hidden_points) pts.push_back({p.x, p.y});
  write_text_file(root / "truth" / (image.id + ".json"), nlohmann::json{{"points", pts}}.dump() + "\n");
}

std::vector<UnlabelledImage> load_unlabelled(const std::filesystem::path& root, bool with_truth) {
  const auto ids = list_sample_ids(root);
  std::vector<UnlabelledImage> out(ids.size());
  for (std::size_t i = 0; i < ids.size(); ++i) {
    out[i].id = ids[i];
    out[i].image = read_png(root / "images" / (ids[i] + ".png"));
    out[i].image.source_id = ids[i];
    if (!with_truth) continue;
    const auto file = root / "truth" / (ids[i] + ".json");
    nlohmann::json doc;
    try {
      doc = nlohmann::json::parse(read_text_file(file));
    } catch (const nlohmann::json::parse_error& e) {
      throw ParseError("synthgen", "malformed truth file " + file.string(), e.byte);
    }
    for (const auto& p : doc.at("points")) out[i].hidden_points.push_back({p.at(0).get<double>(), p.at(1).get<double>()});
  }
  return out;
}

}  // namespace schoolcount
