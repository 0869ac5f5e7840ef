#include "schoolcount/rankpairs.hpp"

#include <algorithm>
#include <cmath>

#include "json.hpp"
#include "schoolcount/error.hpp"
#include "schoolcount/png_io.hpp"
#include "schoolcount/rng.hpp"

namespace schoolcount {

SubregionList subregions(const RawImage& image, std::span<const Point> hidden, std::uint64_t seed,
                         const Background& background) {
  if (image.empty()) throw ValidationError("rankpairs", "cannot derive subregions of an empty image");
  const int w = image.width, h = image.height;
  SubregionList out;
  out[0].image = image;
  out[0].placement = {0.0, 0, 0, w, h, 0, 0, false};
  out[0].points.assign(hidden.begin(), hidden.end());

  Rng rng(seed);
  for (std::size_t i = 0; i < kCropFactors.size(); ++i) {
    const double f = kCropFactors[i];
    const int cut_w = static_cast<int>(std::lround(f * w));
    const int cut_h = static_cast<int>(std::lround(f * h));
    CropPlacement pl;
    pl.factor = f;
    pl.crop_x0 = 0;
    pl.crop_y0 = cut_h;
    pl.crop_x1 = w - cut_w;
    pl.crop_y1 = h;
    pl.offset_x = static_cast<int>(rng.range(0, cut_w));
    pl.offset_y = static_cast<int>(rng.range(0, cut_h));
    pl.flipped = rng.below(2) == 1;
    const int cw = pl.crop_x1 - pl.crop_x0;
    const int ch = pl.crop_y1 - pl.crop_y0;

    Subregion& sub = out[i + 1];
    sub.placement = pl;
    sub.image = RawImage(h, w);
    sub.image.meters_per_pixel = image.meters_per_pixel;
    sub.image.source_id = image.source_id;
    for (std::size_t p = 0; p < sub.image.pixels.size(); p += kChannels) {
      for (int c = 0; c < kChannels; ++c) sub.image.pixels[p + c] = background[c];
    }
    for (int y = 0; y < ch; ++y) {
      for (int x = 0; x < cw; ++x) {
        const int sx = pl.crop_x0 + (pl.flipped ? cw - 1 - x : x);
        for (int c = 0; c < kChannels; ++c) {
          sub.image.at(pl.offset_y + y, pl.offset_x + x, c) = image.at(pl.crop_y0 + y, sx, c);
        }
      }
    }
    for (const auto& p : hidden) {
      if (p.x < pl.crop_x0 || p.x >= pl.crop_x1 || p.y < pl.crop_y0 || p.y >= pl.crop_y1) continue;
      double lx = p.x - pl.crop_x0;
      if (pl.flipped) lx = std::max(0.0, (cw - 1) - lx);
      sub.points.push_back({lx + pl.offset_x, p.y - pl.crop_y0 + pl.offset_y});
    }
  }
  return out;
}

PairSet generate_pairs(std::span<const UnlabelledImage> unlabelled, std::size_t n_pairs, std::uint64_t seed,
                       const Background& background) {
  const std::size_t available = kPairsPerImage * unlabelled.size();
  if (n_pairs > available) {
    throw ValidationError("rankpairs", "requested " + std::to_string(n_pairs) + " pairs but " +
                                           std::to_string(unlabelled.size()) + " images yield only " +
                                           std::to_string(available));
  }
  PairSet set;
  set.sources.resize(unlabelled.size());
  set.source_ids.resize(unlabelled.size());
  const auto n = static_cast<long long>(unlabelled.size());
#pragma omp parallel for schedule(dynamic)
  for (long long i = 0; i < n; ++i) {
    const auto& u = unlabelled[static_cast<std::size_t>(i)];
    set.sources[i] = subregions(u.image, u.hidden_points, derive_seed(seed, "pairs.subregions", i), background);
    set.source_ids[i] = u.id;
  }

  std::vector<RankedPair> all;
  all.reserve(available);
  for (std::size_t s = 0; s < unlabelled.size(); ++s) {
    for (int j = 0; j < kSubregionsPerImage; ++j) {
      for (int k = j + 1; k < kSubregionsPerImage; ++k) all.push_back({s, j, k});
    }
  }
  Rng rng(derive_seed(seed, "pairs.subsample"));
  std::vector<std::size_t> order(all.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  rng.shuffle(order.begin(), order.end());
  order.resize(n_pairs);
  std::sort(order.begin(), order.end());
  set.pairs.reserve(n_pairs);
  for (auto i : order) set.pairs.push_back(all[i]);
  return set;
}

namespace {

std::string subregion_file(const std::string& source, int k) { return source + "_s" + std::to_string(k) + ".png"; }

}  // namespace

void save_pair_set(const std::filesystem::path& dir, const PairSet& set) {
  using nlohmann::json;
  std::filesystem::create_directories(dir / "images");
  json sources = json::array();
  for (std::size_t s = 0; s < set.sources.size(); ++s) {
    json subs = json::array();
    for (int k = 0; k < kSubregionsPerImage; ++k) {
      const auto& sub = set.sources[s][k];
      const auto& pl = sub.placement;
      const auto file = subregion_file(set.source_ids[s], k);
      write_png(dir / "images" / file, sub.image);
      json entry = {{"image", "images/" + file},
                    {"factor", pl.factor},
                    {"crop", {pl.crop_x0, pl.crop_y0, pl.crop_x1, pl.crop_y1}},
                    {"offset", {pl.offset_x, pl.offset_y}},
                    {"flipped", pl.flipped}};
      if (!sub.points.empty() || k == 0) {
        json pts = json::array();
        for (const auto& p : sub.points) pts.push_back({p.x, p.y});
        entry["points"] = pts;
      }
      subs.push_back(entry);
    }
    sources.push_back({{"id", set.source_ids[s]}, {"subregions", subs}});
  }
  json pairs = json::array();
  for (const auto& p : set.pairs) {
    pairs.push_back({{"source", p.source},
                     {"first", p.first},
                     {"second", p.second},
                     {"first_image", "images/" + subregion_file(set.source_ids[p.source], p.first)},
                     {"second_image", "images/" + subregion_file(set.source_ids[p.source], p.second)}});
  }
  write_text_file(dir / "pairs.json", json{{"sources", sources}, {"pairs", pairs}}.dump(1) + "\n");
}

PairSet load_pair_set(const std::filesystem::path& dir) {
  using nlohmann::json;
  const auto file = dir / "pairs.json";
  json doc;
  try {
    doc = json::parse(read_text_file(file));
  } catch (const json::parse_error& e) {
    throw ParseError("rankpairs", "malformed pair manifest " + file.string(), e.byte);
  }
  PairSet set;
  try {
    for (const auto& src : doc.at("sources")) {
      set.source_ids.push_back(src.at("id").get<std::string>());
      SubregionList list;
      const auto& subs = src.at("subregions");
      if (subs.size() != kSubregionsPerImage) throw ValidationError("rankpairs", "source needs 4 subregions");
      for (int k = 0; k < kSubregionsPerImage; ++k) {
        const auto& e = subs[k];
        auto& sub = list[k];
        sub.image = read_png(dir / e.at("image").get<std::string>());
        sub.placement.factor = e.at("factor").get<double>();
        const auto crop = e.at("crop").get<std::array<int, 4>>();
        sub.placement.crop_x0 = crop[0];
        sub.placement.crop_y0 = crop[1];
        sub.placement.crop_x1 = crop[2];
        sub.placement.crop_y1 = crop[3];
        const auto off = e.at("offset").get<std::array<int, 2>>();
        sub.placement.offset_x = off[0];
        sub.placement.offset_y = off[1];
        sub.placement.flipped = e.at("flipped").get<bool>();
        if (e.contains("points")) {
          for (const auto& p : e.at("points")) sub.points.push_back({p.at(0).get<double>(), p.at(1).get<double>()});
        }
      }
      set.sources.push_back(std::move(list));
    }
    for (const auto& p : doc.at("pairs")) {
      RankedPair rp{p.at("source").get<std::size_t>(), p.at("first").get<int>(), p.at("second").get<int>()};
      if (rp.source >= set.sources.size() || rp.first < 0 || rp.second >= kSubregionsPerImage ||
          rp.first >= rp.second) {
        throw ValidationError("rankpairs", "pair entry out of range in " + file.string());
      }
      set.pairs.push_back(rp);
    }
  } catch (const json::exception& e) {
    throw ValidationError("rankpairs", std::string("bad pair manifest: ") + e.what());
  }
  return set;
}

}  // namespace schoolcount
