#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "json.hpp"
#include "schoolcount/imagedata.hpp"
#include "schoolcount/rng.hpp"

namespace schoolcount {

struct CountDistribution {
  enum class Kind { log_uniform, fixed };
  Kind kind = Kind::log_uniform;
  int lo = 0;     // log_uniform lower bound
  int hi = 438;   // log_uniform upper bound
  int n = 0;      // fixed count
};

// Draws a count. log_uniform: c = floor(exp(U(log(lo+1), log(hi+2)))) - 1,
// clamped to [lo, hi], so P(c < k) = log((k+1)/(lo+1)) / log((hi+2)/(lo+1)).
int sample_count(const CountDistribution& dist, Rng& rng);

struct SynthSpec {
  CountDistribution counts;
  double noise_rate = 0.3;       // probability that a sample carries dolphin/net objects
  double speckle_level = 0.3;    // [0, 1]
  double speckle_jitter = 0.0;   // per-sample speckle drawn from [level, level + jitter]
  int height = 320;
  int width = 576;
  double meters_per_pixel = 0.0125;
  double school_probability = 0.5;  // chance fish are drawn from a few clustered schools
  std::uint64_t seed = 0;

  void validate() const;
};

void to_json(nlohmann::json& j, const SynthSpec& spec);
void from_json(const nlohmann::json& j, SynthSpec& spec);

// Unlabelled image with its true fish positions. The positions are kept only
// so tests can verify ranking-pair invariants; training never reads them.
struct UnlabelledImage {
  std::string id;
  RawImage image;
  std::vector<Point> hidden_points;
};

struct SynthDataset {
  std::vector<LabeledSample> labelled;
  std::vector<UnlabelledImage> unlabelled;
};

// Pure function of (spec, index). Fish are small elongated bright blobs, one
// point annotation per blob centre (quantised to 1/16 px); optional dolphin
// ellipses and net arcs are recorded as noise boxes; speckle is added last.
LabeledSample generate_sample(const SynthSpec& spec, std::uint64_t index);

// Labelled samples use indices [0, n_labelled); unlabelled images come from a
// separate index stream, so the two sets never share an image.
SynthDataset generate_dataset(const SynthSpec& spec, std::size_t n_labelled, std::size_t n_unlabelled);

UnlabelledImage generate_unlabelled(const SynthSpec& spec, std::uint64_t index);

// <root>/images/<id>.png plus <root>/truth/<id>.json holding the hidden
// positions. load_unlabelled reads the truth files only when asked.
void save_unlabelled(const std::filesystem::path& root, const UnlabelledImage& image);
std::vector<UnlabelledImage> load_unlabelled(const std::filesystem::path& root, bool with_truth = false);

}  // namespace schoolcount
