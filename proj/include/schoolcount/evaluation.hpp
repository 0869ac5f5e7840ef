#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "schoolcount/densitymap.hpp"
#include "schoolcount/imagedata.hpp"
#include "schoolcount/network.hpp"

namespace schoolcount {

enum class Subgroup { lt25, from25to50, from50to150, ge150, noise };
inline constexpr std::array<Subgroup, 5> kSubgroups{Subgroup::lt25, Subgroup::from25to50, Subgroup::from50to150,
                                                    Subgroup::ge150, Subgroup::noise};
std::string_view to_string(Subgroup g);  // "lt25", "25to50", "50to150", "ge150", "noise"

inline constexpr double kNoiseAreaThreshold = 0.05;

struct SampleResult {
  std::string id;
  double c = 0.0;
  double c_hat = 0.0;
  double logvar = 0.0;
  Subgroup subgroup = Subgroup::lt25;
};

// Noise boxes covering at least `noise_threshold` of the image area put the
// sample in the noise subgroup; otherwise it is binned by true count.
Subgroup assign_subgroup(const LabeledSample& sample, double noise_threshold = kNoiseAreaThreshold);

// Throw ValidationError on empty input.
double mae(std::span<const SampleResult> results);
double rmse(std::span<const SampleResult> results);
// Undefined (nullopt) when the subgroup is empty or its true counts sum to 0.
std::optional<double> nmae(std::span<const SampleResult> results, Subgroup g);

struct Correlation {
  std::optional<double> r;
  std::optional<double> p_one_tailed;  // H1: r > 0
};

// Pearson r between logvar and |c - c_hat|; undefined below 3 samples or
// when either series is constant.
Correlation uncertainty_correlation(std::span<const SampleResult> results);

struct MetricsReport {
  double mae = 0.0;
  double rmse = 0.0;
  std::map<Subgroup, std::optional<double>> nmae;
  std::map<Subgroup, std::size_t> subgroup_size;
  Correlation correlation;
  double share_logvar_0_to_1_7 = 0.0;  // fraction of samples with 0 <= logvar < 1.7
  std::vector<SampleResult> per_sample;
};

MetricsReport make_report(std::vector<SampleResult> per_sample);

// --- inference ----------------------------------------------------------------

struct Prediction {
  double count = 0.0;
  double logvar = 0.0;
};

// One forward pass per sample, spread over threads; results are in input order.
std::vector<Prediction> predict(const Network<float>& net, const ModelParams& params,
                                std::span<const LabeledSample> samples);

DensityMap to_density_map(const ModelOutput<float>& output);

struct EvalOptions {
  double noise_threshold = kNoiseAreaThreshold;
  std::filesystem::path heatmap_dir;  // empty: no heat-maps
};

MetricsReport evaluate(const Network<float>& net, const ModelParams& params, std::span<const LabeledSample> test,
                       const EvalOptions& options = {});

// --- heat-maps ---------------------------------------------------------------

// 256-entry blue -> cyan -> green -> yellow -> red ramp.
const std::array<std::array<std::uint8_t, 3>, 256>& heat_ramp();

// Density normalised by its maximum (negative cells count as zero), coloured
// through heat_ramp, upsampled by the map stride (nearest) and blended 50/50
// over `base`.
RawImage render_heatmap(const DensityMap& density, const RawImage& base);

// --- CSV / Markdown ------------------------------------------------------------

void write_report_csv(const std::filesystem::path& file, const MetricsReport& report);
void write_summary_csv(const std::filesystem::path& file, const MetricsReport& report);

// Markdown tables built from the CSVs in `dir` (summary.csv, and ablation.csv
// or history.csv when present).
std::string render_markdown_report(const std::filesystem::path& dir);

// "%.6f", or "NA" for undefined values.
std::string format_metric(std::optional<double> v);

}  // namespace schoolcount
