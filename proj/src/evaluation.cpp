#include "schoolcount/evaluation.hpp"

#include <omp.h>

#include <algorithm>
#include <boost/math/distributions/students_t.hpp>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "schoolcount/error.hpp"
#include "schoolcount/png_io.hpp"

namespace schoolcount {

std::string_view to_string(Subgroup g) {
  switch (g) {
    case Subgroup::lt25: return "lt25";
    case Subgroup::from25to50: return "25to50";
    case Subgroup::from50to150: return "50to150";
    case Subgroup::ge150: return "ge150";
    case Subgroup::noise: return "noise";
  }
  return "?";
}

Subgroup assign_subgroup(const LabeledSample& sample, double noise_threshold) {
  double area = 0.0;
  for (const auto& b : sample.noise) area += b.area();
  const double image_area = static_cast<double>(sample.image.height) * sample.image.width;
  if (!sample.noise.empty() && image_area > 0 && area >= noise_threshold * image_area) return Subgroup::noise;
  const auto c = sample.count();
  if (c < 25) return Subgroup::lt25;
  if (c < 50) return Subgroup::from25to50;
  if (c < 150) return Subgroup::from50to150;
  return Subgroup::ge150;
}

double mae(std::span<const SampleResult> results) {
  if (results.empty()) throw ValidationError("evaluation", "MAE of an empty result set");
  double s = 0.0;
  for (const auto& r : results) s += std::abs(r.c - r.c_hat);
  return s / static_cast<double>(results.size());
}

double rmse(std::span<const SampleResult> results) {
  if (results.empty()) throw ValidationError("evaluation", "RMSE of an empty result set");
  double s = 0.0;
  for (const auto& r : results) s += (r.c - r.c_hat) * (r.c - r.c_hat);
  return std::sqrt(s / static_cast<double>(results.size()));
}

std::optional<double> nmae(std::span<const SampleResult> results, Subgroup g) {
  double err = 0.0, total = 0.0;
  for (const auto& r : results) {
    if (r.subgroup != g) continue;
    err += std::abs(r.c - r.c_hat);
    total += r.c;
  }
  if (total <= 0.0) return std::nullopt;
  return err / total;
}

Correlation uncertainty_correlation(std::span<const SampleResult> results) {
  const std::size_t n = results.size();
  if (n < 3) return {};
  double mx = 0.0, my = 0.0;
  for (const auto& r : results) {
    mx += r.logvar;
    my += std::abs(r.c - r.c_hat);
  }
  mx /= static_cast<double>(n);
  my /= static_cast<double>(n);
  double sxx = 0.0, syy = 0.0, sxy = 0.0;
  for (const auto& r : results) {
    const double dx = r.logvar - mx, dy = std::abs(r.c - r.c_hat) - my;
    sxx += dx * dx;
    syy += dy * dy;
    sxy += dx * dy;
  }
  if (sxx <= 0.0 || syy <= 0.0) return {};
  const double r = std::clamp(sxy / std::sqrt(sxx * syy), -1.0, 1.0);
  Correlation out;
  out.r = r;
  const double df = static_cast<double>(n - 2);
  if (r >= 1.0) {
    out.p_one_tailed = 0.0;
  } else if (r <= -1.0) {
    out.p_one_tailed = 1.0;
  } else {
    const double t = r * std::sqrt(df / (1.0 - r * r));
    boost::math::students_t dist(df);
    out.p_one_tailed = boost::math::cdf(boost::math::complement(dist, t));
  }
  return out;
}

MetricsReport make_report(std::vector<SampleResult> per_sample) {
  MetricsReport rep;
  rep.per_sample = std::move(per_sample);
  rep.mae = mae(rep.per_sample);
  rep.rmse = rmse(rep.per_sample);
  std::size_t in_band = 0;
  for (Subgroup g : kSubgroups) {
    rep.nmae[g] = nmae(rep.per_sample, g);
    rep.subgroup_size[g] = 0;
  }
  for (const auto& r : rep.per_sample) {
    ++rep.subgroup_size[r.subgroup];
    if (r.logvar >= 0.0 && r.logvar < 1.7) ++in_band;
  }
  rep.share_logvar_0_to_1_7 = static_cast<double>(in_band) / static_cast<double>(rep.per_sample.size());
  rep.correlation = uncertainty_correlation(rep.per_sample);
  return rep;
}

std::vector<Prediction> predict(const Network<float>& net, const ModelParams& params,
                                std::span<const LabeledSample> samples) {
  std::vector<Prediction> out(samples.size());
  const long n = static_cast<long>(samples.size());
  std::string error;
#pragma omp parallel for schedule(dynamic, 1)
  for (long i = 0; i < n; ++i) {
    try {
      const auto o = net.forward(params, samples[i].image);
      out[i] = {static_cast<double>(o.count()), static_cast<double>(o.logvar())};
    } catch (const std::exception& e) {
#pragma omp critical
      if (error.empty()) error = samples[i].id + ": " + e.what();
    }
  }
  if (!error.empty()) throw ShapeError("evaluation", error);
  return out;
}

DensityMap to_density_map(const ModelOutput<float>& output) {
  DensityMap m(output.rows, output.cols, kNetworkStride);
  for (std::size_t i = 0; i < m.values.size(); ++i) m.values[i] = output.density[i];
  return m;
}

MetricsReport evaluate(const Network<float>& net, const ModelParams& params, std::span<const LabeledSample> test,
                       const EvalOptions& options) {
  if (test.empty()) throw ValidationError("evaluation", "test set is empty");
  std::vector<SampleResult> results(test.size());
  const long n = static_cast<long>(test.size());
  const bool heatmaps = !options.heatmap_dir.empty();
  if (heatmaps) std::filesystem::create_directories(options.heatmap_dir);
  std::string error;
#pragma omp parallel for schedule(dynamic, 1)
  for (long i = 0; i < n; ++i) {
    try {
      const auto& s = test[i];
      const auto o = net.forward(params, s.image);
      results[i] = {s.id, static_cast<double>(s.count()), static_cast<double>(o.count()),
                    static_cast<double>(o.logvar()), assign_subgroup(s, options.noise_threshold)};
      if (heatmaps) write_png(options.heatmap_dir / (s.id + ".png"), render_heatmap(to_density_map(o), s.image));
    } catch (const std::exception& e) {
#pragma omp critical
      if (error.empty()) error = test[i].id + ": " + e.what();
    }
  }
  if (!error.empty()) throw ValidationError("evaluation", error);
  return make_report(std::move(results));
}

const std::array<std::array<std::uint8_t, 3>, 256>& heat_ramp() {
  static const auto table = [] {
    constexpr double stops[5][3] = {{0, 0, 255}, {0, 255, 255}, {0, 255, 0}, {255, 255, 0}, {255, 0, 0}};
    std::array<std::array<std::uint8_t, 3>, 256> t{};
    for (int i = 0; i < 256; ++i) {
      const double u = i / 255.0 * 4.0;
      const int k = std::min(3, static_cast<int>(u));
      const double f = u - k;
      for (int c = 0; c < 3; ++c) {
        t[i][c] = static_cast<std::uint8_t>(std::lround(stops[k][c] + f * (stops[k + 1][c] - stops[k][c])));
      }
    }
    return t;
  }();
  return table;
}

RawImage render_heatmap(const DensityMap& density, const RawImage& base) {
  double peak = 0.0;
  for (double v : density.values) peak = std::max(peak, v);
  const auto& ramp = heat_ramp();
  RawImage out = base;
  for (int y = 0; y < base.height; ++y) {
    const int r = std::min(density.rows - 1, y / density.stride);
    for (int x = 0; x < base.width; ++x) {
      const int c = std::min(density.cols - 1, x / density.stride);
      const double v = peak > 0.0 ? std::max(0.0, density.at(r, c)) / peak : 0.0;
      const auto& col = ramp[static_cast<std::size_t>(std::lround(v * 255.0))];
      for (int ch = 0; ch < kChannels; ++ch) {
        out.at(y, x, ch) = static_cast<std::uint8_t>((base.at(y, x, ch) + col[ch] + 1) / 2);
      }
    }
  }
  return out;
}

std::string format_metric(std::optional<double> v) {
  if (!v) return "NA";
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.6f", *v);
  return buf;
}

void write_report_csv(const std::filesystem::path& file, const MetricsReport& report) {
  std::ostringstream s;
  s << "id,c,c_hat,abs_error,logvar,subgroup\n";
  for (const auto& r : report.per_sample) {
    s << r.id << ',' << format_metric(r.c) << ',' << format_metric(r.c_hat) << ',' << format_metric(std::abs(r.c - r.c_hat))
      << ',' << format_metric(r.logvar) << ',' << to_string(r.subgroup) << '\n';
  }
  write_text_file(file, s.str());
}

void write_summary_csv(const std::filesystem::path& file, const MetricsReport& report) {
  std::ostringstream s;
  s << "metric,value\n";
  s << "n," << report.per_sample.size() << '\n';
  s << "MAE," << format_metric(report.mae) << '\n';
  s << "RMSE," << format_metric(report.rmse) << '\n';
  for (Subgroup g : kSubgroups) {
    s << "NMAE_" << to_string(g) << ',' << format_metric(report.nmae.at(g)) << '\n';
    s << "n_" << to_string(g) << ',' << report.subgroup_size.at(g) << '\n';
  }
  s << "pearson_r," << format_metric(report.correlation.r) << '\n';
  s << "p_one_tailed," << format_metric(report.correlation.p_one_tailed) << '\n';
  s << "share_logvar_0_to_1.7," << format_metric(report.share_logvar_0_to_1_7) << '\n';
  write_text_file(file, s.str());
}

namespace {

std::vector<std::vector<std::string>> read_csv(const std::filesystem::path& file) {
  std::vector<std::vector<std::string>> rows;
  std::istringstream in(read_text_file(file));
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::vector<std::string> cells;
    std::string cell;
    std::istringstream ls(line);
    while (std::getline(ls, cell, ',')) cells.push_back(cell);
    rows.push_back(std::move(cells));
  }
  return rows;
}

void markdown_table(std::ostringstream& out, const std::vector<std::vector<std::string>>& rows) {
  if (rows.empty()) return;
  auto line = [&](const std::vector<std::string>& cells) {
    out << '|';
    for (const auto& c : cells) out << ' ' << c << " |";
    out << '\n';
  };
  line(rows[0]);
  out << '|';
  for (std::size_t i = 0; i < rows[0].size(); ++i) out << " --- |";
  out << '\n';
  for (std::size_t i = 1; i < rows.size(); ++i) line(rows[i]);
  out << '\n';
}

}  // namespace

std::string render_markdown_report(const std::filesystem::path& dir) {
  std::ostringstream out;
  bool any = false;
  const std::pair<const char*, const char*> sections[] = {
      {"summary.csv", "Test metrics"}, {"ablation.csv", "Ablation"}, {"history.csv", "Training history"}};
  for (const auto& [name, title] : sections) {
    const auto file = dir / name;
    if (!std::filesystem::exists(file)) continue;
    out << "## " << title << "\n\n";
    markdown_table(out, read_csv(file));
    any = true;
  }
  if (!any) throw IoError("evaluation", "no summary.csv, ablation.csv or history.csv in " + dir.string());
  return out.str();
}

}  // namespace schoolcount
