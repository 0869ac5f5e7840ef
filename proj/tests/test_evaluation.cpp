#include <cmath>
#include <filesystem>

#include "doctest.h"
#include "schoolcount/error.hpp"
#include "schoolcount/evaluation.hpp"
#include "schoolcount/rng.hpp"
#include "schoolcount/synthgen.hpp"

using namespace schoolcount;
namespace fs = std::filesystem;

namespace {

std::vector<SampleResult> results(std::vector<double> c, std::vector<double> c_hat, std::vector<double> lv = {}) {
  std::vector<SampleResult> out;
  for (std::size_t i = 0; i < c.size(); ++i) {
    out.push_back({"s" + std::to_string(i), c[i], c_hat[i], lv.empty() ? 0.0 : lv[i], Subgroup::lt25});
  }
  return out;
}

LabeledSample with_count(int n, int h = 320, int w = 576) {
  LabeledSample s;
  s.image = RawImage(h, w);
  for (int i = 0; i < n; ++i) s.points.push_back({static_cast<double>(i % w), static_cast<double>(i / w)});
  return s;
}

}  // namespace

TEST_CASE("mae and rmse") {
  const auto perfect = results({1, 2, 3}, {1, 2, 3});
  CHECK(mae(perfect) == 0.0);
  CHECK(rmse(perfect) == 0.0);
  const auto r = results({10, 10}, {13, 6});
  CHECK(mae(r) == 3.5);
  CHECK(rmse(r) == doctest::Approx(std::sqrt(12.5)).epsilon(1e-12));
  CHECK(rmse(r) == doctest::Approx(3.5355).epsilon(1e-4));
  CHECK(mae(results({0}, {6.48})) == doctest::Approx(6.48));
  CHECK_THROWS_AS(mae({}), ValidationError);
  CHECK_THROWS_AS(rmse({}), ValidationError);
}

TEST_CASE("mae never exceeds rmse") {
  Rng rng(4);
  for (int t = 0; t < 200; ++t) {
    std::vector<double> c, ch;
    for (int i = 0, n = 1 + t % 17; i < n; ++i) {
      c.push_back(std::floor(rng.uniform(0, 400)));
      ch.push_back(rng.uniform(-20, 420));
    }
    const auto r = results(c, ch);
    CHECK(mae(r) <= rmse(r) + 1e-12);
  }
}

TEST_CASE("nmae") {
  auto r = results({10, 30, 5}, {12, 28, 5});
  r[2].subgroup = Subgroup::ge150;
  CHECK(*nmae(r, Subgroup::lt25) == doctest::Approx(0.1).epsilon(1e-12));
  CHECK(*nmae(r, Subgroup::ge150) == 0.0);
  CHECK_FALSE(nmae(r, Subgroup::noise));
  auto z = results({0, 0}, {1, 2});
  CHECK_FALSE(nmae(z, Subgroup::lt25));
}

TEST_CASE("subgroups") {
  CHECK(assign_subgroup(with_count(24)) == Subgroup::lt25);
  CHECK(assign_subgroup(with_count(25)) == Subgroup::from25to50);
  CHECK(assign_subgroup(with_count(50)) == Subgroup::from50to150);
  CHECK(assign_subgroup(with_count(200)) == Subgroup::ge150);
  auto s = with_count(10);
  s.noise.push_back({0, 0, 200, 100, NoiseKind::dolphin});  // about 11% of the image
  CHECK(assign_subgroup(s) == Subgroup::noise);
  s.noise[0] = {0, 0, 50, 50, NoiseKind::net};  // about 1%
  CHECK(assign_subgroup(s) == Subgroup::lt25);
  CHECK(to_string(Subgroup::from50to150) == "50to150");
}

TEST_CASE("uncertainty correlation") {
  SUBCASE("perfectly linear") {
    const auto r = results({0, 0, 0, 0}, {1, 2, 5, 9}, {1, 2, 5, 9});
    const auto c = uncertainty_correlation(r);
    REQUIRE(c.r);
    CHECK(*c.r == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(*c.p_one_tailed < 1e-6);
  }
  SUBCASE("anti-correlated") {
    const auto c = uncertainty_correlation(results({0, 0, 0, 0, 0}, {1, 2, 3, 4, 6}, {5, 3, 4, 1, 0}));
    CHECK(*c.r < 0);
    CHECK(*c.p_one_tailed > 0.5);
  }
  SUBCASE("independent series") {
    Rng rng(77);
    std::vector<double> c, ch, lv;
    for (int i = 0; i < 1000; ++i) {
      c.push_back(0);
      ch.push_back(rng.uniform(0, 50));
      lv.push_back(rng.normal(0, 1));
    }
    const auto cor = uncertainty_correlation(results(c, ch, lv));
    CHECK(std::abs(*cor.r) < 0.1);
  }
  SUBCASE("known p-value") {
    // r = 0.5 with n = 12: t = 0.5 * sqrt(10 / 0.75) = 1.8257, one-tailed p ~ 0.0490
    std::vector<double> x{1, 2, 3, 4, 5, 6, 7, 8, 9, 10, 11, 12};
    std::vector<double> noise{3, -1, -4, 2, 5, -3, 0, -5, 4, 1, -2, 0};
    // tune the mix so r is exactly 0.5: y = x_c + a * n_c with orthogonal n_c
    double mx = 6.5, mn = 0;
    for (double v : noise) mn += v / 12;
    double sxn = 0, sxx = 0;
    for (int i = 0; i < 12; ++i) {
      sxn += (x[i] - mx) * (noise[i] - mn);
      sxx += (x[i] - mx) * (x[i] - mx);
    }
    std::vector<double> nperp(12);
    double snn = 0;
    for (int i = 0; i < 12; ++i) {
      nperp[i] = noise[i] - mn - sxn / sxx * (x[i] - mx);
      snn += nperp[i] * nperp[i];
    }
    const double a = std::sqrt(3 * sxx / snn);  // r = 1 / sqrt(1 + a^2 snn / sxx) = 0.5
    std::vector<double> err(12), zero(12, 0.0);
    for (int i = 0; i < 12; ++i) err[i] = 100 + (x[i] - mx) + a * nperp[i];
    const auto cor = uncertainty_correlation(results(zero, err, x));
    CHECK(*cor.r == doctest::Approx(0.5).epsilon(1e-9));
    CHECK(*cor.p_one_tailed == doctest::Approx(0.0490).epsilon(2e-3));
  }
  SUBCASE("undefined") {
    CHECK_FALSE(uncertainty_correlation(results({0, 0}, {1, 2}, {1, 2})).r);
    CHECK_FALSE(uncertainty_correlation(results({0, 0, 0}, {1, 2, 3}, {1, 1, 1})).r);
  }
}

TEST_CASE("report") {
  auto r = results({10, 30, 200, 5}, {12, 28, 190, 5}, {0.5, 1.0, 2.0, -0.1});
  r[2].subgroup = Subgroup::ge150;
  const auto rep = make_report(r);
  CHECK(rep.mae == doctest::Approx(3.5));
  CHECK(rep.mae <= rep.rmse);
  CHECK(rep.subgroup_size.at(Subgroup::lt25) == 3);
  CHECK(rep.subgroup_size.at(Subgroup::noise) == 0);
  CHECK(*rep.nmae.at(Subgroup::lt25) == doctest::Approx(4.0 / 45).epsilon(1e-12));
  CHECK(*rep.nmae.at(Subgroup::ge150) == doctest::Approx(0.05).epsilon(1e-12));
  CHECK_FALSE(rep.nmae.at(Subgroup::noise));
  CHECK(rep.share_logvar_0_to_1_7 == 0.5);
  CHECK(format_metric(std::nullopt) == "NA");
  CHECK(format_metric(0.125) == "0.125000");
}

TEST_CASE("colour ramp") {
  const auto& ramp = heat_ramp();
  CHECK(ramp[0] == std::array<std::uint8_t, 3>{0, 0, 255});
  CHECK(ramp[255] == std::array<std::uint8_t, 3>{255, 0, 0});
  // hue runs blue to red: red never decreases, blue never increases
  for (int i = 1; i < 256; ++i) {
    CHECK(ramp[i][0] >= ramp[i - 1][0]);
    CHECK(ramp[i][2] <= ramp[i - 1][2]);
  }
}

TEST_CASE("heat-maps") {
  const RawImage base(64, 96);
  SUBCASE("all zero is uniformly cold") {
    const auto out = render_heatmap(DensityMap(2, 3), base);
    CHECK(out.height == 64);
    CHECK(out.width == 96);
    for (int y = 0; y < 64; ++y)
      for (int x = 0; x < 96; ++x) {
        CHECK(out.at(y, x, 0) == 0);
        CHECK(out.at(y, x, 2) == 128);
      }
  }
  SUBCASE("one hot cell gives one red block") {
    DensityMap d(2, 3);
    d.at(1, 2) = 0.7;
    const auto out = render_heatmap(d, base);
    int red = 0;
    for (int y = 0; y < 64; ++y)
      for (int x = 0; x < 96; ++x) {
        const bool hot = out.at(y, x, 0) == 128 && out.at(y, x, 2) == 0;
        CHECK(hot == (y >= 32 && x >= 64));
        red += hot;
      }
    CHECK(red == 32 * 32);
  }
}

TEST_CASE("evaluate with a constant-zero model") {
  ModelConfig m;
  m.stage_channels = {4, 4, 8, 8, 8};
  m.input_h = 64;
  m.input_w = 64;
  auto p = init_params(m, 1);
  for (auto& v : p.get("head.weight").values) v = 0;
  SynthSpec spec;
  spec.height = 64;
  spec.width = 64;
  spec.counts = {CountDistribution::Kind::log_uniform, 0, 60, 0};
  spec.seed = 3;
  const auto data = generate_dataset(spec, 12, 0);
  double mean = 0;
  for (const auto& s : data.labelled) mean += static_cast<double>(s.count()) / 12;
  const Network<float> net(m);
  const auto dir = fs::temp_directory_path() / "schoolcount_eval_test";
  fs::remove_all(dir);
  const auto rep = evaluate(net, p, data.labelled, {kNoiseAreaThreshold, dir});
  CHECK(rep.mae == doctest::Approx(mean).epsilon(1e-9));
  CHECK(rep.per_sample.size() == 12);
  CHECK(fs::exists(dir / (data.labelled[0].id + ".png")));

  const auto again = evaluate(net, p, data.labelled);
  CHECK(again.mae == rep.mae);
  CHECK(again.rmse == rep.rmse);
  write_summary_csv(dir / "summary.csv", rep);
  write_report_csv(dir / "report.csv", rep);
  const auto md = render_markdown_report(dir);
  CHECK(md.find("MAE") != std::string::npos);
}
