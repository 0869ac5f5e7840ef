#include <algorithm>
#include <cstring>
#include <filesystem>
#include <limits>
#include <set>

#include "doctest.h"
#include "schoolcount/error.hpp"
#include "schoolcount/imagedata.hpp"
#include "schoolcount/synthgen.hpp"
#include "schoolcount/trainer.hpp"

using namespace schoolcount;
namespace fs = std::filesystem;

namespace {

ModelConfig small_model() {
  ModelConfig m;
  m.stage_channels = {4, 4, 8, 8, 8};
  m.input_h = 64;
  m.input_w = 64;
  return m;
}

struct Fixture {
  SynthDataset data;
  std::vector<LabeledSample> train, val;
  PairSet pairs;

  Fixture() {
    SynthSpec spec;
    spec.height = 64;
    spec.width = 64;
    spec.counts = {CountDistribution::Kind::log_uniform, 0, 40, 0};
    spec.seed = 17;
    data = generate_dataset(spec, 16, 4);
    train.assign(data.labelled.begin(), data.labelled.begin() + 12);
    val.assign(data.labelled.begin() + 12, data.labelled.end());
    pairs = generate_pairs(data.unlabelled, 20, 3, Background{0, 0, 0});
  }
  TrainData td() const { return {train, val, &pairs}; }
};

const Fixture& fixture() {
  static const Fixture f;
  return f;
}

TrainConfig quick(int epochs) {
  TrainConfig c;
  c.K = 4;
  c.epochs = epochs;
  c.lr = 1e-3;
  c.seed = 5;
  c.loss.use_rank = true;
  c.loss.use_au = true;
  return c;
}

bool same(const ModelParams& a, const ModelParams& b) {
  if (a.tensors.size() != b.tensors.size()) return false;
  for (std::size_t i = 0; i < a.tensors.size(); ++i) {
    const auto& x = a.tensors[i].values;
    const auto& y = b.tensors[i].values;
    if (x.size() != y.size() || std::memcmp(x.data(), y.data(), x.size() * sizeof(float)) != 0) return false;
  }
  return true;
}

}  // namespace

TEST_CASE("batches cover the labelled pool once per epoch") {
  const std::size_t n = 23, K = 5;
  CHECK(steps_per_epoch(n, K) == 5);
  for (std::uint64_t epoch = 0; epoch < 3; ++epoch) {
    std::multiset<std::size_t> seen;
    for (std::uint64_t b = 0; b < 5; ++b) {
      const auto batch = compose_batch(n, 0, K, epoch * 5 + b, 9);
      CHECK(batch.labelled.size() == (b == 4 ? 3u : 5u));
      CHECK(batch.pairs.empty());
      seen.insert(batch.labelled.begin(), batch.labelled.end());
    }
    CHECK(seen.size() == n);
    CHECK(std::set<std::size_t>(seen.begin(), seen.end()).size() == n);
  }
  CHECK(compose_batch(n, 0, K, 0, 9).labelled != compose_batch(n, 0, K, 5, 9).labelled);
  CHECK(compose_batch(n, 0, K, 3, 9).labelled == compose_batch(n, 0, K, 3, 9).labelled);
  CHECK(compose_batch(n, 0, K, 3, 9).labelled != compose_batch(n, 0, K, 3, 10).labelled);
}

TEST_CASE("pairs per batch") {
  SUBCASE("window over a permutation") {
    const auto a = compose_batch(20, 100, 10, 0, 1), b = compose_batch(20, 100, 10, 1, 1);
    CHECK(a.pairs.size() == 10);
    std::set<std::size_t> u(a.pairs.begin(), a.pairs.end());
    u.insert(b.pairs.begin(), b.pairs.end());
    CHECK(u.size() == 20);
  }
  SUBCASE("draws with replacement from a small pool") {
    for (std::uint64_t s = 0; s < 20; ++s) {
      const auto batch = compose_batch(20, 3, 10, s, 1);
      CHECK(batch.pairs.size() == 10);
      for (auto p : batch.pairs) CHECK(p < 3);
    }
  }
  CHECK_THROWS_AS(compose_batch(0, 0, 10, 0, 1), ValidationError);
  CHECK_THROWS_AS(compose_batch(10, 0, 0, 0, 1), ValidationError);
}

TEST_CASE("zero epochs leaves the initial weights") {
  auto cfg = quick(0);
  const auto res = train(small_model(), cfg, fixture().td());
  CHECK(res.state.history.empty());
  CHECK(res.state.epoch == 0);
  CHECK(same(res.state.params, res.state.best));
  auto fresh = init_params(small_model(), derive_seed(cfg.seed, "trainer.init"));
  set_input_mean(fresh, fixture().train);
  CHECK(same(res.state.params, fresh));
}

TEST_CASE("training reduces the training loss") {
  const auto& f = fixture();
  auto cfg = quick(0);
  cfg.loss = LossConfig{};
  cfg.lr = 3e-3;
  const auto model = small_model();
  auto st = initial_state(model, cfg, f.td());
  const Network<float> net(model);
  Batch batch{{0, 1, 2, 3}, {}};
  const double first = train_step(net, st, cfg, f.td(), batch).total;
  double last = first;
  for (int i = 0; i < 150; ++i) last = train_step(net, st, cfg, f.td(), batch).total;
  CHECK(last < 0.5 * first);
}

TEST_CASE("resuming from a checkpoint equals an uninterrupted run") {
  const auto& f = fixture();
  const auto model = small_model();
  auto cfg = quick(4);
  cfg.lr_drop_epoch = 2;
  cfg.lr_drop_to = 2e-4;
  const auto full = train(model, cfg, f.td());
  REQUIRE(full.state.history.size() == 4);

  auto half_cfg = cfg;
  half_cfg.epochs = 2;
  const auto half = train(model, half_cfg, f.td());
  const auto file = fs::temp_directory_path() / "schoolcount_resume.ckpt";
  save_checkpoint(to_checkpoint(half.state, model, half_cfg), file);
  auto resumed = from_checkpoint(load_checkpoint(file, &model));
  CHECK(resumed.adam.lr == 2e-4);
  run_training(resumed, model, cfg, f.td());

  CHECK(same(resumed.params, full.state.params));
  CHECK(same(resumed.best, full.state.best));
  CHECK(same(resumed.adam.m, full.state.adam.m));
  CHECK(resumed.adam.step == full.state.adam.step);
  CHECK(resumed.history == full.state.history);
  CHECK(resumed.best_epoch == full.state.best_epoch);
  CHECK(full.state.history[1].lr == 1e-3);
  CHECK(full.state.history[2].lr == 2e-4);
}

TEST_CASE("early stopping") {
  auto cfg = quick(40);
  cfg.lr = 0.05;
  cfg.patience = 2;
  const auto res = train(small_model(), cfg, fixture().td());
  REQUIRE(res.state.stopped);
  CHECK(res.state.divergence.empty());
  CHECK(res.state.epoch < 40);
  CHECK(res.state.epoch - res.state.best_epoch == 2);
  for (const auto& r : res.state.history)
    if (r.epoch > res.state.best_epoch) CHECK(r.val_mae >= res.state.best_val_mae);
}

TEST_CASE("divergence keeps the last good weights") {
  const auto& f = fixture();
  const auto model = small_model();
  auto cfg = quick(3);
  auto st = initial_state(model, cfg, f.td());
  const auto good = st.params;
  st.params.get("head.bias").values[0] = std::numeric_limits<float>::infinity();
  run_training(st, model, cfg, f.td());
  CHECK(st.stopped);
  CHECK_FALSE(st.divergence.empty());
  CHECK(same(st.params, good));
  CHECK(st.history.empty());
}

TEST_CASE("data checks") {
  const auto& f = fixture();
  auto cfg = quick(1);
  CHECK_THROWS_AS(train(small_model(), cfg, TrainData{f.train, f.val, nullptr}), ValidationError);
  auto other = small_model();
  other.input_w = 96;
  CHECK_THROWS_AS(train(other, cfg, f.td()), ValidationError);
  CHECK_THROWS_AS(train(small_model(), cfg, TrainData{f.train, {}, &f.pairs}), ValidationError);
}

TEST_CASE("ablation table") {
  const auto& rows = ablation_rows();
  REQUIRE(rows.size() == 9);
  CHECK(rows[0].id == "i");
  CHECK(rows[7].id == "viii");
  CHECK(rows[7].loss.use_au);
  CHECK(rows[7].loss.use_rank);
  CHECK_FALSE(rows[7].loss.use_ieb);
  CHECK(rows[4].augmented);
  CHECK(rows[4].init_row == "i");
  CHECK(rows[8].init_row == "iii");
}

TEST_CASE("ablation csv is reproducible") {
  const auto& f = fixture();
  AblationConfig cfg;
  cfg.uni_task = quick(2);
  cfg.multi_task = quick(1);
  cfg.multi_task.lr_drop_epoch = 0;
  cfg.rows = {"vi"};
  cfg.trials = 2;
  cfg.seed = 4;
  const std::vector<LabeledSample> test(f.val.begin(), f.val.end());
  AblationData data{f.train, f.train, f.val, test, &f.pairs};
  const auto a = ablation_csv(run_ablation_suite(small_model(), cfg, data));
  const auto b = ablation_csv(run_ablation_suite(small_model(), cfg, data));
  CHECK(a == b);
  CHECK(a.rfind("method,MAE_avg,RMSE_avg,MAE_t1,RMSE_t1,MAE_t2,RMSE_t2\n(i) UT,", 0) == 0);
  CHECK(a.find("\n(vi) MT,") != std::string::npos);
}

TEST_CASE("config json") {
  auto c = quick(7);
  c.init_from = "x.ckpt";
  const nlohmann::json j = c;
  CHECK(j.get<TrainConfig>() == c);
  c.K = 0;
  CHECK_THROWS_AS(c.validate(), ValidationError);
  const auto a = nlohmann::json::parse(R"({"uni_task": {"epochs": 3}, "rows": ["viii"]})").get<AblationConfig>();
  CHECK(a.multi_task.lr_drop_epoch == 0);
  CHECK(a.uni_task.epochs == 3);
  CHECK_THROWS_AS(nlohmann::json::parse(R"({"rows": ["x"]})").get<AblationConfig>(), ValidationError);
}
