#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"
#include "schoolcount/checkpoint.hpp"
#include "schoolcount/imagedata.hpp"
#include "schoolcount/losses.hpp"
#include "schoolcount/network.hpp"
#include "schoolcount/optimizer.hpp"
#include "schoolcount/rankpairs.hpp"

namespace schoolcount {

struct TrainConfig {
  std::size_t K = 10;
  int epochs = 60;
  double lr = 1e-4;
  int lr_drop_epoch = 200;  // after this many epochs lr becomes lr_drop_to; <= 0 disables
  double lr_drop_to = 1e-5;
  AdamHyper adam;
  LossConfig loss;
  int patience = 20;  // epochs without a new best validation MAE
  std::uint64_t seed = 0;
  std::string init_from;  // checkpoint path; empty = fresh initialisation

  void validate() const;
  friend bool operator==(const TrainConfig&, const TrainConfig&) = default;
};

void to_json(nlohmann::json& j, const TrainConfig& config);
void from_json(const nlohmann::json& j, TrainConfig& config);

struct TrainData {
  std::span<const LabeledSample> train;
  std::span<const LabeledSample> val;
  const PairSet* pairs = nullptr;  // required when the loss uses ranking
};

// Indices into the labelled pool and the pair pool.
struct Batch {
  std::vector<std::size_t> labelled;
  std::vector<std::size_t> pairs;
};

std::size_t steps_per_epoch(std::size_t n_labelled, std::size_t K);

// Step s belongs to epoch s / steps_per_epoch. Within an epoch the labelled
// pool is visited once in an order shuffled by (seed, epoch); the last batch
// of an epoch may be short. Pairs (n_pairs > 0) are K consecutive entries of
// a per-epoch permutation of the pair pool, or K draws with replacement when
// the pool holds fewer than K pairs.
Batch compose_batch(std::size_t n_labelled, std::size_t n_pairs, std::size_t K, std::uint64_t step,
                    std::uint64_t seed);

struct EpochRecord {
  int epoch = 0;
  double L_c = 0, L_cau = 0, L_r = 0, L_ieb = 0, total = 0;  // means over the epoch's batches
  double val_mae = 0;
  double lr = 0;
  friend bool operator==(const EpochRecord&, const EpochRecord&) = default;
};

struct TrainState {
  ModelParams params;
  AdamState adam;
  int epoch = 0;  // completed epochs
  ModelParams best;
  double best_val_mae = 0.0;
  int best_epoch = 0;
  int epochs_since_best = 0;
  bool stopped = false;  // early-stopped or diverged
  std::string divergence;  // non-empty once training hit a NaN
  std::vector<EpochRecord> history;
};

// Starting parameters are `init` when given, else config.init_from, else a
// fresh initialisation. Moments start at zero and the validation MAE of the
// starting point is recorded as the first best.
TrainState initial_state(const ModelConfig& model, const TrainConfig& config, const TrainData& data,
                         const ModelParams* init = nullptr);

// Runs epochs state.epoch+1 .. config.epochs unless stopped. `on_epoch` is
// called after every completed epoch (e.g. to write a resumable checkpoint).
void run_training(TrainState& state, const ModelConfig& model, const TrainConfig& config, const TrainData& data,
                  const std::function<void(const TrainState&)>& on_epoch = {});

struct TrainResult {
  TrainState state;
  const ModelParams& best() const { return state.best; }
};

TrainResult train(const ModelConfig& model, const TrainConfig& config, const TrainData& data,
                  const ModelParams* init = nullptr);

// One optimisation step on an explicit batch; returns the batch loss.
// Exposed for the overfit probe and tests.
BatchLoss<double> train_step(const Network<float>& net, TrainState& state, const TrainConfig& config,
                             const TrainData& data, const Batch& batch);

Checkpoint to_checkpoint(const TrainState& state, const ModelConfig& model, const TrainConfig& config);
TrainState from_checkpoint(const Checkpoint& checkpoint);
// Best weights only (what `eval` and `infer` load).
Checkpoint best_checkpoint(const TrainState& state, const ModelConfig& model, const TrainConfig& config);

void write_history_csv(const std::filesystem::path& file, std::span<const EpochRecord> history);

// --- ablation ------------------------------------------------------------------

struct AblationRow {
  std::string id;      // "i" .. "ix"
  std::string method;  // e.g. "MT + AU-reg"
  LossConfig loss;
  bool augmented = false;
  std::string init_row;  // row whose trained weights seed this one; empty = fresh
};

// The nine rows with their loss, data and initialisation columns.
const std::vector<AblationRow>& ablation_rows();

struct AblationConfig {
  TrainConfig uni_task;    // rows i-iv (lr drop applies)
  TrainConfig multi_task;  // rows v-ix (continued training, no lr drop)
  std::vector<std::string> rows;  // empty = all nine; dependencies are added automatically
  int trials = 3;
  std::uint64_t seed = 0;
};

void to_json(nlohmann::json& j, const AblationConfig& config);
void from_json(const nlohmann::json& j, AblationConfig& config);

struct AblationData {
  std::span<const LabeledSample> train;
  std::span<const LabeledSample> augmented_train;
  std::span<const LabeledSample> val;
  std::span<const LabeledSample> test;
  const PairSet* pairs = nullptr;
};

struct TrialResult {
  std::optional<double> mae, rmse;
  std::string error;
};

struct AblationRowResult {
  AblationRow row;
  std::vector<TrialResult> trials;
  std::optional<double> mean_mae() const;
  std::optional<double> mean_rmse() const;
};

struct AblationResult {
  std::vector<AblationRowResult> rows;  // in table order
};

std::uint64_t trial_seed(std::uint64_t seed, int trial);

// Trains every requested row for every trial; a failing trial is recorded and
// the suite continues (rows initialised from it fail too). `on_progress`
// receives one line per finished row/trial.
AblationResult run_ablation_suite(const ModelConfig& model, const AblationConfig& config, const AblationData& data,
                                  const std::function<void(const std::string&)>& on_progress = {});

// method,MAE_avg,RMSE_avg,MAE_t1,RMSE_t1,... one row per method.
std::string ablation_csv(const AblationResult& result);

}  // namespace schoolcount
