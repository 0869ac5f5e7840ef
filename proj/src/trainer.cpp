#include "schoolcount/trainer.hpp"

#include <omp.h>

#include <cmath>
#include <cstdio>
#include <map>
#include <numeric>
#include <set>
#include <sstream>

#include "schoolcount/error.hpp"
#include "schoolcount/evaluation.hpp"
#include "schoolcount/rng.hpp"

namespace schoolcount {

using nlohmann::json;

// --- config --------------------------------------------------------------------

void TrainConfig::validate() const {
  if (K < 1) throw ValidationError("trainer", "K must be >= 1");
  if (epochs < 0) throw ValidationError("trainer", "epochs must be >= 0");
  if (!(lr > 0.0)) throw ValidationError("trainer", "lr must be > 0");
  if (lr_drop_epoch > 0 && !(lr_drop_to > 0.0)) throw ValidationError("trainer", "lr_drop_to must be > 0");
  if (patience < 1) throw ValidationError("trainer", "patience must be >= 1");
  if (!(adam.beta1 >= 0.0 && adam.beta1 < 1.0 && adam.beta2 >= 0.0 && adam.beta2 < 1.0 && adam.eps > 0.0)) {
    throw ValidationError("trainer", "Adam betas must lie in [0, 1) and eps must be > 0");
  }
  loss.validate();
}

void to_json(json& j, const TrainConfig& c) {
  j = {{"K", c.K},
       {"epochs", c.epochs},
       {"lr", c.lr},
       {"lr_drop_epoch", c.lr_drop_epoch},
       {"lr_drop_to", c.lr_drop_to},
       {"adam", {{"beta1", c.adam.beta1}, {"beta2", c.adam.beta2}, {"eps", c.adam.eps}}},
       {"loss", c.loss},
       {"patience", c.patience},
       {"seed", c.seed},
       {"init_from", c.init_from}};
}

void from_json(const json& j, TrainConfig& c) {
  c = TrainConfig{};
  c.K = j.value("K", c.K);
  c.epochs = j.value("epochs", c.epochs);
  c.lr = j.value("lr", c.lr);
  c.lr_drop_epoch = j.value("lr_drop_epoch", c.lr_drop_epoch);
  c.lr_drop_to = j.value("lr_drop_to", c.lr_drop_to);
  if (j.contains("adam")) {
    const auto& a = j.at("adam");
    c.adam.beta1 = a.value("beta1", c.adam.beta1);
    c.adam.beta2 = a.value("beta2", c.adam.beta2);
    c.adam.eps = a.value("eps", c.adam.eps);
  }
  if (j.contains("loss")) c.loss = j.at("loss").get<LossConfig>();
  c.patience = j.value("patience", c.patience);
  c.seed = j.value("seed", c.seed);
  c.init_from = j.value("init_from", c.init_from);
  c.validate();
}

// --- batches -------------------------------------------------------------------

std::size_t steps_per_epoch(std::size_t n_labelled, std::size_t K) { return (n_labelled + K - 1) / K; }

Batch compose_batch(std::size_t n_labelled, std::size_t n_pairs, std::size_t K, std::uint64_t step,
                    std::uint64_t seed) {
  if (n_labelled == 0) throw ValidationError("trainer", "labelled pool is empty");
  if (K == 0) throw ValidationError("trainer", "K must be >= 1");
  const std::size_t spe = steps_per_epoch(n_labelled, K);
  const std::uint64_t epoch = step / spe;
  const std::size_t b = step % spe;

  std::vector<std::size_t> order(n_labelled);
  std::iota(order.begin(), order.end(), std::size_t{0});
  Rng(derive_seed(seed, "batch.order", epoch)).shuffle(order.begin(), order.end());
  Batch batch;
  const std::size_t lo = b * K, hi = std::min(n_labelled, lo + K);
  batch.labelled.assign(order.begin() + static_cast<std::ptrdiff_t>(lo), order.begin() + static_cast<std::ptrdiff_t>(hi));

  if (n_pairs >= K) {
    std::vector<std::size_t> perm(n_pairs);
    std::iota(perm.begin(), perm.end(), std::size_t{0});
    Rng(derive_seed(seed, "batch.pairs", epoch)).shuffle(perm.begin(), perm.end());
    for (std::size_t j = 0; j < K; ++j) batch.pairs.push_back(perm[(b * K + j) % n_pairs]);
  } else if (n_pairs > 0) {
    Rng rng(derive_seed(seed, "batch.pairs.draw", step));
    for (std::size_t j = 0; j < K; ++j) batch.pairs.push_back(static_cast<std::size_t>(rng.below(n_pairs)));
  }
  return batch;
}

// --- training ------------------------------------------------------------------

namespace {

void check_data(const ModelConfig& model, const TrainConfig& config, const TrainData& data) {
  if (data.train.empty()) throw ValidationError("trainer", "training set is empty");
  if (data.val.empty()) throw ValidationError("trainer", "validation set is empty");
  if (config.loss.use_rank && (!data.pairs || data.pairs->size() == 0)) {
    throw ValidationError("trainer", "ranking loss enabled but no pairs were supplied");
  }
  auto check = [&](const RawImage& im, const std::string& id) {
    if (im.height != model.input_h || im.width != model.input_w) {
      throw ValidationError("trainer", "image '" + id + "' is " + std::to_string(im.height) + "x" +
                                           std::to_string(im.width) + ", model expects " +
                                           std::to_string(model.input_h) + "x" + std::to_string(model.input_w));
    }
  };
  for (const auto& s : data.train) check(s.image, s.id);
  for (const auto& s : data.val) check(s.image, s.id);
}

double validation_mae(const Network<float>& net, const ModelParams& params, std::span<const LabeledSample> val) {
  const auto pred = predict(net, params, val);
  double s = 0.0;
  for (std::size_t i = 0; i < val.size(); ++i) s += std::abs(static_cast<double>(val[i].count()) - pred[i].count);
  return s / static_cast<double>(val.size());
}

}  // namespace

TrainState initial_state(const ModelConfig& model, const TrainConfig& config, const TrainData& data,
                         const ModelParams* init) {
  config.validate();
  check_data(model, config, data);
  TrainState st;
  if (init) {
    st.params = *init;
    if (st.params.tensors.size() != make_param_layout(model).tensors.size()) {
      throw ValidationError("trainer", "initial parameters do not match the model configuration");
    }
  } else if (!config.init_from.empty()) {
    st.params = load_checkpoint(config.init_from, &model).params;
  } else {
    st.params = init_params(model, derive_seed(config.seed, "trainer.init"));
    set_input_mean(st.params, data.train);
  }
  st.adam = AdamState::like(st.params, config.lr, config.adam);
  Network<float> net(model);
  st.best = st.params;
  st.best_val_mae = validation_mae(net, st.params, data.val);
  st.best_epoch = 0;
  return st;
}

BatchLoss<double> train_step(const Network<float>& net, TrainState& state, const TrainConfig& config,
                             const TrainData& data, const Batch& batch) {
  const std::size_t nl = batch.labelled.size();
  const std::size_t np = config.loss.use_rank ? batch.pairs.size() : 0;
  const long items = static_cast<long>(nl + 2 * np);
  auto image_of = [&](long i) -> const RawImage& {
    if (i < static_cast<long>(nl)) return data.train[batch.labelled[i]].image;
    const std::size_t k = static_cast<std::size_t>(i) - nl;
    return k % 2 == 0 ? data.pairs->first(batch.pairs[k / 2]).image : data.pairs->second(batch.pairs[k / 2]).image;
  };

  std::vector<Tape<float>> tapes(items);
  std::vector<ModelOutput<float>> outs(items);
  std::string error;
#pragma omp parallel for schedule(dynamic, 1)
  for (long i = 0; i < items; ++i) {
    try {
      outs[i] = net.forward(state.params, image_of(i), &tapes[i]);
    } catch (const std::exception& e) {
#pragma omp critical
      if (error.empty()) error = e.what();
    }
  }
  if (!error.empty()) throw ShapeError("trainer", error);

  LossInputs<double> in;
  for (std::size_t i = 0; i < nl; ++i) {
    in.c.push_back(static_cast<double>(data.train[batch.labelled[i]].count()));
    in.c_hat.push_back(outs[i].count());
    in.logvar.push_back(outs[i].logvar());
  }
  for (std::size_t k = 0; k < np; ++k) {
    in.p.push_back(gap_count(outs[nl + 2 * k]));
    in.p2.push_back(gap_count(outs[nl + 2 * k + 1]));
  }
  BatchLoss<double> loss = total_loss(config.loss, in);
  if (!std::isfinite(loss.total)) throw NumericError("trainer", "loss is not finite");

  // per-item gradients, summed afterwards in item order so the result does not
  // depend on how items were spread over threads
  std::vector<ModelParams> item_grads(items);
#pragma omp parallel for schedule(dynamic, 1)
  for (long i = 0; i < items; ++i) {
    const std::size_t cells = outs[i].density.size();
    OutputGrad<float> d;
    if (i < static_cast<long>(nl)) {
      d.density.assign(cells, static_cast<float>(loss.d_c_hat[i]));
      d.logvar_map.assign(cells, static_cast<float>(loss.d_logvar[i]));
    } else {
      const std::size_t k = static_cast<std::size_t>(i) - nl;
      const double g = k % 2 == 0 ? loss.d_p[k / 2] : loss.d_p2[k / 2];
      d.density.assign(cells, static_cast<float>(g / static_cast<double>(cells)));
    }
    item_grads[i] = state.params.zeros_like();
    net.backward(state.params, tapes[i], d, item_grads[i]);
    tapes[i] = {};
  }
  ModelParams grads = state.params.zeros_like();
  for (const auto& g : item_grads) grads.accumulate(g);
  adam_step(state.params, state.adam, grads);
  return loss;
}

void run_training(TrainState& state, const ModelConfig& model, const TrainConfig& config, const TrainData& data,
                  const std::function<void(const TrainState&)>& on_epoch) {
  config.validate();
  check_data(model, config, data);
  Network<float> net(model);
  const std::size_t spe = steps_per_epoch(data.train.size(), config.K);
  const std::size_t n_pairs = config.loss.use_rank ? data.pairs->size() : 0;

  for (int e = state.epoch + 1; e <= config.epochs && !state.stopped; ++e) {
    EpochRecord rec;
    rec.epoch = e;
    rec.lr = state.adam.lr;
    try {
      for (std::size_t b = 0; b < spe; ++b) {
        const std::uint64_t step = static_cast<std::uint64_t>(e - 1) * spe + b;
        const Batch batch = compose_batch(data.train.size(), n_pairs, config.K, step, config.seed);
        const auto loss = train_step(net, state, config, data, batch);
        rec.L_c += loss.L_c;
        rec.L_cau += loss.L_cau;
        rec.L_r += loss.L_r;
        rec.L_ieb += loss.L_ieb;
        rec.total += loss.total;
      }
      rec.val_mae = validation_mae(net, state.params, data.val);
      if (!std::isfinite(rec.val_mae)) throw NumericError("trainer", "validation MAE is not finite");
    } catch (const NumericError& ex) {
      // keep the last good weights; the caller sees `divergence`
      state.divergence = "epoch " + std::to_string(e) + ": " + ex.what();
      state.params = state.best;
      state.stopped = true;
      break;
    }
    const double n = static_cast<double>(spe);
    rec.L_c /= n;
    rec.L_cau /= n;
    rec.L_r /= n;
    rec.L_ieb /= n;
    rec.total /= n;
    state.history.push_back(rec);
    if (rec.val_mae < state.best_val_mae) {
      state.best = state.params;
      state.best_val_mae = rec.val_mae;
      state.best_epoch = e;
      state.epochs_since_best = 0;
    } else {
      ++state.epochs_since_best;
    }
    if (config.lr_drop_epoch > 0 && e == config.lr_drop_epoch) state.adam.lr = config.lr_drop_to;
    state.epoch = e;
    if (state.epochs_since_best >= config.patience) state.stopped = true;
    if (on_epoch) on_epoch(state);
  }
}

TrainResult train(const ModelConfig& model, const TrainConfig& config, const TrainData& data,
                  const ModelParams* init) {
  TrainResult r{initial_state(model, config, data, init)};
  run_training(r.state, model, config, data);
  return r;
}

// --- persistence ---------------------------------------------------------------

namespace {

json history_json(std::span<const EpochRecord> history) {
  json h = json::array();
  for (const auto& r : history) {
    h.push_back({r.epoch, r.L_c, r.L_cau, r.L_r, r.L_ieb, r.total, r.val_mae, r.lr});
  }
  return h;
}

}  // namespace

Checkpoint to_checkpoint(const TrainState& state, const ModelConfig& model, const TrainConfig& config) {
  Checkpoint ck;
  ck.model = model;
  ck.epoch = static_cast<std::uint32_t>(state.epoch);
  ck.params = state.params;
  ck.optimizer = state.adam;
  ck.best = state.best;
  ck.state = {{"train_config", config},
              {"best_val_mae", state.best_val_mae},
              {"best_epoch", state.best_epoch},
              {"epochs_since_best", state.epochs_since_best},
              {"stopped", state.stopped},
              {"divergence", state.divergence},
              {"history", history_json(state.history)}};
  return ck;
}

TrainState from_checkpoint(const Checkpoint& ck) {
  if (!ck.optimizer || !ck.best) {
    throw CheckpointError("trainer", "checkpoint holds no optimizer state; it cannot be resumed");
  }
  TrainState st;
  st.params = ck.params;
  st.adam = *ck.optimizer;
  st.epoch = static_cast<int>(ck.epoch);
  st.best = *ck.best;
  try {
    st.best_val_mae = ck.state.at("best_val_mae").get<double>();
    st.best_epoch = ck.state.at("best_epoch").get<int>();
    st.epochs_since_best = ck.state.at("epochs_since_best").get<int>();
    st.stopped = ck.state.at("stopped").get<bool>();
    st.divergence = ck.state.at("divergence").get<std::string>();
    for (const auto& r : ck.state.at("history")) {
      st.history.push_back({r.at(0).get<int>(), r.at(1).get<double>(), r.at(2).get<double>(), r.at(3).get<double>(),
                            r.at(4).get<double>(), r.at(5).get<double>(), r.at(6).get<double>(),
                            r.at(7).get<double>()});
    }
  } catch (const json::exception& e) {
    throw CheckpointError("trainer", std::string("trainer state is incomplete: ") + e.what());
  }
  return st;
}

Checkpoint best_checkpoint(const TrainState& state, const ModelConfig& model, const TrainConfig& config) {
  Checkpoint ck;
  ck.model = model;
  ck.epoch = static_cast<std::uint32_t>(state.best_epoch);
  ck.params = state.best;
  ck.state = {{"train_config", config}, {"best_val_mae", state.best_val_mae}};
  return ck;
}

void write_history_csv(const std::filesystem::path& file, std::span<const EpochRecord> history) {
  std::ostringstream s;
  s << "epoch,L_c,L_cau,L_r,L_ieb,total,val_MAE,lr\n";
  char buf[256];
  for (const auto& r : history) {
    std::snprintf(buf, sizeof buf, "%d,%.6f,%.6f,%.6f,%.6f,%.6f,%.6f,%g\n", r.epoch, r.L_c, r.L_cau, r.L_r, r.L_ieb,
                  r.total, r.val_mae, r.lr);
    s << buf;
  }
  write_text_file(file, s.str());
}

// --- ablation ------------------------------------------------------------------

const std::vector<AblationRow>& ablation_rows() {
  static const std::vector<AblationRow> rows = [] {
    auto loss = [](bool au, bool rank, bool ieb) {
      LossConfig l;
      l.use_au = au;
      l.use_rank = rank;
      l.use_ieb = ieb;
      return l;
    };
    return std::vector<AblationRow>{
        {"i", "UT", loss(false, false, false), false, ""},
        {"ii", "UT + IEB-reg", loss(false, false, true), false, ""},
        {"iii", "UT + AU-reg", loss(true, false, false), false, ""},
        {"iv", "UT + IEB-reg & AU-reg", loss(true, false, true), false, ""},
        {"v", "UT + augmented data", loss(false, false, false), true, "i"},
        {"vi", "MT", loss(false, true, false), true, "i"},
        {"vii", "MT + IEB-reg", loss(false, true, true), true, "ii"},
        {"viii", "MT + AU-reg", loss(true, true, false), true, "iii"},
        {"ix", "MT + IEB-reg & AU-reg", loss(true, true, true), true, "iii"},
    };
  }();
  return rows;
}

void to_json(json& j, const AblationConfig& c) {
  j = {{"uni_task", c.uni_task}, {"multi_task", c.multi_task}, {"rows", c.rows}, {"trials", c.trials}, {"seed", c.seed}};
}

void from_json(const json& j, AblationConfig& c) {
  c = AblationConfig{};
  if (j.contains("uni_task")) c.uni_task = j.at("uni_task").get<TrainConfig>();
  if (j.contains("multi_task")) {
    c.multi_task = j.at("multi_task").get<TrainConfig>();
  } else {
    c.multi_task.lr_drop_epoch = 0;
  }
  if (j.contains("rows")) c.rows = j.at("rows").get<std::vector<std::string>>();
  c.trials = j.value("trials", c.trials);
  c.seed = j.value("seed", c.seed);
  if (c.trials < 1) throw ValidationError("trainer", "trials must be >= 1");
  for (const auto& id : c.rows) {
    bool known = false;
    for (const auto& r : ablation_rows()) known = known || r.id == id;
    if (!known) throw ValidationError("trainer", "unknown ablation row '" + id + "'");
  }
}

std::optional<double> AblationRowResult::mean_mae() const {
  double s = 0.0;
  for (const auto& t : trials) {
    if (!t.mae) return std::nullopt;
    s += *t.mae;
  }
  return trials.empty() ? std::nullopt : std::optional<double>(s / static_cast<double>(trials.size()));
}

std::optional<double> AblationRowResult::mean_rmse() const {
  double s = 0.0;
  for (const auto& t : trials) {
    if (!t.rmse) return std::nullopt;
    s += *t.rmse;
  }
  return trials.empty() ? std::nullopt : std::optional<double>(s / static_cast<double>(trials.size()));
}

std::uint64_t trial_seed(std::uint64_t seed, int trial) {
  return derive_seed(seed, "ablation.trial", static_cast<std::uint64_t>(trial));
}

AblationResult run_ablation_suite(const ModelConfig& model, const AblationConfig& config, const AblationData& data,
                                  const std::function<void(const std::string&)>& on_progress) {
  const auto& all = ablation_rows();
  std::set<std::string> wanted(config.rows.begin(), config.rows.end());
  if (wanted.empty()) {
    for (const auto& r : all) wanted.insert(r.id);
  }
  // pull in initialisation dependencies (they always precede in table order)
  for (auto it = all.rbegin(); it != all.rend(); ++it) {
    if (wanted.count(it->id) && !it->init_row.empty()) wanted.insert(it->init_row);
  }
  if (data.test.empty()) throw ValidationError("trainer", "ablation test set is empty");

  AblationResult result;
  for (const auto& r : all) {
    if (wanted.count(r.id)) result.rows.push_back({r, {}});
  }
  Network<float> net(model);
  for (int t = 0; t < config.trials; ++t) {
    const std::uint64_t seed = trial_seed(config.seed, t);
    std::map<std::string, ModelParams> trained;
    for (auto& rr : result.rows) {
      const AblationRow& row = rr.row;
      TrialResult tr;
      try {
        const bool multi = !row.init_row.empty();
        TrainConfig cfg = multi ? config.multi_task : config.uni_task;
        const double lambda = cfg.loss.lambda, epsilon = cfg.loss.epsilon;
        cfg.loss = row.loss;
        cfg.loss.lambda = lambda;
        cfg.loss.epsilon = epsilon;
        cfg.seed = seed;
        cfg.init_from.clear();
        const ModelParams* init = nullptr;
        if (multi) {
          auto it = trained.find(row.init_row);
          if (it == trained.end()) throw ValidationError("trainer", "initialisation row (" + row.init_row + ") failed");
          init = &it->second;
        }
        TrainData td{row.augmented ? data.augmented_train : data.train, data.val,
                     row.loss.use_rank ? data.pairs : nullptr};
        if (row.augmented && data.augmented_train.empty()) throw ValidationError("trainer", "no augmented training set");
        auto res = train(model, cfg, td, init);
        if (!res.state.divergence.empty()) throw NumericError("trainer", res.state.divergence);
        const auto pred = predict(net, res.best(), data.test);
        std::vector<SampleResult> sr;
        for (std::size_t i = 0; i < data.test.size(); ++i) {
          sr.push_back({data.test[i].id, static_cast<double>(data.test[i].count()), pred[i].count, pred[i].logvar,
                        Subgroup::lt25});
        }
        tr.mae = mae(sr);
        tr.rmse = rmse(sr);
        trained.emplace(row.id, std::move(res.state.best));
      } catch (const std::exception& e) {
        tr.error = e.what();
      }
      if (on_progress) {
        char buf[160];
        if (tr.mae) {
          std::snprintf(buf, sizeof buf, "trial %d row (%s) %s: MAE %.4f RMSE %.4f", t + 1, row.id.c_str(),
                        row.method.c_str(), *tr.mae, *tr.rmse);
          on_progress(buf);
        } else {
          on_progress("trial " + std::to_string(t + 1) + " row (" + row.id + ") failed: " + tr.error);
        }
      }
      rr.trials.push_back(std::move(tr));
    }
  }
  return result;
}

std::string ablation_csv(const AblationResult& result) {
  std::ostringstream s;
  std::size_t trials = 0;
  for (const auto& r : result.rows) trials = std::max(trials, r.trials.size());
  s << "method,MAE_avg,RMSE_avg";
  for (std::size_t t = 1; t <= trials; ++t) s << ",MAE_t" << t << ",RMSE_t" << t;
  s << '\n';
  for (const auto& r : result.rows) {
    s << '(' << r.row.id << ") " << r.row.method << ',' << format_metric(r.mean_mae()) << ','
      << format_metric(r.mean_rmse());
    for (const auto& t : r.trials) s << ',' << format_metric(t.mae) << ',' << format_metric(t.rmse);
    s << '\n';
  }
  return s.str();
}

}  // namespace schoolcount
