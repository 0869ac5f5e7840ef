#include <zlib.h>

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"
#include "schoolcount/augment.hpp"
#include "schoolcount/checkpoint.hpp"
#include "schoolcount/densitymap.hpp"
#include "schoolcount/error.hpp"
#include "schoolcount/evaluation.hpp"
#include "schoolcount/imagedata.hpp"
#include "schoolcount/losses.hpp"
#include "schoolcount/parallel.hpp"
#include "schoolcount/png_io.hpp"
#include "schoolcount/rankpairs.hpp"
#include "schoolcount/synthgen.hpp"
#include "schoolcount/trainer.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace schoolcount;

namespace {

constexpr const char* kVersion = "0.1.0";

// --- manifests -------------------------------------------------------------

struct Manifest {
  std::string subcommand;
  std::vector<std::string> argv;
  std::string config;
  std::optional<std::uint64_t> seed;
  json inputs = json::object();
  json parameters = json::object();
  std::vector<fs::path> outputs;  // files or directories
};

std::string file_crc(const fs::path& file) {
  std::ifstream in(file, std::ios::binary);
  if (!in) throw IoError("cli", "cannot read " + file.string());
  uLong crc = crc32(0L, Z_NULL, 0);
  std::vector<char> buf(1 << 16);
  while (in) {
    in.read(buf.data(), static_cast<std::streamsize>(buf.size()));
    const auto got = in.gcount();
    if (got > 0) crc = crc32(crc, reinterpret_cast<const Bytef*>(buf.data()), static_cast<uInt>(got));
  }
  char hex[9];
  std::snprintf(hex, sizeof hex, "%08lx", static_cast<unsigned long>(crc));
  return hex;
}

void add_artifact(json& list, const fs::path& file, const fs::path& base) {
  list.push_back({{"path", fs::relative(file, base).generic_string()},
                  {"bytes", fs::file_size(file)},
                  {"crc32", file_crc(file)}});
}

// Written next to the primary outputs; lists every artifact with its size and
// CRC32 so a rerun can be compared byte for byte.
void write_manifest(const fs::path& file, const Manifest& m) {
  const fs::path base = file.parent_path().empty() ? fs::path(".") : file.parent_path();
  json artifacts = json::array();
  for (const auto& out : m.outputs) {
    if (fs::is_directory(out)) {
      std::vector<fs::path> files;
      for (const auto& e : fs::recursive_directory_iterator(out)) {
        if (e.is_regular_file() && e.path().filename() != "manifest.json") files.push_back(e.path());
      }
      std::sort(files.begin(), files.end());
      for (const auto& f : files) add_artifact(artifacts, f, base);
    } else if (fs::exists(out)) {
      add_artifact(artifacts, out, base);
    }
  }
  json doc = {{"tool", "schoolcount"},
              {"version", kVersion},
              {"subcommand", m.subcommand},
              {"argv", m.argv},
              {"config", m.config},
              {"seed", m.seed ? json(*m.seed) : json(nullptr)},
              {"inputs", m.inputs},
              {"parameters", m.parameters},
              {"artifacts", artifacts}};
  write_text_file(file, doc.dump(1) + "\n");
}

json read_json(const fs::path& file, const char* module) {
  try {
    return json::parse(read_text_file(file));
  } catch (const json::parse_error& e) {
    throw ParseError(module, "malformed JSON in " + file.string(), e.byte);
  }
}

template <typename T>
T from_json_checked(const json& j, const char* module, const std::string& what) {
  try {
    return j.get<T>();
  } catch (const json::exception& e) {
    throw ValidationError(module, "bad " + what + ": " + e.what());
  }
}

std::vector<int> count_strata(const std::vector<LabeledSample>& samples) {
  std::vector<int> s;
  s.reserve(samples.size());
  for (const auto& x : samples) s.push_back(classify_count(static_cast<double>(x.count())));
  return s;
}

std::vector<std::string> read_id_list(const fs::path& file) {
  std::istringstream in(read_text_file(file));
  std::vector<std::string> ids;
  for (std::string line; std::getline(in, line);) {
    if (!line.empty()) ids.push_back(line);
  }
  return ids;
}

// Training samples: the split's train ids, or a whole augmented directory.
std::vector<LabeledSample> load_train_set(const fs::path& data, const DatasetSplit& split, const fs::path& augmented) {
  if (augmented.empty()) return load_samples(data, split.train);
  const auto list = augmented / "ids.txt";
  const auto ids = fs::exists(list) ? read_id_list(list) : list_sample_ids(augmented);
  if (ids.empty()) throw ValidationError("cli", "no samples in " + augmented.string());
  return load_samples(augmented, ids);
}

struct RunConfig {
  ModelConfig model;
  TrainConfig train;
};

RunConfig load_run_config(const fs::path& file) {
  const json doc = read_json(file, "cli");
  RunConfig c;
  if (doc.contains("model")) c.model = from_json_checked<ModelConfig>(doc.at("model"), "network", "model config");
  if (doc.contains("train")) c.train = from_json_checked<TrainConfig>(doc.at("train"), "trainer", "train config");
  c.model.validate();
  c.train.validate();
  return c;
}

// --- subcommands -----------------------------------------------------------

struct SynthArgs {
  std::string spec, out;
  std::size_t labelled = 500, unlabelled = 0;
  std::optional<std::uint64_t> seed, split_seed;
};

int run_synth(const SynthArgs& a, Manifest& m) {
  SynthSpec spec;
  if (!a.spec.empty()) spec = from_json_checked<SynthSpec>(read_json(a.spec, "synthgen"), "synthgen", "synth spec");
  if (a.seed) spec.seed = *a.seed;
  spec.validate();
  const fs::path out = a.out;
  fs::create_directories(out);
  const auto data = generate_dataset(spec, a.labelled, a.unlabelled);
  for (const auto& s : data.labelled) save_sample(out, s);
  for (const auto& u : data.unlabelled) save_unlabelled(out / "unlabelled", u);

  std::vector<std::string> ids;
  for (const auto& s : data.labelled) ids.push_back(s.id);
  const std::uint64_t split_seed = a.split_seed ? *a.split_seed : derive_seed(spec.seed, "synth.split");
  const auto strata = count_strata(data.labelled);
  const auto split = split_dataset(ids, strata, {}, split_seed);
  save_split(out, split);
  write_text_file(out / "spec.json", json(spec).dump(1) + "\n");

  m.seed = spec.seed;
  m.config = a.spec;
  m.parameters = {{"labelled", a.labelled}, {"unlabelled", a.unlabelled}, {"split_seed", split_seed}};
  m.outputs = {out};
  write_manifest(out / "manifest.json", m);
  std::printf("wrote %zu labelled, %zu unlabelled samples to %s\nsplit: %s\n", a.labelled, a.unlabelled,
              out.string().c_str(), (out / "splits" / (std::to_string(split_seed) + ".json")).string().c_str());
  return 0;
}

struct DensifyArgs {
  std::string data, out;
  DensityParams params;
  bool preview = false;
};

int run_densify(const DensifyArgs& a, Manifest& m) {
  const auto ids = list_sample_ids(a.data);
  if (ids.empty()) throw ValidationError("cli", "no samples in " + a.data);
  const fs::path out = a.out;
  fs::create_directories(out);
  double worst = 0.0;
  for (const auto& id : ids) {
    const auto s = load_sample(a.data, id);
    const auto map = make_density(s.points, s.image.height, s.image.width, a.params);
    worst = std::max(worst, std::abs(integrate_count(map) - static_cast<double>(s.count())));
    write_density_file(out / (id + ".scdm"), map);
    if (a.preview) write_png(out / (id + ".png"), render_heatmap(map, s.image));
  }
  m.inputs = {{"data", a.data}};
  m.parameters = {{"kernel_size", a.params.kernel_size}, {"sigma", a.params.sigma}, {"stride", a.params.stride}};
  m.outputs = {out};
  write_manifest(out / "manifest.json", m);
  std::printf("wrote %zu density maps to %s (max |integral - count| = %.3g)\n", ids.size(), out.string().c_str(),
              worst);
  return 0;
}

struct PairsArgs {
  std::string unlabelled, out, background_from;
  std::size_t n = 3000;
  std::uint64_t seed = 0;
};

int run_pairs(const PairsArgs& a, Manifest& m) {
  const auto images = load_unlabelled(a.unlabelled, fs::exists(fs::path(a.unlabelled) / "truth"));
  if (images.empty()) throw ValidationError("cli", "no unlabelled images in " + a.unlabelled);
  Background bg{0, 0, 0};
  if (!a.background_from.empty()) {
    const auto ids = list_sample_ids(a.background_from);
    bg = background_median(load_samples(a.background_from, ids));
  }
  const auto set = generate_pairs(images, a.n, derive_seed(a.seed, "cli.pairs"), bg);
  std::size_t violations = 0;
  bool have_truth = false;
  for (std::size_t i = 0; i < set.size(); ++i) {
    const auto& src = set.sources[set.pairs[i].source];
    if (src[0].points.empty()) continue;
    have_truth = true;
    violations += set.second(i).points.size() > set.first(i).points.size();
  }
  save_pair_set(a.out, set);
  m.seed = a.seed;
  m.inputs = {{"unlabelled", a.unlabelled}, {"background_from", a.background_from}};
  m.parameters = {{"n", a.n}, {"background", bg}};
  m.outputs = {a.out};
  write_manifest(fs::path(a.out) / "manifest.json", m);
  std::printf("wrote %zu pairs from %zu images to %s\n", set.size(), images.size(), a.out.c_str());
  if (have_truth) std::printf("order violations against hidden truth: %zu\n", violations);
  return 0;
}

struct AugmentArgs {
  std::string data, split, out;
  std::size_t target = 1050;
  std::uint64_t seed = 0;
};

int run_augment(const AugmentArgs& a, Manifest& m) {
  const auto split = load_split(a.split);
  const auto train = load_samples(a.data, split.train);
  const auto bg = background_median(train);
  const auto out_dir = a.out.empty() ? fs::path(a.data) / "augmented" / std::to_string(a.seed) : fs::path(a.out);
  const auto aug = augment_dataset(train, a.target, derive_seed(a.seed, "cli.augment"), bg);
  std::string ids;
  for (const auto& s : aug) {
    save_sample(out_dir, s);
    ids += s.id + "\n";
  }
  write_text_file(out_dir / "ids.txt", ids);
  m.seed = a.seed;
  m.inputs = {{"data", a.data}, {"split", a.split}};
  m.parameters = {{"target", a.target}, {"background", bg}};
  m.outputs = {out_dir};
  write_manifest(out_dir / "manifest.json", m);
  std::printf("wrote %zu samples (%zu augmented) to %s\n", aug.size(), aug.size() - train.size(),
              out_dir.string().c_str());
  return 0;
}

struct TrainArgs {
  std::string config, data, split, out, augmented, pairs, init;
  std::optional<std::uint64_t> seed;
  std::optional<int> epochs;
  bool resume = false;
  bool quiet = false;
};

int run_train(const TrainArgs& a, Manifest& m) {
  auto rc = load_run_config(a.config);
  if (a.seed) rc.train.seed = *a.seed;
  if (a.epochs) rc.train.epochs = *a.epochs;
  if (!a.init.empty()) rc.train.init_from = a.init;
  rc.train.validate();
  const auto split = load_split(a.split);
  const auto train = load_train_set(a.data, split, a.augmented);
  const auto val = load_samples(a.data, split.val);
  std::optional<PairSet> pairs;
  if (!a.pairs.empty()) pairs = load_pair_set(a.pairs);
  if (rc.train.loss.use_rank && !pairs) throw ValidationError("cli", "the loss uses ranking; pass --pairs");
  const TrainData td{train, val, pairs ? &*pairs : nullptr};

  const fs::path out = a.out;
  fs::create_directories(out);
  const auto last = out / "last.sckt";
  TrainState state;
  if (a.resume && fs::exists(last)) {
    const auto ck = load_checkpoint(last, &rc.model);
    if (ck.state.contains("train_config")) {
      // extending the epoch budget is allowed, anything else is a different run
      auto stored = ck.state.at("train_config").get<TrainConfig>();
      stored.epochs = rc.train.epochs;
      if (stored != rc.train) throw ValidationError("cli", "resume: training configuration differs from the checkpoint's");
    }
    state = from_checkpoint(ck);
    std::printf("resuming after epoch %d\n", state.epoch);
  } else {
    state = initial_state(rc.model, rc.train, td);
  }
  const auto t0 = std::chrono::steady_clock::now();
  run_training(state, rc.model, rc.train, td, [&](const TrainState& st) {
    save_checkpoint(to_checkpoint(st, rc.model, rc.train), last);
    write_history_csv(out / "history.csv", st.history);
    if (!a.quiet) {
      const auto& r = st.history.back();
      const double s = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
      std::printf("epoch %d  loss %.4f  val MAE %.4f  best %.4f@%d  [%.0fs]\n", r.epoch, r.total, r.val_mae,
                  st.best_val_mae, st.best_epoch, s);
      std::fflush(stdout);
    }
  });
  save_checkpoint(to_checkpoint(state, rc.model, rc.train), last);
  save_checkpoint(best_checkpoint(state, rc.model, rc.train), out / "best.sckt");
  write_history_csv(out / "history.csv", state.history);

  m.seed = rc.train.seed;
  m.config = a.config;
  m.inputs = {{"data", a.data}, {"split", a.split}, {"augmented", a.augmented}, {"pairs", a.pairs},
              {"init", rc.train.init_from}};
  m.parameters = {{"model", rc.model}, {"train", rc.train}, {"resumed", a.resume}};
  m.outputs = {out / "best.sckt", out / "last.sckt", out / "history.csv"};
  write_manifest(out / "manifest.json", m);
  if (!state.divergence.empty()) {
    std::fprintf(stderr, "[trainer] training diverged: %s\n", state.divergence.c_str());
    return 1;
  }
  std::printf("best val MAE %.4f at epoch %d%s\n", state.best_val_mae, state.best_epoch,
              state.stopped ? " (early stop)" : "");
  return 0;
}

struct EvalArgs {
  std::string ckpt, data, split, out, subset = "test";
  double noise_threshold = kNoiseAreaThreshold;
  bool heatmaps = true;
};

int run_eval(const EvalArgs& a, Manifest& m) {
  const auto ck = load_checkpoint(a.ckpt);
  std::vector<std::string> ids;
  if (a.split.empty()) {
    ids = list_sample_ids(a.data);
  } else {
    const auto split = load_split(a.split);
    ids = a.subset == "val" ? split.val : a.subset == "train" ? split.train : split.test;
  }
  if (ids.empty()) throw ValidationError("cli", "no samples to evaluate");
  const auto samples = load_samples(a.data, ids);
  const fs::path out = a.out;
  fs::create_directories(out);
  EvalOptions opt;
  opt.noise_threshold = a.noise_threshold;
  if (a.heatmaps) opt.heatmap_dir = out / "heatmaps";
  const Network<float> net(ck.model);
  const auto rep = evaluate(net, ck.params, samples, opt);
  write_report_csv(out / "report.csv", rep);
  write_summary_csv(out / "summary.csv", rep);

  m.inputs = {{"ckpt", a.ckpt}, {"data", a.data}, {"split", a.split}, {"subset", a.subset}};
  m.parameters = {{"noise_threshold", a.noise_threshold}};
  m.outputs = {out / "report.csv", out / "summary.csv"};
  if (a.heatmaps) m.outputs.push_back(out / "heatmaps");
  write_manifest(out / "manifest.json", m);
  std::printf("MAE %.4f  RMSE %.4f  on %zu samples\n", rep.mae, rep.rmse, samples.size());
  for (auto g : kSubgroups) {
    std::printf("  %-8s n=%-4zu NMAE %s\n", std::string(to_string(g)).c_str(), rep.subgroup_size.at(g),
                format_metric(rep.nmae.at(g)).c_str());
  }
  if (rep.correlation.r) {
    std::printf("logvar vs |error|: r = %.4f, one-tailed p = %.3g\n", *rep.correlation.r,
                *rep.correlation.p_one_tailed);
  }
  return 0;
}

struct InferArgs {
  std::string ckpt, image, heatmap;
  bool round = false;
};

int run_infer(const InferArgs& a) {
  const auto ck = load_checkpoint(a.ckpt);
  auto image = read_png(a.image);
  if (image.height != ck.model.input_h || image.width != ck.model.input_w) {
    image = resize_image_bilinear(image, ck.model.input_h, ck.model.input_w);
  }
  const Network<float> net(ck.model);
  const auto out = net.forward(ck.params, image);
  const double count = out.count();
  if (a.round) {
    std::printf("count %lld\n", static_cast<long long>(std::llround(std::max(0.0, count))));
  } else {
    std::printf("count %.4f\n", count);
  }
  std::printf("logvar %.4f\n", static_cast<double>(out.logvar()));
  const fs::path heat = a.heatmap.empty() ? fs::path(a.image).replace_extension(".heat.png") : fs::path(a.heatmap);
  write_png(heat, render_heatmap(to_density_map(out), image));
  std::printf("heat-map %s\n", heat.string().c_str());
  return 0;
}

int run_report(const std::string& dir, const std::string& out) {
  const auto md = render_markdown_report(dir);
  std::fputs(md.c_str(), stdout);
  write_text_file(out.empty() ? fs::path(dir) / "report.md" : fs::path(out), md);
  return 0;
}

struct AblationArgs {
  std::string config, data, split, pairs, augmented, out;
  std::optional<int> trials;
  std::optional<std::uint64_t> seed;
  std::vector<std::string> rows;
};

int run_ablation(const AblationArgs& a, Manifest& m) {
  const json doc = read_json(a.config, "cli");
  ModelConfig model;
  if (doc.contains("model")) model = from_json_checked<ModelConfig>(doc.at("model"), "network", "model config");
  model.validate();
  auto cfg = from_json_checked<AblationConfig>(doc, "trainer", "ablation config");
  if (a.trials) cfg.trials = *a.trials;
  if (a.seed) cfg.seed = *a.seed;
  if (!a.rows.empty()) cfg.rows = a.rows;
  if (cfg.trials < 1) throw ValidationError("cli", "--trials must be >= 1");

  const auto split = load_split(a.split);
  const auto train = load_samples(a.data, split.train);
  const auto val = load_samples(a.data, split.val);
  const auto test = load_samples(a.data, split.test);
  std::vector<LabeledSample> augmented;
  if (!a.augmented.empty()) augmented = load_train_set(a.data, split, a.augmented);
  std::optional<PairSet> pairs;
  if (!a.pairs.empty()) pairs = load_pair_set(a.pairs);
  const AblationData data{train, augmented, val, test, pairs ? &*pairs : nullptr};

  const fs::path out = a.out;
  fs::create_directories(out);
  const auto t0 = std::chrono::steady_clock::now();
  const auto result = run_ablation_suite(model, cfg, data, [&](const std::string& line) {
    const double s = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    std::printf("%s  [%.0fs]\n", line.c_str(), s);
    std::fflush(stdout);
  });
  const auto csv = ablation_csv(result);
  write_text_file(out / "ablation.csv", csv);
  std::fputs(csv.c_str(), stdout);

  m.seed = cfg.seed;
  m.config = a.config;
  m.inputs = {{"data", a.data}, {"split", a.split}, {"augmented", a.augmented}, {"pairs", a.pairs}};
  json model_json = model;
  json cfg_json = cfg;
  m.parameters = {{"model", model_json}, {"ablation", cfg_json}};
  m.outputs = {out / "ablation.csv"};
  write_manifest(out / "manifest.json", m);
  for (const auto& r : result.rows) {
    for (const auto& t : r.trials) {
      if (!t.error.empty()) return 1;
    }
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Fish counting in sonar images: data synthesis, training and evaluation"};
  app.require_subcommand(1);
  app.set_version_flag("--version", kVersion);

  Manifest manifest;
  for (int i = 0; i < argc; ++i) manifest.argv.emplace_back(argv[i]);

  SynthArgs synth;
  auto* c_synth = app.add_subcommand("synth", "Generate a synthetic labelled/unlabelled dataset");
  c_synth->add_option("--spec", synth.spec, "Synthesis spec (JSON)")->check(CLI::ExistingFile);
  c_synth->add_option("--out", synth.out, "Output dataset directory")->required();
  c_synth->add_option("--labelled", synth.labelled, "Number of labelled samples")->capture_default_str();
  c_synth->add_option("--unlabelled", synth.unlabelled, "Number of unlabelled images")->capture_default_str();
  c_synth->add_option("--seed", synth.seed, "Overrides the spec seed");
  c_synth->add_option("--split-seed", synth.split_seed, "Seed of the train/val/test split");

  DensifyArgs densify;
  auto* c_densify = app.add_subcommand("densify", "Write ground-truth density maps");
  c_densify->add_option("--data", densify.data, "Dataset directory")->required()->check(CLI::ExistingDirectory);
  c_densify->add_option("--out", densify.out, "Output directory")->required();
  c_densify->add_option("--kernel-size", densify.params.kernel_size, "Gaussian support s")->capture_default_str();
  c_densify->add_option("--sigma", densify.params.sigma, "Gaussian sigma")->capture_default_str();
  c_densify->add_option("--stride", densify.params.stride, "Output stride")->capture_default_str();
  c_densify->add_flag("--preview", densify.preview, "Also write heat-map PNGs");

  PairsArgs pairs;
  auto* c_pairs = app.add_subcommand("pairs", "Build ranked subregion pairs from unlabelled images");
  c_pairs->add_option("--unlabelled", pairs.unlabelled, "Unlabelled image directory")
      ->required()
      ->check(CLI::ExistingDirectory);
  c_pairs->add_option("--out", pairs.out, "Output directory")->required();
  c_pairs->add_option("--n", pairs.n, "Number of pairs")->capture_default_str();
  c_pairs->add_option("--seed", pairs.seed, "Seed")->capture_default_str();
  c_pairs->add_option("--background-from", pairs.background_from, "Dataset whose median colour fills gaps");

  AugmentArgs augment;
  auto* c_augment = app.add_subcommand("augment", "Materialise an augmented training set");
  c_augment->add_option("--data", augment.data, "Dataset directory")->required()->check(CLI::ExistingDirectory);
  c_augment->add_option("--split", augment.split, "Split file")->required()->check(CLI::ExistingFile);
  c_augment->add_option("--target", augment.target, "Size of the augmented set")->capture_default_str();
  c_augment->add_option("--seed", augment.seed, "Seed")->capture_default_str();
  c_augment->add_option("--out", augment.out, "Output directory (default <data>/augmented/<seed>)");

  TrainArgs train;
  auto* c_train = app.add_subcommand("train", "Train a model");
  c_train->add_option("--config", train.config, "Run config (JSON)")->required()->check(CLI::ExistingFile);
  c_train->add_option("--data", train.data, "Dataset directory")->required()->check(CLI::ExistingDirectory);
  c_train->add_option("--split", train.split, "Split file")->required()->check(CLI::ExistingFile);
  c_train->add_option("--out", train.out, "Run directory")->required();
  c_train->add_option("--augmented", train.augmented, "Train on this augmented set instead of the split")
      ->check(CLI::ExistingDirectory);
  c_train->add_option("--pairs", train.pairs, "Pair directory (ranking loss)")->check(CLI::ExistingDirectory);
  c_train->add_option("--init", train.init, "Initial weights (checkpoint)")->check(CLI::ExistingFile);
  c_train->add_option("--seed", train.seed, "Overrides the config seed");
  c_train->add_option("--epochs", train.epochs, "Overrides the config epoch count");
  c_train->add_flag("--resume", train.resume, "Continue from <out>/last.sckt");
  c_train->add_flag("--quiet", train.quiet, "No per-epoch output");

  EvalArgs eval;
  auto* c_eval = app.add_subcommand("eval", "Evaluate a checkpoint");
  c_eval->add_option("--ckpt", eval.ckpt, "Checkpoint")->required()->check(CLI::ExistingFile);
  c_eval->add_option("--data", eval.data, "Dataset directory")->required()->check(CLI::ExistingDirectory);
  c_eval->add_option("--split", eval.split, "Split file (default: every sample)")->check(CLI::ExistingFile);
  c_eval->add_option("--subset", eval.subset, "Split part")
      ->check(CLI::IsMember({"train", "val", "test"}))
      ->capture_default_str();
  c_eval->add_option("--out", eval.out, "Output directory")->required();
  c_eval->add_option("--noise-threshold", eval.noise_threshold, "Noise area share for the noise subgroup")
      ->capture_default_str();
  c_eval->add_flag("!--no-heatmaps", eval.heatmaps, "Skip heat-map PNGs");

  InferArgs infer;
  auto* c_infer = app.add_subcommand("infer", "Count fish in one image");
  c_infer->add_option("--ckpt", infer.ckpt, "Checkpoint")->required()->check(CLI::ExistingFile);
  c_infer->add_option("--image", infer.image, "PNG image")->required()->check(CLI::ExistingFile);
  c_infer->add_option("--heatmap", infer.heatmap, "Heat-map output (default <image>.heat.png)");
  c_infer->add_flag("--round", infer.round, "Print the count as an integer");

  std::string report_dir, report_out;
  auto* c_report = app.add_subcommand("report", "Render Markdown tables from result CSVs");
  c_report->add_option("--dir", report_dir, "Directory with summary/ablation/history CSVs")
      ->required()
      ->check(CLI::ExistingDirectory);
  c_report->add_option("--out", report_out, "Markdown output (default <dir>/report.md)");

  AblationArgs ablation;
  auto* c_ablation = app.add_subcommand("ablation", "Run the ablation table");
  c_ablation->add_option("--config", ablation.config, "Ablation config (JSON)")->required()->check(CLI::ExistingFile);
  c_ablation->add_option("--data", ablation.data, "Dataset directory")->required()->check(CLI::ExistingDirectory);
  c_ablation->add_option("--split", ablation.split, "Split file")->required()->check(CLI::ExistingFile);
  c_ablation->add_option("--pairs", ablation.pairs, "Pair directory")->check(CLI::ExistingDirectory);
  c_ablation->add_option("--augmented", ablation.augmented, "Augmented training set")->check(CLI::ExistingDirectory);
  c_ablation->add_option("--out", ablation.out, "Output directory")->required();
  c_ablation->add_option("--trials", ablation.trials, "Overrides the config trial count");
  c_ablation->add_option("--seed", ablation.seed, "Overrides the config seed");
  c_ablation->add_option("--rows", ablation.rows, "Rows to run, e.g. i iii viii");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    configure_threads_from_env();
    manifest.subcommand = app.get_subcommands().front()->get_name();
    if (*c_synth) return run_synth(synth, manifest);
    if (*c_densify) return run_densify(densify, manifest);
    if (*c_pairs) return run_pairs(pairs, manifest);
    if (*c_augment) return run_augment(augment, manifest);
    if (*c_train) return run_train(train, manifest);
    if (*c_eval) return run_eval(eval, manifest);
    if (*c_infer) return run_infer(infer);
    if (*c_report) return run_report(report_dir, report_out);
    if (*c_ablation) return run_ablation(ablation, manifest);
  } catch (const Error& e) {
    std::fprintf(stderr, "[%s] %s\n", e.module().c_str(), e.what());
    return 1;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return 2;
}
