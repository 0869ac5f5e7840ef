#pragma once

#include <array>
#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"
#include "schoolcount/imagedata.hpp"

namespace schoolcount {

inline constexpr int kNetworkStride = 32;
inline constexpr int kStages = 5;

struct ModelConfig {
  std::vector<int> stage_channels{16, 32, 64, 128, 256};
  int blocks_per_stage = 1;
  int input_h = 320;
  int input_w = 576;
  int head_channels = 2;  // 2 = density + log-variance; 1 only for parameter-count comparisons

  void validate() const;
  // FNV-1a over a canonical description; stored in checkpoints.
  std::uint64_t hash() const;
  int last_channels() const { return stage_channels.back(); }

  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

void to_json(nlohmann::json& j, const ModelConfig& config);
void from_json(const nlohmann::json& j, ModelConfig& config);

template <typename T>
struct NamedTensor {
  std::string name;
  std::vector<int> shape;
  std::vector<T> values;
  bool trainable = true;
};

// Ordered, uniquely named tensors. One ParamSet instance is shared by the
// counting branch and both ranking branches.
template <typename T>
class ParamSet {
 public:
  std::vector<NamedTensor<T>> tensors;

  std::size_t add(std::string name, std::vector<int> shape, bool trainable = true);
  std::size_t index_of(std::string_view name) const;  // throws if missing
  bool contains(std::string_view name) const;
  NamedTensor<T>& get(std::string_view name) { return tensors[index_of(name)]; }
  const NamedTensor<T>& get(std::string_view name) const { return tensors[index_of(name)]; }

  std::size_t parameter_count(bool trainable_only = true) const;
  ParamSet zeros_like() const;
  void set_zero();
  // this += other (same layout)
  void accumulate(const ParamSet& other);

  template <typename U>
  ParamSet<U> cast() const {
    ParamSet<U> out;
    out.tensors.reserve(tensors.size());
    for (const auto& t : tensors) {
      out.tensors.push_back({t.name, t.shape, std::vector<U>(t.values.begin(), t.values.end()), t.trainable});
    }
    return out;
  }
};

using ModelParams = ParamSet<float>;

// Throws NumericError naming the first tensor holding a NaN or infinity.
template <typename T>
void check_finite(const ParamSet<T>& params, std::string_view what);

template <typename T>
struct ModelOutput {
  int rows = 0;
  int cols = 0;
  std::vector<T> density;     // channel 1, D-hat
  std::vector<T> logvar_map;  // channel 2; cells sum to log sigma^2

  T count() const;   // sum of density cells
  T logvar() const;  // sum of log-variance cells
};

// Mean over density cells (the ranking branches' global average pooling).
template <typename T>
T gap_count(const ModelOutput<T>& output);

// dLoss / d(output cells)
template <typename T>
struct OutputGrad {
  std::vector<T> density;
  std::vector<T> logvar_map;
};

template <typename T>
struct Tape {
  std::vector<std::vector<T>> buffers;
  std::vector<std::array<int, 3>> shapes;  // (c, h, w) per buffer
};

// Five stride-2 stages (3x3 conv, per-channel affine, ReLU), each followed by
// residual blocks, then a 1x1 convolution head with two output channels.
template <typename T>
class Network {
 public:
  explicit Network(ModelConfig config);

  const ModelConfig& config() const { return config_; }

  // CHW input, pixel / 255 minus the per-channel "input.mean" tensor.
  std::vector<T> prepare_input(const RawImage& image, const ParamSet<T>& params) const;

  // Throws ShapeError unless h and w are positive multiples of 32 and the
  // input holds 3 channels.
  ModelOutput<T> forward(const ParamSet<T>& params, std::span<const T> input, int h, int w,
                         Tape<T>* tape = nullptr) const;
  ModelOutput<T> forward(const ParamSet<T>& params, const RawImage& image, Tape<T>* tape = nullptr) const;

  // Reverse-mode pass over a recorded tape; gradients are added into `grads`
  // (which must have the layout of `params`).
  void backward(const ParamSet<T>& params, const Tape<T>& tape, const OutputGrad<T>& d_output,
                ParamSet<T>& grads) const;

  // Which rectifier units were active in a recorded pass. Two passes with the
  // same pattern lie in one piece of the piecewise-smooth network function.
  std::vector<bool> activation_pattern(const Tape<T>& tape) const;

 private:
  enum class OpKind { conv, affine_relu, affine, add_relu, head };
  struct Op {
    OpKind kind;
    int in = 0, in2 = -1, out = 0;
    int out_c = 0, kernel = 3, stride = 1, pad = 1;
    std::size_t weight = 0, scale = 0, shift = 0, bias = 0;
  };

  ModelConfig config_;
  std::vector<Op> program_;
  int buffer_count_ = 0;
  std::size_t mean_index_ = 0;
};

// Layout-only parameter set (all zeros); used to validate checkpoints.
ModelParams make_param_layout(const ModelConfig& config);

// He-normal backbone convolutions, unit affine scales (zero on the last affine
// of each residual branch), Xavier-uniform density head, zero log-variance
// head so the initial log sigma^2 is exactly 0.
ModelParams init_params(const ModelConfig& config, std::uint64_t seed);

// Per-channel mean of pixel/255 over the given samples, written into "input.mean".
void set_input_mean(ModelParams& params, std::span<const LabeledSample> samples);

}  // namespace schoolcount
