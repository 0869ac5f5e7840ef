#include "schoolcount/network.hpp"

#include <cmath>
#include <sstream>

#include "schoolcount/error.hpp"
#include "schoolcount/kernels.hpp"
#include "schoolcount/rng.hpp"

namespace schoolcount {

using nlohmann::json;

// --- config ------------------------------------------------------------------

void ModelConfig::validate() const {
  if (stage_channels.size() != kStages) {
    throw ValidationError("network", "stage_channels must list exactly 5 widths");
  }
  for (int c : stage_channels) {
    if (c < 1) throw ValidationError("network", "stage widths must be >= 1");
  }
  if (blocks_per_stage < 0) throw ValidationError("network", "blocks_per_stage must be >= 0");
  if (input_h < kNetworkStride || input_w < kNetworkStride || input_h % kNetworkStride != 0 ||
      input_w % kNetworkStride != 0) {
    throw ValidationError("network", "input size must be a positive multiple of 32 on both axes");
  }
  if (head_channels != 1 && head_channels != 2) throw ValidationError("network", "head_channels must be 1 or 2");
}

std::uint64_t ModelConfig::hash() const {
  std::ostringstream s;
  s << "schoolcount-model-v1|c=";
  for (int c : stage_channels) s << c << ',';
  s << "|b=" << blocks_per_stage << "|in=" << input_h << 'x' << input_w << "|head=" << head_channels;
  return fnv1a(s.str());
}

void to_json(json& j, const ModelConfig& c) {
  j = {{"stage_channels", c.stage_channels},
       {"blocks_per_stage", c.blocks_per_stage},
       {"input_h", c.input_h},
       {"input_w", c.input_w},
       {"head_channels", c.head_channels}};
}

void from_json(const json& j, ModelConfig& c) {
  c = ModelConfig{};
  if (j.contains("stage_channels")) c.stage_channels = j.at("stage_channels").get<std::vector<int>>();
  c.blocks_per_stage = j.value("blocks_per_stage", c.blocks_per_stage);
  c.input_h = j.value("input_h", c.input_h);
  c.input_w = j.value("input_w", c.input_w);
  c.head_channels = j.value("head_channels", c.head_channels);
  c.validate();
}

// --- parameter sets ------------------------------------------------------------

template <typename T>
std::size_t ParamSet<T>::add(std::string name, std::vector<int> shape, bool trainable) {
  if (contains(name)) throw ValidationError("network", "duplicate tensor name '" + name + "'");
  std::size_t n = 1;
  for (int d : shape) n *= static_cast<std::size_t>(d);
  tensors.push_back({std::move(name), std::move(shape), std::vector<T>(n, T(0)), trainable});
  return tensors.size() - 1;
}

template <typename T>
std::size_t ParamSet<T>::index_of(std::string_view name) const {
  for (std::size_t i = 0; i < tensors.size(); ++i) {
    if (tensors[i].name == name) return i;
  }
  throw ValidationError("network", "no tensor named '" + std::string(name) + "'");
}

template <typename T>
bool ParamSet<T>::contains(std::string_view name) const {
  for (const auto& t : tensors) {
    if (t.name == name) return true;
  }
  return false;
}

template <typename T>
std::size_t ParamSet<T>::parameter_count(bool trainable_only) const {
  std::size_t n = 0;
  for (const auto& t : tensors) {
    if (!trainable_only || t.trainable) n += t.values.size();
  }
  return n;
}

template <typename T>
ParamSet<T> ParamSet<T>::zeros_like() const {
  ParamSet out;
  out.tensors.reserve(tensors.size());
  for (const auto& t : tensors) out.tensors.push_back({t.name, t.shape, std::vector<T>(t.values.size(), T(0)), t.trainable});
  return out;
}

template <typename T>
void ParamSet<T>::set_zero() {
  for (auto& t : tensors) std::fill(t.values.begin(), t.values.end(), T(0));
}

template <typename T>
void ParamSet<T>::accumulate(const ParamSet& other) {
  for (std::size_t i = 0; i < tensors.size(); ++i) {
    auto& dst = tensors[i].values;
    const auto& src = other.tensors[i].values;
    for (std::size_t k = 0; k < dst.size(); ++k) dst[k] += src[k];
  }
}

template <typename T>
void check_finite(const ParamSet<T>& params, std::string_view what) {
  for (const auto& t : params.tensors) {
    for (T v : t.values) {
      if (!std::isfinite(v)) {
        throw NumericError("network", "non-finite value in " + std::string(what) + " of tensor '" + t.name + "'");
      }
    }
  }
}

// --- outputs -------------------------------------------------------------------

template <typename T>
T ModelOutput<T>::count() const {
  T s = 0;
  for (T v : density) s += v;
  return s;
}

template <typename T>
T ModelOutput<T>::logvar() const {
  T s = 0;
  for (T v : logvar_map) s += v;
  return s;
}

template <typename T>
T gap_count(const ModelOutput<T>& output) {
  if (output.density.empty()) return T(0);
  return output.count() / static_cast<T>(output.density.size());
}

// --- architecture ----------------------------------------------------------------

namespace {

std::string stage_name(int s) { return "stage" + std::to_string(s); }

}  // namespace

ModelParams make_param_layout(const ModelConfig& config) {
  config.validate();
  ModelParams p;
  p.add("input.mean", {kChannels}, false);
  int in_c = kChannels;
  for (int s = 0; s < kStages; ++s) {
    const int c = config.stage_channels[s];
    const std::string st = stage_name(s);
    p.add(st + ".down.conv.weight", {c, in_c, 3, 3});
    p.add(st + ".down.norm.scale", {c});
    p.add(st + ".down.norm.shift", {c});
    for (int b = 0; b < config.blocks_per_stage; ++b) {
      const std::string blk = st + ".block" + std::to_string(b);
      p.add(blk + ".conv1.weight", {c, c, 3, 3});
      p.add(blk + ".norm1.scale", {c});
      p.add(blk + ".norm1.shift", {c});
      p.add(blk + ".conv2.weight", {c, c, 3, 3});
      p.add(blk + ".norm2.scale", {c});
      p.add(blk + ".norm2.shift", {c});
    }
    in_c = c;
  }
  p.add("head.weight", {1, 1, in_c, config.head_channels});
  p.add("head.bias", {config.head_channels});
  return p;
}

ModelParams init_params(const ModelConfig& config, std::uint64_t seed) {
  ModelParams p = make_param_layout(config);
  Rng rng(derive_seed(seed, "network.init"));
  auto ends_with = [](const std::string& s, std::string_view suffix) {
    return s.size() >= suffix.size() && s.compare(s.size() - suffix.size(), suffix.size(), suffix) == 0;
  };
  for (auto& t : p.tensors) {
    if (t.name == "head.weight") {
      const int c = t.shape[2], o = t.shape[3];
      const double limit = std::sqrt(6.0 / (c + o));
      for (int i = 0; i < c; ++i) {
        t.values[static_cast<std::size_t>(i) * o] = static_cast<float>(rng.uniform(-limit, limit));
      }
      // channel 1 (log-variance) stays zero
    } else if (ends_with(t.name, ".weight")) {
      const int fan_in = t.shape[1] * t.shape[2] * t.shape[3];
      const double stddev = std::sqrt(2.0 / fan_in);
      for (auto& v : t.values) v = static_cast<float>(rng.normal(0.0, stddev));
    } else if (ends_with(t.name, ".scale")) {
      const float s = ends_with(t.name, ".norm2.scale") ? 0.0f : 1.0f;
      std::fill(t.values.begin(), t.values.end(), s);
    }
  }
  return p;
}

void set_input_mean(ModelParams& params, std::span<const LabeledSample> samples) {
  std::array<double, kChannels> sum{};
  std::size_t n = 0;
  for (const auto& s : samples) {
    const auto& px = s.image.pixels;
    for (std::size_t i = 0; i + kChannels <= px.size(); i += kChannels) {
      for (int c = 0; c < kChannels; ++c) sum[c] += px[i + c];
    }
    n += px.size() / kChannels;
  }
  auto& mean = params.get("input.mean");
  for (int c = 0; c < kChannels; ++c) mean.values[c] = n ? static_cast<float>(sum[c] / n / 255.0) : 0.0f;
}

template <typename T>
Network<T>::Network(ModelConfig config) : config_(std::move(config)) {
  const ModelParams layout = make_param_layout(config_);
  mean_index_ = layout.index_of("input.mean");
  int next = 1;  // buffer 0 is the input
  int cur = 0;
  auto conv = [&](const std::string& w, int in, int out_c, int stride) {
    Op op{OpKind::conv};
    op.in = in;
    op.out = next++;
    op.out_c = out_c;
    op.kernel = 3;
    op.stride = stride;
    op.pad = 1;
    op.weight = layout.index_of(w);
    program_.push_back(op);
    return op.out;
  };
  auto affine = [&](const std::string& norm, int in, bool relu) {
    Op op{relu ? OpKind::affine_relu : OpKind::affine};
    op.in = in;
    op.out = next++;
    op.scale = layout.index_of(norm + ".scale");
    op.shift = layout.index_of(norm + ".shift");
    program_.push_back(op);
    return op.out;
  };
  for (int s = 0; s < kStages; ++s) {
    const int c = config_.stage_channels[s];
    const std::string st = stage_name(s);
    cur = affine(st + ".down.norm", conv(st + ".down.conv.weight", cur, c, 2), true);
    for (int b = 0; b < config_.blocks_per_stage; ++b) {
      const std::string blk = st + ".block" + std::to_string(b);
      int x = affine(blk + ".norm1", conv(blk + ".conv1.weight", cur, c, 1), true);
      x = affine(blk + ".norm2", conv(blk + ".conv2.weight", x, c, 1), false);
      Op add{OpKind::add_relu};
      add.in = x;
      add.in2 = cur;
      add.out = next++;
      program_.push_back(add);
      cur = add.out;
    }
  }
  Op head{OpKind::head};
  head.in = cur;
  head.out = next++;
  head.out_c = config_.head_channels;
  head.weight = layout.index_of("head.weight");
  head.bias = layout.index_of("head.bias");
  program_.push_back(head);
  buffer_count_ = next;
}

template <typename T>
std::vector<T> Network<T>::prepare_input(const RawImage& image, const ParamSet<T>& params) const {
  const auto& mean = params.tensors.at(mean_index_).values;
  const std::size_t plane = static_cast<std::size_t>(image.height) * image.width;
  std::vector<T> x(plane * kChannels);
  for (std::size_t i = 0; i < plane; ++i) {
    for (int c = 0; c < kChannels; ++c) {
      x[c * plane + i] = static_cast<T>(image.pixels[i * kChannels + c]) / T(255) - mean[c];
    }
  }
  return x;
}

template <typename T>
ModelOutput<T> Network<T>::forward(const ParamSet<T>& params, const RawImage& image, Tape<T>* tape) const {
  const auto x = prepare_input(image, params);
  return forward(params, x, image.height, image.width, tape);
}

template <typename T>
ModelOutput<T> Network<T>::forward(const ParamSet<T>& params, std::span<const T> input, int h, int w,
                                   Tape<T>* tape) const {
  if (h < kNetworkStride || w < kNetworkStride || h % kNetworkStride != 0 || w % kNetworkStride != 0) {
    throw ShapeError("network", "input " + std::to_string(h) + "x" + std::to_string(w) +
                                    " is not a positive multiple of 32 on both axes");
  }
  if (input.size() != static_cast<std::size_t>(kChannels) * h * w) {
    throw ShapeError("network", "expected " + std::to_string(kChannels * h * w) + " input values (3x" +
                                    std::to_string(h) + "x" + std::to_string(w) + "), got " +
                                    std::to_string(input.size()));
  }
  if (params.tensors.size() != make_param_layout(config_).tensors.size()) {
    throw ShapeError("network", "parameter set does not match the model configuration");
  }

  Tape<T> local;
  Tape<T>& tp = tape ? *tape : local;
  tp.buffers.assign(buffer_count_, {});
  tp.shapes.assign(buffer_count_, {0, 0, 0});
  tp.buffers[0].assign(input.begin(), input.end());
  tp.shapes[0] = {kChannels, h, w};

  for (const Op& op : program_) {
    const auto [c, ih, iw] = tp.shapes[op.in];
    const std::vector<T>& x = tp.buffers[op.in];
    std::vector<T>& y = tp.buffers[op.out];
    switch (op.kind) {
      case OpKind::conv: {
        kernels::ConvGeometry g{c, ih, iw, op.out_c, op.kernel, op.stride, op.pad};
        y.assign(static_cast<std::size_t>(g.out_size()), T(0));
        kernels::parallel::conv2d_forward<T>(g, x, params.tensors[op.weight].values, y);
        tp.shapes[op.out] = {op.out_c, g.out_h(), g.out_w()};
        break;
      }
      case OpKind::affine_relu:
      case OpKind::affine: {
        const auto& scale = params.tensors[op.scale].values;
        const auto& shift = params.tensors[op.shift].values;
        const std::size_t plane = static_cast<std::size_t>(ih) * iw;
        y.resize(x.size());
        const bool relu = op.kind == OpKind::affine_relu;
        for (int ch = 0; ch < c; ++ch) {
          const T a = scale[ch], b = shift[ch];
          const T* xs = x.data() + ch * plane;
          T* ys = y.data() + ch * plane;
          for (std::size_t i = 0; i < plane; ++i) {
            const T v = a * xs[i] + b;
            ys[i] = relu ? (v > T(0) ? v : T(0)) : v;
          }
        }
        tp.shapes[op.out] = tp.shapes[op.in];
        break;
      }
      case OpKind::add_relu: {
        const std::vector<T>& x2 = tp.buffers[op.in2];
        y.resize(x.size());
        for (std::size_t i = 0; i < x.size(); ++i) {
          const T v = x[i] + x2[i];
          y[i] = v > T(0) ? v : T(0);
        }
        tp.shapes[op.out] = tp.shapes[op.in];
        break;
      }
      case OpKind::head: {
        const auto& wt = params.tensors[op.weight].values;  // (1, 1, c, out_c)
        const auto& bias = params.tensors[op.bias].values;
        const std::size_t plane = static_cast<std::size_t>(ih) * iw;
        y.assign(static_cast<std::size_t>(op.out_c) * plane, T(0));
        for (int o = 0; o < op.out_c; ++o) {
          T* ys = y.data() + o * plane;
          for (std::size_t i = 0; i < plane; ++i) ys[i] = bias[o];
          for (int ch = 0; ch < c; ++ch) {
            const T wv = wt[static_cast<std::size_t>(ch) * op.out_c + o];
            const T* xs = x.data() + ch * plane;
            for (std::size_t i = 0; i < plane; ++i) ys[i] += wv * xs[i];
          }
        }
        tp.shapes[op.out] = {op.out_c, ih, iw};
        break;
      }
    }
  }

  const Op& head = program_.back();
  const auto [oc, rows, cols] = tp.shapes[head.out];
  const std::size_t plane = static_cast<std::size_t>(rows) * cols;
  const std::vector<T>& z = tp.buffers[head.out];
  ModelOutput<T> out;
  out.rows = rows;
  out.cols = cols;
  out.density.assign(z.begin(), z.begin() + static_cast<std::ptrdiff_t>(plane));
  if (oc > 1) {
    out.logvar_map.assign(z.begin() + static_cast<std::ptrdiff_t>(plane), z.begin() + static_cast<std::ptrdiff_t>(2 * plane));
  } else {
    out.logvar_map.assign(plane, T(0));
  }
  return out;
}

template <typename T>
void Network<T>::backward(const ParamSet<T>& params, const Tape<T>& tape, const OutputGrad<T>& d_output,
                          ParamSet<T>& grads) const {
  if (static_cast<int>(tape.buffers.size()) != buffer_count_) {
    throw ShapeError("network", "backward called without a recorded forward pass");
  }
  std::vector<std::vector<T>> d(buffer_count_);
  const Op& head = program_.back();
  {
    const auto [oc, rows, cols] = tape.shapes[head.out];
    const std::size_t plane = static_cast<std::size_t>(rows) * cols;
    if (d_output.density.size() != plane || (!d_output.logvar_map.empty() && d_output.logvar_map.size() != plane)) {
      throw ShapeError("network", "output gradient does not match the recorded output shape");
    }
    d[head.out].assign(static_cast<std::size_t>(oc) * plane, T(0));
    std::copy(d_output.density.begin(), d_output.density.end(), d[head.out].begin());
    if (oc > 1 && !d_output.logvar_map.empty()) {
      std::copy(d_output.logvar_map.begin(), d_output.logvar_map.end(),
                d[head.out].begin() + static_cast<std::ptrdiff_t>(plane));
    }
  }
  auto grad_of = [&](int buffer) -> std::vector<T>& {
    auto& g = d[buffer];
    if (g.empty()) g.assign(tape.buffers[buffer].size(), T(0));
    return g;
  };

  for (auto it = program_.rbegin(); it != program_.rend(); ++it) {
    const Op& op = *it;
    const std::vector<T>& dy = d[op.out];
    if (dy.empty()) continue;
    const auto [c, ih, iw] = tape.shapes[op.in];
    const std::vector<T>& x = tape.buffers[op.in];
    const std::vector<T>& y = tape.buffers[op.out];
    switch (op.kind) {
      case OpKind::head: {
        const auto& wt = params.tensors[op.weight].values;
        auto& dw = grads.tensors[op.weight].values;
        auto& db = grads.tensors[op.bias].values;
        const std::size_t plane = static_cast<std::size_t>(ih) * iw;
        auto& dx = grad_of(op.in);
        for (int o = 0; o < op.out_c; ++o) {
          const T* dys = dy.data() + o * plane;
          T sum = 0;
          for (std::size_t i = 0; i < plane; ++i) sum += dys[i];
          db[o] += sum;
          for (int ch = 0; ch < c; ++ch) {
            const T* xs = x.data() + ch * plane;
            T* dxs = dx.data() + ch * plane;
            const T wv = wt[static_cast<std::size_t>(ch) * op.out_c + o];
            T acc = 0;
            for (std::size_t i = 0; i < plane; ++i) {
              acc += xs[i] * dys[i];
              dxs[i] += wv * dys[i];
            }
            dw[static_cast<std::size_t>(ch) * op.out_c + o] += acc;
          }
        }
        break;
      }
      case OpKind::add_relu: {
        auto& da = grad_of(op.in);
        auto& db = grad_of(op.in2);
        for (std::size_t i = 0; i < dy.size(); ++i) {
          if (y[i] > T(0)) {
            da[i] += dy[i];
            db[i] += dy[i];
          }
        }
        break;
      }
      case OpKind::affine_relu:
      case OpKind::affine: {
        const auto& scale = params.tensors[op.scale].values;
        auto& dscale = grads.tensors[op.scale].values;
        auto& dshift = grads.tensors[op.shift].values;
        auto& dx = grad_of(op.in);
        const std::size_t plane = static_cast<std::size_t>(ih) * iw;
        const bool relu = op.kind == OpKind::affine_relu;
        for (int ch = 0; ch < c; ++ch) {
          const T* xs = x.data() + ch * plane;
          const T* ys = y.data() + ch * plane;
          const T* dys = dy.data() + ch * plane;
          T* dxs = dx.data() + ch * plane;
          T ds = 0, db = 0;
          for (std::size_t i = 0; i < plane; ++i) {
            const T dz = (!relu || ys[i] > T(0)) ? dys[i] : T(0);
            ds += dz * xs[i];
            db += dz;
            dxs[i] += scale[ch] * dz;
          }
          dscale[ch] += ds;
          dshift[ch] += db;
        }
        break;
      }
      case OpKind::conv: {
        kernels::ConvGeometry g{c, ih, iw, op.out_c, op.kernel, op.stride, op.pad};
        kernels::parallel::conv2d_backward_weight<T>(g, x, dy, grads.tensors[op.weight].values);
        if (op.in != 0) {
          kernels::parallel::conv2d_backward_input<T>(g, dy, params.tensors[op.weight].values, grad_of(op.in));
        }
        break;
      }
    }
  }
}

template <typename T>
std::vector<bool> Network<T>::activation_pattern(const Tape<T>& tape) const {
  std::vector<bool> out;
  for (const Op& op : program_) {
    if (op.kind != OpKind::affine_relu && op.kind != OpKind::add_relu) continue;
    for (T v : tape.buffers.at(op.out)) out.push_back(v > T(0));
  }
  return out;
}

template class ParamSet<float>;
template class ParamSet<double>;
template void check_finite<float>(const ParamSet<float>&, std::string_view);
template void check_finite<double>(const ParamSet<double>&, std::string_view);
template struct ModelOutput<float>;
template struct ModelOutput<double>;
template float gap_count<float>(const ModelOutput<float>&);
template double gap_count<double>(const ModelOutput<double>&);
template class Network<float>;
template class Network<double>;

}  // namespace schoolcount
