#pragma once

#include <cstdint>

#include "schoolcount/network.hpp"

namespace schoolcount {

struct AdamHyper {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  friend bool operator==(const AdamHyper&, const AdamHyper&) = default;
};

struct AdamState {
  ModelParams m;
  ModelParams v;
  std::uint64_t step = 0;
  double lr = 1e-4;
  AdamHyper hyper;

  static AdamState like(const ModelParams& params, double lr, AdamHyper hyper = {});
};

// Bias-corrected Adam update of every trainable tensor. Gradients are checked
// before anything is touched; a NaN or infinity throws NumericError naming the
// tensor and leaves params and state unchanged.
void adam_step(ModelParams& params, AdamState& state, const ModelParams& grads);

}  // namespace schoolcount
