#include "schoolcount/optimizer.hpp"

#include <cmath>

#include "schoolcount/error.hpp"

namespace schoolcount {

AdamState AdamState::like(const ModelParams& params, double lr, AdamHyper hyper) {
  AdamState s;
  s.m = params.zeros_like();
  s.v = params.zeros_like();
  s.lr = lr;
  s.hyper = hyper;
  return s;
}

void adam_step(ModelParams& params, AdamState& state, const ModelParams& grads) {
  if (grads.tensors.size() != params.tensors.size() || state.m.tensors.size() != params.tensors.size()) {
    throw ShapeError("trainer", "gradient / optimizer layout does not match the parameters");
  }
  check_finite(grads, "gradient");
  const AdamHyper& h = state.hyper;
  const std::uint64_t t = state.step + 1;
  const double c1 = 1.0 - std::pow(h.beta1, static_cast<double>(t));
  const double c2 = 1.0 - std::pow(h.beta2, static_cast<double>(t));
  for (std::size_t i = 0; i < params.tensors.size(); ++i) {
    auto& p = params.tensors[i];
    if (!p.trainable) continue;
    const auto& g = grads.tensors[i].values;
    auto& m = state.m.tensors[i].values;
    auto& v = state.v.tensors[i].values;
    if (g.size() != p.values.size()) throw ShapeError("trainer", "gradient shape mismatch for '" + p.name + "'");
    for (std::size_t k = 0; k < p.values.size(); ++k) {
      const double gk = g[k];
      m[k] = static_cast<float>(h.beta1 * m[k] + (1.0 - h.beta1) * gk);
      v[k] = static_cast<float>(h.beta2 * v[k] + (1.0 - h.beta2) * gk * gk);
      const double mh = m[k] / c1;
      const double vh = v[k] / c2;
      p.values[k] = static_cast<float>(p.values[k] - state.lr * mh / (std::sqrt(vh) + h.eps));
    }
  }
  state.step = t;
}

}  // namespace schoolcount
