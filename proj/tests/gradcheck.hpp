#pragma once

// Finite-difference oracle for the full model + loss, in double precision.

#include <algorithm>
#include <cmath>
#include <vector>

#include "schoolcount/losses.hpp"
#include "schoolcount/network.hpp"
#include "schoolcount/rng.hpp"

namespace gradcheck {

using namespace schoolcount;

struct Problem {
  ModelConfig model;
  LossConfig loss;
  std::vector<std::vector<double>> labelled;  // CHW inputs
  std::vector<double> counts;
  std::vector<std::vector<double>> first, second;  // pair inputs
};

struct Eval {
  double loss = 0.0;
  std::vector<bool> pattern;  // rectifiers plus loss kinks
};

struct Report {
  std::size_t checked = 0;
  std::size_t refined = 0;  // elements whose +-h stencil crossed a kink
  std::size_t failed = 0;
  double worst = 0.0;
  double h_min = 0.0;
};

inline ModelConfig tiny_model() {
  ModelConfig m;
  m.stage_channels = {2, 2, 3, 3, 4};
  m.blocks_per_stage = 1;
  m.input_h = 32;
  m.input_w = 32;
  return m;
}

// Random parameters with every path live: residual branches switched on and
// the log-variance head non-zero.
inline ParamSet<double> random_params(const ModelConfig& model, std::uint64_t seed) {
  auto p = init_params(model, seed).cast<double>();
  Rng rng(seed ^ 0x5eedULL);
  for (auto& t : p.tensors) {
    if (t.name.find("norm2.scale") != std::string::npos) {
      for (auto& v : t.values) v = rng.uniform(0.3, 0.8);
    } else if (t.name.find(".shift") != std::string::npos || t.name == "head.bias") {
      for (auto& v : t.values) v = rng.uniform(-0.1, 0.1);
    } else if (t.name == "head.weight") {
      for (auto& v : t.values) v = rng.uniform(-0.5, 0.5);
    } else if (t.name == "input.mean") {
      for (auto& v : t.values) v = 0.5;
    }
  }
  return p;
}

inline std::vector<double> random_input(const ModelConfig& model, Rng& rng) {
  std::vector<double> x(static_cast<std::size_t>(3) * model.input_h * model.input_w);
  for (auto& v : x) v = rng.uniform(-0.5, 0.5);
  return x;
}

inline Problem make_problem(const LossConfig& loss, std::uint64_t seed) {
  Problem pr;
  pr.model = tiny_model();
  pr.loss = loss;
  Rng rng(seed);
  // counts well away from any prediction so |e| never changes sign, and
  // spread over all three balance classes
  pr.counts = {12.0, 70.0, 260.0, 31.0};
  for (std::size_t i = 0; i < pr.counts.size(); ++i) pr.labelled.push_back(random_input(pr.model, rng));
  if (loss.use_rank) {
    for (int i = 0; i < 3; ++i) {
      pr.first.push_back(random_input(pr.model, rng));
      pr.second.push_back(random_input(pr.model, rng));
    }
  }
  return pr;
}

inline Eval evaluate(const Problem& pr, const Network<double>& net, const ParamSet<double>& params,
                     ParamSet<double>* grads = nullptr) {
  const int h = pr.model.input_h, w = pr.model.input_w;
  std::vector<Tape<double>> tapes;
  std::vector<ModelOutput<double>> outs;
  auto run = [&](const std::vector<double>& x) {
    tapes.emplace_back();
    outs.push_back(net.forward(params, x, h, w, &tapes.back()));
  };
  for (const auto& x : pr.labelled) run(x);
  for (std::size_t k = 0; k < pr.first.size(); ++k) {
    run(pr.first[k]);
    run(pr.second[k]);
  }
  LossInputs<double> in;
  const std::size_t nl = pr.labelled.size();
  for (std::size_t i = 0; i < nl; ++i) {
    in.c.push_back(pr.counts[i]);
    in.c_hat.push_back(outs[i].count());
    in.logvar.push_back(outs[i].logvar());
  }
  for (std::size_t k = 0; k < pr.first.size(); ++k) {
    in.p.push_back(gap_count(outs[nl + 2 * k]));
    in.p2.push_back(gap_count(outs[nl + 2 * k + 1]));
  }
  const auto bl = total_loss(pr.loss, in);
  Eval ev;
  ev.loss = bl.total;
  for (const auto& t : tapes) {
    const auto pat = net.activation_pattern(t);
    ev.pattern.insert(ev.pattern.end(), pat.begin(), pat.end());
  }
  for (std::size_t i = 0; i < nl; ++i) ev.pattern.push_back(in.c_hat[i] > in.c[i]);
  for (std::size_t k = 0; k < in.p.size(); ++k) ev.pattern.push_back(in.p2[k] - in.p[k] + pr.loss.epsilon > 0);

  if (grads) {
    for (std::size_t i = 0; i < outs.size(); ++i) {
      const std::size_t cells = outs[i].density.size();
      OutputGrad<double> d;
      if (i < nl) {
        d.density.assign(cells, bl.d_c_hat[i]);
        d.logvar_map.assign(cells, bl.d_logvar[i]);
      } else {
        const std::size_t k = i - nl;
        d.density.assign(cells, (k % 2 == 0 ? bl.d_p[k / 2] : bl.d_p2[k / 2]) / static_cast<double>(cells));
      }
      net.backward(params, tapes[i], d, *grads);
    }
  }
  return ev;
}

inline double relative_error(double analytic, double numeric) {
  return std::abs(analytic - numeric) / std::max({std::abs(analytic), std::abs(numeric), 1e-6});
}

// Central differences with step h. When the pattern at theta +- h differs from
// the pattern at theta the stencil straddles a kink, and the element is
// re-checked with h / 10, h / 100, ... until the stencil stays inside one
// smooth piece.
inline Report check(const Problem& pr, const ParamSet<double>& params, double h = 1e-3, double tol = 1e-4) {
  Network<double> net(pr.model);
  auto grads = params.zeros_like();
  const Eval base = evaluate(pr, net, params, &grads);
  Report rep;
  rep.h_min = h;
  auto p = params;
  for (std::size_t ti = 0; ti < p.tensors.size(); ++ti) {
    if (!p.tensors[ti].trainable) continue;
    for (std::size_t k = 0; k < p.tensors[ti].values.size(); ++k) {
      double& v = p.tensors[ti].values[k];
      const double orig = v;
      double step = h, numeric = 0.0;
      bool smooth = false;
      for (int attempt = 0; attempt < 6 && !smooth; ++attempt, step /= 10.0) {
        v = orig + step;
        const Eval up = evaluate(pr, net, p);
        v = orig - step;
        const Eval down = evaluate(pr, net, p);
        v = orig;
        numeric = (up.loss - down.loss) / (2.0 * step);
        smooth = up.pattern == base.pattern && down.pattern == base.pattern;
        if (!smooth) {
          if (attempt == 0) ++rep.refined;
          rep.h_min = std::min(rep.h_min, step / 10.0);
        }
      }
      const double rel = relative_error(grads.tensors[ti].values[k], numeric);
      ++rep.checked;
      rep.worst = std::max(rep.worst, rel);
      if (rel > tol || !smooth) ++rep.failed;
    }
  }
  return rep;
}

}  // namespace gradcheck
