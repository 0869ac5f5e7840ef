#include "schoolcount/losses.hpp"

#include <cmath>
#include <string>

#include "schoolcount/error.hpp"

namespace schoolcount {

using nlohmann::json;

void LossConfig::validate() const {
  if (!(lambda >= 0.0)) throw ValidationError("losses", "lambda must be >= 0");
  if (!(epsilon >= 0.0)) throw ValidationError("losses", "epsilon must be >= 0");
  if (!(class_bounds[0] < class_bounds[1])) throw ValidationError("losses", "class_bounds must be increasing");
}

void to_json(json& j, const LossConfig& c) {
  j = {{"use_au", c.use_au},   {"use_rank", c.use_rank}, {"use_ieb", c.use_ieb},
       {"lambda", c.lambda},   {"epsilon", c.epsilon},   {"class_bounds", c.class_bounds}};
}

void from_json(const json& j, LossConfig& c) {
  c = LossConfig{};
  c.use_au = j.value("use_au", c.use_au);
  c.use_rank = j.value("use_rank", c.use_rank);
  c.use_ieb = j.value("use_ieb", c.use_ieb);
  c.lambda = j.value("lambda", c.lambda);
  c.epsilon = j.value("epsilon", c.epsilon);
  if (j.contains("class_bounds")) c.class_bounds = j.at("class_bounds").get<std::array<double, 2>>();
  c.validate();
}

int classify_count(double c, const std::array<double, 2>& bounds) {
  if (c < bounds[0]) return 1;
  if (c < bounds[1]) return 2;
  return 3;
}

namespace {

void same_length(std::size_t a, std::size_t b, const char* what) {
  if (a != b) {
    throw ValidationError("losses", std::string(what) + ": length mismatch (" + std::to_string(a) + " vs " +
                                        std::to_string(b) + ")");
  }
}

template <typename T>
T sign(T v) {
  return v > T(0) ? T(1) : (v < T(0) ? T(-1) : T(0));
}

template <typename T>
std::vector<T> ieb_weights(std::span<const int> classes) {
  if (classes.empty()) throw ValidationError("losses", "L_ieb: empty batch");
  std::array<int, 4> n{};
  for (int k : classes) {
    if (k < 1 || k > 3) throw ValidationError("losses", "L_ieb: class must be 1, 2 or 3");
    ++n[k];
  }
  const T K = static_cast<T>(classes.size());
  std::vector<T> w(classes.size());
  for (std::size_t i = 0; i < classes.size(); ++i) w[i] = -std::log(static_cast<T>(n[classes[i]]) / K);
  return w;
}

}  // namespace

template <typename T>
T l_count(std::span<const T> c, std::span<const T> c_hat) {
  same_length(c.size(), c_hat.size(), "L_c");
  if (c.empty()) throw ValidationError("losses", "L_c: empty batch");
  T s = 0;
  for (std::size_t i = 0; i < c.size(); ++i) s += std::abs(c[i] - c_hat[i]);
  return s;
}

template <typename T>
T l_cau(std::span<const T> c, std::span<const T> c_hat, std::span<const T> logvar) {
  same_length(c.size(), c_hat.size(), "L_cau");
  same_length(c.size(), logvar.size(), "L_cau");
  T s = 0;
  for (std::size_t i = 0; i < c.size(); ++i) {
    if (!std::isfinite(logvar[i]) || !std::isfinite(c_hat[i])) {
      throw NumericError("losses", "L_cau: non-finite input at sample " + std::to_string(i));
    }
    s += std::abs(c[i] - c_hat[i]) * std::exp(-logvar[i]) + logvar[i];
  }
  return s;
}

template <typename T>
T l_rank(std::span<const T> p, std::span<const T> p2, T epsilon) {
  same_length(p.size(), p2.size(), "L_r");
  T s = 0;
  for (std::size_t i = 0; i < p.size(); ++i) s += std::max(T(0), p2[i] - p[i] + epsilon);
  return s;
}

template <typename T>
T l_ieb(std::span<const T> c, std::span<const T> c_hat, std::span<const int> classes) {
  same_length(c.size(), c_hat.size(), "L_ieb");
  same_length(c.size(), classes.size(), "L_ieb");
  const auto w = ieb_weights<T>(classes);
  T s = 0;
  for (std::size_t i = 0; i < c.size(); ++i) s += w[i] * std::abs(c[i] - c_hat[i]);
  return s;
}

template <typename T>
BatchLoss<T> total_loss(const LossConfig& config, const LossInputs<T>& in) {
  const std::size_t k = in.c.size();
  std::vector<T> logvar = in.logvar.empty() ? std::vector<T>(k, T(0)) : in.logvar;
  if (config.use_rank && in.p.empty()) throw ValidationError("losses", "ranking loss requested but the batch has no pairs");

  BatchLoss<T> out;
  out.L_c = l_count<T>(in.c, in.c_hat);
  out.L_cau = l_cau<T>(in.c, in.c_hat, logvar);
  out.L_r = l_rank<T>(in.p, in.p2, static_cast<T>(config.epsilon));
  std::vector<int> classes(k);
  for (std::size_t i = 0; i < k; ++i) classes[i] = classify_count(static_cast<double>(in.c[i]), config.class_bounds);
  out.L_ieb = l_ieb<T>(in.c, in.c_hat, classes);

  const T lambda = static_cast<T>(config.lambda);
  out.total = (config.use_au ? out.L_cau : out.L_c) + (config.use_rank ? out.L_r : T(0)) +
              (config.use_ieb ? lambda * out.L_ieb : T(0));

  const auto w = ieb_weights<T>(classes);
  out.d_c_hat.assign(k, T(0));
  out.d_logvar.assign(k, T(0));
  out.per_sample.reserve(k);
  for (std::size_t i = 0; i < k; ++i) {
    const T e = in.c_hat[i] - in.c[i];
    const T s = sign(e);
    if (config.use_au) {
      const T inv = std::exp(-logvar[i]);
      out.d_c_hat[i] += s * inv;
      out.d_logvar[i] += T(1) - std::abs(e) * inv;
    } else {
      out.d_c_hat[i] += s;
    }
    if (config.use_ieb) out.d_c_hat[i] += lambda * w[i] * s;
    out.per_sample.push_back({in.c[i], in.c_hat[i], logvar[i], classes[i]});
  }
  out.d_p.assign(in.p.size(), T(0));
  out.d_p2.assign(in.p2.size(), T(0));
  if (config.use_rank) {
    const T eps = static_cast<T>(config.epsilon);
    for (std::size_t i = 0; i < in.p.size(); ++i) {
      if (in.p2[i] - in.p[i] + eps > T(0)) {
        out.d_p[i] = T(-1);
        out.d_p2[i] = T(1);
      }
    }
  }
  return out;
}

#define SCHOOLCOUNT_INSTANTIATE(T)                                                        \
  template T l_count<T>(std::span<const T>, std::span<const T>);                          \
  template T l_cau<T>(std::span<const T>, std::span<const T>, std::span<const T>);        \
  template T l_rank<T>(std::span<const T>, std::span<const T>, T);                        \
  template T l_ieb<T>(std::span<const T>, std::span<const T>, std::span<const int>);      \
  template BatchLoss<T> total_loss<T>(const LossConfig&, const LossInputs<T>&);

SCHOOLCOUNT_INSTANTIATE(float)
SCHOOLCOUNT_INSTANTIATE(double)
#undef SCHOOLCOUNT_INSTANTIATE

}  // namespace schoolcount
