#pragma once

#include <array>
#include <span>
#include <vector>

#include "json.hpp"

namespace schoolcount {

struct LossConfig {
  bool use_au = false;
  bool use_rank = false;
  bool use_ieb = false;
  double lambda = 0.1;
  double epsilon = 0.0;  // ranking margin
  std::array<double, 2> class_bounds{50.0, 150.0};

  void validate() const;
  friend bool operator==(const LossConfig&, const LossConfig&) = default;
};

void to_json(nlohmann::json& j, const LossConfig& config);
void from_json(const nlohmann::json& j, LossConfig& config);

// 1, 2 or 3 by ground-truth count.
int classify_count(double c, const std::array<double, 2>& bounds = {50.0, 150.0});

template <typename T>
T l_count(std::span<const T> c, std::span<const T> c_hat);
template <typename T>
T l_cau(std::span<const T> c, std::span<const T> c_hat, std::span<const T> logvar);
template <typename T>
T l_rank(std::span<const T> p, std::span<const T> p2, T epsilon = T(0));
template <typename T>
T l_ieb(std::span<const T> c, std::span<const T> c_hat, std::span<const int> classes);

template <typename T>
struct LossInputs {
  std::vector<T> c;       // ground truth counts
  std::vector<T> c_hat;   // predicted counts
  std::vector<T> logvar;  // predicted log variance; empty means all zero
  std::vector<T> p;       // GAP of the first (larger) image of each pair
  std::vector<T> p2;      // GAP of the second
};

template <typename T>
struct SampleLoss {
  T c, c_hat, logvar;
  int cls;
};

template <typename T>
struct BatchLoss {
  T total = 0;
  T L_c = 0, L_cau = 0, L_r = 0, L_ieb = 0;
  std::vector<SampleLoss<T>> per_sample;
  // d total / d input
  std::vector<T> d_c_hat, d_logvar, d_p, d_p2;
};

// total = (au ? L_cau : L_c) + (rank ? L_r : 0) + (ieb ? lambda * L_ieb : 0).
// All four components are always reported.
template <typename T>
BatchLoss<T> total_loss(const LossConfig& config, const LossInputs<T>& inputs);

}  // namespace schoolcount
