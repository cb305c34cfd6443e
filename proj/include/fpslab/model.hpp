#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "fpslab/data.hpp"
#include "fpslab/numerics.hpp"

namespace fpslab {

enum class BaseLoss { kSquared, kLogistic };

std::string to_string(BaseLoss loss);
BaseLoss base_loss_from_string(const std::string& name);

// f(w) = mean base loss + (mu/2) ||w - anchor||^2.
// An empty anchor stands for the zero vector.
struct ProximalObjective {
  BaseLoss loss = BaseLoss::kSquared;
  double mu = 0.0;
  std::span<const double> anchor;

  void validate(std::uint64_t dim) const;
  double anchor_at(Index i) const { return anchor.empty() ? 0.0 : anchor[i]; }
};

inline double sigmoid(double z) {
  if (z >= 0.0) return 1.0 / (1.0 + std::exp(-z));
  double e = std::exp(z);
  return e / (1.0 + e);
}

// log(1 + e^z) without overflow.
inline double softplus(double z) {
  return (z > 0.0 ? z : 0.0) + std::log1p(std::exp(-std::abs(z)));
}

// w.x for squared error, sigma(w.x) for logistic.
double predict(BaseLoss loss, std::span<const double> w, const SparseVector& x);

// Per-sample base loss: (1/2)(z - y)^2 or softplus(z) - y z with z = w.x.
double sample_loss(BaseLoss loss, double margin, double label);
// d/dz of sample_loss.
double sample_loss_slope(BaseLoss loss, double margin, double label);

double minibatch_loss(const ProximalObjective& obj, std::span<const double> w,
                      const Dataset& ds, std::span<const std::size_t> batch);

// Mean base gradient + mu (w - anchor), as a sparse vector over the union of
// the batch support and the coordinates where w and anchor differ.
// `drift_support`, when given, must list every coordinate where w != anchor
// (in any order, duplicates allowed); otherwise all d coordinates are scanned.
SparseVector minibatch_gradient(const ProximalObjective& obj,
                                std::span<const double> w, const Dataset& ds,
                                std::span<const std::size_t> batch,
                                const std::vector<Index>* drift_support = nullptr);

// Largest eigenvalue of (1/n) X^T X over `rows` by power iteration, divided
// by 4 for the logistic loss.
double smoothness_estimate(BaseLoss loss, const Dataset& ds,
                           std::span<const std::size_t> rows,
                           std::size_t iterations = 100, std::uint64_t seed = 0);

struct Evaluation {
  double loss = 0.0;      // mean base loss
  double accuracy = 0.0;  // classification only, NaN otherwise
};

// Decision rule for accuracy: predict class 1 when sigma(w.x) >= 0.5.
Evaluation evaluate(BaseLoss loss, std::span<const double> w, const Dataset& ds,
                    std::span<const std::size_t> rows);

}  // namespace fpslab
