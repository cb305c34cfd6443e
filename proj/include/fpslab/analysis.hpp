#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include "fpslab/data.hpp"
#include "fpslab/model.hpp"
#include "fpslab/numerics.hpp"

namespace fpslab {

// ||x||_1^2 / ||x||_2^2. Throws UndefinedInputError on the zero vector.
double soft_sparsity(std::span<const double> v);
double soft_sparsity(const SparseVector& v);

struct PowerLawFit {
  double p = 0.0;   // magnitude of the log-log slope
  double r2 = 0.0;  // 1 when the sorted magnitudes are constant
  std::size_t points = 0;
};

// Sorts |v| descending and regresses log|v_(i)| on log i over the nonzero
// prefix, capped at max_points when nonzero. Needs >= 10 nonzeros.
PowerLawFit fit_power_law(std::span<const double> v, std::size_t max_points = 0);

struct CompressibilityReport {
  double soft_sparsity = 0.0;
  double fitted_p = 0.0;
  double fit_r2 = 0.0;
  double topk_mass = 0.0;  // share of ||v||_2^2 held by the k largest entries
  bool poor_compressibility = false;  // soft sparsity above the sketch width
};

CompressibilityReport compressibility(std::span<const double> v, std::size_t k,
                                      std::size_t width, std::size_t fit_points = 0);

struct DissimilarityEstimate {
  double value = 0.0;          // B(w); NaN outside the region
  double grad_norm_sq = 0.0;   // ||grad f(w)||^2
  bool in_region = false;      // grad_norm_sq > epsilon
};

// Full-batch base-loss gradients per shard (empty shards skipped).
// B(w) = sqrt(mean_m ||grad f_m||^2 / ||mean_m grad f_m||^2).
DissimilarityEstimate estimate_dissimilarity_B(const Dataset& ds,
                                               std::span<const ClientShard> shards,
                                               BaseLoss loss,
                                               std::span<const double> w,
                                               double epsilon = 1e-8);

// Mean full-batch base-loss gradient over `rows`, dense.
DenseVector full_gradient(const Dataset& ds, std::span<const std::size_t> rows,
                          BaseLoss loss, std::span<const double> w);

struct TheoryParams {
  double L = 1.0;
  double mu = 0.0;
  double B = 1.0;
  double P_b = 0.0;
  double b2 = 0.0;
  double P_n = 0.0;
  double sigma2 = 0.0;
  double E = 1.0;
  double gamma = 0.01;
  double c = 4.0;
  double k = 1.0;
  double d = 1.0;
  double p = 2.0;
  double T = 0.0;
  double delta = 0.05;
  double W = 1.0;

  void validate() const;
};

double theory_H(const TheoryParams& t);
double rho(const TheoryParams& t);

struct GammaBound {
  double value = 0.0;
  bool admissible = false;  // numerator 1 - 6 P_b E^2 B^2 > 0
};
GammaBound gamma_max(const TheoryParams& t);

// 1/c + ((k+1)^(1-2p) - d^(1-2p)) / (2p-1).
double residual_factor(double c, double k, double d, double p);

struct TheoremBound {
  std::array<double, 4> terms{};  // gap, unsketch residual, bias, noise
  double total = 0.0;
};
TheoremBound theorem_rhs(const TheoryParams& t, double f0_gap);

struct AffineFit {
  double slope = 0.0;
  double intercept = 0.0;
  double r2 = 0.0;
  bool clipped = false;
};

// Least squares y ~ slope * x + intercept, then slope clipped to
// [slope_lo, slope_hi] and intercept to >= 0 (the assumption ranges).
AffineFit fit_affine_bound(std::span<const double> x, std::span<const double> y,
                           double slope_lo, double slope_hi);

struct RoundMetrics {
  std::size_t round = 0;
  std::string algorithm;
  std::string scenario;
  double test_loss = 0.0;
  double log_test_loss = 0.0;
  double accuracy = 0.0;
  double w_norm_sq = 0.0;
  double soft_sparsity_w = 0.0;
  double B_estimate = 0.0;
  std::uint64_t reals_transmitted = 0;

  // Not part of the CSV schema.
  double soft_sparsity_update = 0.0;
  std::size_t w_nnz = 0;
  bool over_budget = false;
};

inline constexpr int kCsvSchemaVersion = 1;

void write_metrics_csv(std::ostream& out, std::span<const RoundMetrics> rows);
std::vector<RoundMetrics> read_metrics_csv(std::istream& in);

// %.17g rendering used by every emitted file.
std::string format_real(double v);

}  // namespace fpslab
