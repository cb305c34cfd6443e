#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "fpslab/numerics.hpp"

namespace fpslab {

enum class Task { kRegression, kBinary, kMulticlass };

std::string to_string(Task task);
Task task_from_string(const std::string& name);

struct Dataset {
  std::uint64_t dim = 0;
  Task task = Task::kRegression;
  std::vector<SparseVector> rows;
  std::vector<double> labels;
  // Population id per row (e.g. which covariance a synthetic row came from).
  // Empty means a single population.
  std::vector<int> groups;

  std::size_t size() const { return rows.size(); }
  bool is_classification() const { return task != Task::kRegression; }

  // Class count for classification; population count for regression.
  int num_strata() const;
  // Class id (classification) or population id (regression) of a row.
  int stratum(std::size_t row) const;

  // Throws ConfigError when the invariants do not hold.
  void validate() const;
};

enum class Covariance {
  kOrdered,    // Var X(j) = j^-p, 1-based j
  kPermuted,   // Var X(j) = pi(j)^-p for a seeded permutation pi
  kTwoPopulation,  // alternate rows ordered / permuted, recorded in groups
};

std::string to_string(Covariance c);
Covariance covariance_from_string(const std::string& name);

struct SyntheticSpec {
  std::size_t samples = 1000;
  std::uint64_t dim = 10000;
  double power = 5.0;
  double noise_scale = 0.01;
  Covariance covariance = Covariance::kOrdered;
  std::uint64_t seed = 0;
};

struct SyntheticData {
  Dataset dataset;
  DenseVector true_weights;
  // pi used by the permuted population (1-based ranks), identity otherwise.
  std::vector<std::uint64_t> permutation;
};

// Gaussian rows with power-law diagonal covariance and labels
// y = X w* + noise_scale * n, with w* and n standard normal.
SyntheticData generate_synthetic(const SyntheticSpec& spec);

// Sparse high-dimensional binary classification: every row carries the
// `informative` features plus `noise_features` random other coordinates, all
// with |N(0,1)| values. Labels are 1[w_true . x > median margin] where the
// informative weights decay as rank^-power with random signs.
struct SparseClassificationSpec {
  std::size_t samples = 5000;
  std::uint64_t dim = 100000;
  std::size_t informative = 10;
  double power = 1.0;
  std::size_t noise_features = 20;
  std::uint64_t seed = 0;
};

struct SparseClassificationData {
  Dataset dataset;
  SparseVector true_weights;
};

SparseClassificationData generate_sparse_classification(
    const SparseClassificationSpec& spec);

struct LibsvmOptions {
  // Declared feature dimension; 0 means "max observed index".
  std::uint64_t dim = 0;
  // Forced task; inferred from the labels when empty.
  std::optional<Task> task;
};

Dataset parse_libsvm(const std::filesystem::path& path,
                     const LibsvmOptions& options = {});
Dataset parse_libsvm(std::istream& in, const LibsvmOptions& options = {});
void write_libsvm(std::ostream& out, const Dataset& ds);

struct ClientShard {
  std::size_t client_id = 0;
  std::vector<std::size_t> indices;
};

struct PartitionSpec {
  int scenario = 1;
  std::size_t clients = 10;
  // Dirichlet concentration for scenarios 3-4; defaults 0.1 and 1.0.
  std::optional<double> alpha;
  std::size_t classes_per_client = 1;
  std::uint64_t seed = 0;

  double effective_alpha() const;
};

// Splits `rows` (indices into ds) across clients:
//   1  IID: shuffle within each class, deal round-robin.
//   2  each client holds exactly classes_per_client classes, assigned
//      round-robin; each class is split evenly among its holders.
//   3/4 per class, proportions q ~ Dir_M(alpha) rounded by largest remainder.
// Regression datasets use their populations in place of classes.
std::vector<ClientShard> partition(const Dataset& ds,
                                   std::span<const std::size_t> rows,
                                   const PartitionSpec& spec);
std::vector<ClientShard> partition(const Dataset& ds, const PartitionSpec& spec);

// Proportions drawn for scenarios 3/4, exposed for diagnostics:
// result[c][m] is the fraction of class c sent to client m.
std::vector<std::vector<double>> dirichlet_proportions(int classes,
                                                       std::size_t clients,
                                                       double alpha,
                                                       std::uint64_t seed);

// Largest-remainder rounding of total * q into integers summing to total;
// ties go to the lower index.
std::vector<std::size_t> largest_remainder(std::span<const double> q,
                                           std::size_t total);

struct TrainTestSplit {
  std::vector<std::size_t> train;
  std::vector<std::size_t> test;
};

// Seeded shuffle, then the last round(test_fraction * n) rows form the test set.
TrainTestSplit split_train_test(std::size_t n, double test_fraction,
                                std::uint64_t seed);

}  // namespace fpslab
