#include "fpslab/data.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <set>

#include "fpslab/errors.hpp"

namespace fpslab {
namespace {

constexpr std::uint64_t kTagWeights = 0x5731;
constexpr std::uint64_t kTagPermutation = 0x5732;
constexpr std::uint64_t kTagRows = 0x5733;
constexpr std::uint64_t kTagInformative = 0x5734;
constexpr std::uint64_t kTagSplit = 0x5735;

}  // namespace

std::string to_string(Task task) {
  switch (task) {
    case Task::kRegression: return "regression";
    case Task::kBinary: return "binary";
    case Task::kMulticlass: return "multiclass";
  }
  return "unknown";
}

Task task_from_string(const std::string& name) {
  if (name == "regression") return Task::kRegression;
  if (name == "binary") return Task::kBinary;
  if (name == "multiclass") return Task::kMulticlass;
  throw ConfigError("unknown task '" + name + "'");
}

std::string to_string(Covariance c) {
  switch (c) {
    case Covariance::kOrdered: return "ordered";
    case Covariance::kPermuted: return "permuted";
    case Covariance::kTwoPopulation: return "two_population";
  }
  return "unknown";
}

Covariance covariance_from_string(const std::string& name) {
  if (name == "ordered") return Covariance::kOrdered;
  if (name == "permuted") return Covariance::kPermuted;
  if (name == "two_population") return Covariance::kTwoPopulation;
  throw ConfigError("unknown covariance '" + name + "'");
}

int Dataset::num_strata() const {
  if (is_classification()) {
    double max_label = 0.0;
    for (double y : labels) max_label = std::max(max_label, y);
    return task == Task::kBinary ? 2 : static_cast<int>(max_label) + 1;
  }
  if (groups.empty()) return 1;
  return *std::max_element(groups.begin(), groups.end()) + 1;
}

int Dataset::stratum(std::size_t row) const {
  if (is_classification()) return static_cast<int>(labels[row]);
  return groups.empty() ? 0 : groups[row];
}

void Dataset::validate() const {
  if (rows.size() != labels.size()) {
    throw ConfigError("dataset: row/label count mismatch");
  }
  if (!groups.empty() && groups.size() != rows.size()) {
    throw ConfigError("dataset: row/group count mismatch");
  }
  for (const auto& r : rows) {
    if (r.dim() != dim) throw ConfigError("dataset: rows disagree on dimension");
  }
  if (is_classification()) {
    for (double y : labels) {
      if (y < 0.0 || y != std::floor(y)) {
        throw ConfigError("dataset: class ids must be non-negative integers");
      }
      if (task == Task::kBinary && y > 1.0) {
        throw ConfigError("dataset: binary labels must be 0 or 1");
      }
    }
  }
  for (int g : groups) {
    if (g < 0) throw ConfigError("dataset: negative population id");
  }
}

SyntheticData generate_synthetic(const SyntheticSpec& spec) {
  if (!(spec.power > 1.0)) {
    throw ConfigError("synthetic: power-law degree p must exceed 1 (got " +
                      std::to_string(spec.power) + ")");
  }
  if (spec.dim == 0) throw ConfigError("synthetic: dim must be positive");
  if (spec.noise_scale < 0.0) {
    throw ConfigError("synthetic: noise scale must be non-negative");
  }

  SyntheticData out;
  const std::uint64_t d = spec.dim;

  RngStream weight_rng(spec.seed, kTagWeights);
  out.true_weights = sample_gaussian(weight_rng, d, 0.0, 1.0);

  out.permutation.resize(d);
  std::iota(out.permutation.begin(), out.permutation.end(), std::uint64_t{1});
  if (spec.covariance != Covariance::kOrdered) {
    RngStream perm_rng(spec.seed, kTagPermutation);
    perm_rng.shuffle(std::span<std::uint64_t>(out.permutation));
  }

  std::vector<double> std_ordered(d), std_permuted(d);
  for (std::uint64_t j = 0; j < d; ++j) {
    std_ordered[j] = std::pow(static_cast<double>(j + 1), -spec.power / 2.0);
    std_permuted[j] =
        std::pow(static_cast<double>(out.permutation[j]), -spec.power / 2.0);
  }

  Dataset& ds = out.dataset;
  ds.dim = d;
  ds.task = Task::kRegression;
  ds.rows.reserve(spec.samples);
  ds.labels.reserve(spec.samples);
  if (spec.covariance == Covariance::kTwoPopulation) ds.groups.reserve(spec.samples);

  RngStream rows_rng(spec.seed, kTagRows);
  for (std::size_t r = 0; r < spec.samples; ++r) {
    RngStream rng = rows_rng.child(r);
    bool permuted = spec.covariance == Covariance::kPermuted ||
                    (spec.covariance == Covariance::kTwoPopulation && r % 2 == 1);
    const auto& stds = permuted ? std_permuted : std_ordered;
    std::vector<Index> idx;
    std::vector<double> val;
    idx.reserve(d);
    val.reserve(d);
    double y = 0.0;
    for (std::uint64_t j = 0; j < d; ++j) {
      double x = stds[j] * rng.normal();
      y += x * out.true_weights[j];
      idx.push_back(static_cast<Index>(j));
      val.push_back(x);
    }
    y += spec.noise_scale * rng.normal();
    ds.rows.emplace_back(d, std::move(idx), std::move(val));
    ds.labels.push_back(y);
    if (spec.covariance == Covariance::kTwoPopulation) {
      ds.groups.push_back(permuted ? 1 : 0);
    }
  }
  return out;
}

SparseClassificationData generate_sparse_classification(
    const SparseClassificationSpec& spec) {
  if (spec.dim == 0 || spec.informative == 0 ||
      spec.informative + spec.noise_features > spec.dim) {
    throw ConfigError("sparse classification: dim too small for the requested "
                      "informative and noise features");
  }
  SparseClassificationData out;
  RngStream feature_rng(spec.seed, kTagInformative);
  auto informative = feature_rng.sample_without_replacement(spec.dim, spec.informative);
  // Rank the informative features in a random order so the heaviest weight
  // is not tied to the smallest index.
  std::vector<std::size_t> rank(spec.informative);
  std::iota(rank.begin(), rank.end(), std::size_t{0});
  feature_rng.shuffle(std::span<std::size_t>(rank));

  std::vector<double> weight(spec.informative);
  for (std::size_t f = 0; f < spec.informative; ++f) {
    double sign = feature_rng.uniform() < 0.5 ? -1.0 : 1.0;
    weight[f] = sign * std::pow(static_cast<double>(rank[f] + 1), -spec.power);
  }
  out.true_weights = SparseVector(spec.dim, informative, weight);

  std::set<Index> informative_set(informative.begin(), informative.end());
  Dataset& ds = out.dataset;
  ds.dim = spec.dim;
  ds.task = Task::kBinary;
  RngStream rows_rng(spec.seed, kTagRows);
  std::vector<double> margins;
  margins.reserve(spec.samples);
  for (std::size_t r = 0; r < spec.samples; ++r) {
    RngStream rng = rows_rng.child(r);
    std::vector<std::pair<Index, double>> entries;
    double margin = 0.0;
    for (std::size_t f = 0; f < spec.informative; ++f) {
      double x = std::abs(rng.normal());
      margin += weight[f] * x;
      entries.emplace_back(informative[f], x);
    }
    std::set<Index> used(informative_set);
    while (entries.size() < spec.informative + spec.noise_features) {
      auto j = static_cast<Index>(rng.uniform_index(spec.dim));
      if (!used.insert(j).second) continue;
      entries.emplace_back(j, std::abs(rng.normal()));
    }
    std::sort(entries.begin(), entries.end());
    std::vector<Index> idx;
    std::vector<double> val;
    for (const auto& [j, x] : entries) {
      idx.push_back(j);
      val.push_back(x);
    }
    ds.rows.emplace_back(spec.dim, std::move(idx), std::move(val));
    margins.push_back(margin);
  }
  // Nonnegative features shift every margin one way; split at the median.
  std::vector<double> sorted = margins;
  double threshold = 0.0;
  if (!sorted.empty()) {
    auto mid = sorted.begin() + static_cast<std::ptrdiff_t>(sorted.size() / 2);
    std::nth_element(sorted.begin(), mid, sorted.end());
    threshold = *mid;
  }
  for (double m : margins) ds.labels.push_back(m >= threshold ? 1.0 : 0.0);
  return out;
}

TrainTestSplit split_train_test(std::size_t n, double test_fraction,
                                std::uint64_t seed) {
  if (!(test_fraction >= 0.0 && test_fraction < 1.0)) {
    throw ConfigError("test fraction must lie in [0, 1)");
  }
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  RngStream rng(seed, kTagSplit);
  rng.shuffle(std::span<std::size_t>(order));
  auto n_test = static_cast<std::size_t>(std::llround(test_fraction * n));
  TrainTestSplit split;
  split.train.assign(order.begin(), order.end() - static_cast<std::ptrdiff_t>(n_test));
  split.test.assign(order.end() - static_cast<std::ptrdiff_t>(n_test), order.end());
  std::sort(split.train.begin(), split.train.end());
  std::sort(split.test.begin(), split.test.end());
  return split;
}

}  // namespace fpslab
