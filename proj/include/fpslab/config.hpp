#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "fpslab/analysis.hpp"
#include "fpslab/data.hpp"
#include "fpslab/federated.hpp"

namespace fpslab {

enum class DataKind { kSynthetic, kSparseClassification, kLibsvm };

struct DataSource {
  DataKind kind = DataKind::kSynthetic;
  SyntheticSpec synthetic;
  // Synthetic regression: one covariance for scenario 1, the two populations
  // for scenarios 2-4. Off when the config names a covariance.
  bool covariance_by_scenario = true;
  SparseClassificationSpec sparse;
  std::filesystem::path path;
  std::filesystem::path test_path;  // optional held-out file
  LibsvmOptions libsvm;
};

struct ComparisonSection {
  std::vector<Algorithm> algorithms;  // empty: federated.algorithm only
  std::vector<int> scenarios;         // empty: partition.scenario only
  // FetchSGD and BLCD aggregate after this many epochs instead of E; their
  // round count is scaled so every algorithm sees the same number of epochs.
  std::optional<std::size_t> baseline_local_epochs;
};

struct SweepSection {
  std::vector<double> mu{0.0, 0.01, 0.1, 1.0};
  std::vector<int> scenarios{1, 2, 3, 4};
};

struct TheorySection {
  TheoryParams params;
  bool L_given = false;
  bool estimate_B = false;
  std::optional<double> f0_gap;
  std::size_t power_iterations = 30;
};

struct DiagnoseSection {
  std::size_t rounds = 200;
  std::vector<std::size_t> checkpoints{25, 75, 150};
  std::size_t curve_points = 1000;
  std::size_t fit_points = 100;
  std::size_t batch_size = 0;  // 0: federated.batch_size
};

struct ExperimentFile {
  std::string name = "experiment";
  std::filesystem::path output_dir = "out";
  std::vector<std::uint64_t> seeds{0};
  unsigned threads = 1;
  DataSource data;
  FederatedConfig federated;
  bool hash_seed_given = false;
  bool mu_for_baselines = false;
  ComparisonSection comparison;
  SweepSection sweep;
  TheorySection theory;
  DiagnoseSection diagnose;
  nlohmann::json raw;
};

// Validates the document and fills an ExperimentFile. Unknown keys and bad
// values throw SchemaError carrying the dotted field path.
ExperimentFile parse_experiment(const nlohmann::json& doc);
ExperimentFile load_experiment(const std::filesystem::path& path);

struct PreparedData {
  Dataset dataset;
  std::vector<std::size_t> train;
  std::vector<std::size_t> test;
};

// Covariance a synthetic dataset uses under a partition scenario.
Covariance covariance_for(const ExperimentFile& ex, int scenario);

// Builds (or reads) the dataset for one replica seed and scenario and splits it.
PreparedData prepare_data(const ExperimentFile& ex, std::uint64_t seed, int scenario = 1);

// One cell of a run or sweep.
struct RunKey {
  Algorithm algorithm = Algorithm::kFps;
  int scenario = 1;
  double mu = 0.0;
  std::uint64_t seed = 0;
};

// The FederatedConfig a cell runs with: seeds derived from key.seed, mu
// applied to FPS and FedProx (and to the others when mu_for_baselines),
// and the epoch/round rescaling of the comparison section.
FederatedConfig config_for(const ExperimentFile& ex, const RunKey& key);

std::string run_file_stem(const ExperimentFile& ex, const RunKey& key);

}  // namespace fpslab
