#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "fpslab/analysis.hpp"
#include "fpslab/channel.hpp"
#include "fpslab/data.hpp"
#include "fpslab/model.hpp"
#include "fpslab/sketch.hpp"

namespace fpslab {

enum class Algorithm { kFps, kFetchSgd, kBlcd, kTopK, kFedProx };

std::string to_string(Algorithm a);
Algorithm algorithm_from_string(const std::string& name);

// Where FPS clients evaluate gradients between communications.
enum class IteratePolicy {
  kDense,    // plain proximal SGD iterate; the sketch only carries the updates
  kMission,  // top-k unsketch of the local sketch after every step
};

// What an FPS client's sketch holds at the start of a round.
enum class SketchPolicy {
  kResync,      // a fresh sketch of the broadcast model
  kContinuous,  // never reset; keeps accumulating every local update
};

enum class EpochUnit { kEpochs, kSteps };

std::string to_string(IteratePolicy p);
std::string to_string(SketchPolicy p);
std::string to_string(EpochUnit u);
IteratePolicy iterate_policy_from_string(const std::string& name);
SketchPolicy sketch_policy_from_string(const std::string& name);
EpochUnit epoch_unit_from_string(const std::string& name);

struct FederatedConfig {
  Algorithm algorithm = Algorithm::kFps;
  BaseLoss loss = BaseLoss::kSquared;
  std::size_t clients = 10;        // M
  std::size_t local_epochs = 5;    // E
  EpochUnit epoch_unit = EpochUnit::kEpochs;
  double gamma = 0.01;
  double mu = 0.0;
  std::size_t heavy_hitters = 10;  // k
  std::size_t rounds = 0;          // T
  std::size_t batch_size = 0;      // 0 = the whole shard
  std::size_t sketch_rows = 5;
  std::size_t sketch_cols = 0;     // 0 = floor(K / rows)
  std::uint64_t hash_seed = 0;
  ChannelSpec channel;
  PartitionSpec partition;         // partition.clients is overridden by clients
  IteratePolicy iterate_policy = IteratePolicy::kDense;
  SketchPolicy sketch_policy = SketchPolicy::kResync;
  bool blcd_per_client_selection = false;
  double test_fraction = 0.2;
  std::uint64_t seed = 0;          // data split, mini-batches, BLCD slots
  unsigned threads = 1;
  bool track_dissimilarity = false;

  bool uses_sketch() const {
    return algorithm == Algorithm::kFps || algorithm == Algorithm::kFetchSgd;
  }
  SketchShape sketch_shape(std::uint64_t dim) const;
  // Throws ConfigError naming the offending field.
  void validate(const Dataset& ds) const;
};

struct ClientState {
  ClientShard shard;
  DenseVector local;    // w^m
  DenseVector anchor;   // last broadcast as received
  std::optional<CountSketch> sketch;
  // Sum of -gamma * g over the current round, with its support.
  DenseVector delta;
  std::vector<Index> delta_support;
  std::vector<unsigned char> delta_mark;
  // Coordinates where local may differ from anchor.
  std::vector<Index> drift;
  std::vector<unsigned char> drift_mark;
  std::size_t gradient_evaluations = 0;

  void clear_round();
};

struct ServerState {
  DenseVector weights;
  std::optional<CountSketch> error_sketch;  // FetchSGD
};

// Invoked after each round with the round index and the new global model.
using RoundObserver = std::function<void(std::size_t, std::span<const double>)>;

class Simulation {
 public:
  // Splits ds by cfg.test_fraction and partitions the training rows.
  Simulation(FederatedConfig cfg, const Dataset& ds);
  // Explicit train/test rows (test may be empty).
  Simulation(FederatedConfig cfg, const Dataset& ds, std::vector<std::size_t> train,
             std::vector<std::size_t> test);

  const FederatedConfig& config() const { return cfg_; }
  const ServerState& server() const { return server_; }
  std::span<const ClientState> clients() const { return clients_; }
  std::span<const ClientShard> shards() const { return shards_; }
  const std::vector<std::size_t>& train_rows() const { return train_; }
  const std::vector<std::size_t>& test_rows() const { return test_; }
  std::size_t rounds_done() const { return round_; }

  // Replaces the global model and re-broadcasts it; sketches are resynced.
  void set_weights(std::span<const double> w);

  // One communication round of the configured algorithm.
  RoundMetrics step();

  // The update the server applied in the last round (w_{t+1} - w_t).
  const DenseVector& last_update() const { return last_update_; }

  // Steps a client takes in one round for its shard size.
  std::size_t local_steps(std::size_t shard_size) const;

 private:
  void init();
  void broadcast();
  void local_update(ClientState& c, std::size_t client_index);
  void fps_round();
  void fetchsgd_round();
  void blcd_round();
  void topk_round();
  void fedprox_round();
  void run_clients();
  RoundMetrics metrics(const DenseVector& previous);

  FederatedConfig cfg_;
  const Dataset* ds_;
  std::vector<std::size_t> train_;
  std::vector<std::size_t> test_;
  std::vector<ClientShard> shards_;
  std::vector<ClientState> clients_;
  ServerState server_;
  SketchShape shape_;
  TransmissionCounter counter_;
  DenseVector last_update_;
  std::size_t round_ = 0;
};

// Runs cfg.rounds rounds from w0 = 0 and returns one record per round.
std::vector<RoundMetrics> run_experiment(const FederatedConfig& cfg, const Dataset& ds,
                                         const RoundObserver& observer = {});

struct BiasNoiseEstimate {
  DenseVector bias;          // beta-hat
  double bias_norm_sq = 0.0;
  double noise_power = 0.0;  // mean ||g_r - mean g||^2
  double grad_norm_sq = 0.0; // ||grad f(w)||^2 on the training rows
  double scale = 0.0;        // gamma * mean local steps
};

// Runs one round from w under `replicas` independent batch/channel seeds.
// Each received update u_r becomes g_r = -u_r / scale; beta-hat is the
// replica mean of g_r minus the full-batch gradient at w.
BiasNoiseEstimate estimate_bias_noise(const FederatedConfig& cfg, const Dataset& ds,
                                      std::span<const double> w, std::size_t replicas);

}  // namespace fpslab
