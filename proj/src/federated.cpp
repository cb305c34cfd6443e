#include "fpslab/federated.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "fpslab/errors.hpp"

namespace fpslab {
namespace {

constexpr std::uint64_t kTagBatch = 0xfe01;
constexpr std::uint64_t kTagBlcd = 0xfe02;
constexpr std::uint64_t kTagSplit = 0xfe03;
constexpr std::uint64_t kTagReplica = 0xfe04;

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

SparseVector sparse_from_support(std::span<const double> dense,
                                 std::vector<Index> support) {
  std::sort(support.begin(), support.end());
  SparseVector out(dense.size());
  for (Index i : support) out.push_back(i, dense[i]);
  return out;
}

void mark_index(std::vector<Index>& list, std::vector<unsigned char>& mark, Index i) {
  if (!mark[i]) {
    mark[i] = 1;
    list.push_back(i);
  }
}

}  // namespace

std::string to_string(Algorithm a) {
  switch (a) {
    case Algorithm::kFps: return "fps";
    case Algorithm::kFetchSgd: return "fetchsgd";
    case Algorithm::kBlcd: return "blcd";
    case Algorithm::kTopK: return "topk";
    case Algorithm::kFedProx: return "fedprox";
  }
  return "unknown";
}

Algorithm algorithm_from_string(const std::string& name) {
  if (name == "fps") return Algorithm::kFps;
  if (name == "fetchsgd") return Algorithm::kFetchSgd;
  if (name == "blcd") return Algorithm::kBlcd;
  if (name == "topk") return Algorithm::kTopK;
  if (name == "fedprox") return Algorithm::kFedProx;
  throw ConfigError("unknown algorithm '" + name + "'");
}

std::string to_string(IteratePolicy p) {
  return p == IteratePolicy::kDense ? "dense" : "mission";
}
std::string to_string(SketchPolicy p) {
  return p == SketchPolicy::kResync ? "resync" : "continuous";
}
std::string to_string(EpochUnit u) { return u == EpochUnit::kEpochs ? "epochs" : "steps"; }

IteratePolicy iterate_policy_from_string(const std::string& name) {
  if (name == "dense") return IteratePolicy::kDense;
  if (name == "mission") return IteratePolicy::kMission;
  throw ConfigError("unknown iterate policy '" + name + "'");
}
SketchPolicy sketch_policy_from_string(const std::string& name) {
  if (name == "resync") return SketchPolicy::kResync;
  if (name == "continuous") return SketchPolicy::kContinuous;
  throw ConfigError("unknown sketch policy '" + name + "'");
}
EpochUnit epoch_unit_from_string(const std::string& name) {
  if (name == "epochs") return EpochUnit::kEpochs;
  if (name == "steps") return EpochUnit::kSteps;
  throw ConfigError("unknown epoch unit '" + name + "'");
}

SketchShape FederatedConfig::sketch_shape(std::uint64_t dim) const {
  SketchShape s;
  s.rows = sketch_rows;
  s.cols = sketch_cols != 0 ? sketch_cols
                            : (sketch_rows == 0 ? 0 : channel.subcarriers / sketch_rows);
  s.dim = dim;
  s.hash_seed = hash_seed;
  return s;
}

void FederatedConfig::validate(const Dataset& ds) const {
  if (clients < 1) throw ConfigError("clients must be >= 1");
  if (local_epochs < 1) throw ConfigError("local_epochs must be >= 1");
  if (!(gamma > 0.0) || !std::isfinite(gamma)) throw ConfigError("gamma must be positive");
  if (!(mu >= 0.0) || !std::isfinite(mu)) throw ConfigError("mu must be >= 0");
  if (!(test_fraction >= 0.0 && test_fraction < 1.0)) {
    throw ConfigError("test_fraction must lie in [0, 1)");
  }
  channel.validate();
  if (loss == BaseLoss::kLogistic && ds.task != Task::kBinary) {
    throw ConfigError("loss: logistic loss needs a binary dataset");
  }
  if (ds.dim == 0) throw ConfigError("dataset has dimension 0");
  if (algorithm != Algorithm::kBlcd && algorithm != Algorithm::kFedProx) {
    if (heavy_hitters < 1 || heavy_hitters > ds.dim) {
      throw ConfigError("heavy_hitters must lie in [1, d]");
    }
    if (heavy_hitters > channel.subcarriers) {
      throw ConfigError("heavy_hitters must not exceed channel.subcarriers");
    }
  }
  if (uses_sketch()) {
    if (sketch_rows < 1) throw ConfigError("sketch_rows must be >= 1");
    SketchShape s = sketch_shape(ds.dim);
    if (s.cols < 1) throw ConfigError("sketch_cols: subcarriers too few for the sketch rows");
    if (s.cells() > channel.subcarriers) {
      throw ConfigError("sketch_cols: rows x cols exceeds channel.subcarriers");
    }
  }
}

void ClientState::clear_round() {
  for (Index i : delta_support) {
    delta[i] = 0.0;
    delta_mark[i] = 0;
  }
  delta_support.clear();
}

Simulation::Simulation(FederatedConfig cfg, const Dataset& ds) : cfg_(std::move(cfg)), ds_(&ds) {
  auto split = split_train_test(ds.size(), cfg_.test_fraction,
                                stream_key({cfg_.seed, kTagSplit}));
  train_ = std::move(split.train);
  test_ = std::move(split.test);
  init();
}

Simulation::Simulation(FederatedConfig cfg, const Dataset& ds, std::vector<std::size_t> train,
                       std::vector<std::size_t> test)
    : cfg_(std::move(cfg)), ds_(&ds), train_(std::move(train)), test_(std::move(test)) {
  init();
}

void Simulation::init() {
  cfg_.validate(*ds_);
  const std::uint64_t d = ds_->dim;
  PartitionSpec ps = cfg_.partition;
  ps.clients = cfg_.clients;
  shards_ = partition(*ds_, train_, ps);
  if (cfg_.uses_sketch()) shape_ = cfg_.sketch_shape(d);

  clients_.resize(cfg_.clients);
  for (std::size_t m = 0; m < cfg_.clients; ++m) {
    ClientState& c = clients_[m];
    c.shard = shards_[m];
    c.local.assign(d, 0.0);
    c.anchor.assign(d, 0.0);
    c.delta.assign(d, 0.0);
    c.delta_mark.assign(d, 0);
    c.drift_mark.assign(d, 0);
    if (cfg_.uses_sketch()) c.sketch.emplace(shape_);
  }
  server_.weights.assign(d, 0.0);
  if (cfg_.algorithm == Algorithm::kFetchSgd) server_.error_sketch.emplace(shape_);
  last_update_.assign(d, 0.0);
}

std::size_t Simulation::local_steps(std::size_t shard_size) const {
  if (shard_size == 0) return 0;
  if (cfg_.epoch_unit == EpochUnit::kSteps) return cfg_.local_epochs;
  std::size_t b = cfg_.batch_size == 0 ? shard_size : std::min(cfg_.batch_size, shard_size);
  return cfg_.local_epochs * ((shard_size + b - 1) / b);
}

void Simulation::set_weights(std::span<const double> w) {
  if (w.size() != ds_->dim) throw ConfigError("set_weights: dimension mismatch");
  server_.weights.assign(w.begin(), w.end());
  for (auto& c : clients_) {
    if (c.sketch) {
      c.sketch->clear();
      c.sketch->accumulate(w, 1.0);
    }
  }
  for (std::size_t m = 0; m < clients_.size(); ++m) {
    ClientState& c = clients_[m];
    c.anchor = server_.weights;
    c.local = c.anchor;
    for (Index i : c.drift) c.drift_mark[i] = 0;
    c.drift.clear();
  }
}

void Simulation::broadcast() {
  const auto& w = server_.weights;
  const bool sparse_broadcast = cfg_.algorithm == Algorithm::kFps;
  for (std::size_t m = 0; m < clients_.size(); ++m) {
    ClientState& c = clients_[m];
    c.anchor = w;
    if (cfg_.channel.downlink_noise_std > 0.0) {
      if (sparse_broadcast) {
        std::vector<Index> support;
        std::vector<double> values;
        for (std::size_t i = 0; i < w.size(); ++i) {
          if (w[i] != 0.0) {
            support.push_back(static_cast<Index>(i));
            values.push_back(w[i]);
          }
        }
        downlink_noise(values, cfg_.channel, round_, m);
        for (std::size_t j = 0; j < support.size(); ++j) c.anchor[support[j]] = values[j];
      } else {
        downlink_noise(c.anchor, cfg_.channel, round_, m);
      }
    }
    c.local = c.anchor;
    for (Index i : c.drift) c.drift_mark[i] = 0;
    c.drift.clear();
    if (cfg_.algorithm == Algorithm::kFps && cfg_.sketch_policy == SketchPolicy::kResync) {
      c.sketch->clear();
      c.sketch->accumulate(c.anchor, 1.0);
    }
  }
}

void Simulation::local_update(ClientState& c, std::size_t client_index) {
  c.clear_round();
  const std::size_t n = c.shard.indices.size();
  const std::size_t steps = local_steps(n);
  if (steps == 0) return;
  const std::size_t b = cfg_.batch_size == 0 ? n : std::min(cfg_.batch_size, n);
  const bool fps = cfg_.algorithm == Algorithm::kFps;
  const bool mission = fps && cfg_.iterate_policy == IteratePolicy::kMission;
  const double scale = -cfg_.gamma;

  RngStream rng(cfg_.seed, stream_key({kTagBatch, client_index, round_}));
  std::vector<std::size_t> order = c.shard.indices;
  std::size_t pos = n;
  ProximalObjective obj{cfg_.loss, cfg_.mu, c.anchor};

  for (std::size_t s = 0; s < steps; ++s) {
    if (pos >= n) {
      rng.shuffle(std::span<std::size_t>(order));
      pos = 0;
    }
    std::size_t end = std::min(pos + b, n);
    std::span<const std::size_t> batch(order.data() + pos, end - pos);
    pos = end;

    SparseVector g = minibatch_gradient(obj, c.local, *ds_, batch, mission ? nullptr : &c.drift);
    ++c.gradient_evaluations;
    auto idx = g.indices();
    auto val = g.values();
    for (std::size_t j = 0; j < idx.size(); ++j) {
      const Index i = idx[j];
      const double v = scale * val[j];
      c.local[i] += v;
      c.delta[i] += v;
      mark_index(c.delta_support, c.delta_mark, i);
      mark_index(c.drift, c.drift_mark, i);
    }
    if (fps) c.sketch->accumulate(g, scale);
    if (mission) {
      c.local = unsketch_topk(*c.sketch, cfg_.heavy_hitters).entries.to_dense();
    }
  }
  if (cfg_.algorithm == Algorithm::kFetchSgd) {
    c.sketch->clear();
    c.sketch->accumulate(sparse_from_support(c.delta, c.delta_support), 1.0);
  }
}

void Simulation::run_clients() {
  parallel_for(clients_.size(), cfg_.threads,
               [this](std::size_t m) { local_update(clients_[m], m); });
}

void Simulation::fps_round() {
  run_clients();
  std::vector<CountSketch> sent;
  sent.reserve(clients_.size());
  for (const auto& c : clients_) sent.push_back(*c.sketch);
  CountSketch received = transmit_sketches(sent, cfg_.channel, round_, &counter_);
  server_.weights = unsketch_topk(received, cfg_.heavy_hitters).entries.to_dense();
}

void Simulation::fetchsgd_round() {
  run_clients();
  std::vector<CountSketch> sent;
  sent.reserve(clients_.size());
  for (const auto& c : clients_) sent.push_back(*c.sketch);
  CountSketch received = transmit_sketches(sent, cfg_.channel, round_, &counter_);
  CountSketch& error = *server_.error_sketch;
  error.add_scaled(received, 1.0);
  HeavyHitters delta = unsketch_topk(error, cfg_.heavy_hitters);
  error.accumulate(delta.entries, -1.0);
  delta.entries.add_to(server_.weights, 1.0);
}

void Simulation::blcd_round() {
  run_clients();
  const std::uint64_t d = ds_->dim;
  const std::size_t slots = static_cast<std::size_t>(
      std::min<std::uint64_t>(cfg_.channel.subcarriers, d));
  RngStream shared(cfg_.seed, stream_key({kTagBlcd, round_}));
  std::vector<Index> common;
  if (!cfg_.blcd_per_client_selection) common = shared.sample_without_replacement(d, slots);

  std::vector<SlotPayload> payloads(clients_.size());
  for (std::size_t m = 0; m < clients_.size(); ++m) {
    SlotPayload& p = payloads[m];
    if (cfg_.blcd_per_client_selection) {
      RngStream own(cfg_.seed, stream_key({kTagBlcd, round_, m}));
      p.slots = own.sample_without_replacement(d, slots);
    } else {
      p.slots = common;
    }
    p.values.reserve(p.slots.size());
    for (Index i : p.slots) p.values.push_back(clients_[m].delta[i]);
  }
  SlotPayload received = transmit_coordinates(payloads, d, cfg_.channel, round_, false, &counter_);
  for (std::size_t j = 0; j < received.size(); ++j) {
    server_.weights[received.slots[j]] += received.values[j];
  }
}

void Simulation::topk_round() {
  run_clients();
  const std::uint64_t d = ds_->dim;
  DenseVector average(d, 0.0);
  const double inv_m = 1.0 / static_cast<double>(clients_.size());
  for (const auto& c : clients_) {
    std::vector<Index> support = c.delta_support;
    std::sort(support.begin(), support.end());
    for (Index i : support) average[i] += inv_m * c.delta[i];
  }
  std::vector<Index> top = topk_indices(average, cfg_.heavy_hitters);
  std::vector<SlotPayload> payloads(clients_.size());
  for (std::size_t m = 0; m < clients_.size(); ++m) {
    payloads[m].slots = top;
    for (Index i : top) payloads[m].values.push_back(clients_[m].delta[i]);
  }
  SlotPayload received = transmit_coordinates(payloads, d, cfg_.channel, round_, false, &counter_);
  for (std::size_t j = 0; j < received.size(); ++j) {
    server_.weights[received.slots[j]] += received.values[j];
  }
}

void Simulation::fedprox_round() {
  run_clients();
  const std::uint64_t d = ds_->dim;
  std::vector<Index> all(d);
  std::iota(all.begin(), all.end(), Index{0});
  std::vector<SlotPayload> payloads(clients_.size());
  for (std::size_t m = 0; m < clients_.size(); ++m) {
    payloads[m].slots = all;
    payloads[m].values = clients_[m].delta;
  }
  SlotPayload received = transmit_coordinates(payloads, d, cfg_.channel, round_, true, &counter_);
  for (std::size_t j = 0; j < received.size(); ++j) {
    server_.weights[received.slots[j]] += received.values[j];
  }
}

RoundMetrics Simulation::step() {
  counter_.reset();
  DenseVector previous = server_.weights;
  switch (cfg_.algorithm) {
    case Algorithm::kFps: fps_round(); break;
    case Algorithm::kFetchSgd: fetchsgd_round(); break;
    case Algorithm::kBlcd: blcd_round(); break;
    case Algorithm::kTopK: topk_round(); break;
    case Algorithm::kFedProx: fedprox_round(); break;
  }
  RoundMetrics m = metrics(previous);
  ++round_;
  broadcast();
  return m;
}

RoundMetrics Simulation::metrics(const DenseVector& previous) {
  const auto& w = server_.weights;
  RoundMetrics m;
  m.round = round_;
  m.algorithm = to_string(cfg_.algorithm);
  m.scenario = std::to_string(cfg_.partition.scenario);
  for (std::size_t i = 0; i < w.size(); ++i) last_update_[i] = w[i] - previous[i];

  if (!test_.empty()) {
    Evaluation e = evaluate(cfg_.loss, w, *ds_, test_);
    m.test_loss = e.loss;
    m.log_test_loss = std::log(e.loss);
    m.accuracy = e.accuracy;
  } else {
    m.test_loss = m.log_test_loss = m.accuracy = kNaN;
  }
  m.w_norm_sq = squared_norm(w);
  m.w_nnz = static_cast<std::size_t>(
      std::count_if(w.begin(), w.end(), [](double x) { return x != 0.0; }));
  m.soft_sparsity_w = m.w_norm_sq > 0.0 ? soft_sparsity(w) : kNaN;
  m.soft_sparsity_update = squared_norm(last_update_) > 0.0 ? soft_sparsity(last_update_) : kNaN;
  m.B_estimate = kNaN;
  if (cfg_.track_dissimilarity) {
    m.B_estimate = estimate_dissimilarity_B(*ds_, shards_, cfg_.loss, w).value;
  }
  m.reals_transmitted = counter_.total_reals;
  m.over_budget = counter_.over_budget;
  return m;
}

std::vector<RoundMetrics> run_experiment(const FederatedConfig& cfg, const Dataset& ds,
                                         const RoundObserver& observer) {
  Simulation sim(cfg, ds);
  std::vector<RoundMetrics> out;
  out.reserve(cfg.rounds);
  for (std::size_t t = 0; t < cfg.rounds; ++t) {
    out.push_back(sim.step());
    if (observer) observer(t, sim.server().weights);
  }
  return out;
}

BiasNoiseEstimate estimate_bias_noise(const FederatedConfig& cfg, const Dataset& ds,
                                      std::span<const double> w, std::size_t replicas) {
  if (replicas < 2) throw UsageError("bias/noise probe needs at least 2 replicas");
  auto split = split_train_test(ds.size(), cfg.test_fraction, stream_key({cfg.seed, kTagSplit}));

  BiasNoiseEstimate est;
  const std::uint64_t d = ds.dim;
  std::vector<DenseVector> g(replicas);
  for (std::size_t r = 0; r < replicas; ++r) {
    FederatedConfig c = cfg;
    c.seed = stream_key({cfg.seed, kTagReplica, r});
    c.channel.seed = stream_key({cfg.channel.seed, kTagReplica, r});
    Simulation sim(c, ds, split.train, {});
    sim.set_weights(w);
    sim.step();
    if (r == 0) {
      double steps = 0.0;
      std::size_t used = 0;
      for (const auto& shard : sim.shards()) {
        if (shard.indices.empty()) continue;
        steps += static_cast<double>(sim.local_steps(shard.indices.size()));
        ++used;
      }
      est.scale = cfg.gamma * steps / static_cast<double>(used);
    }
    g[r] = sim.last_update();
    for (auto& x : g[r]) x /= -est.scale;
  }

  DenseVector mean(d, 0.0);
  for (const auto& v : g) {
    for (std::size_t i = 0; i < d; ++i) mean[i] += v[i];
  }
  for (auto& x : mean) x /= static_cast<double>(replicas);
  double power = 0.0;
  for (const auto& v : g) {
    for (std::size_t i = 0; i < d; ++i) power += (v[i] - mean[i]) * (v[i] - mean[i]);
  }
  est.noise_power = power / static_cast<double>(replicas);

  DenseVector grad = full_gradient(ds, split.train, cfg.loss, w);
  est.grad_norm_sq = squared_norm(grad);
  est.bias.resize(d);
  for (std::size_t i = 0; i < d; ++i) est.bias[i] = mean[i] - grad[i];
  est.bias_norm_sq = squared_norm(est.bias);
  return est;
}

}  // namespace fpslab
