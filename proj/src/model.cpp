#include "fpslab/model.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "fpslab/errors.hpp"

namespace fpslab {
namespace {

constexpr std::uint64_t kTagPowerIteration = 0x3c01;

// Scratch accumulator reused across calls on the same thread.
struct GradientWorkspace {
  std::vector<double> acc;
  std::vector<double> prox;
  std::vector<unsigned char> mark;
  std::vector<Index> touched;

  void prepare(std::uint64_t dim) {
    if (acc.size() != dim) {
      acc.assign(dim, 0.0);
      prox.assign(dim, 0.0);
      mark.assign(dim, 0);
      touched.clear();
    }
  }
  void touch(Index i) {
    if (!mark[i]) {
      mark[i] = 1;
      touched.push_back(i);
    }
  }
};

thread_local GradientWorkspace workspace;

void check_batch(const Dataset& ds, std::span<const std::size_t> batch,
                 std::span<const double> w) {
  if (batch.empty()) throw UsageError("mini-batch is empty");
  if (w.size() != ds.dim) {
    throw ConfigError("model dimension " + std::to_string(w.size()) +
                      " does not match data dimension " + std::to_string(ds.dim));
  }
}

}  // namespace

std::string to_string(BaseLoss loss) {
  return loss == BaseLoss::kSquared ? "squared" : "logistic";
}

BaseLoss base_loss_from_string(const std::string& name) {
  if (name == "squared") return BaseLoss::kSquared;
  if (name == "logistic") return BaseLoss::kLogistic;
  throw ConfigError("unknown loss '" + name + "'");
}

void ProximalObjective::validate(std::uint64_t dim) const {
  if (!(mu >= 0.0)) throw ConfigError("objective: mu must be >= 0");
  if (!anchor.empty() && anchor.size() != dim) {
    throw ConfigError("objective: anchor dimension mismatch");
  }
}

double predict(BaseLoss loss, std::span<const double> w, const SparseVector& x) {
  double z = dot(x, w);
  return loss == BaseLoss::kSquared ? z : sigmoid(z);
}

double sample_loss(BaseLoss loss, double margin, double label) {
  if (loss == BaseLoss::kSquared) {
    double r = margin - label;
    return 0.5 * r * r;
  }
  return softplus(margin) - label * margin;
}

double sample_loss_slope(BaseLoss loss, double margin, double label) {
  if (loss == BaseLoss::kSquared) return margin - label;
  return sigmoid(margin) - label;
}

double minibatch_loss(const ProximalObjective& obj, std::span<const double> w,
                      const Dataset& ds, std::span<const std::size_t> batch) {
  check_batch(ds, batch, w);
  obj.validate(ds.dim);
  double total = 0.0;
  for (std::size_t r : batch) {
    total += sample_loss(obj.loss, dot(ds.rows[r], w), ds.labels[r]);
  }
  double value = total / static_cast<double>(batch.size());
  if (obj.mu > 0.0) {
    double sq = 0.0;
    for (std::size_t i = 0; i < w.size(); ++i) {
      double diff = w[i] - obj.anchor_at(static_cast<Index>(i));
      sq += diff * diff;
    }
    value += 0.5 * obj.mu * sq;
  }
  return value;
}

SparseVector minibatch_gradient(const ProximalObjective& obj,
                                std::span<const double> w, const Dataset& ds,
                                std::span<const std::size_t> batch,
                                const std::vector<Index>* drift_support) {
  check_batch(ds, batch, w);
  obj.validate(ds.dim);
  auto& ws = workspace;
  ws.prepare(ds.dim);

  for (std::size_t r : batch) {
    const SparseVector& x = ds.rows[r];
    double slope = sample_loss_slope(obj.loss, dot(x, w), ds.labels[r]);
    if (slope == 0.0) continue;
    auto idx = x.indices();
    auto val = x.values();
    for (std::size_t j = 0; j < idx.size(); ++j) {
      ws.touch(idx[j]);
      ws.acc[idx[j]] += slope * val[j];
    }
  }
  const double n = static_cast<double>(batch.size());
  for (Index i : ws.touched) ws.acc[i] /= n;

  if (obj.mu > 0.0) {
    auto add_prox = [&](Index i) {
      double diff = w[i] - obj.anchor_at(i);
      if (diff == 0.0 || ws.prox[i] != 0.0) return;
      ws.touch(i);
      ws.prox[i] = obj.mu * diff;
    };
    if (drift_support) {
      for (Index i : *drift_support) add_prox(i);
    } else {
      for (std::uint64_t i = 0; i < ds.dim; ++i) add_prox(static_cast<Index>(i));
    }
  }

  std::sort(ws.touched.begin(), ws.touched.end());
  SparseVector g(ds.dim);
  for (Index i : ws.touched) {
    g.push_back(i, ws.acc[i] + ws.prox[i]);
    ws.acc[i] = 0.0;
    ws.prox[i] = 0.0;
    ws.mark[i] = 0;
  }
  ws.touched.clear();
  return g;
}

double smoothness_estimate(BaseLoss loss, const Dataset& ds,
                           std::span<const std::size_t> rows,
                           std::size_t iterations, std::uint64_t seed) {
  if (rows.empty()) throw UsageError("smoothness estimate needs at least one row");
  RngStream rng(seed, kTagPowerIteration);
  DenseVector v = sample_gaussian(rng, ds.dim, 0.0, 1.0);
  double nv = std::sqrt(squared_norm(v));
  for (auto& x : v) x /= nv;
  DenseVector u(ds.dim);
  double lambda = 0.0;
  const double n = static_cast<double>(rows.size());
  for (std::size_t it = 0; it < iterations; ++it) {
    std::fill(u.begin(), u.end(), 0.0);
    for (std::size_t r : rows) {
      double z = dot(ds.rows[r], v);
      ds.rows[r].add_to(u, z / n);
    }
    lambda = dot(std::span<const double>(v), std::span<const double>(u));
    double nu = std::sqrt(squared_norm(u));
    if (nu == 0.0) break;
    for (std::size_t i = 0; i < u.size(); ++i) v[i] = u[i] / nu;
  }
  return loss == BaseLoss::kLogistic ? lambda / 4.0 : lambda;
}

Evaluation evaluate(BaseLoss loss, std::span<const double> w, const Dataset& ds,
                    std::span<const std::size_t> rows) {
  Evaluation e;
  e.accuracy = std::numeric_limits<double>::quiet_NaN();
  if (rows.empty()) {
    e.loss = std::numeric_limits<double>::quiet_NaN();
    return e;
  }
  double total = 0.0;
  std::size_t correct = 0;
  for (std::size_t r : rows) {
    double z = dot(ds.rows[r], w);
    total += sample_loss(loss, z, ds.labels[r]);
    if (ds.is_classification()) {
      double predicted = sigmoid(z) >= 0.5 ? 1.0 : 0.0;
      if (predicted == ds.labels[r]) ++correct;
    }
  }
  e.loss = total / static_cast<double>(rows.size());
  if (ds.is_classification()) {
    e.accuracy = static_cast<double>(correct) / static_cast<double>(rows.size());
  }
  return e;
}

}  // namespace fpslab
