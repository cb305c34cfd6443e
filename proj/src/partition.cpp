#include <algorithm>
#include <cmath>
#include <numeric>

#include "fpslab/data.hpp"
#include "fpslab/errors.hpp"

namespace fpslab {
namespace {

constexpr std::uint64_t kTagPartition = 0x9a71;
constexpr std::uint64_t kTagDirichlet = 0x9a72;

std::vector<std::vector<std::size_t>> rows_by_stratum(
    const Dataset& ds, std::span<const std::size_t> rows, int strata,
    RngStream& rng) {
  std::vector<std::vector<std::size_t>> by(static_cast<std::size_t>(strata));
  for (std::size_t r : rows) {
    if (r >= ds.size()) throw ConfigError("partition: row index out of range");
    int s = ds.stratum(r);
    if (s < 0 || s >= strata) throw ConfigError("partition: stratum out of range");
    by[static_cast<std::size_t>(s)].push_back(r);
  }
  for (auto& v : by) {
    std::sort(v.begin(), v.end());
    rng.shuffle(std::span<std::size_t>(v));
  }
  return by;
}

}  // namespace

double PartitionSpec::effective_alpha() const {
  if (alpha) return *alpha;
  return scenario == 3 ? 0.1 : 1.0;
}

std::vector<std::size_t> largest_remainder(std::span<const double> q,
                                           std::size_t total) {
  std::vector<std::size_t> counts(q.size(), 0);
  if (q.empty()) {
    if (total != 0) throw ConfigError("largest remainder: no bins");
    return counts;
  }
  double sum = 0.0;
  for (double x : q) {
    if (!(x >= 0.0)) throw ConfigError("largest remainder: negative proportion");
    sum += x;
  }
  if (!(sum > 0.0)) throw ConfigError("largest remainder: proportions sum to zero");

  std::vector<double> frac(q.size());
  std::size_t assigned = 0;
  for (std::size_t m = 0; m < q.size(); ++m) {
    double exact = static_cast<double>(total) * (q[m] / sum);
    double fl = std::floor(exact);
    counts[m] = static_cast<std::size_t>(fl);
    frac[m] = exact - fl;
    assigned += counts[m];
  }
  std::vector<std::size_t> order(q.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return frac[a] > frac[b]; });
  for (std::size_t i = 0; assigned < total; i = (i + 1) % order.size()) {
    ++counts[order[i]];
    ++assigned;
  }
  return counts;
}

std::vector<std::vector<double>> dirichlet_proportions(int classes,
                                                       std::size_t clients,
                                                       double alpha,
                                                       std::uint64_t seed) {
  if (!(alpha > 0.0)) throw ConfigError("partition: alpha must be positive");
  if (clients == 0) throw ConfigError("partition: need at least one client");
  std::vector<std::vector<double>> q(static_cast<std::size_t>(classes));
  RngStream base(seed, kTagDirichlet);
  for (int c = 0; c < classes; ++c) {
    RngStream rng = base.child(static_cast<std::uint64_t>(c));
    auto& row = q[static_cast<std::size_t>(c)];
    row.resize(clients);
    double sum = 0.0;
    for (auto& x : row) {
      x = rng.gamma(alpha);
      sum += x;
    }
    if (sum > 0.0) {
      for (auto& x : row) x /= sum;
    } else {
      // Every draw underflowed (tiny alpha): the limit is a point mass.
      std::fill(row.begin(), row.end(), 0.0);
      row[rng.uniform_index(clients)] = 1.0;
    }
  }
  return q;
}

std::vector<ClientShard> partition(const Dataset& ds,
                                   std::span<const std::size_t> rows,
                                   const PartitionSpec& spec) {
  const std::size_t M = spec.clients;
  if (M == 0) throw ConfigError("partition: client count must be positive");
  if (M > rows.size()) {
    throw ConfigError("partition: " + std::to_string(M) + " clients exceed " +
                      std::to_string(rows.size()) + " samples");
  }
  if (spec.scenario < 1 || spec.scenario > 4) {
    throw ConfigError("partition: scenario must be 1, 2, 3 or 4");
  }

  std::vector<ClientShard> shards(M);
  for (std::size_t m = 0; m < M; ++m) shards[m].client_id = m;
  if (M == 1) {
    shards[0].indices.assign(rows.begin(), rows.end());
    std::sort(shards[0].indices.begin(), shards[0].indices.end());
    return shards;
  }

  const int C = std::max(1, ds.num_strata());
  RngStream rng(spec.seed, kTagPartition);
  auto by = rows_by_stratum(ds, rows, C, rng);

  switch (spec.scenario) {
    case 1: {
      // Deal each class round-robin, continuing where the last class stopped
      // so totals stay balanced too.
      std::size_t next = 0;
      for (const auto& cls : by) {
        for (std::size_t r : cls) {
          shards[next].indices.push_back(r);
          next = (next + 1) % M;
        }
      }
      break;
    }
    case 2: {
      const std::size_t cpc = spec.classes_per_client;
      if (cpc < 1 || cpc > static_cast<std::size_t>(C)) {
        throw ConfigError("partition: classes_per_client must lie in [1, " +
                          std::to_string(C) + "]");
      }
      if (M * cpc < static_cast<std::size_t>(C)) {
        throw ConfigError("partition: " + std::to_string(M) + " clients x " +
                          std::to_string(cpc) + " classes cannot cover " +
                          std::to_string(C) + " classes");
      }
      std::vector<std::vector<std::size_t>> holders(static_cast<std::size_t>(C));
      for (std::size_t m = 0; m < M; ++m) {
        for (std::size_t j = 0; j < cpc; ++j) {
          holders[(m * cpc + j) % static_cast<std::size_t>(C)].push_back(m);
        }
      }
      for (std::size_t c = 0; c < by.size(); ++c) {
        const auto& h = holders[c];
        for (std::size_t i = 0; i < by[c].size(); ++i) {
          shards[h[i % h.size()]].indices.push_back(by[c][i]);
        }
      }
      break;
    }
    default: {
      auto q = dirichlet_proportions(C, M, spec.effective_alpha(), spec.seed);
      for (std::size_t c = 0; c < by.size(); ++c) {
        auto counts = largest_remainder(q[c], by[c].size());
        std::size_t pos = 0;
        for (std::size_t m = 0; m < M; ++m) {
          for (std::size_t i = 0; i < counts[m]; ++i) {
            shards[m].indices.push_back(by[c][pos++]);
          }
        }
      }
      break;
    }
  }
  for (auto& s : shards) std::sort(s.indices.begin(), s.indices.end());
  return shards;
}

std::vector<ClientShard> partition(const Dataset& ds, const PartitionSpec& spec) {
  std::vector<std::size_t> all(ds.size());
  std::iota(all.begin(), all.end(), std::size_t{0});
  return partition(ds, all, spec);
}

}  // namespace fpslab
