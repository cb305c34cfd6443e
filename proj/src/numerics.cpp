#include "fpslab/numerics.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <exception>
#include <limits>
#include <mutex>
#include <string>
#include <thread>
#include <unordered_set>

#include "fpslab/errors.hpp"

namespace fpslab {

SparseVector::SparseVector(std::uint64_t dim) : dim_(dim) {}

SparseVector::SparseVector(std::uint64_t dim, std::vector<Index> indices,
                           std::vector<double> values)
    : dim_(dim) {
  if (indices.size() != values.size()) {
    throw ConfigError("sparse vector: index/value length mismatch");
  }
  indices_.reserve(indices.size());
  values_.reserve(values.size());
  for (std::size_t i = 0; i < indices.size(); ++i) {
    if (indices[i] >= dim) {
      throw ConfigError("sparse vector: index " + std::to_string(indices[i]) +
                        " out of range for dim " + std::to_string(dim));
    }
    if (i > 0 && indices[i] <= indices[i - 1]) {
      throw ConfigError("sparse vector: indices must be strictly increasing");
    }
    if (values[i] == 0.0) continue;
    indices_.push_back(indices[i]);
    values_.push_back(values[i]);
  }
}

SparseVector SparseVector::from_pairs(
    std::uint64_t dim, std::initializer_list<std::pair<Index, double>> pairs) {
  std::vector<Index> idx;
  std::vector<double> val;
  for (const auto& [i, v] : pairs) {
    idx.push_back(i);
    val.push_back(v);
  }
  return SparseVector(dim, std::move(idx), std::move(val));
}

SparseVector SparseVector::from_dense(std::span<const double> dense) {
  SparseVector out(dense.size());
  for (std::size_t i = 0; i < dense.size(); ++i) {
    if (dense[i] != 0.0) {
      out.indices_.push_back(static_cast<Index>(i));
      out.values_.push_back(dense[i]);
    }
  }
  return out;
}

void SparseVector::push_back(Index index, double value) {
  if (index >= dim_) {
    throw ConfigError("sparse vector: index " + std::to_string(index) +
                      " out of range for dim " + std::to_string(dim_));
  }
  if (!indices_.empty() && index <= indices_.back()) {
    throw ConfigError("sparse vector: indices must be strictly increasing");
  }
  if (value == 0.0) return;
  indices_.push_back(index);
  values_.push_back(value);
}

double SparseVector::at(Index index) const {
  auto it = std::lower_bound(indices_.begin(), indices_.end(), index);
  if (it == indices_.end() || *it != index) return 0.0;
  return values_[static_cast<std::size_t>(it - indices_.begin())];
}

DenseVector SparseVector::to_dense() const {
  DenseVector out(dim_, 0.0);
  for (std::size_t i = 0; i < indices_.size(); ++i) out[indices_[i]] = values_[i];
  return out;
}

void SparseVector::add_to(std::span<double> dense, double scale) const {
  if (dense.size() != dim_) throw ConfigError("sparse add: dimension mismatch");
  for (std::size_t i = 0; i < indices_.size(); ++i) {
    dense[indices_[i]] += scale * values_[i];
  }
}

double dot(const SparseVector& a, std::span<const double> b) {
  if (a.dim() != b.size()) {
    throw ConfigError("dot: dimension mismatch (" + std::to_string(a.dim()) +
                      " vs " + std::to_string(b.size()) + ")");
  }
  double acc = 0.0;
  auto idx = a.indices();
  auto val = a.values();
  for (std::size_t i = 0; i < idx.size(); ++i) acc += val[i] * b[idx[i]];
  return acc;
}

double dot(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw ConfigError("dot: dimension mismatch");
  double acc = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) acc += a[i] * b[i];
  return acc;
}

Norms norms(std::span<const double> v) {
  Norms n;
  double sq = 0.0;
  for (double x : v) {
    n.l1 += std::abs(x);
    sq += x * x;
  }
  n.l2 = std::sqrt(sq);
  return n;
}

Norms norms(const SparseVector& v) { return norms(v.values()); }

double squared_norm(std::span<const double> v) {
  double sq = 0.0;
  for (double x : v) sq += x * x;
  return sq;
}

RngStream::RngStream(std::uint64_t seed, std::uint64_t stream)
    : seed_(seed), stream_(stream) {
  std::uint64_t key = mix64(seed ^ mix64(stream ^ 0x243f6a8885a308d3ULL));
  state_ = mix64(key + 0x13198a2e03707344ULL);
  // Odd increment per stream, as in SplittableRandom.
  gamma_ = mix64(key ^ 0xa4093822299f31d0ULL) | 1ULL;
}

RngStream RngStream::child(std::uint64_t id) const {
  return RngStream(seed_, stream_key({stream_, id}));
}

std::uint64_t RngStream::next_u64() {
  state_ += gamma_;
  return mix64(state_);
}

double RngStream::uniform() {
  return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
}

std::uint64_t RngStream::uniform_index(std::uint64_t n) {
  if (n == 0) throw UsageError("uniform_index: empty range");
  // Lemire's multiply-shift with rejection.
  __uint128_t m = static_cast<__uint128_t>(next_u64()) * n;
  auto low = static_cast<std::uint64_t>(m);
  if (low < n) {
    std::uint64_t threshold = (0 - n) % n;
    while (low < threshold) {
      m = static_cast<__uint128_t>(next_u64()) * n;
      low = static_cast<std::uint64_t>(m);
    }
  }
  return static_cast<std::uint64_t>(m >> 64);
}

double RngStream::normal() {
  if (has_spare_) {
    has_spare_ = false;
    return spare_;
  }
  // Marsaglia polar method.
  double u, v, s;
  do {
    u = 2.0 * uniform() - 1.0;
    v = 2.0 * uniform() - 1.0;
    s = u * u + v * v;
  } while (s >= 1.0 || s == 0.0);
  double f = std::sqrt(-2.0 * std::log(s) / s);
  spare_ = v * f;
  has_spare_ = true;
  return u * f;
}

double RngStream::gamma(double shape) {
  if (!(shape > 0.0)) throw ConfigError("gamma: shape must be positive");
  if (shape < 1.0) {
    // Boost to shape + 1, then scale by U^(1/shape).
    double g = gamma(shape + 1.0);
    double u = uniform();
    while (u == 0.0) u = uniform();
    return g * std::pow(u, 1.0 / shape);
  }
  // Marsaglia-Tsang.
  const double d = shape - 1.0 / 3.0;
  const double c = 1.0 / std::sqrt(9.0 * d);
  for (;;) {
    double x, v;
    do {
      x = normal();
      v = 1.0 + c * x;
    } while (v <= 0.0);
    v = v * v * v;
    double u = uniform();
    if (u < 1.0 - 0.0331 * x * x * x * x) return d * v;
    if (u > 0.0 && std::log(u) < 0.5 * x * x + d * (1.0 - v + std::log(v))) {
      return d * v;
    }
  }
}

std::vector<Index> RngStream::sample_without_replacement(std::uint64_t n,
                                                         std::size_t k) {
  if (k > n) throw UsageError("sample_without_replacement: k exceeds n");
  std::vector<Index> out;
  out.reserve(k);
  if (2 * k >= n) {
    // Dense case: partial Fisher-Yates over the full range.
    std::vector<Index> all(n);
    for (std::uint64_t i = 0; i < n; ++i) all[i] = static_cast<Index>(i);
    for (std::size_t i = 0; i < k; ++i) {
      std::size_t j = i + uniform_index(n - i);
      std::swap(all[i], all[j]);
    }
    out.assign(all.begin(), all.begin() + static_cast<std::ptrdiff_t>(k));
  } else {
    // Floyd's algorithm.
    std::unordered_set<Index> chosen;
    chosen.reserve(2 * k);
    for (std::uint64_t j = n - k; j < n; ++j) {
      auto t = static_cast<Index>(uniform_index(j + 1));
      if (!chosen.insert(t).second) chosen.insert(static_cast<Index>(j));
    }
    out.assign(chosen.begin(), chosen.end());
  }
  std::sort(out.begin(), out.end());
  return out;
}

DenseVector sample_gaussian(RngStream& rng, std::size_t n, double mean,
                            double std) {
  if (!(std >= 0.0)) throw ConfigError("sample_gaussian: std must be >= 0");
  DenseVector out(n, mean);
  if (std == 0.0) return out;
  for (auto& x : out) x = mean + std * rng.normal();
  return out;
}

void parallel_for(std::size_t n, unsigned threads,
                  const std::function<void(std::size_t)>& fn) {
  if (threads <= 1 || n <= 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::exception_ptr failure;
  std::mutex failure_mutex;
  auto worker = [&] {
    for (;;) {
      std::size_t i = next.fetch_add(1);
      if (i >= n) return;
      try {
        fn(i);
      } catch (...) {
        std::lock_guard lock(failure_mutex);
        if (!failure) failure = std::current_exception();
      }
    }
  };
  unsigned count = static_cast<unsigned>(std::min<std::size_t>(threads, n));
  std::vector<std::thread> pool;
  pool.reserve(count);
  for (unsigned t = 0; t < count; ++t) pool.emplace_back(worker);
  for (auto& t : pool) t.join();
  if (failure) std::rethrow_exception(failure);
}

}  // namespace fpslab
