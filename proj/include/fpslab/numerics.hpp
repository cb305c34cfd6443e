#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <initializer_list>
#include <span>
#include <utility>
#include <vector>

namespace fpslab {

using Index = std::uint32_t;
using DenseVector = std::vector<double>;

// Sparse vector over an ambient dimension. Indices are strictly increasing,
// all below dim(), and no stored value is zero.
class SparseVector {
 public:
  SparseVector() = default;
  explicit SparseVector(std::uint64_t dim);

  // Validating constructor. Zero values are dropped; unsorted, duplicate or
  // out-of-range indices throw ConfigError.
  SparseVector(std::uint64_t dim, std::vector<Index> indices,
               std::vector<double> values);

  static SparseVector from_pairs(
      std::uint64_t dim, std::initializer_list<std::pair<Index, double>> pairs);
  static SparseVector from_dense(std::span<const double> dense);

  std::uint64_t dim() const { return dim_; }
  std::size_t nnz() const { return indices_.size(); }
  bool empty() const { return indices_.empty(); }

  std::span<const Index> indices() const { return indices_; }
  std::span<const double> values() const { return values_; }

  // Appends an entry past the current last index. Zero values are skipped.
  void push_back(Index index, double value);

  // Value at index (zero when not stored). O(log nnz).
  double at(Index index) const;

  DenseVector to_dense() const;
  void add_to(std::span<double> dense, double scale = 1.0) const;

  bool operator==(const SparseVector&) const = default;

 private:
  std::uint64_t dim_ = 0;
  std::vector<Index> indices_;
  std::vector<double> values_;
};

struct Norms {
  double l1 = 0.0;
  double l2 = 0.0;
};

double dot(const SparseVector& a, std::span<const double> b);
double dot(std::span<const double> a, std::span<const double> b);

Norms norms(std::span<const double> v);
Norms norms(const SparseVector& v);

double squared_norm(std::span<const double> v);

// SplitMix64 finalizer; the platform-stable mixer behind every hash and
// stream derivation in the library.
constexpr std::uint64_t mix64(std::uint64_t z) {
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

// Folds a list of tags/counters into one stream id.
constexpr std::uint64_t stream_key(std::initializer_list<std::uint64_t> parts) {
  std::uint64_t h = 0x6a09e667f3bcc908ULL;
  for (std::uint64_t p : parts) h = mix64(h ^ mix64(p + 0x9e3779b97f4a7c15ULL));
  return h;
}

// Splittable counter-style generator. Output depends only on (seed, stream);
// every sampler below is implemented here so results do not depend on the
// standard library's distribution implementations.
class RngStream {
 public:
  RngStream(std::uint64_t seed, std::uint64_t stream);

  std::uint64_t seed() const { return seed_; }
  std::uint64_t stream() const { return stream_; }

  // Independent child stream, e.g. one per (client, round).
  RngStream child(std::uint64_t id) const;

  std::uint64_t next_u64();
  // Uniform on [0, 1) with 53 random bits.
  double uniform();
  // Uniform integer on [0, n). n must be positive.
  std::uint64_t uniform_index(std::uint64_t n);
  double normal();
  double normal(double mean, double std) { return mean + std * normal(); }
  // Gamma(shape, 1).
  double gamma(double shape);

  template <typename T>
  void shuffle(std::span<T> items) {
    for (std::size_t i = items.size(); i > 1; --i) {
      std::size_t j = uniform_index(i);
      std::swap(items[i - 1], items[j]);
    }
  }

  // k distinct values from [0, n), sorted ascending.
  std::vector<Index> sample_without_replacement(std::uint64_t n, std::size_t k);

 private:
  std::uint64_t seed_;
  std::uint64_t stream_;
  std::uint64_t state_;
  std::uint64_t gamma_;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

// n i.i.d. draws from N(mean, std^2). std < 0 throws ConfigError.
DenseVector sample_gaussian(RngStream& rng, std::size_t n, double mean,
                            double std);

// Runs fn(i) for i in [0, n) on up to `threads` workers. Work items must be
// independent; the caller fixes any reduction order afterwards.
void parallel_for(std::size_t n, unsigned threads,
                  const std::function<void(std::size_t)>& fn);

}  // namespace fpslab
