#pragma once

#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <memory>
#include <span>
#include <vector>

#include "fpslab/numerics.hpp"

namespace fpslab {

struct SketchShape {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::uint64_t dim = 0;
  std::uint64_t hash_seed = 0;

  std::size_t cells() const { return rows * cols; }
  void validate() const;
  bool operator==(const SketchShape&) const = default;
};

// Row-major (bucket, sign) tables for shapes small enough to precompute.
class HashPlan;

// Count sketch: `rows` independent hash rows of `cols` signed buckets over
// coordinates [0, dim). Linear in its input; two sketches can be combined
// only when their shapes, hash seed included, are identical.
class CountSketch {
 public:
  explicit CountSketch(const SketchShape& shape);

  const SketchShape& shape() const { return shape_; }

  std::span<const double> table() const { return table_; }
  std::span<double> mutable_table() { return table_; }
  double cell(std::size_t row, std::size_t col) const {
    return table_[row * shape_.cols + col];
  }

  void clear();

  // table[j][h_j(i)] += s_j(i) * scale * x_i for every stored entry.
  void accumulate(const SparseVector& v, double scale);
  // Same, for a dense vector; zero entries are skipped.
  void accumulate(std::span<const double> v, double scale);
  // Single coordinate update.
  void add(Index i, double value);

  // Median over rows of s_j(i) * table[j][h_j(i)]. Even row counts average the
  // two middle order statistics.
  double estimate(Index i) const;
  // estimate() for every coordinate, written into out (size dim).
  void estimate_all(std::span<double> out) const;

  // this += weight * other.
  void add_scaled(const CountSketch& other, double weight);

  std::size_t bucket(std::size_t row, Index i) const;
  int sign(std::size_t row, Index i) const;

  bool operator==(const CountSketch& other) const {
    return shape_ == other.shape_ && table_ == other.table_;
  }

 private:
  SketchShape shape_;
  std::shared_ptr<const HashPlan> plan_;
  std::vector<double> table_;
};

struct HeavyHitters {
  std::size_t k = 0;
  SparseVector entries;
};

CountSketch new_sketch(const SketchShape& shape);

// Cell-wise sum of weights[m] * sketches[m], accumulated in index order.
CountSketch merge_scaled(std::span<const CountSketch> sketches,
                         std::span<const double> weights);

// Estimates every coordinate and keeps the k with the largest magnitude,
// lower index first on ties. Coordinates estimated as exactly zero are not
// stored.
HeavyHitters unsketch_topk(const CountSketch& s, std::size_t k);

// Largest-|value| k entries of a dense vector, same tie rule as unsketch_topk.
// Returned indices are sorted ascending.
std::vector<Index> topk_indices(std::span<const double> v, std::size_t k);

// True when every row maps [0, dim) injectively into its buckets.
bool is_collision_free(const SketchShape& shape);

// Smallest seed >= start giving a collision-free shape, searching at most
// `attempts` seeds. Throws ConfigError when none is found.
std::uint64_t find_collision_free_seed(SketchShape shape, std::uint64_t start,
                                       std::size_t attempts = 100000);

// Binary checkpoint format (all integers and floats little-endian):
//   bytes 0-3    magic "FPCS"
//   bytes 4-7    u32 format version (1)
//   bytes 8-15   u64 rows
//   bytes 16-23  u64 cols
//   bytes 24-31  u64 dim
//   bytes 32-39  u64 hash seed
//   then rows*cols IEEE-754 binary64 cells, row-major.
void write_sketch(std::ostream& out, const CountSketch& s);
CountSketch read_sketch(std::istream& in);

}  // namespace fpslab
