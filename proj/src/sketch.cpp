#include "fpslab/sketch.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <istream>
#include <map>
#include <mutex>
#include <ostream>
#include <queue>
#include <string>
#include <tuple>

#include "fpslab/errors.hpp"

namespace fpslab {
namespace {

// Precomputed tables are used up to this many (row, coordinate) pairs.
constexpr std::uint64_t kMaxPlanEntries = std::uint64_t{1} << 24;

std::uint64_t row_key(std::uint64_t seed, std::size_t row) {
  return mix64(seed ^ mix64(0x452821e638d01377ULL + row));
}

std::uint64_t coordinate_hash(std::uint64_t key, Index i) {
  return mix64(key ^ (static_cast<std::uint64_t>(i) * 0x9e3779b97f4a7c15ULL));
}

std::size_t bucket_of(std::uint64_t h, std::size_t cols) {
  return static_cast<std::size_t>((static_cast<__uint128_t>(h) * cols) >> 64);
}

int sign_of(std::uint64_t h) { return (h & 1ULL) ? 1 : -1; }

double median_in_place(std::span<double> vals) {
  const std::size_t n = vals.size();
  const std::size_t mid = n / 2;
  std::nth_element(vals.begin(), vals.begin() + mid, vals.end());
  double upper = vals[mid];
  if (n % 2 == 1) return upper;
  double lower = *std::max_element(vals.begin(), vals.begin() + mid);
  return 0.5 * (lower + upper);
}

}  // namespace

class HashPlan {
 public:
  explicit HashPlan(const SketchShape& shape)
      : dim_(shape.dim),
        bucket_(shape.rows * shape.dim),
        sign_(shape.rows * shape.dim) {
    for (std::size_t r = 0; r < shape.rows; ++r) {
      std::uint64_t key = row_key(shape.hash_seed, r);
      for (std::uint64_t i = 0; i < shape.dim; ++i) {
        std::uint64_t h = coordinate_hash(key, static_cast<Index>(i));
        bucket_[r * dim_ + i] = static_cast<std::uint32_t>(bucket_of(h, shape.cols));
        sign_[r * dim_ + i] = static_cast<std::int8_t>(sign_of(h));
      }
    }
  }

  std::size_t bucket(std::size_t row, Index i) const {
    return bucket_[row * dim_ + i];
  }
  int sign(std::size_t row, Index i) const { return sign_[row * dim_ + i]; }

  static std::shared_ptr<const HashPlan> for_shape(const SketchShape& shape) {
    if (static_cast<std::uint64_t>(shape.rows) * shape.dim > kMaxPlanEntries) {
      return nullptr;
    }
    using Key = std::tuple<std::size_t, std::size_t, std::uint64_t, std::uint64_t>;
    static std::mutex mutex;
    static std::map<Key, std::weak_ptr<const HashPlan>> cache;
    Key key{shape.rows, shape.cols, shape.dim, shape.hash_seed};
    std::lock_guard lock(mutex);
    if (auto it = cache.find(key); it != cache.end()) {
      if (auto plan = it->second.lock()) return plan;
    }
    // Drop expired entries so the cache tracks only live shapes.
    std::erase_if(cache, [](const auto& kv) { return kv.second.expired(); });
    auto plan = std::make_shared<const HashPlan>(shape);
    cache[key] = plan;
    return plan;
  }

 private:
  std::uint64_t dim_;
  std::vector<std::uint32_t> bucket_;
  std::vector<std::int8_t> sign_;
};

void SketchShape::validate() const {
  if (rows == 0 || cols == 0) {
    throw ConfigError("sketch shape: rows and cols must be positive (got " +
                      std::to_string(rows) + "x" + std::to_string(cols) + ")");
  }
  if (dim == 0) throw ConfigError("sketch shape: dim must be positive");
  if (dim > (std::uint64_t{1} << 32)) {
    throw ConfigError("sketch shape: dim exceeds 32-bit index range");
  }
}

CountSketch::CountSketch(const SketchShape& shape)
    : shape_(shape), table_(shape.rows * shape.cols, 0.0) {
  shape_.validate();
  plan_ = HashPlan::for_shape(shape_);
}

void CountSketch::clear() { std::fill(table_.begin(), table_.end(), 0.0); }

std::size_t CountSketch::bucket(std::size_t row, Index i) const {
  if (plan_) return plan_->bucket(row, i);
  return bucket_of(coordinate_hash(row_key(shape_.hash_seed, row), i), shape_.cols);
}

int CountSketch::sign(std::size_t row, Index i) const {
  if (plan_) return plan_->sign(row, i);
  return sign_of(coordinate_hash(row_key(shape_.hash_seed, row), i));
}

void CountSketch::add(Index i, double value) {
  if (i >= shape_.dim) throw ConfigError("sketch: index out of range");
  for (std::size_t r = 0; r < shape_.rows; ++r) {
    table_[r * shape_.cols + bucket(r, i)] += sign(r, i) * value;
  }
}

void CountSketch::accumulate(const SparseVector& v, double scale) {
  if (v.dim() != shape_.dim) {
    throw ConfigError("sketch accumulate: dimension mismatch (" +
                      std::to_string(v.dim()) + " vs " +
                      std::to_string(shape_.dim) + ")");
  }
  auto idx = v.indices();
  auto val = v.values();
  for (std::size_t r = 0; r < shape_.rows; ++r) {
    double* row = table_.data() + r * shape_.cols;
    for (std::size_t n = 0; n < idx.size(); ++n) {
      row[bucket(r, idx[n])] += sign(r, idx[n]) * (scale * val[n]);
    }
  }
}

void CountSketch::accumulate(std::span<const double> v, double scale) {
  if (v.size() != shape_.dim) {
    throw ConfigError("sketch accumulate: dimension mismatch");
  }
  for (std::size_t r = 0; r < shape_.rows; ++r) {
    double* row = table_.data() + r * shape_.cols;
    for (std::size_t i = 0; i < v.size(); ++i) {
      if (v[i] == 0.0) continue;
      auto ii = static_cast<Index>(i);
      row[bucket(r, ii)] += sign(r, ii) * (scale * v[i]);
    }
  }
}

double CountSketch::estimate(Index i) const {
  if (i >= shape_.dim) throw ConfigError("sketch estimate: index out of range");
  std::vector<double> vals(shape_.rows);
  for (std::size_t r = 0; r < shape_.rows; ++r) {
    vals[r] = sign(r, i) * table_[r * shape_.cols + bucket(r, i)];
  }
  return median_in_place(vals);
}

void CountSketch::estimate_all(std::span<double> out) const {
  if (out.size() != shape_.dim) {
    throw ConfigError("sketch estimate_all: output size mismatch");
  }
  std::vector<double> vals(shape_.rows);
  for (std::uint64_t i = 0; i < shape_.dim; ++i) {
    auto ii = static_cast<Index>(i);
    for (std::size_t r = 0; r < shape_.rows; ++r) {
      vals[r] = sign(r, ii) * table_[r * shape_.cols + bucket(r, ii)];
    }
    out[i] = median_in_place(vals);
  }
}

void CountSketch::add_scaled(const CountSketch& other, double weight) {
  if (!(other.shape_ == shape_)) {
    throw MergeError("sketch merge: shape or hash seed mismatch");
  }
  for (std::size_t c = 0; c < table_.size(); ++c) {
    table_[c] += weight * other.table_[c];
  }
}

CountSketch new_sketch(const SketchShape& shape) { return CountSketch(shape); }

CountSketch merge_scaled(std::span<const CountSketch> sketches,
                         std::span<const double> weights) {
  if (sketches.empty()) throw MergeError("sketch merge: no sketches");
  if (sketches.size() != weights.size()) {
    throw MergeError("sketch merge: sketch/weight count mismatch");
  }
  CountSketch out(sketches.front().shape());
  for (std::size_t m = 0; m < sketches.size(); ++m) {
    out.add_scaled(sketches[m], weights[m]);
  }
  return out;
}

namespace {

// Orders candidates so that the "best" element compares greatest: larger
// magnitude first, lower index on ties.
struct Candidate {
  double magnitude;
  Index index;
};

struct WorseFirst {
  bool operator()(const Candidate& a, const Candidate& b) const {
    // Min-heap on quality: the top is the weakest retained candidate.
    if (a.magnitude != b.magnitude) return a.magnitude > b.magnitude;
    return a.index < b.index;
  }
};

std::vector<Index> select_topk(std::span<const double> v, std::size_t k) {
  std::priority_queue<Candidate, std::vector<Candidate>, WorseFirst> heap;
  for (std::size_t i = 0; i < v.size(); ++i) {
    Candidate c{std::abs(v[i]), static_cast<Index>(i)};
    if (heap.size() < k) {
      heap.push(c);
    } else if (c.magnitude > heap.top().magnitude) {
      // Equal magnitude never displaces: the earlier index already won.
      heap.pop();
      heap.push(c);
    }
  }
  std::vector<Index> out;
  out.reserve(heap.size());
  while (!heap.empty()) {
    out.push_back(heap.top().index);
    heap.pop();
  }
  std::sort(out.begin(), out.end());
  return out;
}

}  // namespace

std::vector<Index> topk_indices(std::span<const double> v, std::size_t k) {
  if (k > v.size()) throw ConfigError("top-k: k exceeds dimension");
  return select_topk(v, k);
}

HeavyHitters unsketch_topk(const CountSketch& s, std::size_t k) {
  const auto dim = s.shape().dim;
  if (k < 1 || k > dim) {
    throw ConfigError("unsketch: k must lie in [1, dim] (got " +
                      std::to_string(k) + ")");
  }
  std::vector<double> est(dim);
  s.estimate_all(est);
  HeavyHitters hh;
  hh.k = k;
  hh.entries = SparseVector(dim);
  for (Index i : select_topk(est, k)) hh.entries.push_back(i, est[i]);
  return hh;
}

bool is_collision_free(const SketchShape& shape) {
  shape.validate();
  if (shape.dim > shape.cols) return false;
  std::vector<char> used(shape.cols);
  for (std::size_t r = 0; r < shape.rows; ++r) {
    std::fill(used.begin(), used.end(), 0);
    std::uint64_t key = row_key(shape.hash_seed, r);
    for (std::uint64_t i = 0; i < shape.dim; ++i) {
      auto b = bucket_of(coordinate_hash(key, static_cast<Index>(i)), shape.cols);
      if (used[b]) return false;
      used[b] = 1;
    }
  }
  return true;
}

std::uint64_t find_collision_free_seed(SketchShape shape, std::uint64_t start,
                                       std::size_t attempts) {
  for (std::size_t a = 0; a < attempts; ++a) {
    shape.hash_seed = start + a;
    if (is_collision_free(shape)) return shape.hash_seed;
  }
  throw ConfigError("no collision-free hash seed found for " +
                    std::to_string(shape.rows) + "x" +
                    std::to_string(shape.cols) + " sketch over dim " +
                    std::to_string(shape.dim));
}

namespace {

constexpr char kMagic[4] = {'F', 'P', 'C', 'S'};
constexpr std::uint32_t kFormatVersion = 1;

template <typename T>
void put_le(std::ostream& out, T value) {
  unsigned char bytes[sizeof(T)];
  std::uint64_t bits = 0;
  if constexpr (std::is_same_v<T, double>) {
    std::memcpy(&bits, &value, sizeof(bits));
  } else {
    bits = static_cast<std::uint64_t>(value);
  }
  for (std::size_t b = 0; b < sizeof(T); ++b) {
    bytes[b] = static_cast<unsigned char>(bits >> (8 * b));
  }
  out.write(reinterpret_cast<const char*>(bytes), sizeof(T));
}

template <typename T>
T get_le(std::istream& in) {
  unsigned char bytes[sizeof(T)];
  if (!in.read(reinterpret_cast<char*>(bytes), sizeof(T))) {
    throw ParseError("sketch checkpoint truncated", 0);
  }
  std::uint64_t bits = 0;
  for (std::size_t b = 0; b < sizeof(T); ++b) {
    bits |= static_cast<std::uint64_t>(bytes[b]) << (8 * b);
  }
  if constexpr (std::is_same_v<T, double>) {
    double v;
    std::memcpy(&v, &bits, sizeof(v));
    return v;
  } else {
    return static_cast<T>(bits);
  }
}

}  // namespace

void write_sketch(std::ostream& out, const CountSketch& s) {
  out.write(kMagic, 4);
  put_le<std::uint32_t>(out, kFormatVersion);
  put_le<std::uint64_t>(out, s.shape().rows);
  put_le<std::uint64_t>(out, s.shape().cols);
  put_le<std::uint64_t>(out, s.shape().dim);
  put_le<std::uint64_t>(out, s.shape().hash_seed);
  for (double c : s.table()) put_le<double>(out, c);
}

CountSketch read_sketch(std::istream& in) {
  char magic[4];
  if (!in.read(magic, 4) || std::memcmp(magic, kMagic, 4) != 0) {
    throw ParseError("not a sketch checkpoint (bad magic)", 0);
  }
  auto version = get_le<std::uint32_t>(in);
  if (version != kFormatVersion) {
    throw ParseError("unsupported sketch checkpoint version " +
                         std::to_string(version), 0);
  }
  SketchShape shape;
  shape.rows = get_le<std::uint64_t>(in);
  shape.cols = get_le<std::uint64_t>(in);
  shape.dim = get_le<std::uint64_t>(in);
  shape.hash_seed = get_le<std::uint64_t>(in);
  CountSketch s(shape);
  for (double& c : s.mutable_table()) c = get_le<double>(in);
  return s;
}

}  // namespace fpslab
