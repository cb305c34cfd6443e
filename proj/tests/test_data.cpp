#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <map>
#include <set>
#include <sstream>

#include "fpslab/data.hpp"
#include "fpslab/errors.hpp"

using namespace fpslab;

namespace {

Dataset labelled(std::size_t n, int classes, std::uint64_t seed = 0) {
  Dataset ds;
  ds.dim = 3;
  ds.task = classes == 2 ? Task::kBinary : Task::kMulticlass;
  RngStream rng(seed, 1);
  for (std::size_t i = 0; i < n; ++i) {
    ds.rows.push_back(SparseVector::from_pairs(3, {{0, 1.0}}));
    ds.labels.push_back(static_cast<double>(i < static_cast<std::size_t>(classes)
                                                ? i
                                                : rng.uniform_index(classes)));
  }
  return ds;
}

void check_cover(const std::vector<ClientShard>& shards, std::size_t n, std::size_t m) {
  REQUIRE(shards.size() == m);
  std::vector<int> seen(n, 0);
  for (std::size_t c = 0; c < m; ++c) {
    CHECK(shards[c].client_id == c);
    for (std::size_t r : shards[c].indices) seen[r]++;
  }
  CHECK(std::all_of(seen.begin(), seen.end(), [](int x) { return x == 1; }));
}

}  // namespace

TEST_CASE("synthetic generator") {
  SyntheticSpec sp;
  sp.samples = 20;
  sp.dim = 50;
  sp.power = 5;
  sp.noise_scale = 0.0;
  SyntheticData a = generate_synthetic(sp);
  CHECK(a.dataset.size() == 20);
  CHECK(a.dataset.dim == 50);
  CHECK(a.dataset.task == Task::kRegression);
  for (std::size_t r = 0; r < 20; ++r) {
    CHECK(a.dataset.labels[r] ==
          doctest::Approx(dot(a.dataset.rows[r], a.true_weights)).epsilon(1e-12));
  }
  SyntheticData b = generate_synthetic(sp);
  CHECK(a.dataset.rows == b.dataset.rows);
  CHECK(a.dataset.labels == b.dataset.labels);

  sp.power = 1.0;
  CHECK_THROWS_AS(generate_synthetic(sp), ConfigError);
  sp.power = 0.5;
  CHECK_THROWS_AS(generate_synthetic(sp), ConfigError);
}

TEST_CASE("synthetic column variances follow j^-p") {
  SyntheticSpec sp;
  sp.samples = 100000;
  sp.dim = 8;
  sp.power = 2.0;
  Dataset ds = generate_synthetic(sp).dataset;
  for (Index j : {0u, 1u, 3u, 7u}) {
    double s = 0, s2 = 0;
    for (const auto& row : ds.rows) {
      double x = row.at(j);
      s += x;
      s2 += x * x;
    }
    double n = static_cast<double>(ds.size());
    double var = s2 / n - (s / n) * (s / n);
    CHECK(var == doctest::Approx(std::pow(j + 1.0, -2.0)).epsilon(0.05));
  }
}

TEST_CASE("permuted covariance uses a permutation") {
  SyntheticSpec sp;
  sp.samples = 5;
  sp.dim = 30;
  sp.covariance = Covariance::kPermuted;
  sp.seed = 3;
  SyntheticData s = generate_synthetic(sp);
  std::vector<std::uint64_t> perm = s.permutation;
  std::sort(perm.begin(), perm.end());
  for (std::uint64_t i = 0; i < 30; ++i) CHECK(perm[i] == i + 1);
  CHECK(s.permutation != perm);

  sp.covariance = Covariance::kTwoPopulation;
  SyntheticData two = generate_synthetic(sp);
  CHECK(two.dataset.groups == std::vector<int>{0, 1, 0, 1, 0});
  CHECK(two.dataset.num_strata() == 2);
}

TEST_CASE("sparse classification generator") {
  SparseClassificationSpec sp;
  sp.samples = 400;
  sp.dim = 1000;
  sp.informative = 10;
  sp.noise_features = 5;
  SparseClassificationData d = generate_sparse_classification(sp);
  CHECK(d.dataset.task == Task::kBinary);
  CHECK(d.true_weights.nnz() == 10);
  DenseVector wt = d.true_weights.to_dense();
  std::vector<double> margins;
  for (const auto& row : d.dataset.rows) margins.push_back(dot(row, wt));
  std::vector<double> sorted = margins;
  std::sort(sorted.begin(), sorted.end());
  double median = sorted[sorted.size() / 2];
  int ones = 0;
  for (std::size_t r = 0; r < d.dataset.size(); ++r) {
    CHECK(d.dataset.rows[r].nnz() <= 15);
    for (double x : d.dataset.rows[r].values()) CHECK(x >= 0.0);
    double y = d.dataset.labels[r];
    CHECK((y == 0.0 || y == 1.0));
    CHECK(y == (margins[r] >= median ? 1.0 : 0.0));
    ones += y == 1.0;
  }
  CHECK(ones == 200);
}

TEST_CASE("libsvm parsing") {
  std::istringstream one("1 3:0.5 7:1.0\n");
  Dataset ds = parse_libsvm(one);
  REQUIRE(ds.size() == 1);
  CHECK(ds.labels[0] == 1.0);
  CHECK(ds.rows[0] == SparseVector::from_pairs(7, {{2, 0.5}, {6, 1.0}}));
  CHECK(ds.task == Task::kBinary);

  std::istringstream empty("");
  CHECK(parse_libsvm(empty).size() == 0);

  std::istringstream pm("-1 1:1\n+1 2:1\n# comment\n\n0 3:2\n");
  Dataset b = parse_libsvm(pm);
  CHECK(b.labels == std::vector<double>{0, 1, 0});
  CHECK(b.dim == 3);

  std::istringstream declared("1 2:1\n");
  CHECK(parse_libsvm(declared, LibsvmOptions{100, std::nullopt}).dim == 100);

  std::istringstream multi("0 1:1\n1 1:1\n2 1:1\n");
  CHECK(parse_libsvm(multi).task == Task::kMulticlass);
  std::istringstream reg("0.5 1:1\n-2.25 1:1\n");
  CHECK(parse_libsvm(reg).task == Task::kRegression);
}

TEST_CASE("libsvm errors carry line numbers") {
  auto line_of = [](const std::string& text) {
    std::istringstream in(text);
    try {
      parse_libsvm(in);
    } catch (const ParseError& e) {
      return e.line();
    }
    return std::size_t{0};
  };
  CHECK(line_of("1 1:1\n1 5:1 3:1\n") == 2);
  CHECK(line_of("1 1:1\n1 2:1\n1 2:1 2:3\n") == 3);
  CHECK(line_of("x 1:1\n") == 1);
  CHECK(line_of("1 1:1\n\n1 0:1\n") == 3);
  CHECK(line_of("1 1:abc\n") == 1);
  CHECK(line_of("1 1\n") == 1);
}

TEST_CASE("libsvm round trip") {
  SyntheticSpec sp;
  sp.samples = 100;
  sp.dim = 40;
  sp.power = 1.5;
  Dataset ds = generate_synthetic(sp).dataset;
  std::stringstream buf;
  write_libsvm(buf, ds);
  Dataset back = parse_libsvm(buf, LibsvmOptions{40, Task::kRegression});
  CHECK(back.labels == ds.labels);
  CHECK(back.rows == ds.rows);
}

TEST_CASE("partition exact cover") {
  Dataset ds = labelled(300, 10);
  for (int scenario = 1; scenario <= 4; ++scenario) {
    for (std::size_t m : {1u, 2u, 10u}) {
      for (std::uint64_t seed = 0; seed < 5; ++seed) {
        PartitionSpec ps{scenario, m, std::nullopt, (10 + m - 1) / m, seed};
        check_cover(partition(ds, ps), ds.size(), m);
      }
    }
  }
}

TEST_CASE("partition special cases and errors") {
  Dataset ds = labelled(100, 2);
  auto single = partition(ds, PartitionSpec{2, 1, std::nullopt, 1, 0});
  REQUIRE(single.size() == 1);
  CHECK(single[0].indices.size() == 100);

  auto two = partition(ds, PartitionSpec{2, 2, std::nullopt, 1, 4});
  for (std::size_t r : two[0].indices) CHECK(ds.labels[r] == 0.0);
  for (std::size_t r : two[1].indices) CHECK(ds.labels[r] == 1.0);

  CHECK_THROWS_AS(partition(ds, PartitionSpec{1, 101, std::nullopt, 1, 0}), ConfigError);
  CHECK_THROWS_AS(partition(ds, PartitionSpec{1, 0, std::nullopt, 1, 0}), ConfigError);
  Dataset ten = labelled(200, 10);
  CHECK_THROWS_AS(partition(ten, PartitionSpec{2, 3, std::nullopt, 3, 0}), ConfigError);
  CHECK_THROWS_AS(partition(ten, PartitionSpec{2, 4, std::nullopt, 11, 0}), ConfigError);
  CHECK_THROWS_AS(partition(ten, PartitionSpec{5, 4, std::nullopt, 1, 0}), ConfigError);
}

TEST_CASE("scenario 1 balance and scenario 2 support") {
  Dataset ds = labelled(1000, 5, 9);
  std::map<int, int> per_class;
  for (double y : ds.labels) per_class[static_cast<int>(y)]++;
  auto shards = partition(ds, PartitionSpec{1, 4, std::nullopt, 1, 2});
  for (const auto& sh : shards) {
    std::map<int, int> counts;
    for (std::size_t r : sh.indices) counts[static_cast<int>(ds.labels[r])]++;
    for (auto [c, n] : per_class) CHECK(std::abs(counts[c] - n / 4.0) <= 1.0);
  }
  for (std::size_t cpc : {1u, 2u, 3u}) {
    auto s2 = partition(ds, PartitionSpec{2, 7, std::nullopt, cpc, 5});
    for (const auto& sh : s2) {
      std::set<double> support;
      for (std::size_t r : sh.indices) support.insert(ds.labels[r]);
      CHECK(support.size() <= cpc);
    }
  }
}

TEST_CASE("regression partitions split by population") {
  SyntheticSpec sp;
  sp.samples = 40;
  sp.dim = 5;
  sp.covariance = Covariance::kTwoPopulation;
  Dataset ds = generate_synthetic(sp).dataset;
  auto shards = partition(ds, PartitionSpec{2, 2, std::nullopt, 1, 0});
  for (std::size_t r : shards[0].indices) CHECK(ds.groups[r] == 0);
  for (std::size_t r : shards[1].indices) CHECK(ds.groups[r] == 1);
}

TEST_CASE("dirichlet proportions and largest remainder") {
  auto q = dirichlet_proportions(10, 10, 0.1, 3);
  REQUIRE(q.size() == 10);
  for (const auto& row : q) {
    double s = 0;
    for (double x : row) {
      CHECK(x >= 0.0);
      s += x;
    }
    CHECK(s == doctest::Approx(1.0));
  }
  auto counts = largest_remainder(std::vector<double>{0.5, 0.25, 0.25}, 7);
  CHECK(counts == std::vector<std::size_t>{3, 2, 2});
  auto thirds = largest_remainder(std::vector<double>{1, 1, 1}, 10);
  CHECK(thirds == std::vector<std::size_t>{4, 3, 3});

  int larger = 0;
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    auto skew = [&](double alpha) {
      auto p = dirichlet_proportions(10, 10, alpha, seed);
      double s = 0;
      for (const auto& row : p) s += *std::max_element(row.begin(), row.end());
      return s / 10;
    };
    larger += skew(0.1) > skew(1.0);
  }
  CHECK(larger >= 95);
  CHECK(PartitionSpec{3}.effective_alpha() == 0.1);
  CHECK(PartitionSpec{4}.effective_alpha() == 1.0);
}

TEST_CASE("train/test split") {
  auto s = split_train_test(10, 0.2, 1);
  CHECK(s.train.size() == 8);
  CHECK(s.test.size() == 2);
  std::vector<std::size_t> all = s.train;
  all.insert(all.end(), s.test.begin(), s.test.end());
  std::sort(all.begin(), all.end());
  for (std::size_t i = 0; i < 10; ++i) CHECK(all[i] == i);
  CHECK(split_train_test(10, 0.0, 1).test.empty());
  CHECK(split_train_test(10, 0.2, 1).test == s.test);
}
