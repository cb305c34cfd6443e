#include <doctest.h>

#include <cmath>
#include <numeric>

#include "fpslab/errors.hpp"
#include "fpslab/model.hpp"

using namespace fpslab;

namespace {

Dataset random_dataset(std::uint64_t dim, std::size_t n, bool binary, std::uint64_t seed) {
  Dataset ds;
  ds.dim = dim;
  ds.task = binary ? Task::kBinary : Task::kRegression;
  RngStream rng(seed, 31);
  for (std::size_t r = 0; r < n; ++r) {
    DenseVector x(dim, 0.0);
    for (auto& v : x) v = rng.uniform() < 0.5 ? rng.normal() : 0.0;
    ds.rows.push_back(SparseVector::from_dense(x));
    ds.labels.push_back(binary ? static_cast<double>(rng.uniform_index(2)) : rng.normal());
  }
  return ds;
}

std::vector<std::size_t> iota(std::size_t n) {
  std::vector<std::size_t> v(n);
  std::iota(v.begin(), v.end(), 0);
  return v;
}

}  // namespace

TEST_CASE("predict") {
  DenseVector zero(4, 0.0);
  auto x = SparseVector::from_pairs(4, {{1, 2.0}, {3, -1.0}});
  CHECK(predict(BaseLoss::kLogistic, zero, x) == 0.5);
  CHECK(predict(BaseLoss::kSquared, zero, x) == 0.0);
  DenseVector w{0, std::log(3.0), 0, 0};
  CHECK(predict(BaseLoss::kLogistic, w, SparseVector::from_pairs(4, {{1, 1.0}})) ==
        doctest::Approx(0.75).epsilon(1e-15));
  CHECK(predict(BaseLoss::kSquared, DenseVector{1, 2, 3, 4}, x) == 0.0);
}

TEST_CASE("stable logistic pieces") {
  CHECK(sigmoid(800.0) == 1.0);
  CHECK(sigmoid(-800.0) >= 0.0);
  CHECK(softplus(800.0) == 800.0);
  CHECK(std::isfinite(sample_loss(BaseLoss::kLogistic, -1000.0, 1.0)));
  CHECK(sample_loss(BaseLoss::kLogistic, -1000.0, 1.0) == doctest::Approx(1000.0));
}

TEST_CASE("minibatch loss") {
  Dataset ds;
  ds.dim = 2;
  ds.task = Task::kBinary;
  ds.rows = {SparseVector::from_pairs(2, {{0, 1.0}})};
  ds.labels = {1.0};
  DenseVector w(2, 0.0);
  std::vector<std::size_t> b{0};
  CHECK(minibatch_loss({BaseLoss::kLogistic, 0.0, {}}, w, ds, b) ==
        doctest::Approx(std::log(2.0)).epsilon(1e-15));

  Dataset reg = random_dataset(6, 10, false, 1);
  DenseVector v{0.1, -0.2, 0.3, 0, 1, 2};
  auto rows = iota(10);
  double base = 0;
  for (std::size_t r : rows) {
    double z = dot(reg.rows[r], v);
    base += 0.5 * (z - reg.labels[r]) * (z - reg.labels[r]);
  }
  base /= 10;
  CHECK(minibatch_loss({BaseLoss::kSquared, 0.0, {}}, v, reg, rows) == doctest::Approx(base));
  CHECK(minibatch_loss({BaseLoss::kSquared, 3.0, v}, v, reg, rows) ==
        minibatch_loss({BaseLoss::kSquared, 0.0, {}}, v, reg, rows));
  DenseVector anchor(6, 1.0);
  double prox = 0;
  for (std::size_t i = 0; i < 6; ++i) prox += (v[i] - 1.0) * (v[i] - 1.0);
  CHECK(minibatch_loss({BaseLoss::kSquared, 0.5, anchor}, v, reg, rows) ==
        doctest::Approx(base + 0.25 * prox));

  std::vector<std::size_t> none;
  CHECK_THROWS_AS(minibatch_loss({BaseLoss::kSquared, 0.0, {}}, v, reg, none), UsageError);
  CHECK_THROWS_AS(minibatch_gradient({BaseLoss::kSquared, 0.0, {}}, v, reg, none), UsageError);
  DenseVector short_anchor(3, 0.0);
  CHECK_THROWS_AS(minibatch_gradient({BaseLoss::kSquared, 1.0, short_anchor}, v, reg, rows),
                  ConfigError);
}

TEST_CASE("gradient special cases") {
  Dataset reg = random_dataset(8, 12, false, 2);
  DenseVector w(8, 0.3);
  auto rows = iota(12);
  SparseVector pure = minibatch_gradient({BaseLoss::kSquared, 0.0, {}}, w, reg, rows);
  CHECK(minibatch_gradient({BaseLoss::kSquared, 7.0, w}, w, reg, rows) == pure);

  // Perfect fit: labels generated by w itself.
  Dataset fit = reg;
  for (std::size_t r = 0; r < fit.size(); ++r) fit.labels[r] = dot(fit.rows[r], w);
  CHECK(minibatch_gradient({BaseLoss::kSquared, 0.0, {}}, w, fit, rows).nnz() == 0);
}

TEST_CASE("gradient matches central finite differences") {
  for (BaseLoss loss : {BaseLoss::kSquared, BaseLoss::kLogistic}) {
    for (double mu : {0.0, 0.1, 1.0}) {
      for (std::uint64_t seed = 0; seed < 5; ++seed) {
        const std::uint64_t d = 50;
        Dataset ds = random_dataset(d, 30, loss == BaseLoss::kLogistic, seed);
        RngStream rng(seed, 5);
        DenseVector w = sample_gaussian(rng, d, 0.0, 0.5);
        DenseVector anchor = sample_gaussian(rng, d, 0.0, 0.5);
        ProximalObjective obj{loss, mu, anchor};
        auto rows = iota(30);
        DenseVector g = minibatch_gradient(obj, w, ds, rows).to_dense();
        for (int t = 0; t < 10; ++t) {
          Index i = static_cast<Index>(rng.uniform_index(d));
          const double h = 1e-6;
          DenseVector wp = w, wm = w;
          wp[i] += h;
          wm[i] -= h;
          double fd = (minibatch_loss(obj, wp, ds, rows) - minibatch_loss(obj, wm, ds, rows)) / (2 * h);
          double scale = std::max(std::abs(g[i]), 1e-3);
          CHECK(std::abs(fd - g[i]) / scale < 1e-5);
        }
      }
    }
  }
}

TEST_CASE("proximal decomposition") {
  // gradient(mu) - gradient(0) equals mu (w - anchor) up to the rounding of
  // the final addition.
  Dataset ds = random_dataset(20, 15, true, 7);
  RngStream rng(7, 7);
  DenseVector w = sample_gaussian(rng, 20, 0, 1), anchor = sample_gaussian(rng, 20, 0, 1);
  auto rows = iota(15);
  for (double mu : {0.1, 1.0, 10.0}) {
    DenseVector g0 = minibatch_gradient({BaseLoss::kLogistic, 0.0, anchor}, w, ds, rows).to_dense();
    DenseVector gm = minibatch_gradient({BaseLoss::kLogistic, mu, anchor}, w, ds, rows).to_dense();
    for (std::size_t i = 0; i < 20; ++i) {
      double expect = mu * (w[i] - anchor[i]);
      double ulp = std::numeric_limits<double>::epsilon() * (std::abs(gm[i]) + std::abs(g0[i]));
      CHECK(std::abs((gm[i] - g0[i]) - expect) <= 2 * ulp);
    }
  }
}

TEST_CASE("drift support gives the same gradient as a full scan") {
  Dataset ds = random_dataset(30, 8, false, 3);
  DenseVector anchor(30, 0.0), w(30, 0.0);
  w[4] = 1.5;
  w[17] = -2.0;
  std::vector<Index> drift{17, 4, 17};
  auto rows = iota(8);
  ProximalObjective obj{BaseLoss::kSquared, 0.3, anchor};
  CHECK(minibatch_gradient(obj, w, ds, rows, &drift) == minibatch_gradient(obj, w, ds, rows));
}

TEST_CASE("smoothness witness") {
  for (BaseLoss loss : {BaseLoss::kSquared, BaseLoss::kLogistic}) {
    Dataset ds = random_dataset(15, 40, loss == BaseLoss::kLogistic, 11);
    auto rows = iota(40);
    double L = smoothness_estimate(loss, ds, rows, 200, 1);
    CHECK(L > 0.0);
    RngStream rng(12, 1);
    for (double mu : {0.0, 0.5}) {
      for (int t = 0; t < 20; ++t) {
        DenseVector anchor = sample_gaussian(rng, 15, 0, 1);
        DenseVector w1 = sample_gaussian(rng, 15, 0, 1), w2 = sample_gaussian(rng, 15, 0, 1);
        ProximalObjective obj{loss, mu, anchor};
        DenseVector g = minibatch_gradient(obj, w1, ds, rows).to_dense();
        DenseVector diff(15);
        for (std::size_t i = 0; i < 15; ++i) diff[i] = w2[i] - w1[i];
        double gap = minibatch_loss(obj, w2, ds, rows) - minibatch_loss(obj, w1, ds, rows) -
                     dot(g, diff);
        CHECK(std::abs(gap) <= (L * 1.001 + mu) / 2 * squared_norm(diff));
      }
    }
  }
}

TEST_CASE("smoothness of a diagonal design") {
  Dataset ds;
  ds.dim = 3;
  ds.rows = {SparseVector::from_pairs(3, {{0, 2.0}}), SparseVector::from_pairs(3, {{1, 1.0}})};
  ds.labels = {0, 0};
  auto rows = iota(2);
  CHECK(smoothness_estimate(BaseLoss::kSquared, ds, rows, 100, 0) == doctest::Approx(2.0));
  ds.task = Task::kBinary;
  CHECK(smoothness_estimate(BaseLoss::kLogistic, ds, rows, 100, 0) == doctest::Approx(0.5));
}

TEST_CASE("evaluate") {
  Dataset ds;
  ds.dim = 1;
  ds.task = Task::kBinary;
  for (int i = 0; i < 10; ++i) {
    ds.rows.push_back(SparseVector::from_pairs(1, {{0, i < 5 ? -1.0 : 1.0}}));
    ds.labels.push_back(i < 5 ? 0.0 : 1.0);
  }
  auto rows = iota(10);
  CHECK(evaluate(BaseLoss::kLogistic, DenseVector{0.0}, ds, rows).accuracy == 0.5);
  Evaluation fit = evaluate(BaseLoss::kLogistic, DenseVector{5.0}, ds, rows);
  CHECK(fit.accuracy == 1.0);
  CHECK(fit.loss == doctest::Approx(softplus(-5.0)));

  Dataset reg = random_dataset(3, 5, false, 1);
  CHECK(std::isnan(evaluate(BaseLoss::kSquared, DenseVector(3, 0.0), reg, iota(5)).accuracy));
}
