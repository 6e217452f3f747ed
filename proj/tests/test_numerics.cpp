#include <atomic>
#include <cmath>
#include <set>
#include <stdexcept>
#include <vector>

#include "doctest.h"
#include "mmpid/matrix.hpp"
#include "mmpid/numerics.hpp"
#include "mmpid/rng.hpp"
#include "test_util.hpp"

using namespace mmpid;
using mmpid::testing::random_matrix;

namespace {

Matrix naive_matmul(const Matrix& a, const Matrix& b) {
  Matrix c(a.rows(), b.cols());
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (std::size_t j = 0; j < b.cols(); ++j) {
      double s = 0.0;
      for (std::size_t k = 0; k < a.cols(); ++k) s += a(i, k) * b(k, j);
      c(i, j) = s;
    }
  return c;
}

double max_abs_diff(const Matrix& a, const Matrix& b) {
  REQUIRE(a.rows() == b.rows());
  REQUIRE(a.cols() == b.cols());
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a.data()[i] - b.data()[i]));
  return m;
}

}  // namespace

TEST_CASE("matrix products agree with the triple loop") {
  Rng rng(11);
  const Matrix a = random_matrix(rng, 7, 5);
  const Matrix b = random_matrix(rng, 5, 9);
  const Matrix c = random_matrix(rng, 7, 9);
  CHECK(max_abs_diff(matmul(a, b), naive_matmul(a, b)) < 1e-12);
  CHECK(max_abs_diff(matmul_tn(a, c), naive_matmul(a.transpose(), c)) < 1e-12);
  CHECK(max_abs_diff(matmul_nt(c, b), naive_matmul(c, b.transpose())) < 1e-12);
  CHECK_THROWS_AS(matmul(a, a), std::invalid_argument);
}

TEST_CASE("gemv, gemv_t_acc and ger_acc") {
  Rng rng(12);
  const Matrix w = random_matrix(rng, 4, 6);
  std::vector<double> x(6), y(4, 0.0);
  for (double& v : x) v = rng.normal();
  gemv(w, x, y);
  for (std::size_t i = 0; i < 4; ++i) {
    double s = 0.0;
    for (std::size_t j = 0; j < 6; ++j) s += w(i, j) * x[j];
    CHECK(y[i] == doctest::Approx(s).epsilon(1e-12));
  }
  std::vector<double> back(6, 1.0);
  gemv_t_acc(w, y, back);
  for (std::size_t j = 0; j < 6; ++j) {
    double s = 1.0;
    for (std::size_t i = 0; i < 4; ++i) s += w(i, j) * y[i];
    CHECK(back[j] == doctest::Approx(s).epsilon(1e-12));
  }
  Matrix acc = w;
  ger_acc(acc, y, x, 0.5);
  for (std::size_t i = 0; i < 4; ++i)
    for (std::size_t j = 0; j < 6; ++j) CHECK(acc(i, j) == doctest::Approx(w(i, j) + 0.5 * y[i] * x[j]));
}

TEST_CASE("column_softmax normalizes each column over its rows") {
  // Column 0 is uniform; column 1 has logits (ln 2, 0) -> (2/3, 1/3).
  const Matrix z = Matrix::from_rows({{0.0, std::log(2.0)}, {0.0, 0.0}});
  const Matrix y = column_softmax(z);
  CHECK(y(0, 0) == doctest::Approx(0.5));
  CHECK(y(1, 0) == doctest::Approx(0.5));
  CHECK(y(0, 1) == doctest::Approx(2.0 / 3.0));
  CHECK(y(1, 1) == doctest::Approx(1.0 / 3.0));
}

TEST_CASE("column_softmax survives huge logits and rejects non-finite input") {
  const Matrix z = Matrix::from_rows({{1000.0, -1000.0}, {999.0, -1001.0}});
  const Matrix y = column_softmax(z);
  CHECK(y.all_finite());
  const double e = std::exp(-1.0);
  CHECK(y(0, 0) == doctest::Approx(1.0 / (1.0 + e)));
  CHECK(y(0, 1) == doctest::Approx(1.0 / (1.0 + e)));
  Matrix bad = z;
  bad(1, 1) = std::nan("");
  CHECK_THROWS_AS(column_softmax(bad), std::invalid_argument);
}

TEST_CASE("property: column_softmax is column-stochastic and shift invariant per column") {
  Rng rng(13);
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t m = 1 + rng.uniform_index(8);
    Matrix z = random_matrix(rng, m, m, 20.0);
    const Matrix y = column_softmax(z);
    for (std::size_t j = 0; j < m; ++j) {
      double s = 0.0;
      for (std::size_t i = 0; i < m; ++i) {
        CHECK(y(i, j) >= 0.0);
        s += y(i, j);
      }
      CHECK(std::abs(s - 1.0) < 1e-12);
    }
    const double shift = 50.0 * rng.normal();
    const std::size_t col = rng.uniform_index(m);
    for (std::size_t i = 0; i < m; ++i) z(i, col) += shift;
    const Matrix y2 = column_softmax(z);
    for (std::size_t i = 0; i < m; ++i) CHECK(std::abs(y2(i, col) - y(i, col)) < 1e-12);
  }
}

TEST_CASE("softmax_inplace") {
  std::vector<double> v = {1.0, 2.0, 3.0};
  softmax_inplace(v);
  const double d = std::exp(1.0) + std::exp(2.0) + std::exp(3.0);
  CHECK(v[0] == doctest::Approx(std::exp(1.0) / d));
  CHECK(v[2] == doctest::Approx(std::exp(3.0) / d));
}

TEST_CASE("gram of a 2x2 feature map") {
  const Matrix f = Matrix::from_rows({{1.0, 2.0}, {3.0, 4.0}});
  const Matrix g = gram(f);
  CHECK(g == Matrix::from_rows({{10.0, 14.0}, {14.0, 20.0}}));
}

TEST_CASE("grad_check accepts a correct gradient and locates a wrong one") {
  const std::vector<double> x = {0.3, -1.2, 2.0};
  auto f = [](std::span<const double> v) {
    double s = 0.0;
    for (double t : v) s += t * t * t;
    return s;
  };
  std::vector<double> good(3), bad(3);
  for (std::size_t i = 0; i < 3; ++i) good[i] = bad[i] = 3.0 * x[i] * x[i];
  CHECK(grad_check(f, x, good).max_rel_error < 1e-8);
  bad[1] += 0.5;
  const auto r = grad_check(f, x, bad);
  CHECK(r.worst_index == 1);
  CHECK(r.max_rel_error > 0.1);
}

TEST_CASE("grad_check reports the coordinate that produced a non-finite value") {
  const std::vector<double> x = {1.0, 0.0};
  auto f = [](std::span<const double> v) { return v[1] > 0.0 ? std::log(-1.0) : v[0]; };
  const std::vector<double> g = {1.0, 0.0};
  try {
    grad_check(f, x, g);
    FAIL("expected an exception");
  } catch (const std::runtime_error& e) {
    CHECK(std::string(e.what()).find("coordinate 1") != std::string::npos);
  }
}

TEST_CASE("parallel_for visits every index once and propagates exceptions") {
  for (std::size_t threads : {1u, 2u, 3u, 8u}) {
    std::vector<std::atomic<int>> hits(37);
    parallel_for(hits.size(), threads, [&](std::size_t i) { hits[i]++; });
    for (const auto& h : hits) CHECK(h.load() == 1);
  }
  CHECK_THROWS_AS(parallel_for(10, 3,
                               [](std::size_t i) {
                                 if (i == 7) throw std::domain_error("boom");
                               }),
                  std::domain_error);
}

TEST_CASE("Rng is mt19937_64 underneath") {
  // The C++ standard fixes the 10000th output of a default-seeded mt19937_64.
  Rng rng(5489u);
  std::uint64_t v = 0;
  for (int i = 0; i < 10000; ++i) v = rng.next_u64();
  CHECK(v == 9981545732273789042ull);
}

TEST_CASE("Rng streams are reproducible and well distributed") {
  Rng a(42), b(42);
  for (int i = 0; i < 100; ++i) CHECK(a.next_u64() == b.next_u64());

  Rng r(7);
  const int n = 200000;
  double sum = 0.0, sq = 0.0;
  std::vector<int> buckets(5, 0);
  for (int i = 0; i < n; ++i) {
    const double u = r.uniform();
    REQUIRE(u >= 0.0);
    REQUIRE(u < 1.0);
    const double z = r.normal();
    sum += z;
    sq += z * z;
    buckets[r.uniform_index(5)]++;
  }
  // Mean within 5 standard errors, variance within 5 standard errors (var of z^2 is 2).
  CHECK(std::abs(sum / n) < 5.0 / std::sqrt(n));
  CHECK(std::abs(sq / n - 1.0) < 5.0 * std::sqrt(2.0 / n));
  for (int c : buckets) CHECK(std::abs(c - n / 5) < 5.0 * std::sqrt(n * 0.2 * 0.8));
}

TEST_CASE("derive_seed separates streams") {
  std::set<std::uint64_t> seen;
  for (std::uint64_t s = 0; s < 1000; ++s) seen.insert(derive_seed(99, s));
  CHECK(seen.size() == 1000);
  CHECK(derive_seed(99, std::string_view("shuffle")) == derive_seed(99, std::string_view("shuffle")));
  CHECK(derive_seed(99, std::string_view("shuffle")) != derive_seed(99, std::string_view("shufflf")));
  CHECK(derive_seed(1, std::string_view("x")) != derive_seed(2, std::string_view("x")));
}
