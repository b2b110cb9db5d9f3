#include "doctest.h"

#include <cmath>
#include <numeric>
#include <set>

#include "qnbm/error.hpp"
#include "qnbm/matrix.hpp"
#include "qnbm/rng.hpp"

using namespace qnbm;
using num::Matrix;

namespace {

Matrix naive_matmul(const Matrix& a, const Matrix& b) {
  Matrix out(a.rows(), b.cols());
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (std::size_t j = 0; j < b.cols(); ++j)
      for (std::size_t k = 0; k < a.cols(); ++k) out(i, j) += a(i, k) * b(k, j);
  return out;
}

void check_close(const Matrix& a, const Matrix& b, double tol) {
  REQUIRE(a.rows() == b.rows());
  REQUIRE(a.cols() == b.cols());
  for (std::size_t i = 0; i < a.size(); ++i) CHECK(std::abs(a.values()[i] - b.values()[i]) <= tol);
}

}  // namespace

TEST_CASE("products agree with a triple loop") {
  num::Rng rng(1);
  const std::size_t dims[][3] = {{1, 1, 1}, {3, 5, 2}, {17, 9, 31}, {64, 1, 7}};
  for (const auto& [m, k, n] : dims) {
    const Matrix a = num::sample_normal(rng, m, k, 0.0, 1.0);
    const Matrix b = num::sample_normal(rng, k, n, 0.0, 1.0);
    check_close(num::matmul(a, b), naive_matmul(a, b), 1e-12);
    check_close(num::matmul_tn(num::transpose(a), b), naive_matmul(a, b), 1e-12);
    check_close(num::matmul_nt(a, num::transpose(b)), naive_matmul(a, b), 1e-12);
  }
}

TEST_CASE("incompatible shapes are reported with both shapes") {
  const Matrix a(2, 3), b(2, 3);
  try {
    num::matmul(a, b);
    FAIL("expected ShapeError");
  } catch (const ShapeError& e) {
    const std::string msg = e.what();
    CHECK(msg.find("(2 x 3)") != std::string::npos);
  }
  CHECK_THROWS_AS(num::add(a, Matrix(3, 2)), ShapeError);
  CHECK_THROWS_AS(Matrix(2, 2, std::vector<double>(3)), ShapeError);
}

TEST_CASE("elementwise helpers") {
  const Matrix a = Matrix::from_rows({{1, -2}, {3, -4}});
  CHECK(num::relu(a) == Matrix::from_rows({{1, 0}, {3, 0}}));
  CHECK(num::sum(a) == -2.0);
  CHECK(num::column_sums(a) == Matrix::from_rows({{4, -6}}));
  CHECK(num::max_abs(a) == 4.0);
  Matrix c = a;
  num::axpy(c, a, 2.0);
  CHECK(c == num::scale(a, 3.0));
  CHECK(num::hadamard(a, a) == Matrix::from_rows({{1, 4}, {9, 16}}));
  c(0, 0) = std::nan("");
  CHECK_FALSE(num::all_finite(c));
  CHECK(num::bitwise_equal(a, Matrix::from_rows({{1, -2}, {3, -4}})));
  CHECK_FALSE(num::bitwise_equal(Matrix(1, 1, 0.0), Matrix(1, 1, -0.0)));
}

TEST_CASE("generator streams are reproducible and seed-dependent") {
  num::Rng a(42), b(42);
  for (int i = 0; i < 100; ++i) CHECK(a.next_u64() == b.next_u64());
  num::Rng d(42), e(43);
  CHECK(d.next_u64() != e.next_u64());
}

TEST_CASE("uniform draws and indices stay in range") {
  num::Rng rng(7);
  std::vector<int> counts(5, 0);
  for (int i = 0; i < 50000; ++i) {
    const double u = rng.uniform();
    CHECK((u >= 0.0 && u < 1.0));
    ++counts[rng.uniform_index(5)];
  }
  for (int c : counts) CHECK(std::abs(c - 10000) < 500);
  CHECK_THROWS_AS(rng.uniform_index(0), ParameterError);
}

TEST_CASE("normal draws have unit moments") {
  num::Rng rng(3);
  const int n = 200000;
  double s = 0.0, ss = 0.0;
  for (int i = 0; i < n; ++i) {
    const double z = rng.normal();
    s += z;
    ss += z * z;
  }
  const double mean = s / n;
  CHECK(std::abs(mean) < 0.01);
  CHECK(std::abs(ss / n - mean * mean - 1.0) < 0.02);
  CHECK_THROWS_AS(num::sample_normal(rng, 2, 2, 0.0, -1.0), ParameterError);
}

TEST_CASE("shuffle is a permutation") {
  num::Rng rng(5);
  std::vector<int> v(100);
  std::iota(v.begin(), v.end(), 0);
  rng.shuffle(std::span<int>(v));
  CHECK(std::set<int>(v.begin(), v.end()).size() == 100);
  CHECK_FALSE(std::is_sorted(v.begin(), v.end()));
}
