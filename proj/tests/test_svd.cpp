#include "ilr/svd.hpp"

#include "doctest.h"
#include "test_util.hpp"

#include <Eigen/SVD>

#include <limits>

using namespace ilr;

namespace {

template <typename T>
struct Tol;
template <>
struct Tol<double>
{
  static constexpr double ortho = 1e-10;
  static constexpr double recon = 1e-9;
};
template <>
struct Tol<float>
{
  static constexpr double ortho = 1e-5;
  static constexpr double recon = 1e-4;
};

template <typename T>
double ortho_err(BasicTensor<T> const &Q)
{
  std::size_t const n = Q.dim(0), r = Q.dim(1);
  double m = 0;
  for (std::size_t a = 0; a < r; ++a) {
    for (std::size_t b = 0; b < r; ++b) {
      double s = 0;
      for (std::size_t i = 0; i < n; ++i) {
        s += static_cast<double>(Q(i, a)) * static_cast<double>(Q(i, b));
      }
      m = std::max(m, std::abs(s - (a == b ? 1.0 : 0.0)));
    }
  }
  return m;
}

template <typename T>
double recon_err(SvdFactors<T> const &f, BasicTensor<T> const &M)
{
  double m = 0;
  for (std::size_t i = 0; i < M.dim(0); ++i) {
    for (std::size_t j = 0; j < M.dim(1); ++j) {
      double s = 0;
      for (std::size_t k = 0; k < f.sigma.size(); ++k) {
        s += static_cast<double>(f.U(i, k)) * f.sigma[k] * static_cast<double>(f.V(j, k));
      }
      m = std::max(m, std::abs(s - static_cast<double>(M(i, j))));
    }
  }
  return m;
}

template <typename T>
void check_invariants(BasicTensor<T> const &M)
{
  auto f = svd_thin(M);
  std::size_t const r = std::min(M.dim(0), M.dim(1));
  REQUIRE(f.sigma.size() == r);
  REQUIRE(f.U.shape() == Shape{M.dim(0), r});
  REQUIRE(f.V.shape() == Shape{M.dim(1), r});
  for (std::size_t i = 0; i + 1 < r; ++i) {
    CHECK(f.sigma[i] >= f.sigma[i + 1]);
  }
  CHECK(f.sigma.back() >= 0);
  CHECK(ortho_err(f.U) <= Tol<T>::ortho);
  CHECK(ortho_err(f.V) <= Tol<T>::ortho);
  CHECK(recon_err(f, M) <= Tol<T>::recon * std::max<double>(f.sigma[0], 1e-300));
}

template <typename T>
BasicTensor<T> random_matrix(std::size_t m, std::size_t n, std::size_t rank, std::mt19937_64 &rng)
{
  Tensor A = test::random_tensor({m, rank}, rng);
  Tensor B = test::random_tensor({rank, n}, rng);
  BasicTensor<T> M({m, n});
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      double s = 0;
      for (std::size_t k = 0; k < rank; ++k) {
        s += A(i, k) * B(k, j);
      }
      M(i, j) = static_cast<T>(s);
    }
  }
  return M;
}

template <typename T>
void run_shape_classes()
{
  std::mt19937_64 rng(17);
  std::uniform_int_distribution<std::size_t> small(1, 12);
  for (int trial = 0; trial < 100; ++trial) {
    std::size_t const a = small(rng), b = small(rng);
    std::size_t const lo = std::min(a, b), hi = std::max(a, b) + 1;
    check_invariants(random_matrix<T>(hi, lo, lo, rng)); // tall
    check_invariants(random_matrix<T>(lo, hi, lo, rng)); // wide
    check_invariants(random_matrix<T>(lo, lo, lo, rng)); // square
    std::size_t const rank = std::max<std::size_t>(1, lo / 2);
    check_invariants(random_matrix<T>(lo + 2, hi + 2, rank, rng)); // rank-deficient
  }
}

} // namespace

TEST_CASE("diagonal matrix")
{
  Tensor M({2, 2}, {3, 0, 0, 1});
  auto f = svd_thin(M);
  CHECK(f.sigma[0] == doctest::Approx(3.0));
  CHECK(f.sigma[1] == doctest::Approx(1.0));
  CHECK(f.U(0, 0) == doctest::Approx(1.0));
  CHECK(f.U(1, 1) == doctest::Approx(1.0));
  CHECK(f.V(0, 0) == doctest::Approx(1.0));
  CHECK(f.V(1, 1) == doctest::Approx(1.0));
  CHECK(f.U(0, 1) == doctest::Approx(0.0));
}

TEST_CASE("all-ones 2x2 has spectrum (2, 0)")
{
  Tensor M({2, 2}, {1, 1, 1, 1});
  auto f = svd_thin(M);
  CHECK(f.sigma[0] == doctest::Approx(2.0).epsilon(1e-14));
  CHECK(std::abs(f.sigma[1]) <= 1e-14);
  CHECK(ortho_err(f.U) <= 1e-12);
  CHECK(ortho_err(f.V) <= 1e-12);
}

TEST_CASE("random 8x20 reconstruction")
{
  std::mt19937_64 rng(3);
  auto M = test::random_tensor({8, 20}, rng);
  auto f = svd_thin(M);
  CHECK(recon_err(f, M) <= 1e-4 * f.sigma[0]);
  CHECK(recon_err(f, M) <= 1e-9 * f.sigma[0]);
}

TEST_CASE("invariants over shape classes, 64-bit")
{
  run_shape_classes<double>();
}

TEST_CASE("invariants over shape classes, 32-bit")
{
  run_shape_classes<float>();
}

TEST_CASE("spectrum matches Eigen and is transpose invariant")
{
  std::mt19937_64 rng(5);
  for (int trial = 0; trial < 50; ++trial) {
    std::size_t const m = 1 + trial % 9, n = 2 + (trial * 7) % 15;
    auto M = test::random_tensor({m, n}, rng);
    Tensor Mt({n, m});
    Eigen::MatrixXd E(m, n);
    for (std::size_t i = 0; i < m; ++i) {
      for (std::size_t j = 0; j < n; ++j) {
        Mt(j, i) = M(i, j);
        E(i, j) = M(i, j);
      }
    }
    auto a = svd_thin(M);
    auto b = svd_thin(Mt);
    Eigen::JacobiSVD<Eigen::MatrixXd> ref(E);
    for (std::size_t k = 0; k < a.sigma.size(); ++k) {
      CHECK(std::abs(a.sigma[k] - b.sigma[k]) <= 1e-6 * a.sigma[0]);
      CHECK(std::abs(a.sigma[k] - ref.singularValues()(k)) <= 1e-12 * a.sigma[0]);
    }
  }
}

TEST_CASE("deterministic and sign-normalized")
{
  std::mt19937_64 rng(9);
  auto M = test::random_tensor({6, 11}, rng);
  auto a = svd_thin(M);
  auto b = svd_thin(M);
  CHECK(a.U == b.U);
  CHECK(a.V == b.V);
  CHECK(a.sigma == b.sigma);
  for (std::size_t k = 0; k < a.sigma.size(); ++k) {
    for (std::size_t i = 0; i < a.U.dim(0); ++i) {
      if (std::abs(a.U(i, k)) > 1e-12) {
        CHECK(a.U(i, k) > 0);
        break;
      }
    }
  }
}

TEST_CASE("zero matrix and vectors")
{
  auto z = svd_thin(Tensor({3, 5}));
  for (auto s : z.sigma) {
    CHECK(s == 0.0);
  }
  CHECK(ortho_err(z.U) <= 1e-12);
  CHECK(ortho_err(z.V) <= 1e-12);
  check_invariants(Tensor({1, 4}, {1, -2, 3, 0.5}));
  check_invariants(Tensor({4, 1}, {1, -2, 3, 0.5}));
}

TEST_CASE("errors")
{
  Tensor M({2, 2}, {1, std::numeric_limits<double>::quiet_NaN(), 0, 1});
  CHECK_THROWS_AS(svd_thin(M), SvdError);
  Tensor I({2, 2}, {1, std::numeric_limits<double>::infinity(), 0, 1});
  CHECK_THROWS_AS(svd_thin(I), SvdError);
  CHECK_THROWS_AS(svd_thin(Tensor({3})), SvdError);
}
