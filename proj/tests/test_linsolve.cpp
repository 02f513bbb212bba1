#include <doctest.h>

#include <random>

#include "gradmap/linsolve.hpp"

using namespace gradmap;

namespace {

MatVec matvec_of(const MatR& a) {
  return [a](const VecR& x) { return VecR(a * x); };
}

MatR random_diag_dominant(int n, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unit(-1.0, 1.0);
  MatR a(n, n);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j) a(i, j) = unit(rng);
  for (int i = 0; i < n; ++i) a(i, i) += n;  // well conditioned, nonsymmetric
  return a;
}

}  // namespace

TEST_CASE("bicgstab identity system returns rhs") {
  const int n = 12;
  VecR b(n);
  for (int i = 0; i < n; ++i) b(i) = 0.5 * i - 2.0;
  const auto res = bicgstab([](const VecR& x) { return x; }, b, 1e-12, 50);
  CHECK(res.converged);
  CHECK((res.x - b).lpNorm<Eigen::Infinity>() == doctest::Approx(0.0).epsilon(1e-12));
}

TEST_CASE("bicgstab matches a dense direct solve on a random system") {
  const int n = 30;
  const MatR a = random_diag_dominant(n, 7);
  std::mt19937_64 rng(11);
  std::uniform_real_distribution<double> unit(-1.0, 1.0);
  VecR b(n);
  for (int i = 0; i < n; ++i) b(i) = unit(rng);

  const VecR x_ref = a.partialPivLu().solve(b);
  const auto res = bicgstab(matvec_of(a), b, 1e-12, 10 * n);
  CHECK(res.converged);
  CHECK((res.x - x_ref).norm() / x_ref.norm() < 1e-9);
  // Residual contract: ||b - A x|| <= tol * ||b||.
  CHECK((b - a * res.x).norm() <= 1e-12 * b.norm() * 10.0);
}

TEST_CASE("bicgstab zero rhs gives zero solution") {
  const MatR a = random_diag_dominant(8, 3);
  const auto res = bicgstab(matvec_of(a), VecR::Zero(8), 1e-10, 100);
  CHECK(res.converged);
  CHECK(res.x.norm() == 0.0);
}

TEST_CASE("dense fallback solves the same systems") {
  const int n = 20;
  const MatR a = random_diag_dominant(n, 21);
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> unit(-1.0, 1.0);
  VecR b(n);
  for (int i = 0; i < n; ++i) b(i) = unit(rng);

  const auto res = dense_solve(matvec_of(a), b);
  CHECK(res.converged);
  CHECK((a * res.x - b).norm() / b.norm() < 1e-10);
}

TEST_CASE("bicgstab reports failure when the iteration cap is too small") {
  const int n = 40;
  const MatR a = random_diag_dominant(n, 9);
  std::mt19937_64 rng(2);
  std::uniform_real_distribution<double> unit(-1.0, 1.0);
  VecR b(n);
  for (int i = 0; i < n; ++i) b(i) = unit(rng);
  const auto res = bicgstab(matvec_of(a), b, 1e-14, 1);
  CHECK_FALSE(res.converged);
}
