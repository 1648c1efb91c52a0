#include <gtest/gtest.h>

#include <Eigen/Eigenvalues>
#include <Eigen/LU>
#include <Eigen/SVD>
#include <algorithm>
#include <numeric>

#include "fte/linalg.hpp"

using namespace fte;

namespace {

Matrix gaussian(int r, int c, RngStream& rng) {
  Matrix m(r, c);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = rng.normal();
  return m;
}

}  // namespace

TEST(Rng, MixMatchesSplitMix64Reference) {
  // Published SplitMix64 outputs for state 0.
  EXPECT_EQ(mix64(0), 0xE220A8397B1DCDAFull);
  EXPECT_EQ(mix64(0x9E3779B97F4A7C15ull), 0x6E789E6AA1B965F4ull);
  EXPECT_EQ(mix64(0x3C6EF372FE94F82Aull), 0x06C45D188009454Full);
}

TEST(Rng, CounterDefinition) {
  RngStream r(42, 7);
  const std::uint64_t key = mix64(mix64(42) ^ 7);
  for (std::uint64_t n = 0; n < 5; ++n) EXPECT_EQ(r.next_u64(), mix64(key + mix64(n)));
  EXPECT_EQ(r.position(), 5u);
}

TEST(Rng, SplitIsIndependentOfParentPosition) {
  RngStream a(1, 2);
  const RngStream b(1, 2);
  a.next_u64();
  a.next_u64();
  RngStream ca = a.split(3);
  RngStream cb = b.split(3);
  EXPECT_EQ(ca.next_u64(), cb.next_u64());
  EXPECT_EQ(ca.stream_id(), mix64(2 ^ mix64(4)));
  EXPECT_NE(b.split(0).stream_id(), b.split(1).stream_id());
}

TEST(Rng, UniformAndIndexRanges) {
  RngStream r(3, 0);
  std::vector<int> hist(7, 0);
  for (int i = 0; i < 7000; ++i) {
    const double u = r.uniform();
    ASSERT_GE(u, 0.0);
    ASSERT_LT(u, 1.0);
    const auto k = r.uniform_index(7);
    ASSERT_LT(k, 7u);
    ++hist[k];
  }
  for (int h : hist) EXPECT_NEAR(h, 1000, 150);
  EXPECT_EQ(r.uniform_index(1), 0u);
}

TEST(Rng, NormalMoments) {
  RngStream r(4, 0);
  double s = 0, s2 = 0;
  const int n = 20000;
  for (int i = 0; i < n; ++i) {
    const double x = r.normal();
    s += x;
    s2 += x * x;
  }
  EXPECT_NEAR(s / n, 0.0, 0.03);
  EXPECT_NEAR(s2 / n, 1.0, 0.05);
}

TEST(Rng, ShuffleIsAPermutation) {
  std::vector<int> v(50);
  std::iota(v.begin(), v.end(), 0);
  RngStream r(5, 0);
  shuffle(v, r);
  std::vector<int> sorted = v;
  std::sort(sorted.begin(), sorted.end());
  for (int i = 0; i < 50; ++i) EXPECT_EQ(sorted[static_cast<std::size_t>(i)], i);
  EXPECT_FALSE(std::is_sorted(v.begin(), v.end()));
}

TEST(Linalg, RandomSymmetricShapeAndRejectsSmall) {
  RngStream r(1, 1);
  const Matrix z = random_symmetric(5, r);
  EXPECT_EQ(z.rows(), 5);
  EXPECT_EQ(z, z.transpose());
  RngStream r2(1, 1);
  EXPECT_THROW(random_symmetric(1, r2), Error);
}

TEST(Linalg, SymEigAgreesWithEigen) {
  RngStream r(2, 2);
  for (int m : {2, 3, 7, 16, 33}) {
    const Matrix a = random_symmetric(m, r);
    const auto eig = sym_eig(a);
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> oracle{Eigen::MatrixXd(a)};
    Vector expected = oracle.eigenvalues().reverse();
    EXPECT_LT((eig.values - expected).cwiseAbs().maxCoeff(), 1e-10) << "m=" << m;
    for (int i = 1; i < m; ++i) EXPECT_GE(eig.values(i - 1), eig.values(i));
    const Matrix recon = eig.vectors * eig.values.asDiagonal() * eig.vectors.transpose();
    EXPECT_LT(max_abs(Matrix(recon - a)), 1e-10);
    EXPECT_LT(max_abs(Matrix(eig.vectors.transpose() * eig.vectors - Matrix::Identity(m, m))), 1e-12);
    for (int j = 0; j < m; ++j) {
      int first = 0;
      while (std::abs(eig.vectors(first, j)) <= 1e-12) ++first;
      EXPECT_GT(eig.vectors(first, j), 0.0);
    }
  }
}

TEST(Linalg, SymEigRejectsAsymmetric) {
  Matrix a(2, 2);
  a << 1, 2, 3, 4;
  try {
    sym_eig(a);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::contract);
  }
}

TEST(Linalg, SymEigDiagonalAndRepeated) {
  Matrix a = Matrix::Identity(4, 4) * 2.0;
  const auto eig = sym_eig(a);
  for (int i = 0; i < 4; ++i) EXPECT_EQ(eig.values(i), 2.0);
  EXPECT_EQ(eig.vectors, Matrix::Identity(4, 4));
}

TEST(Linalg, SingularValuesMatchEigenSvdIncludingWideAndTall) {
  RngStream r(3, 3);
  for (auto [b, m] : {std::pair{1, 5}, {5, 1}, {4, 9}, {12, 3}, {16, 16}}) {
    const Matrix f = gaussian(b, m, r);
    const Vector s = singular_values(f);
    Eigen::JacobiSVD<Eigen::MatrixXd> svd(f);
    ASSERT_EQ(s.size(), std::min(b, m));
    EXPECT_LT((s - svd.singularValues()).cwiseAbs().maxCoeff(), 1e-10);
  }
}

TEST(Linalg, SolveMatchesLu) {
  RngStream r(4, 4);
  const Matrix a = gaussian(8, 8, r) + 4.0 * Matrix::Identity(8, 8);
  const Matrix b = gaussian(8, 3, r);
  const Matrix x = solve(a, b);
  const Matrix oracle = Eigen::MatrixXd(a).partialPivLu().solve(Eigen::MatrixXd(b));
  EXPECT_LT(max_abs(Matrix(x - oracle)), 1e-12);
}

TEST(Linalg, SolveNeedsPivoting) {
  Matrix a(2, 2);
  a << 0, 1, 1, 0;
  Matrix b(2, 1);
  b << 3, 5;
  const Matrix x = solve(a, b);
  EXPECT_DOUBLE_EQ(x(0, 0), 5.0);
  EXPECT_DOUBLE_EQ(x(1, 0), 3.0);
}

TEST(Linalg, SolveSingularRaises) {
  Matrix a(2, 2);
  a << 1, 2, 2, 4;
  try {
    solve(a, Matrix::Identity(2, 2));
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::singular_matrix);
  }
}

TEST(Linalg, ArgmaxTiesGoLow) {
  Vector v(4);
  v << 1, 3, 3, 2;
  EXPECT_EQ(argmax(v.transpose()), 1);
}

TEST(Errors, ExitCodes) {
  EXPECT_EQ(exit_code(ErrorCode::config), 2);
  EXPECT_EQ(exit_code(ErrorCode::data), 3);
  EXPECT_EQ(exit_code(ErrorCode::protocol), 3);
  EXPECT_EQ(exit_code(ErrorCode::numerical), 4);
  EXPECT_EQ(exit_code(ErrorCode::singular_matrix), 4);
}
