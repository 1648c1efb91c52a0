#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <string>
#include <vector>

#include "fte/errors.hpp"
#include "fte/rng.hpp"

namespace fte {

template <typename Scalar>
using MatrixX = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename Scalar>
using VectorX = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;

using Matrix = MatrixX<double>;
using Vector = VectorX<double>;

template <typename Scalar>
struct SymEig {
  VectorX<Scalar> values;   // descending
  MatrixX<Scalar> vectors;  // column j pairs with values[j]
};

template <typename Derived>
typename Derived::Scalar max_abs(const Eigen::MatrixBase<Derived>& a) {
  return a.size() == 0 ? typename Derived::Scalar(0) : a.cwiseAbs().maxCoeff();
}

template <typename Derived>
bool all_finite(const Eigen::MatrixBase<Derived>& a) {
  return a.allFinite();
}

// Symmetric m x m matrix with upper-triangle entries i.i.d. uniform on [0, 1],
// drawn in row-major order and mirrored.
template <typename Scalar = double>
MatrixX<Scalar> random_symmetric(int m, RngStream& rng) {
  if (m < 2) fail(ErrorCode::invalid_dimension, "random_symmetric: dimension must be >= 2, got " + std::to_string(m));
  MatrixX<Scalar> z(m, m);
  for (int i = 0; i < m; ++i) {
    for (int j = i; j < m; ++j) {
      const auto u = static_cast<Scalar>(rng.uniform());
      z(i, j) = u;
      z(j, i) = u;
    }
  }
  return z;
}

// Cyclic Jacobi eigendecomposition of a symmetric matrix.
//
// Eigenvalues come back descending (ties keep original diagonal order) and the
// first entry of each eigenvector with |v| > 1e-12 is positive.
template <typename Derived>
SymEig<typename Derived::Scalar> sym_eig(const Eigen::MatrixBase<Derived>& s, int max_sweeps = 100) {
  using Scalar = typename Derived::Scalar;
  using std::abs;
  using std::sqrt;

  const Eigen::Index n = s.rows();
  if (n != s.cols()) fail(ErrorCode::contract, "sym_eig: matrix is not square");
  if (n == 0) return {};
  if (max_abs(s - s.transpose()) > Scalar(1e-12)) fail(ErrorCode::contract, "sym_eig: matrix is not symmetric");

  MatrixX<Scalar> a = s;
  MatrixX<Scalar> v = MatrixX<Scalar>::Identity(n, n);
  const Scalar scale = a.norm();
  const Scalar eps = std::numeric_limits<Scalar>::epsilon();
  const Scalar negligible = eps * Scalar(1e-3) * scale;

  auto off_diagonal = [&] {
    Scalar acc = 0;
    for (Eigen::Index p = 0; p < n; ++p)
      for (Eigen::Index q = p + 1; q < n; ++q) acc += a(p, q) * a(p, q);
    return sqrt(acc);
  };

  bool converged = false;
  for (int sweep = 0; sweep < max_sweeps; ++sweep) {
    const Scalar off = off_diagonal();
    if (off <= negligible) {
      converged = true;
      break;
    }
    for (Eigen::Index p = 0; p < n - 1; ++p) {
      for (Eigen::Index q = p + 1; q < n; ++q) {
        const Scalar apq = a(p, q);
        if (abs(apq) <= negligible) {
          a(p, q) = Scalar(0);
          a(q, p) = Scalar(0);
          continue;
        }
        const Scalar theta = (a(q, q) - a(p, p)) / (Scalar(2) * apq);
        const Scalar t = (theta >= 0 ? Scalar(1) : Scalar(-1)) / (abs(theta) + sqrt(theta * theta + Scalar(1)));
        const Scalar c = Scalar(1) / sqrt(t * t + Scalar(1));
        const Scalar sn = t * c;

        for (Eigen::Index k = 0; k < n; ++k) {
          const Scalar akp = a(k, p);
          const Scalar akq = a(k, q);
          a(k, p) = c * akp - sn * akq;
          a(k, q) = sn * akp + c * akq;
        }
        for (Eigen::Index k = 0; k < n; ++k) {
          const Scalar apk = a(p, k);
          const Scalar aqk = a(q, k);
          a(p, k) = c * apk - sn * aqk;
          a(q, k) = sn * apk + c * aqk;
        }
        a(p, q) = Scalar(0);
        a(q, p) = Scalar(0);
        for (Eigen::Index k = 0; k < n; ++k) {
          const Scalar vkp = v(k, p);
          const Scalar vkq = v(k, q);
          v(k, p) = c * vkp - sn * vkq;
          v(k, q) = sn * vkp + c * vkq;
        }
      }
    }
  }
  if (!converged) {
    const Scalar off = off_diagonal();
    if (!(off <= Scalar(1e-10) * std::max(scale, Scalar(1))))
      fail(ErrorCode::numerical, "sym_eig: Jacobi iteration did not converge");
  }

  std::vector<Eigen::Index> order(static_cast<std::size_t>(n));
  std::iota(order.begin(), order.end(), Eigen::Index{0});
  std::stable_sort(order.begin(), order.end(), [&](Eigen::Index i, Eigen::Index j) { return a(i, i) > a(j, j); });

  SymEig<Scalar> out{VectorX<Scalar>(n), MatrixX<Scalar>(n, n)};
  for (Eigen::Index j = 0; j < n; ++j) {
    const Eigen::Index src = order[static_cast<std::size_t>(j)];
    out.values(j) = a(src, src);
    out.vectors.col(j) = v.col(src);
    for (Eigen::Index k = 0; k < n; ++k) {
      if (abs(out.vectors(k, j)) > Scalar(1e-12)) {
        if (out.vectors(k, j) < 0) out.vectors.col(j) *= Scalar(-1);
        break;
      }
    }
  }
  return out;
}

// Singular values via the eigenvalues of the smaller Gram matrix.
template <typename Derived>
VectorX<typename Derived::Scalar> singular_values(const Eigen::MatrixBase<Derived>& a) {
  using Scalar = typename Derived::Scalar;
  if (a.size() == 0) fail(ErrorCode::contract, "singular_values: empty matrix");
  const MatrixX<Scalar> gram = a.rows() >= a.cols() ? MatrixX<Scalar>(a.transpose() * a) : MatrixX<Scalar>(a * a.transpose());
  // The product is symmetric up to rounding; symmetrize before the strict check.
  const MatrixX<Scalar> sym = (gram + gram.transpose()) / Scalar(2);
  auto eig = sym_eig(sym);
  return eig.values.unaryExpr([](Scalar x) { return std::sqrt(std::max(x, Scalar(0))); });
}

// Solves A X = B by Gaussian elimination with partial pivoting.
template <typename DerivedA, typename DerivedB>
MatrixX<typename DerivedA::Scalar> solve(const Eigen::MatrixBase<DerivedA>& a_in, const Eigen::MatrixBase<DerivedB>& b_in) {
  using Scalar = typename DerivedA::Scalar;
  using std::abs;
  const Eigen::Index n = a_in.rows();
  if (n != a_in.cols()) fail(ErrorCode::contract, "solve: coefficient matrix is not square");
  if (b_in.rows() != n) fail(ErrorCode::contract, "solve: right-hand side row count does not match");

  MatrixX<Scalar> a = a_in;
  MatrixX<Scalar> x = b_in;
  for (Eigen::Index k = 0; k < n; ++k) {
    Eigen::Index pivot = k;
    for (Eigen::Index i = k + 1; i < n; ++i)
      if (abs(a(i, k)) > abs(a(pivot, k))) pivot = i;
    if (abs(a(pivot, k)) < Scalar(1e-12))
      fail(ErrorCode::singular_matrix, "solve: matrix is singular (pivot below 1e-12 at column " + std::to_string(k) + ")");
    if (pivot != k) {
      a.row(k).swap(a.row(pivot));
      x.row(k).swap(x.row(pivot));
    }
    for (Eigen::Index i = k + 1; i < n; ++i) {
      const Scalar f = a(i, k) / a(k, k);
      if (f == Scalar(0)) continue;
      a.row(i).tail(n - k) -= f * a.row(k).tail(n - k);
      x.row(i) -= f * x.row(k);
    }
  }
  for (Eigen::Index k = n - 1; k >= 0; --k) {
    for (Eigen::Index j = k + 1; j < n; ++j) x.row(k) -= a(k, j) * x.row(j);
    x.row(k) /= a(k, k);
  }
  return x;
}

// Index of the largest entry; ties resolve to the lowest index.
template <typename Derived>
Eigen::Index argmax(const Eigen::DenseBase<Derived>& row) {
  Eigen::Index best = 0;
  for (Eigen::Index j = 1; j < row.size(); ++j)
    if (row(j) > row(best)) best = j;
  return best;
}

}  // namespace fte
