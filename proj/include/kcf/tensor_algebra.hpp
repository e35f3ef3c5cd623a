#pragma once

#include <cmath>
#include <string>

#include <Eigen/Dense>

#include "kcf/errors.hpp"

namespace kcf {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;
using Index = Eigen::Index;

/// Absolute tolerance on the smallest eigenvalue for a matrix to count as PSD.
inline constexpr double kPsdTolerance = 1e-9;

inline std::string shape_string(Index rows, Index cols) {
  return std::to_string(rows) + "x" + std::to_string(cols);
}

template <typename Derived>
bool all_finite(const Eigen::MatrixBase<Derived>& m) {
  return m.allFinite();
}

/// Kronecker product. Block (i, j) of the result is a(i, j) * b.
template <typename DerivedA, typename DerivedB>
Matrix kron(const Eigen::MatrixBase<DerivedA>& a,
            const Eigen::MatrixBase<DerivedB>& b) {
  Matrix out(a.rows() * b.rows(), a.cols() * b.cols());
  for (Index i = 0; i < a.rows(); ++i) {
    for (Index j = 0; j < a.cols(); ++j) {
      out.block(i * b.rows(), j * b.cols(), b.rows(), b.cols()) = a(i, j) * b;
    }
  }
  return out;
}

/// Kronecker product of two column vectors, returned as a vector.
inline Vector kron_vec(const Vector& a, const Vector& b) {
  Vector out(a.size() * b.size());
  for (Index i = 0; i < a.size(); ++i) {
    out.segment(i * b.size(), b.size()) = a(i) * b;
  }
  return out;
}

inline Vector hadamard(const Vector& a, const Vector& b) {
  if (a.size() != b.size()) {
    throw DimensionError("hadamard: length mismatch (" + std::to_string(a.size()) +
                         " vs " + std::to_string(b.size()) + ")");
  }
  return a.cwiseProduct(b);
}

inline Vector ones(Index n) { return Vector::Ones(n); }

/// Rows [block * block_rows, (block + 1) * block_rows) of m.
inline Matrix row_block(const Matrix& m, Index block, Index block_rows) {
  if (block_rows <= 0 || (block + 1) * block_rows > m.rows()) {
    throw DimensionError("row_block: block " + std::to_string(block) + " of height " +
                         std::to_string(block_rows) + " exceeds " +
                         shape_string(m.rows(), m.cols()));
  }
  return m.middleRows(block * block_rows, block_rows);
}

/// Square matrix stored symmetrized, (M + M^T) / 2 on construction.
class SymmetricMatrix {
 public:
  SymmetricMatrix() = default;

  explicit SymmetricMatrix(const Matrix& m) {
    if (m.rows() != m.cols()) {
      throw DimensionError("SymmetricMatrix: not square (" + shape_string(m.rows(), m.cols()) +
                           ")");
    }
    m_ = 0.5 * (m + m.transpose());
  }

  const Matrix& matrix() const { return m_; }
  Index dim() const { return m_.rows(); }

 private:
  Matrix m_;
};

/// Smallest eigenvalue via Eigen's tridiagonalization-based symmetric solver.
inline double min_eigenvalue(const SymmetricMatrix& m) {
  if (!m.matrix().allFinite()) throw NonFiniteError("min_eigenvalue: non-finite entries");
  if (m.dim() == 0) throw DimensionError("min_eigenvalue: empty matrix");
  Eigen::SelfAdjointEigenSolver<Matrix> es(m.matrix(), Eigen::EigenvaluesOnly);
  return es.eigenvalues()(0);
}

inline double min_eigenvalue(const Matrix& m) { return min_eigenvalue(SymmetricMatrix(m)); }

/// Assembles [[P, B], [B^T, C]].
inline Matrix assemble_block(const Matrix& p, const Matrix& b, const Matrix& c) {
  if (p.rows() != p.cols() || c.rows() != c.cols() || b.rows() != p.rows() ||
      b.cols() != c.rows()) {
    throw DimensionError("assemble_block: P " + shape_string(p.rows(), p.cols()) + ", B " +
                         shape_string(b.rows(), b.cols()) + ", C " +
                         shape_string(c.rows(), c.cols()));
  }
  const Index n = p.rows();
  const Index m = c.rows();
  Matrix out(n + m, n + m);
  out.topLeftCorner(n, n) = p;
  out.topRightCorner(n, m) = b;
  out.bottomLeftCorner(m, n) = b.transpose();
  out.bottomRightCorner(m, m) = c;
  return out;
}

/// True iff [[P, B], [B^T, C]] is PSD up to kPsdTolerance.
inline bool schur_psd_check(const SymmetricMatrix& p, const Matrix& b, const SymmetricMatrix& c) {
  return min_eigenvalue(assemble_block(p.matrix(), b, c.matrix())) >= -kPsdTolerance;
}

}  // namespace kcf
