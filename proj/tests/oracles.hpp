#pragma once

// Independent reference routines for the test suites. None of these call into kcf.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <random>
#include <vector>

#include <Eigen/Dense>

namespace oracle {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

/// Seeded generator for property tests.
class Gen {
 public:
  explicit Gen(std::uint64_t seed) : eng_(seed) {}

  double uniform(double lo, double hi) { return std::uniform_real_distribution<double>(lo, hi)(eng_); }
  int integer(int lo, int hi) { return std::uniform_int_distribution<int>(lo, hi)(eng_); }
  double normal() { return std::normal_distribution<double>(0.0, 1.0)(eng_); }

  Matrix matrix(int r, int c, double scale = 1.0) {
    Matrix m(r, c);
    for (int i = 0; i < r; ++i)
      for (int j = 0; j < c; ++j) m(i, j) = scale * normal();
    return m;
  }
  Vector vector(int n, double scale = 1.0) { return matrix(n, 1, scale); }

  Matrix symmetric(int n) {
    Matrix a = matrix(n, n);
    return 0.5 * (a + a.transpose());
  }

  /// A = T diag(d) T^-1 with |d_i| <= rho and max |d_i| = rho.
  Matrix with_spectrum(int n, double rho, Matrix* t_out = nullptr) {
    Matrix t = matrix(n, n) + 3.0 * Matrix::Identity(n, n);
    Vector d(n);
    for (int i = 0; i < n; ++i) d(i) = uniform(-rho, rho);
    d(0) = rho;
    if (t_out) *t_out = t;
    return t * d.asDiagonal() * t.inverse();
  }

 private:
  std::mt19937_64 eng_;
};

/// Kronecker product by its definition.
inline Matrix kron(const Matrix& a, const Matrix& b) {
  Matrix out(a.rows() * b.rows(), a.cols() * b.cols());
  for (int i = 0; i < a.rows(); ++i)
    for (int j = 0; j < a.cols(); ++j)
      for (int k = 0; k < b.rows(); ++k)
        for (int l = 0; l < b.cols(); ++l) out(i * b.rows() + k, j * b.cols() + l) = a(i, j) * b(k, l);
  return out;
}

/// Cyclic Jacobi rotations; returns eigenvalues in ascending order.
inline std::vector<double> jacobi_eigenvalues(Matrix a, int max_sweeps = 100) {
  const int n = static_cast<int>(a.rows());
  for (int sweep = 0; sweep < max_sweeps; ++sweep) {
    double off = 0.0;
    for (int p = 0; p < n; ++p)
      for (int q = p + 1; q < n; ++q) off += a(p, q) * a(p, q);
    if (off < 1e-30) break;
    for (int p = 0; p < n; ++p) {
      for (int q = p + 1; q < n; ++q) {
        if (std::abs(a(p, q)) < 1e-300) continue;
        const double theta = (a(q, q) - a(p, p)) / (2.0 * a(p, q));
        const double t = (theta >= 0 ? 1.0 : -1.0) / (std::abs(theta) + std::sqrt(theta * theta + 1.0));
        const double c = 1.0 / std::sqrt(t * t + 1.0);
        const double s = t * c;
        for (int k = 0; k < n; ++k) {
          const double akp = a(k, p), akq = a(k, q);
          a(k, p) = c * akp - s * akq;
          a(k, q) = s * akp + c * akq;
        }
        for (int k = 0; k < n; ++k) {
          const double apk = a(p, k), aqk = a(q, k);
          a(p, k) = c * apk - s * aqk;
          a(q, k) = s * apk + c * aqk;
        }
      }
    }
  }
  std::vector<double> ev(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) ev[static_cast<std::size_t>(i)] = a(i, i);
  std::sort(ev.begin(), ev.end());
  return ev;
}

inline double min_eig(const Matrix& a) { return jacobi_eigenvalues(0.5 * (a + a.transpose())).front(); }

/// P with P - A^T P A = Q, from (I - A^T kron A^T) vec P = vec Q.
inline Matrix discrete_lyapunov(const Matrix& a, const Matrix& q) {
  const int n = static_cast<int>(a.rows());
  const Matrix at = a.transpose();
  const Matrix lhs = Matrix::Identity(n * n, n * n) - kron(at, at);
  const Vector vq = Eigen::Map<const Vector>(q.data(), n * n);
  const Vector vp = lhs.fullPivLu().solve(vq);
  return Eigen::Map<const Matrix>(vp.data(), n, n);
}

/// Max absolute entry difference relative to max(1, max |b|).
inline double rel_err(const Matrix& a, const Matrix& b) {
  const double scale = std::max(1.0, b.cwiseAbs().maxCoeff());
  return (a - b).cwiseAbs().maxCoeff() / scale;
}

}  // namespace oracle
