#include <gtest/gtest.h>

#include <cmath>
#include <limits>

#include "kcf/factorization.hpp"
#include "kcf/lmi.hpp"
#include "kcf/selection.hpp"
#include "kcf/tensor_algebra.hpp"
#include "oracles.hpp"

using kcf::Matrix;
using kcf::Vector;

namespace {

constexpr int kTrials = 1000;

double scale_of(const Matrix& m) { return std::max(1.0, m.cwiseAbs().maxCoeff()); }

}  // namespace

TEST(Property, KronMixedProduct) {
  oracle::Gen g(101);
  for (int t = 0; t < kTrials; ++t) {
    const int m = g.integer(1, 3), n = g.integer(1, 3), p = g.integer(1, 3);
    const int q = g.integer(1, 3), r = g.integer(1, 3), s = g.integer(1, 3);
    const Matrix a = g.matrix(m, n), c = g.matrix(n, p), b = g.matrix(q, r), d = g.matrix(r, s);
    const Matrix lhs = kcf::kron(a * c, b * d);
    const Matrix rhs = kcf::kron(a, b) * kcf::kron(c, d);
    ASSERT_LE((lhs - rhs).cwiseAbs().maxCoeff(), 1e-10 * scale_of(rhs)) << "trial " << t;
  }
}

TEST(Property, KronVectorCorollary) {
  oracle::Gen g(102);
  for (int t = 0; t < kTrials; ++t) {
    const int na = g.integer(1, 4), nb = g.integer(1, 4), mr = g.integer(1, 4);
    const Vector a = g.vector(na), b = g.vector(nb);
    const Matrix m = g.matrix(mr, nb);
    const Vector lhs = kcf::kron_vec(a, m * b);
    const Vector rhs = kcf::kron(Matrix::Identity(na, na), m) * kcf::kron_vec(a, b);
    ASSERT_LE((lhs - rhs).cwiseAbs().maxCoeff(), 1e-10 * scale_of(rhs)) << "trial " << t;
  }
}

TEST(Property, HadamardKronecker) {
  oracle::Gen g(103);
  for (int t = 0; t < kTrials; ++t) {
    const int n = g.integer(1, 4);
    const Vector a = g.vector(3), b = g.vector(3), c = g.vector(n);
    const Vector lhs = kcf::kron_vec(kcf::hadamard(a, b), c);
    const Vector rhs = kcf::hadamard(kcf::kron_vec(a, kcf::ones(n)), kcf::kron_vec(b, c));
    ASSERT_LE((lhs - rhs).cwiseAbs().maxCoeff(), 1e-12 * scale_of(rhs)) << "trial " << t;
  }
}

TEST(Property, SchurCheckAgreesWithMinEigenvalue) {
  oracle::Gen g(104);
  int psd = 0;
  for (int t = 0; t < kTrials; ++t) {
    const int n = g.integer(1, 4), m = g.integer(1, 4);
    Matrix full;
    if (g.integer(0, 1) == 0) {
      const Matrix gm = g.matrix(g.integer(1, n + m), n + m);
      full = gm.transpose() * gm;
    } else {
      full = g.symmetric(n + m);
    }
    const bool got = kcf::schur_psd_check(kcf::SymmetricMatrix(full.topLeftCorner(n, n)), full.topRightCorner(n, m),
                                          kcf::SymmetricMatrix(full.bottomRightCorner(m, m)));
    const double want = oracle::min_eig(full);
    if (std::abs(want) < 1e-8) continue;
    ASSERT_EQ(got, want >= 0.0) << "trial " << t << " min eig " << want;
    psd += got;
  }
  EXPECT_GT(psd, 100);
}

TEST(Property, SelectionMatrixFromMask) {
  oracle::Gen g(105);
  for (int t = 0; t < kTrials; ++t) {
    const int n = g.integer(1, 12);
    std::vector<bool> mask(static_cast<std::size_t>(n));
    for (auto&& b : mask) b = g.integer(0, 1) == 1;
    const auto s = kcf::SelectionMatrix::from_mask(mask);
    ASSERT_EQ(s.cols(), n);
    ASSERT_EQ(static_cast<std::size_t>(s.rows()), static_cast<std::size_t>(std::count(mask.begin(), mask.end(), true)));
    for (kcf::Index r = 0; r < s.rows(); ++r) {
      ASSERT_DOUBLE_EQ(s.matrix().row(r).sum(), 1.0);
      if (r > 0) {
        ASSERT_LT(s.indices()[static_cast<std::size_t>(r - 1)], s.indices()[static_cast<std::size_t>(r)]);
      }
    }
    const Vector psi = g.vector(n);
    ASSERT_EQ(s.apply(psi), s.matrix() * psi);
  }
}

TEST(Property, AugmentedMeasurementPlacesBlocks) {
  oracle::Gen g(106);
  for (int t = 0; t < 200; ++t) {
    const int blocks = g.integer(1, 6), rows = g.integer(1, 3), cols = g.integer(1, 4);
    std::vector<bool> mask(static_cast<std::size_t>(blocks));
    for (auto&& b : mask) b = g.integer(0, 1) == 1;
    const auto kept = static_cast<int>(std::count(mask.begin(), mask.end(), true));
    const Matrix h = g.matrix(kept * rows, cols);
    const Matrix hbar = kcf::augmented_measurement(mask, h, rows);
    int next = 0;
    for (int i = 0; i < blocks; ++i) {
      const Matrix blk = hbar.middleRows(i * rows, rows);
      if (mask[static_cast<std::size_t>(i)]) {
        ASSERT_EQ(blk, h.middleRows(next++ * rows, rows));
      } else {
        ASSERT_TRUE(blk.isZero(0.0));
      }
    }
  }
}

TEST(Property, LmiIsAffineInGain) {
  oracle::Gen g(107);
  for (int t = 0; t < 200; ++t) {
    const int d = g.integer(2, 5), ds = g.integer(1, 2), du = g.integer(1, 2), dpu = g.integer(1, 3);
    const Matrix gp = g.matrix(d, d);
    const kcf::LmiProblem prob(gp.transpose() * gp, g.matrix(d, d), g.matrix(d, ds * du), g.matrix(ds * dpu, d), ds, du);
    const Matrix k1 = g.matrix(du, dpu), k2 = g.matrix(du, dpu);
    const double alpha = g.uniform(-2.0, 2.0), lambda = g.uniform(0.0, 1.0);
    const Matrix lhs = prob.assemble(alpha * k1 + (1 - alpha) * k2, lambda);
    const Matrix rhs = alpha * prob.assemble(k1, lambda) + (1 - alpha) * prob.assemble(k2, lambda);
    ASSERT_LE((lhs - rhs).cwiseAbs().maxCoeff(), 1e-10 * scale_of(rhs));
    ASSERT_EQ(lhs, lhs.transpose());
  }
}

TEST(Property, FeasibilityIsMonotoneInLambda) {
  oracle::Gen g(108);
  int feasible = 0;
  for (int t = 0; t < 300; ++t) {
    const int d = g.integer(1, 4);
    const Matrix a = g.matrix(d, d, 0.6);
    const Matrix gp = g.matrix(d, d);
    const kcf::LmiProblem prob(gp.transpose() * gp + 0.1 * Matrix::Identity(d, d), a, Matrix::Zero(d, 1),
                               Matrix::Zero(1, d), 1, 1);
    const Matrix ku = Matrix::Zero(1, 1);
    const double l1 = g.uniform(0.0, 1.0), l2 = g.uniform(l1, 1.0);
    if (prob.min_eig(ku, l1) >= 0.0) {
      ++feasible;
      ASSERT_GE(prob.min_eig(ku, l2), -1e-12) << "trial " << t;
    }
  }
  EXPECT_GT(feasible, 10);
}

TEST(Property, KTildeMatchesDirectClosedLoop) {
  oracle::Gen g(109);
  for (int t = 0; t < 200; ++t) {
    const int d = g.integer(2, 5), ds = g.integer(1, d), du = g.integer(1, 3), dpu = g.integer(1, 3);
    const Matrix kxx = g.matrix(d, d), kxu = g.matrix(d, ds * du), ku = g.matrix(du, dpu);
    // Consistent psi: pick psi, then psi_u with (S psi) kron psi_u = H psi for S = first ds rows.
    const Vector psi = g.vector(d);
    const Vector s_psi = psi.head(ds);
    const Vector psi_u = g.vector(dpu);
    const Matrix h_exact = kcf::kron(Matrix::Identity(ds, ds), Matrix(psi_u)) * Matrix(s_psi) *
                           psi.transpose() / psi.squaredNorm();
    const Vector u = ku * psi_u;
    const Vector direct = kxx * psi + kxu * kcf::kron_vec(s_psi, u);
    const Matrix kt = kcf::assemble_k_tilde(kxx, kxu, ku, h_exact, ds);
    ASSERT_LE((kt * psi - direct).cwiseAbs().maxCoeff(), 1e-10 * std::max(1.0, direct.cwiseAbs().maxCoeff()));
  }
}
