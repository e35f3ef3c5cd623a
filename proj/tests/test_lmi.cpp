#include <gtest/gtest.h>

#include "kcf/lmi.hpp"
#include "oracles.hpp"

using kcf::Matrix;
using kcf::Vector;

namespace {

kcf::BilinearKoopmanModel lifted_model(const Matrix& kxx, const Matrix& kxu, kcf::Index selected) {
  const auto d = kxx.rows();
  std::vector<kcf::Index> idx;
  for (kcf::Index i = 0; i < selected; ++i) idx.push_back(i);
  return {kxx, kxu, kcf::SelectionMatrix::from_indices(idx, d), kcf::identity_map(d), {}};
}

kcf::FactorizationPair pair_with(const Matrix& h, const kcf::SelectionMatrix& s) {
  kcf::FactorizationPair p;
  p.selection = s;
  p.h = h;
  p.block_rows = h.rows() / s.rows();
  return p;
}

Matrix scalar(double v) { return Matrix::Constant(1, 1, v); }

}  // namespace

TEST(Lyapunov, ResidualOfScaledIdentity) {
  const Matrix a = 0.5 * Matrix::Identity(3, 3);
  const auto r = kcf::lyapunov_residual(a, Matrix::Identity(3, 3), 0.25);
  EXPECT_LE(r.matrix().cwiseAbs().maxCoeff(), 1e-16);
  EXPECT_NEAR(kcf::lyapunov_residual(a, Matrix::Identity(3, 3), 1.0).matrix()(1, 1), 0.75, 1e-16);
  EXPECT_THROW(kcf::lyapunov_residual(Matrix::Zero(2, 3), Matrix::Identity(2, 2), 1.0), kcf::DimensionError);
}

TEST(Lyapunov, SpectralCertificate) {
  oracle::Gen g(31);
  for (int t = 0; t < 50; ++t) {
    const int n = g.integer(2, 5);
    const double rho = g.uniform(0.2, 0.95);
    Matrix tm;
    const Matrix a = g.with_spectrum(n, rho, &tm);
    const Matrix ti = tm.inverse();
    const Matrix p = ti.transpose() * ti;
    const double scale = p.cwiseAbs().maxCoeff();
    EXPECT_GE(oracle::min_eig(kcf::lyapunov_residual(a, p, rho * rho).matrix()), -1e-9 * scale);
    EXPECT_LT(oracle::min_eig(kcf::lyapunov_residual(a, p, 0.9 * rho * rho).matrix()), 0.0);
  }
}

TEST(Lyapunov, AgreesWithLyapunovEquation) {
  oracle::Gen g(32);
  for (int t = 0; t < 20; ++t) {
    const int n = g.integer(1, 4);
    const Matrix a = g.with_spectrum(n, 0.8);
    const Matrix p = oracle::discrete_lyapunov(a, Matrix::Identity(n, n));
    const Matrix r = kcf::lyapunov_residual(a, p, 1.0).matrix();
    EXPECT_LE(oracle::rel_err(r, Matrix::Identity(n, n)), 1e-8);
  }
}

TEST(Candidates, IdentityStartLiftsStateBlock) {
  const auto c = kcf::identity_candidate(2, 5);
  EXPECT_EQ(c.kind, kcf::CandidateKind::identity_start);
  EXPECT_EQ(c.p.topLeftCorner(2, 2), Matrix::Identity(2, 2));
  EXPECT_EQ(c.p.sum(), 2.0);
}

TEST(Candidates, SampledAreDeterministicAndRankDeficient) {
  kcf::Rng a(7), b(7);
  for (int t = 0; t < 20; ++t) {
    const auto ca = kcf::sample_candidate(2, 9, 1e-2, a);
    const auto cb = kcf::sample_candidate(2, 9, 1e-2, b);
    EXPECT_EQ(ca.p, cb.p);
    EXPECT_LE(ca.r.cwiseAbs().maxCoeff(), 1.0);
    EXPECT_GE(oracle::min_eig(ca.q), 1e-2 - 1e-12);
    EXPECT_EQ(Eigen::FullPivLU<Matrix>(ca.p).rank(), 2);
    const auto ev = oracle::jacobi_eigenvalues(ca.p);
    EXPECT_GE(ev.front(), -1e-12);
  }
  EXPECT_THROW(kcf::sample_candidate(2, 9, 0.0, a), kcf::ConfigError);
  EXPECT_THROW(kcf::lift_candidate(Matrix::Identity(3, 3), 2), kcf::DimensionError);
}

TEST(FixedP, ScalarStabilizationDrivesRateToZero) {
  // K~ = 1.1 + K_u; the optimum is K_u = -1.1 with lambda* = 0.
  const kcf::LmiProblem prob(scalar(1.0), scalar(1.1), scalar(1.0), scalar(1.0), 1, 1);
  const auto r = kcf::solve_fixed_p(prob);
  ASSERT_TRUE(r.feasible);
  EXPECT_LE(r.lambda, 1e-3);
  EXPECT_NEAR(r.ku(0, 0), -1.1, std::sqrt(r.lambda + 1e-8) + 1e-6);
  EXPECT_GE(prob.min_eig(r.ku, r.lambda), -1e-8);
}

TEST(FixedP, ZeroAuthorityStableMatchesSpectralRadius) {
  oracle::Gen g(33);
  for (int t = 0; t < 10; ++t) {
    const int n = g.integer(1, 4);
    const double rho = g.uniform(0.1, 0.9);
    // Symmetric A so that P = I certifies exactly rho^2.
    Eigen::SelfAdjointEigenSolver<Matrix> es(g.symmetric(n));
    Vector d(n);
    for (int i = 0; i < n; ++i) d(i) = g.uniform(-rho, rho);
    d(0) = rho;
    const Matrix a = es.eigenvectors() * d.asDiagonal() * es.eigenvectors().transpose();
    const kcf::LmiProblem prob(Matrix::Identity(n, n), a, Matrix::Zero(n, 1), Matrix::Zero(1, n), 1, 1);
    const auto r = kcf::solve_fixed_p(prob);
    ASSERT_TRUE(r.feasible);
    EXPECT_GE(r.lambda, rho * rho - 1e-6);
    EXPECT_LE(r.lambda, rho * rho + 1e-3 + 1e-6);
  }
}

TEST(FixedP, UnstableWithoutAuthorityIsInfeasible) {
  const kcf::LmiProblem prob(scalar(1.0), scalar(1.2), scalar(0.0), scalar(1.0), 1, 1);
  const auto r = kcf::solve_fixed_p(prob);
  EXPECT_FALSE(r.feasible);
  EXPECT_LT(r.min_eig, 0.0);
  EXPECT_THROW(kcf::solve_fixed_p(prob, 0.0), kcf::ConfigError);
}

TEST(Synthesis, StatusReflectsResampleBudget) {
  const auto model = lifted_model(scalar(1.2), scalar(0.0), 1);
  const auto pair = pair_with(scalar(1.0), model.selection);
  kcf::Rng rng(1);
  kcf::SynthesisOptions opt;
  opt.max_resamples = 0;
  EXPECT_EQ(kcf::synthesize(model, pair, opt, rng).status, kcf::SynthesisStatus::infeasible);
  opt.max_resamples = 3;
  const auto r = kcf::synthesize(model, pair, opt, rng);
  EXPECT_EQ(r.status, kcf::SynthesisStatus::max_resamples_exceeded);
  EXPECT_EQ(r.resamples, 3);
  EXPECT_EQ(r.log.size(), 4u);
  EXPECT_THROW(kcf::certified_rate(r), std::logic_error);
}

TEST(Synthesis, FullRankCandidateCannotContractConstant) {
  // Linearized upright pendulum lifted with a constant: psi = [x1, x2, 1], all treated as state.
  const double dt = 0.01;
  Matrix kxx = Matrix::Identity(3, 3);
  kxx(0, 1) = dt;
  kxx(1, 0) = 9.81 * dt;
  Matrix kxu = Matrix::Zero(3, 1);
  kxu(1, 0) = dt;
  const kcf::BilinearKoopmanModel model{kxx, kxu, kcf::SelectionMatrix::from_indices({2}, 3), kcf::identity_map(3), {}};
  const auto pair = pair_with(Matrix::Identity(3, 3), model.selection);
  kcf::Rng rng(2);
  kcf::SynthesisOptions opt;
  opt.max_resamples = 20;
  const auto r = kcf::synthesize(model, pair, opt, rng);
  // The constant coordinate has eigenvalue 1 for every gain, so no strict contraction exists.
  EXPECT_NE(r.status, kcf::SynthesisStatus::optimal);
}

TEST(Synthesis, RankDeficientCandidateCertifiesStateBlock) {
  const double dt = 0.01;
  Matrix kxx = Matrix::Identity(3, 3);
  kxx(0, 1) = dt;
  kxx(1, 0) = 9.81 * dt;
  Matrix kxu = Matrix::Zero(3, 1);
  kxu(1, 0) = dt;
  std::vector<kcf::FeatureSpec> f{{"x1", 1.0, {kcf::FeatureFactor::power(0, 1)}},
                                  {"x2", 1.0, {kcf::FeatureFactor::power(1, 1)}},
                                  {"1", 1.0, {}}};
  const kcf::ObservableMap map("linear_const", 2, f);
  const kcf::BilinearKoopmanModel model{kxx, kxu, kcf::SelectionMatrix::from_indices({2}, 3), map, {}};
  const auto pair = pair_with(Matrix::Identity(3, 3), model.selection);
  kcf::Rng rng(3);
  kcf::SynthesisOptions opt;
  opt.max_resamples = 20;
  const auto r = kcf::synthesize(model, pair, opt, rng);
  ASSERT_EQ(r.status, kcf::SynthesisStatus::optimal);
  EXPECT_LT(r.lambda, 1.0);
  EXPECT_NEAR(kcf::certified_rate(r), std::sqrt(r.lambda), 0.0);
  const Matrix kt = kcf::assemble_k_tilde(kxx, kxu, r.ku, pair.h, 1);
  const Matrix m = kcf::assemble_block(r.candidate.p, r.candidate.p * kt, r.lambda * r.candidate.p);
  EXPECT_GE(oracle::min_eig(m), -1e-8);
  // The certificate contracts the decoded state: x+^T Q x+ <= lambda x^T Q x on the lifted dynamics.
  const Matrix a2 = kt.topLeftCorner(2, 2);
  const Matrix q = r.candidate.q;
  EXPECT_GE(oracle::min_eig(r.lambda * q - a2.transpose() * q * a2), -1e-8);
}

TEST(Synthesis, JsonRoundTrip) {
  const kcf::BilinearKoopmanModel model{scalar(1.1), scalar(1.0), kcf::SelectionMatrix::identity(1),
                                        kcf::identity_map(1), {}};
  const auto pair = pair_with(scalar(1.0), model.selection);
  kcf::Rng rng(4);
  const auto r = kcf::synthesize(model, pair, {}, rng);
  ASSERT_EQ(r.status, kcf::SynthesisStatus::optimal);
  const auto back = kcf::synthesis_from_json(kcf::Json::parse(kcf::synthesis_to_json(r).dump()));
  EXPECT_EQ(back.status, r.status);
  EXPECT_EQ(back.lambda, r.lambda);
  EXPECT_EQ(back.ku, r.ku);
  EXPECT_EQ(back.candidate.p, r.candidate.p);
  EXPECT_EQ(back.log.size(), r.log.size());
  EXPECT_THROW(kcf::status_from_string("maybe"), kcf::ConfigError);
}
