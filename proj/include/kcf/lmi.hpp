#pragma once

#include <cmath>
#include <functional>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include "kcf/babbling.hpp"
#include "kcf/edmd.hpp"
#include "kcf/errors.hpp"
#include "kcf/factorization.hpp"
#include "kcf/io.hpp"
#include "kcf/tensor_algebra.hpp"

namespace kcf {

/// lambda P - A^T P A; PSD iff A^T P A <= lambda P.
inline SymmetricMatrix lyapunov_residual(const Matrix& a, const Matrix& p, double lambda) {
  if (a.rows() != a.cols() || p.rows() != a.rows() || p.cols() != a.cols()) {
    throw DimensionError("lyapunov_residual: A " + shape_string(a.rows(), a.cols()) + ", P " +
                         shape_string(p.rows(), p.cols()));
  }
  return SymmetricMatrix(lambda * p - a.transpose() * p * a);
}

enum class CandidateKind { identity_start, sampled };

inline const char* to_string(CandidateKind k) {
  return k == CandidateKind::identity_start ? "identity-start" : "sampled";
}

/// P = A_dec^T Q A_dec with Q = R^T R + eps_p I (Q = I for the identity start).
struct LyapunovCandidate {
  Matrix p;
  Matrix q;
  Matrix r;
  double eps_p = 0.0;
  CandidateKind kind = CandidateKind::sampled;
};

inline Matrix lift_candidate(const Matrix& q, Index lifted_dim) {
  const Index n = q.rows();
  if (n > lifted_dim) throw DimensionError("lift_candidate: Q larger than the lifted space");
  Matrix p = Matrix::Zero(lifted_dim, lifted_dim);
  p.topLeftCorner(n, n) = q;
  return p;
}

inline LyapunovCandidate identity_candidate(Index state_dim, Index lifted_dim) {
  LyapunovCandidate c;
  c.q = Matrix::Identity(state_dim, state_dim);
  c.r = Matrix::Zero(state_dim, state_dim);
  c.p = lift_candidate(c.q, lifted_dim);
  c.kind = CandidateKind::identity_start;
  return c;
}

inline LyapunovCandidate sample_candidate(Index state_dim, Index lifted_dim, double eps_p, Rng& rng) {
  if (!(eps_p > 0.0)) throw ConfigError("sample_candidate: eps_p must be > 0");
  LyapunovCandidate c;
  c.r = rng.uniform_matrix(state_dim, state_dim, -1.0, 1.0);
  c.q = c.r.transpose() * c.r + eps_p * Matrix::Identity(state_dim, state_dim);
  c.p = lift_candidate(c.q, lifted_dim);
  c.eps_p = eps_p;
  c.kind = CandidateKind::sampled;
  return c;
}

/// M(K_u, lambda) = [[P, P K~], [K~^T P, lambda P]] with K~ affine in K_u.
class LmiProblem {
 public:
  LmiProblem(Matrix p, Matrix kxx, Matrix kxu, Matrix h, Index selected, Index input_dim)
      : p_(std::move(p)), kxx_(std::move(kxx)), kxu_(std::move(kxu)), h_(std::move(h)),
        selected_(selected), input_dim_(input_dim) {
    const Index d = kxx_.rows();
    if (selected_ <= 0 || input_dim_ <= 0) throw DimensionError("LmiProblem: empty selection or input");
    if (kxx_.cols() != d || p_.rows() != d || p_.cols() != d || kxu_.rows() != d ||
        kxu_.cols() != selected_ * input_dim_ || h_.cols() != d || h_.rows() % selected_ != 0) {
      throw DimensionError("LmiProblem: inconsistent shapes");
    }
    feature_dim_ = h_.rows() / selected_;
    for (Index c = 0; c < feature_dim_; ++c) {
      for (Index r = 0; r < input_dim_; ++r) {
        Matrix b = Matrix::Zero(d, d);
        for (Index s = 0; s < selected_; ++s) {
          b.noalias() += kxu_.col(s * input_dim_ + r) * h_.row(s * feature_dim_ + c);
        }
        pb_.push_back(p_ * b);
      }
    }
  }

  static LmiProblem from_model(const Matrix& p, const BilinearKoopmanModel& model,
                               const FactorizationPair& pair) {
    return LmiProblem(p, model.kxx, model.kxu, pair.h, pair.selected(), model.input_dim());
  }

  Index lifted_dim() const { return kxx_.rows(); }
  Index input_dim() const { return input_dim_; }
  Index feature_dim() const { return feature_dim_; }
  Index num_gain_entries() const { return input_dim_ * feature_dim_; }
  const Matrix& p() const { return p_; }

  Matrix k_tilde(const Matrix& ku) const { return assemble_k_tilde(kxx_, kxu_, ku, h_, selected_); }

  Matrix assemble(const Matrix& ku, double lambda) const {
    return assemble_block(p_, p_ * k_tilde(ku), lambda * p_);
  }

  double min_eig(const Matrix& ku, double lambda) const { return min_eigenvalue(assemble(ku, lambda)); }

  /// P B_k for the k-th entry of K_u in column-major order.
  const Matrix& gain_direction(Index k) const { return pb_[static_cast<std::size_t>(k)]; }

 private:
  Matrix p_, kxx_, kxu_, h_;
  Index selected_;
  Index input_dim_;
  Index feature_dim_ = 0;
  std::vector<Matrix> pb_;
};

struct InnerResult {
  bool feasible = false;
  Matrix ku;
  double min_eig = -std::numeric_limits<double>::infinity();
  /// Upper bound on max_{K_u} min eig M(K_u, lambda) when infeasibility was proven.
  double upper_bound = std::numeric_limits<double>::infinity();
  int iterations = 0;
};

/// Decides whether max_{K_u} min eig M(K_u, lambda) >= -tol.
using InnerSolver =
    std::function<InnerResult(const LmiProblem&, double lambda, const Matrix& warm_ku, double tol)>;

struct BarrierOptions {
  double tau0 = 1.0;
  double tau_growth = 10.0;
  double tau_max = 1e14;
  int max_newton = 800;
  int max_newton_per_stage = 60;
  double centering_tol = 1e-9;
};

/// Path-following barrier method on (vec K_u, t): maximize t subject to M(K_u, lambda) - t I > 0.
inline InnerResult barrier_inner_solve(const LmiProblem& prob, double lambda, const Matrix& warm_ku,
                                       double tol, const BarrierOptions& opt = {}) {
  const Index d = prob.lifted_dim();
  const Index n = 2 * d;
  const Index m = prob.num_gain_entries();
  const Index nv = m + 1;
  if (warm_ku.rows() != prob.input_dim() || warm_ku.cols() != prob.feature_dim()) {
    throw DimensionError("barrier_inner_solve: warm start has the wrong shape");
  }

  std::vector<Matrix> dirs;
  dirs.reserve(static_cast<std::size_t>(nv));
  for (Index k = 0; k < m; ++k) {
    Matrix a = Matrix::Zero(n, n);
    a.topRightCorner(d, d) = prob.gain_direction(k);
    a.bottomLeftCorner(d, d) = prob.gain_direction(k).transpose();
    dirs.push_back(std::move(a));
  }
  dirs.push_back(-Matrix::Identity(n, n));

  const Matrix m_zero = prob.assemble(Matrix::Zero(prob.input_dim(), prob.feature_dim()), lambda);
  auto ku_of = [&](const Vector& y) {
    return Matrix(Eigen::Map<const Matrix>(y.data(), prob.input_dim(), prob.feature_dim()));
  };
  auto f_of = [&](const Vector& y) {
    Matrix f = m_zero;
    for (Index k = 0; k < nv; ++k) {
      if (y(k) != 0.0) f.noalias() += y(k) * dirs[static_cast<std::size_t>(k)];
    }
    return f;
  };

  InnerResult out;
  Vector y(nv);
  y.head(m) = Eigen::Map<const Vector>(warm_ku.data(), m);
  const double start_eig = prob.min_eig(warm_ku, lambda);
  out.ku = warm_ku;
  out.min_eig = start_eig;
  if (start_eig >= -0.1 * tol) {
    out.feasible = true;
    return out;
  }
  y(m) = start_eig - std::max(1.0, std::abs(start_eig));

  const double target = -0.1 * tol;
  double tau = opt.tau0;
  auto phi = [&](const Vector& v, bool& ok) {
    Eigen::LLT<Matrix> llt(f_of(v));
    ok = llt.info() == Eigen::Success;
    if (!ok) return std::numeric_limits<double>::infinity();
    const Matrix& l = llt.matrixLLT();
    double logdet = 0.0;
    for (Index i = 0; i < n; ++i) {
      const double li = l(i, i);
      if (!(li > 0.0)) {
        ok = false;
        return std::numeric_limits<double>::infinity();
      }
      logdet += 2.0 * std::log(li);
    }
    return -tau * v(m) - logdet;
  };

  auto record = [&](const Vector& v) {
    const Matrix ku = ku_of(v);
    const double e = prob.min_eig(ku, lambda);
    if (e > out.min_eig) {
      out.min_eig = e;
      out.ku = ku;
    }
    return e;
  };

  std::vector<Matrix> w(static_cast<std::size_t>(nv));
  Matrix hess(nv, nv);
  Vector grad(nv);
  while (out.iterations < opt.max_newton) {
    bool centered = false;
    for (int it = 0; it < opt.max_newton_per_stage && out.iterations < opt.max_newton; ++it) {
      ++out.iterations;
      Eigen::LLT<Matrix> llt(f_of(y));
      if (llt.info() != Eigen::Success) break;
      const auto l = llt.matrixL();
      for (Index k = 0; k < nv; ++k) {
        Matrix x = l.solve(dirs[static_cast<std::size_t>(k)]);
        w[static_cast<std::size_t>(k)] = l.solve(x.transpose());
      }
      for (Index k = 0; k < nv; ++k) {
        const auto& wk = w[static_cast<std::size_t>(k)];
        grad(k) = -wk.trace();
        for (Index j = 0; j <= k; ++j) {
          hess(k, j) = hess(j, k) = (wk.array() * w[static_cast<std::size_t>(j)].array()).sum();
        }
      }
      grad(m) -= tau;

      Vector scale(nv);
      for (Index k = 0; k < nv; ++k) scale(k) = hess(k, k) > 0.0 ? 1.0 / std::sqrt(hess(k, k)) : 1.0;
      const Matrix hs = scale.asDiagonal() * hess * scale.asDiagonal();
      const Vector z = Eigen::CompleteOrthogonalDecomposition<Matrix>(hs).solve(-scale.cwiseProduct(grad));
      const Vector dy = scale.cwiseProduct(z);
      const double decrement = -grad.dot(dy);
      if (!std::isfinite(decrement) || decrement < 0.0) break;
      if (decrement / 2.0 <= opt.centering_tol) {
        centered = true;
        break;
      }

      bool ok = false;
      const double phi0 = phi(y, ok);
      double step = 1.0;
      bool moved = false;
      for (int bt = 0; bt < 60; ++bt, step *= 0.5) {
        const Vector trial = y + step * dy;
        const double phi1 = phi(trial, ok);
        if (ok && phi1 <= phi0 - 0.25 * step * decrement) {
          y = trial;
          moved = true;
          break;
        }
      }
      if (!moved) {
        centered = true;
        break;
      }
      if (y(m) >= target) {
        if (record(y) >= target) {
          out.feasible = true;
          return out;
        }
      }
    }

    if (record(y) >= target) {
      out.feasible = true;
      return out;
    }
    const double bound = y(m) + static_cast<double>(n) / tau;
    if (centered && bound < -tol) {
      out.upper_bound = bound;
      out.feasible = false;
      return out;
    }
    if (tau >= opt.tau_max) break;
    tau *= opt.tau_growth;
  }
  out.feasible = out.min_eig >= -tol;
  return out;
}

inline InnerSolver default_inner_solver(BarrierOptions opt = {}) {
  return [opt](const LmiProblem& prob, double lambda, const Matrix& warm, double tol) {
    return barrier_inner_solve(prob, lambda, warm, tol, opt);
  };
}

struct FixedPResult {
  bool feasible = false;
  double lambda = 1.0;
  Matrix ku;
  double min_eig = -std::numeric_limits<double>::infinity();
  /// Proven upper bound on the best min eigenvalue at lambda = 1 when infeasible.
  double upper_bound = std::numeric_limits<double>::infinity();
  int iterations = 0;
  int inner_solves = 0;
};

/// Bisection on lambda in [0, 1]; feasibility at lambda = 1 is checked first.
inline FixedPResult solve_fixed_p(const LmiProblem& prob, double lambda_tol = 1e-3,
                                  double feas_tol = 1e-8, const InnerSolver& inner = default_inner_solver(),
                                  std::optional<Matrix> warm = std::nullopt) {
  if (!(lambda_tol > 0.0) || !(feas_tol > 0.0)) throw ConfigError("solve_fixed_p: tolerances must be > 0");
  FixedPResult out;
  Matrix start = warm.value_or(Matrix::Zero(prob.input_dim(), prob.feature_dim()));
  auto run = [&](double lambda, const Matrix& w) {
    InnerResult r = inner(prob, lambda, w, feas_tol);
    out.iterations += r.iterations;
    ++out.inner_solves;
    return r;
  };

  InnerResult top = run(1.0, start);
  if (!top.feasible) {
    out.min_eig = top.min_eig;
    out.upper_bound = top.upper_bound;
    return out;
  }
  out.feasible = true;
  out.lambda = 1.0;
  out.ku = top.ku;
  out.min_eig = top.min_eig;

  double lo = 0.0;
  double hi = 1.0;
  while (hi - lo > lambda_tol) {
    const double mid = 0.5 * (lo + hi);
    InnerResult r = run(mid, out.ku);
    if (r.feasible) {
      hi = mid;
      out.ku = r.ku;
      out.min_eig = r.min_eig;
    } else {
      lo = mid;
    }
  }
  out.lambda = hi;
  return out;
}

enum class SynthesisStatus { optimal, infeasible, max_resamples_exceeded };

inline const char* to_string(SynthesisStatus s) {
  switch (s) {
    case SynthesisStatus::optimal: return "optimal";
    case SynthesisStatus::infeasible: return "infeasible";
    case SynthesisStatus::max_resamples_exceeded: return "max-resamples-exceeded";
  }
  return "unknown";
}

inline SynthesisStatus status_from_string(const std::string& s) {
  if (s == "optimal") return SynthesisStatus::optimal;
  if (s == "infeasible") return SynthesisStatus::infeasible;
  if (s == "max-resamples-exceeded") return SynthesisStatus::max_resamples_exceeded;
  throw ConfigError("unknown synthesis status '" + s + "'");
}

struct SynthesisOptions {
  double eps_p = 1e-2;
  int max_resamples = 50;
  double lambda_tol = 1e-3;
  double feas_tol = 1e-8;
  /// Extra candidates tried after the first success, keeping the smallest lambda*.
  int rate_budget = 0;
};

struct CandidateLog {
  int index = 0;
  CandidateKind kind = CandidateKind::sampled;
  bool feasible_at_one = false;
  std::optional<double> lambda;
  double min_eig = 0.0;
  double upper_bound = std::numeric_limits<double>::infinity();
  int iterations = 0;
};

struct SynthesisResult {
  SynthesisStatus status = SynthesisStatus::max_resamples_exceeded;
  Matrix ku;
  double lambda = 1.0;
  LyapunovCandidate candidate;
  double min_eig = -std::numeric_limits<double>::infinity();
  int iterations = 0;
  int resamples = 0;
  std::vector<CandidateLog> log;
};

/// Identity candidate first, then up to max_resamples sampled candidates, until lambda* < 1.
inline SynthesisResult synthesize(const BilinearKoopmanModel& model, const FactorizationPair& pair,
                                  const SynthesisOptions& opt, Rng& rng,
                                  const InnerSolver& inner = default_inner_solver()) {
  if (opt.max_resamples < 0 || opt.rate_budget < 0) throw ConfigError("synthesize: negative budget");
  if (!(opt.eps_p > 0.0)) throw ConfigError("synthesize: eps_p must be > 0");
  const Index dx = model.map_x.state_dim();
  const Index d = model.lifted_dim();
  if (!model.map_x.has_state_prefix()) {
    throw ConfigError("synthesize: observable map must lead with the state");
  }
  SynthesisResult best;
  bool found = false;
  int extra = 0;
  for (int c = 0; c <= opt.max_resamples; ++c) {
    LyapunovCandidate cand = c == 0 ? identity_candidate(dx, d) : sample_candidate(dx, d, opt.eps_p, rng);
    if (c > 0) best.resamples = c;
    const LmiProblem prob = LmiProblem::from_model(cand.p, model, pair);
    const FixedPResult r = solve_fixed_p(prob, opt.lambda_tol, opt.feas_tol, inner);
    best.iterations += r.iterations;
    CandidateLog entry{c, cand.kind, r.feasible, std::nullopt, r.min_eig, r.upper_bound, r.iterations};
    if (r.feasible) entry.lambda = r.lambda;
    best.log.push_back(entry);
    if (r.feasible && r.lambda < 1.0 && (!found || r.lambda < best.lambda)) {
      best.status = SynthesisStatus::optimal;
      best.ku = r.ku;
      best.lambda = r.lambda;
      best.candidate = cand;
      best.min_eig = prob.min_eig(r.ku, r.lambda);
      found = true;
    }
    if (found && extra++ >= opt.rate_budget) break;
  }
  if (!found) {
    best.status = opt.max_resamples == 0 ? SynthesisStatus::infeasible
                                         : SynthesisStatus::max_resamples_exceeded;
  }
  return best;
}

inline double certified_rate(const SynthesisResult& r) {
  if (r.status != SynthesisStatus::optimal) {
    throw std::logic_error(std::string("certified_rate: synthesis status is ") + to_string(r.status));
  }
  return std::sqrt(r.lambda);
}

inline Json synthesis_to_json(const SynthesisResult& r) {
  Json log = Json::array();
  for (const auto& e : r.log) {
    log.push_back(Json{{"index", e.index},
                       {"kind", to_string(e.kind)},
                       {"feasible_at_one", e.feasible_at_one},
                       {"lambda", e.lambda ? Json(*e.lambda) : Json(nullptr)},
                       {"min_eig", e.min_eig},
                       {"upper_bound", std::isfinite(e.upper_bound) ? Json(e.upper_bound) : Json(nullptr)},
                       {"iterations", e.iterations}});
  }
  Json j{{"status", to_string(r.status)},
         {"lambda", r.lambda},
         {"rate", r.status == SynthesisStatus::optimal ? Json(std::sqrt(r.lambda)) : Json(nullptr)},
         {"diagnostics",
          {{"min_eig", r.min_eig}, {"iterations", r.iterations}, {"resamples", r.resamples}, {"candidates", log}}}};
  if (r.status == SynthesisStatus::optimal) {
    j["K_u"] = matrix_to_json(r.ku);
    j["P"] = matrix_to_json(r.candidate.p);
    j["Q"] = matrix_to_json(r.candidate.q);
    j["R"] = matrix_to_json(r.candidate.r);
    j["eps_p"] = r.candidate.eps_p;
    j["candidate"] = to_string(r.candidate.kind);
  }
  return j;
}

inline SynthesisResult synthesis_from_json(const Json& j) {
  SynthesisResult r;
  r.status = status_from_string(j.at("status").get<std::string>());
  r.lambda = j.at("lambda").get<double>();
  const auto& diag = j.at("diagnostics");
  r.min_eig = diag.at("min_eig").is_number() ? diag.at("min_eig").get<double>()
                                              : -std::numeric_limits<double>::infinity();
  r.iterations = diag.at("iterations").get<int>();
  r.resamples = diag.at("resamples").get<int>();
  for (const auto& e : diag.at("candidates")) {
    CandidateLog c;
    c.index = e.at("index").get<int>();
    c.kind = e.at("kind").get<std::string>() == "identity-start" ? CandidateKind::identity_start
                                                                 : CandidateKind::sampled;
    c.feasible_at_one = e.at("feasible_at_one").get<bool>();
    if (!e.at("lambda").is_null()) c.lambda = e.at("lambda").get<double>();
    c.min_eig = e.at("min_eig").is_number() ? e.at("min_eig").get<double>()
                                            : -std::numeric_limits<double>::infinity();
    if (e.at("upper_bound").is_number()) c.upper_bound = e.at("upper_bound").get<double>();
    c.iterations = e.at("iterations").get<int>();
    r.log.push_back(c);
  }
  if (r.status == SynthesisStatus::optimal) {
    r.ku = matrix_from_json(j.at("K_u"));
    r.candidate.p = matrix_from_json(j.at("P"));
    r.candidate.q = matrix_from_json(j.at("Q"));
    r.candidate.r = matrix_from_json(j.at("R"));
    r.candidate.eps_p = j.at("eps_p").get<double>();
    r.candidate.kind = j.at("candidate").get<std::string>() == "identity-start"
                           ? CandidateKind::identity_start
                           : CandidateKind::sampled;
  }
  return r;
}

}  // namespace kcf
