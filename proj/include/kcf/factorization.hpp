#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include "kcf/babbling.hpp"
#include "kcf/edmd.hpp"
#include "kcf/errors.hpp"
#include "kcf/io.hpp"
#include "kcf/observables.hpp"
#include "kcf/selection.hpp"
#include "kcf/tensor_algebra.hpp"

namespace kcf {

/// Unthresholded candidate: block i regresses [psi_x]_i psi_u onto psi_x.
struct HbarFit {
  Matrix hbar;                   // (d_psi * d_psi_u) x d_psi
  std::vector<double> residuals;  // RMS over snapshots, one per block
  Index block_rows = 0;          // d_psi_u
  Index rank = 0;
  bool rank_deficient = false;
  double lifted_rms = 0.0;       // sqrt(mean ||psi_x kron psi_u||^2)
  std::size_t snapshots = 0;

  Index blocks() const { return static_cast<Index>(residuals.size()); }
  Matrix block(Index i) const { return row_block(hbar, i, block_rows); }
};

struct FactorizationPair {
  SelectionMatrix selection;
  Matrix h;                       // (d_S * d_psi_u) x d_psi
  std::vector<bool> mask;
  std::vector<double> residuals;
  double eps_h = 0.0;
  Index block_rows = 0;

  Index selected() const { return selection.rows(); }
};

/// Relative scale used for the default threshold.
inline constexpr double kDefaultEpsHRelative = 1e-6;

inline double default_eps_h(const HbarFit& fit) { return kDefaultEpsHRelative * fit.lifted_rms; }

/// Blocks share one factorization of the psi_x design matrix and are solved one at a time.
inline HbarFit fit_candidate_hbar(const std::vector<Vector>& states, const ObservableMap& map_x,
                                  const ObservableMap& map_u) {
  if (states.empty()) throw DimensionError("fit_candidate_hbar: no states");
  if (map_x.state_dim() != map_u.state_dim()) {
    throw DimensionError("fit_candidate_hbar: psi_x and psi_u act on different states");
  }
  const Matrix px = evaluate_batch(map_x, states);
  const Matrix pu = evaluate_batch(map_u, states);
  const Index d = px.rows();
  const Index du = pu.rows();
  const Index n = px.cols();

  const Matrix design = px.transpose();
  detail::LeastSquaresSolver solver(design, 0.0);

  HbarFit out;
  out.hbar.resize(d * du, d);
  out.block_rows = du;
  out.rank = solver.rank();
  out.rank_deficient = solver.rank_deficient();
  out.snapshots = static_cast<std::size_t>(n);

  double lifted_sq = 0.0;
  Matrix target(n, du);
  for (Index i = 0; i < d; ++i) {
    for (Index k = 0; k < n; ++k) target.row(k) = px(i, k) * pu.col(k).transpose();
    lifted_sq += target.squaredNorm();
    const Matrix coef = solver.solve(target);  // d x du
    out.hbar.middleRows(i * du, du) = coef.transpose();
    const double sq = (target - design * coef).squaredNorm();
    out.residuals.push_back(std::sqrt(sq / static_cast<double>(n)));
  }
  out.lifted_rms = std::sqrt(lifted_sq / static_cast<double>(n));
  return out;
}

inline HbarFit fit_candidate_hbar(const SnapshotDataset& data, const ObservableMap& map_x,
                                  const ObservableMap& map_u) {
  return fit_candidate_hbar(data.current_states(), map_x, map_u);
}

/// [H^(1); 0; H^(2); 0 ...]: retained blocks of H placed at their mask positions.
inline Matrix augmented_measurement(const std::vector<bool>& mask, const Matrix& h,
                                    Index block_rows) {
  const auto retained = static_cast<Index>(std::count(mask.begin(), mask.end(), true));
  if (h.rows() != retained * block_rows) {
    throw DimensionError("augmented_measurement: H has " + std::to_string(h.rows()) +
                         " rows, expected " + std::to_string(retained * block_rows));
  }
  Matrix out = Matrix::Zero(static_cast<Index>(mask.size()) * block_rows, h.cols());
  Index next = 0;
  for (std::size_t i = 0; i < mask.size(); ++i) {
    if (!mask[i]) continue;
    out.middleRows(static_cast<Index>(i) * block_rows, block_rows) =
        h.middleRows(next * block_rows, block_rows);
    ++next;
  }
  return out;
}

/// Keeps block i iff residual_i <= eps_h; S rows follow increasing block index.
inline FactorizationPair threshold_mask(const HbarFit& fit, double eps_h) {
  if (!(eps_h > 0.0) || std::isnan(eps_h)) throw ConfigError("threshold_mask: eps_h must be > 0");
  FactorizationPair pair;
  pair.eps_h = eps_h;
  pair.block_rows = fit.block_rows;
  pair.residuals = fit.residuals;
  std::vector<Index> kept;
  for (Index i = 0; i < fit.blocks(); ++i) {
    const bool keep = fit.residuals[static_cast<std::size_t>(i)] <= eps_h;
    pair.mask.push_back(keep);
    if (keep) kept.push_back(i);
  }
  if (kept.empty()) {
    throw EmptySelectionError("threshold_mask: no block has residual <= " + format_double(eps_h) +
                              " (smallest is " +
                              format_double(*std::min_element(fit.residuals.begin(),
                                                              fit.residuals.end())) +
                              ")");
  }
  pair.selection = SelectionMatrix::from_indices(kept, fit.blocks());
  pair.h.resize(static_cast<Index>(kept.size()) * fit.block_rows, fit.hbar.cols());
  for (std::size_t r = 0; r < kept.size(); ++r) {
    pair.h.middleRows(static_cast<Index>(r) * fit.block_rows, fit.block_rows) = fit.block(kept[r]);
  }
  return pair;
}

/// Fit, then threshold; eps_h = nullopt selects default_eps_h.
inline FactorizationPair factorize(const std::vector<Vector>& states, const ObservableMap& map_x,
                                   const ObservableMap& map_u,
                                   std::optional<double> eps_h = std::nullopt) {
  const auto fit = fit_candidate_hbar(states, map_x, map_u);
  return threshold_mask(fit, eps_h.value_or(default_eps_h(fit)));
}

/// max over states of ||(S psi_x) kron psi_u - H psi_x||_inf.
inline double verify_assumption1(const FactorizationPair& pair, const ObservableMap& map_x,
                                 const ObservableMap& map_u, const std::vector<Vector>& states) {
  if (pair.selection.cols() != map_x.dim() || pair.h.cols() != map_x.dim() ||
      pair.h.rows() != pair.selected() * map_u.dim()) {
    throw DimensionError("verify_assumption1: pair does not match the observable maps");
  }
  double worst = 0.0;
  for (const auto& x : states) {
    const Vector px = map_x.evaluate(x);
    const Vector lhs = kron_vec(pair.selection.apply(px), map_u.evaluate(x));
    const double r = (lhs - pair.h * px).lpNorm<Eigen::Infinity>();
    worst = std::isnan(r) ? std::numeric_limits<double>::infinity() : std::max(worst, r);
  }
  return worst;
}

/// K~ = K_xx + K_xu (I_{d_S} kron K_u) H.
inline Matrix assemble_k_tilde(const Matrix& kxx, const Matrix& kxu, const Matrix& ku,
                               const Matrix& h, Index selected) {
  const Index d = kxx.rows();
  if (kxx.cols() != d || kxu.rows() != d || h.cols() != d) {
    throw DimensionError("assemble_k_tilde: K_xx " + shape_string(kxx.rows(), kxx.cols()) +
                         ", K_xu " + shape_string(kxu.rows(), kxu.cols()) + ", H " +
                         shape_string(h.rows(), h.cols()));
  }
  if (kxu.cols() != selected * ku.rows() || h.rows() != selected * ku.cols()) {
    throw DimensionError("assemble_k_tilde: K_u " + shape_string(ku.rows(), ku.cols()) +
                         " incompatible with K_xu " + shape_string(kxu.rows(), kxu.cols()) +
                         " and H " + shape_string(h.rows(), h.cols()));
  }
  return kxx + kxu * kron(Matrix::Identity(selected, selected), ku) * h;
}

struct ClosedLoopOperator {
  Matrix k_tilde;
  Matrix kxx;
  Matrix kxu;
  Matrix ku;
  Matrix h;
  Index selected = 0;

  Matrix recompute() const { return assemble_k_tilde(kxx, kxu, ku, h, selected); }
};

inline ClosedLoopOperator closed_loop(const BilinearKoopmanModel& model,
                                      const FactorizationPair& pair, const Matrix& ku) {
  if (model.selection.matrix() != pair.selection.matrix()) {
    throw DimensionError("closed_loop: model and pair use different selection matrices");
  }
  ClosedLoopOperator op{{}, model.kxx, model.kxu, ku, pair.h, pair.selected()};
  op.k_tilde = op.recompute();
  return op;
}

inline Json pair_to_json(const FactorizationPair& p, const ObservableMap& map_x,
                         const ObservableMap& map_u) {
  Json mask = Json::array();
  for (bool b : p.mask) mask.push_back(b ? 1 : 0);
  return Json{{"map_x", map_x.descriptor()},
              {"map_u", map_u.descriptor()},
              {"eps_h", p.eps_h},
              {"block_rows", p.block_rows},
              {"mask", mask},
              {"residuals", p.residuals},
              {"S", matrix_to_json(p.selection.matrix())},
              {"H", matrix_to_json(p.h)}};
}

inline FactorizationPair pair_from_json(const Json& j) {
  FactorizationPair p;
  p.eps_h = j.at("eps_h").get<double>();
  p.block_rows = j.at("block_rows").get<Index>();
  for (const auto& m : j.at("mask")) p.mask.push_back(m.get<int>() != 0);
  p.residuals = j.at("residuals").get<std::vector<double>>();
  p.selection = SelectionMatrix(matrix_from_json(j.at("S")));
  p.h = matrix_from_json(j.at("H"));
  if (SelectionMatrix::from_mask(p.mask).matrix() != p.selection.matrix()) {
    throw ConfigError("factorization pair: mask and S disagree");
  }
  return p;
}

}  // namespace kcf
