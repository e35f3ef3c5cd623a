#pragma once

#include <cmath>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "kcf/babbling.hpp"
#include "kcf/errors.hpp"
#include "kcf/io.hpp"
#include "kcf/observables.hpp"
#include "kcf/selection.hpp"
#include "kcf/tensor_algebra.hpp"

namespace kcf {

/// min_K ||outputs - K inputs||_F^2 + ridge ||K||_F^2, columns are samples.
struct RegressionProblem {
  Matrix inputs;
  Matrix outputs;
  double ridge = 0.0;
};

struct LeastSquaresResult {
  Matrix coefficients;
  Index rank = 0;
  bool rank_deficient = false;
  /// Fewer samples than regressors.
  bool underdetermined = false;
};

namespace detail {

/// Shared factorization of a design matrix (samples x regressors), reused across targets.
class LeastSquaresSolver {
 public:
  LeastSquaresSolver(const Matrix& design, double ridge) : ridge_(ridge), cols_(design.cols()) {
    if (ridge < 0.0 || !std::isfinite(ridge)) throw ConfigError("least squares: bad ridge");
    if (!design.allFinite()) throw NonFiniteError("least squares: non-finite regressors");
    cod_.compute(design);
    rank_ = cod_.rank();
    if (ridge_ > 0.0) {
      Matrix aug(design.rows() + cols_, cols_);
      aug.topRows(design.rows()) = design;
      aug.bottomRows(cols_) = std::sqrt(ridge_) * Matrix::Identity(cols_, cols_);
      qr_.compute(aug);
    }
  }

  Index rank() const { return rank_; }
  bool rank_deficient() const { return rank_ < cols_; }

  /// targets is samples x outputs; returns regressors x outputs.
  Matrix solve(const Matrix& targets) const {
    if (ridge_ > 0.0) {
      Matrix aug = Matrix::Zero(targets.rows() + cols_, targets.cols());
      aug.topRows(targets.rows()) = targets;
      return qr_.solve(aug);
    }
    // Minimum-norm solution when rank deficient.
    return cod_.solve(targets);
  }

 private:
  double ridge_;
  Index cols_;
  Index rank_ = 0;
  Eigen::CompleteOrthogonalDecomposition<Matrix> cod_;
  Eigen::HouseholderQR<Matrix> qr_;
};

}  // namespace detail

/// Solved with orthogonal factorizations of the data matrix; normal equations are never
/// formed.
inline LeastSquaresResult solve_least_squares(const RegressionProblem& prob) {
  if (prob.inputs.cols() != prob.outputs.cols()) {
    throw DimensionError("solve_least_squares: inputs and outputs have different sample counts");
  }
  if (prob.inputs.cols() < 1) throw DimensionError("solve_least_squares: no samples");
  detail::LeastSquaresSolver solver(prob.inputs.transpose(), prob.ridge);
  LeastSquaresResult r;
  r.coefficients = solver.solve(prob.outputs.transpose()).transpose();
  r.rank = solver.rank();
  r.rank_deficient = solver.rank_deficient();
  r.underdetermined = prob.inputs.cols() < prob.inputs.rows();
  return r;
}

/// Which trajectories are held out: evenly spaced so that about `fraction` of them are.
inline bool is_holdout(std::size_t trajectory, double fraction) {
  if (fraction <= 0.0) return false;
  const auto a = static_cast<long long>(std::floor(static_cast<double>(trajectory + 1) * fraction));
  const auto b = static_cast<long long>(std::floor(static_cast<double>(trajectory) * fraction));
  return a > b;
}

/// Input columns [psi(x_k); (S psi(x_k)) kron u_k], output columns psi(x_{k+1}).
/// `trajectories` restricts to a subset of dataset trajectories (all when empty).
inline RegressionProblem assemble_bilinear_regressors(const SnapshotDataset& data,
                                                      const ObservableMap& map_x,
                                                      const SelectionMatrix& s,
                                                      const std::vector<std::size_t>& trajectories = {}) {
  if (s.cols() != map_x.dim()) {
    throw DimensionError("assemble_bilinear_regressors: S has " + std::to_string(s.cols()) +
                         " columns but psi has " + std::to_string(map_x.dim()) + " features");
  }
  if (map_x.state_dim() != data.state_dim) {
    throw DimensionError("assemble_bilinear_regressors: map does not match dataset state");
  }
  std::vector<std::size_t> which = trajectories;
  if (which.empty()) {
    for (std::size_t i = 0; i < data.trajectories.size(); ++i) which.push_back(i);
  }
  std::size_t n = 0;
  for (auto t : which) n += data.trajectories.at(t).trajectory.steps();

  const Index d = map_x.dim();
  const Index du = data.input_dim;
  const Index bil = s.rows() * du;
  RegressionProblem prob;
  prob.inputs.resize(d + bil, static_cast<Index>(n));
  prob.outputs.resize(d, static_cast<Index>(n));
  Index col = 0;
  for (auto t : which) {
    const auto& traj = data.trajectories[t].trajectory;
    if (traj.steps() == 0) continue;
    Vector psi = map_x.evaluate(traj.states[0]);
    for (std::size_t k = 0; k < traj.steps(); ++k) {
      const Vector& u = traj.inputs[k];
      if (u.size() != du) throw DimensionError("assemble_bilinear_regressors: input size");
      Vector psi_next = map_x.evaluate(traj.states[k + 1]);
      prob.inputs.col(col).head(d) = psi;
      prob.inputs.col(col).tail(bil) = kron_vec(s.matrix() * psi, u);
      prob.outputs.col(col) = psi_next;
      psi = std::move(psi_next);
      ++col;
    }
  }
  if (!prob.inputs.allFinite() || !prob.outputs.allFinite()) {
    throw NonFiniteError("assemble_bilinear_regressors: non-finite lifted data");
  }
  return prob;
}

struct FitDiagnostics {
  double train_mse = 0.0;
  std::optional<double> holdout_mse;
  std::size_t train_snapshots = 0;
  std::size_t holdout_snapshots = 0;
  Index rank = 0;
  bool rank_deficient = false;
  double ridge = 0.0;
};

/// psi+ = K_xx psi + K_xu ((S psi) kron u).
struct BilinearKoopmanModel {
  Matrix kxx;
  Matrix kxu;
  SelectionMatrix selection;
  ObservableMap map_x;
  FitDiagnostics diagnostics;

  Index lifted_dim() const { return kxx.rows(); }
  Index input_dim() const { return selection.rows() == 0 ? 0 : kxu.cols() / selection.rows(); }

  Vector step(const Vector& psi, const Vector& u) const {
    return kxx * psi + kxu * kron_vec(selection.matrix() * psi, u);
  }

  Matrix system_matrix() const {
    Matrix k(kxx.rows(), kxx.cols() + kxu.cols());
    k << kxx, kxu;
    return k;
  }
};

inline double mean_squared_error(const Matrix& residual) {
  return residual.size() == 0 ? 0.0 : residual.squaredNorm() / static_cast<double>(residual.size());
}

/// Default ridge scaled with the number of training snapshots.
inline double default_ridge(std::size_t snapshots) { return 1e-8 * static_cast<double>(snapshots); }

/// Fits [K_xx K_xu] on the training trajectories; a `holdout_fraction` of whole trajectories
/// is kept aside for a one-step MSE. ridge = nullopt selects default_ridge.
inline BilinearKoopmanModel identify_model(const SnapshotDataset& data, const ObservableMap& map_x,
                                           const SelectionMatrix& s,
                                           std::optional<double> ridge = std::nullopt,
                                           double holdout_fraction = 0.1) {
  if (data.trajectories.empty() || data.num_snapshots() == 0) {
    throw DimensionError("identify_model: empty dataset");
  }
  if (holdout_fraction < 0.0 || holdout_fraction >= 1.0) {
    throw ConfigError("identify_model: holdout_fraction must be in [0, 1)");
  }
  std::vector<std::size_t> train, held;
  for (std::size_t i = 0; i < data.trajectories.size(); ++i) {
    (is_holdout(i, holdout_fraction) ? held : train).push_back(i);
  }
  if (train.empty()) std::swap(train, held);

  RegressionProblem prob = assemble_bilinear_regressors(data, map_x, s, train);
  const auto n_train = static_cast<std::size_t>(prob.inputs.cols());
  prob.ridge = ridge.value_or(default_ridge(n_train));
  const auto fit = solve_least_squares(prob);

  BilinearKoopmanModel model{fit.coefficients.leftCols(map_x.dim()),
                             fit.coefficients.rightCols(fit.coefficients.cols() - map_x.dim()), s,
                             map_x, {}};
  auto& diag = model.diagnostics;
  diag.train_mse = mean_squared_error(prob.outputs - fit.coefficients * prob.inputs);
  diag.train_snapshots = n_train;
  diag.rank = fit.rank;
  diag.rank_deficient = fit.rank_deficient;
  diag.ridge = prob.ridge;
  if (!held.empty()) {
    const auto test = assemble_bilinear_regressors(data, map_x, s, held);
    diag.holdout_mse = mean_squared_error(test.outputs - fit.coefficients * test.inputs);
    diag.holdout_snapshots = static_cast<std::size_t>(test.inputs.cols());
  }
  return model;
}

inline Json model_to_json(const BilinearKoopmanModel& m) {
  const auto& d = m.diagnostics;
  Json diag{{"train_mse", d.train_mse},
            {"holdout_mse", d.holdout_mse ? Json(*d.holdout_mse) : Json(nullptr)},
            {"train_snapshots", d.train_snapshots},
            {"holdout_snapshots", d.holdout_snapshots},
            {"rank", d.rank},
            {"rank_deficient", d.rank_deficient},
            {"ridge", d.ridge}};
  return Json{{"map_descriptor_hash", m.map_x.descriptor_hash()},
              {"map", m.map_x.descriptor()},
              {"S", matrix_to_json(m.selection.matrix())},
              {"K_xx", matrix_to_json(m.kxx)},
              {"K_xu", matrix_to_json(m.kxu)},
              {"diagnostics", diag}};
}

inline BilinearKoopmanModel model_from_json(const Json& j) {
  BilinearKoopmanModel m{matrix_from_json(j.at("K_xx")), matrix_from_json(j.at("K_xu")),
                         SelectionMatrix(matrix_from_json(j.at("S"))),
                         ObservableMap::from_descriptor(j.at("map")),
                         {}};
  if (m.map_x.descriptor_hash() != j.at("map_descriptor_hash").get<std::string>()) {
    throw ConfigError("model: observable map descriptor hash mismatch");
  }
  const auto& d = j.at("diagnostics");
  m.diagnostics.train_mse = d.at("train_mse").get<double>();
  if (!d.at("holdout_mse").is_null()) m.diagnostics.holdout_mse = d.at("holdout_mse").get<double>();
  m.diagnostics.train_snapshots = d.at("train_snapshots").get<std::size_t>();
  m.diagnostics.holdout_snapshots = d.at("holdout_snapshots").get<std::size_t>();
  m.diagnostics.rank = d.at("rank").get<Index>();
  m.diagnostics.rank_deficient = d.at("rank_deficient").get<bool>();
  m.diagnostics.ridge = d.at("ridge").get<double>();
  return m;
}

}  // namespace kcf
