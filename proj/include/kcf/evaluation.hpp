#pragma once

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <future>
#include <optional>
#include <string>
#include <vector>

#include "kcf/babbling.hpp"
#include "kcf/edmd.hpp"
#include "kcf/factorization.hpp"
#include "kcf/io.hpp"
#include "kcf/lmi.hpp"
#include "kcf/observables.hpp"
#include "kcf/plants.hpp"

namespace kcf {

struct EvaluationOptions {
  double horizon_s = 20.0;
  double dt = 0.01;
  double settle_tol = 0.05;
  /// Saturate the feedback to the plant bounds.
  bool clip = true;
  unsigned jobs = 1;

  int steps() const { return static_cast<int>(std::lround(horizon_s / dt)); }
};

/// Quadratic V(x) = psi(x)^T P psi(x) and the rate it should contract by.
struct LyapunovSpec {
  Matrix p;
  double lambda = 1.0;
  ObservableMap map_x;
};

struct TrajectoryRecord {
  std::size_t id = 0;
  Vector initial;
  Vector final_state;
  bool converged = false;
  bool failed = false;
  double max_abs_u = 0.0;
  std::optional<double> settling_time;
  std::optional<double> decrease_fraction;
  Trajectory controlled;
  Trajectory uncontrolled;
  bool uncontrolled_diverged = false;
};

struct EvaluationReport {
  std::vector<TrajectoryRecord> records;
  double success_rate = 0.0;
  std::optional<double> median_settling_time;
  double horizon_s = 0.0;
  double dt = 0.0;
  double settle_tol = 0.0;
  bool clipped = true;
  std::optional<double> lambda;

  std::size_t converged() const {
    return static_cast<std::size_t>(
        std::count_if(records.begin(), records.end(), [](const auto& r) { return r.converged; }));
  }
};

inline double inf_norm(const Vector& v) { return v.size() == 0 ? 0.0 : v.lpNorm<Eigen::Infinity>(); }

/// First time after which the state stays within tol until the end; nullopt if it never does.
inline std::optional<double> settling_time(const Trajectory& traj, double tol, double dt) {
  if (traj.failed || traj.states.empty()) return std::nullopt;
  std::size_t k = traj.states.size();
  while (k > 0 && inf_norm(traj.states[k - 1]) <= tol) --k;
  if (k == traj.states.size()) return std::nullopt;
  return static_cast<double>(k) * dt;
}

struct LyapunovTrace {
  std::vector<double> values;
  double decrease_fraction = 1.0;
};

/// V_k along a state trajectory; a step counts as decreasing when V_{k+1} <= lambda V_k + slack.
inline LyapunovTrace lyapunov_trace(const LyapunovSpec& spec, const std::vector<Vector>& states,
                                    double slack = 0.0) {
  LyapunovTrace out;
  for (const auto& x : states) {
    const Vector psi = spec.map_x.evaluate(x);
    out.values.push_back(psi.dot(spec.p * psi));
  }
  if (out.values.size() < 2) return out;
  std::size_t ok = 0;
  for (std::size_t k = 0; k + 1 < out.values.size(); ++k) {
    if (out.values[k + 1] <= spec.lambda * out.values[k] + slack) ++ok;
  }
  out.decrease_fraction = static_cast<double>(ok) / static_cast<double>(out.values.size() - 1);
  return out;
}

inline Controller feature_feedback(const ObservableMap& map_u, const Matrix& ku) {
  if (ku.cols() != map_u.dim()) {
    throw DimensionError("feature_feedback: K_u has " + std::to_string(ku.cols()) +
                         " columns but psi_u has " + std::to_string(map_u.dim()) + " features");
  }
  return [map_u, ku](const Vector& x) -> Vector { return ku * map_u.evaluate(x); };
}

/// Rolls out u = K_u psi_u(x) and its uncontrolled twin (u = 0) from every initial state.
inline EvaluationReport evaluate_closed_loop(const ControlAffinePlant& plant, const ObservableMap& map_u,
                                             const Matrix& ku, const std::vector<Vector>& initial_states,
                                             const EvaluationOptions& opt,
                                             const std::optional<LyapunovSpec>& lyap = std::nullopt) {
  if (ku.rows() != plant.input_dim()) throw DimensionError("evaluate_closed_loop: K_u rows != d_u");
  IntegratorConfig{opt.dt, opt.steps()}.validate();
  if (!(opt.settle_tol > 0.0)) throw ConfigError("evaluate_closed_loop: settle_tol must be > 0");
  const Controller ctrl = feature_feedback(map_u, ku);
  const InputBounds free = InputBounds::unbounded(plant.input_dim());
  const InputBounds* bounds = opt.clip ? nullptr : &free;
  const Controller zero = [du = plant.input_dim()](const Vector&) -> Vector { return Vector::Zero(du); };

  auto one = [&](std::size_t i) {
    TrajectoryRecord rec;
    rec.id = i;
    rec.initial = initial_states[i];
    rec.controlled = rollout(plant, rec.initial, ctrl, opt.steps(), opt.dt, bounds);
    rec.uncontrolled = rollout(plant, rec.initial, zero, opt.steps(), opt.dt);
    rec.failed = rec.controlled.failed;
    rec.final_state = rec.controlled.states.back();
    rec.converged = !rec.failed && inf_norm(rec.final_state) <= opt.settle_tol;
    for (const auto& u : rec.controlled.inputs) rec.max_abs_u = std::max(rec.max_abs_u, inf_norm(u));
    rec.settling_time = rec.converged ? settling_time(rec.controlled, opt.settle_tol, opt.dt) : std::nullopt;
    if (rec.converged && !rec.settling_time) rec.settling_time = 0.0;
    rec.uncontrolled_diverged = rec.uncontrolled.failed ||
                                inf_norm(rec.uncontrolled.states.back()) > inf_norm(rec.initial);
    if (lyap) rec.decrease_fraction = lyapunov_trace(*lyap, rec.controlled.states).decrease_fraction;
    return rec;
  };

  EvaluationReport rep;
  rep.records.resize(initial_states.size());
  const unsigned jobs = std::max(1u, opt.jobs);
  for (std::size_t start = 0; start < initial_states.size(); start += jobs) {
    std::vector<std::future<TrajectoryRecord>> batch;
    const std::size_t stop = std::min(initial_states.size(), start + jobs);
    for (std::size_t i = start; i < stop; ++i) batch.push_back(std::async(std::launch::async, one, i));
    for (std::size_t i = start; i < stop; ++i) rep.records[i] = batch[i - start].get();
  }

  rep.horizon_s = opt.horizon_s;
  rep.dt = opt.dt;
  rep.settle_tol = opt.settle_tol;
  rep.clipped = opt.clip;
  if (lyap) rep.lambda = lyap->lambda;
  if (!rep.records.empty()) {
    rep.success_rate = static_cast<double>(rep.converged()) / static_cast<double>(rep.records.size());
  }
  std::vector<double> times;
  for (const auto& r : rep.records) {
    if (r.settling_time) times.push_back(*r.settling_time);
  }
  if (!times.empty()) {
    std::sort(times.begin(), times.end());
    const std::size_t h = times.size() / 2;
    rep.median_settling_time = times.size() % 2 ? times[h] : 0.5 * (times[h - 1] + times[h]);
  }
  return rep;
}

struct FidelityMetrics {
  /// Mean and max over initial states of ||A_dec K~^k psi(x0) - x(k)||_2, k = 1..steps.
  std::vector<double> mean_error;
  std::vector<double> max_error;
  double one_step_mse = 0.0;
};

/// Lifted closed-loop prediction against the true plant under the same feedback.
inline FidelityMetrics lifted_vs_true(const BilinearKoopmanModel& model, const FactorizationPair& pair,
                                      const Matrix& ku, const ControlAffinePlant& plant,
                                      const ObservableMap& map_u, const std::vector<Vector>& initial_states,
                                      int steps, double dt, bool clip = false) {
  if (steps < 1) throw ConfigError("lifted_vs_true: steps must be >= 1");
  const Matrix kt = closed_loop(model, pair, ku).k_tilde;
  const Matrix dec = decoding_operator(model.map_x);
  const Controller ctrl = feature_feedback(map_u, ku);
  const InputBounds free = InputBounds::unbounded(plant.input_dim());
  FidelityMetrics out;
  out.mean_error.assign(static_cast<std::size_t>(steps), 0.0);
  out.max_error.assign(static_cast<std::size_t>(steps), 0.0);
  double one_step = 0.0;
  std::size_t one_step_count = 0;
  for (const auto& x0 : initial_states) {
    const Trajectory truth = rollout(plant, x0, ctrl, steps, dt, clip ? nullptr : &free);
    Vector psi = model.map_x.evaluate(x0);
    for (int k = 1; k <= steps; ++k) {
      psi = kt * psi;
      const auto kk = static_cast<std::size_t>(k);
      const double err = kk < truth.states.size() && !truth.failed
                             ? (dec * psi - truth.states[kk]).norm()
                             : std::numeric_limits<double>::infinity();
      out.mean_error[kk - 1] += err / static_cast<double>(initial_states.size());
      out.max_error[kk - 1] = std::max(out.max_error[kk - 1], err);
    }
    for (std::size_t k = 0; k + 1 < truth.states.size(); ++k) {
      const Vector pred = kt * model.map_x.evaluate(truth.states[k]);
      one_step += (pred - model.map_x.evaluate(truth.states[k + 1])).squaredNorm();
      one_step_count += static_cast<std::size_t>(pred.size());
    }
  }
  out.one_step_mse = one_step_count ? one_step / static_cast<double>(one_step_count) : 0.0;
  return out;
}

struct LiftedCertificateCheck {
  /// max_k (V_{k+1} - lambda V_k) / (||psi_{k+1}||^2 + ||psi_k||^2)
  double max_normalized_slack = -std::numeric_limits<double>::infinity();
  /// max_k ||x(k)||_Q / (sqrt(lambda)^k ||x(0)||_Q)
  double max_envelope_ratio = 0.0;
};

/// Rolls psi+ = K~ psi forward and measures the Lyapunov decrease and the energy-norm envelope.
inline LiftedCertificateCheck check_lifted_certificate(const Matrix& k_tilde, const LyapunovCandidate& cand,
                                                       double lambda, const Vector& psi0, int steps) {
  const Index dx = cand.q.rows();
  LiftedCertificateCheck out;
  auto energy = [&](const Vector& psi) {
    const Vector x = psi.head(dx);
    return std::sqrt(std::max(0.0, x.dot(cand.q * x)));
  };
  const double e0 = energy(psi0);
  const double rate = std::sqrt(lambda);
  Vector psi = psi0;
  double v = psi.dot(cand.p * psi);
  double envelope = 1.0;
  for (int k = 1; k <= steps; ++k) {
    const Vector next = k_tilde * psi;
    const double v_next = next.dot(cand.p * next);
    const double denom = next.squaredNorm() + psi.squaredNorm();
    if (denom > 0.0) {
      out.max_normalized_slack = std::max(out.max_normalized_slack, (v_next - lambda * v) / denom);
    }
    envelope *= rate;
    const double bound = envelope * e0;
    const double e = energy(next);
    if (bound > 0.0) {
      out.max_envelope_ratio = std::max(out.max_envelope_ratio, e / bound);
    } else if (e > 0.0) {
      out.max_envelope_ratio = std::numeric_limits<double>::infinity();
    }
    psi = next;
    v = v_next;
  }
  return out;
}

/// Low-discrepancy points in a box: midpoints along the first axis, radical inverses in
/// bases 2, 3, 5, ... along the others.
inline std::vector<Vector> spread_initial_states(const std::vector<Interval>& box, std::size_t n) {
  static constexpr int kPrimes[] = {2, 3, 5, 7, 11, 13, 17, 19};
  if (box.size() > std::size(kPrimes)) throw ConfigError("spread_initial_states: too many dimensions");
  std::vector<Vector> out;
  for (std::size_t i = 0; i < n; ++i) {
    Vector x(static_cast<Index>(box.size()));
    for (std::size_t d = 0; d < box.size(); ++d) {
      double frac = 0.0;
      if (d == 0) {
        frac = (static_cast<double>(i) + 0.5) / static_cast<double>(n);
      } else {
        const int b = kPrimes[d - 1];
        double f = 1.0;
        for (std::size_t k = i + 1; k > 0; k /= static_cast<std::size_t>(b)) {
          f /= b;
          frac += f * static_cast<double>(k % static_cast<std::size_t>(b));
        }
      }
      x(static_cast<Index>(d)) = box[d].lo + frac * (box[d].hi - box[d].lo);
    }
    out.push_back(std::move(x));
  }
  return out;
}

inline Json report_to_json(const EvaluationReport& rep) {
  Json trajs = Json::array();
  for (const auto& r : rep.records) {
    trajs.push_back(Json{{"id", r.id},
                         {"initial", vector_to_json(r.initial)},
                         {"final", vector_to_json(r.final_state)},
                         {"converged", r.converged},
                         {"failed", r.failed},
                         {"max_abs_u", r.max_abs_u},
                         {"settling_time", r.settling_time ? Json(*r.settling_time) : Json(nullptr)},
                         {"lyapunov_decrease_fraction",
                          r.decrease_fraction ? Json(*r.decrease_fraction) : Json(nullptr)},
                         {"uncontrolled_final", vector_to_json(r.uncontrolled.states.back())},
                         {"uncontrolled_diverged", r.uncontrolled_diverged}});
  }
  return Json{{"success_rate", rep.success_rate},
              {"converged", rep.converged()},
              {"trajectories", rep.records.size()},
              {"median_settling_time",
               rep.median_settling_time ? Json(*rep.median_settling_time) : Json(nullptr)},
              {"horizon_s", rep.horizon_s},
              {"dt", rep.dt},
              {"settle_tol", rep.settle_tol},
              {"clipped", rep.clipped},
              {"lambda", rep.lambda ? Json(*rep.lambda) : Json(nullptr)},
              {"records", trajs}};
}

namespace detail {

inline void write_phase(std::ostream& os, const EvaluationReport& rep, bool controlled,
                        const std::vector<std::string>& labels) {
  os << "id,k," << labels.at(0) << ',' << labels.at(1) << '\n';
  for (const auto& r : rep.records) {
    const auto& t = controlled ? r.controlled : r.uncontrolled;
    for (std::size_t k = 0; k < t.states.size(); ++k) {
      os << r.id << ',' << k << ',' << format_double(t.states[k](0)) << ','
         << format_double(t.states[k](1)) << '\n';
    }
  }
}

inline void write_response(std::ostream& os, const EvaluationReport& rep, bool controlled,
                           const std::vector<std::string>& labels) {
  os << "id,t";
  for (const auto& l : labels) os << ',' << l;
  os << '\n';
  for (const auto& r : rep.records) {
    const auto& t = controlled ? r.controlled : r.uncontrolled;
    for (std::size_t k = 0; k < t.states.size(); ++k) {
      os << r.id << ',' << format_double(static_cast<double>(k) * rep.dt);
      for (Index i = 0; i < t.states[k].size(); ++i) os << ',' << format_double(t.states[k](i));
      os << '\n';
    }
  }
}

}  // namespace detail

/// Writes phase_{controlled,uncontrolled}.csv and response_{controlled,uncontrolled}.csv.
inline std::vector<std::filesystem::path> export_plot_data(const EvaluationReport& rep,
                                                           const std::filesystem::path& dir,
                                                           const std::vector<std::string>& state_labels,
                                                           const std::string& comment = "") {
  if (state_labels.size() < 2) throw DimensionError("export_plot_data: need at least two state labels");
  std::filesystem::create_directories(dir);
  std::vector<std::filesystem::path> written;
  for (bool controlled : {true, false}) {
    const std::string suffix = controlled ? "controlled" : "uncontrolled";
    for (bool phase : {true, false}) {
      const auto path = dir / ((phase ? "phase_" : "response_") + suffix + ".csv");
      std::ofstream os(path);
      if (!os) throw std::runtime_error("cannot open " + path.string() + " for writing");
      if (!comment.empty()) os << "# " << comment << '\n';
      if (phase) {
        detail::write_phase(os, rep, controlled, state_labels);
      } else {
        detail::write_response(os, rep, controlled, state_labels);
      }
      if (!os) throw std::runtime_error("write failed: " + path.string());
      written.push_back(path);
    }
  }
  return written;
}

}  // namespace kcf
