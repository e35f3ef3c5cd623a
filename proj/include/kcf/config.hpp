#pragma once

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "kcf/babbling.hpp"
#include "kcf/errors.hpp"
#include "kcf/evaluation.hpp"
#include "kcf/io.hpp"
#include "kcf/lmi.hpp"
#include "kcf/observables.hpp"
#include "kcf/plants.hpp"

namespace kcf {

struct PlantConfig {
  std::string kind = "single_pendulum";
  SinglePendulumParams single;
  DoublePendulumParams dbl;
};

struct IdentificationConfig {
  std::optional<double> ridge;
  double holdout_fraction = 0.1;
};

struct FactorizationConfig {
  std::optional<double> eps_h;
  /// Fresh states for the pre-synthesis check of (S psi_x) kron psi_u = H psi_x.
  int gate_states = 1000;
  double gate_factor = 10.0;
};

/// How evaluation initial states are laid out.
///   spread: low-discrepancy points in `box`, `count` of them
///   grid:   tensor grid over `box` with `counts` points per axis (endpoints included)
///   list:   the explicit `states`
struct InitialStateSpec {
  std::string mode = "spread";
  std::vector<Interval> box;
  std::size_t count = 30;
  std::vector<Index> counts;
  std::vector<Vector> states;
};

struct EvaluationConfig {
  EvaluationOptions options;
  InitialStateSpec initial;
  /// Reported, never gated.
  std::vector<Vector> stress;
  double success_gate = 0.9;
  int lifted_steps = 50;
};

struct ExperimentConfig {
  std::string preset = "single";
  PlantConfig plant;
  Json map_x = "single_pendulum";
  Json map_u = "single_pendulum";
  BabblingConfig babbling;
  IdentificationConfig identification;
  FactorizationConfig factorization;
  SynthesisOptions synthesis;
  EvaluationConfig evaluation;
  std::uint64_t seed = 1;
  std::filesystem::path output_dir = "kcf_out";
  unsigned jobs = 1;

  std::uint64_t babbling_seed() const { return seed; }
  std::uint64_t synthesis_seed() const { return seed + 1; }
  std::uint64_t gate_seed() const { return seed + 2; }
};

namespace detail {

inline Json interval_to_json(const Interval& iv) { return Json::array({iv.lo, iv.hi}); }

inline Interval interval_from_json(const Json& j) {
  if (!j.is_array() || j.size() != 2) throw ConfigError("interval must be [lo, hi]");
  return {j[0].get<double>(), j[1].get<double>()};
}

inline Json intervals_to_json(const std::vector<Interval>& v) {
  Json a = Json::array();
  for (const auto& iv : v) a.push_back(interval_to_json(iv));
  return a;
}

inline std::vector<Interval> intervals_from_json(const Json& j) {
  std::vector<Interval> out;
  for (const auto& e : j) out.push_back(interval_from_json(e));
  return out;
}

inline Json states_to_json(const std::vector<Vector>& v) {
  Json a = Json::array();
  for (const auto& x : v) a.push_back(vector_to_json(x));
  return a;
}

inline std::vector<Vector> states_from_json(const Json& j) {
  std::vector<Vector> out;
  for (const auto& e : j) out.push_back(vector_from_json(e));
  return out;
}

inline Json optional_to_json(const std::optional<double>& v) { return v ? Json(*v) : Json(nullptr); }

inline std::optional<double> optional_from_json(const Json& j) {
  if (j.is_null()) return std::nullopt;
  return j.get<double>();
}

/// Rejects keys not in `allowed`; keys starting with '_' are comments.
inline void check_keys(const Json& j, const std::string& section, std::initializer_list<const char*> allowed) {
  if (!j.is_object()) throw ConfigError("config: '" + section + "' must be an object");
  for (auto it = j.begin(); it != j.end(); ++it) {
    if (!it.key().empty() && it.key()[0] == '_') continue;
    bool ok = false;
    for (const char* a : allowed) ok = ok || it.key() == a;
    if (!ok) throw ConfigError("config: unknown key '" + section + "." + it.key() + "'");
  }
}

}  // namespace detail

inline ExperimentConfig preset_config(const std::string& name) {
  ExperimentConfig c;
  c.preset = name;
  auto& b = c.babbling;
  auto& ev = c.evaluation;
  if (name == "single" || name == "single-full" || name == "smoke") {
    c.plant.kind = "single_pendulum";
    c.map_x = c.map_u = "single_pendulum";
    b.state_grid = {{-M_PI, M_PI}, {-6.0, 6.0}};
    b.num_gains = b.num_initial_conditions = name == "smoke" ? 50 : name == "single" ? 500 : 4000;
    ev.initial.box = {{-M_PI, M_PI}, {-9.0, 9.0}};
    ev.initial.count = name == "smoke" ? 5 : 30;
    ev.success_gate = name == "smoke" ? 0.0 : 0.9;
    if (name == "smoke") ev.options.horizon_s = 5.0;
    Vector showcase(2);
    showcase << M_PI / 2, -9.0;
    ev.stress = {showcase};
  } else if (name == "double") {
    c.plant.kind = "double_pendulum";
    c.map_x = c.map_u = "double_pendulum";
    b.state_grid = {{-M_PI, M_PI}, {-M_PI, M_PI}, {-6.0, 6.0}, {-6.0, 6.0}};
    b.num_gains = b.num_initial_conditions = 2000;
    const double half = M_PI / 9.0;
    ev.initial.mode = "grid";
    ev.initial.box = {{-M_PI / 2 - half, -M_PI / 2 + half}, {M_PI / 2 - half, M_PI / 2 + half}, {0, 0}, {0, 0}};
    ev.initial.counts = {6, 5, 1, 1};
    ev.success_gate = 0.8;
    Vector stress(4);
    stress << M_PI / 2, M_PI / 2, -9.0, -9.0;
    ev.stress = {stress};
  } else {
    throw ConfigError("unknown preset '" + name + "' (single, single-full, double, smoke)");
  }
  return c;
}

inline ControlAffinePlant make_plant(const PlantConfig& p) {
  if (p.kind == "single_pendulum") return single_pendulum(p.single);
  if (p.kind == "double_pendulum") return double_pendulum(p.dbl);
  throw ConfigError("unknown plant kind '" + p.kind + "'");
}

/// A map is a name (single_pendulum, double_pendulum, identity, monomial:<degree>) or a
/// full descriptor object.
inline ObservableMap resolve_map(const Json& spec, Index state_dim) {
  if (spec.is_object()) return ObservableMap::from_descriptor(spec);
  if (!spec.is_string()) throw ConfigError("observable map must be a name or a descriptor");
  const auto name = spec.get<std::string>();
  if (name == "single_pendulum") return single_pendulum_map();
  if (name == "double_pendulum") return double_pendulum_map();
  if (name == "identity") return identity_map(state_dim);
  if (name.rfind("monomial:", 0) == 0) return scalar_monomial_map(std::stoi(name.substr(9)));
  throw ConfigError("unknown observable map '" + name + "'");
}

inline std::vector<Vector> grid_states(const std::vector<Interval>& box, const std::vector<Index>& counts) {
  if (counts.size() != box.size()) throw ConfigError("grid: counts must match the box dimension");
  std::vector<Vector> out;
  std::vector<Index> idx(box.size(), 0);
  Index total = 1;
  for (Index c : counts) {
    if (c < 1) throw ConfigError("grid: counts must be >= 1");
    total *= c;
  }
  for (Index n = 0; n < total; ++n) {
    Vector x(static_cast<Index>(box.size()));
    for (std::size_t d = 0; d < box.size(); ++d) {
      const Index c = counts[d];
      const double frac = c == 1 ? 0.5 : static_cast<double>(idx[d]) / static_cast<double>(c - 1);
      x(static_cast<Index>(d)) = box[d].lo + frac * (box[d].hi - box[d].lo);
    }
    out.push_back(std::move(x));
    for (std::size_t d = 0; d < box.size(); ++d) {
      if (++idx[d] < counts[d]) break;
      idx[d] = 0;
    }
  }
  return out;
}

inline std::vector<Vector> initial_states(const InitialStateSpec& s) {
  if (s.mode == "spread") return spread_initial_states(s.box, s.count);
  if (s.mode == "grid") return grid_states(s.box, s.counts);
  if (s.mode == "list") return s.states;
  throw ConfigError("unknown initial-state mode '" + s.mode + "'");
}

inline Json plant_to_json(const PlantConfig& p) {
  if (p.kind == "single_pendulum") {
    const auto& s = p.single;
    return Json{{"kind", p.kind}, {"mass", s.mass}, {"length", s.length}, {"damping", s.damping},
                {"gravity", s.gravity}, {"input_limit", s.input_limit}};
  }
  const auto& d = p.dbl;
  return Json{{"kind", p.kind}, {"m1", d.m1}, {"m2", d.m2}, {"l1", d.l1}, {"l2", d.l2},
              {"gravity", d.gravity}, {"damping1", d.damping1}, {"damping2", d.damping2},
              {"input_limit", d.input_limit}};
}

inline Json config_to_json(const ExperimentConfig& c) {
  const auto& b = c.babbling;
  const auto& ev = c.evaluation;
  Json init{{"mode", ev.initial.mode},
            {"box", detail::intervals_to_json(ev.initial.box)},
            {"count", ev.initial.count},
            {"counts", ev.initial.counts},
            {"states", detail::states_to_json(ev.initial.states)}};
  return Json{
      {"preset", c.preset},
      {"seed", c.seed},
      {"output_dir", c.output_dir.string()},
      {"jobs", c.jobs},
      {"plant", plant_to_json(c.plant)},
      {"observables", {{"map_x", c.map_x}, {"map_u", c.map_u}}},
      {"babbling",
       {{"num_gains", b.num_gains},
        {"num_initial_conditions", b.num_initial_conditions},
        {"gain_scale", b.gain_scale},
        {"pairing", to_string(b.pairing)},
        {"state_grid", detail::intervals_to_json(b.state_grid)},
        {"grid_counts", b.grid_counts},
        {"input_bounds", detail::intervals_to_json(b.input_bounds)},
        {"steps", b.steps},
        {"dt", b.dt}}},
      {"identification",
       {{"ridge", detail::optional_to_json(c.identification.ridge)},
        {"holdout_fraction", c.identification.holdout_fraction}}},
      {"factorization",
       {{"eps_h", detail::optional_to_json(c.factorization.eps_h)},
        {"gate_states", c.factorization.gate_states},
        {"gate_factor", c.factorization.gate_factor}}},
      {"synthesis",
       {{"eps_p", c.synthesis.eps_p},
        {"max_resamples", c.synthesis.max_resamples},
        {"lambda_tol", c.synthesis.lambda_tol},
        {"feas_tol", c.synthesis.feas_tol},
        {"rate_budget", c.synthesis.rate_budget}}},
      {"evaluation",
       {{"horizon_s", ev.options.horizon_s},
        {"dt", ev.options.dt},
        {"settle_tol", ev.options.settle_tol},
        {"clip", ev.options.clip},
        {"success_gate", ev.success_gate},
        {"lifted_steps", ev.lifted_steps},
        {"initial_states", init},
        {"stress", detail::states_to_json(ev.stress)}}}};
}

/// Loads a config: the `preset` key (default "single") supplies defaults, other keys override.
inline ExperimentConfig config_from_json(const Json& j) {
  try {
    detail::check_keys(j, "config", {"preset", "seed", "output_dir", "jobs", "plant", "observables",
                                     "babbling", "identification", "factorization", "synthesis",
                                     "evaluation"});
    ExperimentConfig c = preset_config(j.value("preset", std::string("single")));
    c.seed = j.value("seed", c.seed);
    if (j.contains("output_dir")) c.output_dir = j.at("output_dir").get<std::string>();
    c.jobs = j.value("jobs", c.jobs);

    if (j.contains("plant")) {
      const auto& p = j.at("plant");
      c.plant.kind = p.value("kind", c.plant.kind);
      if (c.plant.kind == "single_pendulum") {
        detail::check_keys(p, "plant", {"kind", "mass", "length", "damping", "gravity", "input_limit"});
        auto& s = c.plant.single;
        s.mass = p.value("mass", s.mass);
        s.length = p.value("length", s.length);
        s.damping = p.value("damping", s.damping);
        s.gravity = p.value("gravity", s.gravity);
        s.input_limit = p.value("input_limit", s.input_limit);
      } else if (c.plant.kind == "double_pendulum") {
        detail::check_keys(p, "plant", {"kind", "m1", "m2", "l1", "l2", "gravity", "damping1",
                                        "damping2", "input_limit"});
        auto& d = c.plant.dbl;
        d.m1 = p.value("m1", d.m1);
        d.m2 = p.value("m2", d.m2);
        d.l1 = p.value("l1", d.l1);
        d.l2 = p.value("l2", d.l2);
        d.gravity = p.value("gravity", d.gravity);
        d.damping1 = p.value("damping1", d.damping1);
        d.damping2 = p.value("damping2", d.damping2);
        d.input_limit = p.value("input_limit", d.input_limit);
      } else {
        throw ConfigError("unknown plant kind '" + c.plant.kind + "'");
      }
    }
    if (j.contains("observables")) {
      const auto& o = j.at("observables");
      detail::check_keys(o, "observables", {"map_x", "map_u"});
      if (o.contains("map_x")) c.map_x = o.at("map_x");
      if (o.contains("map_u")) c.map_u = o.at("map_u");
    }
    if (j.contains("babbling")) {
      const auto& bj = j.at("babbling");
      detail::check_keys(bj, "babbling", {"num_gains", "num_initial_conditions", "gain_scale", "pairing",
                                          "state_grid", "grid_counts", "input_bounds", "steps", "dt"});
      auto& b = c.babbling;
      b.num_gains = bj.value("num_gains", b.num_gains);
      b.num_initial_conditions = bj.value("num_initial_conditions", b.num_initial_conditions);
      b.gain_scale = bj.value("gain_scale", b.gain_scale);
      if (bj.contains("pairing")) b.pairing = pairing_from_string(bj.at("pairing").get<std::string>());
      if (bj.contains("state_grid")) b.state_grid = detail::intervals_from_json(bj.at("state_grid"));
      if (bj.contains("grid_counts")) b.grid_counts = bj.at("grid_counts").get<std::vector<Index>>();
      if (bj.contains("input_bounds")) b.input_bounds = detail::intervals_from_json(bj.at("input_bounds"));
      b.steps = bj.value("steps", b.steps);
      b.dt = bj.value("dt", b.dt);
    }
    if (j.contains("identification")) {
      const auto& ij = j.at("identification");
      detail::check_keys(ij, "identification", {"ridge", "holdout_fraction"});
      if (ij.contains("ridge")) c.identification.ridge = detail::optional_from_json(ij.at("ridge"));
      c.identification.holdout_fraction = ij.value("holdout_fraction", c.identification.holdout_fraction);
    }
    if (j.contains("factorization")) {
      const auto& fj = j.at("factorization");
      detail::check_keys(fj, "factorization", {"eps_h", "gate_states", "gate_factor"});
      if (fj.contains("eps_h")) c.factorization.eps_h = detail::optional_from_json(fj.at("eps_h"));
      c.factorization.gate_states = fj.value("gate_states", c.factorization.gate_states);
      c.factorization.gate_factor = fj.value("gate_factor", c.factorization.gate_factor);
    }
    if (j.contains("synthesis")) {
      const auto& sj = j.at("synthesis");
      detail::check_keys(sj, "synthesis", {"eps_p", "max_resamples", "lambda_tol", "feas_tol", "rate_budget"});
      auto& s = c.synthesis;
      s.eps_p = sj.value("eps_p", s.eps_p);
      s.max_resamples = sj.value("max_resamples", s.max_resamples);
      s.lambda_tol = sj.value("lambda_tol", s.lambda_tol);
      s.feas_tol = sj.value("feas_tol", s.feas_tol);
      s.rate_budget = sj.value("rate_budget", s.rate_budget);
    }
    if (j.contains("evaluation")) {
      const auto& ej = j.at("evaluation");
      detail::check_keys(ej, "evaluation", {"horizon_s", "dt", "settle_tol", "clip", "success_gate",
                                            "lifted_steps", "initial_states", "stress"});
      auto& ev = c.evaluation;
      ev.options.horizon_s = ej.value("horizon_s", ev.options.horizon_s);
      ev.options.dt = ej.value("dt", ev.options.dt);
      ev.options.settle_tol = ej.value("settle_tol", ev.options.settle_tol);
      ev.options.clip = ej.value("clip", ev.options.clip);
      ev.success_gate = ej.value("success_gate", ev.success_gate);
      ev.lifted_steps = ej.value("lifted_steps", ev.lifted_steps);
      if (ej.contains("stress")) ev.stress = detail::states_from_json(ej.at("stress"));
      if (ej.contains("initial_states")) {
        const auto& is = ej.at("initial_states");
        detail::check_keys(is, "evaluation.initial_states", {"mode", "box", "count", "counts", "states"});
        ev.initial.mode = is.value("mode", ev.initial.mode);
        if (is.contains("box")) ev.initial.box = detail::intervals_from_json(is.at("box"));
        ev.initial.count = is.value("count", ev.initial.count);
        if (is.contains("counts")) ev.initial.counts = is.at("counts").get<std::vector<Index>>();
        if (is.contains("states")) ev.initial.states = detail::states_from_json(is.at("states"));
      }
    }
    return c;
  } catch (const Json::exception& e) {
    throw ConfigError(std::string("config: ") + e.what());
  }
}

/// Structural checks that need no simulation.
inline void validate_config(const ExperimentConfig& c) {
  const ControlAffinePlant plant = make_plant(c.plant);
  const ObservableMap mx = resolve_map(c.map_x, plant.state_dim());
  const ObservableMap mu = resolve_map(c.map_u, plant.state_dim());
  if (mx.state_dim() != plant.state_dim() || mu.state_dim() != plant.state_dim()) {
    throw ConfigError("observable maps do not act on the plant state");
  }
  if (!mx.has_state_prefix()) throw ConfigError("map_x must list the state first");
  c.babbling.validate();
  if (static_cast<Index>(c.babbling.state_grid.size()) != plant.state_dim()) {
    throw ConfigError("babbling.state_grid needs one interval per state dimension");
  }
  if (c.identification.holdout_fraction < 0.0 || c.identification.holdout_fraction >= 1.0) {
    throw ConfigError("identification.holdout_fraction must be in [0, 1)");
  }
  if (c.identification.ridge && !(*c.identification.ridge >= 0.0)) {
    throw ConfigError("identification.ridge must be >= 0");
  }
  if (c.factorization.eps_h && !(*c.factorization.eps_h > 0.0)) {
    throw ConfigError("factorization.eps_h must be > 0");
  }
  if (c.factorization.gate_states < 0 || !(c.factorization.gate_factor > 0.0)) {
    throw ConfigError("factorization gate settings must be non-negative / positive");
  }
  const auto& s = c.synthesis;
  if (!(s.eps_p > 0.0) || s.max_resamples < 0 || !(s.lambda_tol > 0.0) || !(s.feas_tol > 0.0) ||
      s.rate_budget < 0) {
    throw ConfigError("synthesis: eps_p, lambda_tol, feas_tol must be > 0 and budgets >= 0");
  }
  const auto& ev = c.evaluation;
  IntegratorConfig{ev.options.dt, ev.options.steps()}.validate();
  if (!(ev.options.settle_tol > 0.0)) throw ConfigError("evaluation.settle_tol must be > 0");
  if (ev.success_gate < 0.0 || ev.success_gate > 1.0) throw ConfigError("evaluation.success_gate must be in [0, 1]");
  if (ev.lifted_steps < 1) throw ConfigError("evaluation.lifted_steps must be >= 1");
  for (const auto& x : initial_states(ev.initial)) {
    if (x.size() != plant.state_dim()) throw ConfigError("evaluation initial state has the wrong length");
  }
  for (const auto& x : ev.stress) {
    if (x.size() != plant.state_dim()) throw ConfigError("evaluation stress state has the wrong length");
  }
}

/// Hash of everything that influences results; output_dir and jobs are excluded.
inline std::string config_hash(const ExperimentConfig& c) {
  Json j = config_to_json(c);
  j.erase("output_dir");
  j.erase("jobs");
  return json_hash(j);
}

enum class Stage { babble, factorize, identify, synthesize, evaluate };

inline const char* to_string(Stage s) {
  switch (s) {
    case Stage::babble: return "babble";
    case Stage::factorize: return "factorize";
    case Stage::identify: return "identify";
    case Stage::synthesize: return "synthesize";
    case Stage::evaluate: return "evaluate";
  }
  return "unknown";
}

/// Hash of the config sections a stage (and everything upstream of it) reads.
inline std::string stage_hash(const ExperimentConfig& c, Stage s) {
  const Json full = config_to_json(c);
  Json j{{"seed", full["seed"]}, {"plant", full["plant"]}, {"observables", full["observables"]},
         {"babbling", full["babbling"]}};
  if (s >= Stage::factorize) j["eps_h"] = full["factorization"]["eps_h"];
  if (s >= Stage::identify) j["identification"] = full["identification"];
  if (s >= Stage::synthesize) {
    j["factorization"] = full["factorization"];
    j["synthesis"] = full["synthesis"];
  }
  if (s >= Stage::evaluate) j["evaluation"] = full["evaluation"];
  return json_hash(j);
}

/// Config template with a "_doc" entry in every section.
inline Json config_template(const std::string& preset) {
  Json j = config_to_json(preset_config(preset));
  j["_doc"] =
      "Experiment configuration. 'preset' (single, single-full, double, smoke) supplies defaults; any "
      "key given here overrides it. Keys starting with '_' are ignored. 'seed' drives babbling (seed), "
      "synthesis (seed+1) and the factorization gate (seed+2).";
  j["plant"]["_doc"] =
      "kind: single_pendulum (mass, length, damping, gravity, input_limit) or double_pendulum "
      "(m1, m2, l1, l2, gravity, damping1, damping2, input_limit). Inputs saturate at +-input_limit.";
  j["observables"]["_doc"] =
      "map_x and map_u: single_pendulum, double_pendulum, identity, monomial:<degree>, or a descriptor "
      "object {name, state_dim, features:[{label, coefficient, factors}]}. map_x must start with the state.";
  j["babbling"]["_doc"] =
      "Random gains with entries uniform in [-gain_scale, gain_scale]. pairing: cyclic (initial condition "
      "j uses gain j mod num_gains) or cartesian (every pair). state_grid: one [lo, hi] per state. "
      "grid_counts: optional per-axis counts. input_bounds: empty means the plant limits.";
  j["identification"]["_doc"] =
      "ridge: null selects 1e-8 * training snapshots. holdout_fraction of whole trajectories is kept "
      "for the held-out one-step MSE.";
  j["factorization"]["_doc"] =
      "eps_h: null selects 1e-6 * RMS ||psi_x kron psi_u||. Before synthesis the pair is re-checked on "
      "gate_states fresh states from the babbling box; the worst residual must be <= gate_factor * eps_h.";
  j["synthesis"]["_doc"] =
      "eps_p: ridge in Q = R^T R + eps_p I. max_resamples: sampled candidates after the identity start. "
      "lambda_tol: bisection tolerance. feas_tol: accepted negative min eigenvalue. rate_budget: extra "
      "candidates tried after the first success, keeping the smallest lambda.";
  j["evaluation"]["_doc"] =
      "Converged means ||x(horizon)||_inf <= settle_tol. clip saturates the feedback to the plant limits. "
      "The evaluate stage exits with code 5 when the success rate is below success_gate. lifted_steps: "
      "horizon of the lifted-versus-true comparison. stress states are reported, never gated.";
  j["evaluation"]["initial_states"]["_doc"] =
      "mode: spread (count low-discrepancy points in box), grid (counts per axis over box, endpoints "
      "included) or list (explicit states).";
  return j;
}

}  // namespace kcf
