#pragma once

#include <filesystem>
#include <iomanip>
#include <ostream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "kcf/babbling.hpp"
#include "kcf/config.hpp"
#include "kcf/edmd.hpp"
#include "kcf/errors.hpp"
#include "kcf/evaluation.hpp"
#include "kcf/factorization.hpp"
#include "kcf/io.hpp"
#include "kcf/lmi.hpp"

namespace kcf {

/// Synthesis finished without a certificate.
class SynthesisFailure : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Closed-loop success rate fell below the configured gate.
class EvaluationGateFailure : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

enum ExitCode : int {
  kExitOk = 0,
  kExitOther = 1,
  kExitConfig = 2,
  kExitPrecondition = 3,
  kExitInfeasible = 4,
  kExitGate = 5,
};

inline int exit_code_for(const std::exception& e) {
  if (dynamic_cast<const ConfigError*>(&e)) return kExitConfig;
  if (dynamic_cast<const Json::exception*>(&e)) return kExitConfig;
  if (dynamic_cast<const StagePreconditionError*>(&e)) return kExitPrecondition;
  if (dynamic_cast<const SynthesisFailure*>(&e)) return kExitInfeasible;
  if (dynamic_cast<const EvaluationGateFailure*>(&e)) return kExitGate;
  return kExitOther;
}

struct ArtifactLayout {
  std::filesystem::path root;

  std::filesystem::path config() const { return root / "config.json"; }
  std::filesystem::path dataset() const { return root / "dataset"; }
  std::filesystem::path manifest() const { return dataset() / "manifest.json"; }
  std::filesystem::path factorization() const { return root / "factorization.json"; }
  std::filesystem::path model() const { return root / "model.json"; }
  std::filesystem::path synthesis() const { return root / "synthesis.json"; }
  std::filesystem::path evaluation() const { return root / "evaluation"; }
  std::filesystem::path report() const { return evaluation() / "report.json"; }
};

/// Resolved plant and maps for a config.
struct Experiment {
  ExperimentConfig config;
  ControlAffinePlant plant;
  ObservableMap map_x;
  ObservableMap map_u;
  ArtifactLayout layout;
  std::string hash;

  explicit Experiment(ExperimentConfig c)
      : config((validate_config(c), std::move(c))),
        plant(make_plant(config.plant)),
        map_x(resolve_map(config.map_x, plant.state_dim())),
        map_u(resolve_map(config.map_u, plant.state_dim())),
        layout{config.output_dir},
        hash(config_hash(config)) {}

  Json provenance_for(Stage s) const {
    Json p = provenance(hash, config.seed);
    p["stage"] = to_string(s);
    p["stage_hash"] = stage_hash(config, s);
    return p;
  }

  std::string csv_comment(Stage s) const {
    return "config_hash=" + hash + " stage_hash=" + stage_hash(config, s) +
           " seed=" + std::to_string(config.seed) + " toolkit_version=" + kVersion;
  }
};

namespace detail {

inline std::filesystem::path artifact_file(const ArtifactLayout& l, Stage s) {
  switch (s) {
    case Stage::babble: return l.manifest();
    case Stage::factorize: return l.factorization();
    case Stage::identify: return l.model();
    case Stage::synthesize: return l.synthesis();
    case Stage::evaluate: return l.report();
  }
  return {};
}

inline bool artifact_current(const Experiment& ex, Stage s) {
  const auto path = artifact_file(ex.layout, s);
  if (!std::filesystem::exists(path)) return false;
  try {
    const Json j = read_json_file(path);
    return j.at("provenance").at("stage_hash").get<std::string>() == stage_hash(ex.config, s);
  } catch (const std::exception&) {
    return false;
  }
}

/// Loads the artifact of an upstream stage, insisting it was produced by this config.
inline Json require_artifact(const Experiment& ex, Stage upstream, Stage consumer) {
  const auto path = artifact_file(ex.layout, upstream);
  if (!std::filesystem::exists(path)) {
    throw StagePreconditionError(std::string(to_string(consumer)) + " needs " + path.string() +
                                 "; run '" + to_string(upstream) + "' first");
  }
  Json j = read_json_file(path);
  const auto want = stage_hash(ex.config, upstream);
  const auto got = j.contains("provenance") ? j["provenance"].value("stage_hash", std::string()) : "";
  if (got != want) {
    throw StagePreconditionError(path.string() + " was produced by a different configuration; rerun '" +
                                 to_string(upstream) + "'");
  }
  return j;
}

inline std::string fixed(double v, int prec = 6) {
  std::ostringstream os;
  os << std::setprecision(prec) << v;
  return os.str();
}

inline void check_maps(const Experiment& ex, const Json& j) {
  if (ObservableMap::from_descriptor(j.at("map_x")).descriptor_hash() != ex.map_x.descriptor_hash() ||
      ObservableMap::from_descriptor(j.at("map_u")).descriptor_hash() != ex.map_u.descriptor_hash()) {
    throw StagePreconditionError("factorization.json was built with different observable maps");
  }
}

inline void write_config_copy(const Experiment& ex) {
  Json j = config_to_json(ex.config);
  j["config_hash"] = ex.hash;
  write_json_file(ex.layout.config(), j);
}

}  // namespace detail

inline SnapshotDataset cmd_babble(const Experiment& ex, std::ostream& log) {
  detail::write_config_copy(ex);
  BabblingConfig cfg = ex.config.babbling;
  cfg.seed = ex.config.babbling_seed();
  const SnapshotDataset ds = generate_dataset(ex.plant, ex.map_x, ex.map_u, cfg, ex.config.jobs);
  Json extra{{"provenance", ex.provenance_for(Stage::babble)}};
  write_dataset(ex.layout.dataset(), ds, extra);
  log << "babble: " << ds.trajectories.size() << " trajectories, " << ds.dropped << " dropped, "
      << ds.num_snapshots() << " snapshots -> " << ex.layout.dataset().string() << '\n';
  return ds;
}

inline FactorizationPair cmd_factorize(const Experiment& ex, std::ostream& log) {
  detail::require_artifact(ex, Stage::babble, Stage::factorize);
  const SnapshotDataset ds = read_dataset(ex.layout.dataset());
  const HbarFit fit = fit_candidate_hbar(ds, ex.map_x, ex.map_u);
  const double eps = ex.config.factorization.eps_h.value_or(default_eps_h(fit));
  log << "factorize: " << fit.snapshots << " snapshots, eps_h = " << detail::fixed(eps) << '\n';
  const auto labels = ex.map_x.labels();
  for (Index i = 0; i < fit.blocks(); ++i) {
    const double r = fit.residuals[static_cast<std::size_t>(i)];
    log << "  " << std::left << std::setw(34) << labels[static_cast<std::size_t>(i)] << std::right
        << std::setw(14) << detail::fixed(r, 4) << (r <= eps ? "  kept" : "") << '\n';
  }
  const FactorizationPair pair = threshold_mask(fit, eps);
  log << "factorize: d_S = " << pair.selected() << " of " << fit.blocks() << " blocks\n";
  Json j = pair_to_json(pair, ex.map_x, ex.map_u);
  j["provenance"] = ex.provenance_for(Stage::factorize);
  write_json_file(ex.layout.factorization(), j);
  return pair;
}

inline BilinearKoopmanModel cmd_identify(const Experiment& ex, std::ostream& log) {
  detail::require_artifact(ex, Stage::babble, Stage::identify);
  const Json pj = detail::require_artifact(ex, Stage::factorize, Stage::identify);
  detail::check_maps(ex, pj);
  const FactorizationPair pair = pair_from_json(pj);
  const SnapshotDataset ds = read_dataset(ex.layout.dataset());
  const auto& ic = ex.config.identification;
  const BilinearKoopmanModel model = identify_model(ds, ex.map_x, pair.selection, ic.ridge, ic.holdout_fraction);
  const auto& d = model.diagnostics;
  log << "identify: train MSE " << detail::fixed(d.train_mse) << " (" << d.train_snapshots << " snapshots)";
  if (d.holdout_mse) log << ", held-out MSE " << detail::fixed(*d.holdout_mse) << " (" << d.holdout_snapshots << ")";
  log << ", rank " << d.rank << (d.rank_deficient ? " (deficient)" : "") << ", ridge " << detail::fixed(d.ridge)
      << '\n';
  Json j = model_to_json(model);
  j["provenance"] = ex.provenance_for(Stage::identify);
  write_json_file(ex.layout.model(), j);
  return model;
}

/// Worst residual of the stored pair on fresh states drawn uniformly from the babbling box.
inline double factorization_gate_residual(const Experiment& ex, const FactorizationPair& pair) {
  Rng rng(ex.config.gate_seed());
  std::vector<Vector> states;
  for (int i = 0; i < ex.config.factorization.gate_states; ++i) {
    Vector x(ex.plant.state_dim());
    for (Index k = 0; k < x.size(); ++k) {
      const auto& iv = ex.config.babbling.state_grid[static_cast<std::size_t>(k)];
      x(k) = rng.uniform(iv.lo, iv.hi);
    }
    states.push_back(std::move(x));
  }
  return verify_assumption1(pair, ex.map_x, ex.map_u, states);
}

inline SynthesisResult cmd_synthesize(const Experiment& ex, std::ostream& log) {
  const Json pj = detail::require_artifact(ex, Stage::factorize, Stage::synthesize);
  const Json mj = detail::require_artifact(ex, Stage::identify, Stage::synthesize);
  detail::check_maps(ex, pj);
  const FactorizationPair pair = pair_from_json(pj);
  const BilinearKoopmanModel model = model_from_json(mj);

  const double gate = factorization_gate_residual(ex, pair);
  const double allowed = ex.config.factorization.gate_factor * pair.eps_h;
  log << "synthesize: factorization gate residual " << detail::fixed(gate, 3) << " (allowed "
      << detail::fixed(allowed, 3) << ")\n";
  if (!(gate <= allowed)) {
    throw StagePreconditionError("factorization does not hold on fresh states: residual " +
                                 format_double(gate) + " > " + format_double(allowed));
  }

  Rng rng(ex.config.synthesis_seed());
  const SynthesisResult r = synthesize(model, pair, ex.config.synthesis, rng);
  Json j = synthesis_to_json(r);
  j["gate"] = Json{{"residual", gate}, {"allowed", allowed}, {"states", ex.config.factorization.gate_states}};
  j["provenance"] = ex.provenance_for(Stage::synthesize);
  write_json_file(ex.layout.synthesis(), j);

  log << "synthesize: status " << to_string(r.status) << ", " << r.log.size() << " candidates, "
      << r.resamples << " resamples";
  if (r.status == SynthesisStatus::optimal) {
    log << ", lambda* " << detail::fixed(r.lambda) << ", rate " << detail::fixed(certified_rate(r))
        << ", min eig " << detail::fixed(r.min_eig, 3) << " (" << to_string(r.candidate.kind) << ")";
  }
  log << '\n';
  if (r.status != SynthesisStatus::optimal) {
    throw SynthesisFailure(std::string("synthesis ") + to_string(r.status));
  }
  return r;
}

struct EvaluationOutcome {
  EvaluationReport report;
  EvaluationReport stress;
  FidelityMetrics fidelity;
  bool passed = false;
};

inline Json evaluation_to_json(const Experiment& ex, const EvaluationOutcome& o) {
  auto summary = [](const EvaluationReport& rep) {
    double worst = 0.0;
    double sum = 0.0;
    std::size_t n = 0;
    for (const auto& r : rep.records) {
      if (r.failed) continue;
      const double e = inf_norm(r.final_state);
      worst = std::max(worst, e);
      sum += e;
      ++n;
    }
    Json j = report_to_json(rep);
    j["steady_state_error"] = Json{{"max", worst}, {"mean", n ? sum / static_cast<double>(n) : 0.0}};
    return j;
  };
  Json j = summary(o.report);
  j["success_gate"] = ex.config.evaluation.success_gate;
  j["passed"] = o.passed;
  j["stress"] = summary(o.stress);
  j["training_ranges"] = detail::intervals_to_json(ex.config.babbling.state_grid);
  j["evaluation_ranges"] = detail::intervals_to_json(ex.config.evaluation.initial.box);
  j["fidelity"] = Json{{"steps", o.fidelity.mean_error.size()},
                       {"mean_error", o.fidelity.mean_error},
                       {"max_error", o.fidelity.max_error},
                       {"one_step_mse", o.fidelity.one_step_mse}};
  return j;
}

inline EvaluationOutcome cmd_evaluate(const Experiment& ex, std::ostream& log) {
  const Json pj = detail::require_artifact(ex, Stage::factorize, Stage::evaluate);
  const Json mj = detail::require_artifact(ex, Stage::identify, Stage::evaluate);
  const Json sj = detail::require_artifact(ex, Stage::synthesize, Stage::evaluate);
  const SynthesisResult syn = synthesis_from_json(sj);
  if (syn.status != SynthesisStatus::optimal) {
    throw StagePreconditionError("evaluate needs an optimal synthesis result, found '" +
                                 std::string(to_string(syn.status)) + "'");
  }
  const FactorizationPair pair = pair_from_json(pj);
  const BilinearKoopmanModel model = model_from_json(mj);
  const auto& ec = ex.config.evaluation;
  EvaluationOptions opt = ec.options;
  opt.jobs = ex.config.jobs;
  const LyapunovSpec lyap{syn.candidate.p, syn.lambda, ex.map_x};

  EvaluationOutcome out;
  const auto ics = initial_states(ec.initial);
  out.report = evaluate_closed_loop(ex.plant, ex.map_u, syn.ku, ics, opt, lyap);
  out.stress = evaluate_closed_loop(ex.plant, ex.map_u, syn.ku, ec.stress, opt, lyap);
  out.fidelity = lifted_vs_true(model, pair, syn.ku, ex.plant, ex.map_u, ics, ec.lifted_steps, opt.dt, opt.clip);
  out.passed = out.report.success_rate >= ec.success_gate;

  Json j = evaluation_to_json(ex, out);
  j["provenance"] = ex.provenance_for(Stage::evaluate);
  write_json_file(ex.layout.report(), j);
  auto labels = ex.map_x.labels();
  labels.resize(static_cast<std::size_t>(ex.plant.state_dim()));
  export_plot_data(out.report, ex.layout.evaluation(), labels, ex.csv_comment(Stage::evaluate));

  log << "evaluate: " << out.report.converged() << "/" << out.report.records.size() << " converged ("
      << detail::fixed(100.0 * out.report.success_rate, 4) << "%, gate "
      << detail::fixed(100.0 * ec.success_gate, 4) << "%)";
  if (out.report.median_settling_time) log << ", median settling " << detail::fixed(*out.report.median_settling_time, 4) << " s";
  log << '\n';
  for (const auto& r : out.stress.records) {
    log << "evaluate: stress [" << r.initial.transpose() << "] " << (r.converged ? "converged" : "not converged")
        << '\n';
  }
  if (!out.passed) {
    throw EvaluationGateFailure("success rate " + format_double(out.report.success_rate) + " below gate " +
                                format_double(ec.success_gate));
  }
  return out;
}

/// Runs every stage in order, skipping stages whose artifact already matches this config.
/// Cached synthesis and evaluation artifacts still report their failure codes.
inline void cmd_pipeline(const Experiment& ex, std::ostream& log) {
  for (Stage s : {Stage::babble, Stage::factorize, Stage::identify, Stage::synthesize, Stage::evaluate}) {
    if (detail::artifact_current(ex, s)) {
      log << to_string(s) << ": cached (" << detail::artifact_file(ex.layout, s).string() << ")\n";
      const Json j = read_json_file(detail::artifact_file(ex.layout, s));
      if (s == Stage::synthesize && j.at("status").get<std::string>() != "optimal") {
        throw SynthesisFailure("synthesis " + j.at("status").get<std::string>() + " (cached)");
      }
      if (s == Stage::evaluate && !j.at("passed").get<bool>()) {
        throw EvaluationGateFailure("success rate below gate (cached)");
      }
      continue;
    }
    switch (s) {
      case Stage::babble: cmd_babble(ex, log); break;
      case Stage::factorize: cmd_factorize(ex, log); break;
      case Stage::identify: cmd_identify(ex, log); break;
      case Stage::synthesize: cmd_synthesize(ex, log); break;
      case Stage::evaluate: cmd_evaluate(ex, log); break;
    }
  }
}

}  // namespace kcf
