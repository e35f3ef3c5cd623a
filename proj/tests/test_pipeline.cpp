#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include "kcf/pipeline.hpp"

namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
  const auto p = fs::temp_directory_path() / ("kcf_test_pipeline_" + name);
  fs::remove_all(p);
  return p;
}

kcf::ExperimentConfig smoke_in(const fs::path& dir) {
  auto c = kcf::preset_config("smoke");
  c.output_dir = dir.string();
  return c;
}

std::string slurp(const fs::path& p) {
  std::ifstream is(p, std::ios::binary);
  std::ostringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

}  // namespace

TEST(Config, RoundTripForEveryPreset) {
  for (const char* name : {"single", "single-full", "double", "smoke"}) {
    const auto c = kcf::preset_config(name);
    const auto j = kcf::config_to_json(c);
    const auto back = kcf::config_from_json(kcf::Json::parse(j.dump()));
    EXPECT_EQ(kcf::config_to_json(back), j) << name;
    EXPECT_EQ(kcf::config_hash(back), kcf::config_hash(c)) << name;
    EXPECT_NO_THROW(kcf::validate_config(c)) << name;
  }
  EXPECT_THROW(kcf::preset_config("triple"), kcf::ConfigError);
}

TEST(Config, DerivedSeeds) {
  auto c = kcf::preset_config("smoke");
  c.seed = 10;
  EXPECT_EQ(c.babbling_seed(), 10u);
  EXPECT_EQ(c.synthesis_seed(), 11u);
  EXPECT_EQ(c.gate_seed(), 12u);
}

TEST(Config, HashIgnoresOutputDirAndJobs) {
  auto a = kcf::preset_config("smoke");
  auto b = a;
  b.output_dir = "/somewhere/else";
  b.jobs = 8;
  EXPECT_EQ(kcf::config_hash(a), kcf::config_hash(b));
  b.seed = a.seed + 1;
  EXPECT_NE(kcf::config_hash(a), kcf::config_hash(b));
}

TEST(Config, StageHashesTrackUpstreamSections) {
  const auto a = kcf::preset_config("smoke");
  auto b = a;
  b.evaluation.success_gate = 0.5;
  EXPECT_EQ(kcf::stage_hash(a, kcf::Stage::synthesize), kcf::stage_hash(b, kcf::Stage::synthesize));
  EXPECT_NE(kcf::stage_hash(a, kcf::Stage::evaluate), kcf::stage_hash(b, kcf::Stage::evaluate));
  auto c = a;
  c.identification.ridge = 1e-3;
  EXPECT_EQ(kcf::stage_hash(a, kcf::Stage::factorize), kcf::stage_hash(c, kcf::Stage::factorize));
  EXPECT_NE(kcf::stage_hash(a, kcf::Stage::identify), kcf::stage_hash(c, kcf::Stage::identify));
  auto d = a;
  d.babbling.num_gains += 1;
  EXPECT_NE(kcf::stage_hash(a, kcf::Stage::babble), kcf::stage_hash(d, kcf::Stage::babble));
}

TEST(Config, StrictKeysAndOverrides) {
  EXPECT_THROW(kcf::config_from_json(kcf::Json::parse(R"({"babbling": {"num_gainz": 3}})")), kcf::ConfigError);
  EXPECT_THROW(kcf::config_from_json(kcf::Json::parse(R"({"colour": "blue"})")), kcf::ConfigError);
  EXPECT_THROW(kcf::config_from_json(kcf::Json::parse(R"({"seed": "one"})")), kcf::ConfigError);
  const auto c = kcf::config_from_json(
      kcf::Json::parse(R"({"preset": "smoke", "_note": "ignored", "seed": 7, "babbling": {"steps": 20}})"));
  EXPECT_EQ(c.seed, 7u);
  EXPECT_EQ(c.babbling.steps, 20);
  EXPECT_EQ(c.babbling.num_gains, kcf::preset_config("smoke").babbling.num_gains);
}

TEST(Config, TemplateLoadsBack) {
  for (const char* name : {"single", "double", "smoke"}) {
    const auto t = kcf::config_template(name);
    EXPECT_TRUE(t.contains("_doc"));
    const auto c = kcf::config_from_json(kcf::Json::parse(t.dump()));
    EXPECT_EQ(kcf::config_hash(c), kcf::config_hash(kcf::preset_config(name))) << name;
  }
}

TEST(Config, ValidationRejectsInconsistentMaps) {
  auto c = kcf::preset_config("smoke");
  c.map_x = "double_pendulum";
  EXPECT_THROW(kcf::validate_config(c), kcf::ConfigError);
  c = kcf::preset_config("smoke");
  c.identification.holdout_fraction = 1.0;
  EXPECT_THROW(kcf::validate_config(c), kcf::ConfigError);
}

TEST(ExitCodes, MapExceptionTypes) {
  EXPECT_EQ(kcf::exit_code_for(kcf::ConfigError("x")), 2);
  EXPECT_EQ(kcf::exit_code_for(kcf::StagePreconditionError("x")), 3);
  EXPECT_EQ(kcf::exit_code_for(kcf::SynthesisFailure("x")), 4);
  EXPECT_EQ(kcf::exit_code_for(kcf::EvaluationGateFailure("x")), 5);
  EXPECT_EQ(kcf::exit_code_for(std::runtime_error("x")), 1);
  try {
    const auto j = kcf::Json::parse("{ nope");
    ADD_FAILURE() << j.dump();
  } catch (const kcf::Json::exception& e) {
    EXPECT_EQ(kcf::exit_code_for(e), 2);
  }
}

TEST(Pipeline, PreconditionsAreEnforced) {
  const auto dir = scratch("pre");
  const kcf::Experiment ex(smoke_in(dir));
  std::ostringstream log;
  EXPECT_THROW(kcf::cmd_factorize(ex, log), kcf::StagePreconditionError);
  EXPECT_THROW(kcf::cmd_evaluate(ex, log), kcf::StagePreconditionError);
  kcf::cmd_babble(ex, log);
  EXPECT_THROW(kcf::cmd_identify(ex, log), kcf::StagePreconditionError);

  auto other = smoke_in(dir);
  other.seed += 1;
  EXPECT_THROW(kcf::cmd_factorize(kcf::Experiment(other), log), kcf::StagePreconditionError);
  fs::remove_all(dir);
}

TEST(Pipeline, SmokeRunIsCachedAndReproducible) {
  const auto dir_a = scratch("a");
  const auto dir_b = scratch("b");
  std::ostringstream first, second, third;
  const kcf::Experiment a(smoke_in(dir_a));
  ASSERT_NO_THROW(kcf::cmd_pipeline(a, first));
  EXPECT_EQ(first.str().find("cached"), std::string::npos);

  kcf::cmd_pipeline(a, second);
  for (const char* stage : {"babble", "factorize", "identify", "synthesize", "evaluate"}) {
    EXPECT_NE(second.str().find(std::string(stage) + ": cached"), std::string::npos) << stage;
  }

  auto cb = smoke_in(dir_b);
  cb.jobs = 4;
  kcf::cmd_pipeline(kcf::Experiment(cb), third);
  const kcf::ArtifactLayout la{dir_a}, lb{dir_b};
  EXPECT_EQ(slurp(la.manifest()), slurp(lb.manifest()));
  EXPECT_EQ(slurp(la.dataset() / "shards" / "traj_000007.csv"), slurp(lb.dataset() / "shards" / "traj_000007.csv"));
  EXPECT_EQ(slurp(la.factorization()), slurp(lb.factorization()));
  EXPECT_EQ(slurp(la.model()), slurp(lb.model()));
  EXPECT_EQ(slurp(la.synthesis()), slurp(lb.synthesis()));
  EXPECT_EQ(slurp(la.report()), slurp(lb.report()));

  const auto syn = kcf::read_json_file(la.synthesis());
  EXPECT_EQ(syn.at("status"), "optimal");
  EXPECT_LT(syn.at("lambda").get<double>(), 1.0);
  const auto prov = syn.at("provenance");
  EXPECT_EQ(prov.at("config_hash"), a.hash);
  EXPECT_EQ(prov.at("stage"), "synthesize");
  EXPECT_EQ(prov.at("toolkit_version"), kcf::kVersion);
  const auto rep = kcf::read_json_file(la.report());
  for (const char* key : {"success_rate", "steady_state_error", "stress", "training_ranges", "evaluation_ranges",
                          "fidelity", "median_settling_time"}) {
    EXPECT_TRUE(rep.contains(key)) << key;
  }
  for (const char* f : {"phase_controlled.csv", "phase_uncontrolled.csv", "response_controlled.csv",
                        "response_uncontrolled.csv"}) {
    EXPECT_TRUE(fs::exists(la.evaluation() / f)) << f;
  }
  fs::remove_all(dir_a);
  fs::remove_all(dir_b);
}

TEST(Pipeline, DownstreamChangeReusesUpstreamArtifacts) {
  const auto dir = scratch("partial");
  std::ostringstream log;
  auto c = smoke_in(dir);
  kcf::cmd_pipeline(kcf::Experiment(c), log);
  c.evaluation.options.settle_tol = 0.1;
  std::ostringstream again;
  kcf::cmd_pipeline(kcf::Experiment(c), again);
  EXPECT_NE(again.str().find("synthesize: cached"), std::string::npos);
  EXPECT_EQ(again.str().find("evaluate: cached"), std::string::npos);
  fs::remove_all(dir);
}

TEST(Pipeline, ZeroAuthorityFailsSynthesis) {
  const auto dir = scratch("starved");
  auto c = smoke_in(dir);
  c.synthesis.max_resamples = 2;
  c.babbling.input_bounds = {{0.0, 0.0}};
  const kcf::Experiment ex(c);
  std::ostringstream log;
  try {
    kcf::cmd_pipeline(ex, log);
    FAIL() << "expected SynthesisFailure";
  } catch (const kcf::SynthesisFailure& e) {
    EXPECT_EQ(kcf::exit_code_for(e), 4);
  }
  EXPECT_EQ(kcf::read_json_file(ex.layout.synthesis()).at("status"), "max-resamples-exceeded");
  EXPECT_THROW(kcf::cmd_pipeline(ex, log), kcf::SynthesisFailure);
  EXPECT_THROW(kcf::cmd_evaluate(ex, log), kcf::StagePreconditionError);
  fs::remove_all(dir);
}
