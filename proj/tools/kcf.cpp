#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include "kcf/kcf.hpp"

namespace {

struct Common {
  std::string config_path;
  std::string preset;
  std::string out;
  std::optional<std::uint64_t> seed;
  std::optional<unsigned> jobs;
};

void add_common(CLI::App* sub, Common& c) {
  sub->add_option("--config", c.config_path, "experiment config (JSON)");
  sub->add_option("--preset", c.preset, "start from a preset: single, single-full, double, smoke");
  sub->add_option("--out", c.out, "output directory (overrides output_dir)");
  sub->add_option("--seed", c.seed, "global seed (overrides seed)");
  sub->add_option("--jobs", c.jobs, "worker threads (overrides jobs)");
}

kcf::ExperimentConfig load(const Common& c) {
  kcf::Json j = kcf::Json::object();
  if (!c.config_path.empty()) {
    try {
      j = kcf::read_json_file(c.config_path);
    } catch (const kcf::Json::exception& e) {
      throw kcf::ConfigError(c.config_path + ": " + e.what());
    } catch (const std::runtime_error& e) {
      throw kcf::ConfigError(e.what());
    }
  }
  if (!c.preset.empty()) {
    if (j.contains("preset") && j["preset"] != c.preset) {
      throw kcf::ConfigError("--preset conflicts with the config file's preset");
    }
    j["preset"] = c.preset;
  }
  kcf::ExperimentConfig cfg = kcf::config_from_json(j);
  if (!c.out.empty()) cfg.output_dir = c.out;
  if (c.seed) cfg.seed = *c.seed;
  if (c.jobs) cfg.jobs = *c.jobs;
  return cfg;
}

}  // namespace

int main(int argc, char** argv) {
  std::cout << std::unitbuf;
  CLI::App app{"Koopman control factorization toolkit"};
  app.require_subcommand(1);
  app.set_version_flag("--version", std::string(kcf::kVersion));

  Common common;
  struct Sub {
    const char* name;
    const char* help;
  };
  const Sub subs[] = {
      {"babble", "generate the babbling dataset"},
      {"factorize", "fit the selection and measurement matrices"},
      {"identify", "identify the bilinear Koopman model"},
      {"synthesize", "synthesize the feedback gain"},
      {"evaluate", "evaluate the closed loop on the plant"},
      {"pipeline", "run every stage, skipping cached ones"},
  };
  for (const auto& s : subs) add_common(app.add_subcommand(s.name, s.help), common);

  std::string init_preset = "single";
  std::string init_out;
  auto* init = app.add_subcommand("init", "write a documented config template");
  init->add_option("--preset", init_preset, "preset to start from");
  init->add_option("--out", init_out, "file to write (stdout when omitted)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : kcf::kExitConfig;
  }

  try {
    if (init->parsed()) {
      const kcf::Json t = kcf::config_template(init_preset);
      if (init_out.empty()) {
        std::cout << t.dump(2) << '\n';
      } else {
        kcf::write_json_file(init_out, t);
        std::cout << "init: wrote " << init_out << '\n';
      }
      return kcf::kExitOk;
    }
    const kcf::Experiment ex(load(common));
    std::cout << "config " << ex.hash << ", seed " << ex.config.seed << ", output "
              << ex.layout.root.string() << '\n';
    const std::string name = app.get_subcommands().front()->get_name();
    if (name == "babble") kcf::cmd_babble(ex, std::cout);
    else if (name == "factorize") kcf::cmd_factorize(ex, std::cout);
    else if (name == "identify") kcf::cmd_identify(ex, std::cout);
    else if (name == "synthesize") kcf::cmd_synthesize(ex, std::cout);
    else if (name == "evaluate") kcf::cmd_evaluate(ex, std::cout);
    else kcf::cmd_pipeline(ex, std::cout);
    return kcf::kExitOk;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kcf::exit_code_for(e);
  }
}
