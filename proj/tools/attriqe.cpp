// Command-line driver for the attribution pipeline.
//
//   attriqe gen-data --config toy.json --out runs/toy
//   attriqe train    --config runs/toy/data/config.json
//   attriqe sweep    --out runs/toy --workers 4
//
// Each subcommand reads the config tree (defaults when --config is absent),
// applies the flags on top and runs one stage.

#include <cstdio>
#include <iostream>

#include <CLI11.hpp>
#include <json.hpp>
#include <spdlog/sinks/stdout_color_sinks.h>
#include <spdlog/spdlog.h>

#include "attriqe/errors.hpp"
#include "attriqe/pipeline.hpp"

namespace {

struct Common {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> workers;
  std::string out;
  bool force = false;
  bool quiet = false;
};

void add_common(CLI::App* cmd, Common& c) {
  cmd->add_option("--config", c.config, "JSON config file; omitted keys take their defaults");
  cmd->add_option("--seed", c.seed, "global seed");
  cmd->add_option("--workers", c.workers, "worker threads for attribution")->check(CLI::PositiveNumber);
  cmd->add_option("--out", c.out, "run directory");
  cmd->add_flag("--force", c.force, "replace an existing stage output");
  cmd->add_flag("--quiet", c.quiet, "only log warnings and errors");
}

attriqe::pipeline::RunConfig resolve(const Common& c) {
  using attriqe::pipeline::RunConfig;
  RunConfig config = c.config.empty() ? RunConfig::from_json(nlohmann::json::object()) : RunConfig::load(c.config);
  if (c.seed) config.set_seed(*c.seed);
  if (c.workers) config.set_workers(*c.workers);
  if (!c.out.empty()) config.set_out(c.out);
  config.validate();
  return config;
}

void print_error(const attriqe::Error& e) {
  const nlohmann::json j = {{"error", attriqe::category_name(e.category())}, {"message", e.what()}};
  std::cerr << j.dump() << "\n";
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Word-level error attribution for sentence-level quality estimation"};
  app.require_subcommand(1);

  Common common;
  std::vector<std::string> dumps;
  bool show_defaults = false;
  app.add_flag("--print-defaults", show_defaults, "print the default config and exit");

  struct Sub {
    const char* name;
    const char* help;
  };
  const Sub subs[] = {
      {"gen-data", "generate or ingest the train/dev/test splits"},
      {"train", "train the sentence-level model (and the word model when enabled)"},
      {"attribute", "write attribution dumps for the configured methods and layers"},
      {"evaluate", "score attribution dumps against gold word labels"},
      {"sweep", "select the best layer on dev and report it on test"},
      {"analyze", "category and frequency analyses of attributions"},
      {"report", "collect the stage outputs into one summary"},
  };
  std::map<std::string, CLI::App*> commands;
  for (const auto& s : subs) {
    CLI::App* cmd = app.add_subcommand(s.name, s.help);
    add_common(cmd, common);
    commands[s.name] = cmd;
  }
  commands["evaluate"]->add_option("dumps", dumps, "attribution dumps (default: the run's attribution directory)");

  // --print-defaults works without a subcommand.
  if (argc == 2 && std::string_view(argv[1]) == "--print-defaults") {
    std::cout << attriqe::pipeline::RunConfig::defaults().dump(2) << "\n";
    return 0;
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  }
  spdlog::set_default_logger(spdlog::stderr_color_mt("attriqe"));
  spdlog::set_level(common.quiet ? spdlog::level::warn : spdlog::level::info);

  namespace p = attriqe::pipeline;
  try {
    const p::RunConfig config = resolve(common);
    const p::StageOptions opt{common.force};
    std::filesystem::path wrote;
    if (commands["gen-data"]->parsed()) wrote = p::gen_data(config, opt);
    else if (commands["train"]->parsed()) wrote = p::train(config, opt);
    else if (commands["attribute"]->parsed()) wrote = p::attribute(config, opt);
    else if (commands["evaluate"]->parsed()) {
      std::vector<std::filesystem::path> paths(dumps.begin(), dumps.end());
      wrote = p::evaluate(config, paths, opt);
    } else if (commands["sweep"]->parsed()) wrote = p::sweep(config, opt);
    else if (commands["analyze"]->parsed()) wrote = p::analyze(config, opt);
    else wrote = p::report(config, opt);
    std::cout << wrote.string() << "\n";
  } catch (const attriqe::Error& e) {
    print_error(e);
    return attriqe::exit_code(e.category());
  } catch (const std::filesystem::filesystem_error& e) {
    print_error(attriqe::PathError(e.what()));
    return attriqe::exit_code(attriqe::ErrorCategory::path);
  } catch (const std::exception& e) {
    std::cerr << nlohmann::json{{"error", "internal"}, {"message", e.what()}}.dump() << "\n";
    return 1;
  }
  return 0;
}
