#pragma once

// Command-line front end: parses flags, builds the validated config and runs
// the requested stage. Errors map onto fixed exit codes.

#include <CLI11.hpp>
#include <iostream>
#include <string>
#include <vector>

#include "hdvp/pipeline/stages.hpp"

namespace hdvp::pipeline {

inline constexpr int kExitOk = 0;
inline constexpr int kExitOther = 1;
inline constexpr int kExitConfig = 2;
inline constexpr int kExitData = 3;
inline constexpr int kExitDivergence = 4;

inline int exit_code(ErrorKind k) {
  switch (k) {
    case ErrorKind::kConfig: return kExitConfig;
    case ErrorKind::kData:
    case ErrorKind::kCorpusMissing: return kExitData;
    case ErrorKind::kDivergence: return kExitDivergence;
    default: return kExitOther;
  }
}

struct CliOptions {
  std::string config_path;
  std::uint64_t seed = 0;
  bool seed_given = false;
  bool force = false;
  std::vector<std::string> sets;
  std::string out_dir = "hdvp_run";
};

/// Config file (if any), then --set overrides, then --seed.
inline PipelineConfig load_config(const CliOptions& o) {
  nlohmann::json doc = nlohmann::json::object();
  if (!o.config_path.empty()) {
    if (!fs::exists(o.config_path)) fail(ErrorKind::kConfig, "config file not found: " + o.config_path);
    try {
      doc = nlohmann::json::parse(io::read_text(o.config_path));
    } catch (const nlohmann::json::exception& e) {
      fail(ErrorKind::kConfig, "cannot parse " + o.config_path + ": " + e.what());
    }
    if (!doc.is_object()) fail(ErrorKind::kConfig, o.config_path + ": top level must be an object");
  }
  for (const auto& s : o.sets) apply_override(doc, s);
  if (o.seed_given) doc["seed"] = o.seed;
  return validate_config(doc);
}

inline int run_command(int argc, const char* const* argv, std::ostream& out = std::cout, std::ostream& err = std::cerr) {
  CLI::App app{"Two-stage object-centric video prediction pipeline"};
  app.name("hdvp");
  app.fallthrough();
  app.require_subcommand(1, 1);
  CliOptions o;
  app.add_option("--config", o.config_path, "JSON config file");
  auto* seed_opt = app.add_option("--seed", o.seed, "global seed");
  app.add_flag("--force", o.force, "rerun stages even when up to date");
  app.add_option("--set", o.sets, "override KEY=VALUE (dotted key, JSON value)")->take_all()->allow_extra_args(false);
  app.add_option("--out-dir", o.out_dir, "run directory")->capture_default_str();

  std::vector<std::pair<CLI::App*, Stage>> stage_cmds;
  const char* help[] = {"generate train and test videos",
                        "train the reconstruction network",
                        "encode videos into aligned latent sequences",
                        "train the latent predictor",
                        "write prediction strips for test videos",
                        "probe, score and memory reports",
                        "latent interpolation strips"};
  for (std::size_t i = 0; i < kAllStages.size(); ++i) stage_cmds.emplace_back(app.add_subcommand(to_string(kAllStages[i]), help[i]), kAllStages[i]);
  auto* all = app.add_subcommand("all", "run every stage in order, skipping up-to-date ones");
  auto* show = app.add_subcommand("show-config", "print the validated config");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    if (dynamic_cast<const CLI::RequiredError*>(&e) && argc > 1 && argv[1][0] != '-') {
      err << "hdvp: unknown subcommand '" << argv[1] << "'\n" << app.help();
      return kExitConfig;
    }
    const int code = app.exit(e, out, err);
    return code == 0 ? kExitOk : kExitConfig;
  }
  o.seed_given = seed_opt->count() > 0;

  try {
    const auto cfg = load_config(o);
    if (show->parsed()) {
      out << to_json_doc(cfg).dump(2) << "\n";
      return kExitOk;
    }
    Pipeline p(cfg, o.out_dir, out);
    if (all->parsed()) {
      const int ran = p.run_all(o.force);
      out << (ran == 0 ? "all stages up to date\n" : "done\n");
      return kExitOk;
    }
    for (const auto& [cmd, stage] : stage_cmds)
      if (cmd->parsed()) p.run(stage);
    return kExitOk;
  } catch (const Error& e) {
    err << "hdvp: " << to_string(e.kind()) << ": " << e.what() << "\n";
    return exit_code(e.kind());
  } catch (const std::exception& e) {
    err << "hdvp: " << e.what() << "\n";
    return kExitOther;
  }
}

}  // namespace hdvp::pipeline
