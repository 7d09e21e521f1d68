// dllrnn: simulate datasets, train, enhance, count resources, evaluate.
//
// Exit codes: 0 success, 1 usage/config error, 2 data error, 3 numerical failure.

#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "dllrnn/commands.hpp"

namespace {

using namespace dllrnn;

int exit_code_for(const std::exception& e) {
  if (dynamic_cast<const NumericalError*>(&e)) return 3;
  if (dynamic_cast<const DimensionError*>(&e) || dynamic_cast<const DegenerateInputError*>(&e) ||
      dynamic_cast<const ParseError*>(&e) || dynamic_cast<const GeometryError*>(&e)) {
    return 2;
  }
  return 1;
}

struct Common {
  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::string out;
  std::vector<std::string> overrides;

  RunConfig load() const {
    RunConfig cfg = config_path.empty() ? RunConfig{} : load_config(config_path);
    for (const auto& kv : overrides) {
      const auto eq = kv.find('=');
      if (eq == std::string::npos) throw ConfigError("--set expects key=value, got '" + kv + "'");
      set_config_value(cfg, detail::trim(kv.substr(0, eq)), detail::trim(kv.substr(eq + 1)));
    }
    if (seed) cfg.seed = *seed;
    if (!out.empty()) cfg.out = out;
    return cfg;
  }
};

void add_common(CLI::App* cmd, Common& common) {
  cmd->add_option("--config", common.config_path, "key = value configuration file");
  cmd->add_option("--seed", common.seed, "override the config seed");
  cmd->add_option("--out", common.out, "output path");
  cmd->add_option("--set", common.overrides, "override one config key (key=value); repeatable");
}

// Writes to --out when given, else stdout.
template <typename F>
void with_report(const std::string& path, F&& body) {
  if (path.empty()) {
    body(std::cout);
    return;
  }
  std::ofstream file(path, std::ios::binary | std::ios::trunc);
  if (!file) throw ConfigError("cannot write '" + path + "'");
  body(file);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Low-latency multichannel speech enhancement (D-LL-RNN)"};
  app.require_subcommand(1);
  Common common;

  auto* simulate = app.add_subcommand("simulate", "generate a simulated multichannel dataset and manifest");
  add_common(simulate, common);

  auto* train = app.add_subcommand("train", "train a model on a dataset manifest");
  add_common(train, common);
  std::string train_manifest, train_resume;
  train->add_option("--manifest", train_manifest, "dataset manifest (overrides config)");
  train->add_option("--resume", train_resume, "checkpoint to resume from (expects <path>.opt alongside)");

  auto* enhance = app.add_subcommand("enhance", "enhance a multichannel WAV");
  add_common(enhance, common);
  std::string enhance_ckpt, enhance_in;
  bool streaming = false;
  enhance->add_option("--checkpoint", enhance_ckpt, "model checkpoint");
  enhance->add_option("input", enhance_in, "C-channel 16 kHz WAV")->required();
  enhance->add_flag("--streaming", streaming, "process frame by frame");

  auto* count = app.add_subcommand("count", "parameter and FLOP table");
  add_common(count, common);
  std::vector<std::string> count_names;
  count->add_option("models", count_names, "model names F-S-B (default: the reference set)");

  auto* evaluate = app.add_subcommand("evaluate", "SI-SDR report over a manifest");
  add_common(evaluate, common);
  std::string eval_manifest, eval_ckpt, eval_enhancer = "model";
  evaluate->add_option("--manifest", eval_manifest, "dataset manifest (overrides config)");
  evaluate->add_option("--checkpoint", eval_ckpt, "model checkpoint (overrides config)");
  evaluate->add_option("--enhancer", eval_enhancer, "model, identity or oracle");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  try {
    RunConfig cfg = common.load();
    if (*simulate) {
      cmd_simulate(cfg, std::cout);
    } else if (*train) {
      if (!train_manifest.empty()) cfg.manifest = train_manifest;
      if (!train_resume.empty()) cfg.resume = train_resume;
      cmd_train(cfg, std::cout);
    } else if (*enhance) {
      const std::string ckpt = enhance_ckpt.empty() ? cfg.checkpoint : enhance_ckpt;
      cmd_enhance(ckpt, enhance_in, cfg.out, streaming, std::cout);
    } else if (*count) {
      cfg.validate();
      with_report(cfg.out, [&](std::ostream& os) { cmd_count(count_names, cfg.model, os); });
    } else if (*evaluate) {
      if (!eval_manifest.empty()) cfg.manifest = eval_manifest;
      if (!eval_ckpt.empty()) cfg.checkpoint = eval_ckpt;
      const Enhancer enhancer = parse_enhancer(eval_enhancer);
      EvaluationSummary summary;
      with_report(cfg.out, [&](std::ostream& os) { summary = cmd_evaluate(cfg, enhancer, os, std::cerr); });
      if (!summary.failures.empty()) return 2;
    }
  } catch (const std::exception& e) {
    std::cerr << "dllrnn: " << e.what() << "\n";
    return exit_code_for(e);
  }
  return 0;
}
