#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "lexshort/commands.hpp"

using namespace lexshort;

int main(int argc, char** argv) {
  CLI::App app{"transformer translation toolkit with gated lexical shortcut connections"};
  app.require_subcommand(1);

  std::string config_path;
  std::vector<std::string> flag_overrides;  // applied before positional settings
  std::vector<std::string> settings;
  bool plot = false;

  const auto common = [&](CLI::App* sub) {
    sub->add_option("--config", config_path, "JSON run configuration");
    sub->add_option("settings", settings, "dotted key=value overrides, e.g. model.d_model=128");
    sub->add_flag("--plot", plot, "emit SVG charts next to reports");
    return sub;
  };
  const auto forward = [&](CLI::App* sub, const std::string& flag, const std::string& key,
                           const std::string& help) {
    sub->add_option_function<std::string>(
        flag, [&flag_overrides, key](const std::string& v) { flag_overrides.push_back(key + "=" + v); },
        help);
  };

  auto* gen = common(app.add_subcommand("gen-data", "generate a synthetic parallel corpus"));
  forward(gen, "--task", "corpus.task", "copy | reverse | lexicon");
  forward(gen, "--size", "corpus.size", "sentences across all splits");
  forward(gen, "--seed", "corpus.seed", "corpus seed");
  forward(gen, "--out", "data.dir", "output data directory");

  auto* train = common(app.add_subcommand("train", "train a model into a run directory"));
  forward(train, "--data", "data.dir", "data directory from gen-data");
  forward(train, "--run-dir", "run_dir", "run directory for checkpoints and metrics");
  forward(train, "--steps", "train.steps", "total optimizer steps");
  forward(train, "--variant", "model.variant",
          "none | lexical | fusion | nonlexical | dec2enc | dec2enc+self");

  auto* translate = common(app.add_subcommand("translate", "decode a file of source sentences"));
  forward(translate, "--data", "data.dir", "data directory holding the vocabulary");
  forward(translate, "--run-dir", "run_dir", "run directory holding the checkpoint");
  forward(translate, "--checkpoint", "checkpoint", "checkpoint file (default: newest in run_dir)");
  forward(translate, "--input", "input", "source sentences, one per line");
  forward(translate, "--output", "output", "destination file (default: stdout)");
  forward(translate, "--beam", "beam.size", "beam width");

  auto* evaluate = common(app.add_subcommand("evaluate", "report BLEU and contrastive accuracy"));
  forward(evaluate, "--data", "data.dir", "data directory with the test split and vocabulary");
  forward(evaluate, "--run-dir", "run_dir", "run directory holding the checkpoint");
  forward(evaluate, "--checkpoint", "checkpoint", "checkpoint file (default: newest in run_dir)");
  forward(evaluate, "--output", "output", "report path (default: run_dir/eval.json)");
  forward(evaluate, "--beam", "beam.size", "beam width");

  auto* probe = common(app.add_subcommand("probe", "dump states and train per-layer probes"));
  forward(probe, "--data", "data.dir", "data directory with the probing corpus");
  forward(probe, "--checkpoint", "checkpoint", "checkpoint file (default: newest in run_dir)");
  forward(probe, "--run-dir", "run_dir", "run directory holding the checkpoint");

  auto* analyze =
      common(app.add_subcommand("analyze", "full analysis report: probes, cosine, gates"));
  forward(analyze, "--data", "data.dir", "data directory with the probing corpus");
  forward(analyze, "--checkpoint", "checkpoint", "checkpoint file (default: newest in run_dir)");
  forward(analyze, "--run-dir", "run_dir", "run directory holding the checkpoint");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitUsage;
  }

  std::vector<std::string> overrides = flag_overrides;
  overrides.insert(overrides.end(), settings.begin(), settings.end());
  if (plot) overrides.push_back("plot=true");

  RunConfig config;
  try {
    config = resolve_config(config_path, overrides);
  } catch (const ConfigError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitUsage;
  }
  return run_command(app.get_subcommands().front()->get_name(), config, std::cout);
}
