#pragma once

#include <iosfwd>
#include <stdexcept>
#include <string>
#include <vector>

#include "lexshort/corpus.hpp"
#include "lexshort/model.hpp"
#include "lexshort/probe.hpp"
#include "lexshort/train.hpp"

namespace lexshort {

inline constexpr int kExitOk = 0;
inline constexpr int kExitUsage = 1;
inline constexpr int kExitData = 2;
inline constexpr int kExitNumeric = 3;

// Malformed configs or overrides; maps to the usage exit code.
struct ConfigError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

struct DataPaths {
  std::string dir = "data";
  std::string train_prefix = "train";
  std::string valid_prefix = "valid";
  std::string test_prefix = "test";
  std::string vocab;        // empty: <dir>/vocab.txt
  std::string contrastive;  // empty: <dir>/contrastive.jsonl
};

struct BeamOptions {
  std::size_t size = 16;
  double len_penalty = 1.0;
  std::size_t max_len = 0;  // 0: model limit
};

// Everything a command needs, loadable from one JSON file with dotted-key
// overrides. Unknown keys are rejected so typos fail loudly.
struct RunConfig {
  DataPaths data;
  CorpusConfig corpus;
  ModelConfig model;  // vocab_size 0 resolves from the saved vocabulary
  TrainConfig train;  // out_dir is ignored; run_dir wins
  ProbeConfig probe;
  std::size_t probe_sentences = 0;  // dump cap, 0 = whole corpus
  std::size_t probe_bins = 10;
  std::string run_dir = "run";
  std::string checkpoint;  // empty: newest checkpoint under run_dir
  bool resume = true;
  BeamOptions beam;
  std::string input;   // translate source file
  std::string output;  // translate/evaluate destination
  bool length_normalized = false;  // contrastive scoring mode
  bool plot = false;               // emit SVG charts alongside reports
};

std::string run_config_to_json(const RunConfig& config);
RunConfig run_config_from_json(const std::string& text);

// Loads `path` (or defaults when empty) and applies "a.b=value" overrides.
RunConfig resolve_config(const std::string& path, const std::vector<std::string>& overrides);

int cmd_gen_data(const RunConfig& config, std::ostream& out);
int cmd_train(const RunConfig& config, std::ostream& out);
int cmd_translate(const RunConfig& config, std::ostream& out);
int cmd_evaluate(const RunConfig& config, std::ostream& out);
int cmd_probe(const RunConfig& config, std::ostream& out);
int cmd_analyze(const RunConfig& config, std::ostream& out);

// gen-data | train | translate | evaluate | probe | analyze
int run_command(const std::string& command, const RunConfig& config, std::ostream& out);

}  // namespace lexshort
