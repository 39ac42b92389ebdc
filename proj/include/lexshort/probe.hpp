#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "lexshort/corpus.hpp"
#include "lexshort/model.hpp"
#include "lexshort/vocab.hpp"

namespace lexshort {

// One dumped token occurrence. The vectors live in the owning StateDump,
// row `row` of `embeddings` and of every `layers[l]`.
struct StateEntry {
  std::size_t sentence = 0;
  std::size_t position = 0;   // token position within its sentence
  bool decoder = false;       // encoder or decoder sub-network
  int token = 0;
  std::string tag;            // synthetic word-class tag
  std::size_t freq_rank = 0;  // 0 = most frequent token of this sub-network
  bool unk = false;           // original token missing from the vocabulary
};

// Hidden states collected from a frozen model over a corpus: the scaled table
// embedding E plus the post-layer-norm output H_l of every layer 0..N, with
// padding excluded. Encoder rows align to source tokens; decoder rows align
// to target tokens under teacher forcing (the state whose input is that
// token).
struct StateDump {
  std::size_t n_layers = 0;
  std::size_t d_model = 0;
  std::size_t vocab_size = 0;
  std::vector<StateEntry> entries;
  Tensor embeddings;           // [entries x d]
  std::vector<Tensor> layers;  // n_layers+1 tensors, each [entries x d]
};

StateDump dump_states(const Model& model, const ParallelCorpus& corpus,
                      const Vocabulary& vocab, std::size_t max_sentences = 0);

// dir/index.jsonl + dir/states.bin (tensor blobs)
void save_state_dump(const std::string& dir, const StateDump& dump);
StateDump load_state_dump(const std::string& dir);

struct ProbeConfig {
  std::size_t hidden = 512;
  double dropout = 0.5;
  std::size_t epochs = 20;
  double lr = 1e-3;
  std::uint64_t seed = 1;
  double test_fraction = 0.2;  // split by sentence, never by position
  std::size_t batch_size = 64;
  std::size_t patience = 3;    // epochs without train-loss progress before stopping
  bool decoder = false;        // which sub-network to read
};

struct ProbeResult {
  std::size_t layer = 0;
  bool decoder = false;
  double accuracy = 0.0;        // held-out
  double train_accuracy = 0.0;
  std::size_t train_count = 0;
  std::size_t test_count = 0;
  std::size_t epochs_run = 0;
  std::vector<std::size_t> test_entries;  // indices into dump.entries
  std::vector<int> predictions;           // aligned with test_entries
};

// Trains a hidden/ReLU/dropout classifier from layer states to token ids on
// the sentence-level train split and reports held-out accuracy. The dumped
// model is never touched.
ProbeResult train_probe(const StateDump& dump, std::size_t layer,
                        const ProbeConfig& config = {});

struct CosineProfile {
  std::vector<double> encoder;  // per layer, mean cos(E, H_l); NaN when empty
  std::vector<double> decoder;
  std::vector<std::size_t> encoder_counts;
  std::vector<std::size_t> decoder_counts;
  std::size_t skipped = 0;  // zero-norm pairs
};

CosineProfile cosine_profile(const StateDump& dump);

struct ConditionedRow {
  std::string key;        // bin number ("1" = least frequent) or tag name
  std::size_t count = 0;
  double accuracy = 0.0;
};

struct ConditionedTable {
  std::size_t layer = 0;
  bool decoder = false;
  std::string condition;  // frequency | tag
  bool reduced_bins = false;
  std::vector<ConditionedRow> rows;
};

// Slices a probe's held-out predictions by token frequency bin or by tag.
// Frequency bins are equal-sized by occurrence count (+-1), bin 1 least
// frequent; fewer distinct tokens than bins shrinks the bin count.
ConditionedTable conditioned_accuracy(const StateDump& dump, const ProbeResult& probe,
                                      const std::string& condition,
                                      std::size_t n_bins = 10);

struct GateStat {
  bool decoder = false;
  AttentionSite site = AttentionSite::SelfAttention;
  std::size_t layer = 0;  // 1-based
  double mean_k = 0.0, std_k = 0.0;
  double mean_v = 0.0, std_v = 0.0;
  std::size_t count = 0;  // scalar activations per gate
};

// Mean/std of the gate activations r^K, r^V over a corpus, one row per
// gated attention block. Requires a gated shortcut variant.
std::vector<GateStat> gate_stats(const Model& model, const ParallelCorpus& corpus,
                                 const Vocabulary& vocab,
                                 std::size_t max_sentences = 0);

void write_gate_csv(const std::string& path, const std::vector<GateStat>& stats);

struct ProbeReport {
  std::vector<ProbeResult> probes;
  CosineProfile cosine;
  std::vector<ConditionedTable> conditioned;
  std::vector<GateStat> gates;
};

// report.json plus probe_accuracy.csv / cosine.csv / conditioned.csv (and
// gates.csv when gate rows are present) under dir.
void save_probe_report(const std::string& dir, const ProbeReport& report);

}  // namespace lexshort
