#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace lexshort {

// Synthetic parallel data. Source words fall into three classes:
//   content  s<k>  -> t<k>   (ambiguous entries translate to t<k> when the
//                             matching trigger m<k> is present, else u<k>)
//   function f<k>  -> g<k>   (high-frequency filler)
//   trigger  m<k>  -> n<k>
struct CorpusConfig {
  std::string task = "copy";  // copy | reverse | lexicon
  std::size_t size = 1000;    // sentences across all splits
  std::uint64_t seed = 1;
  std::size_t content_types = 20;
  std::size_t function_types = 3;
  std::size_t min_len = 3;
  std::size_t max_len = 10;
  double valid_fraction = 0.1;
  double test_fraction = 0.1;
  // lexicon task only
  std::size_t ambiguous_types = 4;
  double trigger_rate = 0.5;
  std::size_t contrastive_size = 200;
};

struct ParallelCorpus {
  std::vector<std::string> src, tgt;  // space-joined tokens, one sentence per entry
};

struct ContrastiveRecord {
  std::string src;
  std::string correct;
  std::vector<std::string> incorrect;
};

struct GeneratedCorpus {
  ParallelCorpus train, valid, test;
  std::vector<ContrastiveRecord> contrastive;  // lexicon task only
};

// Deterministic per seed. Sentences are unique across splits; the lexicon
// task additionally emits sense-contrastive records disjoint from them.
GeneratedCorpus gen_corpus(const CorpusConfig& config);

// content | function | trigger | special
std::string token_tag(const std::string& token);

void write_parallel(const std::string& dir, const std::string& name, const ParallelCorpus& c);
ParallelCorpus read_parallel(const std::string& src_path, const std::string& tgt_path);

void write_contrastive(const std::string& path, const std::vector<ContrastiveRecord>& records);
std::vector<ContrastiveRecord> read_contrastive(const std::string& path);

}  // namespace lexshort
