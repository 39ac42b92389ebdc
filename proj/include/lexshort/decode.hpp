#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "lexshort/corpus.hpp"
#include "lexshort/model.hpp"
#include "lexshort/vocab.hpp"

namespace lexshort {

struct BeamResult {
  std::vector<int> tokens;    // best hypothesis, without BOS/EOS
  double score = 0.0;         // sum of log-probs / len^len_penalty
  double sum_logprob = 0.0;   // unnormalized sum
  bool finished = false;      // false when no hypothesis emitted EOS in budget
};

// Length-normalized beam search over a single source sentence. Candidates are
// ranked by summed log-prob with ties broken by token id, then parent beam.
// An EOS candidate is finalized when it ranks within the top beam_size of the
// step; the search stops once beam_size hypotheses have finished or the step
// budget runs out, and returns the best hypothesis it saw under
// sum/len^len_penalty, where len counts emitted tokens including EOS. A
// hypothesis still unfinished at that point can win; the flag records this.
// The padding id is never emitted.
template <class T>
BeamResult beam_search(const ModelT<T>& model, const std::vector<int>& src,
                       std::size_t beam_size, std::size_t max_len,
                       double len_penalty = 1.0);

// Stepwise argmax decoding, smallest token id on ties. Stops at EOS.
template <class T>
std::vector<int> greedy_decode(const ModelT<T>& model, const std::vector<int>& src,
                               std::size_t max_len);

// Teacher-forced log P(tgt, EOS | src): the sum of per-step log-probs of the
// target tokens plus the closing EOS.
template <class T>
double sequence_logprob(const ModelT<T>& model, const std::vector<int>& src,
                        const std::vector<int>& tgt);

struct ContrastiveResult {
  std::size_t total = 0;    // scored records (skipped ones excluded)
  std::size_t correct = 0;
  std::size_t ties = 0;     // records with at least one exact score tie
  std::size_t skipped = 0;  // records without incorrect hypotheses
  double accuracy = 0.0;
};

// A record counts as correct only when the correct hypothesis scores strictly
// above every incorrect one; ties count as incorrect. Records with no
// incorrect hypotheses are skipped, and an all-skipped set is an error.
template <class T>
ContrastiveResult contrastive_score(const ModelT<T>& model,
                                    const std::vector<ContrastiveRecord>& records,
                                    const Vocabulary& vocab,
                                    bool length_normalized = false);

}  // namespace lexshort
