#pragma once

#include <array>
#include <cstddef>
#include <string>
#include <vector>

namespace lexshort {

// Corpus-level BLEU over whitespace-tokenized lines: geometric mean of
// clipped 1..4-gram precisions times a brevity penalty. No smoothing, so a
// corpus with zero 4-gram matches scores 0.
struct BleuReport {
  double score = 0.0;
  std::array<double, 4> precisions{};
  std::size_t hyp_length = 0;
  std::size_t ref_length = 0;
  double brevity_penalty = 0.0;
};

BleuReport bleu_report(const std::vector<std::string>& hypotheses,
                       const std::vector<std::string>& references);

double bleu(const std::vector<std::string>& hypotheses,
            const std::vector<std::string>& references);

// Per-sentence diagnostic with add-one smoothed precisions. Not comparable
// with the unsmoothed corpus score; useful for inspecting single pairs.
double sentence_bleu(const std::string& hypothesis, const std::string& reference);

}  // namespace lexshort
