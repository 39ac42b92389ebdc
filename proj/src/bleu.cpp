#include "lexshort/bleu.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <stdexcept>

#include "lexshort/vocab.hpp"

namespace lexshort {
namespace {

constexpr std::size_t kMaxOrder = 4;

using NgramCounts = std::map<std::string, std::size_t>;

NgramCounts count_ngrams(const std::vector<std::string>& tokens, std::size_t n) {
  NgramCounts counts;
  if (tokens.size() < n) return counts;
  for (std::size_t i = 0; i + n <= tokens.size(); ++i) {
    std::string key = tokens[i];
    for (std::size_t j = 1; j < n; ++j) {
      key += ' ';
      key += tokens[i + j];
    }
    ++counts[key];
  }
  return counts;
}

struct PairStats {
  std::array<std::size_t, kMaxOrder> matches{};
  std::array<std::size_t, kMaxOrder> totals{};
  std::size_t hyp_len = 0;
  std::size_t ref_len = 0;
};

PairStats pair_stats(const std::string& hyp, const std::string& ref) {
  PairStats s;
  const std::vector<std::string> h = split_tokens(hyp);
  const std::vector<std::string> r = split_tokens(ref);
  s.hyp_len = h.size();
  s.ref_len = r.size();
  for (std::size_t n = 1; n <= kMaxOrder; ++n) {
    const NgramCounts hc = count_ngrams(h, n);
    const NgramCounts rc = count_ngrams(r, n);
    for (const auto& [gram, count] : hc) {
      s.totals[n - 1] += count;
      auto it = rc.find(gram);
      if (it != rc.end()) s.matches[n - 1] += std::min(count, it->second);
    }
  }
  return s;
}

}  // namespace

BleuReport bleu_report(const std::vector<std::string>& hypotheses,
                       const std::vector<std::string>& references) {
  if (hypotheses.empty()) throw std::invalid_argument("bleu: empty corpus");
  if (hypotheses.size() != references.size())
    throw std::invalid_argument("bleu: hypothesis/reference count mismatch");

  std::array<std::size_t, kMaxOrder> matches{};
  std::array<std::size_t, kMaxOrder> totals{};
  BleuReport report;
  for (std::size_t i = 0; i < hypotheses.size(); ++i) {
    const PairStats s = pair_stats(hypotheses[i], references[i]);
    report.hyp_length += s.hyp_len;
    report.ref_length += s.ref_len;
    for (std::size_t n = 0; n < kMaxOrder; ++n) {
      matches[n] += s.matches[n];
      totals[n] += s.totals[n];
    }
  }

  bool zero = false;
  double log_prec = 0.0;
  for (std::size_t n = 0; n < kMaxOrder; ++n) {
    report.precisions[n] =
        totals[n] == 0 ? 0.0 : double(matches[n]) / double(totals[n]);
    if (report.precisions[n] <= 0.0)
      zero = true;
    else
      log_prec += std::log(report.precisions[n]);
  }

  if (report.hyp_length == 0) {
    report.brevity_penalty = 0.0;
  } else if (report.hyp_length >= report.ref_length) {
    report.brevity_penalty = 1.0;
  } else {
    report.brevity_penalty =
        std::exp(1.0 - double(report.ref_length) / double(report.hyp_length));
  }

  report.score =
      zero ? 0.0 : 100.0 * report.brevity_penalty * std::exp(log_prec / kMaxOrder);
  return report;
}

double bleu(const std::vector<std::string>& hypotheses,
            const std::vector<std::string>& references) {
  return bleu_report(hypotheses, references).score;
}

double sentence_bleu(const std::string& hypothesis, const std::string& reference) {
  const PairStats s = pair_stats(hypothesis, reference);
  double log_prec = 0.0;
  for (std::size_t n = 0; n < kMaxOrder; ++n)
    log_prec += std::log(double(s.matches[n] + 1) / double(s.totals[n] + 1));
  double bp = 1.0;
  if (s.hyp_len == 0)
    bp = 0.0;
  else if (s.hyp_len < s.ref_len)
    bp = std::exp(1.0 - double(s.ref_len) / double(s.hyp_len));
  return 100.0 * bp * std::exp(log_prec / kMaxOrder);
}

}  // namespace lexshort
