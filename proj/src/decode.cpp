#include "lexshort/decode.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

namespace lexshort {
namespace {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();

template <class T>
std::vector<double> row_log_probs(const TensorT<T>& logits, std::size_t row) {
  const std::size_t vocab = logits.extent(logits.rank() - 1);
  const auto vals = logits.values();
  const T* x = vals.data() + row * vocab;
  double mx = kNegInf;
  for (std::size_t v = 0; v < vocab; ++v) mx = std::max(mx, double(x[v]));
  double sum = 0.0;
  for (std::size_t v = 0; v < vocab; ++v) sum += std::exp(double(x[v]) - mx);
  const double lse = mx + std::log(sum);
  std::vector<double> lp(vocab);
  for (std::size_t v = 0; v < vocab; ++v) lp[v] = double(x[v]) - lse;
  return lp;
}

double normalized(double sum, std::size_t len, double len_penalty) {
  return sum / std::pow(double(std::max<std::size_t>(len, 1)), len_penalty);
}

}  // namespace

template <class T>
BeamResult beam_search(const ModelT<T>& model, const std::vector<int>& src,
                       std::size_t beam_size, std::size_t max_len,
                       double len_penalty) {
  if (beam_size == 0) throw std::invalid_argument("beam_search: beam_size must be >= 1");
  if (max_len == 0) throw std::invalid_argument("beam_search: max_len must be >= 1");
  if (src.empty()) throw std::invalid_argument("beam_search: empty source sentence");

  const std::size_t width = beam_size;
  Rng rng(0);
  const TokenBatch src_batch =
      TokenBatch::from_rows(std::vector<std::vector<int>>(width, src), kPadId);
  const SubnetTraceT<T> enc = model.encode(src_batch, false, rng);

  struct Finished {
    std::vector<int> tokens;
    double sum;
    double norm;
    bool done;
  };

  DecodeCacheT<T> cache;
  std::vector<std::vector<int>> hyp_tokens(width);
  std::vector<double> sums(width, kNegInf);
  sums[0] = 0.0;
  std::vector<int> last(width, kBosId);
  std::vector<Finished> pool;

  for (std::size_t step = 0; step < max_len && pool.size() < beam_size; ++step) {
    const TensorT<T> logits = model.decode_step(cache, enc, last);

    struct Cand {
      double score;
      int token;
      std::size_t parent;
    };
    std::vector<Cand> cands;
    for (std::size_t b = 0; b < width; ++b) {
      if (!std::isfinite(sums[b])) continue;
      const std::vector<double> lp = row_log_probs(logits, b);
      for (std::size_t v = 0; v < lp.size(); ++v) {
        if (int(v) == kPadId) continue;  // padding is never emitted
        if (std::isfinite(lp[v])) cands.push_back({sums[b] + lp[v], int(v), b});
      }
    }
    if (cands.empty()) break;
    std::sort(cands.begin(), cands.end(), [](const Cand& a, const Cand& b) {
      if (a.score != b.score) return a.score > b.score;
      if (a.token != b.token) return a.token < b.token;
      return a.parent < b.parent;
    });
    if (cands.size() > 2 * beam_size) cands.resize(2 * beam_size);

    std::vector<std::vector<int>> next_tokens(width);
    std::vector<double> next_sums(width, kNegInf);
    std::vector<int> next_last(width, kPadId);
    std::vector<std::size_t> parents(width, 0);
    std::size_t live = 0;
    for (std::size_t i = 0; i < cands.size(); ++i) {
      const Cand& c = cands[i];
      if (c.token == kEosId) {
        if (i < beam_size && pool.size() < beam_size) {
          const std::size_t len = hyp_tokens[c.parent].size() + 1;
          pool.push_back({hyp_tokens[c.parent], c.score,
                          normalized(c.score, len, len_penalty), true});
        }
      } else if (live < width) {
        next_tokens[live] = hyp_tokens[c.parent];
        next_tokens[live].push_back(c.token);
        next_sums[live] = c.score;
        next_last[live] = c.token;
        parents[live] = c.parent;
        ++live;
      }
    }
    if (live == 0) break;

    cache = cache.gather(parents);
    hyp_tokens = std::move(next_tokens);
    sums = std::move(next_sums);
    last = std::move(next_last);
  }

  // The winner is the best normalized hypothesis the search saw, finished or
  // not; on an exact tie a finished one wins, then the lexicographically
  // smaller token sequence.
  for (std::size_t b = 0; b < width; ++b) {
    if (!std::isfinite(sums[b])) continue;
    pool.push_back({hyp_tokens[b], sums[b],
                    normalized(sums[b], hyp_tokens[b].size(), len_penalty), false});
  }
  if (pool.empty()) throw std::runtime_error("beam_search: no finite hypothesis");
  std::size_t best = 0;
  for (std::size_t i = 1; i < pool.size(); ++i) {
    const Finished& a = pool[i];
    const Finished& b = pool[best];
    if (a.norm > b.norm ||
        (a.norm == b.norm &&
         (a.done > b.done || (a.done == b.done && a.tokens < b.tokens))))
      best = i;
  }
  BeamResult out;
  out.tokens = pool[best].tokens;
  out.score = pool[best].norm;
  out.sum_logprob = pool[best].sum;
  out.finished = pool[best].done;
  return out;
}

template <class T>
std::vector<int> greedy_decode(const ModelT<T>& model, const std::vector<int>& src,
                               std::size_t max_len) {
  if (max_len == 0) throw std::invalid_argument("greedy_decode: max_len must be >= 1");
  if (src.empty()) throw std::invalid_argument("greedy_decode: empty source sentence");
  Rng rng(0);
  const TokenBatch src_batch = TokenBatch::from_rows({src}, kPadId);
  const SubnetTraceT<T> enc = model.encode(src_batch, false, rng);

  DecodeCacheT<T> cache;
  std::vector<int> out;
  std::vector<int> last = {kBosId};
  for (std::size_t step = 0; step < max_len; ++step) {
    const TensorT<T> logits = model.decode_step(cache, enc, last);
    const auto vals = logits.values();
    std::size_t best = kPadId == 0 ? 1 : 0;
    for (std::size_t v = best + 1; v < vals.size(); ++v)
      if (std::size_t(kPadId) != v && vals[v] > vals[best]) best = v;
    if (int(best) == kEosId) return out;
    out.push_back(int(best));
    last = {int(best)};
  }
  return out;
}

template <class T>
double sequence_logprob(const ModelT<T>& model, const std::vector<int>& src,
                        const std::vector<int>& tgt) {
  if (src.empty()) throw std::invalid_argument("sequence_logprob: empty source sentence");
  std::vector<int> tgt_in = {kBosId};
  tgt_in.insert(tgt_in.end(), tgt.begin(), tgt.end());
  std::vector<int> tgt_out = tgt;
  tgt_out.push_back(kEosId);

  Rng rng(0);
  const TokenBatch src_batch = TokenBatch::from_rows({src}, kPadId);
  const TokenBatch tgt_batch = TokenBatch::from_rows({tgt_in}, kPadId);
  const SubnetTraceT<T> enc = model.encode(src_batch, false, rng);
  const TensorT<T> logits = model.decode(tgt_batch, enc, false, rng);

  double total = 0.0;
  for (std::size_t pos = 0; pos < tgt_out.size(); ++pos)
    total += row_log_probs(logits, pos)[std::size_t(tgt_out[pos])];
  return total;
}

template <class T>
ContrastiveResult contrastive_score(const ModelT<T>& model,
                                    const std::vector<ContrastiveRecord>& records,
                                    const Vocabulary& vocab,
                                    bool length_normalized) {
  if (records.empty()) throw std::invalid_argument("contrastive_score: empty record set");
  ContrastiveResult res;
  for (const ContrastiveRecord& rec : records) {
    if (rec.incorrect.empty()) {
      ++res.skipped;
      continue;
    }
    const std::vector<int> src = vocab.encode(split_tokens(rec.src));
    const auto score = [&](const std::string& line) {
      const std::vector<int> ids = vocab.encode(split_tokens(line));
      const double sum = sequence_logprob(model, src, ids);
      return length_normalized ? sum / double(ids.size() + 1) : sum;
    };
    const double correct_score = score(rec.correct);
    bool won = true;
    bool tied = false;
    for (const std::string& alt : rec.incorrect) {
      const double s = score(alt);
      if (correct_score == s) tied = true;
      if (correct_score <= s) won = false;
    }
    if (tied) ++res.ties;
    if (won) ++res.correct;
    ++res.total;
  }
  if (res.total == 0)
    throw std::runtime_error("contrastive_score: every record lacked incorrect hypotheses");
  res.accuracy = double(res.correct) / double(res.total);
  return res;
}

template BeamResult beam_search(const ModelT<float>&, const std::vector<int>&,
                                std::size_t, std::size_t, double);
template BeamResult beam_search(const ModelT<double>&, const std::vector<int>&,
                                std::size_t, std::size_t, double);
template std::vector<int> greedy_decode(const ModelT<float>&, const std::vector<int>&,
                                        std::size_t);
template std::vector<int> greedy_decode(const ModelT<double>&, const std::vector<int>&,
                                        std::size_t);
template double sequence_logprob(const ModelT<float>&, const std::vector<int>&,
                                 const std::vector<int>&);
template double sequence_logprob(const ModelT<double>&, const std::vector<int>&,
                                 const std::vector<int>&);
template ContrastiveResult contrastive_score(const ModelT<float>&,
                                             const std::vector<ContrastiveRecord>&,
                                             const Vocabulary&, bool);
template ContrastiveResult contrastive_score(const ModelT<double>&,
                                             const std::vector<ContrastiveRecord>&,
                                             const Vocabulary&, bool);

}  // namespace lexshort
