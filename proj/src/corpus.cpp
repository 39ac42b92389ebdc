#include "lexshort/corpus.hpp"

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <set>
#include <stdexcept>

#include <json.hpp>

#include "lexshort/tensor.hpp"
#include "lexshort/vocab.hpp"

namespace lexshort {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct Lexicon {
  const CorpusConfig& cfg;

  std::string content(std::size_t k) const { return "s" + std::to_string(k); }
  std::string function_word(std::size_t k) const { return "f" + std::to_string(k); }
  std::string trigger(std::size_t k) const { return "m" + std::to_string(k); }

  bool is_ambiguous(const std::string& tok, std::size_t* type = nullptr) const {
    if (tok.size() < 2 || tok[0] != 's') return false;
    const std::size_t k = std::stoul(tok.substr(1));
    if (k >= cfg.ambiguous_types) return false;
    if (type) *type = k;
    return true;
  }

  std::string translate(const std::string& tok, const std::set<std::size_t>& triggers) const {
    const std::size_t k = tok.size() > 1 ? std::stoul(tok.substr(1)) : 0;
    switch (tok[0]) {
      case 's':
        if (k < cfg.ambiguous_types && !triggers.count(k)) return "u" + std::to_string(k);
        return "t" + std::to_string(k);
      case 'f':
        return "g" + std::to_string(k);
      case 'm':
        return "n" + std::to_string(k);
      default:
        throw std::logic_error("corpus: untranslatable token " + tok);
    }
  }

  // Zipf-weighted content pick: rank r with weight 1/(r+1).
  std::size_t zipf(Rng& rng) const {
    double total = 0;
    for (std::size_t r = 0; r < cfg.content_types; ++r) total += 1.0 / double(r + 1);
    double x = rng.uniform(0.0, total);
    for (std::size_t r = 0; r < cfg.content_types; ++r) {
      x -= 1.0 / double(r + 1);
      if (x <= 0) return r;
    }
    return cfg.content_types - 1;
  }

  std::vector<std::string> sample_tokens(Rng& rng) const {
    const std::size_t len = cfg.min_len + rng.integer(cfg.max_len - cfg.min_len + 1);
    std::vector<std::string> toks;
    for (std::size_t i = 0; i < len; ++i) {
      if (cfg.function_types > 0 && rng.bernoulli(0.3)) {
        toks.push_back(function_word(rng.integer(cfg.function_types)));
      } else {
        toks.push_back(content(zipf(rng)));
      }
    }
    return toks;
  }

  // Triggers land at a random position, so the distance between a trigger
  // and the word it disambiguates varies sentence to sentence.
  void place_triggers(std::vector<std::string>& toks, Rng& rng,
                      std::set<std::size_t>& present) const {
    std::set<std::size_t> ambiguous;
    for (const auto& t : toks) {
      std::size_t k;
      if (is_ambiguous(t, &k)) ambiguous.insert(k);
    }
    for (std::size_t k : ambiguous) {
      if (rng.bernoulli(cfg.trigger_rate)) {
        const std::size_t pos = rng.integer(toks.size() + 1);
        toks.insert(toks.begin() + pos, trigger(k));
        present.insert(k);
      }
    }
  }

  std::pair<std::string, std::string> make_pair(Rng& rng) const {
    std::vector<std::string> toks = sample_tokens(rng);
    std::set<std::size_t> triggers;
    if (cfg.task == "lexicon") place_triggers(toks, rng, triggers);
    std::string src = join_tokens(toks);
    if (cfg.task == "copy") return {src, src};
    if (cfg.task == "reverse") {
      std::vector<std::string> rev(toks.rbegin(), toks.rend());
      return {src, join_tokens(rev)};
    }
    std::vector<std::string> out;
    out.reserve(toks.size());
    for (const auto& t : toks) out.push_back(translate(t, triggers));
    return {src, join_tokens(out)};
  }
};

}  // namespace

GeneratedCorpus gen_corpus(const CorpusConfig& cfg) {
  if (cfg.task != "copy" && cfg.task != "reverse" && cfg.task != "lexicon") {
    throw std::invalid_argument("gen_corpus: unknown task '" + cfg.task + "'");
  }
  if (cfg.min_len == 0 || cfg.max_len < cfg.min_len) {
    throw std::invalid_argument("gen_corpus: invalid length range");
  }
  if (cfg.content_types == 0) throw std::invalid_argument("gen_corpus: no content types");
  if (cfg.ambiguous_types > cfg.content_types) {
    throw std::invalid_argument("gen_corpus: more ambiguous types than content types");
  }
  const std::size_t n_valid =
      static_cast<std::size_t>(cfg.valid_fraction * double(cfg.size) + 0.5);
  const std::size_t n_test =
      static_cast<std::size_t>(cfg.test_fraction * double(cfg.size) + 0.5);
  if (n_valid + n_test >= cfg.size || (cfg.valid_fraction > 0 && n_valid == 0) ||
      (cfg.test_fraction > 0 && n_test == 0)) {
    throw std::invalid_argument("gen_corpus: size " + std::to_string(cfg.size) +
                                " cannot satisfy the requested splits");
  }

  Lexicon lex{cfg};
  Rng rng = Rng(cfg.seed).split("corpus");
  std::set<std::string> seen;
  std::vector<std::pair<std::string, std::string>> pairs;
  std::size_t attempts = 0;
  const std::size_t max_attempts = cfg.size * 200 + 10000;
  while (pairs.size() < cfg.size) {
    if (++attempts > max_attempts) {
      throw std::runtime_error(
          "gen_corpus: could not draw enough distinct sentences; enlarge the token "
          "inventory or length range");
    }
    auto p = lex.make_pair(rng);
    if (!seen.insert(p.first).second) continue;
    pairs.push_back(std::move(p));
  }

  GeneratedCorpus out;
  auto emit = [&](ParallelCorpus& split, std::size_t begin, std::size_t end) {
    for (std::size_t i = begin; i < end; ++i) {
      split.src.push_back(pairs[i].first);
      split.tgt.push_back(pairs[i].second);
    }
  };
  emit(out.test, 0, n_test);
  emit(out.valid, n_test, n_test + n_valid);
  emit(out.train, n_test + n_valid, pairs.size());

  if (cfg.task == "lexicon" && cfg.contrastive_size > 0) {
    if (cfg.ambiguous_types == 0) {
      throw std::invalid_argument("gen_corpus: contrastive records need ambiguous entries");
    }
    Rng crng = Rng(cfg.seed).split("contrastive");
    std::size_t produced = 0;
    std::size_t guard = 0;
    while (produced < cfg.contrastive_size) {
      if (++guard > max_attempts) {
        throw std::runtime_error("gen_corpus: could not draw enough contrastive records");
      }
      const std::size_t type = crng.integer(cfg.ambiguous_types);
      const bool with_trigger = produced % 2 == 0;  // balanced senses
      std::vector<std::string> toks = lex.sample_tokens(crng);
      // exactly one occurrence of the probed type, no stray triggers for it
      bool placed = false;
      for (auto& t : toks) {
        std::size_t k;
        if (lex.is_ambiguous(t, &k) && k == type) {
          if (placed) {
            t = cfg.content_types > cfg.ambiguous_types
                    ? lex.content(cfg.ambiguous_types +
                                  crng.integer(cfg.content_types - cfg.ambiguous_types))
                    : lex.function_word(0);
          }
          placed = true;
        }
      }
      if (!placed) toks[crng.integer(toks.size())] = lex.content(type);
      std::set<std::size_t> triggers;
      lex.place_triggers(toks, crng, triggers);
      if (with_trigger && !triggers.count(type)) {
        const std::size_t pos = crng.integer(toks.size() + 1);
        toks.insert(toks.begin() + pos, lex.trigger(type));
        triggers.insert(type);
      } else if (!with_trigger && triggers.count(type)) {
        toks.erase(std::find(toks.begin(), toks.end(), lex.trigger(type)));
        triggers.erase(type);
      }
      const std::string src = join_tokens(toks);
      if (seen.count(src)) continue;

      std::vector<std::string> correct, wrong;
      for (const auto& t : toks) correct.push_back(lex.translate(t, triggers));
      std::set<std::size_t> flipped = triggers;
      if (flipped.count(type)) {
        flipped.erase(type);
      } else {
        flipped.insert(type);
      }
      for (const auto& t : toks) {
        std::size_t k;
        if (lex.is_ambiguous(t, &k) && k == type) {
          wrong.push_back(lex.translate(t, flipped));
        } else {
          wrong.push_back(lex.translate(t, triggers));
        }
      }
      out.contrastive.push_back({src, join_tokens(correct), {join_tokens(wrong)}});
      ++produced;
    }
  }
  return out;
}

std::string token_tag(const std::string& token) {
  if (token.empty()) return "special";
  switch (token[0]) {
    case 's':
      return token == "s" ? "special" : "content";
    case 't':
    case 'u':
      return "content";
    case 'f':
    case 'g':
      return "function";
    case 'm':
    case 'n':
      return "trigger";
    default:
      return "special";
  }
}

void write_parallel(const std::string& dir, const std::string& name, const ParallelCorpus& c) {
  if (c.src.size() != c.tgt.size()) {
    throw std::invalid_argument("write_parallel: side lengths differ");
  }
  fs::create_directories(dir);
  std::ofstream src(fs::path(dir) / (name + ".src"));
  std::ofstream tgt(fs::path(dir) / (name + ".tgt"));
  if (!src || !tgt) throw std::runtime_error("write_parallel: cannot open outputs in " + dir);
  for (std::size_t i = 0; i < c.src.size(); ++i) {
    src << c.src[i] << "\n";
    tgt << c.tgt[i] << "\n";
  }
}

ParallelCorpus read_parallel(const std::string& src_path, const std::string& tgt_path) {
  std::ifstream src(src_path), tgt(tgt_path);
  if (!src) throw std::runtime_error("read_parallel: cannot open " + src_path);
  if (!tgt) throw std::runtime_error("read_parallel: cannot open " + tgt_path);
  ParallelCorpus c;
  std::string line;
  while (std::getline(src, line)) c.src.push_back(line);
  while (std::getline(tgt, line)) c.tgt.push_back(line);
  if (c.src.size() != c.tgt.size()) {
    throw std::runtime_error("read_parallel: " + src_path + " and " + tgt_path +
                             " have different line counts");
  }
  return c;
}

void write_contrastive(const std::string& path, const std::vector<ContrastiveRecord>& records) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("write_contrastive: cannot open " + path);
  for (const auto& r : records) {
    json j;
    j["src"] = r.src;
    j["correct"] = r.correct;
    j["incorrect"] = r.incorrect;
    out << j.dump() << "\n";
  }
}

std::vector<ContrastiveRecord> read_contrastive(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("read_contrastive: cannot open " + path);
  std::vector<ContrastiveRecord> records;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    json j = json::parse(line, nullptr, false);
    if (j.is_discarded() || !j.contains("src") || !j.contains("correct")) {
      throw std::runtime_error("read_contrastive: malformed record at line " +
                               std::to_string(line_no));
    }
    ContrastiveRecord r;
    r.src = j.at("src").get<std::string>();
    r.correct = j.at("correct").get<std::string>();
    r.incorrect = j.value("incorrect", std::vector<std::string>{});
    records.push_back(std::move(r));
  }
  return records;
}

}  // namespace lexshort
