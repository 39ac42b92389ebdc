#include "lexshort/vocab.hpp"

#include <algorithm>
#include <fstream>
#include <map>
#include <sstream>
#include <stdexcept>

namespace lexshort {

Vocabulary::Vocabulary() {
  for (const char* t : {kPadToken, kBosToken, kEosToken, kUnkToken}) {
    tokens_.emplace_back(t);
    index_.emplace_back(t, static_cast<int>(tokens_.size()) - 1);
  }
  std::sort(index_.begin(), index_.end());
}

int Vocabulary::lookup(const std::string& token) const {
  auto it = std::lower_bound(index_.begin(), index_.end(),
                             std::make_pair(token, 0),
                             [](const auto& a, const auto& b) { return a.first < b.first; });
  if (it != index_.end() && it->first == token) return it->second;
  return -1;
}

int Vocabulary::add(const std::string& token) {
  if (token.empty()) throw std::invalid_argument("vocabulary: empty token");
  int found = lookup(token);
  if (found >= 0) return found;
  tokens_.push_back(token);
  const int id = static_cast<int>(tokens_.size()) - 1;
  index_.emplace_back(token, id);
  std::sort(index_.begin(), index_.end());
  return id;
}

int Vocabulary::id(const std::string& token) const {
  int found = lookup(token);
  return found >= 0 ? found : kUnkId;
}

bool Vocabulary::contains(const std::string& token) const { return lookup(token) >= 0; }

const std::string& Vocabulary::token(int id) const {
  if (id < 0 || id >= static_cast<int>(tokens_.size())) {
    throw std::out_of_range("vocabulary: id " + std::to_string(id) + " out of range (size " +
                            std::to_string(tokens_.size()) + ")");
  }
  return tokens_[static_cast<std::size_t>(id)];
}

std::vector<int> Vocabulary::encode(const std::vector<std::string>& tokens) const {
  std::vector<int> out;
  out.reserve(tokens.size());
  for (const auto& t : tokens) out.push_back(id(t));
  return out;
}

std::vector<std::string> Vocabulary::decode(const std::vector<int>& ids) const {
  std::vector<std::string> out;
  for (int id : ids) {
    if (id == kPadId || id == kBosId || id == kEosId) continue;
    out.push_back(token(id));
  }
  return out;
}

void Vocabulary::save(const std::string& path) const {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("vocabulary: cannot open " + path);
  for (const auto& t : tokens_) out << t << "\n";
  if (!out) throw std::runtime_error("vocabulary: write failed for " + path);
}

Vocabulary Vocabulary::load(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("vocabulary: cannot open " + path);
  Vocabulary v;
  std::string line;
  std::size_t index = 0;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    if (index < 4) {
      if (line != v.tokens_[index]) {
        throw std::runtime_error("vocabulary: " + path + " does not start with the reserved " +
                                 "entries (line " + std::to_string(index + 1) + " is '" + line +
                                 "')");
      }
    } else {
      v.add(line);
    }
    ++index;
  }
  if (index < 4) throw std::runtime_error("vocabulary: " + path + " is truncated");
  return v;
}

Vocabulary Vocabulary::from_tokens(const std::vector<std::vector<std::string>>& sentences,
                                   std::size_t max_size, std::size_t min_count) {
  std::map<std::string, std::size_t> counts;
  for (const auto& s : sentences)
    for (const auto& t : s) ++counts[t];
  std::vector<std::pair<std::string, std::size_t>> ranked(counts.begin(), counts.end());
  std::sort(ranked.begin(), ranked.end(), [](const auto& a, const auto& b) {
    if (a.second != b.second) return a.second > b.second;
    return a.first < b.first;
  });
  Vocabulary v;
  for (const auto& [token, count] : ranked) {
    if (count < min_count) break;
    if (max_size > 0 && v.size() >= max_size) break;
    v.add(token);
  }
  return v;
}

std::vector<std::string> split_tokens(const std::string& line) {
  std::istringstream in(line);
  std::vector<std::string> out;
  std::string tok;
  while (in >> tok) out.push_back(tok);
  return out;
}

std::string join_tokens(const std::vector<std::string>& tokens) {
  std::string out;
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    if (i) out += ' ';
    out += tokens[i];
  }
  return out;
}

// ---- byte pair encoding ---------------------------------------------------

namespace {

using Word = std::vector<std::string>;

Word to_symbols(const std::string& word) {
  Word out;
  for (char c : word) out.emplace_back(1, c);
  return out;
}

void merge_in_place(Word& w, const BpeMerge& m) {
  Word out;
  out.reserve(w.size());
  std::size_t i = 0;
  while (i < w.size()) {
    if (i + 1 < w.size() && w[i] == m.left && w[i + 1] == m.right) {
      out.push_back(m.left + m.right);
      i += 2;
    } else {
      out.push_back(w[i]);
      i += 1;
    }
  }
  w = std::move(out);
}

}  // namespace

std::vector<BpeMerge> learn_bpe(const std::vector<std::string>& lines, std::size_t n_merges) {
  std::map<std::string, std::size_t> word_counts;
  for (const auto& line : lines)
    for (const auto& w : split_tokens(line)) ++word_counts[w];
  if (word_counts.empty()) throw std::invalid_argument("bpe: empty corpus");

  std::vector<std::pair<Word, std::size_t>> words;
  words.reserve(word_counts.size());
  for (const auto& [w, c] : word_counts) words.emplace_back(to_symbols(w), c);

  std::vector<BpeMerge> merges;
  for (std::size_t round = 0; round < n_merges; ++round) {
    std::map<std::pair<std::string, std::string>, std::size_t> pair_counts;
    for (const auto& [word, count] : words)
      for (std::size_t i = 0; i + 1 < word.size(); ++i)
        pair_counts[{word[i], word[i + 1]}] += count;

    std::pair<std::string, std::string> best;
    std::size_t best_count = 0;
    for (const auto& [pair, count] : pair_counts) {
      // map iteration is sorted, so the first maximum is the smallest pair
      if (count > best_count) {
        best = pair;
        best_count = count;
      }
    }
    if (best_count < 2) break;
    BpeMerge m{best.first, best.second};
    merges.push_back(m);
    for (auto& [word, count] : words) merge_in_place(word, m);
  }
  return merges;
}

std::vector<std::string> apply_bpe_word(const std::string& word,
                                        const std::vector<BpeMerge>& merges) {
  if (word.empty()) return {};
  Word symbols = to_symbols(word);
  for (const auto& m : merges) merge_in_place(symbols, m);
  std::vector<std::string> out;
  out.reserve(symbols.size());
  for (std::size_t i = 0; i < symbols.size(); ++i) {
    out.push_back(i + 1 < symbols.size() ? symbols[i] + "@@" : symbols[i]);
  }
  return out;
}

std::vector<std::string> apply_bpe_line(const std::string& line,
                                        const std::vector<BpeMerge>& merges) {
  std::vector<std::string> out;
  for (const auto& w : split_tokens(line)) {
    auto pieces = apply_bpe_word(w, merges);
    out.insert(out.end(), pieces.begin(), pieces.end());
  }
  return out;
}

std::string bpe_join(const std::vector<std::string>& pieces) {
  std::vector<std::string> words;
  std::string current;
  for (const auto& p : pieces) {
    if (p.size() >= 2 && p.compare(p.size() - 2, 2, "@@") == 0) {
      current += p.substr(0, p.size() - 2);
    } else {
      current += p;
      words.push_back(current);
      current.clear();
    }
  }
  if (!current.empty()) words.push_back(current);  // dangling continuation
  return join_tokens(words);
}

void save_bpe(const std::string& path, const std::vector<BpeMerge>& merges) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("bpe: cannot open " + path);
  for (const auto& m : merges) out << m.left << ' ' << m.right << "\n";
  if (!out) throw std::runtime_error("bpe: write failed for " + path);
}

std::vector<BpeMerge> load_bpe(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("bpe: cannot open " + path);
  std::vector<BpeMerge> merges;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    auto parts = split_tokens(line);
    if (parts.size() != 2) throw std::runtime_error("bpe: malformed merge line '" + line + "'");
    merges.push_back({parts[0], parts[1]});
  }
  return merges;
}

}  // namespace lexshort
