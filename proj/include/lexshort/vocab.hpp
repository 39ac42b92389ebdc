#pragma once

#include <cstddef>
#include <string>
#include <utility>
#include <vector>

namespace lexshort {

inline constexpr int kPadId = 0;
inline constexpr int kBosId = 1;
inline constexpr int kEosId = 2;
inline constexpr int kUnkId = 3;

inline constexpr const char* kPadToken = "<pad>";
inline constexpr const char* kBosToken = "<s>";
inline constexpr const char* kEosToken = "</s>";
inline constexpr const char* kUnkToken = "<unk>";

// Token/id table with the four reserved entries preinstalled at ids 0..3.
class Vocabulary {
 public:
  Vocabulary();

  int add(const std::string& token);     // returns existing id when present
  int id(const std::string& token) const;  // kUnkId when absent
  bool contains(const std::string& token) const;
  const std::string& token(int id) const;
  std::size_t size() const { return tokens_.size(); }

  std::vector<int> encode(const std::vector<std::string>& tokens) const;
  // Drops pad/bos/eos; unknown ids throw.
  std::vector<std::string> decode(const std::vector<int>& ids) const;

  void save(const std::string& path) const;
  static Vocabulary load(const std::string& path);

  // Frequency-ordered build (ties broken lexicographically). max_size of 0
  // means unbounded; the reserved entries always count toward the cap.
  static Vocabulary from_tokens(const std::vector<std::vector<std::string>>& sentences,
                                std::size_t max_size = 0, std::size_t min_count = 1);

 private:
  std::vector<std::string> tokens_;
  std::vector<std::pair<std::string, int>> index_;  // sorted by token

  int lookup(const std::string& token) const;
};

std::vector<std::string> split_tokens(const std::string& line);
std::string join_tokens(const std::vector<std::string>& tokens);

// ---- byte pair encoding ---------------------------------------------------

struct BpeMerge {
  std::string left, right;
  bool operator==(const BpeMerge& o) const { return left == o.left && right == o.right; }
};

// Learns merges over whitespace-tokenized lines. Pair counts are weighted by
// word frequency; ties pick the lexicographically smallest (left, right).
// Stops early once no pair occurs twice.
std::vector<BpeMerge> learn_bpe(const std::vector<std::string>& lines, std::size_t n_merges);

// Splits one word into subwords; every piece except the last carries the
// "@@" continuation marker. n_merges == 0 yields single characters.
std::vector<std::string> apply_bpe_word(const std::string& word,
                                        const std::vector<BpeMerge>& merges);
std::vector<std::string> apply_bpe_line(const std::string& line,
                                        const std::vector<BpeMerge>& merges);

// Inverse of the continuation markers: "ab@@ c" -> "abc".
std::string bpe_join(const std::vector<std::string>& pieces);

void save_bpe(const std::string& path, const std::vector<BpeMerge>& merges);
std::vector<BpeMerge> load_bpe(const std::string& path);

}  // namespace lexshort
