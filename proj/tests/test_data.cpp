#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <set>
#include <unistd.h>

#include "lexshort/bleu.hpp"
#include "lexshort/corpus.hpp"
#include "lexshort/vocab.hpp"

using namespace lexshort;
namespace fs = std::filesystem;

namespace {

struct TempDir {
  fs::path path;
  TempDir() {
    char buf[64];
    std::snprintf(buf, sizeof buf, "lexshort-data-%d", int(::getpid()));
    path = fs::temp_directory_path() / buf;
    fs::remove_all(path);
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
  std::string file(const std::string& name) const { return (path / name).string(); }
};

}  // namespace

TEST_CASE("vocabulary reserves the special entries") {
  Vocabulary v;
  CHECK(v.size() == 4);
  CHECK(v.token(kPadId) == kPadToken);
  CHECK(v.token(kBosId) == kBosToken);
  CHECK(v.token(kEosId) == kEosToken);
  CHECK(v.token(kUnkId) == kUnkToken);
  CHECK(v.id(kPadToken) == kPadId);
  CHECK(v.id(kEosToken) == kEosId);
  CHECK_THROWS_AS(v.token(4), std::out_of_range);
  CHECK_THROWS_AS(v.token(-1), std::out_of_range);
}

TEST_CASE("vocabulary add is idempotent and encode falls back to unk") {
  Vocabulary v;
  const int a = v.add("alpha");
  const int b = v.add("beta");
  CHECK(a == 4);
  CHECK(b == 5);
  CHECK(v.add("alpha") == a);
  CHECK(v.size() == 6);

  const std::vector<int> ids = v.encode({"beta", "missing", "alpha"});
  CHECK(ids == std::vector<int>{b, kUnkId, a});

  const std::vector<std::string> back = v.decode({kBosId, a, b, kEosId, kPadId});
  CHECK(back == std::vector<std::string>{"alpha", "beta"});
  CHECK_THROWS_AS(v.decode({99}), std::out_of_range);
}

TEST_CASE("from_tokens ranks by frequency with lexicographic ties") {
  const std::vector<std::vector<std::string>> sents = {
      {"c", "b", "a"}, {"c", "b"}, {"z"}};
  Vocabulary v = Vocabulary::from_tokens(sents);
  CHECK(v.id("b") == 4);
  CHECK(v.id("c") == 5);
  CHECK(v.id("a") == 6);
  CHECK(v.id("z") == 7);

  Vocabulary capped = Vocabulary::from_tokens(sents, 6);
  CHECK(capped.size() == 6);
  CHECK(capped.contains("b"));
  CHECK(capped.contains("c"));
  CHECK_FALSE(capped.contains("a"));

  Vocabulary frequent = Vocabulary::from_tokens(sents, 0, 2);
  CHECK(frequent.contains("b"));
  CHECK_FALSE(frequent.contains("z"));
}

TEST_CASE("vocabulary save/load round trip validates the header") {
  TempDir tmp;
  Vocabulary v;
  v.add("one");
  v.add("two");
  const std::string path = tmp.file("vocab.txt");
  v.save(path);

  Vocabulary loaded = Vocabulary::load(path);
  CHECK(loaded.size() == v.size());
  CHECK(loaded.id("one") == v.id("one"));
  CHECK(loaded.id("two") == v.id("two"));

  std::ofstream bad(tmp.file("bad.txt"));
  bad << "one\ntwo\n";
  bad.close();
  CHECK_THROWS_AS(Vocabulary::load(tmp.file("bad.txt")), std::runtime_error);
  CHECK_THROWS_AS(Vocabulary::load(tmp.file("absent.txt")), std::runtime_error);
}

TEST_CASE("bpe learns the repeated pair first") {
  const std::vector<std::string> lines(100, "aaab");
  const std::vector<BpeMerge> merges = learn_bpe(lines, 1);
  REQUIRE(merges.size() == 1);
  CHECK(merges[0] == BpeMerge{"a", "a"});

  // after (a,a): words are "aa a b"; pairs (aa,a) and (a,b) tie at 100 and
  // the lexicographically smaller (a,b) wins
  const std::vector<BpeMerge> more = learn_bpe(lines, 3);
  REQUIRE(more.size() == 3);
  CHECK(more[0] == BpeMerge{"a", "a"});
  CHECK(more[1] == BpeMerge{"a", "b"});
  CHECK(more[2] == BpeMerge{"aa", "ab"});
}

TEST_CASE("bpe tie-breaks lexicographically and stops below two occurrences") {
  const std::vector<std::string> tied = {"cd ab", "ab cd", "cd ab", "ab cd", "cd ab"};
  const std::vector<BpeMerge> merges = learn_bpe(tied, 1);
  REQUIRE(merges.size() == 1);
  CHECK(merges[0] == BpeMerge{"a", "b"});

  const std::vector<BpeMerge> none = learn_bpe({"abcd"}, 10);
  CHECK(none.empty());

  CHECK_THROWS_AS(learn_bpe({}, 4), std::invalid_argument);
  CHECK_THROWS_AS(learn_bpe({"", "  "}, 4), std::invalid_argument);
}

TEST_CASE("bpe with zero merges yields marked characters") {
  const std::vector<std::string> pieces = apply_bpe_word("abc", {});
  CHECK(pieces == std::vector<std::string>{"a@@", "b@@", "c"});
  CHECK(bpe_join(pieces) == "abc");
  CHECK(apply_bpe_word("", {}).empty());
}

TEST_CASE("bpe segmentation round-trips through the markers") {
  const std::vector<std::string> lines = {"the cat sat", "the mat sat flat",
                                          "that cat that mat"};
  const std::vector<BpeMerge> merges = learn_bpe(lines, 8);
  CHECK_FALSE(merges.empty());
  for (const std::string& line : lines) {
    const std::vector<std::string> pieces = apply_bpe_line(line, merges);
    std::vector<std::string> words;
    std::string current;
    for (const std::string& p : pieces) {
      if (p.size() > 2 && p.substr(p.size() - 2) == "@@") {
        current += p.substr(0, p.size() - 2);
      } else {
        current += p;
        words.push_back(current);
        current.clear();
      }
    }
    CHECK(join_tokens(words) == line);
    CHECK(bpe_join(pieces) == line);
  }
}

TEST_CASE("bpe merge table round-trips through disk") {
  TempDir tmp;
  const std::vector<BpeMerge> merges = learn_bpe({"aaab aaab aab"}, 4);
  const std::string path = tmp.file("merges.txt");
  save_bpe(path, merges);
  CHECK(load_bpe(path) == merges);
  CHECK_THROWS_AS(load_bpe(tmp.file("absent.txt")), std::runtime_error);
}

TEST_CASE("corpus generation is deterministic per seed") {
  CorpusConfig cfg;
  cfg.task = "copy";
  cfg.size = 60;
  cfg.seed = 11;
  const GeneratedCorpus a = gen_corpus(cfg);
  const GeneratedCorpus b = gen_corpus(cfg);
  CHECK(a.train.src == b.train.src);
  CHECK(a.train.tgt == b.train.tgt);
  CHECK(a.valid.src == b.valid.src);
  CHECK(a.test.src == b.test.src);

  cfg.seed = 12;
  const GeneratedCorpus c = gen_corpus(cfg);
  CHECK(a.train.src != c.train.src);
}

TEST_CASE("copy and reverse tasks transform the source as named") {
  CorpusConfig cfg;
  cfg.size = 40;
  cfg.task = "copy";
  const GeneratedCorpus copy = gen_corpus(cfg);
  for (std::size_t i = 0; i < copy.train.src.size(); ++i)
    CHECK(copy.train.src[i] == copy.train.tgt[i]);

  cfg.task = "reverse";
  const GeneratedCorpus rev = gen_corpus(cfg);
  for (std::size_t i = 0; i < rev.train.src.size(); ++i) {
    std::vector<std::string> toks = split_tokens(rev.train.src[i]);
    std::reverse(toks.begin(), toks.end());
    CHECK(join_tokens(toks) == rev.train.tgt[i]);
  }
}

TEST_CASE("splits are sized by fraction and sentences stay unique") {
  CorpusConfig cfg;
  cfg.size = 100;
  cfg.valid_fraction = 0.1;
  cfg.test_fraction = 0.2;
  const GeneratedCorpus g = gen_corpus(cfg);
  CHECK(g.test.src.size() == 20);
  CHECK(g.valid.src.size() == 10);
  CHECK(g.train.src.size() == 70);

  std::set<std::string> all;
  for (const auto* split : {&g.train, &g.valid, &g.test})
    for (const std::string& s : split->src) all.insert(s);
  CHECK(all.size() == 100);

  const std::size_t lo = cfg.min_len, hi = cfg.max_len;
  for (const std::string& s : g.train.src) {
    const std::size_t len = split_tokens(s).size();
    CHECK(len >= lo);
    CHECK(len <= hi);
  }
}

TEST_CASE("impossible corpus requests are rejected") {
  CorpusConfig cfg;
  cfg.size = 5;
  cfg.valid_fraction = 0.5;
  cfg.test_fraction = 0.5;
  CHECK_THROWS_AS(gen_corpus(cfg), std::invalid_argument);

  CorpusConfig tiny;
  tiny.size = 2000;
  tiny.content_types = 1;
  tiny.function_types = 1;
  tiny.min_len = 1;
  tiny.max_len = 1;
  tiny.ambiguous_types = 0;
  CHECK_THROWS_AS(gen_corpus(tiny), std::runtime_error);

  CorpusConfig bad;
  bad.task = "sort";
  CHECK_THROWS_AS(gen_corpus(bad), std::invalid_argument);
  bad.task = "copy";
  bad.min_len = 5;
  bad.max_len = 4;
  CHECK_THROWS_AS(gen_corpus(bad), std::invalid_argument);
}

namespace {

// Re-derives the lexicon translation of a source sentence from scratch.
std::string expected_lexicon_target(const std::string& src, std::size_t ambiguous_types) {
  const std::vector<std::string> toks = split_tokens(src);
  std::set<std::string> triggers;
  for (const std::string& t : toks)
    if (t[0] == 'm') triggers.insert(t.substr(1));
  std::vector<std::string> out;
  for (const std::string& t : toks) {
    const std::string k = t.substr(1);
    if (t[0] == 'f') {
      out.push_back("g" + k);
    } else if (t[0] == 'm') {
      out.push_back("n" + k);
    } else if (std::stoul(k) < ambiguous_types && !triggers.count(k)) {
      out.push_back("u" + k);
    } else {
      out.push_back("t" + k);
    }
  }
  return join_tokens(out);
}

}  // namespace

TEST_CASE("lexicon task follows the trigger-dependent dictionary") {
  CorpusConfig cfg;
  cfg.task = "lexicon";
  cfg.size = 120;
  cfg.seed = 5;
  const GeneratedCorpus g = gen_corpus(cfg);

  bool saw_ambiguous_with_trigger = false;
  bool saw_ambiguous_without = false;
  for (const auto* split : {&g.train, &g.valid, &g.test}) {
    for (std::size_t i = 0; i < split->src.size(); ++i) {
      CHECK(split->tgt[i] == expected_lexicon_target(split->src[i], cfg.ambiguous_types));
      const std::string& tgt = split->tgt[i];
      for (const std::string& t : split_tokens(tgt)) {
        if (t[0] == 't' && std::stoul(t.substr(1)) < cfg.ambiguous_types)
          saw_ambiguous_with_trigger = true;
        if (t[0] == 'u') saw_ambiguous_without = true;
      }
    }
  }
  CHECK(saw_ambiguous_with_trigger);
  CHECK(saw_ambiguous_without);
}

TEST_CASE("trigger positions vary relative to the word they disambiguate") {
  CorpusConfig cfg;
  cfg.task = "lexicon";
  cfg.size = 300;
  cfg.seed = 9;
  const GeneratedCorpus g = gen_corpus(cfg);
  std::set<long> distances;
  for (const std::string& src : g.train.src) {
    const std::vector<std::string> toks = split_tokens(src);
    for (std::size_t i = 0; i < toks.size(); ++i) {
      if (toks[i][0] != 'm') continue;
      const std::string k = toks[i].substr(1);
      for (std::size_t j = 0; j < toks.size(); ++j)
        if (toks[j] == "s" + k) distances.insert(long(j) - long(i));
    }
  }
  CHECK(distances.size() > 3);
}

TEST_CASE("contrastive records are balanced single-word sense flips") {
  CorpusConfig cfg;
  cfg.task = "lexicon";
  cfg.size = 80;
  cfg.contrastive_size = 40;
  cfg.seed = 3;
  const GeneratedCorpus g = gen_corpus(cfg);
  REQUIRE(g.contrastive.size() == 40);

  std::size_t with_trigger = 0;
  for (const ContrastiveRecord& rec : g.contrastive) {
    REQUIRE(rec.incorrect.size() == 1);
    const std::vector<std::string> src = split_tokens(rec.src);
    const std::vector<std::string> good = split_tokens(rec.correct);
    const std::vector<std::string> bad = split_tokens(rec.incorrect[0]);
    REQUIRE(good.size() == src.size());
    REQUIRE(bad.size() == src.size());

    // exactly one differing token, and it flips t<k> against u<k>
    std::size_t diffs = 0, where = 0;
    for (std::size_t i = 0; i < good.size(); ++i) {
      if (good[i] != bad[i]) {
        ++diffs;
        where = i;
      }
    }
    REQUIRE(diffs == 1);
    const std::string k = good[where].substr(1);
    CHECK(bad[where].substr(1) == k);
    CHECK(((good[where][0] == 't' && bad[where][0] == 'u') ||
           (good[where][0] == 'u' && bad[where][0] == 't')));

    // the probed word occurs exactly once, and the trigger decides the sense
    CHECK(std::count(src.begin(), src.end(), "s" + k) == 1);
    const bool has_trigger =
        std::count(src.begin(), src.end(), "m" + k) > 0;
    CHECK(good[where][0] == (has_trigger ? 't' : 'u'));
    if (has_trigger) ++with_trigger;

    CHECK(rec.correct == expected_lexicon_target(rec.src, cfg.ambiguous_types));
  }
  CHECK(with_trigger == 20);
}

TEST_CASE("token tags classify the synthetic inventory") {
  CHECK(token_tag("s3") == "content");
  CHECK(token_tag("t0") == "content");
  CHECK(token_tag("u12") == "content");
  CHECK(token_tag("f1") == "function");
  CHECK(token_tag("g2") == "function");
  CHECK(token_tag("m0") == "trigger");
  CHECK(token_tag("n7") == "trigger");
  CHECK(token_tag("<pad>") == "special");
  CHECK(token_tag("x9") == "special");
  CHECK(token_tag("") == "special");
}

TEST_CASE("parallel corpora round-trip through src/tgt files") {
  TempDir tmp;
  ParallelCorpus c;
  c.src = {"a b c", "d e"};
  c.tgt = {"c b a", "e d"};
  write_parallel(tmp.file("data"), "train", c);

  const std::string src_path = tmp.file("data/train.src");
  const std::string tgt_path = tmp.file("data/train.tgt");
  const ParallelCorpus back = read_parallel(src_path, tgt_path);
  CHECK(back.src == c.src);
  CHECK(back.tgt == c.tgt);

  std::ofstream extra(tgt_path, std::ios::app);
  extra << "stray line\n";
  extra.close();
  CHECK_THROWS_AS(read_parallel(src_path, tgt_path), std::runtime_error);
  CHECK_THROWS_AS(read_parallel(tmp.file("nope.src"), tgt_path), std::runtime_error);

  ParallelCorpus skewed;
  skewed.src = {"a"};
  CHECK_THROWS_AS(write_parallel(tmp.file("data"), "bad", skewed), std::invalid_argument);
}

TEST_CASE("contrastive records round-trip through json lines") {
  TempDir tmp;
  const std::vector<ContrastiveRecord> records = {
      {"m0 s0", "n0 t0", {"n0 u0"}},
      {"s1 f0", "u1 g0", {"t1 g0", "u1 g1"}},
  };
  const std::string path = tmp.file("records.jsonl");
  write_contrastive(path, records);

  const std::vector<ContrastiveRecord> back = read_contrastive(path);
  REQUIRE(back.size() == 2);
  CHECK(back[0].src == records[0].src);
  CHECK(back[0].correct == records[0].correct);
  CHECK(back[0].incorrect == records[0].incorrect);
  CHECK(back[1].incorrect == records[1].incorrect);

  std::ofstream bad(tmp.file("bad.jsonl"));
  bad << "{\"src\": \"a\"}\n";
  bad.close();
  CHECK_THROWS_AS(read_contrastive(tmp.file("bad.jsonl")), std::runtime_error);
}

TEST_CASE("bleu rewards the identity corpus with 100") {
  const std::vector<std::string> lines = {"the cat sat on the mat today",
                                          "a dog ran over the hill quickly"};
  const BleuReport r = bleu_report(lines, lines);
  CHECK(r.score == doctest::Approx(100.0).epsilon(1e-12));
  CHECK(r.brevity_penalty == 1.0);
  for (double p : r.precisions) CHECK(p == 1.0);
}

TEST_CASE("bleu is zero without smoothing when any order has no matches") {
  const BleuReport r = bleu_report({"the the the"}, {"the cat"});
  CHECK(r.score == 0.0);
  CHECK(r.precisions[0] == doctest::Approx(1.0 / 3.0));  // clipped unigram
  CHECK(r.precisions[1] == 0.0);

  // hypotheses shorter than four tokens leave the 4-gram total at zero
  CHECK(bleu({"a b c"}, {"a b c"}) == 0.0);
}

TEST_CASE("bleu matches the hand-computed clipped fixture") {
  const BleuReport r =
      bleu_report({"the cat sat on the mat"}, {"the cat sat on a mat"});
  CHECK(r.precisions[0] == doctest::Approx(5.0 / 6.0).epsilon(1e-12));
  CHECK(r.precisions[1] == doctest::Approx(3.0 / 5.0).epsilon(1e-12));
  CHECK(r.precisions[2] == doctest::Approx(2.0 / 4.0).epsilon(1e-12));
  CHECK(r.precisions[3] == doctest::Approx(1.0 / 3.0).epsilon(1e-12));
  CHECK(r.brevity_penalty == 1.0);
  // 100 * (5/6 * 3/5 * 2/4 * 1/3)^(1/4) = 100 * (1/12)^(1/4)
  CHECK(r.score == doctest::Approx(53.7284965911).epsilon(1e-6));
}

TEST_CASE("bleu applies the brevity penalty to short hypotheses") {
  const double score = bleu({"a b c d"}, {"a b c d e f"});
  CHECK(score == doctest::Approx(100.0 * std::exp(1.0 - 6.0 / 4.0)).epsilon(1e-9));

  const BleuReport empty_hyp = bleu_report({""}, {"a b c d"});
  CHECK(empty_hyp.score == 0.0);
  CHECK(empty_hyp.brevity_penalty == 0.0);
}

TEST_CASE("bleu is invariant to corpus order") {
  const std::vector<std::string> hyp = {"the cat sat on the mat",
                                        "a b c d e", "x y z w q r"};
  const std::vector<std::string> ref = {"the cat sat on a mat",
                                        "a b c d f", "x y z v q r"};
  std::vector<std::string> hyp_rev(hyp.rbegin(), hyp.rend());
  std::vector<std::string> ref_rev(ref.rbegin(), ref.rend());
  CHECK(bleu(hyp, ref) == bleu(hyp_rev, ref_rev));
  CHECK(bleu(hyp, ref) > 0.0);
}

TEST_CASE("bleu rejects empty or mismatched corpora") {
  CHECK_THROWS_AS(bleu({}, {}), std::invalid_argument);
  CHECK_THROWS_AS(bleu({"a"}, {"a", "b"}), std::invalid_argument);
}

TEST_CASE("sentence diagnostic smooths where the corpus score is zero") {
  CHECK(sentence_bleu("the cat sat", "the cat sat") == doctest::Approx(100.0));
  const double smoothed = sentence_bleu("the the the", "the cat");
  CHECK(smoothed > 0.0);
  CHECK(smoothed < 100.0);
  CHECK(bleu({"the the the"}, {"the cat"}) == 0.0);
  CHECK(sentence_bleu("", "a b") == 0.0);
}
