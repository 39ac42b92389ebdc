#include "lexshort/probe.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <stdexcept>
#include <tuple>

#include <json.hpp>

#include "lexshort/serialize.hpp"
#include "lexshort/train.hpp"

namespace lexshort {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

void append_row(std::vector<float>& buf, const Tensor& t, std::size_t row,
                std::size_t width) {
  const auto vals = t.values();
  const float* p = vals.data() + row * width;
  buf.insert(buf.end(), p, p + width);
}

// Occurrence counts -> rank per token, 0 the most frequent, ties by id.
std::map<int, std::size_t> frequency_ranks(const std::vector<StateEntry>& entries,
                                           bool decoder) {
  std::map<int, std::size_t> counts;
  for (const StateEntry& e : entries)
    if (e.decoder == decoder) ++counts[e.token];
  std::vector<std::pair<int, std::size_t>> order(counts.begin(), counts.end());
  std::sort(order.begin(), order.end(), [](const auto& a, const auto& b) {
    if (a.second != b.second) return a.second > b.second;
    return a.first < b.first;
  });
  std::map<int, std::size_t> ranks;
  for (std::size_t r = 0; r < order.size(); ++r) ranks[order[r].first] = r;
  return ranks;
}

}  // namespace

StateDump dump_states(const Model& model, const ParallelCorpus& corpus,
                      const Vocabulary& vocab, std::size_t max_sentences) {
  if (corpus.src.size() != corpus.tgt.size())
    throw std::invalid_argument("dump_states: corpus sides differ in length");
  if (corpus.src.empty()) throw std::invalid_argument("dump_states: empty corpus");

  const std::size_t n_layers = model.config().n_layers;
  const std::size_t d = model.config().d_model;
  StateDump dump;
  dump.n_layers = n_layers;
  dump.d_model = d;
  dump.vocab_size = model.config().vocab_size;

  std::vector<float> emb_buf;
  std::vector<std::vector<float>> layer_bufs(n_layers + 1);
  Rng rng(0);

  const std::size_t limit =
      max_sentences == 0 ? corpus.src.size() : std::min(max_sentences, corpus.src.size());
  for (std::size_t s = 0; s < limit; ++s) {
    const std::vector<std::string> src_toks = split_tokens(corpus.src[s]);
    const std::vector<std::string> tgt_toks = split_tokens(corpus.tgt[s]);
    if (src_toks.empty()) continue;

    const std::vector<int> src_ids = vocab.encode(src_toks);
    const TokenBatch sb = TokenBatch::from_rows({src_ids}, kPadId);
    const SubnetTraceT<float> enc = model.encode(sb, false, rng);
    for (std::size_t j = 0; j < src_ids.size(); ++j) {
      StateEntry e;
      e.sentence = s;
      e.position = j;
      e.decoder = false;
      e.token = src_ids[j];
      e.tag = token_tag(src_toks[j]);
      e.unk = !vocab.contains(src_toks[j]);
      dump.entries.push_back(std::move(e));
      append_row(emb_buf, enc.table_embedding, j, d);
      for (std::size_t l = 0; l <= n_layers; ++l)
        append_row(layer_bufs[l], enc.states[l], j, d);
    }

    if (tgt_toks.empty()) continue;
    const std::vector<int> tgt_ids = vocab.encode(tgt_toks);
    std::vector<int> tgt_in = {kBosId};
    tgt_in.insert(tgt_in.end(), tgt_ids.begin(), tgt_ids.end());
    SubnetTraceT<float> trace;
    model.decode(TokenBatch::from_rows({tgt_in}, kPadId), enc, false, rng, &trace);
    // row j+1 sees tgt token j as its input under teacher forcing
    for (std::size_t j = 0; j < tgt_ids.size(); ++j) {
      StateEntry e;
      e.sentence = s;
      e.position = j;
      e.decoder = true;
      e.token = tgt_ids[j];
      e.tag = token_tag(tgt_toks[j]);
      e.unk = !vocab.contains(tgt_toks[j]);
      dump.entries.push_back(std::move(e));
      append_row(emb_buf, trace.table_embedding, j + 1, d);
      for (std::size_t l = 0; l <= n_layers; ++l)
        append_row(layer_bufs[l], trace.states[l], j + 1, d);
    }
  }

  if (dump.entries.empty()) throw std::invalid_argument("dump_states: no usable sentences");

  for (bool decoder : {false, true}) {
    const std::map<int, std::size_t> ranks = frequency_ranks(dump.entries, decoder);
    for (StateEntry& e : dump.entries)
      if (e.decoder == decoder) e.freq_rank = ranks.at(e.token);
  }

  const std::size_t m = dump.entries.size();
  dump.embeddings = Tensor({m, d}, emb_buf);
  for (std::size_t l = 0; l <= n_layers; ++l)
    dump.layers.push_back(Tensor({m, d}, layer_bufs[l]));
  return dump;
}

void save_state_dump(const std::string& dir, const StateDump& dump) {
  fs::create_directories(dir);
  std::ofstream index(fs::path(dir) / "index.jsonl");
  if (!index) throw std::runtime_error("save_state_dump: cannot open index in " + dir);
  json header;
  header["kind"] = "state_dump";
  header["n_layers"] = dump.n_layers;
  header["d_model"] = dump.d_model;
  header["vocab_size"] = dump.vocab_size;
  header["entries"] = dump.entries.size();
  index << header.dump() << "\n";
  for (const StateEntry& e : dump.entries) {
    json j;
    j["sentence"] = e.sentence;
    j["position"] = e.position;
    j["decoder"] = e.decoder;
    j["token"] = e.token;
    j["tag"] = e.tag;
    j["freq_rank"] = e.freq_rank;
    j["unk"] = e.unk;
    index << j.dump() << "\n";
  }

  std::ofstream blob(fs::path(dir) / "states.bin", std::ios::binary);
  if (!blob) throw std::runtime_error("save_state_dump: cannot open states in " + dir);
  write_tensor_blob(blob, "embeddings", dump.embeddings);
  for (std::size_t l = 0; l < dump.layers.size(); ++l)
    write_tensor_blob(blob, "layer_" + std::to_string(l), dump.layers[l]);
}

StateDump load_state_dump(const std::string& dir) {
  std::ifstream index(fs::path(dir) / "index.jsonl");
  if (!index) throw std::runtime_error("load_state_dump: cannot open index in " + dir);
  std::string line;
  if (!std::getline(index, line))
    throw std::runtime_error("load_state_dump: empty index in " + dir);
  json header = json::parse(line);
  if (header.value("kind", "") != "state_dump")
    throw std::runtime_error("load_state_dump: not a state dump: " + dir);

  StateDump dump;
  dump.n_layers = header.at("n_layers").get<std::size_t>();
  dump.d_model = header.at("d_model").get<std::size_t>();
  dump.vocab_size = header.at("vocab_size").get<std::size_t>();
  const std::size_t m = header.at("entries").get<std::size_t>();
  while (std::getline(index, line)) {
    if (line.empty()) continue;
    json j = json::parse(line);
    StateEntry e;
    e.sentence = j.at("sentence").get<std::size_t>();
    e.position = j.at("position").get<std::size_t>();
    e.decoder = j.at("decoder").get<bool>();
    e.token = j.at("token").get<int>();
    e.tag = j.at("tag").get<std::string>();
    e.freq_rank = j.at("freq_rank").get<std::size_t>();
    e.unk = j.at("unk").get<bool>();
    dump.entries.push_back(std::move(e));
  }
  if (dump.entries.size() != m)
    throw std::runtime_error("load_state_dump: index entry count mismatch");

  std::ifstream blob(fs::path(dir) / "states.bin", std::ios::binary);
  if (!blob) throw std::runtime_error("load_state_dump: cannot open states in " + dir);
  const std::vector<std::size_t> want = {m, dump.d_model};
  NamedTensor nt = read_tensor_blob(blob);
  if (nt.name != "embeddings" || nt.tensor.shape() != want)
    throw std::runtime_error("load_state_dump: malformed embeddings blob");
  dump.embeddings = nt.tensor;
  for (std::size_t l = 0; l <= dump.n_layers; ++l) {
    nt = read_tensor_blob(blob);
    if (nt.name != "layer_" + std::to_string(l) || nt.tensor.shape() != want)
      throw std::runtime_error("load_state_dump: malformed layer blob " + std::to_string(l));
    dump.layers.push_back(nt.tensor);
  }
  return dump;
}

namespace {

Tensor gather_rows(const Tensor& source, const std::vector<std::size_t>& rows,
                   std::size_t width) {
  std::vector<float> buf;
  buf.reserve(rows.size() * width);
  for (std::size_t r : rows) append_row(buf, source, r, width);
  return Tensor({rows.size(), width}, buf);
}

std::vector<int> argmax_rows(const Tensor& logits) {
  const std::size_t rows = logits.extent(0);
  const std::size_t cols = logits.extent(1);
  const auto vals = logits.values();
  std::vector<int> out(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    const float* p = vals.data() + r * cols;
    std::size_t best = 0;
    for (std::size_t c = 1; c < cols; ++c)
      if (p[c] > p[best]) best = c;
    out[r] = int(best);
  }
  return out;
}

}  // namespace

ProbeResult train_probe(const StateDump& dump, std::size_t layer,
                        const ProbeConfig& config) {
  if (layer >= dump.layers.size())
    throw std::invalid_argument("train_probe: layer " + std::to_string(layer) +
                                " out of range (have 0.." +
                                std::to_string(dump.layers.size() - 1) + ")");
  if (config.test_fraction <= 0.0 || config.test_fraction >= 1.0)
    throw std::invalid_argument("train_probe: test_fraction must be in (0,1)");
  if (config.hidden == 0 || config.batch_size == 0 || config.epochs == 0)
    throw std::invalid_argument("train_probe: degenerate probe configuration");

  std::vector<std::size_t> rows;
  for (std::size_t i = 0; i < dump.entries.size(); ++i)
    if (dump.entries[i].decoder == config.decoder) rows.push_back(i);
  if (rows.empty()) throw std::invalid_argument("train_probe: no entries for sub-network");

  std::set<int> classes;
  for (std::size_t r : rows) classes.insert(dump.entries[r].token);
  if (classes.size() < 2)
    throw std::invalid_argument("train_probe: dump holds a single token class");

  // sentence-level split
  std::vector<std::size_t> sentences;
  for (std::size_t r : rows)
    if (sentences.empty() || sentences.back() != dump.entries[r].sentence)
      sentences.push_back(dump.entries[r].sentence);
  std::sort(sentences.begin(), sentences.end());
  sentences.erase(std::unique(sentences.begin(), sentences.end()), sentences.end());

  Rng rng = Rng(config.seed).split("probe");
  {
    Rng shuffle_rng = rng.split("split");
    for (std::size_t i = sentences.size(); i > 1; --i)
      std::swap(sentences[i - 1], sentences[shuffle_rng.integer(i)]);
  }
  std::size_t n_test_sentences =
      std::size_t(config.test_fraction * double(sentences.size()) + 0.5);
  n_test_sentences = std::max<std::size_t>(n_test_sentences, 1);
  if (n_test_sentences >= sentences.size())
    throw std::invalid_argument("train_probe: too few sentences to split");
  const std::set<std::size_t> test_sentences(sentences.begin(),
                                             sentences.begin() + n_test_sentences);

  std::vector<std::size_t> train_rows, test_rows;
  for (std::size_t r : rows)
    (test_sentences.count(dump.entries[r].sentence) ? test_rows : train_rows).push_back(r);
  if (train_rows.empty() || test_rows.empty())
    throw std::invalid_argument("train_probe: degenerate sentence split");

  const std::size_t d = dump.d_model;
  const std::size_t h = config.hidden;
  const std::size_t v = dump.vocab_size;
  const Tensor& feats = dump.layers[layer];

  auto glorot = [&](std::size_t r, std::size_t c, const char* name) {
    const float bound = float(std::sqrt(6.0 / double(r + c)));
    Rng init = rng.split(name);
    return Tensor::uniform({r, c}, -bound, bound, init);
  };
  Tensor w1 = glorot(d, h, "w1");
  Tensor b1 = Tensor::zeros({h});
  Tensor w2 = glorot(h, v, "w2");
  Tensor b2 = Tensor::zeros({v});
  for (Tensor* t : {&w1, &b1, &w2, &b2}) t->set_requires_grad(true);

  AdamState adam({{"probe.w1", w1}, {"probe.b1", b1}, {"probe.w2", w2}, {"probe.b2", b2}});

  const auto forward = [&](const Tensor& x, bool training, Rng& drop_rng) {
    Tensor h1 = relu(add(matmul(x, w1), b1));
    if (training) h1 = dropout(h1, float(config.dropout), drop_rng, true);
    return add(matmul(h1, w2), b2);
  };

  std::vector<std::size_t> order = train_rows;
  double best_loss = 1e300;
  std::size_t stall = 0;
  ProbeResult result;
  result.layer = layer;
  result.decoder = config.decoder;

  for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
    Rng shuffle_rng = rng.split("shuffle").split(epoch);
    for (std::size_t i = order.size(); i > 1; --i)
      std::swap(order[i - 1], order[shuffle_rng.integer(i)]);

    double epoch_loss = 0.0;
    std::size_t seen = 0;
    for (std::size_t begin = 0; begin < order.size(); begin += config.batch_size) {
      const std::size_t end = std::min(begin + config.batch_size, order.size());
      const std::vector<std::size_t> batch(order.begin() + begin, order.begin() + end);
      const Tensor x = gather_rows(feats, batch, d);
      std::vector<int> targets;
      for (std::size_t r : batch) targets.push_back(dump.entries[r].token);
      const std::vector<float> weights(targets.size(), 1.0f);

      Tape tape;
      Tape::Scope scope(tape);
      adam.zero_grads();
      Rng drop_rng = rng.split("dropout").split(epoch).split(begin);
      Tensor logits = forward(x, true, drop_rng);
      Tensor loss = cross_entropy(logits, std::span<const int>(targets),
                                  std::span<const float>(weights));
      tape.backward(loss);
      adam.step(config.lr);
      epoch_loss += double(loss.item()) * double(targets.size());
      seen += targets.size();
    }
    epoch_loss /= double(seen);
    result.epochs_run = epoch + 1;
    if (best_loss - epoch_loss > 1e-4) {
      best_loss = epoch_loss;
      stall = 0;
    } else if (++stall >= config.patience) {
      break;
    }
  }

  const auto evaluate = [&](const std::vector<std::size_t>& subset,
                            std::vector<int>* predictions) {
    std::size_t correct = 0;
    Rng unused(0);
    for (std::size_t begin = 0; begin < subset.size(); begin += config.batch_size) {
      const std::size_t end = std::min(begin + config.batch_size, subset.size());
      const std::vector<std::size_t> batch(subset.begin() + begin, subset.begin() + end);
      const Tensor logits = forward(gather_rows(feats, batch, d), false, unused);
      const std::vector<int> preds = argmax_rows(logits);
      for (std::size_t i = 0; i < batch.size(); ++i) {
        if (preds[i] == dump.entries[batch[i]].token) ++correct;
        if (predictions) predictions->push_back(preds[i]);
      }
    }
    return double(correct) / double(subset.size());
  };

  result.train_accuracy = evaluate(train_rows, nullptr);
  result.accuracy = evaluate(test_rows, &result.predictions);
  result.test_entries = test_rows;
  result.train_count = train_rows.size();
  result.test_count = test_rows.size();
  return result;
}

CosineProfile cosine_profile(const StateDump& dump) {
  if (dump.entries.empty()) throw std::invalid_argument("cosine_profile: empty dump");
  const std::size_t n = dump.layers.size();
  const std::size_t d = dump.d_model;
  CosineProfile profile;
  profile.encoder.assign(n, 0.0);
  profile.decoder.assign(n, 0.0);
  profile.encoder_counts.assign(n, 0);
  profile.decoder_counts.assign(n, 0);

  const auto emb = dump.embeddings.values();
  for (std::size_t l = 0; l < n; ++l) {
    const auto states = dump.layers[l].values();
    for (std::size_t i = 0; i < dump.entries.size(); ++i) {
      const float* a = emb.data() + i * d;
      const float* b = states.data() + i * d;
      double dot = 0.0, na = 0.0, nb = 0.0;
      for (std::size_t k = 0; k < d; ++k) {
        dot += double(a[k]) * double(b[k]);
        na += double(a[k]) * double(a[k]);
        nb += double(b[k]) * double(b[k]);
      }
      if (na == 0.0 || nb == 0.0) {
        ++profile.skipped;
        continue;
      }
      const double cos = dot / (std::sqrt(na) * std::sqrt(nb));
      if (dump.entries[i].decoder) {
        profile.decoder[l] += cos;
        ++profile.decoder_counts[l];
      } else {
        profile.encoder[l] += cos;
        ++profile.encoder_counts[l];
      }
    }
    profile.encoder[l] = profile.encoder_counts[l]
                             ? profile.encoder[l] / double(profile.encoder_counts[l])
                             : std::nan("");
    profile.decoder[l] = profile.decoder_counts[l]
                             ? profile.decoder[l] / double(profile.decoder_counts[l])
                             : std::nan("");
  }
  return profile;
}

ConditionedTable conditioned_accuracy(const StateDump& dump, const ProbeResult& probe,
                                      const std::string& condition, std::size_t n_bins) {
  if (probe.test_entries.empty() || probe.test_entries.size() != probe.predictions.size())
    throw std::invalid_argument("conditioned_accuracy: probe carries no predictions");
  ConditionedTable table;
  table.layer = probe.layer;
  table.decoder = probe.decoder;
  table.condition = condition;

  if (condition == "tag") {
    std::map<std::string, std::pair<std::size_t, std::size_t>> groups;  // count, correct
    for (std::size_t i = 0; i < probe.test_entries.size(); ++i) {
      const StateEntry& e = dump.entries[probe.test_entries[i]];
      auto& g = groups[e.tag];
      ++g.first;
      if (probe.predictions[i] == e.token) ++g.second;
    }
    for (const auto& [tag, g] : groups)
      table.rows.push_back({tag, g.first, double(g.second) / double(g.first)});
    return table;
  }

  if (condition != "frequency")
    throw std::invalid_argument("conditioned_accuracy: unknown condition '" + condition + "'");
  if (n_bins == 0) throw std::invalid_argument("conditioned_accuracy: zero bins");

  // order by ascending frequency (descending rank); ties keep dump order
  std::vector<std::size_t> idx(probe.test_entries.size());
  for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
  std::sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) {
    const StateEntry& ea = dump.entries[probe.test_entries[a]];
    const StateEntry& eb = dump.entries[probe.test_entries[b]];
    if (ea.freq_rank != eb.freq_rank) return ea.freq_rank > eb.freq_rank;
    if (ea.token != eb.token) return ea.token < eb.token;
    return a < b;
  });

  std::set<int> distinct;
  for (std::size_t i : probe.test_entries) distinct.insert(dump.entries[i].token);
  std::size_t bins = n_bins;
  if (distinct.size() < bins) {
    bins = distinct.size();
    table.reduced_bins = true;
  }

  const std::size_t total = idx.size();
  const std::size_t base = total / bins;
  const std::size_t extra = total % bins;
  std::size_t cursor = 0;
  for (std::size_t b = 0; b < bins; ++b) {
    const std::size_t size = base + (b < extra ? 1 : 0);
    std::size_t correct = 0;
    for (std::size_t i = 0; i < size; ++i, ++cursor) {
      const std::size_t e = idx[cursor];
      if (probe.predictions[e] == dump.entries[probe.test_entries[e]].token) ++correct;
    }
    table.rows.push_back({std::to_string(b + 1), size,
                          size ? double(correct) / double(size) : 0.0});
  }
  return table;
}

std::vector<GateStat> gate_stats(const Model& model, const ParallelCorpus& corpus,
                                 const Vocabulary& vocab, std::size_t max_sentences) {
  if (model.config().variant == ShortcutVariant::None)
    throw std::invalid_argument("gate_stats: model has no shortcut connections");
  if (!model.config().gate_enabled)
    throw std::invalid_argument("gate_stats: shortcut fuses without gates");
  if (corpus.src.size() != corpus.tgt.size())
    throw std::invalid_argument("gate_stats: corpus sides differ in length");
  if (corpus.src.empty()) throw std::invalid_argument("gate_stats: empty corpus");

  struct Accum {
    double sum_k = 0, sq_k = 0, sum_v = 0, sq_v = 0;
    std::size_t count = 0;
  };
  std::map<std::tuple<bool, int, std::size_t>, Accum> acc;

  Rng rng(0);
  const std::size_t limit =
      max_sentences == 0 ? corpus.src.size() : std::min(max_sentences, corpus.src.size());
  std::size_t used = 0;
  for (std::size_t s = 0; s < limit; ++s) {
    const std::vector<int> src_ids = vocab.encode(split_tokens(corpus.src[s]));
    if (src_ids.empty()) continue;
    std::vector<GateActivationT<float>> gates;
    const auto enc = model.encode(TokenBatch::from_rows({src_ids}, kPadId), false, rng, &gates);
    const std::vector<int> tgt_ids = vocab.encode(split_tokens(corpus.tgt[s]));
    if (!tgt_ids.empty()) {
      std::vector<int> tgt_in = {kBosId};
      tgt_in.insert(tgt_in.end(), tgt_ids.begin(), tgt_ids.end());
      model.decode(TokenBatch::from_rows({tgt_in}, kPadId), enc, false, rng, nullptr, &gates);
    }
    ++used;
    for (const auto& g : gates) {
      Accum& a = acc[{g.decoder, int(g.site), g.layer}];
      for (float x : g.r_k.values()) {
        a.sum_k += x;
        a.sq_k += double(x) * double(x);
      }
      for (float x : g.r_v.values()) {
        a.sum_v += x;
        a.sq_v += double(x) * double(x);
      }
      a.count += g.r_k.size();
    }
  }
  if (used == 0) throw std::invalid_argument("gate_stats: no usable sentences");
  if (acc.empty()) throw std::invalid_argument("gate_stats: configuration gates no blocks");

  std::vector<GateStat> stats;
  for (const auto& [key, a] : acc) {
    GateStat st;
    st.decoder = std::get<0>(key);
    st.site = AttentionSite(std::get<1>(key));
    st.layer = std::get<2>(key);
    const double n = double(a.count);
    st.mean_k = a.sum_k / n;
    st.std_k = std::sqrt(std::max(0.0, a.sq_k / n - st.mean_k * st.mean_k));
    st.mean_v = a.sum_v / n;
    st.std_v = std::sqrt(std::max(0.0, a.sq_v / n - st.mean_v * st.mean_v));
    st.count = a.count;
    stats.push_back(st);
  }
  return stats;
}

namespace {

const char* site_name(AttentionSite site) {
  return site == AttentionSite::SelfAttention ? "self" : "dec2enc";
}

}  // namespace

void write_gate_csv(const std::string& path, const std::vector<GateStat>& stats) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("write_gate_csv: cannot open " + path);
  out << "subnetwork,site,layer,mean_k,std_k,mean_v,std_v,count\n";
  for (const GateStat& s : stats) {
    out << (s.decoder ? "decoder" : "encoder") << ',' << site_name(s.site) << ','
        << s.layer << ',' << s.mean_k << ',' << s.std_k << ',' << s.mean_v << ','
        << s.std_v << ',' << s.count << "\n";
  }
}

void save_probe_report(const std::string& dir, const ProbeReport& report) {
  fs::create_directories(dir);

  json j;
  j["probes"] = json::array();
  for (const ProbeResult& p : report.probes) {
    j["probes"].push_back({{"subnetwork", p.decoder ? "decoder" : "encoder"},
                           {"layer", p.layer},
                           {"accuracy", p.accuracy},
                           {"train_accuracy", p.train_accuracy},
                           {"train_count", p.train_count},
                           {"test_count", p.test_count},
                           {"epochs_run", p.epochs_run}});
  }
  j["cosine"] = {{"encoder", report.cosine.encoder},
                 {"decoder", report.cosine.decoder},
                 {"skipped", report.cosine.skipped}};
  j["conditioned"] = json::array();
  for (const ConditionedTable& t : report.conditioned) {
    json rows = json::array();
    for (const ConditionedRow& r : t.rows)
      rows.push_back({{"key", r.key}, {"count", r.count}, {"accuracy", r.accuracy}});
    j["conditioned"].push_back({{"subnetwork", t.decoder ? "decoder" : "encoder"},
                                {"layer", t.layer},
                                {"condition", t.condition},
                                {"reduced_bins", t.reduced_bins},
                                {"rows", rows}});
  }
  j["gates"] = json::array();
  for (const GateStat& s : report.gates) {
    j["gates"].push_back({{"subnetwork", s.decoder ? "decoder" : "encoder"},
                          {"site", site_name(s.site)},
                          {"layer", s.layer},
                          {"mean_k", s.mean_k},
                          {"std_k", s.std_k},
                          {"mean_v", s.mean_v},
                          {"std_v", s.std_v},
                          {"count", s.count}});
  }
  std::ofstream out(fs::path(dir) / "report.json");
  if (!out) throw std::runtime_error("save_probe_report: cannot open report in " + dir);
  out << j.dump(2) << "\n";

  std::ofstream acc(fs::path(dir) / "probe_accuracy.csv");
  acc << "subnetwork,layer,accuracy,train_accuracy,train_count,test_count\n";
  for (const ProbeResult& p : report.probes)
    acc << (p.decoder ? "decoder" : "encoder") << ',' << p.layer << ',' << p.accuracy
        << ',' << p.train_accuracy << ',' << p.train_count << ',' << p.test_count << "\n";

  std::ofstream cos(fs::path(dir) / "cosine.csv");
  cos << "subnetwork,layer,mean_cosine,count\n";
  for (std::size_t l = 0; l < report.cosine.encoder.size(); ++l)
    cos << "encoder," << l << ',' << report.cosine.encoder[l] << ','
        << report.cosine.encoder_counts[l] << "\n";
  for (std::size_t l = 0; l < report.cosine.decoder.size(); ++l)
    cos << "decoder," << l << ',' << report.cosine.decoder[l] << ','
        << report.cosine.decoder_counts[l] << "\n";

  std::ofstream cond(fs::path(dir) / "conditioned.csv");
  cond << "subnetwork,layer,condition,key,count,accuracy\n";
  for (const ConditionedTable& t : report.conditioned)
    for (const ConditionedRow& r : t.rows)
      cond << (t.decoder ? "decoder" : "encoder") << ',' << t.layer << ','
           << t.condition << ',' << r.key << ',' << r.count << ',' << r.accuracy << "\n";

  if (!report.gates.empty())
    write_gate_csv((fs::path(dir) / "gates.csv").string(), report.gates);
}

}  // namespace lexshort
