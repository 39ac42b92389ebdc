#include "lexshort/commands.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "lexshort/bleu.hpp"
#include "lexshort/decode.hpp"
#include "lexshort/vocab.hpp"

namespace lexshort {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

// ---- config document ------------------------------------------------------

json config_doc(const RunConfig& c) {
  json j;
  j["data"] = {{"dir", c.data.dir},
               {"train_prefix", c.data.train_prefix},
               {"valid_prefix", c.data.valid_prefix},
               {"test_prefix", c.data.test_prefix},
               {"vocab", c.data.vocab},
               {"contrastive", c.data.contrastive}};
  j["corpus"] = {{"task", c.corpus.task},
                 {"size", c.corpus.size},
                 {"seed", c.corpus.seed},
                 {"content_types", c.corpus.content_types},
                 {"function_types", c.corpus.function_types},
                 {"min_len", c.corpus.min_len},
                 {"max_len", c.corpus.max_len},
                 {"valid_fraction", c.corpus.valid_fraction},
                 {"test_fraction", c.corpus.test_fraction},
                 {"ambiguous_types", c.corpus.ambiguous_types},
                 {"trigger_rate", c.corpus.trigger_rate},
                 {"contrastive_size", c.corpus.contrastive_size}};
  j["model"] = json::parse(config_to_json(c.model));
  j["train"] = {{"steps", c.train.steps},
                {"batch_size", c.train.batch_size},
                {"accumulation", c.train.accumulation},
                {"warmup", c.train.warmup},
                {"lr_factor", c.train.lr_factor},
                {"log_every", c.train.log_every},
                {"validate_every", c.train.validate_every},
                {"checkpoint_every", c.train.checkpoint_every},
                {"queue_capacity", c.train.queue_capacity},
                {"seed", c.train.seed}};
  j["probe"] = {{"hidden", c.probe.hidden},
                {"dropout", c.probe.dropout},
                {"epochs", c.probe.epochs},
                {"lr", c.probe.lr},
                {"seed", c.probe.seed},
                {"test_fraction", c.probe.test_fraction},
                {"batch_size", c.probe.batch_size},
                {"patience", c.probe.patience}};
  j["probe_sentences"] = c.probe_sentences;
  j["probe_bins"] = c.probe_bins;
  j["run_dir"] = c.run_dir;
  j["checkpoint"] = c.checkpoint;
  j["resume"] = c.resume;
  j["beam"] = {{"size", c.beam.size},
               {"len_penalty", c.beam.len_penalty},
               {"max_len", c.beam.max_len}};
  j["input"] = c.input;
  j["output"] = c.output;
  j["length_normalized"] = c.length_normalized;
  j["plot"] = c.plot;
  return j;
}

RunConfig config_from_doc(const json& j) {
  try {
    RunConfig c;
    const json& d = j.at("data");
    c.data.dir = d.at("dir").get<std::string>();
    c.data.train_prefix = d.at("train_prefix").get<std::string>();
    c.data.valid_prefix = d.at("valid_prefix").get<std::string>();
    c.data.test_prefix = d.at("test_prefix").get<std::string>();
    c.data.vocab = d.at("vocab").get<std::string>();
    c.data.contrastive = d.at("contrastive").get<std::string>();
    const json& g = j.at("corpus");
    c.corpus.task = g.at("task").get<std::string>();
    c.corpus.size = g.at("size").get<std::size_t>();
    c.corpus.seed = g.at("seed").get<std::uint64_t>();
    c.corpus.content_types = g.at("content_types").get<std::size_t>();
    c.corpus.function_types = g.at("function_types").get<std::size_t>();
    c.corpus.min_len = g.at("min_len").get<std::size_t>();
    c.corpus.max_len = g.at("max_len").get<std::size_t>();
    c.corpus.valid_fraction = g.at("valid_fraction").get<double>();
    c.corpus.test_fraction = g.at("test_fraction").get<double>();
    c.corpus.ambiguous_types = g.at("ambiguous_types").get<std::size_t>();
    c.corpus.trigger_rate = g.at("trigger_rate").get<double>();
    c.corpus.contrastive_size = g.at("contrastive_size").get<std::size_t>();
    c.model = config_from_json(j.at("model").dump());
    const json& t = j.at("train");
    c.train.steps = t.at("steps").get<std::size_t>();
    c.train.batch_size = t.at("batch_size").get<std::size_t>();
    c.train.accumulation = t.at("accumulation").get<std::size_t>();
    c.train.warmup = t.at("warmup").get<std::size_t>();
    c.train.lr_factor = t.at("lr_factor").get<double>();
    c.train.log_every = t.at("log_every").get<std::size_t>();
    c.train.validate_every = t.at("validate_every").get<std::size_t>();
    c.train.checkpoint_every = t.at("checkpoint_every").get<std::size_t>();
    c.train.queue_capacity = t.at("queue_capacity").get<std::size_t>();
    c.train.seed = t.at("seed").get<std::uint64_t>();
    const json& p = j.at("probe");
    c.probe.hidden = p.at("hidden").get<std::size_t>();
    c.probe.dropout = p.at("dropout").get<double>();
    c.probe.epochs = p.at("epochs").get<std::size_t>();
    c.probe.lr = p.at("lr").get<double>();
    c.probe.seed = p.at("seed").get<std::uint64_t>();
    c.probe.test_fraction = p.at("test_fraction").get<double>();
    c.probe.batch_size = p.at("batch_size").get<std::size_t>();
    c.probe.patience = p.at("patience").get<std::size_t>();
    c.probe_sentences = j.at("probe_sentences").get<std::size_t>();
    c.probe_bins = j.at("probe_bins").get<std::size_t>();
    c.run_dir = j.at("run_dir").get<std::string>();
    c.checkpoint = j.at("checkpoint").get<std::string>();
    c.resume = j.at("resume").get<bool>();
    const json& b = j.at("beam");
    c.beam.size = b.at("size").get<std::size_t>();
    c.beam.len_penalty = b.at("len_penalty").get<double>();
    c.beam.max_len = b.at("max_len").get<std::size_t>();
    c.input = j.at("input").get<std::string>();
    c.output = j.at("output").get<std::string>();
    c.length_normalized = j.at("length_normalized").get<bool>();
    c.plot = j.at("plot").get<bool>();
    return c;
  } catch (const ConfigError&) {
    throw;
  } catch (const std::exception& e) {
    throw ConfigError(e.what());
  }
}

bool value_fits(const json& slot, const json& value) {
  if (slot.is_string()) return value.is_string();
  if (slot.is_boolean()) return value.is_boolean();
  if (slot.is_number()) {
    if (!value.is_number()) return false;
    if (slot.is_number_unsigned() && value.is_number_integer() &&
        value.get<long long>() < 0)
      return false;
    return true;
  }
  return false;
}

void check_keys(const json& user, const json& defaults, const std::string& path) {
  if (!user.is_object())
    throw ConfigError("config section is not an object: " + (path.empty() ? "." : path));
  for (const auto& [key, value] : user.items()) {
    const std::string full = path.empty() ? key : path + "." + key;
    const auto it = defaults.find(key);
    if (it == defaults.end()) throw ConfigError("unknown config key: " + full);
    if (it->is_object()) {
      check_keys(value, *it, full);
    } else if (!value_fits(*it, value)) {
      throw ConfigError("wrong value type for config key: " + full);
    }
  }
}

void deep_merge(json& base, const json& user) {
  for (const auto& [key, value] : user.items()) {
    if (value.is_object())
      deep_merge(base[key], value);
    else
      base[key] = value;
  }
}

void apply_override(json& doc, const std::string& setting) {
  const std::size_t eq = setting.find('=');
  if (eq == std::string::npos || eq == 0)
    throw ConfigError("override must look like key=value: " + setting);
  const std::string key = setting.substr(0, eq);
  const std::string raw = setting.substr(eq + 1);

  std::vector<std::string> parts;
  std::size_t begin = 0;
  while (true) {
    const std::size_t dot = key.find('.', begin);
    parts.push_back(key.substr(begin, dot - begin));
    if (dot == std::string::npos) break;
    begin = dot + 1;
  }

  json* slot = &doc;
  std::string walked;
  for (const std::string& part : parts) {
    walked = walked.empty() ? part : walked + "." + part;
    if (!slot->is_object() || !slot->contains(part))
      throw ConfigError("unknown config key: " + walked);
    slot = &(*slot)[part];
  }
  if (slot->is_object()) throw ConfigError("config key is a section, not a value: " + key);

  json value = json::parse(raw, nullptr, false);
  if (slot->is_string()) {
    *slot = raw;
    return;
  }
  if (value.is_discarded() || !value_fits(*slot, value))
    throw ConfigError("cannot parse value for " + key + ": " + raw);
  *slot = value;
}

// ---- shared command plumbing ----------------------------------------------

int classify_exit(const std::exception& e) {
  const std::string msg = e.what();
  if (msg.find("non-finite") != std::string::npos ||
      msg.find("diverged") != std::string::npos)
    return kExitNumeric;
  return kExitData;
}

template <typename F>
int guarded(std::ostream& out, F&& body) {
  try {
    return body();
  } catch (const ConfigError& e) {
    out << "error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const std::exception& e) {
    out << "error: " << e.what() << "\n";
    return classify_exit(e);
  }
}

std::string vocab_path(const DataPaths& d) {
  return d.vocab.empty() ? (fs::path(d.dir) / "vocab.txt").string() : d.vocab;
}

std::string contrastive_path(const DataPaths& d) {
  return d.contrastive.empty() ? (fs::path(d.dir) / "contrastive.jsonl").string()
                               : d.contrastive;
}

std::string split_file(const DataPaths& d, const std::string& prefix, const char* ext) {
  return (fs::path(d.dir) / (prefix + ext)).string();
}

void echo_config(const RunConfig& cfg, const fs::path& dir) {
  fs::create_directories(dir);
  std::ofstream out(dir / "config.json");
  if (!out) throw std::runtime_error("cannot write config echo in " + dir.string());
  out << run_config_to_json(cfg) << "\n";
}

Model load_model_for(const RunConfig& cfg, CheckpointInfo* info) {
  std::string path = cfg.checkpoint;
  if (path.empty()) path = latest_checkpoint(cfg.run_dir);
  if (path.empty())
    throw ConfigError("no checkpoint configured and none found under " + cfg.run_dir);
  return load_checkpoint(path, info);
}

std::vector<ExamplePair> encode_pairs(const ParallelCorpus& corpus, const Vocabulary& vocab,
                                      std::size_t max_len, std::size_t* skipped) {
  std::vector<ExamplePair> pairs;
  for (std::size_t i = 0; i < corpus.src.size(); ++i) {
    ExamplePair p;
    p.src = vocab.encode(split_tokens(corpus.src[i]));
    p.tgt = vocab.encode(split_tokens(corpus.tgt[i]));
    if (p.src.empty() || p.tgt.empty() || p.src.size() > max_len ||
        p.tgt.size() + 1 > max_len) {
      if (skipped) ++*skipped;
      continue;
    }
    pairs.push_back(std::move(p));
  }
  return pairs;
}

std::vector<std::string> translate_lines(const Model& model, const Vocabulary& vocab,
                                         const std::vector<std::string>& lines,
                                         const BeamOptions& beam, std::size_t* truncated) {
  if (beam.size == 0) throw ConfigError("beam.size must be positive");
  const std::size_t src_limit = model.config().max_len;
  const std::size_t out_limit = model.config().max_len - 1;
  const std::size_t max_out = beam.max_len ? std::min(beam.max_len, out_limit) : out_limit;
  std::vector<std::string> out;
  out.reserve(lines.size());
  for (const std::string& line : lines) {
    const std::vector<std::string> tokens = split_tokens(line);
    if (tokens.empty()) {
      out.emplace_back();
      continue;
    }
    std::vector<int> ids = vocab.encode(tokens);
    if (ids.size() > src_limit) {
      ids.resize(src_limit);
      if (truncated) ++*truncated;
    }
    const BeamResult res = beam_search(model, ids, beam.size, max_out, beam.len_penalty);
    out.push_back(join_tokens(vocab.decode(res.tokens)));
  }
  return out;
}

std::vector<std::string> read_lines(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open input file: " + path);
  std::vector<std::string> lines;
  for (std::string line; std::getline(in, line);) lines.push_back(line);
  return lines;
}

// ---- SVG line charts --------------------------------------------------------

struct ChartSeries {
  std::string label;
  std::vector<std::pair<double, double>> points;
};

void write_svg_chart(const std::string& path, const std::string& title,
                     const std::vector<ChartSeries>& series) {
  constexpr double kW = 640, kH = 400, kLeft = 64, kRight = 20, kTop = 44, kBottom = 44;
  double xmin = 0, xmax = 1, ymin = 0, ymax = 1;
  bool first = true;
  for (const ChartSeries& s : series)
    for (const auto& [x, y] : s.points) {
      if (!std::isfinite(x) || !std::isfinite(y)) continue;
      if (first) {
        xmin = xmax = x;
        ymin = ymax = y;
        first = false;
      }
      xmin = std::min(xmin, x);
      xmax = std::max(xmax, x);
      ymin = std::min(ymin, y);
      ymax = std::max(ymax, y);
    }
  if (xmax == xmin) xmax = xmin + 1;
  if (ymax == ymin) ymax = ymin + 1;
  const auto sx = [&](double x) { return kLeft + (x - xmin) / (xmax - xmin) * (kW - kLeft - kRight); };
  const auto sy = [&](double y) { return kH - kBottom - (y - ymin) / (ymax - ymin) * (kH - kTop - kBottom); };

  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write chart: " + path);
  out << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << kW << "\" height=\"" << kH
      << "\" font-family=\"sans-serif\" font-size=\"12\">\n";
  out << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  out << "<text x=\"" << kW / 2 << "\" y=\"20\" text-anchor=\"middle\" font-size=\"15\">"
      << title << "</text>\n";
  out << "<line x1=\"" << kLeft << "\" y1=\"" << kH - kBottom << "\" x2=\"" << kW - kRight
      << "\" y2=\"" << kH - kBottom << "\" stroke=\"black\"/>\n";
  out << "<line x1=\"" << kLeft << "\" y1=\"" << kTop << "\" x2=\"" << kLeft << "\" y2=\""
      << kH - kBottom << "\" stroke=\"black\"/>\n";
  for (int i = 0; i <= 4; ++i) {
    const double fx = xmin + (xmax - xmin) * i / 4.0;
    const double fy = ymin + (ymax - ymin) * i / 4.0;
    char buf[32];
    std::snprintf(buf, sizeof buf, "%g", fx);
    out << "<text x=\"" << sx(fx) << "\" y=\"" << kH - kBottom + 16
        << "\" text-anchor=\"middle\">" << buf << "</text>\n";
    std::snprintf(buf, sizeof buf, "%g", fy);
    out << "<text x=\"" << kLeft - 6 << "\" y=\"" << sy(fy) + 4
        << "\" text-anchor=\"end\">" << buf << "</text>\n";
  }
  static const char* kPalette[] = {"#1f77b4", "#d62728", "#2ca02c", "#9467bd",
                                   "#ff7f0e", "#8c564b", "#17becf", "#7f7f7f"};
  for (std::size_t s = 0; s < series.size(); ++s) {
    const char* color = kPalette[s % 8];
    out << "<polyline fill=\"none\" stroke=\"" << color << "\" stroke-width=\"1.5\" points=\"";
    for (const auto& [x, y] : series[s].points)
      if (std::isfinite(x) && std::isfinite(y)) out << sx(x) << ',' << sy(y) << ' ';
    out << "\"/>\n";
    out << "<text x=\"" << kW - kRight - 4 << "\" y=\"" << kTop + 14 * double(s)
        << "\" text-anchor=\"end\" fill=\"" << color << "\">" << series[s].label
        << "</text>\n";
  }
  out << "</svg>\n";
}

void plot_metrics(const std::string& csv_path, const fs::path& dir) {
  std::ifstream in(csv_path);
  if (!in) return;
  std::string header;
  if (!std::getline(in, header)) return;
  std::vector<std::string> cols;
  {
    std::stringstream ss(header);
    for (std::string c; std::getline(ss, c, ',');) cols.push_back(c);
  }
  std::vector<ChartSeries> loss_series(1), gate_series;
  loss_series[0].label = "train loss";
  for (std::size_t c = 4; c < cols.size(); ++c)
    gate_series.push_back({cols[c], {}});
  for (std::string line; std::getline(in, line);) {
    std::stringstream ss(line);
    std::vector<double> row;
    for (std::string cell; std::getline(ss, cell, ',');) row.push_back(std::stod(cell));
    if (row.size() < 2) continue;
    loss_series[0].points.emplace_back(row[0], row[1]);
    for (std::size_t c = 4; c < row.size() && c - 4 < gate_series.size(); ++c)
      gate_series[c - 4].points.emplace_back(row[0], row[c]);
  }
  write_svg_chart((dir / "metrics.svg").string(), "training loss by step", loss_series);
  if (!gate_series.empty())
    write_svg_chart((dir / "gates.svg").string(), "mean gate activation by step", gate_series);
}

}  // namespace

// ---- config API -------------------------------------------------------------

std::string run_config_to_json(const RunConfig& config) { return config_doc(config).dump(2); }

RunConfig run_config_from_json(const std::string& text) {
  json user = json::parse(text, nullptr, false);
  if (user.is_discarded()) throw ConfigError("config is not valid JSON");
  json doc = config_doc(RunConfig{});
  check_keys(user, doc, "");
  deep_merge(doc, user);
  return config_from_doc(doc);
}

RunConfig resolve_config(const std::string& path, const std::vector<std::string>& overrides) {
  json doc = config_doc(RunConfig{});
  if (!path.empty()) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot read config file: " + path);
    std::stringstream buffer;
    buffer << in.rdbuf();
    json user = json::parse(buffer.str(), nullptr, false);
    if (user.is_discarded()) throw ConfigError("config is not valid JSON: " + path);
    check_keys(user, doc, "");
    deep_merge(doc, user);
  }
  for (const std::string& setting : overrides) apply_override(doc, setting);
  return config_from_doc(doc);
}

// ---- commands ---------------------------------------------------------------

int cmd_gen_data(const RunConfig& config, std::ostream& out) {
  return guarded(out, [&] {
    const GeneratedCorpus gen = gen_corpus(config.corpus);
    fs::create_directories(config.data.dir);
    write_parallel(config.data.dir, config.data.train_prefix, gen.train);
    write_parallel(config.data.dir, config.data.valid_prefix, gen.valid);
    write_parallel(config.data.dir, config.data.test_prefix, gen.test);

    std::vector<std::vector<std::string>> sentences;
    for (const std::string& line : gen.train.src) sentences.push_back(split_tokens(line));
    for (const std::string& line : gen.train.tgt) sentences.push_back(split_tokens(line));
    const Vocabulary vocab = Vocabulary::from_tokens(sentences);
    vocab.save(vocab_path(config.data));

    if (!gen.contrastive.empty())
      write_contrastive(contrastive_path(config.data), gen.contrastive);
    echo_config(config, config.data.dir);

    out << "wrote " << gen.train.src.size() << "/" << gen.valid.src.size() << "/"
        << gen.test.src.size() << " train/valid/test sentences, vocabulary of "
        << vocab.size() << " entries";
    if (!gen.contrastive.empty())
      out << ", " << gen.contrastive.size() << " contrastive records";
    out << "\n";
    return kExitOk;
  });
}

int cmd_train(const RunConfig& config, std::ostream& out) {
  return guarded(out, [&] {
    RunConfig cfg = config;
    const Vocabulary vocab = Vocabulary::load(vocab_path(cfg.data));
    const ParallelCorpus train_c =
        read_parallel(split_file(cfg.data, cfg.data.train_prefix, ".src"),
                      split_file(cfg.data, cfg.data.train_prefix, ".tgt"));
    const ParallelCorpus valid_c =
        read_parallel(split_file(cfg.data, cfg.data.valid_prefix, ".src"),
                      split_file(cfg.data, cfg.data.valid_prefix, ".tgt"));
    if (cfg.model.vocab_size == 0) cfg.model.vocab_size = vocab.size();
    if (cfg.model.vocab_size < vocab.size())
      throw ConfigError("model.vocab_size is smaller than the saved vocabulary");

    std::size_t skipped = 0;
    const auto train_data = encode_pairs(train_c, vocab, cfg.model.max_len, &skipped);
    const auto valid_data = encode_pairs(valid_c, vocab, cfg.model.max_len, &skipped);
    if (train_data.empty()) throw std::runtime_error("no usable training pairs");
    if (skipped) out << "note: skipped " << skipped << " over-length or empty pairs\n";

    fs::create_directories(cfg.run_dir);
    std::size_t start_step = 0;
    Model model = [&] {
      if (cfg.resume) {
        const std::string latest = latest_checkpoint(cfg.run_dir);
        if (!latest.empty()) {
          CheckpointInfo info;
          Model resumed = load_checkpoint(latest, &info);
          if (config_hash(info.config) != config_hash(cfg.model))
            throw std::runtime_error(
                "checkpoint in " + cfg.run_dir + " was trained with a different model config");
          start_step = info.step;
          out << "resuming from " << latest << " at step " << info.step << "\n";
          return resumed;
        }
      }
      return Model{cfg.model};
    }();

    echo_config(cfg, cfg.run_dir);
    TrainConfig tc = cfg.train;
    tc.out_dir = cfg.run_dir;
    const TrainResult result = train(model, train_data, valid_data, tc, start_step);

    out << "finished at step " << result.final_step << ", train loss " << result.final_loss;
    if (!result.validation_losses.empty())
      out << ", valid loss " << result.validation_losses.back().second;
    out << "\n";
    if (!result.last_checkpoint.empty())
      out << "checkpoint: " << result.last_checkpoint << "\n";
    if (cfg.plot) plot_metrics((fs::path(cfg.run_dir) / "metrics.csv").string(), cfg.run_dir);
    if (result.diverged) {
      out << "error: training diverged (non-finite loss)\n";
      return kExitNumeric;
    }
    return kExitOk;
  });
}

int cmd_translate(const RunConfig& config, std::ostream& out) {
  return guarded(out, [&] {
    if (config.input.empty()) throw ConfigError("translate needs input=FILE");
    CheckpointInfo info;
    const Model model = load_model_for(config, &info);
    const Vocabulary vocab = Vocabulary::load(vocab_path(config.data));
    if (vocab.size() > model.config().vocab_size)
      throw std::runtime_error("vocabulary is larger than the checkpoint's table");

    const std::vector<std::string> lines = read_lines(config.input);
    std::size_t truncated = 0;
    const std::vector<std::string> hyps =
        translate_lines(model, vocab, lines, config.beam, &truncated);
    if (truncated) out << "note: truncated " << truncated << " over-length source lines\n";

    if (config.output.empty()) {
      for (const std::string& h : hyps) out << h << "\n";
    } else {
      std::ofstream sink(config.output);
      if (!sink) throw std::runtime_error("cannot write output file: " + config.output);
      for (const std::string& h : hyps) sink << h << "\n";
      out << "translated " << hyps.size() << " lines from step-" << info.step
          << " checkpoint\n";
    }
    return kExitOk;
  });
}

int cmd_evaluate(const RunConfig& config, std::ostream& out) {
  return guarded(out, [&] {
    CheckpointInfo info;
    const Model model = load_model_for(config, &info);
    const Vocabulary vocab = Vocabulary::load(vocab_path(config.data));
    const ParallelCorpus test_c =
        read_parallel(split_file(config.data, config.data.test_prefix, ".src"),
                      split_file(config.data, config.data.test_prefix, ".tgt"));

    std::size_t truncated = 0;
    const std::vector<std::string> hyps =
        translate_lines(model, vocab, test_c.src, config.beam, &truncated);
    const BleuReport bleu = bleu_report(hyps, test_c.tgt);

    json report;
    report["bleu"] = {{"score", bleu.score},
                      {"precisions", std::vector<double>(bleu.precisions.begin(),
                                                         bleu.precisions.end())},
                      {"hyp_length", bleu.hyp_length},
                      {"ref_length", bleu.ref_length},
                      {"brevity_penalty", bleu.brevity_penalty}};
    report["config_hash"] = config_hash(info.config);
    report["seed"] = info.config.seed;
    report["checkpoint_step"] = info.step;
    report["variant"] = variant_name(info.config.variant);
    report["beam"] = config.beam.size;
    report["len_penalty"] = config.beam.len_penalty;
    report["sentences"] = test_c.src.size();
    report["truncated_sources"] = truncated;

    const std::string cpath = contrastive_path(config.data);
    if (fs::exists(cpath)) {
      const auto records = read_contrastive(cpath);
      const ContrastiveResult cr =
          contrastive_score(model, records, vocab, config.length_normalized);
      report["contrastive"] = {{"accuracy", cr.accuracy}, {"total", cr.total},
                               {"correct", cr.correct},  {"ties", cr.ties},
                               {"skipped", cr.skipped},
                               {"length_normalized", config.length_normalized}};
      out << "contrastive accuracy " << cr.accuracy << " over " << cr.total
          << " records\n";
    } else {
      out << "note: no contrastive file at " << cpath << ", skipping\n";
    }

    const std::string out_path =
        config.output.empty() ? (fs::path(config.run_dir) / "eval.json").string()
                              : config.output;
    fs::create_directories(fs::path(out_path).parent_path().empty()
                               ? fs::path(".")
                               : fs::path(out_path).parent_path());
    std::ofstream sink(out_path);
    if (!sink) throw std::runtime_error("cannot write report: " + out_path);
    sink << report.dump(2) << "\n";
    out << "BLEU " << bleu.score << " on " << test_c.src.size() << " sentences -> "
        << out_path << "\n";
    return kExitOk;
  });
}

namespace {

int probe_pipeline(const RunConfig& config, std::ostream& out, bool analyze) {
  return guarded(out, [&] {
    CheckpointInfo info;
    const Model model = load_model_for(config, &info);
    const Vocabulary vocab = Vocabulary::load(vocab_path(config.data));
    const ParallelCorpus corpus =
        read_parallel(split_file(config.data, config.data.test_prefix, ".src"),
                      split_file(config.data, config.data.test_prefix, ".tgt"));

    const fs::path report_dir = fs::path(config.run_dir) / (analyze ? "analysis" : "probe");
    const fs::path dump_dir = fs::path(config.run_dir) / "states";
    StateDump dump;
    if (fs::exists(dump_dir / "index.jsonl")) {
      dump = load_state_dump(dump_dir.string());
      out << "reusing state dump in " << dump_dir.string() << "\n";
      if (dump.n_layers != model.config().n_layers || dump.d_model != model.config().d_model)
        throw std::runtime_error("saved state dump does not match the checkpoint");
    } else {
      dump = dump_states(model, corpus, vocab, config.probe_sentences);
      save_state_dump(dump_dir.string(), dump);
    }

    ProbeReport report;
    for (const bool decoder : {false, true}) {
      ProbeConfig pc = config.probe;
      pc.decoder = decoder;
      for (std::size_t layer = 0; layer <= dump.n_layers; ++layer)
        report.probes.push_back(train_probe(dump, layer, pc));
    }
    report.cosine = cosine_profile(dump);
    for (const ProbeResult& p : report.probes) {
      report.conditioned.push_back(
          conditioned_accuracy(dump, p, "frequency", config.probe_bins));
      report.conditioned.push_back(conditioned_accuracy(dump, p, "tag"));
    }
    if (analyze) {
      if (model.config().variant == ShortcutVariant::None || !model.config().gate_enabled)
        out << "note: model has no shortcut gates, skipping gate statistics\n";
      else
        report.gates = gate_stats(model, corpus, vocab, config.probe_sentences);
    }

    save_probe_report(report_dir.string(), report);
    echo_config(config, report_dir);
    for (const ProbeResult& p : report.probes)
      out << (p.decoder ? "decoder" : "encoder") << " layer " << p.layer << ": probe accuracy "
          << p.accuracy << " (" << p.test_count << " held-out states)\n";

    if (analyze && config.plot) {
      std::vector<ChartSeries> acc(2);
      acc[0].label = "encoder";
      acc[1].label = "decoder";
      for (const ProbeResult& p : report.probes)
        acc[p.decoder ? 1 : 0].points.emplace_back(double(p.layer), p.accuracy);
      write_svg_chart((report_dir / "probe_accuracy.svg").string(),
                      "probe accuracy by layer", acc);
      std::vector<ChartSeries> cos(2);
      cos[0].label = "encoder";
      cos[1].label = "decoder";
      for (std::size_t l = 0; l < report.cosine.encoder.size(); ++l) {
        cos[0].points.emplace_back(double(l), report.cosine.encoder[l]);
        cos[1].points.emplace_back(double(l), report.cosine.decoder[l]);
      }
      write_svg_chart((report_dir / "cosine.svg").string(),
                      "embedding-state cosine by layer", cos);
    }
    out << "report written to " << report_dir.string() << "\n";
    return kExitOk;
  });
}

}  // namespace

int cmd_probe(const RunConfig& config, std::ostream& out) {
  return probe_pipeline(config, out, false);
}

int cmd_analyze(const RunConfig& config, std::ostream& out) {
  return probe_pipeline(config, out, true);
}

int run_command(const std::string& command, const RunConfig& config, std::ostream& out) {
  if (command == "gen-data") return cmd_gen_data(config, out);
  if (command == "train") return cmd_train(config, out);
  if (command == "translate") return cmd_translate(config, out);
  if (command == "evaluate") return cmd_evaluate(config, out);
  if (command == "probe") return cmd_probe(config, out);
  if (command == "analyze") return cmd_analyze(config, out);
  out << "error: unknown command: " << command << "\n";
  return kExitUsage;
}

}  // namespace lexshort
