#include "lexshort/train.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <stdexcept>
#include <thread>

#include <json.hpp>

#include "lexshort/vocab.hpp"

namespace lexshort {

namespace fs = std::filesystem;
using nlohmann::json;

double noam_lr(std::size_t step, std::size_t d_model, std::size_t warmup, double factor) {
  if (step == 0) throw std::invalid_argument("noam_lr: step counter is 1-based");
  if (d_model == 0 || warmup == 0) throw std::invalid_argument("noam_lr: zero shape");
  const double s = static_cast<double>(step);
  const double w = static_cast<double>(warmup);
  return factor * std::pow(static_cast<double>(d_model), -0.5) *
         std::min(std::pow(s, -0.5), s * std::pow(w, -1.5));
}

AdamState::AdamState(std::vector<std::pair<std::string, Tensor>> params, AdamConfig cfg)
    : cfg_(cfg) {
  slots_.reserve(params.size());
  for (auto& [name, t] : params) {
    Slot s;
    s.name = name;
    s.param = t;
    s.m.assign(t.size(), 0.0);
    s.v.assign(t.size(), 0.0);
    slots_.push_back(std::move(s));
  }
}

void AdamState::step(double lr) {
  ++steps_;
  const double b1 = cfg_.beta1, b2 = cfg_.beta2;
  const double bc1 = 1.0 - std::pow(b1, static_cast<double>(steps_));
  const double bc2 = 1.0 - std::pow(b2, static_cast<double>(steps_));
  for (auto& s : slots_) {
    auto p = s.param.values();
    auto g = s.param.grad();
    for (std::size_t i = 0; i < p.size(); ++i) {
      const double gi = static_cast<double>(g[i]);
      if (!std::isfinite(gi)) {
        throw std::runtime_error("adam: non-finite gradient in parameter " + s.name);
      }
      s.m[i] = b1 * s.m[i] + (1.0 - b1) * gi;
      s.v[i] = b2 * s.v[i] + (1.0 - b2) * gi * gi;
      const double mh = s.m[i] / bc1;
      const double vh = s.v[i] / bc2;
      p[i] = static_cast<float>(static_cast<double>(p[i]) -
                                lr * mh / (std::sqrt(vh) + cfg_.eps));
    }
  }
}

void AdamState::zero_grads() {
  for (auto& s : slots_) s.param.zero_grad();
}

TrainBatch make_train_batch(const std::vector<ExamplePair>& items) {
  if (items.empty()) throw std::invalid_argument("make_train_batch: empty batch");
  std::vector<std::vector<int>> src, tin, tout;
  std::size_t tokens = 0;
  for (const auto& ex : items) {
    src.push_back(ex.src);
    std::vector<int> in = {kBosId};
    in.insert(in.end(), ex.tgt.begin(), ex.tgt.end());
    std::vector<int> out = ex.tgt;
    out.push_back(kEosId);
    tokens += out.size();
    tin.push_back(std::move(in));
    tout.push_back(std::move(out));
  }
  TrainBatch b;
  b.src = TokenBatch::from_rows(src, kPadId);
  b.tgt_in = TokenBatch::from_rows(tin, kPadId);
  b.tgt_out = TokenBatch::from_rows(tout, kPadId);
  b.target_tokens = tokens;
  return b;
}

namespace {

std::vector<std::size_t> shuffled_indices(std::size_t n, Rng rng) {
  std::vector<std::size_t> idx(n);
  for (std::size_t i = 0; i < n; ++i) idx[i] = i;
  for (std::size_t i = n; i > 1; --i) {
    const std::size_t j = rng.integer(i);
    std::swap(idx[i - 1], idx[j]);
  }
  return idx;
}

void write_latest(const std::string& dir, const std::string& filename, std::size_t step) {
  json j;
  j["path"] = filename;
  j["step"] = step;
  std::ofstream out(fs::path(dir) / "latest");
  out << j.dump() << "\n";
}

}  // namespace

std::string latest_checkpoint(const std::string& dir, std::size_t* step) {
  std::ifstream in(fs::path(dir) / "latest");
  if (!in) return "";
  std::string line;
  if (!std::getline(in, line)) return "";
  json j = json::parse(line);
  if (step) *step = j.value("step", std::size_t(0));
  return (fs::path(dir) / j.at("path").get<std::string>()).string();
}

double evaluate_loss(const Model& model, const std::vector<ExamplePair>& data,
                     std::size_t batch_size) {
  if (data.empty()) throw std::invalid_argument("evaluate_loss: no data");
  if (batch_size == 0) batch_size = 1;
  double total = 0.0;
  std::size_t tokens = 0;
  Rng rng(0);
  for (std::size_t begin = 0; begin < data.size(); begin += batch_size) {
    const std::size_t end = std::min(begin + batch_size, data.size());
    TrainBatch b = make_train_batch(
        std::vector<ExamplePair>(data.begin() + begin, data.begin() + end));
    Tensor loss = model.forward_loss(b.src, b.tgt_in, b.tgt_out, false, rng);
    total += static_cast<double>(loss.item()) * static_cast<double>(b.target_tokens);
    tokens += b.target_tokens;
  }
  return total / static_cast<double>(tokens);
}

TrainResult train(Model& model, const std::vector<ExamplePair>& train_data,
                  const std::vector<ExamplePair>& valid_data, const TrainConfig& config,
                  std::size_t start_step) {
  if (train_data.empty()) throw std::invalid_argument("train: no training data");
  if (config.batch_size == 0 || config.accumulation == 0) {
    throw std::invalid_argument("train: batch_size and accumulation must be positive");
  }
  if (start_step > config.steps) {
    throw std::invalid_argument("train: start_step beyond configured steps");
  }

  const std::size_t micro_per_epoch =
      (train_data.size() + config.batch_size - 1) / config.batch_size;
  const std::size_t total_micro = (config.steps - start_step) * config.accumulation;

  std::ofstream metrics;
  if (!config.out_dir.empty()) {
    fs::create_directories(config.out_dir);
    const fs::path mpath = fs::path(config.out_dir) / "metrics.csv";
    const bool fresh = start_step == 0 || !fs::exists(mpath);
    metrics.open(mpath, fresh ? std::ios::trunc : std::ios::app);
    if (fresh) {
      metrics << "step,loss,lr,tokens_per_sec";
      if (model.config().variant != ShortcutVariant::None && model.config().gate_enabled) {
        for (std::size_t l = 1; l <= model.config().n_layers; ++l) metrics << ",gate_l" << l;
      }
      metrics << "\n";
    }
  }

  BoundedQueue<TrainBatch> queue(config.queue_capacity);
  std::thread producer([&] {
    // replays the same batch stream an unbroken run would see
    std::size_t consumed = start_step * config.accumulation;
    std::size_t epoch = consumed / micro_per_epoch;
    std::size_t skip = consumed % micro_per_epoch;
    std::size_t produced = 0;
    while (produced < total_micro) {
      Rng order = Rng(config.seed).split("shuffle").split(epoch);
      auto idx = shuffled_indices(train_data.size(), order);
      for (std::size_t begin = skip * config.batch_size;
           begin < idx.size() && produced < total_micro; begin += config.batch_size) {
        const std::size_t end = std::min(begin + config.batch_size, idx.size());
        std::vector<ExamplePair> items;
        items.reserve(end - begin);
        for (std::size_t i = begin; i < end; ++i) items.push_back(train_data[idx[i]]);
        if (!queue.push(make_train_batch(items))) return;
        ++produced;
      }
      skip = 0;
      ++epoch;
    }
    queue.close();
  });

  TrainResult result;
  result.final_step = start_step;
  AdamState opt(model.named_parameters());
  const std::size_t n_layers = model.config().n_layers;
  const bool track_gates =
      model.config().variant != ShortcutVariant::None && model.config().gate_enabled;

  auto last_tick = std::chrono::steady_clock::now();
  std::size_t tokens_since_tick = 0;

  for (std::size_t step = start_step + 1; step <= config.steps && !result.diverged; ++step) {
    const double lr =
        noam_lr(step, model.config().d_model, config.warmup, config.lr_factor);
    opt.zero_grads();
    double loss_sum = 0.0;
    const bool log_now = !config.out_dir.empty() &&
                         (step % std::max<std::size_t>(config.log_every, 1) == 0 ||
                          step == config.steps);
    std::vector<GateActivationT<float>> gates;

    for (std::size_t k = 0; k < config.accumulation; ++k) {
      TrainBatch batch;
      if (!queue.pop(batch)) {
        throw std::runtime_error("train: batch stream ended early");
      }
      Tape tape;
      Tape::Scope scope(tape);
      Rng dropout_rng = Rng(config.seed).split("dropout").split(step).split(k);
      std::vector<GateActivationT<float>>* gp =
          (log_now && track_gates && k == 0) ? &gates : nullptr;
      Tensor loss =
          model.forward_loss(batch.src, batch.tgt_in, batch.tgt_out, true, dropout_rng, gp);
      const double value = static_cast<double>(loss.item());
      if (!std::isfinite(value)) {
        result.diverged = true;
        break;
      }
      loss_sum += value;
      tokens_since_tick += batch.target_tokens;
      Tensor scaled = scale(loss, 1.0f / static_cast<float>(config.accumulation));
      backward(scaled);
    }
    if (result.diverged) break;

    opt.step(lr);
    result.final_step = step;
    result.final_loss = loss_sum / static_cast<double>(config.accumulation);

    if (log_now) {
      const auto now = std::chrono::steady_clock::now();
      const double secs = std::chrono::duration<double>(now - last_tick).count();
      const double tps = secs > 0 ? static_cast<double>(tokens_since_tick) / secs : 0.0;
      last_tick = now;
      tokens_since_tick = 0;
      metrics << step << ',' << result.final_loss << ',' << lr << ',' << tps;
      if (track_gates) {
        std::vector<double> sums(n_layers, 0.0);
        std::vector<std::size_t> counts(n_layers, 0);
        for (const auto& g : gates) {
          for (const TensorT<float>* r : {&g.r_k, &g.r_v}) {
            for (float v : r->values()) sums[g.layer - 1] += v;
            counts[g.layer - 1] += r->size();
          }
        }
        for (std::size_t l = 0; l < n_layers; ++l) {
          metrics << ',' << (counts[l] ? sums[l] / static_cast<double>(counts[l]) : 0.0);
        }
      }
      metrics << "\n";
      metrics.flush();
    }

    if (config.validate_every && step % config.validate_every == 0 && !valid_data.empty()) {
      const double vl = evaluate_loss(model, valid_data, config.batch_size);
      result.validation_losses.emplace_back(step, vl);
      if (!std::isfinite(vl)) {
        result.diverged = true;
        break;
      }
    }

    if (!config.out_dir.empty() && config.checkpoint_every &&
        (step % config.checkpoint_every == 0 || step == config.steps)) {
      char name[32];
      std::snprintf(name, sizeof(name), "ckpt_%06zu.bin", step);
      const fs::path path = fs::path(config.out_dir) / name;
      save_checkpoint(path.string(), model, step);
      write_latest(config.out_dir, name, step);
      result.last_checkpoint = path.string();
    }
  }

  queue.close();
  producer.join();
  return result;
}

void average_checkpoints(const std::vector<std::string>& paths, const std::string& out_path) {
  if (paths.empty()) throw std::invalid_argument("average_checkpoints: no inputs");
  CheckpointInfo first_info;
  Model averaged = load_checkpoint(paths[0], &first_info);
  auto params = averaged.named_parameters();

  std::vector<std::vector<double>> acc(params.size());
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto v = params[i].second.values();
    acc[i].assign(v.begin(), v.end());
  }
  std::size_t max_step = first_info.step;
  for (std::size_t p = 1; p < paths.size(); ++p) {
    CheckpointInfo info;
    Model next = load_checkpoint(paths[p], &info);
    if (info.hash != first_info.hash) {
      throw std::runtime_error("average_checkpoints: configuration mismatch between " +
                               paths[0] + " and " + paths[p]);
    }
    max_step = std::max(max_step, info.step);
    auto nparams = next.named_parameters();
    for (std::size_t i = 0; i < params.size(); ++i) {
      auto v = nparams[i].second.values();
      for (std::size_t j = 0; j < v.size(); ++j) acc[i][j] += static_cast<double>(v[j]);
    }
  }
  const double inv = 1.0 / static_cast<double>(paths.size());
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto v = params[i].second.values();
    for (std::size_t j = 0; j < v.size(); ++j) {
      v[j] = static_cast<float>(acc[i][j] * inv);
    }
  }
  save_checkpoint(out_path, averaged, max_step);
}

}  // namespace lexshort
