#pragma once

#include <condition_variable>
#include <cstddef>
#include <deque>
#include <mutex>
#include <string>
#include <utility>
#include <vector>

#include "lexshort/model.hpp"

namespace lexshort {

// factor * d_model^{-1/2} * min(step^{-1/2}, step * warmup^{-3/2})
double noam_lr(std::size_t step, std::size_t d_model, std::size_t warmup, double factor = 1.0);

struct AdamConfig {
  double beta1 = 0.9;
  double beta2 = 0.98;
  double eps = 1e-9;
};

// Moment buffers are kept in double; updates read each parameter's
// accumulated gradient and leave it untouched (callers zero between steps).
class AdamState {
 public:
  explicit AdamState(std::vector<std::pair<std::string, Tensor>> params, AdamConfig cfg = {});

  void step(double lr);  // throws when any gradient is non-finite, naming the parameter
  void zero_grads();
  std::size_t step_count() const { return steps_; }

 private:
  struct Slot {
    std::string name;
    Tensor param;
    std::vector<double> m, v;
  };
  std::vector<Slot> slots_;
  AdamConfig cfg_;
  std::size_t steps_ = 0;
};

struct ExamplePair {
  std::vector<int> src, tgt;
};

struct TrainBatch {
  TokenBatch src, tgt_in, tgt_out;
  std::size_t target_tokens = 0;
};

// tgt_in = BOS + tgt, tgt_out = tgt + EOS
TrainBatch make_train_batch(const std::vector<ExamplePair>& items);

// Single-producer single-consumer blocking queue with bounded capacity.
template <typename T>
class BoundedQueue {
 public:
  explicit BoundedQueue(std::size_t capacity) : capacity_(capacity ? capacity : 1) {}

  bool push(T item) {
    std::unique_lock<std::mutex> lock(mu_);
    not_full_.wait(lock, [&] { return closed_ || queue_.size() < capacity_; });
    if (closed_) return false;
    queue_.push_back(std::move(item));
    not_empty_.notify_one();
    return true;
  }

  bool pop(T& out) {
    std::unique_lock<std::mutex> lock(mu_);
    not_empty_.wait(lock, [&] { return closed_ || !queue_.empty(); });
    if (queue_.empty()) return false;
    out = std::move(queue_.front());
    queue_.pop_front();
    not_full_.notify_one();
    return true;
  }

  void close() {
    std::lock_guard<std::mutex> lock(mu_);
    closed_ = true;
    not_empty_.notify_all();
    not_full_.notify_all();
  }

 private:
  std::mutex mu_;
  std::condition_variable not_full_, not_empty_;
  std::deque<T> queue_;
  std::size_t capacity_;
  bool closed_ = false;
};

struct TrainConfig {
  std::size_t steps = 1000;
  std::size_t batch_size = 32;   // sentences per micro-batch
  std::size_t accumulation = 1;  // micro-batches averaged per update
  std::size_t warmup = 400;
  double lr_factor = 1.0;
  std::size_t log_every = 50;
  std::size_t validate_every = 250;
  std::size_t checkpoint_every = 500;
  std::size_t queue_capacity = 4;
  std::uint64_t seed = 1;
  std::string out_dir;  // empty: keep everything in memory
};

struct TrainResult {
  std::size_t final_step = 0;
  double final_loss = 0.0;
  bool diverged = false;
  std::string last_checkpoint;
  std::vector<std::pair<std::size_t, double>> validation_losses;
};

// Runs the update loop from start_step (exclusive) to config.steps. Batches
// are assembled on a producer thread; their order depends only on the seed
// and start_step, so an interrupted run continues on the same stream.
TrainResult train(Model& model, const std::vector<ExamplePair>& train_data,
                  const std::vector<ExamplePair>& valid_data, const TrainConfig& config,
                  std::size_t start_step = 0);

// Token-mean validation loss in inference mode.
double evaluate_loss(const Model& model, const std::vector<ExamplePair>& data,
                     std::size_t batch_size);

// Pathname of the newest checkpoint recorded in dir's `latest` manifest, or
// empty when none exists.
std::string latest_checkpoint(const std::string& dir, std::size_t* step = nullptr);

// Equal-weight parameter mean in double precision. All inputs must share a
// configuration hash; the result is written as a checkpoint at out_path.
void average_checkpoints(const std::vector<std::string>& paths, const std::string& out_path);

}  // namespace lexshort
