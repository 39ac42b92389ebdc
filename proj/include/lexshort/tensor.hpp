#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace lexshort {

// Deterministic, seedable, splittable generator. Children derived via
// split() are independent of draws made on the parent.
class Rng {
 public:
  explicit Rng(std::uint64_t seed);
  Rng split(std::string_view name) const;
  Rng split(std::uint64_t index) const;

  double uniform(double lo, double hi);
  double normal(double mean, double stddev);
  std::uint64_t integer(std::uint64_t bound);  // [0, bound)
  bool bernoulli(double p);

  std::uint64_t seed() const { return seed_; }

 private:
  std::uint64_t seed_;
  std::uint64_t state_[2];
  std::uint64_t next_u64();
};

template <typename T>
struct TensorState {
  std::vector<std::size_t> shape;
  std::vector<T> data;
  std::vector<T> grad;  // allocated on first use
  bool requires_grad = false;
};

// Dense row-major tensor. Copies alias the underlying storage, so handing
// the same tensor to two owners shares parameters (tied embeddings).
template <typename T>
class TensorT {
 public:
  TensorT() : state_(std::make_shared<TensorState<T>>()) {}
  explicit TensorT(std::vector<std::size_t> shape, T fill = T(0));
  TensorT(std::vector<std::size_t> shape, std::vector<T> values);

  static TensorT scalar(T v) { return TensorT({}, std::vector<T>{v}); }
  static TensorT zeros(std::vector<std::size_t> shape) { return TensorT(std::move(shape)); }
  static TensorT full(std::vector<std::size_t> shape, T v) { return TensorT(std::move(shape), v); }
  static TensorT uniform(std::vector<std::size_t> shape, T lo, T hi, Rng& rng);
  static TensorT normal(std::vector<std::size_t> shape, T mean, T stddev, Rng& rng);

  const std::vector<std::size_t>& shape() const { return state_->shape; }
  std::size_t rank() const { return state_->shape.size(); }
  std::size_t size() const { return state_->data.size(); }
  std::size_t extent(std::size_t axis) const { return state_->shape[axis]; }

  std::span<T> values() { return state_->data; }
  std::span<const T> values() const { return state_->data; }

  T item() const;

  T& operator()(std::size_t i) { return state_->data[i]; }
  T operator()(std::size_t i) const { return state_->data[i]; }
  T& operator()(std::size_t i, std::size_t j);
  T operator()(std::size_t i, std::size_t j) const;
  T& operator()(std::size_t i, std::size_t j, std::size_t k);
  T operator()(std::size_t i, std::size_t j, std::size_t k) const;
  T& operator()(std::size_t i, std::size_t j, std::size_t k, std::size_t l);
  T operator()(std::size_t i, std::size_t j, std::size_t k, std::size_t l) const;

  bool requires_grad() const { return state_->requires_grad; }
  TensorT& set_requires_grad(bool flag);

  bool grad_allocated() const { return !state_->grad.empty(); }
  std::span<T> grad();  // zero-filled on first access
  std::span<const T> grad() const;
  void zero_grad();

  // Identity of the underlying storage; equal for aliasing handles.
  const void* storage_id() const { return state_.get(); }
  std::shared_ptr<TensorState<T>> state() const { return state_; }

  TensorT copy() const;  // deep copy, grad not carried over

 private:
  std::shared_ptr<TensorState<T>> state_;
};

using Tensor = TensorT<float>;
using DTensor = TensorT<double>;

// Reverse-mode record of executed operations in execution order. Backward
// replays the record once, in reverse.
template <typename T>
class TapeT {
 public:
  TapeT() = default;
  TapeT(const TapeT&) = delete;
  TapeT& operator=(const TapeT&) = delete;

  class Scope {
   public:
    explicit Scope(TapeT& tape);
    ~Scope();
    Scope(const Scope&) = delete;

   private:
    TapeT* previous_;
  };

  static TapeT* current();

  void record(const char* op, std::function<void()> backward_fn);
  std::size_t size() const { return records_.size(); }

  // Seeds grad(loss) with 1 and propagates through the record.
  void backward(TensorT<T>& loss);
  void reset();

 private:
  struct Record {
    const char* op;
    std::function<void()> backward_fn;
  };
  std::vector<Record> records_;
  bool consumed_ = false;
};

using Tape = TapeT<float>;
using DTape = TapeT<double>;

// When enabled, every op validates that its output is finite and throws
// naming the op otherwise. Off by default (training checks the loss only).
void set_finite_checks(bool enabled);
bool finite_checks_enabled();

std::string shape_string(const std::vector<std::size_t>& shape);

// ---- ops ----------------------------------------------------------------

// Leading extents broadcast against each other; the two trailing extents
// follow matrix multiply rules (after optional transposes).
template <typename T>
TensorT<T> matmul(const TensorT<T>& a, const TensorT<T>& b, bool trans_a = false,
                  bool trans_b = false);

template <typename T>
TensorT<T> add(const TensorT<T>& a, const TensorT<T>& b);
template <typename T>
TensorT<T> sub(const TensorT<T>& a, const TensorT<T>& b);
template <typename T>
TensorT<T> mul(const TensorT<T>& a, const TensorT<T>& b);
template <typename T>
TensorT<T> scale(const TensorT<T>& a, T factor);
template <typename T>
TensorT<T> add_scalar(const TensorT<T>& a, T value);

template <typename T>
TensorT<T> relu(const TensorT<T>& x);
template <typename T>
TensorT<T> sigmoid(const TensorT<T>& x);
template <typename T>
TensorT<T> softmax(const TensorT<T>& x, int axis);
template <typename T>
TensorT<T> log_softmax(const TensorT<T>& x, int axis);

// Normalizes the last axis; gamma/beta have that axis' extent.
template <typename T>
TensorT<T> layer_norm(const TensorT<T>& x, const TensorT<T>& gamma, const TensorT<T>& beta,
                      T eps = T(1e-6));

// ids are row indices into table [vocab x d]; result is [ids_shape... x d].
template <typename T>
TensorT<T> embedding_lookup(const TensorT<T>& table, std::span<const int> ids,
                            const std::vector<std::size_t>& ids_shape);

template <typename T>
TensorT<T> concat(const std::vector<TensorT<T>>& parts, int axis);
template <typename T>
std::vector<TensorT<T>> split(const TensorT<T>& x, const std::vector<std::size_t>& sizes,
                              int axis);

template <typename T>
TensorT<T> reshape(const TensorT<T>& x, std::vector<std::size_t> shape);

// [b x t x d] -> [b x heads x t x d/heads] and back.
template <typename T>
TensorT<T> split_heads(const TensorT<T>& x, std::size_t heads);
template <typename T>
TensorT<T> merge_heads(const TensorT<T>& x);

template <typename T>
TensorT<T> sum(const TensorT<T>& x);

// Mean cross-entropy over positions with nonzero weight.
// logits: [n x vocab] (or any shape flattenable to that), targets: n ids,
// weights: n values in {0,1} (or empty for all-ones).
template <typename T>
TensorT<T> cross_entropy(const TensorT<T>& logits, std::span<const int> targets,
                         std::span<const T> weights, T label_smoothing = T(0));

// Inverted scaling: train-mode output has the input as its expectation.
// Inference mode returns the input unchanged.
template <typename T>
TensorT<T> dropout(const TensorT<T>& x, double rate, Rng& rng, bool training);

template <typename T>
TensorT<T> detach(const TensorT<T>& x);

// Convenience entry point matching the usual calling style: requires an
// active tape, errors on non-scalar losses and on reuse without reset.
template <typename T>
void backward(TensorT<T>& loss);

// Central-difference check of reverse-mode gradients. Returns
// max |analytic - numeric| / max(1, |analytic|, |numeric|) over the probed
// coordinates (all coordinates when coords_per_tensor == 0).
template <typename T>
double grad_check(const std::function<TensorT<T>()>& forward, std::vector<TensorT<T>> inputs,
                  double eps, std::size_t coords_per_tensor = 0);

}  // namespace lexshort
