#include "lexshort/tensor.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <numeric>
#include <sstream>
#include <stdexcept>

namespace lexshort {

// ---- rng ------------------------------------------------------------------

namespace {

std::uint64_t splitmix64(std::uint64_t& x) {
  x += 0x9e3779b97f4a7c15ULL;
  std::uint64_t z = x;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

std::uint64_t fnv1a64(std::uint64_t seed, std::string_view name) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (int i = 0; i < 8; ++i) {
    h ^= (seed >> (8 * i)) & 0xff;
    h *= 0x100000001b3ULL;
  }
  for (unsigned char c : name) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

}  // namespace

Rng::Rng(std::uint64_t seed) : seed_(seed) {
  std::uint64_t s = seed;
  state_[0] = splitmix64(s);
  state_[1] = splitmix64(s);
}

Rng Rng::split(std::string_view name) const { return Rng(fnv1a64(seed_, name)); }

Rng Rng::split(std::uint64_t index) const {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "#%llu", static_cast<unsigned long long>(index));
  return Rng(fnv1a64(seed_, buf));
}

std::uint64_t Rng::next_u64() {
  // xorshift128+
  std::uint64_t s1 = state_[0];
  const std::uint64_t s0 = state_[1];
  state_[0] = s0;
  s1 ^= s1 << 23;
  state_[1] = s1 ^ s0 ^ (s1 >> 18) ^ (s0 >> 5);
  return state_[1] + s0;
}

double Rng::uniform(double lo, double hi) {
  const double u = static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
  return lo + u * (hi - lo);
}

double Rng::normal(double mean, double stddev) {
  // Box-Muller; u nudged away from 0 to keep log finite.
  constexpr double two_pi = 6.283185307179586476925286766559;
  double u = static_cast<double>((next_u64() >> 11) + 1) * 0x1.0p-53;
  double v = static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
  double z = std::sqrt(-2.0 * std::log(u)) * std::cos(two_pi * v);
  return mean + stddev * z;
}

std::uint64_t Rng::integer(std::uint64_t bound) {
  if (bound == 0) throw std::invalid_argument("Rng::integer: bound must be positive");
  return next_u64() % bound;
}

bool Rng::bernoulli(double p) { return uniform(0.0, 1.0) < p; }

// ---- tensor ----------------------------------------------------------------

namespace {

std::size_t shape_product(const std::vector<std::size_t>& shape) {
  std::size_t n = 1;
  for (std::size_t e : shape) n *= e;
  return n;
}

}  // namespace

std::string shape_string(const std::vector<std::size_t>& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ", ";
    os << shape[i];
  }
  os << ']';
  return os.str();
}

template <typename T>
TensorT<T>::TensorT(std::vector<std::size_t> shape, T fill)
    : state_(std::make_shared<TensorState<T>>()) {
  state_->shape = std::move(shape);
  state_->data.assign(shape_product(state_->shape), fill);
}

template <typename T>
TensorT<T>::TensorT(std::vector<std::size_t> shape, std::vector<T> values)
    : state_(std::make_shared<TensorState<T>>()) {
  if (shape_product(shape) != values.size()) {
    throw std::invalid_argument("tensor: " + shape_string(shape) + " does not hold " +
                                std::to_string(values.size()) + " values");
  }
  state_->shape = std::move(shape);
  state_->data = std::move(values);
}

template <typename T>
TensorT<T> TensorT<T>::uniform(std::vector<std::size_t> shape, T lo, T hi, Rng& rng) {
  TensorT out(std::move(shape));
  for (T& v : out.state_->data) v = static_cast<T>(rng.uniform(lo, hi));
  return out;
}

template <typename T>
TensorT<T> TensorT<T>::normal(std::vector<std::size_t> shape, T mean, T stddev, Rng& rng) {
  TensorT out(std::move(shape));
  for (T& v : out.state_->data) v = static_cast<T>(rng.normal(mean, stddev));
  return out;
}

template <typename T>
T TensorT<T>::item() const {
  if (size() != 1) {
    throw std::invalid_argument("item: tensor " + shape_string(shape()) + " is not a scalar");
  }
  return state_->data[0];
}

template <typename T>
T& TensorT<T>::operator()(std::size_t i, std::size_t j) {
  return state_->data[i * state_->shape.back() + j];
}
template <typename T>
T TensorT<T>::operator()(std::size_t i, std::size_t j) const {
  return state_->data[i * state_->shape.back() + j];
}
template <typename T>
T& TensorT<T>::operator()(std::size_t i, std::size_t j, std::size_t k) {
  const auto& s = state_->shape;
  return state_->data[(i * s[1] + j) * s[2] + k];
}
template <typename T>
T TensorT<T>::operator()(std::size_t i, std::size_t j, std::size_t k) const {
  const auto& s = state_->shape;
  return state_->data[(i * s[1] + j) * s[2] + k];
}
template <typename T>
T& TensorT<T>::operator()(std::size_t i, std::size_t j, std::size_t k, std::size_t l) {
  const auto& s = state_->shape;
  return state_->data[((i * s[1] + j) * s[2] + k) * s[3] + l];
}
template <typename T>
T TensorT<T>::operator()(std::size_t i, std::size_t j, std::size_t k, std::size_t l) const {
  const auto& s = state_->shape;
  return state_->data[((i * s[1] + j) * s[2] + k) * s[3] + l];
}

template <typename T>
TensorT<T>& TensorT<T>::set_requires_grad(bool flag) {
  state_->requires_grad = flag;
  return *this;
}

template <typename T>
std::span<T> TensorT<T>::grad() {
  if (state_->grad.empty()) state_->grad.assign(state_->data.size(), T(0));
  return state_->grad;
}

template <typename T>
std::span<const T> TensorT<T>::grad() const {
  if (state_->grad.empty()) state_->grad.assign(state_->data.size(), T(0));
  return state_->grad;
}

template <typename T>
void TensorT<T>::zero_grad() {
  std::fill(state_->grad.begin(), state_->grad.end(), T(0));
}

template <typename T>
TensorT<T> TensorT<T>::copy() const {
  TensorT out(state_->shape, state_->data);
  out.state_->requires_grad = state_->requires_grad;
  return out;
}

// ---- tape -------------------------------------------------------------------

namespace {
template <typename T>
TapeT<T>*& current_tape() {
  thread_local TapeT<T>* tape = nullptr;
  return tape;
}
}  // namespace

template <typename T>
TapeT<T>::Scope::Scope(TapeT& tape) : previous_(current_tape<T>()) {
  current_tape<T>() = &tape;
}

template <typename T>
TapeT<T>::Scope::~Scope() {
  current_tape<T>() = previous_;
}

template <typename T>
TapeT<T>* TapeT<T>::current() {
  return current_tape<T>();
}

template <typename T>
void TapeT<T>::record(const char* op, std::function<void()> backward_fn) {
  records_.push_back({op, std::move(backward_fn)});
}

template <typename T>
void TapeT<T>::backward(TensorT<T>& loss) {
  if (loss.size() != 1) {
    throw std::invalid_argument("backward: loss must be scalar, got " +
                                shape_string(loss.shape()));
  }
  if (consumed_) {
    throw std::runtime_error("backward: tape already consumed; call reset() first");
  }
  consumed_ = true;
  loss.grad()[0] += T(1);
  for (auto it = records_.rbegin(); it != records_.rend(); ++it) it->backward_fn();
}

template <typename T>
void TapeT<T>::reset() {
  records_.clear();
  consumed_ = false;
}

template <typename T>
void backward(TensorT<T>& loss) {
  TapeT<T>* tape = TapeT<T>::current();
  if (!tape) throw std::runtime_error("backward: no active tape");
  tape->backward(loss);
}

// ---- op helpers ---------------------------------------------------------------

namespace {

std::atomic<bool> g_finite_checks{false};

template <typename T>
void maybe_check_finite(const TensorT<T>& t, const char* op) {
  if (!g_finite_checks.load(std::memory_order_relaxed)) return;
  for (T v : t.values()) {
    if (!std::isfinite(static_cast<double>(v))) {
      throw std::runtime_error(std::string("non-finite value produced by ") + op);
    }
  }
}

template <typename T>
bool recording(std::initializer_list<const TensorT<T>*> inputs) {
  if (!TapeT<T>::current()) return false;
  for (const TensorT<T>* t : inputs) {
    if (t->requires_grad()) return true;
  }
  return false;
}

int normalize_axis(int axis, std::size_t rank, const char* op) {
  int r = static_cast<int>(rank);
  if (axis < 0) axis += r;
  if (axis < 0 || axis >= r) {
    throw std::invalid_argument(std::string(op) + ": axis out of range for rank " +
                                std::to_string(rank));
  }
  return axis;
}

// numpy-style broadcast of b against a's (left-padded) shape
std::vector<std::size_t> broadcast_shapes(const std::vector<std::size_t>& a,
                                          const std::vector<std::size_t>& b, const char* op) {
  const std::size_t rank = std::max(a.size(), b.size());
  std::vector<std::size_t> out(rank);
  for (std::size_t i = 0; i < rank; ++i) {
    const std::size_t ea = i < rank - a.size() ? 1 : a[i - (rank - a.size())];
    const std::size_t eb = i < rank - b.size() ? 1 : b[i - (rank - b.size())];
    if (ea != eb && ea != 1 && eb != 1) {
      throw std::invalid_argument(std::string(op) + ": shapes not broadcastable: " +
                                  shape_string(a) + " vs " + shape_string(b));
    }
    out[i] = std::max(ea, eb);
  }
  return out;
}

// Row-major strides of `shape` aligned to `out` rank, 0 on broadcast axes.
std::vector<std::size_t> broadcast_strides(const std::vector<std::size_t>& shape,
                                           const std::vector<std::size_t>& out) {
  std::vector<std::size_t> strides(out.size(), 0);
  std::size_t stride = 1;
  for (std::size_t i = 0; i < shape.size(); ++i) {
    const std::size_t axis = shape.size() - 1 - i;
    const std::size_t out_axis = out.size() - 1 - i;
    if (shape[axis] != 1) strides[out_axis] = stride;
    stride *= shape[axis];
  }
  return strides;
}

// Calls fn(out_index, a_offset, b_offset) for every output element.
template <typename Fn>
void for_each_broadcast(const std::vector<std::size_t>& out,
                        const std::vector<std::size_t>& sa,
                        const std::vector<std::size_t>& sb, Fn&& fn) {
  const std::size_t rank = out.size();
  const std::size_t total = shape_product(out);
  std::vector<std::size_t> idx(rank, 0);
  std::size_t oa = 0, ob = 0;
  for (std::size_t flat = 0; flat < total; ++flat) {
    fn(flat, oa, ob);
    for (std::size_t i = rank; i-- > 0;) {
      idx[i]++;
      oa += sa[i];
      ob += sb[i];
      if (idx[i] < out[i]) break;
      oa -= sa[i] * out[i];
      ob -= sb[i] * out[i];
      idx[i] = 0;
    }
  }
}

template <typename T, typename FwdFn, typename DaFn, typename DbFn>
TensorT<T> broadcast_binary(const char* op, const TensorT<T>& a, const TensorT<T>& b,
                            FwdFn&& fwd, DaFn&& dfda, DbFn&& dfdb) {
  const auto out_shape = broadcast_shapes(a.shape(), b.shape(), op);
  const auto sa = broadcast_strides(a.shape(), out_shape);
  const auto sb = broadcast_strides(b.shape(), out_shape);
  TensorT<T> out(out_shape);
  auto av = a.values();
  auto bv = b.values();
  auto ov = out.values();
  if (a.shape() == b.shape()) {
    for (std::size_t i = 0; i < ov.size(); ++i) ov[i] = fwd(av[i], bv[i]);
  } else {
    for_each_broadcast(out_shape, sa, sb,
                       [&](std::size_t o, std::size_t ia, std::size_t ib) {
                         ov[o] = fwd(av[ia], bv[ib]);
                       });
  }
  maybe_check_finite(out, op);
  if (recording<T>({&a, &b})) {
    out.set_requires_grad(true);
    const bool same_shape = a.shape() == b.shape();
    TensorT<T> ac = a, bc = b, oc = out;
    TapeT<T>::current()->record(
        op, [ac, bc, oc, out_shape, sa, sb, dfda, dfdb, same_shape]() mutable {
          auto g = oc.grad();
          auto av2 = ac.values();
          auto bv2 = bc.values();
          const bool need_a = ac.requires_grad();
          const bool need_b = bc.requires_grad();
          std::span<T> ga = need_a ? ac.grad() : std::span<T>{};
          std::span<T> gb = need_b ? bc.grad() : std::span<T>{};
          if (same_shape) {
            for (std::size_t i = 0; i < g.size(); ++i) {
              if (need_a) ga[i] += dfda(av2[i], bv2[i]) * g[i];
              if (need_b) gb[i] += dfdb(av2[i], bv2[i]) * g[i];
            }
            return;
          }
          for_each_broadcast(out_shape, sa, sb,
                             [&](std::size_t o, std::size_t ia, std::size_t ib) {
                               if (need_a) ga[ia] += dfda(av2[ia], bv2[ib]) * g[o];
                               if (need_b) gb[ib] += dfdb(av2[ia], bv2[ib]) * g[o];
                             });
        });
  }
  return out;
}

template <typename T, typename FwdFn, typename BwdFn>
TensorT<T> elementwise_unary(const char* op, const TensorT<T>& x, FwdFn&& fwd, BwdFn&& dydx) {
  TensorT<T> out(x.shape());
  auto xv = x.values();
  auto ov = out.values();
  for (std::size_t i = 0; i < ov.size(); ++i) ov[i] = fwd(xv[i]);
  maybe_check_finite(out, op);
  if (recording<T>({&x})) {
    out.set_requires_grad(true);
    TensorT<T> xc = x, oc = out;
    TapeT<T>::current()->record(op, [xc, oc, dydx]() mutable {
      auto g = oc.grad();
      auto xv2 = xc.values();
      auto ov2 = oc.values();
      auto gx = xc.grad();
      for (std::size_t i = 0; i < g.size(); ++i) gx[i] += dydx(xv2[i], ov2[i]) * g[i];
    });
  }
  return out;
}

// ---- gemm kernels (row-major, accumulate into C) ----

template <typename T>
void gemm_nn(const T* a, const T* b, T* c, std::size_t m, std::size_t k, std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t p = 0; p < k; ++p) {
      const T av = a[i * k + p];
      const T* brow = b + p * n;
      T* crow = c + i * n;
      for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

// c[m x n] += a[m x k] * b[n x k]^T
template <typename T>
void gemm_nt(const T* a, const T* b, T* c, std::size_t m, std::size_t k, std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    const T* arow = a + i * k;
    for (std::size_t j = 0; j < n; ++j) {
      const T* brow = b + j * k;
      T s = 0;
      for (std::size_t p = 0; p < k; ++p) s += arow[p] * brow[p];
      c[i * n + j] += s;
    }
  }
}

// c[m x n] += a[k x m]^T * b[k x n]
template <typename T>
void gemm_tn(const T* a, const T* b, T* c, std::size_t m, std::size_t k, std::size_t n) {
  for (std::size_t p = 0; p < k; ++p) {
    const T* arow = a + p * m;
    const T* brow = b + p * n;
    for (std::size_t i = 0; i < m; ++i) {
      const T av = arow[i];
      T* crow = c + i * n;
      for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

// c[m x n] += a[k x m]^T * b[n x k]^T
template <typename T>
void gemm_tt(const T* a, const T* b, T* c, std::size_t m, std::size_t k, std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      T s = 0;
      for (std::size_t p = 0; p < k; ++p) s += a[p * m + i] * b[j * k + p];
      c[i * n + j] += s;
    }
  }
}

struct LeadMap {
  std::vector<std::size_t> out_lead;
  std::vector<std::size_t> a_offsets;  // per out-lead index, slice offsets
  std::vector<std::size_t> b_offsets;
};

LeadMap map_leading(const std::vector<std::size_t>& a_shape,
                    const std::vector<std::size_t>& b_shape, const char* op) {
  std::vector<std::size_t> la(a_shape.begin(), a_shape.end() - 2);
  std::vector<std::size_t> lb(b_shape.begin(), b_shape.end() - 2);
  LeadMap map;
  map.out_lead = broadcast_shapes(la, lb, op);
  const auto sa = broadcast_strides(la, map.out_lead);
  const auto sb = broadcast_strides(lb, map.out_lead);
  const std::size_t count = shape_product(map.out_lead);
  map.a_offsets.resize(count);
  map.b_offsets.resize(count);
  for_each_broadcast(map.out_lead, sa, sb,
                     [&](std::size_t o, std::size_t ia, std::size_t ib) {
                       map.a_offsets[o] = ia;
                       map.b_offsets[o] = ib;
                     });
  return map;
}

}  // namespace

void set_finite_checks(bool enabled) { g_finite_checks.store(enabled); }
bool finite_checks_enabled() { return g_finite_checks.load(); }

// ---- ops ----------------------------------------------------------------------

template <typename T>
TensorT<T> matmul(const TensorT<T>& a, const TensorT<T>& b, bool trans_a, bool trans_b) {
  if (a.rank() < 2 || b.rank() < 2) {
    throw std::invalid_argument("matmul: operands must have rank >= 2, got " +
                                shape_string(a.shape()) + " and " + shape_string(b.shape()));
  }
  const auto& sa = a.shape();
  const auto& sb = b.shape();
  const std::size_t m = trans_a ? sa[sa.size() - 1] : sa[sa.size() - 2];
  const std::size_t ka = trans_a ? sa[sa.size() - 2] : sa[sa.size() - 1];
  const std::size_t kb = trans_b ? sb[sb.size() - 1] : sb[sb.size() - 2];
  const std::size_t n = trans_b ? sb[sb.size() - 2] : sb[sb.size() - 1];
  if (ka != kb) {
    throw std::invalid_argument("matmul: inner extents differ: " + shape_string(sa) + " vs " +
                                shape_string(sb));
  }
  const std::size_t k = ka;
  LeadMap lead = map_leading(sa, sb, "matmul");

  std::vector<std::size_t> out_shape = lead.out_lead;
  out_shape.push_back(m);
  out_shape.push_back(n);
  TensorT<T> out(out_shape);

  const std::size_t a_slice = sa[sa.size() - 1] * sa[sa.size() - 2];
  const std::size_t b_slice = sb[sb.size() - 1] * sb[sb.size() - 2];
  const std::size_t o_slice = m * n;
  const T* ap = a.values().data();
  const T* bp = b.values().data();
  T* op = out.values().data();
  for (std::size_t l = 0; l < lead.a_offsets.size(); ++l) {
    const T* as = ap + lead.a_offsets[l] * a_slice;
    const T* bs = bp + lead.b_offsets[l] * b_slice;
    T* os = op + l * o_slice;
    if (!trans_a && !trans_b) gemm_nn(as, bs, os, m, k, n);
    else if (!trans_a && trans_b) gemm_nt(as, bs, os, m, k, n);
    else if (trans_a && !trans_b) gemm_tn(as, bs, os, m, k, n);
    else gemm_tt(as, bs, os, m, k, n);
  }
  maybe_check_finite(out, "matmul");

  if (recording<T>({&a, &b})) {
    out.set_requires_grad(true);
    TensorT<T> ac = a, bc = b, oc = out;
    TapeT<T>::current()->record("matmul", [ac, bc, oc, lead, m, k, n, a_slice, b_slice,
                                           o_slice, trans_a, trans_b]() mutable {
      const T* g = oc.grad().data();
      const T* av = ac.values().data();
      const T* bv = bc.values().data();
      const bool need_a = ac.requires_grad();
      const bool need_b = bc.requires_grad();
      T* ga = need_a ? ac.grad().data() : nullptr;
      T* gb = need_b ? bc.grad().data() : nullptr;
      for (std::size_t l = 0; l < lead.a_offsets.size(); ++l) {
        const T* gs = g + l * o_slice;
        const T* as = av + lead.a_offsets[l] * a_slice;
        const T* bs = bv + lead.b_offsets[l] * b_slice;
        if (need_a) {
          T* gas = ga + lead.a_offsets[l] * a_slice;
          if (!trans_a && !trans_b) gemm_nt(gs, bs, gas, m, n, k);
          else if (!trans_a && trans_b) gemm_nn(gs, bs, gas, m, n, k);
          else if (trans_a && !trans_b) gemm_nt(bs, gs, gas, k, n, m);
          else gemm_tt(bs, gs, gas, k, n, m);
        }
        if (need_b) {
          T* gbs = gb + lead.b_offsets[l] * b_slice;
          if (!trans_b && !trans_a) gemm_tn(as, gs, gbs, k, m, n);
          else if (!trans_b && trans_a) gemm_nn(as, gs, gbs, k, m, n);
          else if (trans_b && !trans_a) gemm_tn(gs, as, gbs, n, m, k);
          else gemm_tt(gs, as, gbs, n, m, k);
        }
      }
    });
  }
  return out;
}

template <typename T>
TensorT<T> add(const TensorT<T>& a, const TensorT<T>& b) {
  return broadcast_binary<T>(
      "add", a, b, [](T x, T y) { return x + y; }, [](T, T) { return T(1); },
      [](T, T) { return T(1); });
}

template <typename T>
TensorT<T> sub(const TensorT<T>& a, const TensorT<T>& b) {
  return broadcast_binary<T>(
      "sub", a, b, [](T x, T y) { return x - y; }, [](T, T) { return T(1); },
      [](T, T) { return T(-1); });
}

template <typename T>
TensorT<T> mul(const TensorT<T>& a, const TensorT<T>& b) {
  return broadcast_binary<T>(
      "mul", a, b, [](T x, T y) { return x * y; }, [](T, T y) { return y; },
      [](T x, T) { return x; });
}

template <typename T>
TensorT<T> scale(const TensorT<T>& a, T factor) {
  return elementwise_unary<T>(
      "scale", a, [factor](T x) { return x * factor; }, [factor](T, T) { return factor; });
}

template <typename T>
TensorT<T> add_scalar(const TensorT<T>& a, T value) {
  return elementwise_unary<T>(
      "add_scalar", a, [value](T x) { return x + value; }, [](T, T) { return T(1); });
}

template <typename T>
TensorT<T> relu(const TensorT<T>& x) {
  return elementwise_unary<T>(
      "relu", x, [](T v) { return v > T(0) ? v : T(0); },
      [](T v, T) { return v > T(0) ? T(1) : T(0); });
}

template <typename T>
TensorT<T> sigmoid(const TensorT<T>& x) {
  return elementwise_unary<T>(
      "sigmoid", x,
      [](T v) {
        if (v >= T(0)) return T(1) / (T(1) + std::exp(-v));
        const T e = std::exp(v);
        return e / (T(1) + e);
      },
      [](T, T y) { return y * (T(1) - y); });
}

namespace {

struct AxisSpan {
  std::size_t outer, len, inner;
};

AxisSpan axis_span(const std::vector<std::size_t>& shape, int axis) {
  AxisSpan s{1, shape[static_cast<std::size_t>(axis)], 1};
  for (int i = 0; i < axis; ++i) s.outer *= shape[static_cast<std::size_t>(i)];
  for (std::size_t i = static_cast<std::size_t>(axis) + 1; i < shape.size(); ++i)
    s.inner *= shape[i];
  return s;
}

}  // namespace

template <typename T>
TensorT<T> softmax(const TensorT<T>& x, int axis) {
  const int ax = normalize_axis(axis, x.rank(), "softmax");
  const AxisSpan s = axis_span(x.shape(), ax);
  if (s.len == 0) throw std::invalid_argument("softmax: empty axis");
  TensorT<T> out(x.shape());
  auto xv = x.values();
  auto ov = out.values();
  for (std::size_t o = 0; o < s.outer; ++o) {
    for (std::size_t i = 0; i < s.inner; ++i) {
      const std::size_t base = o * s.len * s.inner + i;
      T mx = xv[base];
      for (std::size_t t = 1; t < s.len; ++t) mx = std::max(mx, xv[base + t * s.inner]);
      T total = 0;
      for (std::size_t t = 0; t < s.len; ++t) {
        const T e = std::exp(xv[base + t * s.inner] - mx);
        ov[base + t * s.inner] = e;
        total += e;
      }
      const T inv = T(1) / total;
      for (std::size_t t = 0; t < s.len; ++t) ov[base + t * s.inner] *= inv;
    }
  }
  maybe_check_finite(out, "softmax");
  if (recording<T>({&x})) {
    out.set_requires_grad(true);
    TensorT<T> xc = x, oc = out;
    TapeT<T>::current()->record("softmax", [xc, oc, s]() mutable {
      auto g = oc.grad();
      auto y = oc.values();
      auto gx = xc.grad();
      for (std::size_t o = 0; o < s.outer; ++o) {
        for (std::size_t i = 0; i < s.inner; ++i) {
          const std::size_t base = o * s.len * s.inner + i;
          T dot = 0;
          for (std::size_t t = 0; t < s.len; ++t) {
            const std::size_t p = base + t * s.inner;
            dot += g[p] * y[p];
          }
          for (std::size_t t = 0; t < s.len; ++t) {
            const std::size_t p = base + t * s.inner;
            gx[p] += (g[p] - dot) * y[p];
          }
        }
      }
    });
  }
  return out;
}

template <typename T>
TensorT<T> log_softmax(const TensorT<T>& x, int axis) {
  const int ax = normalize_axis(axis, x.rank(), "log_softmax");
  const AxisSpan s = axis_span(x.shape(), ax);
  if (s.len == 0) throw std::invalid_argument("log_softmax: empty axis");
  TensorT<T> out(x.shape());
  auto xv = x.values();
  auto ov = out.values();
  for (std::size_t o = 0; o < s.outer; ++o) {
    for (std::size_t i = 0; i < s.inner; ++i) {
      const std::size_t base = o * s.len * s.inner + i;
      T mx = xv[base];
      for (std::size_t t = 1; t < s.len; ++t) mx = std::max(mx, xv[base + t * s.inner]);
      T total = 0;
      for (std::size_t t = 0; t < s.len; ++t) total += std::exp(xv[base + t * s.inner] - mx);
      const T lse = mx + std::log(total);
      for (std::size_t t = 0; t < s.len; ++t)
        ov[base + t * s.inner] = xv[base + t * s.inner] - lse;
    }
  }
  maybe_check_finite(out, "log_softmax");
  if (recording<T>({&x})) {
    out.set_requires_grad(true);
    TensorT<T> xc = x, oc = out;
    TapeT<T>::current()->record("log_softmax", [xc, oc, s]() mutable {
      auto g = oc.grad();
      auto y = oc.values();
      auto gx = xc.grad();
      for (std::size_t o = 0; o < s.outer; ++o) {
        for (std::size_t i = 0; i < s.inner; ++i) {
          const std::size_t base = o * s.len * s.inner + i;
          T gsum = 0;
          for (std::size_t t = 0; t < s.len; ++t) gsum += g[base + t * s.inner];
          for (std::size_t t = 0; t < s.len; ++t) {
            const std::size_t p = base + t * s.inner;
            gx[p] += g[p] - std::exp(y[p]) * gsum;
          }
        }
      }
    });
  }
  return out;
}

template <typename T>
TensorT<T> layer_norm(const TensorT<T>& x, const TensorT<T>& gamma, const TensorT<T>& beta,
                      T eps) {
  const std::size_t d = x.shape().back();
  if (gamma.size() != d || beta.size() != d) {
    throw std::invalid_argument("layer_norm: scale/shift must have extent " +
                                std::to_string(d));
  }
  const std::size_t rows = x.size() / d;
  TensorT<T> out(x.shape());
  std::vector<T> inv_std(rows), centered(x.size());
  auto xv = x.values();
  auto gv = gamma.values();
  auto bv = beta.values();
  auto ov = out.values();
  for (std::size_t r = 0; r < rows; ++r) {
    const std::size_t base = r * d;
    T mean = 0;
    for (std::size_t j = 0; j < d; ++j) mean += xv[base + j];
    mean /= static_cast<T>(d);
    T var = 0;
    for (std::size_t j = 0; j < d; ++j) {
      const T c = xv[base + j] - mean;
      centered[base + j] = c;
      var += c * c;
    }
    var /= static_cast<T>(d);
    const T inv = T(1) / std::sqrt(var + eps);
    inv_std[r] = inv;
    for (std::size_t j = 0; j < d; ++j)
      ov[base + j] = centered[base + j] * inv * gv[j] + bv[j];
  }
  maybe_check_finite(out, "layer_norm");
  if (recording<T>({&x, &gamma, &beta})) {
    out.set_requires_grad(true);
    TensorT<T> xc = x, gc = gamma, bc = beta, oc = out;
    TapeT<T>::current()->record(
        "layer_norm", [xc, gc, bc, oc, rows, d, inv_std = std::move(inv_std),
                       centered = std::move(centered)]() mutable {
          auto g = oc.grad();
          auto gv2 = gc.values();
          const bool need_x = xc.requires_grad();
          const bool need_g = gc.requires_grad();
          const bool need_b = bc.requires_grad();
          std::span<T> gx = need_x ? xc.grad() : std::span<T>{};
          std::span<T> gg = need_g ? gc.grad() : std::span<T>{};
          std::span<T> gb = need_b ? bc.grad() : std::span<T>{};
          for (std::size_t r = 0; r < rows; ++r) {
            const std::size_t base = r * d;
            const T inv = inv_std[r];
            T sum_dy = 0, sum_dy_xhat = 0;
            for (std::size_t j = 0; j < d; ++j) {
              const T xhat = centered[base + j] * inv;
              const T dy = g[base + j] * gv2[j];
              sum_dy += dy;
              sum_dy_xhat += dy * xhat;
              if (need_g) gg[j] += g[base + j] * xhat;
              if (need_b) gb[j] += g[base + j];
            }
            if (need_x) {
              const T invd = T(1) / static_cast<T>(d);
              for (std::size_t j = 0; j < d; ++j) {
                const T xhat = centered[base + j] * inv;
                const T dy = g[base + j] * gv2[j];
                gx[base + j] += inv * (dy - sum_dy * invd - xhat * sum_dy_xhat * invd);
              }
            }
          }
        });
  }
  return out;
}

template <typename T>
TensorT<T> embedding_lookup(const TensorT<T>& table, std::span<const int> ids,
                            const std::vector<std::size_t>& ids_shape) {
  if (table.rank() != 2) {
    throw std::invalid_argument("embedding_lookup: table must be rank 2, got " +
                                shape_string(table.shape()));
  }
  const std::size_t vocab = table.extent(0);
  const std::size_t d = table.extent(1);
  if (shape_product(ids_shape) != ids.size()) {
    throw std::invalid_argument("embedding_lookup: ids shape mismatch");
  }
  std::vector<std::size_t> out_shape = ids_shape;
  out_shape.push_back(d);
  TensorT<T> out(out_shape);
  auto tv = table.values();
  auto ov = out.values();
  for (std::size_t i = 0; i < ids.size(); ++i) {
    const int id = ids[i];
    if (id < 0 || static_cast<std::size_t>(id) >= vocab) {
      throw std::invalid_argument("embedding_lookup: token id " + std::to_string(id) +
                                  " out of range for vocab " + std::to_string(vocab));
    }
    std::copy_n(tv.data() + static_cast<std::size_t>(id) * d, d, ov.data() + i * d);
  }
  if (recording<T>({&table})) {
    out.set_requires_grad(true);
    TensorT<T> tc = table, oc = out;
    std::vector<int> ids_copy(ids.begin(), ids.end());
    TapeT<T>::current()->record("embedding_lookup", [tc, oc, ids_copy, d]() mutable {
      auto g = oc.grad();
      auto gt = tc.grad();
      for (std::size_t i = 0; i < ids_copy.size(); ++i) {
        T* dst = gt.data() + static_cast<std::size_t>(ids_copy[i]) * d;
        const T* src = g.data() + i * d;
        for (std::size_t j = 0; j < d; ++j) dst[j] += src[j];
      }
    });
  }
  return out;
}

template <typename T>
TensorT<T> concat(const std::vector<TensorT<T>>& parts, int axis) {
  if (parts.empty()) throw std::invalid_argument("concat: no inputs");
  const int ax = normalize_axis(axis, parts[0].rank(), "concat");
  std::vector<std::size_t> out_shape = parts[0].shape();
  std::size_t total_axis = 0;
  for (const auto& p : parts) {
    auto s = p.shape();
    s[static_cast<std::size_t>(ax)] = 0;
    auto ref = out_shape;
    ref[static_cast<std::size_t>(ax)] = 0;
    if (s != ref) {
      throw std::invalid_argument("concat: incompatible shapes " + shape_string(p.shape()) +
                                  " vs " + shape_string(parts[0].shape()));
    }
    total_axis += p.extent(static_cast<std::size_t>(ax));
  }
  out_shape[static_cast<std::size_t>(ax)] = total_axis;
  TensorT<T> out(out_shape);
  const AxisSpan so = axis_span(out_shape, ax);
  auto ov = out.values();
  std::size_t axis_base = 0;
  bool any_grad = false;
  for (const auto& p : parts) {
    const std::size_t len = p.extent(static_cast<std::size_t>(ax));
    auto pv = p.values();
    for (std::size_t o = 0; o < so.outer; ++o) {
      std::copy_n(pv.data() + o * len * so.inner, len * so.inner,
                  ov.data() + (o * so.len + axis_base) * so.inner);
    }
    axis_base += len;
    any_grad = any_grad || p.requires_grad();
  }
  if (TapeT<T>::current() && any_grad) {
    out.set_requires_grad(true);
    TensorT<T> oc = out;
    std::vector<TensorT<T>> pc = parts;
    TapeT<T>::current()->record("concat", [oc, pc, so, ax]() mutable {
      auto g = oc.grad();
      std::size_t axis_base = 0;
      for (auto& p : pc) {
        const std::size_t len = p.extent(static_cast<std::size_t>(ax));
        if (p.requires_grad()) {
          auto gp = p.grad();
          for (std::size_t o = 0; o < so.outer; ++o) {
            const T* src = g.data() + (o * so.len + axis_base) * so.inner;
            T* dst = gp.data() + o * len * so.inner;
            for (std::size_t j = 0; j < len * so.inner; ++j) dst[j] += src[j];
          }
        }
        axis_base += len;
      }
    });
  }
  return out;
}

template <typename T>
std::vector<TensorT<T>> split(const TensorT<T>& x, const std::vector<std::size_t>& sizes,
                              int axis) {
  const int ax = normalize_axis(axis, x.rank(), "split");
  const std::size_t axis_len = x.extent(static_cast<std::size_t>(ax));
  std::size_t total = 0;
  for (std::size_t s : sizes) total += s;
  if (total != axis_len) {
    throw std::invalid_argument("split: sizes sum to " + std::to_string(total) +
                                " but axis has extent " + std::to_string(axis_len));
  }
  const AxisSpan sx = axis_span(x.shape(), ax);
  auto xv = x.values();
  std::vector<TensorT<T>> parts;
  std::size_t axis_base = 0;
  for (std::size_t len : sizes) {
    std::vector<std::size_t> shape = x.shape();
    shape[static_cast<std::size_t>(ax)] = len;
    TensorT<T> part(shape);
    auto pv = part.values();
    for (std::size_t o = 0; o < sx.outer; ++o) {
      std::copy_n(xv.data() + (o * sx.len + axis_base) * sx.inner, len * sx.inner,
                  pv.data() + o * len * sx.inner);
    }
    if (recording<T>({&x})) {
      part.set_requires_grad(true);
      TensorT<T> xc = x, pc = part;
      const std::size_t base = axis_base;
      TapeT<T>::current()->record("split", [xc, pc, sx, base, len]() mutable {
        auto g = pc.grad();
        auto gx = xc.grad();
        for (std::size_t o = 0; o < sx.outer; ++o) {
          T* dst = gx.data() + (o * sx.len + base) * sx.inner;
          const T* src = g.data() + o * len * sx.inner;
          for (std::size_t j = 0; j < len * sx.inner; ++j) dst[j] += src[j];
        }
      });
    }
    parts.push_back(std::move(part));
    axis_base += len;
  }
  return parts;
}

template <typename T>
TensorT<T> reshape(const TensorT<T>& x, std::vector<std::size_t> shape) {
  if (shape_product(shape) != x.size()) {
    throw std::invalid_argument("reshape: cannot view " + shape_string(x.shape()) + " as " +
                                shape_string(shape));
  }
  TensorT<T> out(std::move(shape), std::vector<T>(x.values().begin(), x.values().end()));
  if (recording<T>({&x})) {
    out.set_requires_grad(true);
    TensorT<T> xc = x, oc = out;
    TapeT<T>::current()->record("reshape", [xc, oc]() mutable {
      auto g = oc.grad();
      auto gx = xc.grad();
      for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i];
    });
  }
  return out;
}

template <typename T>
TensorT<T> split_heads(const TensorT<T>& x, std::size_t heads) {
  if (x.rank() != 3) {
    throw std::invalid_argument("split_heads: expected [b x t x d], got " +
                                shape_string(x.shape()));
  }
  const std::size_t b = x.extent(0), t = x.extent(1), d = x.extent(2);
  if (heads == 0 || d % heads != 0) {
    throw std::invalid_argument("split_heads: feature extent " + std::to_string(d) +
                                " not divisible by " + std::to_string(heads) + " heads");
  }
  const std::size_t dk = d / heads;
  TensorT<T> out({b, heads, t, dk});
  auto xv = x.values();
  auto ov = out.values();
  for (std::size_t ib = 0; ib < b; ++ib)
    for (std::size_t h = 0; h < heads; ++h)
      for (std::size_t it = 0; it < t; ++it)
        std::copy_n(xv.data() + (ib * t + it) * d + h * dk, dk,
                    ov.data() + ((ib * heads + h) * t + it) * dk);
  if (recording<T>({&x})) {
    out.set_requires_grad(true);
    TensorT<T> xc = x, oc = out;
    TapeT<T>::current()->record("split_heads", [xc, oc, b, t, d, heads, dk]() mutable {
      auto g = oc.grad();
      auto gx = xc.grad();
      for (std::size_t ib = 0; ib < b; ++ib)
        for (std::size_t h = 0; h < heads; ++h)
          for (std::size_t it = 0; it < t; ++it) {
            const T* src = g.data() + ((ib * heads + h) * t + it) * dk;
            T* dst = gx.data() + (ib * t + it) * d + h * dk;
            for (std::size_t j = 0; j < dk; ++j) dst[j] += src[j];
          }
    });
  }
  return out;
}

template <typename T>
TensorT<T> merge_heads(const TensorT<T>& x) {
  if (x.rank() != 4) {
    throw std::invalid_argument("merge_heads: expected [b x h x t x dk], got " +
                                shape_string(x.shape()));
  }
  const std::size_t b = x.extent(0), heads = x.extent(1), t = x.extent(2), dk = x.extent(3);
  const std::size_t d = heads * dk;
  TensorT<T> out({b, t, d});
  auto xv = x.values();
  auto ov = out.values();
  for (std::size_t ib = 0; ib < b; ++ib)
    for (std::size_t h = 0; h < heads; ++h)
      for (std::size_t it = 0; it < t; ++it)
        std::copy_n(xv.data() + ((ib * heads + h) * t + it) * dk, dk,
                    ov.data() + (ib * t + it) * d + h * dk);
  if (recording<T>({&x})) {
    out.set_requires_grad(true);
    TensorT<T> xc = x, oc = out;
    TapeT<T>::current()->record("merge_heads", [xc, oc, b, t, d, heads, dk]() mutable {
      auto g = oc.grad();
      auto gx = xc.grad();
      for (std::size_t ib = 0; ib < b; ++ib)
        for (std::size_t h = 0; h < heads; ++h)
          for (std::size_t it = 0; it < t; ++it) {
            const T* src = g.data() + (ib * t + it) * d + h * dk;
            T* dst = gx.data() + ((ib * heads + h) * t + it) * dk;
            for (std::size_t j = 0; j < dk; ++j) dst[j] += src[j];
          }
    });
  }
  return out;
}

template <typename T>
TensorT<T> sum(const TensorT<T>& x) {
  T total = 0;
  for (T v : x.values()) total += v;
  TensorT<T> out = TensorT<T>::scalar(total);
  maybe_check_finite(out, "sum");
  if (recording<T>({&x})) {
    out.set_requires_grad(true);
    TensorT<T> xc = x, oc = out;
    TapeT<T>::current()->record("sum", [xc, oc]() mutable {
      const T g = oc.grad()[0];
      auto gx = xc.grad();
      for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += g;
    });
  }
  return out;
}

template <typename T>
TensorT<T> cross_entropy(const TensorT<T>& logits, std::span<const int> targets,
                         std::span<const T> weights, T label_smoothing) {
  if (logits.rank() < 2) {
    throw std::invalid_argument("cross_entropy: logits must have rank >= 2");
  }
  const std::size_t vocab = logits.shape().back();
  const std::size_t n = logits.size() / vocab;
  if (targets.size() != n) {
    throw std::invalid_argument("cross_entropy: " + std::to_string(targets.size()) +
                                " targets for " + std::to_string(n) + " rows");
  }
  if (!weights.empty() && weights.size() != n) {
    throw std::invalid_argument("cross_entropy: weight count mismatch");
  }
  auto lv = logits.values();
  T weight_total = 0;
  std::vector<T> log_probs(logits.size());
  T loss_total = 0;
  for (std::size_t r = 0; r < n; ++r) {
    const T w = weights.empty() ? T(1) : weights[r];
    const std::size_t base = r * vocab;
    T mx = lv[base];
    for (std::size_t j = 1; j < vocab; ++j) mx = std::max(mx, lv[base + j]);
    T total = 0;
    for (std::size_t j = 0; j < vocab; ++j) total += std::exp(lv[base + j] - mx);
    const T lse = mx + std::log(total);
    T mean_lp = 0;
    for (std::size_t j = 0; j < vocab; ++j) {
      log_probs[base + j] = lv[base + j] - lse;
      mean_lp += log_probs[base + j];
    }
    mean_lp /= static_cast<T>(vocab);
    if (w != T(0)) {
      const int tgt = targets[r];
      if (tgt < 0 || static_cast<std::size_t>(tgt) >= vocab) {
        throw std::invalid_argument("cross_entropy: target id " + std::to_string(tgt) +
                                    " out of range");
      }
      const T nll = -log_probs[base + static_cast<std::size_t>(tgt)];
      loss_total += w * ((T(1) - label_smoothing) * nll + label_smoothing * (-mean_lp));
      weight_total += w;
    }
  }
  if (weight_total == T(0)) {
    throw std::invalid_argument("cross_entropy: no unmasked positions");
  }
  TensorT<T> out = TensorT<T>::scalar(loss_total / weight_total);
  maybe_check_finite(out, "cross_entropy");
  if (recording<T>({&logits})) {
    out.set_requires_grad(true);
    TensorT<T> lc = logits, oc = out;
    std::vector<int> tgt_copy(targets.begin(), targets.end());
    std::vector<T> w_copy(weights.begin(), weights.end());
    TapeT<T>::current()->record(
        "cross_entropy", [lc, oc, tgt_copy, w_copy, log_probs = std::move(log_probs), n,
                          vocab, weight_total, label_smoothing]() mutable {
          const T g = oc.grad()[0];
          auto gl = lc.grad();
          for (std::size_t r = 0; r < n; ++r) {
            const T w = w_copy.empty() ? T(1) : w_copy[r];
            if (w == T(0)) continue;
            const std::size_t base = r * vocab;
            const T coeff = g * w / weight_total;
            const T uniform = label_smoothing / static_cast<T>(vocab);
            for (std::size_t j = 0; j < vocab; ++j) {
              T q = uniform;
              if (j == static_cast<std::size_t>(tgt_copy[r])) q += T(1) - label_smoothing;
              gl[base + j] += coeff * (std::exp(log_probs[base + j]) - q);
            }
          }
        });
  }
  return out;
}

template <typename T>
TensorT<T> dropout(const TensorT<T>& x, double rate, Rng& rng, bool training) {
  if (rate < 0.0 || rate >= 1.0) {
    throw std::invalid_argument("dropout: rate must be in [0, 1)");
  }
  if (!training || rate == 0.0) return x;
  const T keep_scale = static_cast<T>(1.0 / (1.0 - rate));
  std::vector<T> mask(x.size());
  for (T& m : mask) m = rng.bernoulli(1.0 - rate) ? keep_scale : T(0);
  TensorT<T> out(x.shape());
  auto xv = x.values();
  auto ov = out.values();
  for (std::size_t i = 0; i < ov.size(); ++i) ov[i] = xv[i] * mask[i];
  if (recording<T>({&x})) {
    out.set_requires_grad(true);
    TensorT<T> xc = x, oc = out;
    TapeT<T>::current()->record("dropout", [xc, oc, mask = std::move(mask)]() mutable {
      auto g = oc.grad();
      auto gx = xc.grad();
      for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i] * mask[i];
    });
  }
  return out;
}

template <typename T>
TensorT<T> detach(const TensorT<T>& x) {
  return TensorT<T>(x.shape(), std::vector<T>(x.values().begin(), x.values().end()));
}

// ---- grad_check ---------------------------------------------------------------

template <typename T>
double grad_check(const std::function<TensorT<T>()>& forward, std::vector<TensorT<T>> inputs,
                  double eps, std::size_t coords_per_tensor) {
  const bool was_checking = finite_checks_enabled();
  set_finite_checks(true);
  std::vector<std::vector<T>> analytic(inputs.size());
  {
    TapeT<T> tape;
    typename TapeT<T>::Scope scope(tape);
    for (auto& in : inputs) {
      in.set_requires_grad(true);
      in.grad();
      in.zero_grad();
    }
    TensorT<T> loss = forward();
    tape.backward(loss);
    for (std::size_t i = 0; i < inputs.size(); ++i) {
      auto g = inputs[i].grad();
      analytic[i].assign(g.begin(), g.end());
    }
  }
  double max_err = 0.0;
  Rng coord_rng(0x9d2c5680);
  for (std::size_t i = 0; i < inputs.size(); ++i) {
    auto data = inputs[i].values();
    std::vector<std::size_t> coords;
    if (coords_per_tensor == 0 || data.size() <= coords_per_tensor) {
      coords.resize(data.size());
      std::iota(coords.begin(), coords.end(), 0);
    } else {
      for (std::size_t c = 0; c < coords_per_tensor; ++c)
        coords.push_back(coord_rng.integer(data.size()));
    }
    for (std::size_t c : coords) {
      const T saved = data[c];
      data[c] = saved + static_cast<T>(eps);
      const double up = static_cast<double>(forward().item());
      data[c] = saved - static_cast<T>(eps);
      const double down = static_cast<double>(forward().item());
      data[c] = saved;
      const double numeric = (up - down) / (2.0 * eps);
      const double exact = static_cast<double>(analytic[i][c]);
      const double err =
          std::abs(exact - numeric) / std::max({1.0, std::abs(exact), std::abs(numeric)});
      max_err = std::max(max_err, err);
    }
  }
  set_finite_checks(was_checking);
  return max_err;
}

// ---- instantiations -------------------------------------------------------------

template class TensorT<float>;
template class TensorT<double>;
template class TapeT<float>;
template class TapeT<double>;

#define LEXSHORT_INSTANTIATE_OPS(T)                                                          \
  template void backward<T>(TensorT<T>&);                                                    \
  template TensorT<T> matmul<T>(const TensorT<T>&, const TensorT<T>&, bool, bool);           \
  template TensorT<T> add<T>(const TensorT<T>&, const TensorT<T>&);                          \
  template TensorT<T> sub<T>(const TensorT<T>&, const TensorT<T>&);                          \
  template TensorT<T> mul<T>(const TensorT<T>&, const TensorT<T>&);                          \
  template TensorT<T> scale<T>(const TensorT<T>&, T);                                        \
  template TensorT<T> add_scalar<T>(const TensorT<T>&, T);                                   \
  template TensorT<T> relu<T>(const TensorT<T>&);                                            \
  template TensorT<T> sigmoid<T>(const TensorT<T>&);                                         \
  template TensorT<T> softmax<T>(const TensorT<T>&, int);                                    \
  template TensorT<T> log_softmax<T>(const TensorT<T>&, int);                                \
  template TensorT<T> layer_norm<T>(const TensorT<T>&, const TensorT<T>&, const TensorT<T>&, \
                                    T);                                                      \
  template TensorT<T> embedding_lookup<T>(const TensorT<T>&, std::span<const int>,           \
                                          const std::vector<std::size_t>&);                  \
  template TensorT<T> concat<T>(const std::vector<TensorT<T>>&, int);                        \
  template std::vector<TensorT<T>> split<T>(const TensorT<T>&,                               \
                                            const std::vector<std::size_t>&, int);           \
  template TensorT<T> reshape<T>(const TensorT<T>&, std::vector<std::size_t>);               \
  template TensorT<T> split_heads<T>(const TensorT<T>&, std::size_t);                        \
  template TensorT<T> merge_heads<T>(const TensorT<T>&);                                     \
  template TensorT<T> sum<T>(const TensorT<T>&);                                             \
  template TensorT<T> cross_entropy<T>(const TensorT<T>&, std::span<const int>,              \
                                       std::span<const T>, T);                               \
  template TensorT<T> dropout<T>(const TensorT<T>&, double, Rng&, bool);                     \
  template TensorT<T> detach<T>(const TensorT<T>&);                                          \
  template double grad_check<T>(const std::function<TensorT<T>()>&, std::vector<TensorT<T>>, \
                                double, std::size_t);

LEXSHORT_INSTANTIATE_OPS(float)
LEXSHORT_INSTANTIATE_OPS(double)

#undef LEXSHORT_INSTANTIATE_OPS

}  // namespace lexshort
