#include "fpenc/tensor.hpp"

#include <algorithm>
#include <cmath>

namespace fpenc {

namespace {

thread_local Tape* g_active_tape = nullptr;

std::vector<double>& grad_of(const TensorImplPtr& impl) {
  if (impl->grad.empty()) impl->grad.assign(impl->values.size(), 0.0);
  return impl->grad;
}

void check_defined(const Tensor& t, const char* op) {
  if (!t.defined()) throw ShapeError(std::string(op) + ": undefined tensor");
}

bool tracing(std::initializer_list<const Tensor*> inputs) {
  if (!g_active_tape) return false;
  for (const Tensor* t : inputs) {
    if (t->defined() && t->impl()->requires_grad) return true;
  }
  return false;
}

void check_axis(const Shape& shape, int axis, const char* op) {
  if (axis < 0 || axis >= static_cast<int>(shape.size())) {
    throw ShapeError(std::string(op) + ": axis " + std::to_string(axis) +
                     " out of range for shape " + shape_str(shape));
  }
}

int64_t prod(const Shape& shape, size_t from, size_t to) {
  int64_t n = 1;
  for (size_t i = from; i < to; ++i) n *= shape[i];
  return n;
}

// rhs must have equal shape, a trailing suffix of lhs's shape, or be 0-d
void check_suffix(const Shape& sa, const Shape& sb, const char* op) {
  if (sb.size() > sa.size()) {
    throw ShapeError(std::string(op) + ": rhs shape " + shape_str(sb) +
                     " has more axes than lhs " + shape_str(sa));
  }
  size_t off = sa.size() - sb.size();
  for (size_t i = 0; i < sb.size(); ++i) {
    if (sa[off + i] != sb[i]) {
      throw ShapeError(std::string(op) + ": rhs shape " + shape_str(sb) +
                       " is not a suffix of lhs " + shape_str(sa));
    }
  }
}

// Kernel types carry static fwd/da/db (binary) or fwd/dfn (unary) members so
// the per-element calls inline; the rhs may be a trailing-suffix broadcast and
// the loops are split on that case to keep the common path branch-free.
template <class K>
Tensor apply_binary(const Tensor& a, const Tensor& b, const char* name, K k,
                    bool finite_check) {
  check_defined(a, name);
  check_defined(b, name);
  check_suffix(a.shape(), b.shape(), name);
  auto av = a.values();
  auto bv = b.values();
  const int64_t n = a.numel();
  const int64_t bn = b.numel();
  std::vector<double> out(static_cast<size_t>(n));
  if (bn == n) {
    for (int64_t i = 0; i < n; ++i) out[i] = k.fwd(av[i], bv[i]);
  } else {
    for (int64_t i0 = 0; i0 < n; i0 += bn) {
      for (int64_t j = 0; j < bn; ++j) out[i0 + j] = k.fwd(av[i0 + j], bv[j]);
    }
  }
  if (finite_check) ensure_finite(out, name);
  Tensor result(a.shape(), std::move(out));
  if (tracing({&a, &b})) {
    result.set_requires_grad(true);
    auto ai = a.impl();
    auto bi = b.impl();
    auto oi = result.impl();
    g_active_tape->record({ai, bi, oi}, [ai, bi, oi, k, n, bn]() {
      const auto& og = grad_of(oi);
      const auto& avl = ai->values;
      const auto& bvl = bi->values;
      const auto& ovl = oi->values;
      if (ai->requires_grad) {
        auto& ag = grad_of(ai);
        if (bn == n) {
          for (int64_t i = 0; i < n; ++i) {
            ag[i] += og[i] * k.da(avl[i], bvl[i], ovl[i]);
          }
        } else {
          for (int64_t i0 = 0; i0 < n; i0 += bn) {
            for (int64_t j = 0; j < bn; ++j) {
              ag[i0 + j] += og[i0 + j] * k.da(avl[i0 + j], bvl[j], ovl[i0 + j]);
            }
          }
        }
      }
      if (bi->requires_grad) {
        auto& bg = grad_of(bi);
        if (bn == n) {
          for (int64_t i = 0; i < n; ++i) {
            bg[i] += og[i] * k.db(avl[i], bvl[i], ovl[i]);
          }
        } else {
          for (int64_t i0 = 0; i0 < n; i0 += bn) {
            for (int64_t j = 0; j < bn; ++j) {
              bg[j] += og[i0 + j] * k.db(avl[i0 + j], bvl[j], ovl[i0 + j]);
            }
          }
        }
      }
    });
  }
  return result;
}

template <class K>
Tensor apply_unary(const Tensor& t, const char* name, K k, bool finite_check) {
  check_defined(t, name);
  auto tv = t.values();
  const int64_t n = t.numel();
  std::vector<double> out(static_cast<size_t>(n));
  for (int64_t i = 0; i < n; ++i) out[i] = k.fwd(tv[i]);
  if (finite_check) ensure_finite(out, name);
  Tensor result(t.shape(), std::move(out));
  if (tracing({&t})) {
    result.set_requires_grad(true);
    auto ti = t.impl();
    auto oi = result.impl();
    g_active_tape->record({ti, oi}, [ti, oi, k, n]() {
      const auto& og = grad_of(oi);
      auto& tg = grad_of(ti);
      for (int64_t i = 0; i < n; ++i) {
        tg[i] += og[i] * k.dfn(ti->values[i], oi->values[i]);
      }
    });
  }
  return result;
}

// C += A x B variants; all matrices row-major, C pre-zeroed where noted and
// never aliasing A or B
void mm_nn(const double* __restrict a, const double* __restrict b,
           double* __restrict c, int64_t m, int64_t k, int64_t p) {
  for (int64_t i = 0; i < m; ++i) {
    const double* arow = a + i * k;
    double* crow = c + i * p;
    for (int64_t kk = 0; kk < k; ++kk) {
      const double av = arow[kk];
      const double* brow = b + kk * p;
      for (int64_t j = 0; j < p; ++j) crow[j] += av * brow[j];
    }
  }
}

// C[m,k] += A[m,p] x B[k,p]^T
void mm_nt_acc(const double* __restrict a, const double* __restrict b,
               double* __restrict c, int64_t m, int64_t p, int64_t k) {
  for (int64_t i = 0; i < m; ++i) {
    const double* arow = a + i * p;
    double* crow = c + i * k;
    for (int64_t kk = 0; kk < k; ++kk) {
      const double* brow = b + kk * p;
      double s = 0.0;
      for (int64_t j = 0; j < p; ++j) s += arow[j] * brow[j];
      crow[kk] += s;
    }
  }
}

// C[k,p] += A[m,k]^T x B[m,p]
void mm_tn_acc(const double* __restrict a, const double* __restrict b,
               double* __restrict c, int64_t m, int64_t k, int64_t p) {
  for (int64_t i = 0; i < m; ++i) {
    const double* arow = a + i * k;
    const double* brow = b + i * p;
    for (int64_t kk = 0; kk < k; ++kk) {
      const double av = arow[kk];
      double* crow = c + kk * p;
      for (int64_t j = 0; j < p; ++j) crow[j] += av * brow[j];
    }
  }
}

}  // namespace

void ensure_finite(std::span<const double> values, const std::string& what) {
  for (size_t i = 0; i < values.size(); ++i) {
    if (!std::isfinite(values[i])) {
      throw NumericError(what + ": non-finite value at flat index " +
                         std::to_string(i));
    }
  }
}

Tensor::Tensor(Shape shape, std::vector<double> values) {
  int64_t n = shape_numel(shape);
  if (n != static_cast<int64_t>(values.size())) {
    throw ShapeError("tensor: shape " + shape_str(shape) + " wants " +
                     std::to_string(n) + " values, got " +
                     std::to_string(values.size()));
  }
  impl_ = std::make_shared<TensorImpl>();
  impl_->shape = std::move(shape);
  impl_->values = std::move(values);
}

Tensor Tensor::zeros(Shape shape) {
  int64_t n = shape_numel(shape);
  return Tensor(std::move(shape), std::vector<double>(static_cast<size_t>(n), 0.0));
}

Tensor Tensor::full(Shape shape, double value) {
  int64_t n = shape_numel(shape);
  return Tensor(std::move(shape), std::vector<double>(static_cast<size_t>(n), value));
}

Tensor Tensor::scalar(double value) { return Tensor(Shape{}, {value}); }

Tensor Tensor::uniform(Shape shape, Rng& rng, double lo, double hi) {
  int64_t n = shape_numel(shape);
  std::vector<double> v(static_cast<size_t>(n));
  for (auto& x : v) x = rng.uniform(lo, hi);
  return Tensor(std::move(shape), std::move(v));
}

const Shape& Tensor::shape() const {
  check_defined(*this, "shape");
  return impl_->shape;
}

int64_t Tensor::dim(int axis) const {
  check_axis(shape(), axis, "dim");
  return impl_->shape[axis];
}

int64_t Tensor::numel() const {
  check_defined(*this, "numel");
  return static_cast<int64_t>(impl_->values.size());
}

std::span<const double> Tensor::values() const {
  check_defined(*this, "values");
  return impl_->values;
}

std::span<double> Tensor::mutable_values() {
  check_defined(*this, "mutable_values");
  return impl_->values;
}

double Tensor::item() const {
  if (numel() != 1) {
    throw ShapeError("item: tensor of shape " + shape_str(shape()) +
                     " is not a scalar");
  }
  return impl_->values[0];
}

double Tensor::at(std::span<const int64_t> index) const {
  const Shape& s = shape();
  if (index.size() != s.size()) {
    throw ShapeError("at: index rank " + std::to_string(index.size()) +
                     " does not match shape " + shape_str(s));
  }
  int64_t off = 0;
  for (size_t i = 0; i < s.size(); ++i) {
    if (index[i] < 0 || index[i] >= s[i]) {
      throw ShapeError("at: index " + std::to_string(index[i]) +
                       " out of range on axis " + std::to_string(i));
    }
    off = off * s[i] + index[i];
  }
  return impl_->values[off];
}

double Tensor::at(std::initializer_list<int64_t> index) const {
  std::vector<int64_t> idx(index);
  return at(std::span<const int64_t>(idx));
}

bool Tensor::requires_grad() const {
  return impl_ && impl_->requires_grad;
}

Tensor& Tensor::set_requires_grad(bool on) {
  check_defined(*this, "set_requires_grad");
  impl_->requires_grad = on;
  return *this;
}

std::span<const double> Tensor::grad() const {
  check_defined(*this, "grad");
  return impl_->grad;
}

std::span<double> Tensor::mutable_grad() {
  check_defined(*this, "mutable_grad");
  return grad_of(impl_);
}

void Tensor::zero_grad() {
  check_defined(*this, "zero_grad");
  std::fill(impl_->grad.begin(), impl_->grad.end(), 0.0);
}

void Tape::record(std::vector<TensorImplPtr> keep_alive,
                  std::function<void()> pull) {
  nodes_.push_back({std::move(keep_alive), std::move(pull)});
}

void Tape::backward(const Tensor& loss) {
  check_defined(loss, "backward");
  if (loss.numel() != 1) {
    throw ShapeError("backward: loss of shape " + shape_str(loss.shape()) +
                     " is not a scalar");
  }
  grad_of(loss.impl())[0] += 1.0;
  for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) it->pull();
}

Tape* Tape::active() { return g_active_tape; }

TapeScope::TapeScope(Tape& tape) : prev_(g_active_tape) {
  g_active_tape = &tape;
}

TapeScope::~TapeScope() { g_active_tape = prev_; }

namespace {

struct AddKernel {
  static double fwd(double x, double y) { return x + y; }
  static double da(double, double, double) { return 1.0; }
  static double db(double, double, double) { return 1.0; }
};

struct SubKernel {
  static double fwd(double x, double y) { return x - y; }
  static double da(double, double, double) { return 1.0; }
  static double db(double, double, double) { return -1.0; }
};

struct MulKernel {
  static double fwd(double x, double y) { return x * y; }
  static double da(double, double y, double) { return y; }
  static double db(double x, double, double) { return x; }
};

struct DivKernel {
  static double fwd(double x, double y) { return x / y; }
  static double da(double, double y, double) { return 1.0 / y; }
  static double db(double, double y, double out) { return -out / y; }
};

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
  return apply_binary(a, b, "add", AddKernel{}, false);
}

Tensor sub(const Tensor& a, const Tensor& b) {
  return apply_binary(a, b, "sub", SubKernel{}, false);
}

Tensor mul(const Tensor& a, const Tensor& b) {
  return apply_binary(a, b, "mul", MulKernel{}, false);
}

Tensor div(const Tensor& a, const Tensor& b) {
  return apply_binary(a, b, "div", DivKernel{}, true);
}

Tensor add(const Tensor& a, double b) {
  check_defined(a, "add");
  auto av = a.values();
  std::vector<double> out(av.begin(), av.end());
  for (auto& x : out) x += b;
  Tensor result(a.shape(), std::move(out));
  if (tracing({&a})) {
    result.set_requires_grad(true);
    auto ai = a.impl();
    auto oi = result.impl();
    g_active_tape->record({ai, oi}, [ai, oi]() {
      const auto& og = grad_of(oi);
      auto& ag = grad_of(ai);
      for (size_t i = 0; i < og.size(); ++i) ag[i] += og[i];
    });
  }
  return result;
}

Tensor mul(const Tensor& a, double b) {
  check_defined(a, "mul");
  auto av = a.values();
  std::vector<double> out(av.begin(), av.end());
  for (auto& x : out) x *= b;
  Tensor result(a.shape(), std::move(out));
  if (tracing({&a})) {
    result.set_requires_grad(true);
    auto ai = a.impl();
    auto oi = result.impl();
    g_active_tape->record({ai, oi}, [ai, oi, b]() {
      const auto& og = grad_of(oi);
      auto& ag = grad_of(ai);
      for (size_t i = 0; i < og.size(); ++i) ag[i] += og[i] * b;
    });
  }
  return result;
}

namespace {

struct NegKernel {
  static double fwd(double x) { return -x; }
  static double dfn(double, double) { return -1.0; }
};

struct ReluKernel {
  static double fwd(double x) { return x > 0.0 ? x : 0.0; }
  static double dfn(double x, double) { return x > 0.0 ? 1.0 : 0.0; }
};

struct ExpKernel {
  static double fwd(double x) { return std::exp(x); }
  static double dfn(double, double y) { return y; }
};

struct LogKernel {
  static double fwd(double x) { return std::log(x); }
  static double dfn(double x, double) { return 1.0 / x; }
};

struct SqrtKernel {
  static double fwd(double x) { return std::sqrt(x); }
  static double dfn(double, double y) { return 0.5 / y; }
};

struct AbsKernel {
  static double fwd(double x) { return std::abs(x); }
  static double dfn(double x, double) {
    return x > 0.0 ? 1.0 : (x < 0.0 ? -1.0 : 0.0);
  }
};

}  // namespace

Tensor neg(const Tensor& t) { return apply_unary(t, "neg", NegKernel{}, false); }

Tensor relu(const Tensor& t) {
  return apply_unary(t, "relu", ReluKernel{}, false);
}

Tensor exp(const Tensor& t) { return apply_unary(t, "exp", ExpKernel{}, true); }

Tensor log(const Tensor& t) {
  for (double x : t.values()) {
    if (!(x > 0.0)) throw NumericError("log: non-positive input");
  }
  return apply_unary(t, "log", LogKernel{}, true);
}

Tensor sqrt(const Tensor& t) {
  for (double x : t.values()) {
    if (x < 0.0) throw NumericError("sqrt: negative input");
  }
  return apply_unary(t, "sqrt", SqrtKernel{}, false);
}

Tensor abs(const Tensor& t) { return apply_unary(t, "abs", AbsKernel{}, false); }

Tensor matmul(const Tensor& a, const Tensor& b) {
  check_defined(a, "matmul");
  check_defined(b, "matmul");
  const Shape& sa = a.shape();
  const Shape& sb = b.shape();
  if (sa.size() < 2 || sb.size() < 2) {
    throw ShapeError("matmul: operands need at least 2 axes, got " +
                     shape_str(sa) + " x " + shape_str(sb));
  }
  const int64_t m = sa[sa.size() - 2];
  const int64_t k = sa[sa.size() - 1];
  const int64_t kb = sb[sb.size() - 2];
  const int64_t p = sb[sb.size() - 1];
  if (k != kb) {
    throw ShapeError("matmul: inner extents differ, " + shape_str(sa) + " x " +
                     shape_str(sb));
  }
  Shape abatch(sa.begin(), sa.end() - 2);
  Shape bbatch(sb.begin(), sb.end() - 2);
  if (!abatch.empty() && !bbatch.empty() && abatch != bbatch) {
    throw ShapeError("matmul: batch axes differ, " + shape_str(sa) + " x " +
                     shape_str(sb));
  }
  const Shape& batch = abatch.empty() ? bbatch : abatch;
  const int64_t nbatch = prod(batch, 0, batch.size());
  Shape oshape = batch;
  oshape.push_back(m);
  oshape.push_back(p);
  std::vector<double> out(static_cast<size_t>(nbatch * m * p), 0.0);
  const double* ad = a.values().data();
  const double* bd = b.values().data();
  const bool a_shared = abatch.empty();
  const bool b_shared = bbatch.empty();
  for (int64_t bi = 0; bi < nbatch; ++bi) {
    mm_nn(ad + (a_shared ? 0 : bi * m * k), bd + (b_shared ? 0 : bi * k * p),
          out.data() + bi * m * p, m, k, p);
  }
  Tensor result(std::move(oshape), std::move(out));
  if (tracing({&a, &b})) {
    result.set_requires_grad(true);
    auto ai = a.impl();
    auto bi_ = b.impl();
    auto oi = result.impl();
    g_active_tape->record(
        {ai, bi_, oi}, [ai, bi_, oi, m, k, p, nbatch, a_shared, b_shared]() {
          const auto& og = grad_of(oi);
          if (ai->requires_grad) {
            auto& ag = grad_of(ai);
            for (int64_t bi = 0; bi < nbatch; ++bi) {
              mm_nt_acc(og.data() + bi * m * p,
                        bi_->values.data() + (b_shared ? 0 : bi * k * p),
                        ag.data() + (a_shared ? 0 : bi * m * k), m, p, k);
            }
          }
          if (bi_->requires_grad) {
            auto& bg = grad_of(bi_);
            for (int64_t bi = 0; bi < nbatch; ++bi) {
              mm_tn_acc(ai->values.data() + (a_shared ? 0 : bi * m * k),
                        og.data() + bi * m * p,
                        bg.data() + (b_shared ? 0 : bi * k * p), m, k, p);
            }
          }
        });
  }
  return result;
}

Tensor reshape(const Tensor& t, Shape shape) {
  check_defined(t, "reshape");
  int64_t n = shape_numel(shape);
  if (n != t.numel()) {
    throw ShapeError("reshape: cannot view " + shape_str(t.shape()) + " as " +
                     shape_str(shape));
  }
  auto tv = t.values();
  Tensor result(std::move(shape), std::vector<double>(tv.begin(), tv.end()));
  if (tracing({&t})) {
    result.set_requires_grad(true);
    auto ti = t.impl();
    auto oi = result.impl();
    g_active_tape->record({ti, oi}, [ti, oi]() {
      const auto& og = grad_of(oi);
      auto& tg = grad_of(ti);
      for (size_t i = 0; i < og.size(); ++i) tg[i] += og[i];
    });
  }
  return result;
}

Tensor concat(const Tensor& a, const Tensor& b, int axis) {
  check_defined(a, "concat");
  check_defined(b, "concat");
  const Shape& sa = a.shape();
  const Shape& sb = b.shape();
  if (sa.size() != sb.size()) {
    throw ShapeError("concat: rank mismatch, " + shape_str(sa) + " vs " +
                     shape_str(sb));
  }
  check_axis(sa, axis, "concat");
  for (size_t i = 0; i < sa.size(); ++i) {
    if (static_cast<int>(i) != axis && sa[i] != sb[i]) {
      throw ShapeError("concat: shapes " + shape_str(sa) + " and " +
                       shape_str(sb) + " differ off axis " +
                       std::to_string(axis));
    }
  }
  const int64_t outer = prod(sa, 0, axis);
  const int64_t inner = prod(sa, axis + 1, sa.size());
  const int64_t arows = sa[axis];
  const int64_t brows = sb[axis];
  Shape oshape = sa;
  oshape[axis] = arows + brows;
  std::vector<double> out(static_cast<size_t>(outer * (arows + brows) * inner));
  auto av = a.values();
  auto bv = b.values();
  for (int64_t o = 0; o < outer; ++o) {
    double* dst = out.data() + o * (arows + brows) * inner;
    std::copy_n(av.data() + o * arows * inner, arows * inner, dst);
    std::copy_n(bv.data() + o * brows * inner, brows * inner,
                dst + arows * inner);
  }
  Tensor result(std::move(oshape), std::move(out));
  if (tracing({&a, &b})) {
    result.set_requires_grad(true);
    auto ai = a.impl();
    auto bi = b.impl();
    auto oi = result.impl();
    g_active_tape->record({ai, bi, oi},
                          [ai, bi, oi, outer, inner, arows, brows]() {
      const auto& og = grad_of(oi);
      for (int64_t o = 0; o < outer; ++o) {
        const double* src = og.data() + o * (arows + brows) * inner;
        if (ai->requires_grad) {
          auto& ag = grad_of(ai);
          double* dst = ag.data() + o * arows * inner;
          for (int64_t i = 0; i < arows * inner; ++i) dst[i] += src[i];
        }
        if (bi->requires_grad) {
          auto& bg = grad_of(bi);
          double* dst = bg.data() + o * brows * inner;
          const double* s2 = src + arows * inner;
          for (int64_t i = 0; i < brows * inner; ++i) dst[i] += s2[i];
        }
      }
    });
  }
  return result;
}

Tensor tile(const Tensor& t, int axis, int64_t times) {
  check_defined(t, "tile");
  const Shape& s = t.shape();
  if (axis < 0 || axis > static_cast<int>(s.size())) {
    throw ShapeError("tile: axis " + std::to_string(axis) +
                     " out of range for shape " + shape_str(s));
  }
  if (times < 1) throw ShapeError("tile: times must be >= 1");
  const int64_t outer = prod(s, 0, axis);
  const int64_t inner = prod(s, axis, s.size());
  Shape oshape = s;
  oshape.insert(oshape.begin() + axis, times);
  std::vector<double> out(static_cast<size_t>(outer * times * inner));
  auto tv = t.values();
  for (int64_t o = 0; o < outer; ++o) {
    for (int64_t r = 0; r < times; ++r) {
      std::copy_n(tv.data() + o * inner, inner,
                  out.data() + (o * times + r) * inner);
    }
  }
  Tensor result(std::move(oshape), std::move(out));
  if (tracing({&t})) {
    result.set_requires_grad(true);
    auto ti = t.impl();
    auto oi = result.impl();
    g_active_tape->record({ti, oi}, [ti, oi, outer, times, inner]() {
      const auto& og = grad_of(oi);
      auto& tg = grad_of(ti);
      for (int64_t o = 0; o < outer; ++o) {
        for (int64_t r = 0; r < times; ++r) {
          const double* src = og.data() + (o * times + r) * inner;
          double* dst = tg.data() + o * inner;
          for (int64_t i = 0; i < inner; ++i) dst[i] += src[i];
        }
      }
    });
  }
  return result;
}

Tensor gather(const Tensor& t, const IndexArray& indices) {
  check_defined(t, "gather");
  const Shape& s = t.shape();
  if (s.empty()) throw ShapeError("gather: source needs at least 1 axis");
  const int64_t rows = s[0];
  const int64_t inner = prod(s, 1, s.size());
  for (int64_t idx : indices.values) {
    if (idx < 0 || idx >= rows) {
      throw ShapeError("gather: index " + std::to_string(idx) +
                       " out of range for " + std::to_string(rows) + " rows");
    }
  }
  Shape oshape = indices.shape;
  oshape.insert(oshape.end(), s.begin() + 1, s.end());
  const int64_t m = indices.numel();
  std::vector<double> out(static_cast<size_t>(m * inner));
  auto tv = t.values();
  for (int64_t i = 0; i < m; ++i) {
    std::copy_n(tv.data() + indices.values[i] * inner, inner,
                out.data() + i * inner);
  }
  Tensor result(std::move(oshape), std::move(out));
  if (tracing({&t})) {
    result.set_requires_grad(true);
    auto ti = t.impl();
    auto oi = result.impl();
    std::vector<int64_t> idx = indices.values;
    g_active_tape->record({ti, oi}, [ti, oi, idx = std::move(idx), inner]() {
      const auto& og = grad_of(oi);
      auto& tg = grad_of(ti);
      for (size_t i = 0; i < idx.size(); ++i) {
        const double* src = og.data() + i * inner;
        double* dst = tg.data() + idx[i] * inner;
        for (int64_t j = 0; j < inner; ++j) dst[j] += src[j];
      }
    });
  }
  return result;
}

Tensor pick(const Tensor& t, std::span<const int64_t> picks) {
  check_defined(t, "pick");
  const Shape& s = t.shape();
  if (s.size() != 2) {
    throw ShapeError("pick: wants a 2-axis tensor, got " + shape_str(s));
  }
  const int64_t n = s[0];
  const int64_t c = s[1];
  if (static_cast<int64_t>(picks.size()) != n) {
    throw ShapeError("pick: " + std::to_string(picks.size()) +
                     " picks for " + std::to_string(n) + " rows");
  }
  std::vector<double> out(static_cast<size_t>(n));
  auto tv = t.values();
  for (int64_t i = 0; i < n; ++i) {
    if (picks[i] < 0 || picks[i] >= c) {
      throw ShapeError("pick: column " + std::to_string(picks[i]) +
                       " out of range for " + std::to_string(c));
    }
    out[i] = tv[i * c + picks[i]];
  }
  Tensor result(Shape{n}, std::move(out));
  if (tracing({&t})) {
    result.set_requires_grad(true);
    auto ti = t.impl();
    auto oi = result.impl();
    std::vector<int64_t> idx(picks.begin(), picks.end());
    g_active_tape->record({ti, oi}, [ti, oi, idx = std::move(idx), c]() {
      const auto& og = grad_of(oi);
      auto& tg = grad_of(ti);
      for (size_t i = 0; i < idx.size(); ++i) {
        tg[i * c + idx[i]] += og[i];
      }
    });
  }
  return result;
}

Tensor reduce(const Tensor& t, int axis, Reduce kind, bool keepdim) {
  check_defined(t, "reduce");
  const Shape& s = t.shape();
  check_axis(s, axis, "reduce");
  const int64_t extent = s[axis];
  if (extent == 0) throw ShapeError("reduce: empty axis " + std::to_string(axis));
  const int64_t outer = prod(s, 0, axis);
  const int64_t inner = prod(s, axis + 1, s.size());
  Shape oshape = s;
  if (keepdim) {
    oshape[axis] = 1;
  } else {
    oshape.erase(oshape.begin() + axis);
  }
  std::vector<double> out(static_cast<size_t>(outer * inner), 0.0);
  auto argmax = std::make_shared<std::vector<int64_t>>();
  auto tv = t.values();
  if (kind == Reduce::kMax) argmax->assign(static_cast<size_t>(outer * inner), 0);
  for (int64_t o = 0; o < outer; ++o) {
    for (int64_t i = 0; i < inner; ++i) {
      const double* lane = tv.data() + o * extent * inner + i;
      double acc;
      if (kind == Reduce::kMax) {
        acc = lane[0];
        int64_t arg = 0;
        for (int64_t r = 1; r < extent; ++r) {
          if (lane[r * inner] > acc) {
            acc = lane[r * inner];
            arg = r;
          }
        }
        (*argmax)[o * inner + i] = arg;
      } else {
        acc = 0.0;
        for (int64_t r = 0; r < extent; ++r) acc += lane[r * inner];
        if (kind == Reduce::kMean) acc /= static_cast<double>(extent);
      }
      out[o * inner + i] = acc;
    }
  }
  Tensor result(std::move(oshape), std::move(out));
  if (tracing({&t})) {
    result.set_requires_grad(true);
    auto ti = t.impl();
    auto oi = result.impl();
    g_active_tape->record({ti, oi},
                          [ti, oi, kind, outer, inner, extent, argmax]() {
      const auto& og = grad_of(oi);
      auto& tg = grad_of(ti);
      for (int64_t o = 0; o < outer; ++o) {
        for (int64_t i = 0; i < inner; ++i) {
          const double g = og[o * inner + i];
          double* lane = tg.data() + o * extent * inner + i;
          if (kind == Reduce::kMax) {
            lane[(*argmax)[o * inner + i] * inner] += g;
          } else {
            const double share =
                kind == Reduce::kMean ? g / static_cast<double>(extent) : g;
            for (int64_t r = 0; r < extent; ++r) lane[r * inner] += share;
          }
        }
      }
    });
  }
  return result;
}

Tensor sum_all(const Tensor& t) {
  check_defined(t, "sum_all");
  double acc = 0.0;
  for (double x : t.values()) acc += x;
  Tensor result(Shape{}, {acc});
  if (tracing({&t})) {
    result.set_requires_grad(true);
    auto ti = t.impl();
    auto oi = result.impl();
    g_active_tape->record({ti, oi}, [ti, oi]() {
      const double g = grad_of(oi)[0];
      auto& tg = grad_of(ti);
      for (auto& x : tg) x += g;
    });
  }
  return result;
}

namespace {

// shared lane loop for softmax / log_softmax
template <class Fn>
void for_each_lane(const Shape& s, int axis, Fn&& fn) {
  const int64_t extent = s[axis];
  const int64_t outer = prod(s, 0, axis);
  const int64_t inner = prod(s, axis + 1, s.size());
  for (int64_t o = 0; o < outer; ++o) {
    for (int64_t i = 0; i < inner; ++i) {
      fn(o * extent * inner + i, inner, extent);
    }
  }
}

}  // namespace

Tensor softmax(const Tensor& t, int axis) {
  check_defined(t, "softmax");
  const Shape& s = t.shape();
  check_axis(s, axis, "softmax");
  if (s[axis] == 0) throw ShapeError("softmax: empty axis");
  auto tv = t.values();
  std::vector<double> out(tv.size());
  for_each_lane(s, axis, [&](int64_t base, int64_t stride, int64_t extent) {
    double m = tv[base];
    for (int64_t r = 1; r < extent; ++r) m = std::max(m, tv[base + r * stride]);
    double sum = 0.0;
    for (int64_t r = 0; r < extent; ++r) {
      double e = std::exp(tv[base + r * stride] - m);
      out[base + r * stride] = e;
      sum += e;
    }
    for (int64_t r = 0; r < extent; ++r) out[base + r * stride] /= sum;
  });
  ensure_finite(out, "softmax");
  Tensor result(s, std::move(out));
  if (tracing({&t})) {
    result.set_requires_grad(true);
    auto ti = t.impl();
    auto oi = result.impl();
    Shape shape = s;
    g_active_tape->record({ti, oi}, [ti, oi, shape, axis]() {
      const auto& og = grad_of(oi);
      auto& tg = grad_of(ti);
      const auto& y = oi->values;
      for_each_lane(shape, axis, [&](int64_t base, int64_t stride, int64_t extent) {
        double dot = 0.0;
        for (int64_t r = 0; r < extent; ++r) {
          dot += og[base + r * stride] * y[base + r * stride];
        }
        for (int64_t r = 0; r < extent; ++r) {
          tg[base + r * stride] +=
              y[base + r * stride] * (og[base + r * stride] - dot);
        }
      });
    });
  }
  return result;
}

Tensor log_softmax(const Tensor& t, int axis) {
  check_defined(t, "log_softmax");
  const Shape& s = t.shape();
  check_axis(s, axis, "log_softmax");
  if (s[axis] == 0) throw ShapeError("log_softmax: empty axis");
  auto tv = t.values();
  std::vector<double> out(tv.size());
  for_each_lane(s, axis, [&](int64_t base, int64_t stride, int64_t extent) {
    double m = tv[base];
    for (int64_t r = 1; r < extent; ++r) m = std::max(m, tv[base + r * stride]);
    double sum = 0.0;
    for (int64_t r = 0; r < extent; ++r) sum += std::exp(tv[base + r * stride] - m);
    const double lse = m + std::log(sum);
    for (int64_t r = 0; r < extent; ++r) out[base + r * stride] = tv[base + r * stride] - lse;
  });
  ensure_finite(out, "log_softmax");
  Tensor result(s, std::move(out));
  if (tracing({&t})) {
    result.set_requires_grad(true);
    auto ti = t.impl();
    auto oi = result.impl();
    Shape shape = s;
    g_active_tape->record({ti, oi}, [ti, oi, shape, axis]() {
      const auto& og = grad_of(oi);
      auto& tg = grad_of(ti);
      const auto& y = oi->values;
      for_each_lane(shape, axis, [&](int64_t base, int64_t stride, int64_t extent) {
        double gsum = 0.0;
        for (int64_t r = 0; r < extent; ++r) gsum += og[base + r * stride];
        for (int64_t r = 0; r < extent; ++r) {
          tg[base + r * stride] +=
              og[base + r * stride] - std::exp(y[base + r * stride]) * gsum;
        }
      });
    });
  }
  return result;
}

double grad_check(const std::function<Tensor()>& f, std::span<Tensor> leaves,
                  double eps) {
  for (auto& leaf : leaves) {
    leaf.set_requires_grad(true);
    leaf.zero_grad();
  }
  {
    Tape tape;
    TapeScope scope(tape);
    Tensor loss = sum_all(f());
    tape.backward(loss);
  }
  std::vector<std::vector<double>> analytic;
  analytic.reserve(leaves.size());
  for (auto& leaf : leaves) {
    auto g = leaf.grad();
    std::vector<double> copy(g.begin(), g.end());
    copy.resize(static_cast<size_t>(leaf.numel()), 0.0);
    analytic.push_back(std::move(copy));
  }
  auto eval = [&]() {
    Tensor out = f();  // named: keeps storage alive while we sum
    double acc = 0.0;
    for (double x : out.values()) acc += x;
    return acc;
  };
  double max_err = 0.0;
  for (size_t li = 0; li < leaves.size(); ++li) {
    auto vals = leaves[li].mutable_values();
    for (size_t i = 0; i < vals.size(); ++i) {
      const double orig = vals[i];
      vals[i] = orig + eps;
      const double up = eval();
      vals[i] = orig - eps;
      const double dn = eval();
      vals[i] = orig;
      const double numeric = (up - dn) / (2.0 * eps);
      max_err = std::max(max_err, rel_err(analytic[li][i], numeric));
    }
  }
  return max_err;
}

double grad_check(const std::function<Tensor(const Tensor&)>& f, Tensor x,
                  double eps) {
  Tensor leaves[1] = {x};
  return grad_check([&]() { return f(x); }, std::span<Tensor>(leaves), eps);
}

}  // namespace fpenc
