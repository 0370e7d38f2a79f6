#pragma once

#include <functional>
#include <initializer_list>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "fpenc/common.hpp"
#include "fpenc/rng.hpp"

namespace fpenc {

struct TensorImpl {
  Shape shape;
  std::vector<double> values;
  std::vector<double> grad;  // empty until backward touches it
  bool requires_grad = false;
};

using TensorImplPtr = std::shared_ptr<TensorImpl>;

// Dense row-major f64 tensor. Copying the handle shares storage.
class Tensor {
 public:
  Tensor() = default;
  Tensor(Shape shape, std::vector<double> values);

  static Tensor zeros(Shape shape);
  static Tensor full(Shape shape, double value);
  static Tensor scalar(double value);  // 0-d, numel 1
  static Tensor uniform(Shape shape, Rng& rng, double lo, double hi);

  bool defined() const { return impl_ != nullptr; }
  const Shape& shape() const;
  int ndim() const { return static_cast<int>(shape().size()); }
  int64_t dim(int axis) const;
  int64_t numel() const;

  std::span<const double> values() const;
  // direct storage access; writes here bypass the tape
  std::span<double> mutable_values();
  double item() const;
  double at(std::span<const int64_t> index) const;
  double at(std::initializer_list<int64_t> index) const;

  bool requires_grad() const;
  Tensor& set_requires_grad(bool on);
  std::span<const double> grad() const;
  std::span<double> mutable_grad();
  void zero_grad();

  TensorImplPtr impl() const { return impl_; }

 private:
  TensorImplPtr impl_;
};

// Ordered record of differentiable ops, replayed in reverse by backward().
// Gradients accumulate into TensorImpl::grad until zero_grad.
class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  void record(std::vector<TensorImplPtr> keep_alive, std::function<void()> pull);
  void backward(const Tensor& loss);
  int64_t size() const { return static_cast<int64_t>(nodes_.size()); }

  static Tape* active();

 private:
  friend class TapeScope;
  struct Node {
    std::vector<TensorImplPtr> keep_alive;
    std::function<void()> pull;
  };
  std::vector<Node> nodes_;
};

// Makes a tape current for the enclosing scope; ops record onto it when
// any input requires grad. No active tape means pure forward evaluation.
class TapeScope {
 public:
  explicit TapeScope(Tape& tape);
  ~TapeScope();
  TapeScope(const TapeScope&) = delete;
  TapeScope& operator=(const TapeScope&) = delete;

 private:
  Tape* prev_;
};

// Elementwise binary ops accept equal shapes, a trailing-suffix shape for
// rhs (broadcast over leading axes), or a scalar rhs.
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor div(const Tensor& a, const Tensor& b);
Tensor add(const Tensor& a, double b);
Tensor mul(const Tensor& a, double b);

Tensor neg(const Tensor& t);
Tensor relu(const Tensor& t);
Tensor exp(const Tensor& t);
Tensor log(const Tensor& t);
Tensor sqrt(const Tensor& t);
Tensor abs(const Tensor& t);

// [M,K]x[K,P]; leading batch axes must match or be absent on one side
Tensor matmul(const Tensor& a, const Tensor& b);

Tensor reshape(const Tensor& t, Shape shape);
Tensor concat(const Tensor& a, const Tensor& b, int axis);
// inserts a new axis of the given extent whose slices all copy t
Tensor tile(const Tensor& t, int axis, int64_t times);
// rows of t selected along axis 0; out shape = indices.shape + t.shape[1:]
Tensor gather(const Tensor& t, const IndexArray& indices);
// out[i] = t[i, picks[i]] for t of shape [N, C]
Tensor pick(const Tensor& t, std::span<const int64_t> picks);

enum class Reduce { kSum, kMean, kMax };
Tensor reduce(const Tensor& t, int axis, Reduce kind, bool keepdim = false);
Tensor sum_all(const Tensor& t);  // 0-d result

Tensor softmax(const Tensor& t, int axis);
Tensor log_softmax(const Tensor& t, int axis);

// Central-difference check of d(sum of f's output)/dx against the tape.
// Returns the max guarded relative error over all leaf entries.
double grad_check(const std::function<Tensor(const Tensor&)>& f, Tensor x,
                  double eps = 1e-5);
double grad_check(const std::function<Tensor()>& f, std::span<Tensor> leaves,
                  double eps = 1e-5);

void ensure_finite(std::span<const double> values, const std::string& what);

}  // namespace fpenc
