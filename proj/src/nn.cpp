#include "fpenc/nn.hpp"

#include <cmath>

namespace fpenc {

Linear::Linear(int64_t in, int64_t out, Rng& rng) {
  if (in < 1 || out < 1) throw ParamError("linear: features must be >= 1");
  const double bound = std::sqrt(1.0 / static_cast<double>(in));
  weight = Tensor::uniform({in, out}, rng, -bound, bound);
  bias = Tensor::uniform({out}, rng, -bound, bound);
  weight.set_requires_grad(true);
  bias.set_requires_grad(true);
}

Tensor Linear::operator()(const Tensor& x) const {
  if (x.ndim() < 2) {
    throw ShapeError("linear: input needs at least 2 axes, got " +
                     shape_str(x.shape()));
  }
  return add(matmul(x, weight), bias);
}

void Linear::zero_init() {
  for (auto& v : weight.mutable_values()) v = 0.0;
  for (auto& v : bias.mutable_values()) v = 0.0;
}

void Linear::collect(const std::string& prefix,
                     std::vector<NamedParam>& out) const {
  out.push_back({prefix + ".weight", weight});
  out.push_back({prefix + ".bias", bias});
}

Mlp::Mlp(int64_t in, int64_t hidden, int64_t out, Rng& rng)
    : l1(in, hidden, rng), l2(hidden, out, rng) {}

Tensor Mlp::operator()(const Tensor& x) const { return l2(relu(l1(x))); }

void Mlp::collect(const std::string& prefix,
                  std::vector<NamedParam>& out) const {
  l1.collect(prefix + ".l1", out);
  l2.collect(prefix + ".l2", out);
}

Tensor cross_entropy(const Tensor& logits, std::span<const int64_t> labels) {
  Tensor lp = log_softmax(logits, 1);
  return neg(reduce(pick(lp, labels), 0, Reduce::kMean));
}

Tensor normalize_rows(const Tensor& t, double eps) {
  if (t.ndim() != 2) {
    throw ShapeError("normalize_rows: wants a 2-axis tensor, got " +
                     shape_str(t.shape()));
  }
  Tensor sq = reduce(mul(t, t), 1, Reduce::kSum);       // [N]
  Tensor norm = sqrt(add(sq, eps));                     // [N]
  Tensor wide = tile(norm, 1, t.dim(1));                // [N, C]
  return div(t, wide);
}

Sgd::Sgd(std::vector<NamedParam> params, double momentum, double weight_decay)
    : params_(std::move(params)),
      momentum_(momentum),
      weight_decay_(weight_decay) {
  velocity_.reserve(params_.size());
  for (auto& p : params_) {
    velocity_.emplace_back(static_cast<size_t>(p.tensor.numel()), 0.0);
  }
}

void Sgd::step(double lr, double grad_scale) {
  for (size_t pi = 0; pi < params_.size(); ++pi) {
    Tensor& t = params_[pi].tensor;
    auto grad = t.mutable_grad();
    auto vals = t.mutable_values();
    auto& vel = velocity_[pi];
    for (size_t i = 0; i < vals.size(); ++i) {
      double g = grad[i] * grad_scale + weight_decay_ * vals[i];
      vel[i] = momentum_ * vel[i] + g;
      vals[i] -= lr * vel[i];
    }
  }
}

void Sgd::zero_grad() {
  for (auto& p : params_) p.tensor.zero_grad();
}

}  // namespace fpenc
