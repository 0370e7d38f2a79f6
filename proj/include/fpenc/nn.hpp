#pragma once

#include <string>
#include <vector>

#include "fpenc/tensor.hpp"

namespace fpenc {

struct NamedParam {
  std::string name;
  Tensor tensor;
};

// Affine map x[..., in] -> x W + b with W [in, out], b [out].
// Weights and biases draw uniform from [-sqrt(1/in), +sqrt(1/in)].
struct Linear {
  Tensor weight;
  Tensor bias;

  Linear() = default;
  Linear(int64_t in, int64_t out, Rng& rng);

  Tensor operator()(const Tensor& x) const;
  int64_t in_features() const { return weight.dim(0); }
  int64_t out_features() const { return weight.dim(1); }
  void zero_init();
  void collect(const std::string& prefix, std::vector<NamedParam>& out) const;
};

// Two affine layers with a rectifier between them.
struct Mlp {
  Linear l1;
  Linear l2;

  Mlp() = default;
  Mlp(int64_t in, int64_t hidden, int64_t out, Rng& rng);

  Tensor operator()(const Tensor& x) const;
  void collect(const std::string& prefix, std::vector<NamedParam>& out) const;
};

// mean over rows of -log p[label]
Tensor cross_entropy(const Tensor& logits, std::span<const int64_t> labels);

// rows scaled to unit length, with an epsilon keeping the norm positive
Tensor normalize_rows(const Tensor& t, double eps = 1e-12);

// SGD with momentum; velocity v <- momentum*v + g, param <- param - lr*v
class Sgd {
 public:
  Sgd(std::vector<NamedParam> params, double momentum, double weight_decay);

  void step(double lr, double grad_scale = 1.0);
  void zero_grad();

 private:
  std::vector<NamedParam> params_;
  std::vector<std::vector<double>> velocity_;
  double momentum_;
  double weight_decay_;
};

}  // namespace fpenc
