#include "fpenc/fpconv.hpp"

#include <cmath>

namespace fpenc {

namespace {

void check_features(const Tensor& features, int64_t c_in, const char* op) {
  if (!features.defined() || features.ndim() != 2) {
    throw ShapeError(std::string(op) + ": features must be [N,C]");
  }
  if (features.dim(1) != c_in) {
    throw ShapeError(std::string(op) + ": got " +
                     std::to_string(features.dim(1)) + " channels, params want " +
                     std::to_string(c_in));
  }
}

}  // namespace

FPConvParams FPConvParams::make(int64_t c_in, int64_t c_mid, int64_t c_out,
                                double sigma, Rng& rng, Aggregator aggregator) {
  if (c_in < 1 || c_mid < 1 || c_out < 1) {
    throw ParamError("fpconv: channel counts must be >= 1");
  }
  if (c_mid > c_in) {
    throw ParamError("fpconv: c_mid=" + std::to_string(c_mid) +
                     " must not exceed c_in=" + std::to_string(c_in));
  }
  if (!(sigma > 0.0)) throw ParamError("fpconv: sigma must be > 0");
  FPConvParams p;
  p.c_in = c_in;
  p.c_mid = c_mid;
  p.c_out = c_out;
  p.sigma = sigma;
  p.aggregator = aggregator;
  const double bound = std::sqrt(1.0 / static_cast<double>(c_in));
  p.t_c1 = Tensor::uniform({c_in, c_mid * c_out}, rng, -bound, bound);
  p.t_c1.set_requires_grad(true);
  p.weight_mlp = Mlp(8, c_mid, c_mid, rng);
  return p;
}

void FPConvParams::collect(const std::string& prefix,
                           std::vector<NamedParam>& out) const {
  out.push_back({prefix + ".t_c1", t_c1});
  weight_mlp.collect(prefix + ".weight_mlp", out);
}

Tensor fpconv_mixing_weights(const LocalCorrelation& corr,
                             const FPConvParams& params) {
  if (!corr.values.defined() || corr.values.ndim() != 3 ||
      corr.values.dim(2) != 8) {
    throw ShapeError("fpconv: local correlation must be [N,K,8]");
  }
  return softmax(params.weight_mlp(corr.values), 2);  // [N, K, C_mid]
}

Tensor fpconv_forward_efficient(const Tensor& features,
                                const LocalCorrelation& corr,
                                const NeighborIndex& nbr,
                                const FPConvParams& params) {
  check_features(features, params.c_in, "fpconv");
  const int64_t n = nbr.query_count();
  const int64_t k = nbr.neighbor_count();
  if (features.dim(0) != n || corr.values.dim(0) != n ||
      corr.values.dim(1) != k) {
    throw ShapeError("fpconv: features, correlation and neighbors disagree");
  }
  Tensor t_c2 = fpconv_mixing_weights(corr, params);        // [N, K, C_mid]
  Tensor grouped = gather(features, nbr.indices);           // [N, K, C_in]
  Tensor flat = reshape(grouped, {n * k, params.c_in});
  Tensor mixed = matmul(flat, params.t_c1);                 // [N*K, C_mid*C_out]
  Tensor blocks = reshape(mixed, {n * k, params.c_mid, params.c_out});
  Tensor weights = reshape(t_c2, {n * k, 1, params.c_mid});
  Tensor per_pair = matmul(weights, blocks);                // [N*K, 1, C_out]
  Tensor stacked = reshape(per_pair, {n, k, params.c_out});
  Reduce agg = params.aggregator == Aggregator::kMax ? Reduce::kMax : Reduce::kSum;
  return reduce(stacked, 1, agg);                           // [N, C_out]
}

Tensor fpconv_forward_naive(const Tensor& features, const LocalCorrelation& corr,
                            const NeighborIndex& nbr,
                            const FPConvParams& params) {
  check_features(features, params.c_in, "fpconv naive");
  if (params.aggregator != Aggregator::kSum) {
    throw ParamError("fpconv naive: only the sum aggregator is defined");
  }
  const int64_t n = nbr.query_count();
  const int64_t k = nbr.neighbor_count();
  const int64_t c = params.c_in;
  const int64_t cm = params.c_mid;
  const int64_t co = params.c_out;
  if (n * k * c * co > (int64_t{1} << 24)) {
    throw ParamError("fpconv naive: dense weight tensor would exceed the guard");
  }
  Tensor t_c2 = fpconv_mixing_weights(corr, params);
  auto wv = t_c2.values();
  auto bank = params.t_c1.values();  // [c, cm*co]
  auto fv = features.values();

  // dense adaptive weights W[i,j,c,c_out] = sum_cm t_c2[i,j,cm] * bank[c,cm,c_out]
  std::vector<double> dense(static_cast<size_t>(n * k * c * co), 0.0);
  for (int64_t i = 0; i < n; ++i) {
    for (int64_t j = 0; j < k; ++j) {
      const double* w = wv.data() + (i * k + j) * cm;
      for (int64_t ci = 0; ci < c; ++ci) {
        for (int64_t m = 0; m < cm; ++m) {
          const double t2 = w[m];
          const double* row = bank.data() + ci * cm * co + m * co;
          double* out = dense.data() + ((i * k + j) * c + ci) * co;
          for (int64_t o = 0; o < co; ++o) out[o] += t2 * row[o];
        }
      }
    }
  }
  // direct contraction of weights against gathered features, summed over j
  std::vector<double> out(static_cast<size_t>(n * co), 0.0);
  for (int64_t i = 0; i < n; ++i) {
    for (int64_t j = 0; j < k; ++j) {
      const int64_t ij = nbr.indices.values[i * k + j];
      for (int64_t ci = 0; ci < c; ++ci) {
        const double f = fv[ij * c + ci];
        const double* w = dense.data() + ((i * k + j) * c + ci) * co;
        for (int64_t o = 0; o < co; ++o) out[i * co + o] += f * w[o];
      }
    }
  }
  return Tensor({n, co}, std::move(out));
}

Tensor fpconv_layer(const Tensor& features, const Tensor& positions,
                    const NeighborIndex& nbr, const GlobalCorrelation& s1,
                    const FPConvParams& params) {
  LocalCorrelation corr =
      local_correlation(positions, nbr, s1, params.mask_absolute);
  return fpconv_forward_efficient(features, corr, nbr, params);
}

Tensor fpconv_layer(const PointCloud& cloud, const NeighborIndex& nbr,
                    const FPConvParams& params) {
  if (!cloud.has_features()) {
    throw ShapeError("fpconv: cloud has no features");
  }
  GlobalCorrelation s1 = global_correlation(cloud.positions, params.sigma);
  return fpconv_layer(cloud.features, cloud.positions, nbr, s1, params);
}

}  // namespace fpenc
