#pragma once

#include "fpenc/encoding.hpp"

namespace fpenc {

enum class Aggregator { kMax, kSum };

// Correlation-adaptive convolution. The weight bank t_c1 holds a [C_mid,
// C_out] block per input channel; the per-pair mixing weights come from an
// MLP over the local correlation followed by a softmax across C_mid.
struct FPConvParams {
  Tensor t_c1;     // [C_in, C_mid * C_out]
  Mlp weight_mlp;  // 8 -> C_mid -> C_mid
  int64_t c_in = 0;
  int64_t c_mid = 0;
  int64_t c_out = 0;
  Aggregator aggregator = Aggregator::kMax;
  double sigma = 1.2;
  bool mask_absolute = false;

  static FPConvParams make(int64_t c_in, int64_t c_mid, int64_t c_out,
                           double sigma, Rng& rng,
                           Aggregator aggregator = Aggregator::kMax);
  void collect(const std::string& prefix, std::vector<NamedParam>& out) const;
};

// softmax over C_mid of weight_mlp applied to the local correlation
Tensor fpconv_mixing_weights(const LocalCorrelation& corr,
                             const FPConvParams& params);  // [N, K, C_mid]

// Factorized path: per-pair 1x1 convolution of gathered features with the
// weight bank, contracted against the mixing weights, aggregated over K.
Tensor fpconv_forward_efficient(const Tensor& features,
                                const LocalCorrelation& corr,
                                const NeighborIndex& nbr,
                                const FPConvParams& params);  // [N, C_out]

// Reference path that materializes the dense per-pair weight tensor
// W[i,j,c,c_out] and contracts it directly. Sum aggregation only; forward
// values only (no gradient tape). Guarded against exploding memory.
Tensor fpconv_forward_naive(const Tensor& features,
                            const LocalCorrelation& corr,
                            const NeighborIndex& nbr,
                            const FPConvParams& params);  // [N, C_out]

// Convenience wrapper: derives the global and local correlation from the
// positions at params.sigma and runs the efficient path.
Tensor fpconv_layer(const Tensor& features, const Tensor& positions,
                    const NeighborIndex& nbr, const GlobalCorrelation& s1,
                    const FPConvParams& params);
Tensor fpconv_layer(const PointCloud& cloud, const NeighborIndex& nbr,
                    const FPConvParams& params);

}  // namespace fpenc
