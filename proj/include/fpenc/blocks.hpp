#pragma once

#include "fpenc/encoding.hpp"

namespace fpenc {

// Learnable downsampling: FPS picks the centers, kNN groups from the full
// cloud, and each group is pooled as max over MLP(f_ij + H) where H is the
// lifted-difference positional term with parameters of its own.
struct SADSParams {
  PositionEncodingParams pos;  // c_in channels
  Mlp mlp;                     // c_in -> c_out -> c_out
  int64_t c_in = 0;
  int64_t c_out = 0;
  int64_t k = 16;
  int64_t ratio = 4;

  static SADSParams make(int64_t c_in, int64_t c_out, int64_t k, int64_t ratio,
                         Rng& rng, PosVariant variant = PosVariant::kFull,
                         PosEncoder encoder = PosEncoder::kLearnableMlp);
  void collect(const std::string& prefix, std::vector<NamedParam>& out) const;
};

// Pointwise linear before grouping, then the same FPS + kNN + max pipeline.
struct TDSParams {
  Linear lin;  // c_in -> c_out
  int64_t c_in = 0;
  int64_t c_out = 0;
  int64_t k = 16;
  int64_t ratio = 4;

  static TDSParams make(int64_t c_in, int64_t c_out, int64_t k, int64_t ratio,
                        Rng& rng);
  void collect(const std::string& prefix, std::vector<NamedParam>& out) const;
};

struct DownsampleResult {
  std::vector<int64_t> sample_indices;  // rows of the input, pick order
  Tensor positions;                     // [M, 3]
  Tensor features;                      // [M, C_out]
};

// M = ceil(N / ratio) centers; fps_seed is the index FPS starts from.
DownsampleResult sads_downsample(const Tensor& features,
                                 const Tensor& positions,
                                 const SADSParams& params, int64_t fps_seed);

// Parameter-free baseline: max over the raw grouped features.
DownsampleResult gds_downsample(const Tensor& features,
                                const Tensor& positions, int64_t k,
                                int64_t ratio, int64_t fps_seed);

DownsampleResult tds_downsample(const Tensor& features,
                                const Tensor& positions,
                                const TDSParams& params, int64_t fps_seed);

// Inverse-distance interpolation from the p nearest coarse points; a fine
// point sitting exactly on a coarse point copies its feature unchanged.
Tensor upsample_interpolate(const Tensor& coarse_positions,
                            const Tensor& coarse_features,
                            const Tensor& fine_positions, int64_t p = 3);

// Pointwise-MLP aggregation baseline: max over MLP of the grouped features.
Tensor mlp_baseline_layer(const Tensor& features, const NeighborIndex& nbr,
                          const Mlp& mlp);

}  // namespace fpenc
