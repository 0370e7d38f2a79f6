#pragma once

#include <span>

#include "fpenc/cloud.hpp"
#include "fpenc/nn.hpp"
#include "fpenc/tensor.hpp"

namespace fpenc {

// max(0, 1 - |p-q| / sigma): 1 at coincidence, 0 from distance sigma on
double relation(std::span<const double> p, std::span<const double> q,
                double sigma);

// Per-point sum of the relation against the whole cloud; the self term
// contributes 1 when include_self is on, so values are then >= 1.
struct GlobalCorrelation {
  Tensor values;  // [N, 1]
  double sigma = 0.0;
};

// With 0 < max_points < N the sum is approximated from an evenly strided
// subset: the non-self part is scaled by (N-1)/(subset size excl. self).
GlobalCorrelation global_correlation(const Tensor& positions, double sigma,
                                     bool include_self = true,
                                     int64_t max_points = 0);

// 8 channels per neighbor pair (i, ij): absolute neighbor position (3),
// offset from the query (3), offset length (1), and the global correlation
// difference s1[i] - s1[ij] (1). Row r of nbr describes query point r.
struct LocalCorrelation {
  Tensor values;  // [N, K, 8]
};

LocalCorrelation local_correlation(const Tensor& positions,
                                   const NeighborIndex& nbr,
                                   const GlobalCorrelation& s1,
                                   bool mask_absolute = false);

enum class PosVariant { kFull, kLocal, kGlobal };
enum class PosEncoder { kLearnableMlp, kSinusoidal };

// Per-axis sin/cos ladder with frequencies 2^k * pi, k-major, truncated to
// out_channels: [sin(2^0 pi v_0), cos(2^0 pi v_0), ..., sin(2^1 pi v_0), ...]
Tensor sinusoidal_encode(const Tensor& x, int64_t out_channels);

// Learnable two-stage encoding. The full variant lifts each point with
// phi_global, appends its coordinates, and feeds pairwise differences of
// the lifted vectors through phi_local. The local variant encodes only
// coordinate offsets; the global variant broadcasts the lifted query.
struct PositionEncodingParams {
  Mlp phi_global;  // 3 -> C -> C
  Mlp phi_local;   // (C+3) -> C -> C
  PosVariant variant = PosVariant::kFull;
  PosEncoder encoder = PosEncoder::kLearnableMlp;
  int64_t channels = 0;

  static PositionEncodingParams make(int64_t channels, PosVariant variant,
                                     PosEncoder encoder, Rng& rng);
  void collect(const std::string& prefix, std::vector<NamedParam>& out) const;
};

// Encodes the pairs (query m, neighbor j) given by nbr, where query m is
// point query_indices[m]. Result is [M, K, C].
Tensor position_encoding(const Tensor& positions,
                         std::span<const int64_t> query_indices,
                         const NeighborIndex& nbr,
                         const PositionEncodingParams& params);

// All points as their own queries; nbr row i must describe point i.
Tensor full_position_encoding(const Tensor& positions, const NeighborIndex& nbr,
                              const PositionEncodingParams& params);

// Same lifted-difference construction with downsample-specific parameters,
// used as the positional term added to grouped features before pooling.
Tensor hierarchical_features(const Tensor& positions,
                             std::span<const int64_t> sample_indices,
                             const NeighborIndex& nbr,
                             const PositionEncodingParams& params);

}  // namespace fpenc
