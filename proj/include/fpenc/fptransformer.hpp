#pragma once

#include "fpenc/encoding.hpp"

namespace fpenc {

// Vector attention with positional terms on both the attention logits and
// the values. Channels split into C/C_mid groups that share one attention
// weight per middle channel; c_mid == channels recovers plain unshared
// vector attention.
struct FPTransformerParams {
  Linear w_q;  // C -> C, with bias
  Linear w_k;
  Linear w_v;
  PositionEncodingParams pos;  // C channels
  Mlp attn_mlp;                // C -> C -> C_mid
  int64_t channels = 0;
  int64_t c_mid = 0;

  static FPTransformerParams make(int64_t channels, int64_t c_mid, Rng& rng,
                                  PosVariant variant = PosVariant::kFull,
                                  PosEncoder encoder = PosEncoder::kLearnableMlp);
  void collect(const std::string& prefix, std::vector<NamedParam>& out) const;
};

struct QkvProjection {
  Tensor q;  // [N, C]
  Tensor k;
  Tensor v;
};

QkvProjection qkv_project(const Tensor& features,
                          const FPTransformerParams& params);

// softmax over the neighbor axis of the attention MLP applied to
// q_i - k_ij + delta_ij
Tensor fptransformer_attention(const Tensor& features, const Tensor& positions,
                               const NeighborIndex& nbr,
                               const FPTransformerParams& params);  // [N,K,C_mid]

// Shared-weight path: the [N,K,C_mid] attention tensor multiplies value
// groups reshaped to [N,K,C/C_mid,C_mid], summed over K.
Tensor fptransformer_forward_efficient(const Tensor& features,
                                       const Tensor& positions,
                                       const NeighborIndex& nbr,
                                       const FPTransformerParams& params);

// Reference path expanding the attention tensor to all C channels by
// repeating each middle channel across groups. Forward values only.
Tensor fptransformer_forward_naive(const Tensor& features,
                                   const Tensor& positions,
                                   const NeighborIndex& nbr,
                                   const FPTransformerParams& params);

// pre linear -> attention -> post linear -> residual add
struct FPTransformerBlock {
  Linear pre;
  Linear post;
  FPTransformerParams attn;

  static FPTransformerBlock make(int64_t channels, int64_t c_mid, Rng& rng,
                                 PosVariant variant = PosVariant::kFull,
                                 PosEncoder encoder = PosEncoder::kLearnableMlp);
  Tensor operator()(const Tensor& features, const Tensor& positions,
                    const NeighborIndex& nbr) const;
  void collect(const std::string& prefix, std::vector<NamedParam>& out) const;
};

}  // namespace fpenc
