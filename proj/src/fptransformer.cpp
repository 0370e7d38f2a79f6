#include "fpenc/fptransformer.hpp"

namespace fpenc {

namespace {

void check_inputs(const Tensor& features, const Tensor& positions,
                  const NeighborIndex& nbr, const FPTransformerParams& params,
                  const char* op) {
  if (!features.defined() || features.ndim() != 2) {
    throw ShapeError(std::string(op) + ": features must be [N,C]");
  }
  if (features.dim(1) != params.channels) {
    throw ShapeError(std::string(op) + ": got " +
                     std::to_string(features.dim(1)) +
                     " channels, params want " +
                     std::to_string(params.channels));
  }
  if (!positions.defined() || positions.ndim() != 2 || positions.dim(1) != 3 ||
      positions.dim(0) != features.dim(0)) {
    throw ShapeError(std::string(op) + ": positions must be [N,3] matching features");
  }
  if (nbr.query_count() != features.dim(0)) {
    throw ShapeError(std::string(op) + ": neighbor rows must match points");
  }
}

}  // namespace

FPTransformerParams FPTransformerParams::make(int64_t channels, int64_t c_mid,
                                              Rng& rng, PosVariant variant,
                                              PosEncoder encoder) {
  if (channels < 1 || c_mid < 1) {
    throw ParamError("fptransformer: channel counts must be >= 1");
  }
  if (c_mid > channels || channels % c_mid != 0) {
    throw ParamError("fptransformer: c_mid=" + std::to_string(c_mid) +
                     " must divide channels=" + std::to_string(channels));
  }
  FPTransformerParams p;
  p.channels = channels;
  p.c_mid = c_mid;
  p.w_q = Linear(channels, channels, rng);
  p.w_k = Linear(channels, channels, rng);
  p.w_v = Linear(channels, channels, rng);
  p.pos = PositionEncodingParams::make(channels, variant, encoder, rng);
  p.attn_mlp = Mlp(channels, channels, c_mid, rng);
  return p;
}

void FPTransformerParams::collect(const std::string& prefix,
                                  std::vector<NamedParam>& out) const {
  w_q.collect(prefix + ".w_q", out);
  w_k.collect(prefix + ".w_k", out);
  w_v.collect(prefix + ".w_v", out);
  pos.collect(prefix + ".pos", out);
  attn_mlp.collect(prefix + ".attn_mlp", out);
}

QkvProjection qkv_project(const Tensor& features,
                          const FPTransformerParams& params) {
  if (!features.defined() || features.ndim() != 2 ||
      features.dim(1) != params.channels) {
    throw ShapeError("qkv_project: features must be [N," +
                     std::to_string(params.channels) + "]");
  }
  return QkvProjection{params.w_q(features), params.w_k(features),
                       params.w_v(features)};
}

namespace {

struct AttentionParts {
  Tensor attn;     // [N, K, C_mid]
  Tensor v_group;  // [N, K, C], positional term included
};

// one shared evaluation of qkv, the positional term and the attention
// softmax; the same delta feeds the logits and the value branch
AttentionParts attention_parts(const Tensor& features, const Tensor& positions,
                               const NeighborIndex& nbr,
                               const FPTransformerParams& params) {
  const int64_t k = nbr.neighbor_count();
  QkvProjection qkv = qkv_project(features, params);
  Tensor delta = full_position_encoding(positions, nbr, params.pos);
  Tensor q_wide = tile(qkv.q, 1, k);              // [N, K, C]
  Tensor k_group = gather(qkv.k, nbr.indices);    // [N, K, C]
  Tensor pre = add(sub(q_wide, k_group), delta);  // [N, K, C]
  Tensor logits = params.attn_mlp(pre);           // [N, K, C_mid]
  return AttentionParts{softmax(logits, 1),
                        add(gather(qkv.v, nbr.indices), delta)};
}

}  // namespace

Tensor fptransformer_attention(const Tensor& features, const Tensor& positions,
                               const NeighborIndex& nbr,
                               const FPTransformerParams& params) {
  check_inputs(features, positions, nbr, params, "fptransformer");
  return attention_parts(features, positions, nbr, params).attn;
}

Tensor fptransformer_forward_efficient(const Tensor& features,
                                       const Tensor& positions,
                                       const NeighborIndex& nbr,
                                       const FPTransformerParams& params) {
  check_inputs(features, positions, nbr, params, "fptransformer");
  const int64_t n = features.dim(0);
  const int64_t k = nbr.neighbor_count();
  const int64_t c = params.channels;
  const int64_t cm = params.c_mid;
  const int64_t groups = c / cm;
  AttentionParts parts = attention_parts(features, positions, nbr, params);
  Tensor v_blocks = reshape(parts.v_group, {n, k, groups, cm});
  Tensor attn_wide = tile(parts.attn, 2, groups);           // [N, K, G, C_mid]
  Tensor weighted = mul(attn_wide, v_blocks);
  Tensor pooled = reduce(weighted, 1, Reduce::kSum);        // [N, G, C_mid]
  return reshape(pooled, {n, c});
}

Tensor fptransformer_forward_naive(const Tensor& features,
                                   const Tensor& positions,
                                   const NeighborIndex& nbr,
                                   const FPTransformerParams& params) {
  check_inputs(features, positions, nbr, params, "fptransformer naive");
  const int64_t n = features.dim(0);
  const int64_t k = nbr.neighbor_count();
  const int64_t c = params.channels;
  const int64_t cm = params.c_mid;
  AttentionParts parts = attention_parts(features, positions, nbr, params);
  Tensor attn = parts.attn;
  Tensor v_group = parts.v_group;
  auto av = attn.values();
  auto vv = v_group.values();
  // expand each middle channel across its group: W[i,j,c] = attn[i,j,c % cm]
  std::vector<double> out(static_cast<size_t>(n * c), 0.0);
  for (int64_t i = 0; i < n; ++i) {
    for (int64_t j = 0; j < k; ++j) {
      const double* arow = av.data() + (i * k + j) * cm;
      const double* vrow = vv.data() + (i * k + j) * c;
      for (int64_t ci = 0; ci < c; ++ci) {
        out[i * c + ci] += arow[ci % cm] * vrow[ci];
      }
    }
  }
  return Tensor({n, c}, std::move(out));
}

FPTransformerBlock FPTransformerBlock::make(int64_t channels, int64_t c_mid,
                                            Rng& rng, PosVariant variant,
                                            PosEncoder encoder) {
  FPTransformerBlock b;
  b.pre = Linear(channels, channels, rng);
  b.post = Linear(channels, channels, rng);
  b.attn = FPTransformerParams::make(channels, c_mid, rng, variant, encoder);
  return b;
}

Tensor FPTransformerBlock::operator()(const Tensor& features,
                                      const Tensor& positions,
                                      const NeighborIndex& nbr) const {
  Tensor inner = pre(features);
  Tensor attended =
      fptransformer_forward_efficient(inner, positions, nbr, attn);
  return add(features, post(attended));
}

void FPTransformerBlock::collect(const std::string& prefix,
                                 std::vector<NamedParam>& out) const {
  pre.collect(prefix + ".pre", out);
  post.collect(prefix + ".post", out);
  attn.collect(prefix + ".attn", out);
}

}  // namespace fpenc
