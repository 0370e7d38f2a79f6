#include "fpenc/encoding.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace fpenc {

namespace {

void check_positions(const Tensor& positions, const char* op) {
  if (!positions.defined() || positions.ndim() != 2 || positions.dim(1) != 3) {
    throw ShapeError(std::string(op) + ": positions must be [N,3]");
  }
  if (positions.dim(0) < 1) throw ShapeError(std::string(op) + ": empty cloud");
}

IndexArray to_index_array(std::span<const int64_t> idx) {
  return IndexArray{{static_cast<int64_t>(idx.size())},
                    std::vector<int64_t>(idx.begin(), idx.end())};
}

}  // namespace

double relation(std::span<const double> p, std::span<const double> q,
                double sigma) {
  if (p.size() != 3 || q.size() != 3) {
    throw ShapeError("relation: points must have 3 coordinates");
  }
  if (!(sigma > 0.0)) throw ParamError("relation: sigma must be > 0");
  double s = 0.0;
  for (int a = 0; a < 3; ++a) {
    const double d = p[a] - q[a];
    s += d * d;
  }
  return std::max(0.0, 1.0 - std::sqrt(s) / sigma);
}

GlobalCorrelation global_correlation(const Tensor& positions, double sigma,
                                     bool include_self, int64_t max_points) {
  check_positions(positions, "global_correlation");
  if (!(sigma > 0.0)) throw ParamError("global_correlation: sigma must be > 0");
  if (max_points < 0) {
    throw ParamError("global_correlation: max_points must be >= 0");
  }
  const int64_t n = positions.dim(0);
  auto pv = positions.values();
  std::vector<double> out(static_cast<size_t>(n), 0.0);
  auto pair_relation = [&](int64_t i, int64_t j) {
    const double dx = pv[i * 3] - pv[j * 3];
    const double dy = pv[i * 3 + 1] - pv[j * 3 + 1];
    const double dz = pv[i * 3 + 2] - pv[j * 3 + 2];
    return std::max(0.0, 1.0 - std::sqrt(dx * dx + dy * dy + dz * dz) / sigma);
  };
  if (max_points == 0 || n <= max_points) {
    for (int64_t i = 0; i < n; ++i) {
      double s = include_self ? 1.0 : 0.0;
      for (int64_t j = 0; j < n; ++j) {
        if (j != i) s += pair_relation(i, j);
      }
      out[i] = s;
    }
  } else {
    // evenly strided subset; the non-self portion scales up to the full
    // population so exact and approximate agree when the subset is everything
    std::vector<int64_t> subset(static_cast<size_t>(max_points));
    for (int64_t t = 0; t < max_points; ++t) subset[t] = t * n / max_points;
    for (int64_t i = 0; i < n; ++i) {
      double s = 0.0;
      int64_t others = 0;
      for (int64_t j : subset) {
        if (j == i) continue;
        s += pair_relation(i, j);
        ++others;
      }
      double value = others > 0
                         ? s * static_cast<double>(n - 1) / static_cast<double>(others)
                         : 0.0;
      if (include_self) value += 1.0;
      out[i] = value;
    }
  }
  return GlobalCorrelation{Tensor({n, 1}, std::move(out)), sigma};
}

LocalCorrelation local_correlation(const Tensor& positions,
                                   const NeighborIndex& nbr,
                                   const GlobalCorrelation& s1,
                                   bool mask_absolute) {
  check_positions(positions, "local_correlation");
  const int64_t n = positions.dim(0);
  const int64_t k = nbr.neighbor_count();
  if (nbr.query_count() != n) {
    throw ShapeError("local_correlation: neighbor rows (" +
                     std::to_string(nbr.query_count()) + ") must match " +
                     std::to_string(n) + " points");
  }
  if (!s1.values.defined() || s1.values.ndim() != 2 || s1.values.dim(0) != n ||
      s1.values.dim(1) != 1) {
    throw ShapeError("local_correlation: s1 must be [N,1]");
  }
  auto pv = positions.values();
  auto sv = s1.values.values();
  std::vector<double> out(static_cast<size_t>(n * k * 8));
  for (int64_t i = 0; i < n; ++i) {
    for (int64_t j = 0; j < k; ++j) {
      const int64_t ij = nbr.indices.values[i * k + j];
      if (ij < 0 || ij >= n) {
        throw ShapeError("local_correlation: neighbor index out of range");
      }
      double* row = out.data() + (i * k + j) * 8;
      double off2 = 0.0;
      for (int a = 0; a < 3; ++a) {
        const double abs_pos = pv[ij * 3 + a];
        const double off = abs_pos - pv[i * 3 + a];
        row[a] = mask_absolute ? 0.0 : abs_pos;
        row[3 + a] = off;
        off2 += off * off;
      }
      row[6] = std::sqrt(off2);
      row[7] = sv[i] - sv[ij];
    }
  }
  return LocalCorrelation{Tensor({n, k, 8}, std::move(out))};
}

Tensor sinusoidal_encode(const Tensor& x, int64_t out_channels) {
  if (!x.defined() || x.ndim() < 1) {
    throw ShapeError("sinusoidal_encode: input needs at least 1 axis");
  }
  if (out_channels < 1) {
    throw ParamError("sinusoidal_encode: out_channels must be >= 1");
  }
  if (Tape::active() && x.requires_grad()) {
    throw ParamError("sinusoidal_encode: not differentiable, detach input");
  }
  const Shape& s = x.shape();
  const int64_t d = s.back();
  if (d < 1) throw ShapeError("sinusoidal_encode: empty last axis");
  const int64_t rows = x.numel() / d;
  Shape oshape(s.begin(), s.end() - 1);
  oshape.push_back(out_channels);
  std::vector<double> out(static_cast<size_t>(rows * out_channels));
  auto xv = x.values();
  for (int64_t r = 0; r < rows; ++r) {
    for (int64_t c = 0; c < out_channels; ++c) {
      const int64_t k = c / (2 * d);
      const int64_t rem = c % (2 * d);
      const int64_t axis = rem / 2;
      const double arg = std::ldexp(M_PI, static_cast<int>(k)) * xv[r * d + axis];
      out[r * out_channels + c] = (rem % 2 == 0) ? std::sin(arg) : std::cos(arg);
    }
  }
  return Tensor(std::move(oshape), std::move(out));
}

PositionEncodingParams PositionEncodingParams::make(int64_t channels,
                                                    PosVariant variant,
                                                    PosEncoder encoder,
                                                    Rng& rng) {
  if (channels < 1) {
    throw ParamError("position encoding: channels must be >= 1");
  }
  PositionEncodingParams p;
  p.variant = variant;
  p.encoder = encoder;
  p.channels = channels;
  if (encoder == PosEncoder::kLearnableMlp) {
    if (variant != PosVariant::kLocal) {
      p.phi_global = Mlp(3, channels, channels, rng);
    }
    if (variant != PosVariant::kGlobal) {
      p.phi_local = Mlp(channels + 3, channels, channels, rng);
    }
  }
  return p;
}

void PositionEncodingParams::collect(const std::string& prefix,
                                     std::vector<NamedParam>& out) const {
  if (encoder != PosEncoder::kLearnableMlp) return;
  if (phi_global.l1.weight.defined()) {
    phi_global.collect(prefix + ".phi_global", out);
  }
  if (phi_local.l1.weight.defined()) {
    phi_local.collect(prefix + ".phi_local", out);
  }
}

Tensor position_encoding(const Tensor& positions,
                         std::span<const int64_t> query_indices,
                         const NeighborIndex& nbr,
                         const PositionEncodingParams& params) {
  check_positions(positions, "position_encoding");
  const int64_t m = nbr.query_count();
  const int64_t k = nbr.neighbor_count();
  const int64_t c = params.channels;
  if (static_cast<int64_t>(query_indices.size()) != m) {
    throw ShapeError("position_encoding: " +
                     std::to_string(query_indices.size()) +
                     " query indices for " + std::to_string(m) + " rows");
  }
  if (c < 1) throw ParamError("position_encoding: params not initialized");
  IndexArray qidx = to_index_array(query_indices);

  const bool learn = params.encoder == PosEncoder::kLearnableMlp;
  switch (params.variant) {
    case PosVariant::kFull: {
      Tensor lifted_c = learn ? params.phi_global(positions)
                              : sinusoidal_encode(positions, c);
      Tensor lifted = concat(lifted_c, positions, 1);        // [N, C+3]
      Tensor qi = tile(gather(lifted, qidx), 1, k);          // [M, K, C+3]
      Tensor qij = gather(lifted, nbr.indices);              // [M, K, C+3]
      Tensor diff = sub(qi, qij);
      return learn ? params.phi_local(diff) : sinusoidal_encode(diff, c);
    }
    case PosVariant::kLocal: {
      Tensor pq = tile(gather(positions, qidx), 1, k);       // [M, K, 3]
      Tensor pij = gather(positions, nbr.indices);           // [M, K, 3]
      Tensor diff = sub(pq, pij);
      if (learn) {
        Tensor padded = concat(Tensor::zeros({m, k, c}), diff, 2);
        return params.phi_local(padded);
      }
      return sinusoidal_encode(diff, c);
    }
    case PosVariant::kGlobal: {
      Tensor q = gather(positions, qidx);                    // [M, 3]
      Tensor g = learn ? params.phi_global(q) : sinusoidal_encode(q, c);
      return tile(g, 1, k);                                  // [M, K, C]
    }
  }
  throw ParamError("position_encoding: unknown variant");
}

Tensor full_position_encoding(const Tensor& positions, const NeighborIndex& nbr,
                              const PositionEncodingParams& params) {
  const int64_t n = positions.defined() && positions.ndim() == 2
                        ? positions.dim(0)
                        : 0;
  if (nbr.query_count() != n) {
    throw ShapeError("full_position_encoding: neighbor rows must match points");
  }
  std::vector<int64_t> identity(static_cast<size_t>(n));
  std::iota(identity.begin(), identity.end(), 0);
  return position_encoding(positions, identity, nbr, params);
}

Tensor hierarchical_features(const Tensor& positions,
                             std::span<const int64_t> sample_indices,
                             const NeighborIndex& nbr,
                             const PositionEncodingParams& params) {
  return position_encoding(positions, sample_indices, nbr, params);
}

}  // namespace fpenc
