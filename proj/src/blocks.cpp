#include "fpenc/blocks.hpp"

#include <algorithm>
#include <cmath>
#include <utility>

namespace fpenc {

namespace {

void check_downsample_inputs(const Tensor& features, const Tensor& positions,
                             int64_t k, int64_t ratio, const char* op) {
  if (!positions.defined() || positions.ndim() != 2 || positions.dim(1) != 3) {
    throw ShapeError(std::string(op) + ": positions must be [N,3]");
  }
  if (!features.defined() || features.ndim() != 2 ||
      features.dim(0) != positions.dim(0)) {
    throw ShapeError(std::string(op) + ": features must be [N,C] matching positions");
  }
  if (ratio < 1) {
    throw ParamError(std::string(op) + ": ratio must be >= 1");
  }
  if (k < 1 || k > positions.dim(0)) {
    throw ParamError(std::string(op) + ": k=" + std::to_string(k) +
                     " outside [1," + std::to_string(positions.dim(0)) + "]");
  }
}

struct Grouping {
  std::vector<int64_t> picks;
  NeighborIndex nbr;  // [M, K] rows in the full cloud
  Tensor positions;   // [M, 3]
};

Grouping group_by_fps(const Tensor& positions, int64_t k, int64_t ratio,
                      int64_t fps_seed) {
  const int64_t n = positions.dim(0);
  const int64_t m = (n + ratio - 1) / ratio;
  Grouping g;
  g.picks = farthest_point_sample(positions, m, fps_seed);
  IndexArray pick_idx{{m}, g.picks};
  g.positions = gather(positions, pick_idx);
  g.nbr = knn(positions, g.positions, k, true, g.picks);
  return g;
}

}  // namespace

SADSParams SADSParams::make(int64_t c_in, int64_t c_out, int64_t k,
                            int64_t ratio, Rng& rng, PosVariant variant,
                            PosEncoder encoder) {
  if (c_in < 1 || c_out < 1) {
    throw ParamError("sads: channel counts must be >= 1");
  }
  if (k < 1 || ratio < 1) {
    throw ParamError("sads: k and ratio must be >= 1");
  }
  SADSParams p;
  p.pos = PositionEncodingParams::make(c_in, variant, encoder, rng);
  p.mlp = Mlp(c_in, c_out, c_out, rng);
  p.c_in = c_in;
  p.c_out = c_out;
  p.k = k;
  p.ratio = ratio;
  return p;
}

void SADSParams::collect(const std::string& prefix,
                         std::vector<NamedParam>& out) const {
  pos.collect(prefix + ".pos", out);
  mlp.collect(prefix + ".mlp", out);
}

TDSParams TDSParams::make(int64_t c_in, int64_t c_out, int64_t k,
                          int64_t ratio, Rng& rng) {
  if (c_in < 1 || c_out < 1) {
    throw ParamError("tds: channel counts must be >= 1");
  }
  if (k < 1 || ratio < 1) {
    throw ParamError("tds: k and ratio must be >= 1");
  }
  TDSParams p;
  p.lin = Linear(c_in, c_out, rng);
  p.c_in = c_in;
  p.c_out = c_out;
  p.k = k;
  p.ratio = ratio;
  return p;
}

void TDSParams::collect(const std::string& prefix,
                        std::vector<NamedParam>& out) const {
  lin.collect(prefix + ".lin", out);
}

DownsampleResult sads_downsample(const Tensor& features,
                                 const Tensor& positions,
                                 const SADSParams& params, int64_t fps_seed) {
  check_downsample_inputs(features, positions, params.k, params.ratio, "sads");
  if (features.dim(1) != params.c_in) {
    throw ShapeError("sads: got " + std::to_string(features.dim(1)) +
                     " channels, params want " + std::to_string(params.c_in));
  }
  Grouping g = group_by_fps(positions, params.k, params.ratio, fps_seed);
  Tensor h = hierarchical_features(positions, g.picks, g.nbr, params.pos);
  Tensor grouped = gather(features, g.nbr.indices);       // [M, K, C]
  Tensor mixed = params.mlp(add(grouped, h));             // [M, K, C_out]
  Tensor pooled = reduce(mixed, 1, Reduce::kMax);         // [M, C_out]
  return DownsampleResult{std::move(g.picks), g.positions, pooled};
}

DownsampleResult gds_downsample(const Tensor& features,
                                const Tensor& positions, int64_t k,
                                int64_t ratio, int64_t fps_seed) {
  check_downsample_inputs(features, positions, k, ratio, "gds");
  Grouping g = group_by_fps(positions, k, ratio, fps_seed);
  Tensor grouped = gather(features, g.nbr.indices);
  Tensor pooled = reduce(grouped, 1, Reduce::kMax);
  return DownsampleResult{std::move(g.picks), g.positions, pooled};
}

DownsampleResult tds_downsample(const Tensor& features,
                                const Tensor& positions,
                                const TDSParams& params, int64_t fps_seed) {
  check_downsample_inputs(features, positions, params.k, params.ratio, "tds");
  if (features.dim(1) != params.c_in) {
    throw ShapeError("tds: got " + std::to_string(features.dim(1)) +
                     " channels, params want " + std::to_string(params.c_in));
  }
  Tensor projected = params.lin(features);  // [N, C_out], before grouping
  Grouping g = group_by_fps(positions, params.k, params.ratio, fps_seed);
  Tensor grouped = gather(projected, g.nbr.indices);
  Tensor pooled = reduce(grouped, 1, Reduce::kMax);
  return DownsampleResult{std::move(g.picks), g.positions, pooled};
}

Tensor upsample_interpolate(const Tensor& coarse_positions,
                            const Tensor& coarse_features,
                            const Tensor& fine_positions, int64_t p) {
  if (!coarse_positions.defined() || coarse_positions.ndim() != 2 ||
      coarse_positions.dim(1) != 3 || coarse_positions.dim(0) < 1) {
    throw ShapeError("upsample: coarse positions must be nonempty [M,3]");
  }
  if (!coarse_features.defined() || coarse_features.ndim() != 2 ||
      coarse_features.dim(0) != coarse_positions.dim(0)) {
    throw ShapeError("upsample: coarse features must be [M,C] matching positions");
  }
  if (!fine_positions.defined() || fine_positions.ndim() != 2 ||
      fine_positions.dim(1) != 3) {
    throw ShapeError("upsample: fine positions must be [F,3]");
  }
  if (p < 1) {
    throw ParamError("upsample: p must be >= 1");
  }
  const int64_t m = coarse_positions.dim(0);
  const int64_t f = fine_positions.dim(0);
  const int64_t c = coarse_features.dim(1);
  const int64_t pk = std::min(p, m);
  NeighborIndex nn = knn(coarse_positions, fine_positions, pk);
  auto cp = coarse_positions.values();
  auto fp = fine_positions.values();
  // normalized inverse-distance weights; an exact hit takes all the weight
  std::vector<double> wide(static_cast<size_t>(f * pk * c));
  for (int64_t i = 0; i < f; ++i) {
    std::vector<double> w(static_cast<size_t>(pk));
    bool exact = false;
    for (int64_t j = 0; j < pk; ++j) {
      const int64_t cj = nn.indices.values[i * pk + j];
      double d2 = 0.0;
      for (int64_t a = 0; a < 3; ++a) {
        const double diff = fp[i * 3 + a] - cp[cj * 3 + a];
        d2 += diff * diff;
      }
      const double d = std::sqrt(d2);
      if (d == 0.0 && !exact) {
        std::fill(w.begin(), w.end(), 0.0);
        w[j] = 1.0;
        exact = true;
      } else if (!exact) {
        w[j] = 1.0 / (d + 1e-8);
      }
    }
    if (!exact) {
      double total = 0.0;
      for (double v : w) total += v;
      for (double& v : w) v /= total;
    }
    for (int64_t j = 0; j < pk; ++j) {
      for (int64_t ci = 0; ci < c; ++ci) {
        wide[(i * pk + j) * c + ci] = w[j];
      }
    }
  }
  Tensor gathered = gather(coarse_features, nn.indices);  // [F, pk, C]
  Tensor weights({f, pk, c}, std::move(wide));
  return reduce(mul(gathered, weights), 1, Reduce::kSum);  // [F, C]
}

Tensor mlp_baseline_layer(const Tensor& features, const NeighborIndex& nbr,
                          const Mlp& mlp) {
  if (!features.defined() || features.ndim() != 2) {
    throw ShapeError("mlp baseline: features must be [N,C]");
  }
  if (nbr.query_count() < 1) {
    throw ShapeError("mlp baseline: empty neighbor index");
  }
  Tensor grouped = gather(features, nbr.indices);  // [M, K, C]
  return reduce(mlp(grouped), 1, Reduce::kMax);    // [M, C_out]
}

}  // namespace fpenc
