#include <algorithm>
#include <cmath>
#include <numeric>
#include <vector>

#include "doctest.h"
#include "fpenc/blocks.hpp"

using namespace fpenc;

namespace {

std::vector<int64_t> identity_indices(int64_t n) {
  std::vector<int64_t> ids(static_cast<size_t>(n));
  std::iota(ids.begin(), ids.end(), 0);
  return ids;
}

// hand affine over packed rows
std::vector<double> affine_rows(const std::vector<double>& x, int64_t rows,
                                const Linear& l) {
  const int64_t in = l.weight.dim(0);
  const int64_t out = l.weight.dim(1);
  std::vector<double> y(static_cast<size_t>(rows * out));
  for (int64_t r = 0; r < rows; ++r) {
    for (int64_t o = 0; o < out; ++o) {
      double s = l.bias.at({o});
      for (int64_t a = 0; a < in; ++a) {
        s += x[r * in + a] * l.weight.at({a, o});
      }
      y[r * out + o] = s;
    }
  }
  return y;
}

std::vector<double> mlp_rows(const std::vector<double>& x, int64_t rows,
                             const Mlp& m) {
  std::vector<double> h = affine_rows(x, rows, m.l1);
  for (double& v : h) v = std::max(0.0, v);
  return affine_rows(h, rows, m.l2);
}

// lift every point with phi_global, append coordinates, difference against
// each neighbor's lift, push through phi_local, add grouped features, run
// the block mlp and max-pool, all in plain loops
std::vector<double> oracle_sads(const Tensor& features, const Tensor& positions,
                                const std::vector<int64_t>& picks,
                                const NeighborIndex& nbr,
                                const SADSParams& p) {
  const int64_t n = positions.dim(0);
  const int64_t m = static_cast<int64_t>(picks.size());
  const int64_t k = nbr.neighbor_count();
  const int64_t c = p.c_in;
  const int64_t co = p.c_out;
  auto pv = positions.values();
  auto fv = features.values();
  std::vector<double> pos_rows(pv.begin(), pv.end());
  std::vector<double> lift = mlp_rows(pos_rows, n, p.pos.phi_global);
  std::vector<double> fg(static_cast<size_t>(n * (c + 3)));
  for (int64_t r = 0; r < n; ++r) {
    for (int64_t a = 0; a < c; ++a) fg[r * (c + 3) + a] = lift[r * c + a];
    for (int64_t a = 0; a < 3; ++a) fg[r * (c + 3) + c + a] = pv[r * 3 + a];
  }
  std::vector<double> diff(static_cast<size_t>(m * k * (c + 3)));
  for (int64_t i = 0; i < m; ++i) {
    for (int64_t j = 0; j < k; ++j) {
      const int64_t ij = nbr.indices.values[i * k + j];
      for (int64_t a = 0; a < c + 3; ++a) {
        diff[(i * k + j) * (c + 3) + a] =
            fg[picks[i] * (c + 3) + a] - fg[ij * (c + 3) + a];
      }
    }
  }
  std::vector<double> h = mlp_rows(diff, m * k, p.pos.phi_local);
  std::vector<double> mixed(static_cast<size_t>(m * k * c));
  for (int64_t i = 0; i < m; ++i) {
    for (int64_t j = 0; j < k; ++j) {
      const int64_t ij = nbr.indices.values[i * k + j];
      for (int64_t a = 0; a < c; ++a) {
        mixed[(i * k + j) * c + a] = fv[ij * c + a] + h[(i * k + j) * c + a];
      }
    }
  }
  std::vector<double> post = mlp_rows(mixed, m * k, p.mlp);
  std::vector<double> out(static_cast<size_t>(m * co), -1e300);
  for (int64_t i = 0; i < m; ++i) {
    for (int64_t j = 0; j < k; ++j) {
      for (int64_t o = 0; o < co; ++o) {
        out[i * co + o] = std::max(out[i * co + o], post[(i * k + j) * co + o]);
      }
    }
  }
  return out;
}

void zero_position_mlps(PositionEncodingParams& pos) {
  pos.phi_global.l1.zero_init();
  pos.phi_global.l2.zero_init();
  pos.phi_local.l1.zero_init();
  pos.phi_local.l2.zero_init();
}

}  // namespace

TEST_CASE("sads matches the unfused pipeline") {
  Rng rng(81);
  const int64_t n = 64, k = 8, ratio = 4;
  Tensor positions = Tensor::uniform({n, 3}, rng, -1, 1);
  Tensor features = Tensor::uniform({n, 6}, rng, -1, 1);
  SADSParams params = SADSParams::make(6, 5, k, ratio, rng);
  DownsampleResult got = sads_downsample(features, positions, params, 0);
  REQUIRE(got.sample_indices.size() == 16);
  REQUIRE(got.features.shape() == Shape{16, 5});

  std::vector<int64_t> picks = farthest_point_sample(positions, 16, 0);
  REQUIRE(got.sample_indices == picks);
  NeighborIndex nbr = knn(positions, got.positions, k, true, picks);
  auto want = oracle_sads(features, positions, picks, nbr, params);
  for (int64_t i = 0; i < got.features.numel(); ++i) {
    CHECK(rel_err(got.features.values()[i], want[i]) <= 1e-12);
  }
  // picked positions are rows of the input
  for (int64_t i = 0; i < 16; ++i) {
    for (int64_t a = 0; a < 3; ++a) {
      CHECK(got.positions.at({i, a}) == positions.at({picks[i], a}));
    }
  }
}

TEST_CASE("sads with unit ratio and self groups is a pointwise mlp") {
  Rng rng(82);
  const int64_t n = 10, c = 4;
  Tensor positions = Tensor::uniform({n, 3}, rng, -1, 1);
  Tensor features = Tensor::uniform({n, c}, rng, -1, 1);
  SADSParams params = SADSParams::make(c, 3, 1, 1, rng);
  zero_position_mlps(params.pos);
  DownsampleResult got = sads_downsample(features, positions, params, 0);
  REQUIRE(got.sample_indices.size() == static_cast<size_t>(n));
  Tensor direct = params.mlp(features);
  for (int64_t i = 0; i < n; ++i) {
    for (int64_t o = 0; o < 3; ++o) {
      CHECK(got.features.at({i, o}) == direct.at({got.sample_indices[i], o}));
    }
  }
}

TEST_CASE("sads keeps zero features at zero through zeroed blocks") {
  Rng rng(83);
  const int64_t n = 12;
  Tensor positions = Tensor::uniform({n, 3}, rng, -1, 1);
  Tensor features = Tensor::zeros({n, 4});
  SADSParams params = SADSParams::make(4, 4, 3, 2, rng);
  zero_position_mlps(params.pos);
  params.mlp.l1.zero_init();
  params.mlp.l2.zero_init();
  DownsampleResult got = sads_downsample(features, positions, params, 0);
  Tensor feats = got.features;
  for (double v : feats.values()) CHECK(v == 0.0);
}

TEST_CASE("gds equals gather-then-max") {
  Rng rng(84);
  const int64_t n = 30, k = 5, ratio = 3;
  Tensor positions = Tensor::uniform({n, 3}, rng, -1, 1);
  Tensor features = Tensor::uniform({n, 7}, rng, -1, 1);
  DownsampleResult got = gds_downsample(features, positions, k, ratio, 2);
  const int64_t m = static_cast<int64_t>(got.sample_indices.size());
  REQUIRE(m == 10);
  NeighborIndex nbr = knn(positions, got.positions, k, true, got.sample_indices);
  for (int64_t i = 0; i < m; ++i) {
    for (int64_t ci = 0; ci < 7; ++ci) {
      double best = -1e300;
      for (int64_t j = 0; j < k; ++j) {
        best = std::max(best,
                        features.at({nbr.indices.values[i * k + j], ci}));
      }
      CHECK(got.features.at({i, ci}) == best);
    }
  }

  Tensor constant = Tensor::full({n, 2}, 0.75);
  DownsampleResult flat = gds_downsample(constant, positions, k, ratio, 2);
  Tensor flat_feats = flat.features;
  for (double v : flat_feats.values()) CHECK(v == 0.75);

  DownsampleResult self = gds_downsample(features, positions, 1, ratio, 2);
  for (int64_t i = 0; i < m; ++i) {
    for (int64_t ci = 0; ci < 7; ++ci) {
      CHECK(self.features.at({i, ci}) ==
            features.at({self.sample_indices[i], ci}));
    }
  }
}

TEST_CASE("tds with an identity projection reduces to gds") {
  Rng rng(85);
  const int64_t n = 24, c = 5, k = 4, ratio = 2;
  Tensor positions = Tensor::uniform({n, 3}, rng, -1, 1);
  Tensor features = Tensor::uniform({n, c}, rng, -1, 1);
  TDSParams params = TDSParams::make(c, c, k, ratio, rng);
  params.lin.zero_init();
  for (int64_t a = 0; a < c; ++a) params.lin.weight.mutable_values()[a * c + a] = 1.0;
  DownsampleResult via_tds = tds_downsample(features, positions, params, 1);
  DownsampleResult via_gds = gds_downsample(features, positions, k, ratio, 1);
  REQUIRE(via_tds.sample_indices == via_gds.sample_indices);
  for (int64_t i = 0; i < via_tds.features.numel(); ++i) {
    CHECK(via_tds.features.values()[i] == via_gds.features.values()[i]);
  }

  // unfused oracle: project every row, then gather and max
  TDSParams rand_params = TDSParams::make(c, 3, k, ratio, rng);
  DownsampleResult got = tds_downsample(features, positions, rand_params, 1);
  std::vector<double> rows(features.values().begin(), features.values().end());
  std::vector<double> proj = affine_rows(rows, n, rand_params.lin);
  NeighborIndex nbr =
      knn(positions, got.positions, k, true, got.sample_indices);
  const int64_t m = static_cast<int64_t>(got.sample_indices.size());
  for (int64_t i = 0; i < m; ++i) {
    for (int64_t o = 0; o < 3; ++o) {
      double best = -1e300;
      for (int64_t j = 0; j < k; ++j) {
        best = std::max(best, proj[nbr.indices.values[i * k + j] * 3 + o]);
      }
      CHECK(rel_err(got.features.at({i, o}), best) <= 1e-12);
    }
  }
}

TEST_CASE("upsample interpolates by inverse distance") {
  Rng rng(86);
  const int64_t m = 9, f = 20, c = 4;
  Tensor coarse_pos = Tensor::uniform({m, 3}, rng, -1, 1);
  Tensor coarse_feat = Tensor::uniform({m, c}, rng, -1, 1);
  Tensor fine_pos = Tensor::uniform({f, 3}, rng, -1, 1);
  Tensor got = upsample_interpolate(coarse_pos, coarse_feat, fine_pos);
  REQUIRE(got.shape() == Shape{f, c});
  NeighborIndex nn = knn(coarse_pos, fine_pos, 3);
  for (int64_t i = 0; i < f; ++i) {
    double wsum = 0.0;
    std::vector<double> acc(static_cast<size_t>(c), 0.0);
    for (int64_t j = 0; j < 3; ++j) {
      const int64_t cj = nn.indices.values[i * 3 + j];
      double d2 = 0.0;
      for (int64_t a = 0; a < 3; ++a) {
        const double diff = fine_pos.at({i, a}) - coarse_pos.at({cj, a});
        d2 += diff * diff;
      }
      const double w = 1.0 / (std::sqrt(d2) + 1e-8);
      wsum += w;
      for (int64_t ci = 0; ci < c; ++ci) acc[ci] += w * coarse_feat.at({cj, ci});
    }
    for (int64_t ci = 0; ci < c; ++ci) {
      CHECK(rel_err(got.at({i, ci}), acc[ci] / wsum) <= 1e-12);
    }
  }
}

TEST_CASE("upsample reproduces coarse features at coarse positions") {
  Rng rng(87);
  const int64_t m = 6, c = 3;
  Tensor coarse_pos = Tensor::uniform({m, 3}, rng, -1, 1);
  Tensor coarse_feat = Tensor::uniform({m, c}, rng, -1, 1);
  Tensor extra = Tensor::uniform({4, 3}, rng, -1, 1);
  Tensor fine_pos = concat(coarse_pos, extra, 0);
  Tensor got = upsample_interpolate(coarse_pos, coarse_feat, fine_pos);
  for (int64_t i = 0; i < m; ++i) {
    for (int64_t ci = 0; ci < c; ++ci) {
      CHECK(got.at({i, ci}) == coarse_feat.at({i, ci}));
    }
  }

  Tensor one_pos = Tensor::uniform({1, 3}, rng, -1, 1);
  Tensor one_feat = Tensor::uniform({1, c}, rng, -1, 1);
  Tensor spread = upsample_interpolate(one_pos, one_feat, fine_pos);
  for (int64_t i = 0; i < spread.dim(0); ++i) {
    for (int64_t ci = 0; ci < c; ++ci) {
      CHECK(spread.at({i, ci}) == one_feat.at({0, ci}));
    }
  }
}

TEST_CASE("mlp baseline pools the shared pointwise mlp") {
  Rng rng(88);
  const int64_t n = 14, c = 4;
  Tensor positions = Tensor::uniform({n, 3}, rng, -1, 1);
  Tensor features = Tensor::uniform({n, c}, rng, -1, 1);
  Mlp mlp(c, 6, 6, rng);
  NeighborIndex self = knn(positions, positions, 1, true, identity_indices(n));
  Tensor pointwise = mlp_baseline_layer(features, self, mlp);
  Tensor direct = mlp(features);
  for (int64_t i = 0; i < pointwise.numel(); ++i) {
    CHECK(pointwise.values()[i] == direct.values()[i]);
  }

  NeighborIndex nbr = knn(positions, positions, 5, true, identity_indices(n));
  Tensor pooled = mlp_baseline_layer(features, nbr, mlp);
  std::vector<double> rows(features.values().begin(), features.values().end());
  std::vector<double> mapped = mlp_rows(rows, n, mlp);
  for (int64_t i = 0; i < n; ++i) {
    for (int64_t o = 0; o < 6; ++o) {
      double best = -1e300;
      for (int64_t j = 0; j < 5; ++j) {
        best = std::max(best, mapped[nbr.indices.values[i * 5 + j] * 6 + o]);
      }
      CHECK(rel_err(pooled.at({i, o}), best) <= 1e-12);
    }
  }

  Tensor constant = Tensor::full({n, c}, 0.3);
  Tensor flat = mlp_baseline_layer(constant, nbr, mlp);
  for (int64_t i = 1; i < n; ++i) {
    for (int64_t o = 0; o < 6; ++o) {
      CHECK(flat.at({i, o}) == flat.at({0, o}));
    }
  }
}

TEST_CASE("downsample blocks reject bad arguments") {
  Rng rng(89);
  const int64_t n = 8;
  Tensor positions = Tensor::uniform({n, 3}, rng, -1, 1);
  Tensor features = Tensor::uniform({n, 4}, rng, -1, 1);
  CHECK_THROWS_AS(gds_downsample(features, positions, n + 1, 2, 0), ParamError);
  CHECK_THROWS_AS(gds_downsample(features, positions, 2, 0, 0), ParamError);
  SADSParams params = SADSParams::make(5, 4, 2, 2, rng);
  CHECK_THROWS_AS(sads_downsample(features, positions, params, 0), ShapeError);
  CHECK_THROWS_AS(SADSParams::make(4, 4, 0, 2, rng), ParamError);
  CHECK_THROWS_AS(upsample_interpolate(Tensor::zeros({0, 3}),
                                       Tensor::zeros({0, 2}), positions),
                  ShapeError);
}

TEST_CASE("gradients flow through the sampling blocks") {
  Rng rng(90);
  const int64_t n = 12, c = 4;
  Tensor positions = Tensor::uniform({n, 3}, rng, -1, 1);
  Tensor features = Tensor::uniform({n, c}, rng, -1, 1);

  SADSParams sads = SADSParams::make(c, 3, 3, 3, rng);
  Tensor w_sads = Tensor::uniform({4, 3}, rng, -1, 1);
  std::vector<NamedParam> named;
  sads.collect("s", named);
  std::vector<Tensor> leaves{features};
  for (const NamedParam& np : named) leaves.push_back(np.tensor);
  double err = grad_check(
      [&]() {
        return mul(sads_downsample(features, positions, sads, 0).features,
                   w_sads);
      },
      std::span<Tensor>(leaves));
  CHECK(err < 1e-5);

  TDSParams tds = TDSParams::make(c, 3, 3, 3, rng);
  Tensor w_tds = Tensor::uniform({4, 3}, rng, -1, 1);
  std::vector<Tensor> tds_leaves{features, tds.lin.weight, tds.lin.bias};
  err = grad_check(
      [&]() {
        return mul(tds_downsample(features, positions, tds, 0).features,
                   w_tds);
      },
      std::span<Tensor>(tds_leaves));
  CHECK(err < 1e-5);

  Tensor w_gds = Tensor::uniform({4, c}, rng, -1, 1);
  std::vector<Tensor> gds_leaves{features};
  err = grad_check(
      [&]() {
        return mul(gds_downsample(features, positions, 3, 3, 0).features,
                   w_gds);
      },
      std::span<Tensor>(gds_leaves));
  CHECK(err < 1e-5);

  Tensor coarse_pos = Tensor::uniform({5, 3}, rng, -1, 1);
  Tensor coarse_feat = Tensor::uniform({5, c}, rng, -1, 1);
  Tensor w_up = Tensor::uniform({n, c}, rng, -1, 1);
  std::vector<Tensor> up_leaves{coarse_feat};
  err = grad_check(
      [&]() {
        return mul(upsample_interpolate(coarse_pos, coarse_feat, positions),
                   w_up);
      },
      std::span<Tensor>(up_leaves));
  CHECK(err < 1e-5);

  Mlp mlp(c, 5, 5, rng);
  NeighborIndex nbr = knn(positions, positions, 4, true, identity_indices(n));
  Tensor w_mlp = Tensor::uniform({n, 5}, rng, -1, 1);
  std::vector<Tensor> mlp_leaves{features, mlp.l1.weight, mlp.l1.bias,
                                 mlp.l2.weight, mlp.l2.bias};
  err = grad_check(
      [&]() { return mul(mlp_baseline_layer(features, nbr, mlp), w_mlp); },
      std::span<Tensor>(mlp_leaves));
  CHECK(err < 1e-5);
}
