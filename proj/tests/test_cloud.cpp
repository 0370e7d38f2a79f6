#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <set>

#include "doctest.h"
#include "fpenc/cloud.hpp"

using namespace fpenc;

namespace {

double dist2(std::span<const double> p, int64_t a, std::span<const double> q,
             int64_t b) {
  double s = 0.0;
  for (int i = 0; i < 3; ++i) {
    double d = p[a * 3 + i] - q[b * 3 + i];
    s += d * d;
  }
  return s;
}

// full sort over (distance, index); independent of the library's
// partial-sort path
std::vector<int64_t> knn_oracle(const Tensor& points, const Tensor& queries,
                                int64_t qi, int64_t k) {
  auto pv = points.values();
  auto qv = queries.values();
  std::vector<std::pair<double, int64_t>> all;
  for (int64_t i = 0; i < points.dim(0); ++i) {
    all.emplace_back(dist2(pv, i, qv, qi), i);
  }
  std::sort(all.begin(), all.end());
  std::vector<int64_t> out;
  for (int64_t j = 0; j < k; ++j) out.push_back(all[j].second);
  return out;
}

// re-derives every round's distances from scratch against the whole
// chosen set, instead of the incremental min update
std::vector<int64_t> fps_oracle(const Tensor& positions, int64_t m,
                                int64_t seed) {
  auto pv = positions.values();
  const int64_t n = positions.dim(0);
  std::vector<int64_t> picks{seed};
  while (static_cast<int64_t>(picks.size()) < m) {
    int64_t best = -1;
    double best_d = -1.0;
    for (int64_t i = 0; i < n; ++i) {
      double d = std::numeric_limits<double>::infinity();
      for (int64_t p : picks) d = std::min(d, dist2(pv, i, pv, p));
      if (d > best_d) {
        best_d = d;
        best = i;
      }
    }
    picks.push_back(best);
  }
  return picks;
}

Tensor random_positions(int64_t n, Rng& rng, double lo = -1, double hi = 1) {
  return Tensor::uniform({n, 3}, rng, lo, hi);
}

std::string temp_path(const char* name) {
  return (std::filesystem::temp_directory_path() / name).string();
}

}  // namespace

TEST_CASE("cloud validation catches contract violations") {
  PointCloud c;
  c.positions = Tensor({2, 3}, {0, 0, 0, 1, 1, 1});
  c.validate();
  c.features = Tensor({3, 2}, {1, 2, 3, 4, 5, 6});
  CHECK_THROWS_AS(c.validate(), ShapeError);
  c.features = Tensor({2, 2}, {1, 2, 3, 4});
  c.validate();
  c.labels = {0};
  CHECK_THROWS_AS(c.validate(), ShapeError);
  c.labels = {0, 3};
  c.validate();
  c.labels = {0, -1};
  CHECK_THROWS_AS(c.validate(), ShapeError);
  c.labels = {0, 1};
  c.normals = Tensor({2, 3}, {1, 0, 0, 0.5, 0.5, 0});
  CHECK_THROWS_AS(c.validate(), ShapeError);
  const double s = std::sqrt(0.5);
  c.normals = Tensor({2, 3}, {1, 0, 0, s, s, 0});
  c.validate();
  PointCloud bad;
  bad.positions = Tensor({1, 3}, {0, 0, std::numeric_limits<double>::quiet_NaN()});
  CHECK_THROWS_AS(bad.validate(), NumericError);
}

TEST_CASE("knn matches the full sort oracle on random instances") {
  Rng rng(31);
  for (int trial = 0; trial < 50; ++trial) {
    int64_t n = 2 + rng.below(40);
    int64_t k = 1 + rng.below(n);
    Tensor pts = random_positions(n, rng);
    int64_t m = 1 + rng.below(8);
    Tensor q = random_positions(m, rng);
    NeighborIndex nbr = knn(pts, q, k);
    for (int64_t qi = 0; qi < m; ++qi) {
      auto want = knn_oracle(pts, q, qi, k);
      for (int64_t j = 0; j < k; ++j) {
        CHECK(nbr.indices.values[qi * k + j] == want[j]);
      }
    }
  }
}

TEST_CASE("knn include_self pins the query index to slot zero") {
  Rng rng(32);
  Tensor pts = random_positions(20, rng);
  std::vector<int64_t> ids(20);
  std::iota(ids.begin(), ids.end(), 0);
  NeighborIndex nbr = knn(pts, pts, 5, true, ids);
  for (int64_t i = 0; i < 20; ++i) {
    CHECK(nbr.indices.values[i * 5] == i);
    // remaining slots are the oracle's nearest others
    auto want = knn_oracle(pts, pts, i, 6);
    std::vector<int64_t> others;
    for (int64_t w : want) {
      if (w != i) others.push_back(w);
    }
    for (int64_t j = 1; j < 5; ++j) {
      CHECK(nbr.indices.values[i * 5 + j] == others[j - 1]);
    }
  }
}

TEST_CASE("knn distance ties break toward the lower index") {
  // four points at the same distance from the origin query
  Tensor pts({5, 3}, {0, 0, 0, 1, 0, 0, -1, 0, 0, 0, 1, 0, 0, -1, 0});
  Tensor q({1, 3}, {0, 0, 0});
  NeighborIndex nbr = knn(pts, q, 3);
  CHECK(nbr.indices.values[0] == 0);
  CHECK(nbr.indices.values[1] == 1);
  CHECK(nbr.indices.values[2] == 2);
}

TEST_CASE("knn rejects bad arguments") {
  Rng rng(33);
  Tensor pts = random_positions(4, rng);
  CHECK_THROWS_AS(knn(pts, pts, 0), ParamError);
  CHECK_THROWS_AS(knn(pts, pts, 5), ParamError);
  CHECK_THROWS_AS(knn(pts, pts, 2, true, {}), ParamError);
}

TEST_CASE("fps matches the from-scratch oracle") {
  Rng rng(34);
  for (int trial = 0; trial < 30; ++trial) {
    int64_t n = 2 + rng.below(40);
    int64_t m = 1 + rng.below(n);
    int64_t seed = rng.below(n);
    Tensor pts = random_positions(n, rng);
    auto got = farthest_point_sample(pts, m, seed);
    auto want = fps_oracle(pts, m, seed);
    REQUIRE(got.size() == want.size());
    for (size_t i = 0; i < got.size(); ++i) CHECK(got[i] == want[i]);
    // picks are distinct
    std::set<int64_t> uniq(got.begin(), got.end());
    CHECK(uniq.size() == got.size());
  }
}

TEST_CASE("fps first pick is the seed and m=n returns a permutation") {
  Rng rng(35);
  Tensor pts = random_positions(10, rng);
  auto picks = farthest_point_sample(pts, 10, 3);
  CHECK(picks[0] == 3);
  std::set<int64_t> uniq(picks.begin(), picks.end());
  CHECK(uniq.size() == 10);
  CHECK_THROWS_AS(farthest_point_sample(pts, 11, 0), ParamError);
  CHECK_THROWS_AS(farthest_point_sample(pts, 2, 10), ParamError);
}

TEST_CASE("centroid farthest index names the same point after permutation") {
  Rng rng(36);
  for (int trial = 0; trial < 20; ++trial) {
    int64_t n = 3 + rng.below(60);
    Tensor pts = random_positions(n, rng);
    int64_t base = centroid_farthest_index(pts);
    std::vector<int64_t> perm(n);
    std::iota(perm.begin(), perm.end(), 0);
    rng.shuffle(perm);
    IndexArray idx{{n}, perm};
    Tensor shuffled = gather(pts, idx);
    int64_t moved = centroid_farthest_index(shuffled);
    CHECK(perm[moved] == base);
  }
}

TEST_CASE("voxel downsample buckets by floored cell id") {
  // two points land in cells 0 and 2 of a 0.04 grid
  PointCloud c;
  c.positions = Tensor({2, 3}, {0.01, 0, 0, 0.09, 0, 0});
  PointCloud d = voxel_downsample(c, 0.04);
  CHECK(d.size() == 2);
  // same cell: centroid of members
  c.positions = Tensor({2, 3}, {0.01, 0, 0, 0.03, 0, 0});
  d = voxel_downsample(c, 0.04);
  REQUIRE(d.size() == 1);
  CHECK(d.positions.at({0, 0}) == doctest::Approx(0.02));
  // negative coordinates floor toward minus infinity
  c.positions = Tensor({2, 3}, {-0.01, 0, 0, 0.01, 0, 0});
  d = voxel_downsample(c, 0.04);
  CHECK(d.size() == 2);
  CHECK_THROWS_AS(voxel_downsample(c, 0.0), ParamError);
}

TEST_CASE("voxel downsample averages features and majority-votes labels") {
  PointCloud c;
  c.positions = Tensor({3, 3}, {0.1, 0.1, 0.1, 0.11, 0.1, 0.1, 0.9, 0.9, 0.9});
  c.features = Tensor({3, 2}, {1, 2, 3, 4, 10, 20});
  c.labels = {2, 1, 7};
  PointCloud d = voxel_downsample(c, 0.5);
  REQUIRE(d.size() == 2);
  CHECK(d.features.at({0, 0}) == doctest::Approx(2.0));
  CHECK(d.features.at({0, 1}) == doctest::Approx(3.0));
  // one vote each for labels 1 and 2: tie goes to the lowest
  CHECK(d.labels[0] == 1);
  CHECK(d.labels[1] == 7);
}

TEST_CASE("normalize_unit_sphere centers and scales to the unit ball") {
  Rng rng(37);
  PointCloud c;
  c.positions = Tensor::uniform({50, 3}, rng, 2.0, 9.0);
  PointCloud n = normalize_unit_sphere(c);
  auto pv = n.positions.values();
  std::array<double, 3> centroid{0, 0, 0};
  double max_norm = 0.0;
  for (int64_t i = 0; i < 50; ++i) {
    double s = 0.0;
    for (int a = 0; a < 3; ++a) {
      centroid[a] += pv[i * 3 + a];
      s += pv[i * 3 + a] * pv[i * 3 + a];
    }
    max_norm = std::max(max_norm, std::sqrt(s));
  }
  for (int a = 0; a < 3; ++a) CHECK(std::abs(centroid[a] / 50) < 1e-12);
  CHECK(max_norm == doctest::Approx(1.0).epsilon(1e-12));

  PointCloud degenerate;
  degenerate.positions = Tensor({3, 3}, {5, 5, 5, 5, 5, 5, 5, 5, 5});
  PointCloud z = normalize_unit_sphere(degenerate);
  for (double v : z.positions.values()) CHECK(v == 0.0);
}

TEST_CASE("augment applies scale translate jitter in order") {
  PointCloud c;
  c.positions = Tensor({2, 3}, {1, 2, 3, -1, 0, 1});
  AugmentSpec spec;
  spec.scale = 2.0;
  spec.translate = {0.5, -0.5, 0.0};
  Rng rng(38);
  PointCloud a = augment(c, spec, rng);
  CHECK(a.positions.at({0, 0}) == doctest::Approx(2.5));
  CHECK(a.positions.at({0, 1}) == doctest::Approx(3.5));
  CHECK(a.positions.at({1, 2}) == doctest::Approx(2.0));

  // jitter displacement never exceeds the clip
  AugmentSpec j;
  j.jitter_sigma = 0.5;
  j.jitter_clip = 0.05;
  PointCloud b = augment(c, j, rng);
  for (int64_t i = 0; i < c.positions.numel(); ++i) {
    CHECK(std::abs(b.positions.values()[i] - c.positions.values()[i]) <=
          0.05 + 1e-15);
  }

  AugmentSpec bad;
  bad.scale = 0.0;
  CHECK_THROWS_AS(augment(c, bad, rng), ParamError);
}

TEST_CASE("augment permutation co-permutes every attribute") {
  Rng rng(39);
  PointCloud c;
  c.positions = Tensor::uniform({30, 3}, rng, -1, 1);
  c.features = Tensor::uniform({30, 4}, rng, -1, 1);
  c.labels.resize(30);
  for (int64_t i = 0; i < 30; ++i) c.labels[i] = i % 5;
  AugmentSpec spec;
  spec.permute = true;
  Rng arng(40);
  PointCloud p = augment(c, spec, arng);
  // every permuted row must appear in the original with all attributes
  for (int64_t i = 0; i < 30; ++i) {
    bool found = false;
    for (int64_t j = 0; j < 30; ++j) {
      if (p.positions.at({i, 0}) == c.positions.at({j, 0}) &&
          p.positions.at({i, 1}) == c.positions.at({j, 1}) &&
          p.positions.at({i, 2}) == c.positions.at({j, 2})) {
        found = true;
        CHECK(p.labels[i] == c.labels[j]);
        for (int64_t f = 0; f < 4; ++f) {
          CHECK(p.features.at({i, f}) == c.features.at({j, f}));
        }
      }
    }
    CHECK(found);
  }
}

TEST_CASE("ascii cloud io round-trips bit-exactly") {
  Rng rng(41);
  PointCloud c;
  c.positions = Tensor::uniform({17, 3}, rng, -5, 5);
  c.features = Tensor::uniform({17, 4}, rng, -2, 2);
  c.labels.resize(17);
  for (int64_t i = 0; i < 17; ++i) c.labels[i] = i % 3;
  std::vector<double> nv(17 * 3);
  for (int64_t i = 0; i < 17; ++i) {
    double x = rng.uniform(-1, 1), y = rng.uniform(-1, 1), z = rng.uniform(-1, 1);
    double n = std::sqrt(x * x + y * y + z * z);
    nv[i * 3] = x / n;
    nv[i * 3 + 1] = y / n;
    nv[i * 3 + 2] = z / n;
  }
  c.normals = Tensor({17, 3}, std::move(nv));
  auto path = temp_path("fpenc_roundtrip.xyz");
  write_cloud(c, path);
  PointCloud r = read_cloud(path);
  REQUIRE(r.size() == 17);
  REQUIRE(r.feature_count() == 4);
  REQUIRE(r.has_normals());
  REQUIRE(r.has_labels());
  for (int64_t i = 0; i < c.positions.numel(); ++i) {
    CHECK(r.positions.values()[i] == c.positions.values()[i]);
    CHECK(r.normals.values()[i] == c.normals.values()[i]);
  }
  for (int64_t i = 0; i < c.features.numel(); ++i) {
    CHECK(r.features.values()[i] == c.features.values()[i]);
  }
  CHECK(r.labels == c.labels);
  std::filesystem::remove(path);
}

TEST_CASE("ascii reader reports malformed input with line numbers") {
  auto path = temp_path("fpenc_bad.xyz");
  {
    std::ofstream f(path);
    f << "0 0 0\n1 nan 1\n";
  }
  CHECK_THROWS_WITH_AS(read_cloud(path), "line 2: non-finite value", ParseError);
  {
    std::ofstream f(path);
    f << "0 0 0\n1 abc 1\n";
  }
  CHECK_THROWS_WITH_AS(read_cloud(path), "line 2: bad number 'abc'", ParseError);
  {
    std::ofstream f(path);
    f << "#cols 2\n0 0 0 1\n";
  }
  CHECK_THROWS_AS(read_cloud(path), ParseError);
  {
    std::ofstream f(path);
    f << "# just a comment\n";
  }
  CHECK_THROWS_AS(read_cloud(path), ParseError);
  CHECK_THROWS_AS(read_cloud("/nonexistent/nowhere.xyz"), ParseError);
  std::filesystem::remove(path);
}

TEST_CASE("ply subset reader handles labels and rejects the unsupported") {
  auto path = temp_path("fpenc_test.ply");
  {
    std::ofstream f(path);
    f << "ply\nformat ascii 1.0\ncomment made by hand\n"
      << "element vertex 3\n"
      << "property float x\nproperty float y\nproperty float z\n"
      << "property uchar label\nend_header\n"
      << "0 0 0 1\n0.5 0 0 2\n0 0.25 0 1\n";
  }
  PointCloud c = read_cloud(path);
  REQUIRE(c.size() == 3);
  CHECK(c.positions.at({1, 0}) == doctest::Approx(0.5));
  REQUIRE(c.has_labels());
  CHECK(c.labels[1] == 2);

  {
    std::ofstream f(path);
    f << "ply\nformat ascii 1.0\nelement vertex 1\n"
      << "property float x\nproperty float y\nproperty float z\n"
      << "property float confidence\nend_header\n0 0 0 1\n";
  }
  CHECK_THROWS_AS(read_cloud(path), ParseError);

  {
    std::ofstream f(path);
    f << "ply\nformat binary_little_endian 1.0\nend_header\n";
  }
  CHECK_THROWS_AS(read_cloud(path), ParseError);
  std::filesystem::remove(path);
}
