#pragma once

#include <array>
#include <span>
#include <string>
#include <vector>

#include "fpenc/rng.hpp"
#include "fpenc/tensor.hpp"

namespace fpenc {

// Positions [N,3]; optional per-point features [N,C], labels [N], and unit
// normals [N,3]. validate() enforces the row-count and finiteness contract.
struct PointCloud {
  Tensor positions;
  Tensor features;
  std::vector<int64_t> labels;
  Tensor normals;

  int64_t size() const { return positions.defined() ? positions.dim(0) : 0; }
  bool has_features() const { return features.defined(); }
  bool has_labels() const { return !labels.empty(); }
  bool has_normals() const { return normals.defined(); }
  int64_t feature_count() const {
    return has_features() ? features.dim(1) : 0;
  }
  void validate() const;
};

// Neighbor table: row m lists the k nearest point indices of query m,
// ascending by distance, distance ties broken by ascending index.
struct NeighborIndex {
  IndexArray indices;  // [M, K]

  int64_t query_count() const { return indices.shape[0]; }
  int64_t neighbor_count() const { return indices.shape[1]; }
};

// Brute-force exact kNN of queries against points. With include_self,
// query_indices must give each query's own index in points; that index is
// forced into slot 0 and the remaining slots hold the nearest others.
NeighborIndex knn(const Tensor& points, const Tensor& queries, int64_t k,
                  bool include_self = false,
                  std::span<const int64_t> query_indices = {});

// Greedy farthest point sampling: starts at seed_index, then repeatedly
// takes the point with the largest distance to the chosen set (ties to the
// lowest index). Returns m indices in pick order.
std::vector<int64_t> farthest_point_sample(const Tensor& positions, int64_t m,
                                           int64_t seed_index = 0);

// Index of the point farthest from the centroid, ties to the lowest index.
// Used as a permutation-invariant seed for sampling.
int64_t centroid_farthest_index(const Tensor& positions);

// [0, 1, ..., n-1], the query_indices for self-inclusive kNN over one cloud.
std::vector<int64_t> iota_indices(int64_t n);

// One output point per occupied cell of an axis-aligned grid (cell id =
// floor(p / voxel_size) per axis), ordered by cell id. Positions average,
// features average, labels take the majority (ties to the lowest label).
// Normals are dropped; averaging would break the unit-length contract.
PointCloud voxel_downsample(const PointCloud& cloud, double voxel_size);

// Center on the centroid and scale so the farthest point sits on the unit
// sphere. A degenerate cloud (all points coincident) maps to all zeros.
PointCloud normalize_unit_sphere(const PointCloud& cloud);

struct AugmentSpec {
  bool permute = false;
  std::array<double, 3> translate{0.0, 0.0, 0.0};
  double scale = 1.0;
  double jitter_sigma = 0.0;
  double jitter_clip = 0.05;
};

// Applies permutation, uniform scaling, translation, then clipped Gaussian
// jitter, in that order. Jitter and the permutation draw from rng; scale
// and translate are the fixed values in the AugmentSpec.
PointCloud augment(const PointCloud& cloud, const AugmentSpec& spec, Rng& rng);

// ASCII "x y z [f...]" with optional "#cols C", "#labels", "#normals"
// headers; files ending in .ply go through the PLY-subset reader.
PointCloud read_cloud(const std::string& path);
void write_cloud(const PointCloud& cloud, const std::string& path);

}  // namespace fpenc
