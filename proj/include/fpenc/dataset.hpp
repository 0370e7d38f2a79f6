#pragma once

#include "fpenc/cloud.hpp"
#include "json.hpp"

namespace fpenc {

enum class DatasetKind { kShapesCls, kSceneSeg, kSphereNormals };

const char* dataset_kind_name(DatasetKind k);
DatasetKind dataset_kind_from_name(const std::string& s);

// Synthetic stand-ins with analytic ground truth: surface samples of four
// parametric shapes for classification, shape arrangements in a box for
// segmentation, and unit-sphere samples whose normals equal their positions.
struct SyntheticDatasetSpec {
  DatasetKind kind = DatasetKind::kShapesCls;
  int64_t points_per_cloud = 1024;
  int64_t train_count = 200;
  int64_t test_count = 80;
  double noise = 0.0;  // jitter applied to positions; ignored for normals
  uint64_t seed = 1;

  int64_t num_classes() const;  // 4 shape classes, 0 for the normals task
  void validate() const;
};

void to_json(nlohmann::json& j, const SyntheticDatasetSpec& spec);
void from_json(const nlohmann::json& j, SyntheticDatasetSpec& spec);

struct Dataset {
  std::vector<PointCloud> train;
  std::vector<PointCloud> test;
};

// Classification clouds carry one constant per-point label; segmentation
// clouds carry per-point shape labels; normals clouds carry unit normals.
Dataset gen_dataset(const SyntheticDatasetSpec& spec);

// class id of a classification cloud
int64_t cloud_label(const PointCloud& cloud);

}  // namespace fpenc
