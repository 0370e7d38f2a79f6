#include <algorithm>
#include <cmath>
#include <set>

#include "doctest.h"
#include "fpenc/dataset.hpp"
#include "fpenc/metrics.hpp"

using namespace fpenc;

namespace {

std::vector<double> vals(const Tensor& t) {
  return {t.values().begin(), t.values().end()};
}

double max_radius(const PointCloud& cloud) {
  std::span<const double> p = cloud.positions.values();
  double best = 0.0;
  for (int64_t i = 0; i < cloud.size(); ++i) {
    best = std::max(best, std::sqrt(p[i * 3] * p[i * 3] +
                                    p[i * 3 + 1] * p[i * 3 + 1] +
                                    p[i * 3 + 2] * p[i * 3 + 2]));
  }
  return best;
}

}  // namespace

TEST_CASE("shape classification clouds are normalized and labeled round-robin") {
  SyntheticDatasetSpec spec;
  spec.kind = DatasetKind::kShapesCls;
  spec.points_per_cloud = 96;
  spec.train_count = 12;
  spec.test_count = 6;
  spec.seed = 111;
  Dataset data = gen_dataset(spec);

  REQUIRE(data.train.size() == 12);
  REQUIRE(data.test.size() == 6);
  for (size_t i = 0; i < data.train.size(); ++i) {
    const PointCloud& cloud = data.train[i];
    CHECK(cloud.size() == 96);
    CHECK(cloud_label(cloud) == static_cast<int64_t>(i % 4));
    // every point carries the cloud label
    for (int64_t lab : cloud.labels) CHECK(lab == cloud_label(cloud));
    // farthest point sits on the unit sphere after normalization
    CHECK(max_radius(cloud) == doctest::Approx(1.0).epsilon(1e-12));
  }
  // all four classes present in both splits
  std::set<int64_t> seen;
  for (const PointCloud& cloud : data.test) seen.insert(cloud_label(cloud));
  CHECK(seen.size() == 4);
}

TEST_CASE("dataset generation is deterministic in the seed") {
  SyntheticDatasetSpec spec;
  spec.kind = DatasetKind::kSceneSeg;
  spec.points_per_cloud = 64;
  spec.train_count = 4;
  spec.test_count = 3;
  spec.noise = 0.02;
  spec.seed = 112;

  Dataset a = gen_dataset(spec);
  Dataset b = gen_dataset(spec);
  for (size_t i = 0; i < a.train.size(); ++i) {
    CHECK(vals(a.train[i].positions) == vals(b.train[i].positions));
    CHECK(a.train[i].labels == b.train[i].labels);
  }
  for (size_t i = 0; i < a.test.size(); ++i) {
    CHECK(vals(a.test[i].positions) == vals(b.test[i].positions));
  }

  spec.seed = 113;
  Dataset c = gen_dataset(spec);
  CHECK(vals(a.train[0].positions) != vals(c.train[0].positions));
}

TEST_CASE("segmentation clouds mix several shapes with per-point labels") {
  SyntheticDatasetSpec spec;
  spec.kind = DatasetKind::kSceneSeg;
  spec.points_per_cloud = 200;
  spec.train_count = 8;
  spec.test_count = 2;
  spec.seed = 114;
  Dataset data = gen_dataset(spec);

  bool any_mixed = false;
  for (const PointCloud& cloud : data.train) {
    REQUIRE(cloud.size() == 200);
    REQUIRE(cloud.labels.size() == 200);
    std::set<int64_t> classes;
    for (int64_t lab : cloud.labels) {
      CHECK(lab >= 0);
      CHECK(lab < 4);
      classes.insert(lab);
    }
    any_mixed = any_mixed || classes.size() > 1;
  }
  CHECK(any_mixed);
}

TEST_CASE("sphere clouds carry exact unit normals equal to positions") {
  SyntheticDatasetSpec spec;
  spec.kind = DatasetKind::kSphereNormals;
  spec.points_per_cloud = 128;
  spec.train_count = 3;
  spec.test_count = 2;
  spec.seed = 115;
  Dataset data = gen_dataset(spec);

  CHECK(spec.num_classes() == 0);
  for (const PointCloud& cloud : data.train) {
    REQUIRE(cloud.normals.numel() == cloud.positions.numel());
    CHECK(vals(cloud.normals) == vals(cloud.positions));
    CHECK(cloud.labels.empty());
  }
}

TEST_CASE("spec validation names the offending field") {
  SyntheticDatasetSpec spec;
  spec.points_per_cloud = 0;
  CHECK_THROWS_WITH_AS(spec.validate(), doctest::Contains("points_per_cloud"),
                       ValidationError);
  spec.points_per_cloud = 8;
  spec.train_count = 0;
  CHECK_THROWS_WITH_AS(spec.validate(), doctest::Contains("counts"),
                       ValidationError);
  spec.train_count = 1;
  spec.noise = -0.5;
  CHECK_THROWS_WITH_AS(spec.validate(), doctest::Contains("noise"),
                       ValidationError);
  CHECK_THROWS_AS(dataset_kind_from_name("mesh"), ValidationError);
  PointCloud empty;
  CHECK_THROWS_AS(cloud_label(empty), ValidationError);
}

TEST_CASE("confusion matrix reproduces a worked three-class example") {
  // 8 points over 3 classes; class 2 never occurs as truth but collects two
  // false positives. Per-class TP/FP/FN: class 0 (3,1,1), class 1 (2,0,2).
  ConfusionMatrix m(3);
  std::vector<int64_t> truth = {0, 0, 0, 0, 1, 1, 1, 1};
  std::vector<int64_t> pred = {0, 0, 0, 2, 0, 1, 1, 2};
  m.add_all(truth, pred);

  CHECK(m.count(0, 0) == 3);
  CHECK(m.count(0, 2) == 1);
  CHECK(m.count(1, 0) == 1);
  CHECK(m.count(1, 1) == 2);
  CHECK(m.count(1, 2) == 1);
  CHECK(m.count(2, 2) == 0);
  CHECK(m.total() == 8);

  CHECK(m.overall_accuracy() == doctest::Approx(5.0 / 8.0).epsilon(1e-12));
  // IoU: 3/(3+1+1) = 0.6 and 2/(2+0+2) = 0.5; class 2 is excluded even
  // though its column is nonzero.
  CHECK(m.mean_iou() == doctest::Approx(0.55).epsilon(1e-12));
  CHECK(m.mean_class_accuracy() == doctest::Approx(0.625).epsilon(1e-12));
}

TEST_CASE("empty classes are excluded from the means but not the totals") {
  ConfusionMatrix m(4);
  // only classes 0 and 1 appear as truth; 3 collects a false positive
  m.add(0, 0);
  m.add(0, 3);
  m.add(1, 1);
  CHECK(m.overall_accuracy() == doctest::Approx(2.0 / 3.0));
  // class 0: 1/2 accuracy, iou 1/2; class 1 perfect; classes 2, 3 skipped
  CHECK(m.mean_class_accuracy() == doctest::Approx(0.75));
  CHECK(m.mean_iou() == doctest::Approx(0.75));

  ConfusionMatrix blank(2);
  CHECK(blank.overall_accuracy() == 0.0);
  CHECK(blank.mean_iou() == 0.0);

  CHECK_THROWS_AS(m.add(4, 0), ParamError);
  CHECK_THROWS_AS(m.add(0, -1), ParamError);
  CHECK_THROWS_AS(ConfusionMatrix(0), ParamError);
  std::vector<int64_t> three = {0, 1, 2};
  std::vector<int64_t> two = {0, 1};
  CHECK_THROWS_AS(m.add_all(three, two), ShapeError);
}

TEST_CASE("angular error is sign-insensitive and exact on axis pairs") {
  std::vector<double> x = {1.0, 0.0, 0.0};
  std::vector<double> neg_x = {-1.0, 0.0, 0.0};
  std::vector<double> y = {0.0, 1.0, 0.0};
  std::vector<double> xy = {1.0, 1.0, 0.0};

  CHECK(mean_angular_error_deg(x, x) == doctest::Approx(0.0).epsilon(1e-12));
  CHECK(mean_angular_error_deg(x, neg_x) == doctest::Approx(0.0).epsilon(1e-12));
  CHECK(mean_angular_error_deg(x, y) == doctest::Approx(90.0).epsilon(1e-12));
  CHECK(mean_angular_error_deg(xy, x) == doctest::Approx(45.0).epsilon(1e-9));

  // scale of either side does not matter
  std::vector<double> long_x = {7.5, 0.0, 0.0};
  CHECK(mean_angular_error_deg(long_x, x) == doctest::Approx(0.0));

  // two rows average: 0 and 90 degrees
  std::vector<double> both_pred = {1.0, 0.0, 0.0, 0.0, 1.0, 0.0};
  std::vector<double> both_truth = {1.0, 0.0, 0.0, 1.0, 0.0, 0.0};
  CHECK(mean_angular_error_deg(both_pred, both_truth) ==
        doctest::Approx(45.0).epsilon(1e-12));

  // degenerate prediction scores as orthogonal
  std::vector<double> zero = {0.0, 0.0, 0.0};
  CHECK(mean_angular_error_deg(zero, x) == doctest::Approx(90.0));

  std::vector<double> short_row = {1.0, 0.0};
  CHECK_THROWS_AS(mean_angular_error_deg(short_row, short_row), ShapeError);
  std::vector<double> empty;
  CHECK_THROWS_AS(mean_angular_error_deg(empty, empty), ParamError);
  CHECK_THROWS_AS(mean_angular_error_deg(x, both_truth), ShapeError);
}
