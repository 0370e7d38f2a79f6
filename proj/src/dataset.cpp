#include "fpenc/dataset.hpp"

#include <cmath>
#include <numbers>

namespace fpenc {

const char* dataset_kind_name(DatasetKind k) {
  switch (k) {
    case DatasetKind::kShapesCls: return "shapes-cls";
    case DatasetKind::kSceneSeg: return "scene-seg";
    case DatasetKind::kSphereNormals: return "sphere-normals";
  }
  return "?";
}

DatasetKind dataset_kind_from_name(const std::string& s) {
  if (s == "shapes-cls") return DatasetKind::kShapesCls;
  if (s == "scene-seg") return DatasetKind::kSceneSeg;
  if (s == "sphere-normals") return DatasetKind::kSphereNormals;
  throw ValidationError("dataset kind: unknown value '" + s + "'");
}

int64_t SyntheticDatasetSpec::num_classes() const {
  return kind == DatasetKind::kSphereNormals ? 0 : 4;
}

void to_json(nlohmann::json& j, const SyntheticDatasetSpec& spec) {
  j = nlohmann::json{{"kind", dataset_kind_name(spec.kind)},
                     {"points_per_cloud", spec.points_per_cloud},
                     {"train_count", spec.train_count},
                     {"test_count", spec.test_count},
                     {"noise", spec.noise},
                     {"seed", spec.seed}};
}

void from_json(const nlohmann::json& j, SyntheticDatasetSpec& spec) {
  spec.kind = dataset_kind_from_name(
      j.value("kind", std::string(dataset_kind_name(spec.kind))));
  spec.points_per_cloud = j.value("points_per_cloud", spec.points_per_cloud);
  spec.train_count = j.value("train_count", spec.train_count);
  spec.test_count = j.value("test_count", spec.test_count);
  spec.noise = j.value("noise", spec.noise);
  spec.seed = j.value("seed", spec.seed);
}

void SyntheticDatasetSpec::validate() const {
  if (points_per_cloud < 1) {
    throw ValidationError("points_per_cloud: must be >= 1");
  }
  if (train_count < 1 || test_count < 1) {
    throw ValidationError("train/test counts: must be >= 1");
  }
  if (noise < 0.0) {
    throw ValidationError("noise: must be >= 0");
  }
}

namespace {

constexpr double kTau = 2.0 * std::numbers::pi;

// one surface point of shape `kind` (0 sphere, 1 cube, 2 torus, 3 plane)
void shape_point(int64_t kind, Rng& rng, double* p) {
  switch (kind) {
    case 0: {
      double n;
      do {
        for (int a = 0; a < 3; ++a) p[a] = rng.normal();
        n = std::sqrt(p[0] * p[0] + p[1] * p[1] + p[2] * p[2]);
      } while (n < 1e-12);
      for (int a = 0; a < 3; ++a) p[a] /= n;
      break;
    }
    case 1: {
      const int64_t face = rng.below(6);
      const int64_t axis = face / 2;
      p[axis] = face % 2 == 0 ? -1.0 : 1.0;
      p[(axis + 1) % 3] = rng.uniform(-1.0, 1.0);
      p[(axis + 2) % 3] = rng.uniform(-1.0, 1.0);
      break;
    }
    case 2: {
      const double theta = rng.uniform(0.0, kTau);
      const double phi = rng.uniform(0.0, kTau);
      const double ring = 0.7 + 0.35 * std::cos(phi);
      p[0] = ring * std::cos(theta);
      p[1] = ring * std::sin(theta);
      p[2] = 0.35 * std::sin(phi);
      break;
    }
    default: {
      p[0] = rng.uniform(-1.0, 1.0);
      p[1] = rng.uniform(-1.0, 1.0);
      p[2] = 0.0;
      break;
    }
  }
}

void add_noise(std::vector<double>& pos, double noise, Rng& rng) {
  if (noise <= 0.0) return;
  for (double& v : pos) v += noise * rng.normal();
}

PointCloud make_shape_cloud(int64_t label, int64_t n, double noise, Rng& rng) {
  std::vector<double> pos(static_cast<size_t>(n * 3));
  for (int64_t i = 0; i < n; ++i) shape_point(label, rng, pos.data() + i * 3);
  add_noise(pos, noise, rng);
  PointCloud cloud;
  cloud.positions = Tensor({n, 3}, std::move(pos));
  cloud.labels.assign(static_cast<size_t>(n), label);
  return normalize_unit_sphere(cloud);
}

PointCloud make_scene_cloud(int64_t n, double noise, Rng& rng) {
  const int64_t shapes = 2 + rng.below(4);
  std::vector<double> pos(static_cast<size_t>(n * 3));
  std::vector<int64_t> labels(static_cast<size_t>(n));
  int64_t row = 0;
  for (int64_t s = 0; s < shapes; ++s) {
    const int64_t kind = rng.below(4);
    const double scale = rng.uniform(0.2, 0.4);
    double center[3];
    for (int a = 0; a < 3; ++a) center[a] = rng.uniform(-0.6, 0.6);
    const int64_t count = n / shapes + (s < n % shapes ? 1 : 0);
    for (int64_t i = 0; i < count; ++i, ++row) {
      double* p = pos.data() + row * 3;
      shape_point(kind, rng, p);
      for (int a = 0; a < 3; ++a) p[a] = center[a] + scale * p[a];
      labels[static_cast<size_t>(row)] = kind;
    }
  }
  add_noise(pos, noise, rng);
  PointCloud cloud;
  cloud.positions = Tensor({n, 3}, std::move(pos));
  cloud.labels = std::move(labels);
  return cloud;
}

PointCloud make_normals_cloud(int64_t n, Rng& rng) {
  std::vector<double> pos(static_cast<size_t>(n * 3));
  for (int64_t i = 0; i < n; ++i) shape_point(0, rng, pos.data() + i * 3);
  std::vector<double> nrm = pos;  // analytic: the normal is the position
  PointCloud cloud;
  cloud.positions = Tensor({n, 3}, std::move(pos));
  cloud.normals = Tensor({n, 3}, std::move(nrm));
  return cloud;
}

PointCloud make_cloud(const SyntheticDatasetSpec& spec, int64_t index,
                      Rng& rng) {
  switch (spec.kind) {
    case DatasetKind::kShapesCls:
      return make_shape_cloud(index % 4, spec.points_per_cloud, spec.noise, rng);
    case DatasetKind::kSceneSeg:
      return make_scene_cloud(spec.points_per_cloud, spec.noise, rng);
    case DatasetKind::kSphereNormals:
      return make_normals_cloud(spec.points_per_cloud, rng);
  }
  throw ValidationError("dataset kind: bad enum value");
}

}  // namespace

Dataset gen_dataset(const SyntheticDatasetSpec& spec) {
  spec.validate();
  Rng root(spec.seed);
  Dataset data;
  data.train.reserve(static_cast<size_t>(spec.train_count));
  data.test.reserve(static_cast<size_t>(spec.test_count));
  for (int64_t i = 0; i < spec.train_count; ++i) {
    Rng rng = root.fork(static_cast<uint64_t>(i));
    data.train.push_back(make_cloud(spec, i, rng));
    data.train.back().validate();
  }
  for (int64_t i = 0; i < spec.test_count; ++i) {
    Rng rng = root.fork(static_cast<uint64_t>(spec.train_count + i));
    data.test.push_back(make_cloud(spec, i, rng));
    data.test.back().validate();
  }
  return data;
}

int64_t cloud_label(const PointCloud& cloud) {
  if (cloud.labels.empty()) {
    throw ValidationError("cloud_label: cloud has no labels");
  }
  return cloud.labels[0];
}

}  // namespace fpenc
