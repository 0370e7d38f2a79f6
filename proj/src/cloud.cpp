#include "fpenc/cloud.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <limits>
#include <map>
#include <numeric>
#include <sstream>

namespace fpenc {

namespace {

// order-independent column mean: summing sorted values makes the result
// identical for any row permutation of the input
std::array<double, 3> stable_centroid(const Tensor& positions) {
  const int64_t n = positions.dim(0);
  std::array<double, 3> c{0, 0, 0};
  std::vector<double> column(static_cast<size_t>(n));
  auto pv = positions.values();
  for (int axis = 0; axis < 3; ++axis) {
    for (int64_t i = 0; i < n; ++i) column[i] = pv[i * 3 + axis];
    std::sort(column.begin(), column.end());
    double s = 0.0;
    for (double v : column) s += v;
    c[axis] = s / static_cast<double>(n);
  }
  return c;
}

void check_positions(const Tensor& positions, const char* op) {
  if (!positions.defined() || positions.ndim() != 2 || positions.dim(1) != 3) {
    throw ShapeError(std::string(op) + ": positions must be [N,3]");
  }
  if (positions.dim(0) < 1) {
    throw ShapeError(std::string(op) + ": empty cloud");
  }
}

}  // namespace

void PointCloud::validate() const {
  check_positions(positions, "cloud");
  const int64_t n = positions.dim(0);
  ensure_finite(positions.values(), "cloud positions");
  if (features.defined()) {
    if (features.ndim() != 2 || features.dim(0) != n) {
      throw ShapeError("cloud: features " + shape_str(features.shape()) +
                       " do not match " + std::to_string(n) + " points");
    }
    ensure_finite(features.values(), "cloud features");
  }
  if (!labels.empty()) {
    if (static_cast<int64_t>(labels.size()) != n) {
      throw ShapeError("cloud: " + std::to_string(labels.size()) +
                       " labels for " + std::to_string(n) + " points");
    }
    for (int64_t l : labels) {
      if (l < 0) throw ShapeError("cloud: negative label");
    }
  }
  if (normals.defined()) {
    if (normals.ndim() != 2 || normals.dim(0) != n || normals.dim(1) != 3) {
      throw ShapeError("cloud: normals " + shape_str(normals.shape()) +
                       " do not match " + std::to_string(n) + " points");
    }
    ensure_finite(normals.values(), "cloud normals");
    auto nv = normals.values();
    for (int64_t i = 0; i < n; ++i) {
      double s = nv[i * 3] * nv[i * 3] + nv[i * 3 + 1] * nv[i * 3 + 1] +
                 nv[i * 3 + 2] * nv[i * 3 + 2];
      if (std::abs(std::sqrt(s) - 1.0) > 1e-6) {
        throw ShapeError("cloud: normal " + std::to_string(i) +
                         " is not unit length");
      }
    }
  }
}

NeighborIndex knn(const Tensor& points, const Tensor& queries, int64_t k,
                  bool include_self, std::span<const int64_t> query_indices) {
  check_positions(points, "knn");
  check_positions(queries, "knn queries");
  const int64_t n = points.dim(0);
  const int64_t m = queries.dim(0);
  if (k < 1) throw ParamError("knn: k must be >= 1");
  if (k > n) {
    throw ParamError("knn: k=" + std::to_string(k) + " exceeds " +
                     std::to_string(n) + " points");
  }
  if (include_self && static_cast<int64_t>(query_indices.size()) != m) {
    throw ParamError("knn: include_self needs one query index per query");
  }
  auto pv = points.values();
  auto qv = queries.values();
  IndexArray out{{m, k}, std::vector<int64_t>(static_cast<size_t>(m * k))};
  std::vector<std::pair<double, int64_t>> cand;
  cand.reserve(static_cast<size_t>(n));
  for (int64_t qi = 0; qi < m; ++qi) {
    const double qx = qv[qi * 3], qy = qv[qi * 3 + 1], qz = qv[qi * 3 + 2];
    const int64_t self = include_self ? query_indices[qi] : -1;
    if (include_self && (self < 0 || self >= n)) {
      throw ParamError("knn: query index " + std::to_string(self) +
                       " out of range");
    }
    cand.clear();
    for (int64_t i = 0; i < n; ++i) {
      if (i == self) continue;
      const double dx = pv[i * 3] - qx;
      const double dy = pv[i * 3 + 1] - qy;
      const double dz = pv[i * 3 + 2] - qz;
      cand.emplace_back(dx * dx + dy * dy + dz * dz, i);
    }
    const int64_t want = include_self ? k - 1 : k;
    std::partial_sort(cand.begin(), cand.begin() + want, cand.end());
    int64_t* row = out.values.data() + qi * k;
    if (include_self) {
      row[0] = self;
      for (int64_t j = 0; j < k - 1; ++j) row[j + 1] = cand[j].second;
    } else {
      for (int64_t j = 0; j < k; ++j) row[j] = cand[j].second;
    }
  }
  return NeighborIndex{std::move(out)};
}

std::vector<int64_t> iota_indices(int64_t n) {
  std::vector<int64_t> ids(static_cast<size_t>(n));
  std::iota(ids.begin(), ids.end(), 0);
  return ids;
}

std::vector<int64_t> farthest_point_sample(const Tensor& positions, int64_t m,
                                           int64_t seed_index) {
  check_positions(positions, "fps");
  const int64_t n = positions.dim(0);
  if (m < 1 || m > n) {
    throw ParamError("fps: m=" + std::to_string(m) + " out of range for " +
                     std::to_string(n) + " points");
  }
  if (seed_index < 0 || seed_index >= n) {
    throw ParamError("fps: seed index " + std::to_string(seed_index) +
                     " out of range");
  }
  auto pv = positions.values();
  std::vector<int64_t> picks;
  picks.reserve(static_cast<size_t>(m));
  picks.push_back(seed_index);
  std::vector<double> dist(static_cast<size_t>(n),
                           std::numeric_limits<double>::infinity());
  int64_t last = seed_index;
  for (int64_t round = 1; round < m; ++round) {
    const double lx = pv[last * 3], ly = pv[last * 3 + 1], lz = pv[last * 3 + 2];
    int64_t best = -1;
    double best_d = -1.0;
    for (int64_t i = 0; i < n; ++i) {
      const double dx = pv[i * 3] - lx;
      const double dy = pv[i * 3 + 1] - ly;
      const double dz = pv[i * 3 + 2] - lz;
      const double d = dx * dx + dy * dy + dz * dz;
      if (d < dist[i]) dist[i] = d;
      if (dist[i] > best_d) {  // strict > keeps the lowest index on ties
        best_d = dist[i];
        best = i;
      }
    }
    picks.push_back(best);
    last = best;
  }
  return picks;
}

int64_t centroid_farthest_index(const Tensor& positions) {
  check_positions(positions, "centroid_farthest_index");
  const auto c = stable_centroid(positions);
  auto pv = positions.values();
  const int64_t n = positions.dim(0);
  int64_t best = 0;
  double best_d = -1.0;
  for (int64_t i = 0; i < n; ++i) {
    const double dx = pv[i * 3] - c[0];
    const double dy = pv[i * 3 + 1] - c[1];
    const double dz = pv[i * 3 + 2] - c[2];
    const double d = dx * dx + dy * dy + dz * dz;
    if (d > best_d) {
      best_d = d;
      best = i;
    }
  }
  return best;
}

PointCloud voxel_downsample(const PointCloud& cloud, double voxel_size) {
  cloud.validate();
  if (!(voxel_size > 0.0)) throw ParamError("voxel_downsample: size must be > 0");
  const int64_t n = cloud.size();
  const int64_t c = cloud.feature_count();
  auto pv = cloud.positions.values();

  struct Bucket {
    int64_t count = 0;
    std::array<double, 3> pos{0, 0, 0};
    std::vector<double> feat;
    std::map<int64_t, int64_t> label_votes;
  };
  std::map<std::array<int64_t, 3>, Bucket> cells;
  for (int64_t i = 0; i < n; ++i) {
    std::array<int64_t, 3> key;
    for (int a = 0; a < 3; ++a) {
      key[a] = static_cast<int64_t>(std::floor(pv[i * 3 + a] / voxel_size));
    }
    Bucket& b = cells[key];
    if (b.count == 0 && c > 0) b.feat.assign(static_cast<size_t>(c), 0.0);
    b.count++;
    for (int a = 0; a < 3; ++a) b.pos[a] += pv[i * 3 + a];
    if (c > 0) {
      auto fv = cloud.features.values();
      for (int64_t j = 0; j < c; ++j) b.feat[j] += fv[i * c + j];
    }
    if (cloud.has_labels()) b.label_votes[cloud.labels[i]]++;
  }

  const int64_t m = static_cast<int64_t>(cells.size());
  std::vector<double> pos(static_cast<size_t>(m * 3));
  std::vector<double> feat(static_cast<size_t>(m * c));
  std::vector<int64_t> labels;
  if (cloud.has_labels()) labels.reserve(static_cast<size_t>(m));
  int64_t row = 0;
  for (const auto& [key, b] : cells) {
    for (int a = 0; a < 3; ++a) {
      pos[row * 3 + a] = b.pos[a] / static_cast<double>(b.count);
    }
    for (int64_t j = 0; j < c; ++j) {
      feat[row * c + j] = b.feat[j] / static_cast<double>(b.count);
    }
    if (cloud.has_labels()) {
      int64_t best_label = -1, best_votes = 0;
      for (const auto& [label, votes] : b.label_votes) {
        if (votes > best_votes) {  // map order makes ties pick the lowest
          best_votes = votes;
          best_label = label;
        }
      }
      labels.push_back(best_label);
    }
    ++row;
  }
  PointCloud out;
  out.positions = Tensor({m, 3}, std::move(pos));
  if (c > 0) out.features = Tensor({m, c}, std::move(feat));
  out.labels = std::move(labels);
  return out;
}

PointCloud normalize_unit_sphere(const PointCloud& cloud) {
  cloud.validate();
  const int64_t n = cloud.size();
  auto pv = cloud.positions.values();
  std::array<double, 3> c{0, 0, 0};
  for (int64_t i = 0; i < n; ++i) {
    for (int a = 0; a < 3; ++a) c[a] += pv[i * 3 + a];
  }
  for (int a = 0; a < 3; ++a) c[a] /= static_cast<double>(n);
  std::vector<double> centered(static_cast<size_t>(n * 3));
  double max_norm = 0.0;
  for (int64_t i = 0; i < n; ++i) {
    double s = 0.0;
    for (int a = 0; a < 3; ++a) {
      centered[i * 3 + a] = pv[i * 3 + a] - c[a];
      s += centered[i * 3 + a] * centered[i * 3 + a];
    }
    max_norm = std::max(max_norm, std::sqrt(s));
  }
  if (max_norm > 0.0) {
    for (auto& v : centered) v /= max_norm;
  }
  PointCloud out = cloud;
  out.positions = Tensor({n, 3}, std::move(centered));
  return out;
}

PointCloud augment(const PointCloud& cloud, const AugmentSpec& spec, Rng& rng) {
  cloud.validate();
  if (!(spec.scale > 0.0)) throw ParamError("augment: scale must be > 0");
  if (spec.jitter_sigma < 0.0 || spec.jitter_clip < 0.0) {
    throw ParamError("augment: jitter values must be >= 0");
  }
  const int64_t n = cloud.size();
  PointCloud out = cloud;
  if (spec.permute) {
    std::vector<int64_t> perm(static_cast<size_t>(n));
    std::iota(perm.begin(), perm.end(), 0);
    rng.shuffle(perm);
    IndexArray idx{{n}, perm};
    out.positions = gather(out.positions, idx);
    if (out.has_features()) out.features = gather(out.features, idx);
    if (out.has_normals()) out.normals = gather(out.normals, idx);
    if (out.has_labels()) {
      std::vector<int64_t> relabeled(static_cast<size_t>(n));
      for (int64_t i = 0; i < n; ++i) relabeled[i] = cloud.labels[perm[i]];
      out.labels = std::move(relabeled);
    }
  }
  std::vector<double> pos(out.positions.values().begin(),
                          out.positions.values().end());
  for (int64_t i = 0; i < n; ++i) {
    for (int a = 0; a < 3; ++a) {
      pos[i * 3 + a] = pos[i * 3 + a] * spec.scale + spec.translate[a];
    }
  }
  if (spec.jitter_sigma > 0.0) {
    for (auto& v : pos) {
      double d = spec.jitter_sigma * rng.normal();
      d = std::clamp(d, -spec.jitter_clip, spec.jitter_clip);
      v += d;
    }
  }
  out.positions = Tensor({n, 3}, std::move(pos));
  return out;
}

namespace {

double parse_double(const std::string& tok, int64_t line_no) {
  double v = 0.0;
  auto [ptr, ec] = std::from_chars(tok.data(), tok.data() + tok.size(), v);
  if (ec != std::errc() || ptr != tok.data() + tok.size()) {
    throw ParseError("line " + std::to_string(line_no) + ": bad number '" +
                     tok + "'");
  }
  if (!std::isfinite(v)) {
    throw ParseError("line " + std::to_string(line_no) + ": non-finite value");
  }
  return v;
}

int64_t parse_int(const std::string& tok, int64_t line_no) {
  int64_t v = 0;
  auto [ptr, ec] = std::from_chars(tok.data(), tok.data() + tok.size(), v);
  if (ec != std::errc() || ptr != tok.data() + tok.size()) {
    throw ParseError("line " + std::to_string(line_no) + ": bad integer '" +
                     tok + "'");
  }
  return v;
}

std::vector<std::string> split_ws(const std::string& line) {
  std::vector<std::string> out;
  std::istringstream ss(line);
  std::string tok;
  while (ss >> tok) out.push_back(tok);
  return out;
}

std::string format_double(double v) {
  char buf[32];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, ptr);
}

PointCloud read_cloud_ply(std::ifstream& in) {
  std::string line;
  int64_t line_no = 0;
  auto next_line = [&]() {
    if (!std::getline(in, line)) throw ParseError("ply: truncated header");
    ++line_no;
    return line;
  };
  if (next_line() != "ply") throw ParseError("ply: missing magic line");
  int64_t vertex_count = -1;
  std::vector<std::string> props;
  bool in_vertex = false;
  bool saw_format = false;
  while (true) {
    next_line();
    auto toks = split_ws(line);
    if (toks.empty()) continue;
    if (toks[0] == "comment") continue;
    if (toks[0] == "format") {
      if (toks.size() != 3 || toks[1] != "ascii" || toks[2] != "1.0") {
        throw ParseError("ply: only 'format ascii 1.0' is supported");
      }
      saw_format = true;
    } else if (toks[0] == "element") {
      if (toks.size() != 3) throw ParseError("ply: bad element line");
      if (toks[1] != "vertex") {
        throw ParseError("ply: unsupported element '" + toks[1] + "'");
      }
      vertex_count = parse_int(toks[2], line_no);
      in_vertex = true;
    } else if (toks[0] == "property") {
      if (!in_vertex) throw ParseError("ply: property outside vertex element");
      if (toks.size() != 3) throw ParseError("ply: bad property line");
      const std::string& type = toks[1];
      const std::string& name = toks[2];
      if (name == "x" || name == "y" || name == "z") {
        if (type != "float" && type != "double" && type != "float32" &&
            type != "float64") {
          throw ParseError("ply: coordinate property must be float");
        }
      } else if (name == "label") {
        if (type != "uchar" && type != "uint8" && type != "int" &&
            type != "int32") {
          throw ParseError("ply: label property must be uchar or int");
        }
      } else {
        throw ParseError("ply: unsupported property '" + name + "'");
      }
      props.push_back(name);
    } else if (toks[0] == "end_header") {
      break;
    } else {
      throw ParseError("ply: unexpected header line '" + line + "'");
    }
  }
  if (!saw_format) throw ParseError("ply: missing format line");
  if (vertex_count < 1) throw ParseError("ply: no vertices");
  const bool has_label =
      std::find(props.begin(), props.end(), "label") != props.end();
  for (const char* want : {"x", "y", "z"}) {
    if (std::find(props.begin(), props.end(), want) == props.end()) {
      throw ParseError(std::string("ply: missing property '") + want + "'");
    }
  }
  std::vector<double> pos(static_cast<size_t>(vertex_count * 3));
  std::vector<int64_t> labels;
  if (has_label) labels.resize(static_cast<size_t>(vertex_count));
  for (int64_t i = 0; i < vertex_count; ++i) {
    if (!std::getline(in, line)) throw ParseError("ply: truncated data");
    ++line_no;
    auto toks = split_ws(line);
    if (toks.size() != props.size()) {
      throw ParseError("line " + std::to_string(line_no) + ": expected " +
                       std::to_string(props.size()) + " columns, got " +
                       std::to_string(toks.size()));
    }
    for (size_t col = 0; col < props.size(); ++col) {
      const std::string& name = props[col];
      if (name == "x") pos[i * 3] = parse_double(toks[col], line_no);
      else if (name == "y") pos[i * 3 + 1] = parse_double(toks[col], line_no);
      else if (name == "z") pos[i * 3 + 2] = parse_double(toks[col], line_no);
      else labels[i] = parse_int(toks[col], line_no);
    }
  }
  PointCloud out;
  out.positions = Tensor({vertex_count, 3}, std::move(pos));
  out.labels = std::move(labels);
  out.validate();
  return out;
}

}  // namespace

PointCloud read_cloud(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ParseError("cannot open '" + path + "'");
  if (path.size() >= 4 && path.substr(path.size() - 4) == ".ply") {
    return read_cloud_ply(in);
  }
  std::string line;
  int64_t line_no = 0;
  int64_t cols = 0;
  bool has_labels = false, has_normals = false;
  std::vector<double> pos, feat, norm;
  std::vector<int64_t> labels;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    if (line[0] == '#') {
      auto toks = split_ws(line.substr(1));
      if (toks.empty()) continue;
      if (toks[0] == "cols") {
        if (toks.size() != 2) {
          throw ParseError("line " + std::to_string(line_no) + ": bad #cols");
        }
        cols = parse_int(toks[1], line_no);
        if (cols < 1) {
          throw ParseError("line " + std::to_string(line_no) +
                           ": #cols must be >= 1");
        }
      } else if (toks[0] == "labels") {
        has_labels = true;
      } else if (toks[0] == "normals") {
        has_normals = true;
      }
      continue;
    }
    auto toks = split_ws(line);
    const size_t want = 3 + static_cast<size_t>(cols) + (has_normals ? 3 : 0) +
                        (has_labels ? 1 : 0);
    if (toks.size() != want) {
      throw ParseError("line " + std::to_string(line_no) + ": expected " +
                       std::to_string(want) + " columns, got " +
                       std::to_string(toks.size()));
    }
    size_t col = 0;
    for (int a = 0; a < 3; ++a) pos.push_back(parse_double(toks[col++], line_no));
    for (int64_t j = 0; j < cols; ++j) {
      feat.push_back(parse_double(toks[col++], line_no));
    }
    if (has_normals) {
      for (int a = 0; a < 3; ++a) {
        norm.push_back(parse_double(toks[col++], line_no));
      }
    }
    if (has_labels) labels.push_back(parse_int(toks[col++], line_no));
  }
  const int64_t n = static_cast<int64_t>(pos.size() / 3);
  if (n < 1) throw ParseError("'" + path + "': no points");
  PointCloud out;
  out.positions = Tensor({n, 3}, std::move(pos));
  if (cols > 0) out.features = Tensor({n, cols}, std::move(feat));
  if (has_normals) out.normals = Tensor({n, 3}, std::move(norm));
  out.labels = std::move(labels);
  out.validate();
  return out;
}

void write_cloud(const PointCloud& cloud, const std::string& path) {
  cloud.validate();
  std::ofstream out(path);
  if (!out) throw ParseError("cannot write '" + path + "'");
  const int64_t n = cloud.size();
  const int64_t c = cloud.feature_count();
  if (c > 0) out << "#cols " << c << "\n";
  if (cloud.has_normals()) out << "#normals\n";
  if (cloud.has_labels()) out << "#labels\n";
  auto pv = cloud.positions.values();
  for (int64_t i = 0; i < n; ++i) {
    out << format_double(pv[i * 3]) << ' ' << format_double(pv[i * 3 + 1])
        << ' ' << format_double(pv[i * 3 + 2]);
    if (c > 0) {
      auto fv = cloud.features.values();
      for (int64_t j = 0; j < c; ++j) out << ' ' << format_double(fv[i * c + j]);
    }
    if (cloud.has_normals()) {
      auto nv = cloud.normals.values();
      for (int a = 0; a < 3; ++a) out << ' ' << format_double(nv[i * 3 + a]);
    }
    if (cloud.has_labels()) out << ' ' << cloud.labels[i];
    out << "\n";
  }
  if (!out.good()) throw ParseError("write failed for '" + path + "'");
}

}  // namespace fpenc
