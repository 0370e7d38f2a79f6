#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <vector>

#include "fpenc/cloud.hpp"
#include "fpenc/encoding.hpp"
#include "fpenc/tensor.hpp"
#include "fpenc/verify.hpp"

namespace py = pybind11;
using namespace fpenc;

namespace {

// Positions cross the boundary as flat row-major xyz lists.
Tensor positions_tensor(const std::vector<double>& flat) {
  if (flat.empty() || flat.size() % 3 != 0) {
    throw ShapeError("positions: need a flat xyz list, got length " +
                     std::to_string(flat.size()));
  }
  return Tensor({static_cast<int64_t>(flat.size() / 3), 3}, flat);
}

std::vector<double> tensor_values(const Tensor& t) {
  auto v = t.values();
  return {v.begin(), v.end()};
}

py::dict lemma_report_dict(const LemmaReport& r) {
  py::dict d;
  d["trials"] = r.trials;
  d["passed"] = r.passed;
  d["worst_err"] = r.worst_err;
  d["tol"] = r.tol;
  d["seconds"] = r.seconds;
  d["all_passed"] = r.all_passed();
  return d;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "point encoding kernels";

  py::register_exception<ShapeError>(m, "ShapeError", PyExc_ValueError);
  py::register_exception<ParamError>(m, "ParamError", PyExc_ValueError);
  py::register_exception<NumericError>(m, "NumericError", PyExc_ArithmeticError);

  m.def(
      "relation",
      [](const std::vector<double>& p, const std::vector<double>& q,
         double sigma) {
        return relation(std::span<const double>(p),
                        std::span<const double>(q), sigma);
      },
      py::arg("p"), py::arg("q"), py::arg("sigma"),
      "max(0, 1 - |p-q| / sigma) for two xyz points");

  m.def(
      "global_correlation",
      [](const std::vector<double>& positions, double sigma, bool include_self,
         int64_t max_points) {
        Tensor pos = positions_tensor(positions);
        return tensor_values(
            global_correlation(pos, sigma, include_self, max_points).values);
      },
      py::arg("positions"), py::arg("sigma"), py::arg("include_self") = true,
      py::arg("max_points") = 0,
      "per-point relation sum against the whole cloud, one value per point");

  m.def(
      "local_correlation",
      [](const std::vector<double>& positions, int64_t k, double sigma) {
        Tensor pos = positions_tensor(positions);
        std::vector<int64_t> self = iota_indices(pos.dim(0));
        NeighborIndex nbr = knn(pos, pos, k, true, self);
        GlobalCorrelation s1 = global_correlation(pos, sigma);
        LocalCorrelation s2 = local_correlation(pos, nbr, s1);
        py::dict d;
        d["values"] = tensor_values(s2.values);
        d["shape"] = s2.values.shape();
        return d;
      },
      py::arg("positions"), py::arg("k"), py::arg("sigma"),
      "8-channel neighbor-pair encoding over self-inclusive kNN, [N, K, 8]");

  m.def(
      "knn",
      [](const std::vector<double>& positions, int64_t k, bool include_self) {
        Tensor pos = positions_tensor(positions);
        const int64_t n = pos.dim(0);
        NeighborIndex nbr;
        if (include_self) {
          std::vector<int64_t> self = iota_indices(n);
          nbr = knn(pos, pos, k, true, self);
        } else {
          nbr = knn(pos, pos, k);
        }
        std::vector<std::vector<int64_t>> rows(static_cast<size_t>(n));
        for (int64_t i = 0; i < n; ++i) {
          auto first = nbr.indices.values.begin() + i * k;
          rows[static_cast<size_t>(i)].assign(first, first + k);
        }
        return rows;
      },
      py::arg("positions"), py::arg("k"), py::arg("include_self") = false,
      "k nearest neighbors of every point, one ascending-distance row each");

  m.def(
      "farthest_point_sample",
      [](const std::vector<double>& positions, int64_t m, int64_t seed_index) {
        return farthest_point_sample(positions_tensor(positions), m,
                                     seed_index);
      },
      py::arg("positions"), py::arg("m"), py::arg("seed_index") = 0,
      "greedy farthest point sampling, m indices in pick order");

  m.def(
      "voxel_downsample",
      [](const std::vector<double>& positions, double voxel_size) {
        PointCloud cloud;
        cloud.positions = positions_tensor(positions);
        return tensor_values(voxel_downsample(cloud, voxel_size).positions);
      },
      py::arg("positions"), py::arg("voxel_size"),
      "one averaged point per occupied grid cell, flat xyz list");

  m.def(
      "softmax",
      [](const std::vector<double>& values, int64_t cols) {
        if (cols < 1 || values.size() % static_cast<size_t>(cols) != 0) {
          throw ShapeError("softmax: length " + std::to_string(values.size()) +
                           " is not a multiple of cols " +
                           std::to_string(cols));
        }
        const int64_t rows = static_cast<int64_t>(values.size()) / cols;
        Tensor t({rows, cols}, values);
        return tensor_values(softmax(t, 1));
      },
      py::arg("values"), py::arg("cols"),
      "row-wise softmax of a flat row-major matrix");

  m.def(
      "sinusoidal_encode",
      [](const std::vector<double>& positions, int64_t out_channels) {
        return tensor_values(
            sinusoidal_encode(positions_tensor(positions), out_channels));
      },
      py::arg("positions"), py::arg("out_channels"),
      "per-axis sin/cos ladder, flat [N, out_channels]");

  m.def(
      "verify_fpconv",
      [](int64_t trials, uint64_t seed, double tol) {
        return lemma_report_dict(verify_fpconv(trials, seed, tol));
      },
      py::arg("trials") = 100, py::arg("seed") = 1, py::arg("tol") = 1e-10,
      "randomized equivalence trials of factorized vs dense convolution");

  m.def(
      "verify_fptransformer",
      [](int64_t trials, uint64_t seed, double tol) {
        return lemma_report_dict(verify_fptransformer(trials, seed, tol));
      },
      py::arg("trials") = 100, py::arg("seed") = 1, py::arg("tol") = 1e-10,
      "randomized equivalence trials of grouped vs expanded attention");

  m.def(
      "verify_gradients",
      [](uint64_t seed, double tol) {
        GradReport r = verify_gradients(seed, tol);
        py::list checks;
        for (const auto& c : r.checks) {
          py::dict e;
          e["name"] = c.name;
          e["max_err"] = c.max_err;
          e["passed"] = c.passed;
          checks.append(e);
        }
        py::dict d;
        d["tol"] = r.tol;
        d["seconds"] = r.seconds;
        d["all_passed"] = r.all_passed();
        d["checks"] = checks;
        return d;
      },
      py::arg("seed") = 1, py::arg("tol") = 1e-4,
      "finite-difference gradient checks for every layer kind");
}
