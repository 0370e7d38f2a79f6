#pragma once

#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

namespace fpenc {

using Shape = std::vector<int64_t>;

// Error taxonomy: shape/contract mismatches, bad parameters, numeric
// failures (NaN/Inf), file parsing, and config validation.
struct ShapeError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct ParamError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct NumericError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct ParseError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct ValidationError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

int64_t shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);

// Tells glibc malloc to keep freed blocks in the heap instead of returning
// them to the kernel. Training churns through multi-megabyte tensors, and
// without this most of the wall time goes to mmap/munmap and page faults.
// Call once at program start; a no-op on other allocators.
void retain_freed_memory();

// Row-major integer grid, e.g. neighbor tables or sample index lists.
struct IndexArray {
  Shape shape;
  std::vector<int64_t> values;

  int64_t numel() const { return static_cast<int64_t>(values.size()); }
};

// |a - b| / max(1, |a|, |b|), the guarded relative error used by all
// oracle-equivalence and gradient checks.
inline double rel_err(double a, double b) {
  double scale = 1.0;
  if (std::abs(a) > scale) scale = std::abs(a);
  if (std::abs(b) > scale) scale = std::abs(b);
  return std::abs(a - b) / scale;
}

}  // namespace fpenc
