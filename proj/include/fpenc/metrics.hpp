#pragma once

#include <cstdint>
#include <span>
#include <vector>

namespace fpenc {

// Square count matrix indexed [truth * classes + pred]. Accumulates across
// clouds; the derived scores treat classes with no ground-truth points as
// absent so a label that never occurs cannot drag the mean down to zero.
class ConfusionMatrix {
 public:
  explicit ConfusionMatrix(int64_t classes);

  void add(int64_t truth, int64_t pred);
  void add_all(std::span<const int64_t> truth, std::span<const int64_t> pred);

  int64_t classes() const { return classes_; }
  int64_t count(int64_t truth, int64_t pred) const;
  int64_t total() const;

  // Correct predictions over all predictions.
  double overall_accuracy() const;

  // Per-class recall averaged over classes that have ground-truth points.
  double mean_class_accuracy() const;

  // Intersection-over-union averaged over classes that have ground-truth
  // points. A class with no truth rows is skipped even if it collects
  // false positives.
  double mean_iou() const;

 private:
  int64_t classes_ = 0;
  std::vector<int64_t> counts_;
};

// Mean angle in degrees between matching rows of two [N,3] direction sets.
// Sign-insensitive: a normal and its negation count as a perfect match.
double mean_angular_error_deg(std::span<const double> predicted,
                              std::span<const double> truth);

}  // namespace fpenc
