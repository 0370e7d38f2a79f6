#include "fpenc/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "fpenc/common.hpp"

namespace fpenc {

ConfusionMatrix::ConfusionMatrix(int64_t classes) : classes_(classes) {
  if (classes < 1) {
    throw ParamError("confusion matrix needs at least one class, got " +
                     std::to_string(classes));
  }
  counts_.assign(static_cast<size_t>(classes * classes), 0);
}

void ConfusionMatrix::add(int64_t truth, int64_t pred) {
  if (truth < 0 || truth >= classes_ || pred < 0 || pred >= classes_) {
    throw ParamError("label pair (" + std::to_string(truth) + ", " +
                     std::to_string(pred) + ") outside " +
                     std::to_string(classes_) + " classes");
  }
  ++counts_[static_cast<size_t>(truth * classes_ + pred)];
}

void ConfusionMatrix::add_all(std::span<const int64_t> truth,
                              std::span<const int64_t> pred) {
  if (truth.size() != pred.size()) {
    throw ShapeError("truth has " + std::to_string(truth.size()) +
                     " labels but predictions have " +
                     std::to_string(pred.size()));
  }
  for (size_t i = 0; i < truth.size(); ++i) {
    add(truth[i], pred[i]);
  }
}

int64_t ConfusionMatrix::count(int64_t truth, int64_t pred) const {
  if (truth < 0 || truth >= classes_ || pred < 0 || pred >= classes_) {
    throw ParamError("label pair (" + std::to_string(truth) + ", " +
                     std::to_string(pred) + ") outside " +
                     std::to_string(classes_) + " classes");
  }
  return counts_[static_cast<size_t>(truth * classes_ + pred)];
}

int64_t ConfusionMatrix::total() const {
  int64_t sum = 0;
  for (int64_t v : counts_) sum += v;
  return sum;
}

double ConfusionMatrix::overall_accuracy() const {
  int64_t sum = total();
  if (sum == 0) return 0.0;
  int64_t diag = 0;
  for (int64_t c = 0; c < classes_; ++c) {
    diag += counts_[static_cast<size_t>(c * classes_ + c)];
  }
  return static_cast<double>(diag) / static_cast<double>(sum);
}

double ConfusionMatrix::mean_class_accuracy() const {
  double sum = 0.0;
  int64_t seen = 0;
  for (int64_t c = 0; c < classes_; ++c) {
    int64_t row = 0;
    for (int64_t p = 0; p < classes_; ++p) {
      row += counts_[static_cast<size_t>(c * classes_ + p)];
    }
    if (row == 0) continue;
    sum += static_cast<double>(counts_[static_cast<size_t>(c * classes_ + c)]) /
           static_cast<double>(row);
    ++seen;
  }
  return seen == 0 ? 0.0 : sum / static_cast<double>(seen);
}

double ConfusionMatrix::mean_iou() const {
  double sum = 0.0;
  int64_t seen = 0;
  for (int64_t c = 0; c < classes_; ++c) {
    int64_t row = 0;
    int64_t col = 0;
    for (int64_t k = 0; k < classes_; ++k) {
      row += counts_[static_cast<size_t>(c * classes_ + k)];
      col += counts_[static_cast<size_t>(k * classes_ + c)];
    }
    if (row == 0) continue;
    int64_t tp = counts_[static_cast<size_t>(c * classes_ + c)];
    int64_t uni = row + col - tp;
    sum += uni == 0 ? 0.0 : static_cast<double>(tp) / static_cast<double>(uni);
    ++seen;
  }
  return seen == 0 ? 0.0 : sum / static_cast<double>(seen);
}

double mean_angular_error_deg(std::span<const double> predicted,
                              std::span<const double> truth) {
  if (predicted.size() != truth.size() || predicted.size() % 3 != 0) {
    throw ShapeError("direction sets must share an [N,3] layout, got " +
                     std::to_string(predicted.size()) + " and " +
                     std::to_string(truth.size()) + " values");
  }
  size_t n = predicted.size() / 3;
  if (n == 0) {
    throw ParamError("angular error over an empty direction set");
  }
  double sum = 0.0;
  for (size_t i = 0; i < n; ++i) {
    double dot = 0.0;
    double np = 0.0;
    double nt = 0.0;
    for (size_t a = 0; a < 3; ++a) {
      double p = predicted[i * 3 + a];
      double t = truth[i * 3 + a];
      dot += p * t;
      np += p * p;
      nt += t * t;
    }
    double denom = std::sqrt(np) * std::sqrt(nt);
    // A zero-length row carries no direction; score it as the worst case.
    double cosine = denom == 0.0 ? 0.0 : std::abs(dot) / denom;
    sum += std::acos(std::clamp(cosine, 0.0, 1.0));
  }
  return sum / static_cast<double>(n) * 180.0 / std::numbers::pi;
}

}  // namespace fpenc
