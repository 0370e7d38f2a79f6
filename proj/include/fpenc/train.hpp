#pragma once

#include <functional>

#include "fpenc/dataset.hpp"
#include "fpenc/metrics.hpp"
#include "fpenc/network.hpp"

namespace fpenc {

enum class LrSchedule { kCosine, kStep, kConstant };

const char* lr_schedule_name(LrSchedule s);
LrSchedule lr_schedule_from_name(const std::string& s);

struct TrainConfig {
  double lr = 0.01;
  double lr_min = 1e-4;
  double momentum = 0.9;
  double weight_decay = 0.0;
  LrSchedule schedule = LrSchedule::kCosine;
  int64_t step_every = 30;   // step schedule: epochs between decays
  double step_gamma = 0.1;   // step schedule: decay factor
  int64_t epochs = 60;
  int64_t batch_size = 8;
  uint64_t seed = 1;

  // position augmentation for classification and segmentation; the normals
  // task always trains on clean clouds since jitter invalidates its targets
  bool augment = true;
  double translate_range = 0.1;
  double scale_lo = 0.9;
  double scale_hi = 1.1;
  double jitter_sigma = 0.0;

  void validate() const;
};

void to_json(nlohmann::json& j, const TrainConfig& c);
void from_json(const nlohmann::json& j, TrainConfig& c);

// learning rate for one epoch under the configured schedule
double schedule_lr(const TrainConfig& config, int64_t epoch);

struct EpochStats {
  int64_t epoch = 0;
  double lr = 0.0;
  double loss = 0.0;
  double seconds = 0.0;
};

// Called after each epoch; returning false stops the run early.
using EpochCallback = std::function<bool(const EpochStats&)>;

// Minibatch SGD over the clouds; one backward pass per cloud, gradients
// averaged across the batch. Throws NumericError when the loss leaves the
// finite range, naming the epoch and step where it happened.
std::vector<EpochStats> train_network(Network& net,
                                      const std::vector<PointCloud>& clouds,
                                      const TrainConfig& config,
                                      const EpochCallback& on_epoch = {});

// test-time modification applied per cloud before the forward pass
struct Perturbation {
  enum class Kind { kNone, kPermute, kDensity };
  Kind kind = Kind::kNone;
  int64_t points = 0;  // kDensity: target cloud size
  uint64_t seed = 7;

  static Perturbation none() { return {}; }
  static Perturbation permute(uint64_t seed = 7);
  static Perturbation density(int64_t points, uint64_t seed = 7);
};

struct MetricsReport {
  double oa = 0.0;
  double macc = 0.0;
  double miou = 0.0;
  double angular_error_deg = 0.0;
  double loss = 0.0;
  int64_t clouds = 0;
};

void to_json(nlohmann::json& j, const MetricsReport& r);

MetricsReport evaluate_network(Network& net,
                               const std::vector<PointCloud>& clouds,
                               const Perturbation& perturbation = {});

// Random subset of `points` points (all of them when the cloud is smaller),
// carrying features, normals, and labels along.
PointCloud subsample_cloud(const PointCloud& cloud, int64_t points, Rng& rng);

}  // namespace fpenc
