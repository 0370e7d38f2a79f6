#include "fpenc/train.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <numbers>
#include <numeric>

#include "fpenc/common.hpp"

namespace fpenc {

const char* lr_schedule_name(LrSchedule s) {
  switch (s) {
    case LrSchedule::kCosine: return "cosine";
    case LrSchedule::kStep: return "step";
    case LrSchedule::kConstant: return "constant";
  }
  throw ValidationError("schedule: bad enum value");
}

LrSchedule lr_schedule_from_name(const std::string& s) {
  if (s == "cosine") return LrSchedule::kCosine;
  if (s == "step") return LrSchedule::kStep;
  if (s == "constant") return LrSchedule::kConstant;
  throw ValidationError("schedule: unknown value '" + s + "'");
}

void TrainConfig::validate() const {
  if (!(lr > 0.0)) throw ValidationError("lr: must be > 0");
  if (lr_min < 0.0 || lr_min > lr) {
    throw ValidationError("lr_min: must be in [0, lr]");
  }
  if (momentum < 0.0 || momentum >= 1.0) {
    throw ValidationError("momentum: must be in [0, 1)");
  }
  if (weight_decay < 0.0) throw ValidationError("weight_decay: must be >= 0");
  if (step_every < 1) throw ValidationError("step_every: must be >= 1");
  if (!(step_gamma > 0.0 && step_gamma <= 1.0)) {
    throw ValidationError("step_gamma: must be in (0, 1]");
  }
  if (epochs < 0) throw ValidationError("epochs: must be >= 0");
  if (batch_size < 1) throw ValidationError("batch_size: must be >= 1");
  if (translate_range < 0.0) {
    throw ValidationError("translate_range: must be >= 0");
  }
  if (!(scale_lo > 0.0) || scale_hi < scale_lo) {
    throw ValidationError("scale range: need 0 < scale_lo <= scale_hi");
  }
  if (jitter_sigma < 0.0) throw ValidationError("jitter_sigma: must be >= 0");
}

void to_json(nlohmann::json& j, const TrainConfig& c) {
  j = nlohmann::json{{"lr", c.lr},
                     {"lr_min", c.lr_min},
                     {"momentum", c.momentum},
                     {"weight_decay", c.weight_decay},
                     {"schedule", lr_schedule_name(c.schedule)},
                     {"step_every", c.step_every},
                     {"step_gamma", c.step_gamma},
                     {"epochs", c.epochs},
                     {"batch_size", c.batch_size},
                     {"seed", c.seed},
                     {"augment", c.augment},
                     {"translate_range", c.translate_range},
                     {"scale_lo", c.scale_lo},
                     {"scale_hi", c.scale_hi},
                     {"jitter_sigma", c.jitter_sigma}};
}

void from_json(const nlohmann::json& j, TrainConfig& c) {
  c.lr = j.value("lr", c.lr);
  c.lr_min = j.value("lr_min", c.lr_min);
  c.momentum = j.value("momentum", c.momentum);
  c.weight_decay = j.value("weight_decay", c.weight_decay);
  c.schedule = lr_schedule_from_name(
      j.value("schedule", std::string(lr_schedule_name(c.schedule))));
  c.step_every = j.value("step_every", c.step_every);
  c.step_gamma = j.value("step_gamma", c.step_gamma);
  c.epochs = j.value("epochs", c.epochs);
  c.batch_size = j.value("batch_size", c.batch_size);
  c.seed = j.value("seed", c.seed);
  c.augment = j.value("augment", c.augment);
  c.translate_range = j.value("translate_range", c.translate_range);
  c.scale_lo = j.value("scale_lo", c.scale_lo);
  c.scale_hi = j.value("scale_hi", c.scale_hi);
  c.jitter_sigma = j.value("jitter_sigma", c.jitter_sigma);
}

double schedule_lr(const TrainConfig& config, int64_t epoch) {
  switch (config.schedule) {
    case LrSchedule::kCosine: {
      if (config.epochs <= 1) return config.lr;
      double t = static_cast<double>(epoch) /
                 static_cast<double>(config.epochs - 1);
      return config.lr_min + 0.5 * (config.lr - config.lr_min) *
                                 (1.0 + std::cos(std::numbers::pi * t));
    }
    case LrSchedule::kStep: {
      double lr = config.lr;
      for (int64_t e = config.step_every; e <= epoch; e += config.step_every) {
        lr *= config.step_gamma;
      }
      return std::max(lr, config.lr_min);
    }
    case LrSchedule::kConstant:
      return config.lr;
  }
  throw ValidationError("schedule: bad enum value");
}

namespace {

Tensor task_loss(Task task, const Tensor& out, const PointCloud& cloud) {
  switch (task) {
    case Task::kClassification: {
      const int64_t label[1] = {cloud_label(cloud)};
      return cross_entropy(out, label);
    }
    case Task::kSegmentation:
      return cross_entropy(out, cloud.labels);
    case Task::kNormals: {
      Tensor cosine = reduce(mul(out, cloud.normals), 1, Reduce::kSum);
      return add(neg(reduce(abs(cosine), 0, Reduce::kMean)), 1.0);
    }
  }
  throw ValidationError("task: bad enum value");
}

AugmentSpec draw_augment(const TrainConfig& config, Rng& rng) {
  AugmentSpec spec;
  spec.permute = true;
  for (int a = 0; a < 3; ++a) {
    spec.translate[a] = rng.uniform(-config.translate_range,
                                    config.translate_range);
  }
  spec.scale = rng.uniform(config.scale_lo, config.scale_hi);
  spec.jitter_sigma = config.jitter_sigma;
  return spec;
}

int64_t argmax_row(std::span<const double> values, int64_t row, int64_t width) {
  int64_t best = 0;
  for (int64_t c = 1; c < width; ++c) {
    if (values[row * width + c] > values[row * width + best]) best = c;
  }
  return best;
}

}  // namespace

std::vector<EpochStats> train_network(Network& net,
                                      const std::vector<PointCloud>& clouds,
                                      const TrainConfig& config,
                                      const EpochCallback& on_epoch) {
  config.validate();
  if (clouds.empty()) throw ParamError("training set is empty");

  Sgd opt(net.named_parameters(), config.momentum, config.weight_decay);
  Rng root(config.seed);
  std::vector<size_t> order(clouds.size());
  std::iota(order.begin(), order.end(), size_t{0});

  const bool augmenting = config.augment && net.spec.task != Task::kNormals;
  std::vector<EpochStats> history;
  history.reserve(static_cast<size_t>(config.epochs));

  for (int64_t epoch = 0; epoch < config.epochs; ++epoch) {
    auto started = std::chrono::steady_clock::now();
    const double lr = schedule_lr(config, epoch);
    Rng epoch_rng = root.fork(static_cast<uint64_t>(epoch) + 1);
    epoch_rng.shuffle(order);

    double loss_sum = 0.0;
    for (size_t start = 0; start < order.size();
         start += static_cast<size_t>(config.batch_size)) {
      const size_t stop = std::min(
          order.size(), start + static_cast<size_t>(config.batch_size));
      for (size_t i = start; i < stop; ++i) {
        const PointCloud* cloud = &clouds[order[i]];
        PointCloud scratch;
        if (augmenting) {
          scratch = augment(*cloud, draw_augment(config, epoch_rng), epoch_rng);
          cloud = &scratch;
        }
        Tape tape;
        TapeScope scope(tape);
        Tensor loss = task_loss(net.spec.task, net.forward(*cloud), *cloud);
        const double value = loss.values()[0];
        if (!std::isfinite(value)) {
          throw NumericError("training diverged: non-finite loss at epoch " +
                             std::to_string(epoch) + ", cloud " +
                             std::to_string(order[i]));
        }
        tape.backward(loss);
        loss_sum += value;
      }
      opt.step(lr, 1.0 / static_cast<double>(stop - start));
      opt.zero_grad();
    }

    std::chrono::duration<double> took =
        std::chrono::steady_clock::now() - started;
    history.push_back({epoch, lr, loss_sum / static_cast<double>(order.size()),
                       took.count()});
    if (on_epoch && !on_epoch(history.back())) break;
  }
  return history;
}

Perturbation Perturbation::permute(uint64_t seed) {
  Perturbation p;
  p.kind = Kind::kPermute;
  p.seed = seed;
  return p;
}

Perturbation Perturbation::density(int64_t points, uint64_t seed) {
  if (points < 1) throw ParamError("density perturbation needs >= 1 point");
  Perturbation p;
  p.kind = Kind::kDensity;
  p.points = points;
  p.seed = seed;
  return p;
}

PointCloud subsample_cloud(const PointCloud& cloud, int64_t points, Rng& rng) {
  cloud.validate();
  if (points < 1) throw ParamError("subsample needs >= 1 point");
  const int64_t n = cloud.size();
  if (points >= n) return cloud;

  std::vector<int64_t> picks(static_cast<size_t>(n));
  std::iota(picks.begin(), picks.end(), 0);
  rng.shuffle(picks);
  picks.resize(static_cast<size_t>(points));

  PointCloud out;
  IndexArray idx{{points}, picks};
  out.positions = gather(cloud.positions, idx);
  if (cloud.has_features()) out.features = gather(cloud.features, idx);
  if (cloud.has_normals()) out.normals = gather(cloud.normals, idx);
  if (cloud.has_labels()) {
    out.labels.reserve(static_cast<size_t>(points));
    for (int64_t p : picks) out.labels.push_back(cloud.labels[p]);
  }
  return out;
}

void to_json(nlohmann::json& j, const MetricsReport& r) {
  j = nlohmann::json{{"oa", r.oa},
                     {"macc", r.macc},
                     {"miou", r.miou},
                     {"angular_error_deg", r.angular_error_deg},
                     {"loss", r.loss},
                     {"clouds", r.clouds}};
}

MetricsReport evaluate_network(Network& net,
                               const std::vector<PointCloud>& clouds,
                               const Perturbation& perturbation) {
  if (clouds.empty()) throw ParamError("evaluation set is empty");
  const Task task = net.spec.task;
  const int64_t nc = net.spec.num_classes;

  ConfusionMatrix confusion(task == Task::kNormals ? 1 : nc);
  Rng root(perturbation.seed);
  double loss_sum = 0.0;
  double angle_sum = 0.0;
  int64_t angle_rows = 0;

  for (size_t i = 0; i < clouds.size(); ++i) {
    PointCloud cloud = clouds[i];
    Rng cloud_rng = root.fork(i);
    if (perturbation.kind == Perturbation::Kind::kPermute) {
      AugmentSpec spec;
      spec.permute = true;
      cloud = augment(cloud, spec, cloud_rng);
    } else if (perturbation.kind == Perturbation::Kind::kDensity) {
      cloud = subsample_cloud(cloud, perturbation.points, cloud_rng);
    }

    Tensor out = net.forward(cloud);
    Tensor loss = task_loss(task, out, cloud);
    loss_sum += loss.values()[0];

    if (task == Task::kClassification) {
      confusion.add(cloud_label(cloud), argmax_row(out.values(), 0, nc));
    } else if (task == Task::kSegmentation) {
      for (int64_t row = 0; row < cloud.size(); ++row) {
        confusion.add(cloud.labels[static_cast<size_t>(row)],
                      argmax_row(out.values(), row, nc));
      }
    } else {
      angle_sum += mean_angular_error_deg(out.values(),
                                          cloud.normals.values()) *
                   static_cast<double>(cloud.size());
      angle_rows += cloud.size();
    }
  }

  MetricsReport report;
  report.clouds = static_cast<int64_t>(clouds.size());
  report.loss = loss_sum / static_cast<double>(clouds.size());
  if (task == Task::kNormals) {
    report.angular_error_deg = angle_sum / static_cast<double>(angle_rows);
  } else {
    report.oa = confusion.overall_accuracy();
    report.macc = confusion.mean_class_accuracy();
    report.miou = confusion.mean_iou();
  }
  return report;
}

}  // namespace fpenc
