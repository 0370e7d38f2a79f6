#include "fpenc/verify.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <functional>

#include "fpenc/common.hpp"

namespace fpenc {

namespace {

double seconds_since(std::chrono::steady_clock::time_point start) {
  std::chrono::duration<double> d = std::chrono::steady_clock::now() - start;
  return d.count();
}

double guarded_rel_err(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) {
    throw ShapeError("comparing " + std::to_string(a.size()) + " against " +
                     std::to_string(b.size()) + " values");
  }
  double worst = 0.0;
  for (size_t i = 0; i < a.size(); ++i) {
    worst = std::max(worst, rel_err(a[i], b[i]));
  }
  return worst;
}

// deep copy with one entry nudged, for sabotaging a single code path
Tensor bump_first(const Tensor& t) {
  std::vector<double> values(t.values().begin(), t.values().end());
  values[0] += 0.01;
  return Tensor(t.shape(), std::move(values));
}

struct TrialCloud {
  Tensor positions;
  Tensor features;
  NeighborIndex nbr;
};

TrialCloud draw_cloud(Rng& rng, int64_t n, int64_t k, int64_t channels) {
  TrialCloud out;
  out.positions = Tensor::uniform({n, 3}, rng, -1.0, 1.0);
  out.features = Tensor::uniform({n, channels}, rng, -1.0, 1.0);
  std::vector<int64_t> self = iota_indices(n);
  out.nbr = knn(out.positions, out.positions, k, true, self);
  return out;
}

LemmaReport run_trials(int64_t trials, double tol,
                       const std::function<double(int64_t)>& trial_err) {
  if (trials < 1) throw ParamError("need at least one trial");
  auto start = std::chrono::steady_clock::now();
  LemmaReport report;
  report.trials = trials;
  report.tol = tol;
  for (int64_t t = 0; t < trials; ++t) {
    double err = trial_err(t);
    report.worst_err = std::max(report.worst_err, err);
    if (err <= tol) {
      ++report.passed;
    } else {
      report.failures.push_back({t, err});
    }
  }
  report.seconds = seconds_since(start);
  return report;
}

}  // namespace

LemmaReport verify_fpconv(int64_t trials, uint64_t seed, double tol,
                          bool corrupt) {
  Rng root(seed);
  return run_trials(trials, tol, [&](int64_t t) {
    Rng rng = root.fork(static_cast<uint64_t>(t));
    const int64_t n = 2 + rng.below(31);
    const int64_t k = 1 + rng.below(std::min<int64_t>(8, n));
    const int64_t c_in = 1 + rng.below(16);
    const int64_t c_mid = 1 + rng.below(std::min<int64_t>(4, c_in));
    const int64_t c_out = 1 + rng.below(16);
    const double sigma = rng.uniform(0.6, 1.8);

    TrialCloud cloud = draw_cloud(rng, n, k, c_in);
    GlobalCorrelation s1 = global_correlation(cloud.positions, sigma);
    LocalCorrelation s2 = local_correlation(cloud.positions, cloud.nbr, s1);

    FPConvParams params = FPConvParams::make(c_in, c_mid, c_out, sigma, rng,
                                             Aggregator::kSum);
    FPConvParams reference = params;
    if (corrupt) reference.t_c1 = bump_first(params.t_c1);

    Tensor fast = fpconv_forward_efficient(cloud.features, s2, cloud.nbr,
                                           params);
    Tensor dense = fpconv_forward_naive(cloud.features, s2, cloud.nbr,
                                        reference);
    return guarded_rel_err(fast.values(), dense.values());
  });
}

LemmaReport verify_fptransformer(int64_t trials, uint64_t seed, double tol,
                                 bool corrupt) {
  Rng root(seed);
  return run_trials(trials, tol, [&](int64_t t) {
    Rng rng = root.fork(static_cast<uint64_t>(t));
    const int64_t c_mid = 1 + rng.below(4);
    const int64_t groups = t % 4 == 0 ? 1 : 1 + rng.below(4);
    const int64_t channels = c_mid * groups;
    const int64_t n = 2 + rng.below(31);
    const int64_t k = 1 + rng.below(std::min<int64_t>(8, n));

    TrialCloud cloud = draw_cloud(rng, n, k, channels);
    FPTransformerParams params = FPTransformerParams::make(channels, c_mid,
                                                           rng);
    FPTransformerParams reference = params;
    if (corrupt) reference.w_v.weight = bump_first(params.w_v.weight);

    Tensor fast = fptransformer_forward_efficient(cloud.features,
                                                  cloud.positions, cloud.nbr,
                                                  params);
    Tensor dense = fptransformer_forward_naive(cloud.features,
                                               cloud.positions, cloud.nbr,
                                               reference);
    return guarded_rel_err(fast.values(), dense.values());
  });
}

bool GradReport::all_passed() const {
  if (checks.empty()) return false;
  for (const GradCheckResult& c : checks) {
    if (!c.passed) return false;
  }
  return true;
}

GradReport verify_gradients(uint64_t seed, double tol, bool corrupt) {
  auto start = std::chrono::steady_clock::now();
  Rng root(seed);
  GradReport report;
  report.tol = tol;

  // cuts the graph so the tape sees a constant; the numeric side still
  // moves, which is exactly the mismatch the harness must catch
  auto maybe_detach = [&](Tensor t) {
    if (!corrupt) return t;
    std::vector<double> values(t.values().begin(), t.values().end());
    return Tensor(t.shape(), std::move(values));
  };

  auto run = [&](const std::string& name, std::span<Tensor> leaves,
                 const std::function<Tensor()>& forward) {
    double err = grad_check([&]() { return maybe_detach(forward()); }, leaves);
    report.checks.push_back({name, err, err <= tol});
  };

  {
    Rng rng = root.fork(1);
    const int64_t n = 10, k = 4, c = 3, c_mid = 2;
    TrialCloud cloud = draw_cloud(rng, n, k, c);
    GlobalCorrelation s1 = global_correlation(cloud.positions, 1.2);
    LocalCorrelation s2 = local_correlation(cloud.positions, cloud.nbr, s1);
    FPConvParams params = FPConvParams::make(c, c_mid, c, 1.2, rng);
    std::vector<NamedParam> named;
    params.collect("p", named);
    std::vector<Tensor> leaves{cloud.features};
    for (const NamedParam& np : named) leaves.push_back(np.tensor);
    run("fpconv", leaves, [&]() {
      return fpconv_forward_efficient(cloud.features, s2, cloud.nbr, params);
    });
  }
  {
    Rng rng = root.fork(2);
    const int64_t n = 10, k = 4, c = 4, c_mid = 2;
    TrialCloud cloud = draw_cloud(rng, n, k, c);
    FPTransformerBlock block = FPTransformerBlock::make(c, c_mid, rng);
    std::vector<NamedParam> named;
    block.collect("b", named);
    std::vector<Tensor> leaves{cloud.features};
    for (const NamedParam& np : named) leaves.push_back(np.tensor);
    run("fptransformer-block", leaves, [&]() {
      return block(cloud.features, cloud.positions, cloud.nbr);
    });
  }
  {
    Rng rng = root.fork(3);
    const int64_t n = 12, c = 4;
    Tensor positions = Tensor::uniform({n, 3}, rng, -1.0, 1.0);
    Tensor features = Tensor::uniform({n, c}, rng, -1.0, 1.0);
    SADSParams params = SADSParams::make(c, 3, 3, 3, rng);
    std::vector<NamedParam> named;
    params.collect("s", named);
    std::vector<Tensor> leaves{features};
    for (const NamedParam& np : named) leaves.push_back(np.tensor);
    run("sads", leaves, [&]() {
      return sads_downsample(features, positions, params, 0).features;
    });
  }
  {
    Rng rng = root.fork(4);
    const int64_t n = 12, c = 4;
    Tensor positions = Tensor::uniform({n, 3}, rng, -1.0, 1.0);
    Tensor features = Tensor::uniform({n, c}, rng, -1.0, 1.0);
    std::vector<Tensor> leaves{features};
    run("gds", leaves, [&]() {
      return gds_downsample(features, positions, 3, 3, 0).features;
    });
  }
  {
    Rng rng = root.fork(5);
    const int64_t n = 12, c = 4;
    Tensor positions = Tensor::uniform({n, 3}, rng, -1.0, 1.0);
    Tensor features = Tensor::uniform({n, c}, rng, -1.0, 1.0);
    TDSParams params = TDSParams::make(c, 3, 3, 3, rng);
    std::vector<Tensor> leaves{features, params.lin.weight, params.lin.bias};
    run("tds", leaves, [&]() {
      return tds_downsample(features, positions, params, 0).features;
    });
  }
  {
    Rng rng = root.fork(6);
    const int64_t coarse = 5, fine = 11, c = 3;
    Tensor cpos = Tensor::uniform({coarse, 3}, rng, -1.0, 1.0);
    Tensor cfeat = Tensor::uniform({coarse, c}, rng, -1.0, 1.0);
    Tensor fpos = Tensor::uniform({fine, 3}, rng, -1.0, 1.0);
    std::vector<Tensor> leaves{cfeat};
    run("upsample", leaves, [&]() {
      return upsample_interpolate(cpos, cfeat, fpos);
    });
  }
  {
    Rng rng = root.fork(7);
    const int64_t n = 10, k = 4, c = 4;
    TrialCloud cloud = draw_cloud(rng, n, k, c);
    Mlp mlp(c, c, c, rng);
    std::vector<Tensor> leaves{cloud.features, mlp.l1.weight, mlp.l1.bias,
                               mlp.l2.weight, mlp.l2.bias};
    run("mlp-baseline", leaves, [&]() {
      return mlp_baseline_layer(cloud.features, cloud.nbr, mlp);
    });
  }
  {
    Rng rng = root.fork(8);
    NetworkSpec spec;
    spec.task = Task::kClassification;
    spec.stage_count = 2;
    spec.encoder_channels = {4, 6};
    spec.middle_channels = {2, 3};
    spec.block_depths = {1, 1};
    spec.sampling_ratios = {1, 2};
    spec.k_neighbors = {4, 4};
    spec.num_classes = 3;
    Network net = Network::build(spec, rng);
    Tensor positions = Tensor::uniform({20, 3}, rng, -1.0, 1.0);
    std::vector<Tensor> leaves;
    for (const NamedParam& np : net.named_parameters()) {
      leaves.push_back(np.tensor);
    }
    const int64_t label[1] = {1};
    run("network-2stage", leaves, [&]() {
      return cross_entropy(net.forward(positions, positions), label);
    });
  }

  report.seconds = seconds_since(start);
  return report;
}

}  // namespace fpenc
