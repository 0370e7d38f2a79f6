#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <sstream>

#include "CLI11.hpp"
#include "fpenc/common.hpp"
#include "fpenc/train.hpp"
#include "fpenc/verify.hpp"

namespace fs = std::filesystem;
using namespace fpenc;
using nlohmann::json;

namespace {

// Desk-scale default: a 2-stage encoder that trains on a CPU in minutes.
NetworkSpec desk_network() {
  NetworkSpec spec;
  spec.stage_count = 2;
  spec.encoder_channels = {16, 32};
  spec.middle_channels = {4, 8};
  spec.block_depths = {1, 1};
  spec.sampling_ratios = {1, 4};
  spec.k_neighbors = {16, 16};
  spec.num_classes = 4;
  return spec;
}

Task task_for(DatasetKind kind) {
  switch (kind) {
    case DatasetKind::kShapesCls: return Task::kClassification;
    case DatasetKind::kSceneSeg: return Task::kSegmentation;
    case DatasetKind::kSphereNormals: return Task::kNormals;
  }
  throw ValidationError("dataset kind: bad enum value");
}

struct AppConfig {
  NetworkSpec network;
  SyntheticDatasetSpec dataset;
  TrainConfig train;
};

// Layered config: desk defaults, then the JSON file, then --seed for any
// seed the file leaves unset. Task and head width follow the dataset kind
// unless the file pins them explicitly.
AppConfig load_config(const std::string& path, uint64_t seed) {
  AppConfig cfg;
  cfg.network = desk_network();
  json j = json::object();
  if (!path.empty()) {
    std::ifstream in(path);
    if (!in) throw ParamError("cannot open config file: " + path);
    j = json::parse(in);
  }
  json net_j = j.value("network", json::object());
  json data_j = j.value("dataset", json::object());
  json train_j = j.value("train", json::object());
  net_j.get_to(cfg.network);
  data_j.get_to(cfg.dataset);
  train_j.get_to(cfg.train);

  if (!net_j.contains("task")) cfg.network.task = task_for(cfg.dataset.kind);
  if (!net_j.contains("num_classes")) {
    cfg.network.num_classes = cfg.dataset.num_classes();
  }
  if (!data_j.contains("seed")) cfg.dataset.seed = seed;
  if (!train_j.contains("seed")) cfg.train.seed = seed;

  cfg.dataset.validate();
  cfg.network.validate();
  cfg.train.validate();
  return cfg;
}

std::string fmt(double v, int precision = 6) {
  std::ostringstream out;
  out << std::setprecision(precision) << v;
  return out.str();
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path);
  if (!out) throw ParamError("cannot write file: " + path.string());
  out << text;
}

fs::path prepare_out_dir(const std::string& out) {
  fs::path dir = out.empty() ? fs::path(".") : fs::path(out);
  fs::create_directories(dir);
  return dir;
}

std::string metrics_csv(const MetricsReport& r) {
  std::ostringstream out;
  out << "oa,macc,miou,angular_error_deg,loss,clouds\n"
      << fmt(r.oa) << ',' << fmt(r.macc) << ',' << fmt(r.miou) << ','
      << fmt(r.angular_error_deg) << ',' << fmt(r.loss) << ',' << r.clouds
      << '\n';
  return out.str();
}

int run_verify_lemmas(const std::string& op, int64_t trials, uint64_t seed,
                      double tol, bool corrupt, bool as_json) {
  json out = json::array();
  bool ok = true;
  auto report_one = [&](const std::string& name, const LemmaReport& r) {
    ok = ok && r.all_passed();
    std::cout << (r.all_passed() ? "PASS" : "FAIL") << ' ' << name << ": "
              << r.passed << '/' << r.trials << " trials, worst rel err "
              << fmt(r.worst_err, 3) << ", tol " << fmt(r.tol, 3) << ", "
              << fmt(r.seconds, 3) << "s\n";
    for (const TrialFailure& f : r.failures) {
      std::cout << "  trial " << f.trial << ": rel err " << fmt(f.err, 3)
                << '\n';
    }
    out.push_back({{"op", name},
                   {"trials", r.trials},
                   {"passed", r.passed},
                   {"worst_err", r.worst_err},
                   {"tol", r.tol},
                   {"seconds", r.seconds}});
  };
  if (op == "fpconv" || op == "all") {
    report_one("fpconv", verify_fpconv(trials, seed, tol, corrupt));
  }
  if (op == "fptransformer" || op == "all") {
    report_one("fptransformer",
               verify_fptransformer(trials, seed, tol, corrupt));
  }
  if (as_json) std::cout << out.dump(2) << '\n';
  return ok ? 0 : 1;
}

int run_verify_grads(uint64_t seed, double tol, bool corrupt, bool as_json) {
  GradReport report = verify_gradients(seed, tol, corrupt);
  json out = json::array();
  for (const GradCheckResult& c : report.checks) {
    std::cout << (c.passed ? "PASS" : "FAIL") << ' ' << c.name
              << ": max rel err " << fmt(c.max_err, 3) << ", tol "
              << fmt(report.tol, 3) << '\n';
    out.push_back(
        {{"name", c.name}, {"max_err", c.max_err}, {"passed", c.passed}});
  }
  std::cout << (report.all_passed() ? "PASS" : "FAIL")
            << " gradient suite: " << report.checks.size() << " checks, "
            << fmt(report.seconds, 3) << "s\n";
  if (as_json) std::cout << out.dump(2) << '\n';
  return report.all_passed() ? 0 : 1;
}

struct TrainedRun {
  Network net;
  std::vector<EpochStats> history;
  MetricsReport metrics;
  double train_seconds = 0.0;
};

TrainedRun run_training(const AppConfig& cfg, uint64_t seed, bool quiet) {
  Dataset data = gen_dataset(cfg.dataset);
  Rng rng(seed);
  TrainedRun run{Network::build(cfg.network, rng), {}, {}, 0.0};
  run.history =
      train_network(run.net, data.train, cfg.train, [&](const EpochStats& s) {
        run.train_seconds += s.seconds;
        if (!quiet) {
          std::cout << "epoch " << s.epoch << ": loss " << fmt(s.loss)
                    << ", lr " << fmt(s.lr, 4) << ", " << fmt(s.seconds, 3)
                    << "s" << std::endl;
        }
        return true;
      });
  run.metrics = evaluate_network(run.net, data.test);
  return run;
}

json summary_json(const AppConfig& cfg, const TrainedRun& run) {
  return json{{"config",
               {{"network", cfg.network},
                {"dataset", cfg.dataset},
                {"train", cfg.train}}},
              {"metrics", run.metrics},
              {"parameter_count", run.net.parameter_count()},
              {"train_seconds", run.train_seconds}};
}

int run_train(const std::string& config_path, uint64_t seed,
              const std::string& out, bool as_json) {
  AppConfig cfg = load_config(config_path, seed);
  fs::path dir = prepare_out_dir(out);
  TrainedRun run = run_training(cfg, seed, false);

  std::ostringstream hist;
  hist << "epoch,lr,loss,seconds\n";
  for (const EpochStats& s : run.history) {
    hist << s.epoch << ',' << fmt(s.lr) << ',' << fmt(s.loss) << ','
         << fmt(s.seconds, 4) << '\n';
  }
  write_text(dir / "history.csv", hist.str());

  fs::path ckpt = dir / "model.ckpt";
  save_checkpoint(run.net, ckpt.string());

  json summary = summary_json(cfg, run);
  summary["checkpoint"] = ckpt.string();
  write_text(dir / "summary.json", summary.dump(2) + "\n");
  write_text(dir / "metrics.csv", metrics_csv(run.metrics));

  std::cout << "test metrics: oa " << fmt(run.metrics.oa) << ", macc "
            << fmt(run.metrics.macc) << ", miou " << fmt(run.metrics.miou)
            << ", angular_error_deg " << fmt(run.metrics.angular_error_deg)
            << ", loss " << fmt(run.metrics.loss) << '\n';
  std::cout << "checkpoint: " << ckpt.string() << '\n';
  if (as_json) std::cout << summary.dump(2) << '\n';
  return 0;
}

Perturbation parse_perturbation(const std::string& name, int64_t points,
                                uint64_t seed) {
  if (name == "none") return Perturbation::none();
  if (name == "permute") return Perturbation::permute(seed);
  if (name == "density") return Perturbation::density(points, seed);
  throw ParamError("unknown perturbation: " + name);
}

int run_eval(const std::string& config_path, uint64_t seed,
             const std::string& checkpoint, const std::string& perturb,
             int64_t points, const std::string& out, bool as_json) {
  AppConfig cfg = load_config(config_path, seed);
  Network net = load_checkpoint(checkpoint);
  Dataset data = gen_dataset(cfg.dataset);
  MetricsReport report = evaluate_network(
      net, data.test, parse_perturbation(perturb, points, seed));

  std::cout << metrics_csv(report);
  if (as_json) std::cout << json(report).dump(2) << '\n';
  if (!out.empty()) {
    fs::path dir = prepare_out_dir(out);
    write_text(dir / "eval.csv", metrics_csv(report));
    write_text(dir / "eval.json", json(report).dump(2) + "\n");
  }
  return 0;
}

int run_robustness(const std::string& config_path, uint64_t seed,
                   const std::string& checkpoint, const std::string& out,
                   bool as_json) {
  AppConfig cfg = load_config(config_path, seed);
  Network net = load_checkpoint(checkpoint);
  Dataset data = gen_dataset(cfg.dataset);

  MetricsReport plain = evaluate_network(net, data.test);
  MetricsReport permuted =
      evaluate_network(net, data.test, Perturbation::permute(seed));
  const double delta_pp = (permuted.oa - plain.oa) * 100.0;

  std::vector<int64_t> levels;
  for (int64_t p : {int64_t{1024}, int64_t{512}, int64_t{256}, int64_t{128},
                    int64_t{64}}) {
    levels.push_back(std::min(p, cfg.dataset.points_per_cloud));
  }
  levels.erase(std::unique(levels.begin(), levels.end()), levels.end());

  std::ostringstream csv;
  csv << "perturbation,points,oa,macc,miou,loss\n";
  auto row = [&](const std::string& name, int64_t pts,
                 const MetricsReport& r) {
    csv << name << ',' << pts << ',' << fmt(r.oa) << ',' << fmt(r.macc) << ','
        << fmt(r.miou) << ',' << fmt(r.loss) << '\n';
  };
  row("none", cfg.dataset.points_per_cloud, plain);
  row("permute", cfg.dataset.points_per_cloud, permuted);

  std::vector<std::pair<int64_t, double>> curve;
  for (int64_t pts : levels) {
    MetricsReport r =
        evaluate_network(net, data.test, Perturbation::density(pts, seed));
    row("density", pts, r);
    curve.push_back({pts, r.oa});
  }

  json summary = {{"permutation_delta_oa_pp", delta_pp},
                  {"plain", plain},
                  {"permuted", permuted}};
  json curve_json = json::array();
  int violations = 0;
  std::cout << "permutation delta OA: " << fmt(delta_pp, 3)
            << " percentage points\n";
  for (size_t i = 0; i < curve.size(); ++i) {
    curve_json.push_back({{"points", curve[i].first}, {"oa", curve[i].second}});
    std::cout << "density " << curve[i].first << ": oa "
              << fmt(curve[i].second) << '\n';
    // fewer points should not help; flag any rise along the thinning curve
    if (i > 0 && curve[i].second > curve[i - 1].second + 1e-12) {
      ++violations;
      std::cout << "  monotonicity violation: oa rose from "
                << fmt(curve[i - 1].second) << " at " << curve[i - 1].first
                << " points to " << fmt(curve[i].second) << " at "
                << curve[i].first << " points\n";
    }
  }
  std::cout << "monotonicity violations: " << violations << '\n';
  summary["density_curve"] = curve_json;
  summary["monotonicity_violations"] = violations;

  fs::path dir = prepare_out_dir(out);
  write_text(dir / "robustness.csv", csv.str());
  write_text(dir / "robustness.json", summary.dump(2) + "\n");
  if (as_json) std::cout << summary.dump(2) << '\n';

  return std::abs(delta_pp) <= 0.1 ? 0 : 1;
}

// one trained model per grid cell, rows in grid order
int run_ablate(const std::string& what, const std::string& config_path,
               uint64_t seed, const std::string& out, bool as_json) {
  AppConfig base = load_config(config_path, seed);
  fs::path dir = prepare_out_dir(out);

  struct Cell {
    std::string value;
    AppConfig cfg;
  };
  std::vector<Cell> cells;
  auto truncate_row = [&](std::vector<int64_t> row) {
    row.resize(static_cast<size_t>(base.network.stage_count));
    return row;
  };
  auto label_row = [](const std::vector<int64_t>& row) {
    std::string s = "[";
    for (size_t i = 0; i < row.size(); ++i) {
      if (i) s += ' ';
      s += std::to_string(row[i]);
    }
    return s + "]";
  };

  if (what == "sigma") {
    // sigma only enters the correlation terms, so the sweep runs
    // convolution layers; a transformer network would give five
    // identical rows
    for (double sigma : {0.8, 1.0, 1.2, 1.4, 1.6}) {
      Cell cell{fmt(sigma, 3), base};
      cell.cfg.network.layer_kind = LayerKind::kFPConv;
      cell.cfg.network.sigma = sigma;
      cells.push_back(std::move(cell));
    }
  } else if (what == "c_mid") {
    for (auto& row : {std::vector<int64_t>{4, 8, 16, 32, 64},
                      std::vector<int64_t>{8, 16, 32, 64, 128}}) {
      std::vector<int64_t> mids = truncate_row(row);
      Cell cell{label_row(mids), base};
      cell.cfg.network.middle_channels = mids;
      cells.push_back(std::move(cell));
    }
  } else if (what == "position-encoding") {
    auto variant_cell = [&](const std::string& name, PosVariant variant,
                            PosEncoder encoder) {
      Cell cell{name, base};
      cell.cfg.network.pos_variant = variant;
      cell.cfg.network.pos_encoder = encoder;
      cells.push_back(std::move(cell));
    };
    variant_cell("full", PosVariant::kFull, PosEncoder::kLearnableMlp);
    variant_cell("local", PosVariant::kLocal, PosEncoder::kLearnableMlp);
    variant_cell("global", PosVariant::kGlobal, PosEncoder::kLearnableMlp);
    variant_cell("sinusoidal", PosVariant::kFull, PosEncoder::kSinusoidal);
  } else if (what == "sampling-block") {
    for (auto kind : {SamplingBlockKind::kSADS, SamplingBlockKind::kTDS,
                      SamplingBlockKind::kGDS}) {
      Cell cell{sampling_block_name(kind), base};
      cell.cfg.network.sampling_block = kind;
      cells.push_back(std::move(cell));
    }
  } else {
    throw ParamError("unknown ablation axis: " + what);
  }

  std::ostringstream csv;
  csv << "axis,value,oa,macc,miou,angular_error_deg,loss,parameter_count,"
         "train_seconds\n";
  json rows = json::array();
  for (Cell& cell : cells) {
    cell.cfg.network.validate();
    std::cout << "ablate " << what << " = " << cell.value << "\n";
    TrainedRun run = run_training(cell.cfg, seed, true);
    const MetricsReport& m = run.metrics;
    csv << what << ',' << cell.value << ',' << fmt(m.oa) << ',' << fmt(m.macc)
        << ',' << fmt(m.miou) << ',' << fmt(m.angular_error_deg) << ','
        << fmt(m.loss) << ',' << run.net.parameter_count() << ','
        << fmt(run.train_seconds, 4) << '\n';
    std::cout << "  oa " << fmt(m.oa) << ", loss " << fmt(m.loss) << ", "
              << fmt(run.train_seconds, 3) << "s\n";
    rows.push_back({{"axis", what},
                    {"value", cell.value},
                    {"metrics", m},
                    {"parameter_count", run.net.parameter_count()},
                    {"train_seconds", run.train_seconds}});
  }

  fs::path table = dir / ("ablate_" + what + ".csv");
  write_text(table, csv.str());
  std::cout << "table: " << table.string() << '\n';
  if (as_json) std::cout << rows.dump(2) << '\n';
  return 0;
}

int run_gen_data(const std::string& config_path, uint64_t seed,
                 const std::string& out) {
  AppConfig cfg = load_config(config_path, seed);
  fs::path dir = prepare_out_dir(out);
  Dataset data = gen_dataset(cfg.dataset);

  auto dump_split = [&](const std::string& name,
                        const std::vector<PointCloud>& clouds) {
    for (size_t i = 0; i < clouds.size(); ++i) {
      std::ostringstream file;
      file << name << '_' << std::setw(4) << std::setfill('0') << i << ".xyz";
      write_cloud(clouds[i], (dir / file.str()).string());
    }
  };
  dump_split("train", data.train);
  dump_split("test", data.test);

  json manifest = {{"dataset", cfg.dataset},
                   {"train_count", data.train.size()},
                   {"test_count", data.test.size()}};
  write_text(dir / "manifest.json", manifest.dump(2) + "\n");
  std::cout << "wrote " << data.train.size() << " train and "
            << data.test.size() << " test clouds to " << dir.string() << '\n';
  return 0;
}

PointCloud pick_subset(const PointCloud& cloud, std::span<const int64_t> rows) {
  PointCloud out;
  IndexArray idx{{static_cast<int64_t>(rows.size())},
                 {rows.begin(), rows.end()}};
  out.positions = gather(cloud.positions, idx);
  if (cloud.has_features()) out.features = gather(cloud.features, idx);
  if (cloud.has_normals()) out.normals = gather(cloud.normals, idx);
  if (cloud.has_labels()) {
    for (int64_t r : rows) out.labels.push_back(cloud.labels[r]);
  }
  return out;
}

int run_sample(const std::string& input, const std::string& method,
               int64_t count, int64_t k, int64_t query_index, double cell,
               int64_t seed_index, const std::string& out) {
  PointCloud cloud = read_cloud(input);
  PointCloud result;
  if (method == "fps") {
    std::vector<int64_t> picks =
        farthest_point_sample(cloud.positions, count, seed_index);
    result = pick_subset(cloud, picks);
  } else if (method == "knn") {
    Tensor query = pick(cloud.positions, std::array<int64_t, 1>{query_index});
    NeighborIndex nbr = knn(cloud.positions, query, k);
    result = pick_subset(cloud, nbr.indices.values);
  } else if (method == "voxel") {
    result = voxel_downsample(cloud, cell);
  } else {
    throw ParamError("unknown sampling method: " + method);
  }
  write_cloud(result, out);
  std::cout << method << ": " << cloud.size() << " -> " << result.size()
            << " points, written to " << out << '\n';
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  retain_freed_memory();
  CLI::App app{"full point encoding toolkit"};
  app.require_subcommand(1);
  app.fallthrough();

  uint64_t seed = 1;
  std::string config_path;
  std::string out_dir;
  bool as_json = false;
  app.add_option("--seed", seed, "master seed for anything unseeded");
  app.add_option("--config", config_path, "JSON config file");
  app.add_option("--out", out_dir, "output directory");
  app.add_flag("--json", as_json, "also print reports as JSON");

  auto* lemmas = app.add_subcommand(
      "verify-lemmas", "check the factorized forwards against dense oracles");
  std::string lemma_op = "all";
  int64_t trials = 100;
  double lemma_tol = 1e-10;
  bool corrupt = false;
  lemmas->add_option("--op", lemma_op, "fpconv, fptransformer, or all")
      ->check(CLI::IsMember({"fpconv", "fptransformer", "all"}));
  lemmas->add_option("--trials", trials, "trials per op");
  lemmas->add_option("--tol", lemma_tol, "max relative error");
  lemmas->add_flag("--corrupt", corrupt,
                   "sabotage the reference path (harness self-test)");

  auto* grads = app.add_subcommand(
      "verify-grads", "finite-difference gradient checks for every layer");
  double grad_tol = 1e-4;
  grads->add_option("--tol", grad_tol, "max relative error");
  grads->add_flag("--corrupt", corrupt,
                  "detach outputs from the tape (harness self-test)");

  auto* train_cmd =
      app.add_subcommand("train", "train a network on a synthetic dataset");

  auto* eval_cmd =
      app.add_subcommand("eval", "evaluate a checkpoint on the test split");
  std::string checkpoint;
  std::string perturb = "none";
  int64_t density_points = 256;
  eval_cmd->add_option("--checkpoint", checkpoint, "checkpoint file")
      ->required();
  eval_cmd->add_option("--perturb", perturb, "none, permute, or density")
      ->check(CLI::IsMember({"none", "permute", "density"}));
  eval_cmd->add_option("--points", density_points,
                       "cloud size for --perturb density");

  auto* robust = app.add_subcommand(
      "robustness", "permutation and density sweeps over a checkpoint");
  robust->add_option("--checkpoint", checkpoint, "checkpoint file")
      ->required();

  auto* ablate = app.add_subcommand(
      "ablate", "train one model per grid cell and tabulate the metrics");
  std::string what;
  ablate
      ->add_option("what", what,
                   "position-encoding, c_mid, sigma, or sampling-block")
      ->required()
      ->check(CLI::IsMember(
          {"position-encoding", "c_mid", "sigma", "sampling-block"}));

  auto* gen = app.add_subcommand("gen-data",
                                 "write a synthetic dataset as cloud files");

  auto* sample =
      app.add_subcommand("sample", "run fps, knn, or voxel on a cloud file");
  std::string sample_input;
  std::string sample_method;
  std::string sample_out = "sampled.xyz";
  int64_t sample_count = 64;
  int64_t sample_k = 16;
  int64_t sample_query = 0;
  int64_t fps_seed_index = 0;
  double voxel_cell = 0.1;
  sample->add_option("--input", sample_input, "input cloud file")->required();
  sample->add_option("--method", sample_method, "fps, knn, or voxel")
      ->required()
      ->check(CLI::IsMember({"fps", "knn", "voxel"}));
  sample->add_option("--count", sample_count, "fps: points to keep");
  sample->add_option("--k", sample_k, "knn: neighbors to keep");
  sample->add_option("--query-index", sample_query, "knn: query point row");
  sample->add_option("--cell", voxel_cell, "voxel: grid cell size");
  sample->add_option("--seed-index", fps_seed_index, "fps: starting row");
  sample->add_option("--output", sample_out, "output cloud file");

  try {
    app.parse(argc, argv);

    if (lemmas->parsed()) {
      return run_verify_lemmas(lemma_op, trials, seed, lemma_tol, corrupt,
                               as_json);
    }
    if (grads->parsed()) {
      return run_verify_grads(seed, grad_tol, corrupt, as_json);
    }
    if (train_cmd->parsed()) {
      return run_train(config_path, seed, out_dir, as_json);
    }
    if (eval_cmd->parsed()) {
      return run_eval(config_path, seed, checkpoint, perturb, density_points,
                      out_dir, as_json);
    }
    if (robust->parsed()) {
      return run_robustness(config_path, seed, checkpoint, out_dir, as_json);
    }
    if (ablate->parsed()) {
      return run_ablate(what, config_path, seed, out_dir, as_json);
    }
    if (gen->parsed()) {
      return run_gen_data(config_path, seed, out_dir);
    }
    if (sample->parsed()) {
      return run_sample(sample_input, sample_method, sample_count, sample_k,
                        sample_query, voxel_cell, fps_seed_index, sample_out);
    }
    return 2;
  } catch (const CLI::ParseError& e) {
    int code = app.exit(e);
    return code == 0 ? 0 : 2;
  } catch (const ValidationError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return 2;
  } catch (const ParamError& e) {
    std::cerr << "usage error: " << e.what() << '\n';
    return 2;
  } catch (const nlohmann::json::exception& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
}
