#include <cmath>
#include <cstdio>
#include <fstream>
#include <string>
#include <vector>

#include "doctest.h"
#include "fpenc/network.hpp"

using namespace fpenc;

namespace {

NetworkSpec tiny_spec(Task task, LayerKind kind) {
  NetworkSpec spec;
  spec.task = task;
  spec.layer_kind = kind;
  spec.stage_count = 2;
  spec.encoder_channels = {4, 8};
  spec.middle_channels = {2, 2};
  spec.block_depths = {1, 1};
  spec.sampling_ratios = {1, 3};
  spec.k_neighbors = {4, 4};
  spec.num_classes = 3;
  return spec;
}

std::string field_of(const std::function<void()>& f) {
  try {
    f();
  } catch (const ValidationError& e) {
    return e.what();
  }
  return "";
}

}  // namespace

TEST_CASE("network spec json round trip preserves every field") {
  NetworkSpec spec;
  spec.task = Task::kSegmentation;
  spec.layer_kind = LayerKind::kFPConv;
  spec.sampling_block = SamplingBlockKind::kTDS;
  spec.pos_variant = PosVariant::kLocal;
  spec.pos_encoder = PosEncoder::kSinusoidal;
  spec.stage_count = 3;
  spec.encoder_channels = {8, 16, 16};
  spec.middle_channels = {2, 4, 4};
  spec.block_depths = {1, 2, 1};
  spec.sampling_ratios = {1, 2, 4};
  spec.k_neighbors = {6, 6, 8};
  spec.sigma = 0.9;
  spec.max_global_points = 512;
  spec.input_channels = 6;
  spec.num_classes = 5;
  nlohmann::json j = spec;
  NetworkSpec back = j.get<NetworkSpec>();
  CHECK(back.task == spec.task);
  CHECK(back.layer_kind == spec.layer_kind);
  CHECK(back.sampling_block == spec.sampling_block);
  CHECK(back.pos_variant == spec.pos_variant);
  CHECK(back.pos_encoder == spec.pos_encoder);
  CHECK(back.stage_count == spec.stage_count);
  CHECK(back.encoder_channels == spec.encoder_channels);
  CHECK(back.middle_channels == spec.middle_channels);
  CHECK(back.block_depths == spec.block_depths);
  CHECK(back.sampling_ratios == spec.sampling_ratios);
  CHECK(back.k_neighbors == spec.k_neighbors);
  CHECK(back.sigma == spec.sigma);
  CHECK(back.max_global_points == spec.max_global_points);
  CHECK(back.input_channels == spec.input_channels);
  CHECK(back.num_classes == spec.num_classes);

  // partial json keeps defaults for everything absent
  NetworkSpec partial =
      nlohmann::json{{"num_classes", 7}}.get<NetworkSpec>();
  CHECK(partial.num_classes == 7);
  CHECK(partial.stage_count == 5);
  CHECK(partial.encoder_channels == std::vector<int64_t>{32, 64, 128, 256, 512});
}

TEST_CASE("network spec validation names the offending field") {
  NetworkSpec bad = tiny_spec(Task::kClassification, LayerKind::kFPTransformer);
  bad.middle_channels = {2};
  std::string msg = field_of([&] { bad.validate(); });
  CHECK(msg.find("middle_channels") != std::string::npos);

  bad = tiny_spec(Task::kClassification, LayerKind::kFPTransformer);
  bad.middle_channels = {3, 2};  // 3 does not divide 4
  msg = field_of([&] { bad.validate(); });
  CHECK(msg.find("middle_channels[0]") != std::string::npos);

  bad = tiny_spec(Task::kClassification, LayerKind::kFPTransformer);
  bad.sampling_ratios = {2, 3};
  msg = field_of([&] { bad.validate(); });
  CHECK(msg.find("sampling_ratios[0]") != std::string::npos);

  bad = tiny_spec(Task::kClassification, LayerKind::kFPTransformer);
  bad.encoder_channels = {8, 4};
  msg = field_of([&] { bad.validate(); });
  CHECK(msg.find("encoder_channels[1]") != std::string::npos);

  bad = tiny_spec(Task::kSegmentation, LayerKind::kFPTransformer);
  bad.num_classes = 1;
  msg = field_of([&] { bad.validate(); });
  CHECK(msg.find("num_classes") != std::string::npos);

  bad = tiny_spec(Task::kClassification, LayerKind::kFPTransformer);
  bad.sigma = 0.0;
  msg = field_of([&] { bad.validate(); });
  CHECK(msg.find("sigma") != std::string::npos);
}

TEST_CASE("declared depths produce that many encoder layers") {
  NetworkSpec spec;
  spec.task = Task::kClassification;
  spec.num_classes = 4;
  spec.encoder_channels = {4, 8, 8, 8, 8};
  spec.middle_channels = {2, 2, 2, 2, 2};
  spec.block_depths = {1, 2, 2, 6, 2};
  spec.k_neighbors = {4, 4, 4, 4, 4};
  Rng rng(101);
  Network net = Network::build(spec, rng);
  int64_t layers = 0;
  for (const auto& stage : net.encoder) layers += static_cast<int64_t>(stage.size());
  CHECK(layers == 13);
  CHECK(net.sampling.size() == 4);

  // the count is a pure function of the NetworkSpec
  Rng rng_a(5), rng_b(99);
  Network a = Network::build(spec, rng_a);
  Network b = Network::build(spec, rng_b);
  CHECK(a.parameter_count() == b.parameter_count());
  CHECK(a.parameter_count() > 0);
}

TEST_CASE("classification forward emits one logit row") {
  for (LayerKind kind :
       {LayerKind::kFPTransformer, LayerKind::kFPConv, LayerKind::kMlpBaseline}) {
    NetworkSpec spec = tiny_spec(Task::kClassification, kind);
    Rng rng(102);
    Network net = Network::build(spec, rng);
    Tensor positions = Tensor::uniform({40, 3}, rng, -1, 1);
    Tensor logits = net.forward(positions, positions);
    REQUIRE(logits.shape() == Shape{1, 3});
    ensure_finite(logits.values(), "logits");
  }

  // the default five-stage ladder shrinks to fewer points than k and still runs
  NetworkSpec deep;
  deep.task = Task::kClassification;
  deep.num_classes = 4;
  deep.encoder_channels = {4, 4, 8, 8, 8};
  deep.middle_channels = {2, 2, 2, 2, 2};
  deep.block_depths = {1, 1, 1, 1, 1};
  deep.k_neighbors = {8, 8, 8, 8, 8};
  Rng rng(103);
  Network net = Network::build(deep, rng);
  Tensor positions = Tensor::uniform({128, 3}, rng, -1, 1);
  Tensor logits = net.forward(positions, positions);
  REQUIRE(logits.shape() == Shape{1, 4});
  ensure_finite(logits.values(), "logits");
}

TEST_CASE("dense tasks emit per-point rows") {
  Rng rng(104);
  NetworkSpec seg = tiny_spec(Task::kSegmentation, LayerKind::kFPTransformer);
  Network seg_net = Network::build(seg, rng);
  Tensor positions = Tensor::uniform({30, 3}, rng, -1, 1);
  Tensor seg_out = seg_net.forward(positions, positions);
  REQUIRE(seg_out.shape() == Shape{30, 3});

  NetworkSpec nrm = tiny_spec(Task::kNormals, LayerKind::kFPTransformer);
  nrm.num_classes = 0;  // unused for normals
  Network nrm_net = Network::build(nrm, rng);
  Tensor nrm_out = nrm_net.forward(positions, positions);
  REQUIRE(nrm_out.shape() == Shape{30, 3});
  for (int64_t i = 0; i < 30; ++i) {
    double sq = 0.0;
    for (int64_t a = 0; a < 3; ++a) sq += nrm_out.at({i, a}) * nrm_out.at({i, a});
    CHECK(std::abs(std::sqrt(sq) - 1.0) <= 1e-9);
  }
}

TEST_CASE("classification logits are permutation invariant") {
  for (LayerKind kind : {LayerKind::kFPTransformer, LayerKind::kFPConv}) {
    NetworkSpec spec = tiny_spec(Task::kClassification, kind);
    Rng rng(105);
    Network net = Network::build(spec, rng);
    Tensor positions = Tensor::uniform({48, 3}, rng, -1, 1);
    Tensor base = net.forward(positions, positions);

    std::vector<int64_t> perm(48);
    for (int64_t i = 0; i < 48; ++i) perm[i] = i;
    rng.shuffle(perm);
    IndexArray perm_idx{{48}, perm};
    Tensor shuffled = gather(positions, perm_idx);
    Tensor moved = net.forward(shuffled, shuffled);
    for (int64_t i = 0; i < base.numel(); ++i) {
      CHECK(rel_err(base.values()[i], moved.values()[i]) <= 1e-9);
    }
  }
}

TEST_CASE("checkpoint round trip is bit exact") {
  Rng rng(106);
  NetworkSpec spec = tiny_spec(Task::kSegmentation, LayerKind::kFPTransformer);
  spec.sampling_block = SamplingBlockKind::kSADS;
  Network net = Network::build(spec, rng);
  Tensor positions = Tensor::uniform({26, 3}, rng, -1, 1);
  Tensor before = net.forward(positions, positions);

  const std::string path = "test_network_ckpt.bin";
  save_checkpoint(net, path);
  Network back = load_checkpoint(path);
  std::vector<NamedParam> a = net.named_parameters();
  std::vector<NamedParam> b = back.named_parameters();
  REQUIRE(a.size() == b.size());
  for (size_t i = 0; i < a.size(); ++i) {
    CHECK(a[i].name == b[i].name);
    REQUIRE(a[i].tensor.shape() == b[i].tensor.shape());
    for (int64_t v = 0; v < a[i].tensor.numel(); ++v) {
      CHECK(a[i].tensor.values()[v] == b[i].tensor.values()[v]);
    }
  }
  Tensor after = back.forward(positions, positions);
  for (int64_t i = 0; i < before.numel(); ++i) {
    CHECK(before.values()[i] == after.values()[i]);
  }
  std::remove(path.c_str());

  // corrupted header is rejected
  std::ofstream bad("test_network_ckpt_bad.bin", std::ios::binary);
  bad << "{\"format\":\"nope\"}\n";
  bad.close();
  CHECK_THROWS_AS(load_checkpoint("test_network_ckpt_bad.bin"), ParseError);
  std::remove("test_network_ckpt_bad.bin");
}

TEST_CASE("two-stage network passes end-to-end gradient checks") {
  Rng rng(107);
  NetworkSpec spec = tiny_spec(Task::kClassification, LayerKind::kFPTransformer);
  Network net = Network::build(spec, rng);
  Tensor positions = Tensor::uniform({24, 3}, rng, -1, 1);
  std::vector<int64_t> label{1};
  std::vector<NamedParam> named = net.named_parameters();
  std::vector<Tensor> leaves;
  for (const NamedParam& np : named) leaves.push_back(np.tensor);
  double err = grad_check(
      [&]() {
        return cross_entropy(net.forward(positions, positions),
                             std::span<const int64_t>(label));
      },
      std::span<Tensor>(leaves));
  CHECK(err < 1e-4);
}
