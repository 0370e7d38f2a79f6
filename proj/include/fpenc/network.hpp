#pragma once

#include <optional>
#include <variant>

#include "fpenc/blocks.hpp"
#include "fpenc/fpconv.hpp"
#include "fpenc/fptransformer.hpp"
#include "json.hpp"

namespace fpenc {

enum class Task { kClassification, kSegmentation, kNormals };
enum class LayerKind { kFPConv, kFPTransformer, kMlpBaseline };
enum class SamplingBlockKind { kSADS, kTDS, kGDS };

const char* task_name(Task t);
const char* layer_kind_name(LayerKind k);
const char* sampling_block_name(SamplingBlockKind k);
const char* pos_variant_name(PosVariant v);
const char* pos_encoder_name(PosEncoder e);
Task task_from_name(const std::string& s);
LayerKind layer_kind_from_name(const std::string& s);
SamplingBlockKind sampling_block_from_name(const std::string& s);
PosVariant pos_variant_from_name(const std::string& s);
PosEncoder pos_encoder_from_name(const std::string& s);

// Declarative model description. Stage 0 runs a pointwise stem MLP plus
// block_depths[0] aggregation layers on the full cloud; every later stage
// downsamples by its ratio first. Segmentation and normal estimation add a
// mirrored decoder with skip connections; classification pools globally.
struct NetworkSpec {
  Task task = Task::kClassification;
  LayerKind layer_kind = LayerKind::kFPTransformer;
  SamplingBlockKind sampling_block = SamplingBlockKind::kSADS;
  PosVariant pos_variant = PosVariant::kFull;
  PosEncoder pos_encoder = PosEncoder::kLearnableMlp;
  int64_t stage_count = 5;
  std::vector<int64_t> encoder_channels{32, 64, 128, 256, 512};
  std::vector<int64_t> middle_channels{4, 8, 16, 32, 64};
  std::vector<int64_t> block_depths{1, 2, 2, 6, 2};
  std::vector<int64_t> sampling_ratios{1, 4, 4, 4, 4};
  std::vector<int64_t> k_neighbors{16, 16, 16, 16, 16};
  double sigma = 1.2;
  int64_t max_global_points = 4096;
  int64_t input_channels = 3;
  int64_t num_classes = 0;

  void validate() const;  // throws ValidationError naming the bad field
};

void to_json(nlohmann::json& j, const NetworkSpec& spec);
void from_json(const nlohmann::json& j, NetworkSpec& spec);

// residual wrappers giving every aggregation layer the same shape contract
struct ConvLayer {
  Linear pre;
  Linear post;
  FPConvParams conv;
};
struct AttnLayer {
  FPTransformerBlock block;
};
struct MlpLayer {
  Linear pre;
  Linear post;
  Mlp mlp;
};
using EncoderLayer = std::variant<ConvLayer, AttnLayer, MlpLayer>;

struct SadsStage {
  SADSParams params;
};
struct TdsStage {
  TDSParams params;
};
struct GdsStage {
  Linear adapter;  // pointwise channel map after the parameter-free pooling
  int64_t k = 0;
  int64_t ratio = 0;
};
using SamplingStage = std::variant<SadsStage, TdsStage, GdsStage>;

struct DecoderStage {
  Linear reduce;  // concat(upsampled, skip) -> stage channels
  EncoderLayer layer;
};

struct Network {
  NetworkSpec spec;
  Mlp stem;
  std::vector<std::vector<EncoderLayer>> encoder;  // [stage][depth]
  std::vector<SamplingStage> sampling;             // stage s uses sampling[s-1]
  std::vector<DecoderStage> decoder;               // index s covers stage s
  Mlp cls_head;
  Linear out_head;

  static Network build(const NetworkSpec& spec, Rng& rng);

  // classification: [1, num_classes]; segmentation: [N, num_classes];
  // normals: [N, 3] rows scaled to unit length
  Tensor forward(const Tensor& positions, const Tensor& features) const;
  Tensor forward(const PointCloud& cloud) const;  // features fall back to xyz

  std::vector<NamedParam> named_parameters() const;
  int64_t parameter_count() const;
};

// JSON header line (spec + tensor manifest) followed by raw f64 payloads in
// manifest order; round-trips bit-exactly on little-endian hosts.
void save_checkpoint(const Network& net, const std::string& path);
Network load_checkpoint(const std::string& path);

}  // namespace fpenc
