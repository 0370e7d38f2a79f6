#include "fpenc/network.hpp"

#include <algorithm>
#include <fstream>
#include <initializer_list>
#include <utility>

namespace fpenc {

namespace {

template <typename T>
T enum_from_name(const std::string& s,
                 std::initializer_list<std::pair<const char*, T>> table,
                 const char* what) {
  for (const auto& [name, value] : table) {
    if (s == name) return value;
  }
  throw ValidationError(std::string(what) + ": unknown value '" + s + "'");
}

}  // namespace

const char* task_name(Task t) {
  switch (t) {
    case Task::kClassification: return "classification";
    case Task::kSegmentation: return "segmentation";
    case Task::kNormals: return "normal-estimation";
  }
  return "?";
}

const char* layer_kind_name(LayerKind k) {
  switch (k) {
    case LayerKind::kFPConv: return "fpconv";
    case LayerKind::kFPTransformer: return "fptransformer";
    case LayerKind::kMlpBaseline: return "mlp-baseline";
  }
  return "?";
}

const char* sampling_block_name(SamplingBlockKind k) {
  switch (k) {
    case SamplingBlockKind::kSADS: return "sads";
    case SamplingBlockKind::kTDS: return "tds";
    case SamplingBlockKind::kGDS: return "gds";
  }
  return "?";
}

const char* pos_variant_name(PosVariant v) {
  switch (v) {
    case PosVariant::kFull: return "full";
    case PosVariant::kLocal: return "local";
    case PosVariant::kGlobal: return "global";
  }
  return "?";
}

const char* pos_encoder_name(PosEncoder e) {
  switch (e) {
    case PosEncoder::kLearnableMlp: return "mlp";
    case PosEncoder::kSinusoidal: return "sinusoidal";
  }
  return "?";
}

Task task_from_name(const std::string& s) {
  return enum_from_name<Task>(s,
                              {{"classification", Task::kClassification},
                               {"segmentation", Task::kSegmentation},
                               {"normal-estimation", Task::kNormals}},
                              "task");
}

LayerKind layer_kind_from_name(const std::string& s) {
  return enum_from_name<LayerKind>(
      s,
      {{"fpconv", LayerKind::kFPConv},
       {"fptransformer", LayerKind::kFPTransformer},
       {"mlp-baseline", LayerKind::kMlpBaseline}},
      "layer_kind");
}

SamplingBlockKind sampling_block_from_name(const std::string& s) {
  return enum_from_name<SamplingBlockKind>(s,
                                           {{"sads", SamplingBlockKind::kSADS},
                                            {"tds", SamplingBlockKind::kTDS},
                                            {"gds", SamplingBlockKind::kGDS}},
                                           "sampling_block");
}

PosVariant pos_variant_from_name(const std::string& s) {
  return enum_from_name<PosVariant>(s,
                                    {{"full", PosVariant::kFull},
                                     {"local", PosVariant::kLocal},
                                     {"global", PosVariant::kGlobal}},
                                    "pos_variant");
}

PosEncoder pos_encoder_from_name(const std::string& s) {
  return enum_from_name<PosEncoder>(
      s,
      {{"mlp", PosEncoder::kLearnableMlp},
       {"sinusoidal", PosEncoder::kSinusoidal}},
      "pos_encoder");
}

void NetworkSpec::validate() const {
  const size_t stages = static_cast<size_t>(stage_count);
  if (stage_count < 1) {
    throw ValidationError("stage_count: must be >= 1");
  }
  auto check_len = [&](const std::vector<int64_t>& v, const char* field) {
    if (v.size() != stages) {
      throw ValidationError(std::string(field) + ": expected " +
                            std::to_string(stage_count) + " entries, got " +
                            std::to_string(v.size()));
    }
  };
  check_len(encoder_channels, "encoder_channels");
  check_len(middle_channels, "middle_channels");
  check_len(block_depths, "block_depths");
  check_len(sampling_ratios, "sampling_ratios");
  check_len(k_neighbors, "k_neighbors");
  for (size_t s = 0; s < stages; ++s) {
    if (encoder_channels[s] < 1) {
      throw ValidationError("encoder_channels[" + std::to_string(s) +
                            "]: must be >= 1");
    }
    if (s > 0 && encoder_channels[s] < encoder_channels[s - 1]) {
      throw ValidationError("encoder_channels[" + std::to_string(s) +
                            "]: must be non-decreasing");
    }
    if (middle_channels[s] < 1 ||
        middle_channels[s] > encoder_channels[s]) {
      throw ValidationError("middle_channels[" + std::to_string(s) +
                            "]: must be in [1, encoder_channels]");
    }
    if (layer_kind == LayerKind::kFPTransformer &&
        encoder_channels[s] % middle_channels[s] != 0) {
      throw ValidationError("middle_channels[" + std::to_string(s) + "]=" +
                            std::to_string(middle_channels[s]) +
                            ": must divide encoder_channels[" +
                            std::to_string(s) + "]=" +
                            std::to_string(encoder_channels[s]));
    }
    if (block_depths[s] < 0) {
      throw ValidationError("block_depths[" + std::to_string(s) +
                            "]: must be >= 0");
    }
    if (sampling_ratios[s] < 1) {
      throw ValidationError("sampling_ratios[" + std::to_string(s) +
                            "]: must be >= 1");
    }
    if (k_neighbors[s] < 1) {
      throw ValidationError("k_neighbors[" + std::to_string(s) +
                            "]: must be >= 1");
    }
  }
  if (!sampling_ratios.empty() && sampling_ratios[0] != 1) {
    throw ValidationError("sampling_ratios[0]: must be 1 (no downsampling "
                          "before the first stage)");
  }
  if (sigma <= 0.0) {
    throw ValidationError("sigma: must be > 0");
  }
  if (max_global_points < 0) {
    throw ValidationError("max_global_points: must be >= 0");
  }
  if (input_channels < 1) {
    throw ValidationError("input_channels: must be >= 1");
  }
  if (task != Task::kNormals && num_classes < 2) {
    throw ValidationError("num_classes: must be >= 2 for " +
                          std::string(task_name(task)));
  }
}

void to_json(nlohmann::json& j, const NetworkSpec& spec) {
  j = nlohmann::json{{"task", task_name(spec.task)},
                     {"layer_kind", layer_kind_name(spec.layer_kind)},
                     {"sampling_block", sampling_block_name(spec.sampling_block)},
                     {"pos_variant", pos_variant_name(spec.pos_variant)},
                     {"pos_encoder", pos_encoder_name(spec.pos_encoder)},
                     {"stage_count", spec.stage_count},
                     {"encoder_channels", spec.encoder_channels},
                     {"middle_channels", spec.middle_channels},
                     {"block_depths", spec.block_depths},
                     {"sampling_ratios", spec.sampling_ratios},
                     {"k_neighbors", spec.k_neighbors},
                     {"sigma", spec.sigma},
                     {"max_global_points", spec.max_global_points},
                     {"input_channels", spec.input_channels},
                     {"num_classes", spec.num_classes}};
}

void from_json(const nlohmann::json& j, NetworkSpec& spec) {
  spec.task = task_from_name(j.value("task", task_name(spec.task)));
  spec.layer_kind = layer_kind_from_name(
      j.value("layer_kind", layer_kind_name(spec.layer_kind)));
  spec.sampling_block = sampling_block_from_name(
      j.value("sampling_block", sampling_block_name(spec.sampling_block)));
  spec.pos_variant = pos_variant_from_name(
      j.value("pos_variant", pos_variant_name(spec.pos_variant)));
  spec.pos_encoder = pos_encoder_from_name(
      j.value("pos_encoder", pos_encoder_name(spec.pos_encoder)));
  spec.stage_count = j.value("stage_count", spec.stage_count);
  spec.encoder_channels = j.value("encoder_channels", spec.encoder_channels);
  spec.middle_channels = j.value("middle_channels", spec.middle_channels);
  spec.block_depths = j.value("block_depths", spec.block_depths);
  spec.sampling_ratios = j.value("sampling_ratios", spec.sampling_ratios);
  spec.k_neighbors = j.value("k_neighbors", spec.k_neighbors);
  spec.sigma = j.value("sigma", spec.sigma);
  spec.max_global_points = j.value("max_global_points", spec.max_global_points);
  spec.input_channels = j.value("input_channels", spec.input_channels);
  spec.num_classes = j.value("num_classes", spec.num_classes);
}

namespace {

EncoderLayer make_layer(const NetworkSpec& spec, int64_t stage, Rng& rng) {
  const int64_t c = spec.encoder_channels[stage];
  const int64_t m = spec.middle_channels[stage];
  switch (spec.layer_kind) {
    case LayerKind::kFPConv:
      return ConvLayer{Linear(c, c, rng), Linear(c, c, rng),
                       FPConvParams::make(c, m, c, spec.sigma, rng,
                                          Aggregator::kMax)};
    case LayerKind::kFPTransformer:
      return AttnLayer{FPTransformerBlock::make(c, m, rng, spec.pos_variant,
                                                spec.pos_encoder)};
    case LayerKind::kMlpBaseline:
      return MlpLayer{Linear(c, c, rng), Linear(c, c, rng), Mlp(c, c, c, rng)};
  }
  throw ParamError("make_layer: bad layer kind");
}

void collect_layer(const EncoderLayer& layer, const std::string& prefix,
                   std::vector<NamedParam>& out) {
  std::visit(
      [&](const auto& l) {
        using T = std::decay_t<decltype(l)>;
        if constexpr (std::is_same_v<T, ConvLayer>) {
          l.pre.collect(prefix + ".pre", out);
          l.post.collect(prefix + ".post", out);
          l.conv.collect(prefix + ".conv", out);
        } else if constexpr (std::is_same_v<T, AttnLayer>) {
          l.block.collect(prefix, out);
        } else {
          l.pre.collect(prefix + ".pre", out);
          l.post.collect(prefix + ".post", out);
          l.mlp.collect(prefix + ".mlp", out);
        }
      },
      layer);
}

Tensor apply_layer(const EncoderLayer& layer, const Tensor& features,
                   const Tensor& positions, const NeighborIndex& nbr,
                   const LocalCorrelation* corr) {
  return std::visit(
      [&](const auto& l) -> Tensor {
        using T = std::decay_t<decltype(l)>;
        if constexpr (std::is_same_v<T, ConvLayer>) {
          Tensor inner = l.pre(features);
          Tensor mixed = fpconv_forward_efficient(inner, *corr, nbr, l.conv);
          return add(features, l.post(mixed));
        } else if constexpr (std::is_same_v<T, AttnLayer>) {
          return l.block(features, positions, nbr);
        } else {
          Tensor inner = l.pre(features);
          Tensor pooled = mlp_baseline_layer(inner, nbr, l.mlp);
          return add(features, l.post(pooled));
        }
      },
      layer);
}

struct SampleOut {
  Tensor positions;
  Tensor features;
};

// group size clamps to the shrinking cloud so deep stages stay legal
SampleOut apply_sampling(const SamplingStage& stage, const Tensor& features,
                         const Tensor& positions) {
  const int64_t seed = centroid_farthest_index(positions);
  const int64_t n = positions.dim(0);
  return std::visit(
      [&](const auto& s) -> SampleOut {
        using T = std::decay_t<decltype(s)>;
        if constexpr (std::is_same_v<T, SadsStage>) {
          SADSParams p = s.params;  // shares the tensors, clamps only k
          p.k = std::min(p.k, n);
          DownsampleResult r = sads_downsample(features, positions, p, seed);
          return SampleOut{r.positions, r.features};
        } else if constexpr (std::is_same_v<T, TdsStage>) {
          TDSParams p = s.params;
          p.k = std::min(p.k, n);
          DownsampleResult r = tds_downsample(features, positions, p, seed);
          return SampleOut{r.positions, r.features};
        } else {
          DownsampleResult r = gds_downsample(features, positions,
                                              std::min(s.k, n), s.ratio, seed);
          return SampleOut{r.positions, s.adapter(r.features)};
        }
      },
      stage);
}

}  // namespace

Network Network::build(const NetworkSpec& spec, Rng& rng) {
  spec.validate();
  Network net;
  net.spec = spec;
  const int64_t stages = spec.stage_count;
  const int64_t c0 = spec.encoder_channels[0];
  net.stem = Mlp(spec.input_channels, c0, c0, rng);
  net.encoder.resize(static_cast<size_t>(stages));
  for (int64_t s = 0; s < stages; ++s) {
    for (int64_t d = 0; d < spec.block_depths[s]; ++d) {
      net.encoder[s].push_back(make_layer(spec, s, rng));
    }
    if (s == 0) continue;
    const int64_t c_in = spec.encoder_channels[s - 1];
    const int64_t c_out = spec.encoder_channels[s];
    const int64_t k = spec.k_neighbors[s];
    const int64_t ratio = spec.sampling_ratios[s];
    switch (spec.sampling_block) {
      case SamplingBlockKind::kSADS:
        net.sampling.push_back(SadsStage{SADSParams::make(
            c_in, c_out, k, ratio, rng, spec.pos_variant, spec.pos_encoder)});
        break;
      case SamplingBlockKind::kTDS:
        net.sampling.push_back(
            TdsStage{TDSParams::make(c_in, c_out, k, ratio, rng)});
        break;
      case SamplingBlockKind::kGDS:
        net.sampling.push_back(GdsStage{Linear(c_in, c_out, rng), k, ratio});
        break;
    }
  }
  if (spec.task == Task::kClassification) {
    const int64_t top = spec.encoder_channels[stages - 1];
    net.cls_head = Mlp(top, top, spec.num_classes, rng);
  } else {
    for (int64_t s = 0; s + 1 < stages; ++s) {
      const int64_t coarse = spec.encoder_channels[s + 1];
      const int64_t fine = spec.encoder_channels[s];
      net.decoder.push_back(
          DecoderStage{Linear(coarse + fine, fine, rng), make_layer(spec, s, rng)});
    }
    const int64_t out_dims =
        spec.task == Task::kNormals ? 3 : spec.num_classes;
    net.out_head = Linear(c0, out_dims, rng);
  }
  return net;
}

Tensor Network::forward(const Tensor& positions, const Tensor& features) const {
  if (!positions.defined() || positions.ndim() != 2 || positions.dim(1) != 3 ||
      positions.dim(0) < 1) {
    throw ShapeError("network: positions must be nonempty [N,3]");
  }
  if (!features.defined() || features.ndim() != 2 ||
      features.dim(0) != positions.dim(0) ||
      features.dim(1) != spec.input_channels) {
    throw ShapeError("network: features must be [N," +
                     std::to_string(spec.input_channels) + "]");
  }
  const int64_t stages = spec.stage_count;
  const bool needs_corr = spec.layer_kind == LayerKind::kFPConv;
  const bool needs_decoder = spec.task != Task::kClassification;
  std::vector<Tensor> stage_pos(static_cast<size_t>(stages));
  std::vector<NeighborIndex> stage_nbr(static_cast<size_t>(stages));
  std::vector<Tensor> skip(static_cast<size_t>(stages));
  std::vector<LocalCorrelation> stage_corr(static_cast<size_t>(stages));

  Tensor pos = positions;
  Tensor f = stem(features);
  for (int64_t s = 0; s < stages; ++s) {
    if (s > 0) {
      SampleOut next = apply_sampling(sampling[static_cast<size_t>(s - 1)], f, pos);
      pos = next.positions;
      f = next.features;
    }
    const int64_t n = pos.dim(0);
    NeighborIndex nbr = knn(pos, pos, std::min<int64_t>(spec.k_neighbors[s], n),
                            true, iota_indices(n));
    LocalCorrelation corr;
    if (needs_corr) {
      GlobalCorrelation s1 =
          global_correlation(pos, spec.sigma, true, spec.max_global_points);
      corr = local_correlation(pos, nbr, s1);
    }
    for (const EncoderLayer& layer : encoder[static_cast<size_t>(s)]) {
      f = apply_layer(layer, f, pos, nbr, needs_corr ? &corr : nullptr);
    }
    stage_pos[static_cast<size_t>(s)] = pos;
    if (needs_decoder) {
      stage_nbr[static_cast<size_t>(s)] = std::move(nbr);
      skip[static_cast<size_t>(s)] = f;
      if (needs_corr) stage_corr[static_cast<size_t>(s)] = std::move(corr);
    }
  }

  if (spec.task == Task::kClassification) {
    Tensor pooled = reduce(f, 0, Reduce::kMax);
    Tensor logits = cls_head(reshape(pooled, {1, pooled.dim(0)}));
    return logits;
  }

  for (int64_t s = stages - 2; s >= 0; --s) {
    const size_t si = static_cast<size_t>(s);
    Tensor up = upsample_interpolate(stage_pos[si + 1], f, stage_pos[si]);
    Tensor cat = concat(up, skip[si], 1);
    Tensor red = decoder[si].reduce(cat);
    f = apply_layer(decoder[si].layer, red, stage_pos[si], stage_nbr[si],
                    needs_corr ? &stage_corr[si] : nullptr);
  }
  Tensor out = out_head(f);
  if (spec.task == Task::kNormals) {
    return normalize_rows(out);
  }
  return out;
}

Tensor Network::forward(const PointCloud& cloud) const {
  if (cloud.has_features()) {
    return forward(cloud.positions, cloud.features);
  }
  return forward(cloud.positions, cloud.positions);
}

std::vector<NamedParam> Network::named_parameters() const {
  std::vector<NamedParam> out;
  stem.collect("stem", out);
  for (size_t s = 0; s < encoder.size(); ++s) {
    for (size_t d = 0; d < encoder[s].size(); ++d) {
      collect_layer(encoder[s][d],
                    "enc" + std::to_string(s) + ".layer" + std::to_string(d),
                    out);
    }
  }
  for (size_t s = 0; s < sampling.size(); ++s) {
    const std::string prefix = "sample" + std::to_string(s + 1);
    std::visit(
        [&](const auto& st) {
          using T = std::decay_t<decltype(st)>;
          if constexpr (std::is_same_v<T, SadsStage>) {
            st.params.collect(prefix + ".sads", out);
          } else if constexpr (std::is_same_v<T, TdsStage>) {
            st.params.collect(prefix + ".tds", out);
          } else {
            st.adapter.collect(prefix + ".gds.adapter", out);
          }
        },
        sampling[s]);
  }
  for (size_t s = 0; s < decoder.size(); ++s) {
    const std::string prefix = "dec" + std::to_string(s);
    decoder[s].reduce.collect(prefix + ".reduce", out);
    collect_layer(decoder[s].layer, prefix + ".layer", out);
  }
  if (spec.task == Task::kClassification) {
    cls_head.collect("head", out);
  } else {
    out_head.collect("head", out);
  }
  return out;
}

int64_t Network::parameter_count() const {
  int64_t total = 0;
  for (const NamedParam& np : named_parameters()) {
    total += np.tensor.numel();
  }
  return total;
}

void save_checkpoint(const Network& net, const std::string& path) {
  std::vector<NamedParam> params = net.named_parameters();
  nlohmann::json manifest = nlohmann::json::array();
  int64_t offset = 0;
  for (const NamedParam& np : params) {
    manifest.push_back({{"name", np.name},
                        {"shape", np.tensor.shape()},
                        {"offset", offset}});
    offset += np.tensor.numel() * static_cast<int64_t>(sizeof(double));
  }
  nlohmann::json header{{"format", "fpenc-checkpoint-v1"},
                        {"spec", net.spec},
                        {"tensors", manifest}};
  std::ofstream out(path, std::ios::binary);
  if (!out) {
    throw ValidationError("checkpoint: cannot open '" + path + "' for writing");
  }
  out << header.dump() << '\n';
  for (const NamedParam& np : params) {
    auto vals = np.tensor.values();
    out.write(reinterpret_cast<const char*>(vals.data()),
              static_cast<std::streamsize>(vals.size() * sizeof(double)));
  }
  if (!out) {
    throw ValidationError("checkpoint: short write to '" + path + "'");
  }
}

Network load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) {
    throw ValidationError("checkpoint: cannot open '" + path + "'");
  }
  std::string header_line;
  if (!std::getline(in, header_line)) {
    throw ParseError("checkpoint: missing header line");
  }
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(header_line);
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("checkpoint: bad header: ") + e.what());
  }
  if (header.value("format", "") != "fpenc-checkpoint-v1") {
    throw ParseError("checkpoint: unknown format '" +
                     header.value("format", "") + "'");
  }
  NetworkSpec spec = header.at("spec").get<NetworkSpec>();
  Rng rng(0);
  Network net = Network::build(spec, rng);
  std::vector<NamedParam> params = net.named_parameters();
  const auto& manifest = header.at("tensors");
  if (manifest.size() != params.size()) {
    throw ParseError("checkpoint: manifest lists " +
                     std::to_string(manifest.size()) + " tensors, network has " +
                     std::to_string(params.size()));
  }
  const std::streampos payload_start = in.tellg();
  for (size_t i = 0; i < params.size(); ++i) {
    const auto& entry = manifest[i];
    if (entry.at("name").get<std::string>() != params[i].name) {
      throw ParseError("checkpoint: tensor " + std::to_string(i) + " is '" +
                       entry.at("name").get<std::string>() + "', expected '" +
                       params[i].name + "'");
    }
    if (entry.at("shape").get<Shape>() != params[i].tensor.shape()) {
      throw ParseError("checkpoint: shape mismatch for " + params[i].name);
    }
    in.seekg(payload_start +
             static_cast<std::streamoff>(entry.at("offset").get<int64_t>()));
    auto dst = params[i].tensor.mutable_values();
    in.read(reinterpret_cast<char*>(dst.data()),
            static_cast<std::streamsize>(dst.size() * sizeof(double)));
    if (!in) {
      throw ParseError("checkpoint: truncated payload for " + params[i].name);
    }
  }
  return net;
}

}  // namespace fpenc
