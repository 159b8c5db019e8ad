#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "slicemoa/attention.hpp"
#include "slicemoa/cache.hpp"
#include "slicemoa/error.hpp"
#include "slicemoa/model.hpp"
#include "slicemoa/slicing.hpp"

namespace slicemoa {

/// Checkpoint layout (little-endian):
///
///   bytes 0..3  magic "SLCK"
///   u32         format version (1)
///   u32         tensor count
///   per tensor: u32 name length, name bytes, u8 dtype (1 = f64), u32 rank,
///               rank x u32 extents, product(extents) x f64 payload
inline constexpr char kCheckpointMagic[4] = {'S', 'L', 'C', 'K'};
inline constexpr std::uint32_t kCheckpointVersion = 1;
inline constexpr std::uint8_t kDtypeF64 = 1;

struct NamedTensor {
  std::string name;
  Shape shape;
  std::vector<double> values;
};

inline std::string encode_checkpoint(const std::vector<Parameter>& params) {
  std::string out(kCheckpointMagic, 4);
  detail::put_le<std::uint32_t>(out, kCheckpointVersion);
  detail::put_le<std::uint32_t>(out, static_cast<std::uint32_t>(params.size()));
  for (const auto& p : params) {
    detail::put_le<std::uint32_t>(out, static_cast<std::uint32_t>(p.name.size()));
    out += p.name;
    out.push_back(static_cast<char>(kDtypeF64));
    detail::put_le<std::uint32_t>(out, static_cast<std::uint32_t>(p.value.dim()));
    for (auto extent : p.value.shape()) detail::put_le<std::uint32_t>(out, static_cast<std::uint32_t>(extent));
    for (double v : p.value.data()) detail::put_le<std::uint64_t>(out, std::bit_cast<std::uint64_t>(v));
  }
  return out;
}

inline std::vector<NamedTensor> decode_checkpoint(std::string_view bytes) {
  auto need = [&](std::size_t pos, std::size_t n) {
    if (pos + n > bytes.size()) throw DataError("checkpoint: truncated file");
  };
  if (bytes.size() < 12 || std::memcmp(bytes.data(), kCheckpointMagic, 4) != 0) {
    throw DataError("checkpoint: bad magic (expected \"SLCK\")");
  }
  const auto version = detail::get_le<std::uint32_t>(bytes, 4);
  if (version != kCheckpointVersion) throw DataError("checkpoint: unsupported version " + std::to_string(version));
  const auto count = detail::get_le<std::uint32_t>(bytes, 8);
  std::size_t pos = 12;
  std::vector<NamedTensor> out;
  for (std::uint32_t i = 0; i < count; ++i) {
    NamedTensor t;
    need(pos, 4);
    const std::size_t len = detail::get_le<std::uint32_t>(bytes, pos);
    pos += 4;
    need(pos, len + 5);
    t.name = std::string(bytes.substr(pos, len));
    pos += len;
    const auto dtype = static_cast<std::uint8_t>(bytes[pos++]);
    if (dtype != kDtypeF64) throw DataError("checkpoint: tensor '" + t.name + "' has unsupported dtype");
    const std::size_t rank = detail::get_le<std::uint32_t>(bytes, pos);
    pos += 4;
    need(pos, rank * 4);
    for (std::size_t r = 0; r < rank; ++r, pos += 4) t.shape.push_back(detail::get_le<std::uint32_t>(bytes, pos));
    const std::size_t n = shape_numel(t.shape);
    need(pos, n * 8);
    t.values.resize(n);
    for (double& v : t.values) {
      v = std::bit_cast<double>(detail::get_le<std::uint64_t>(bytes, pos));
      pos += 8;
    }
    out.push_back(std::move(t));
  }
  if (pos != bytes.size()) throw DataError("checkpoint: trailing bytes after tensor table");
  return out;
}

/// Copies stored tensors into the model; names and shapes must match exactly.
inline void load_parameters(SliceModel& model, const std::vector<NamedTensor>& tensors) {
  auto& params = model.parameters();
  if (tensors.size() != params.size()) {
    throw ContractError("checkpoint holds " + std::to_string(tensors.size()) + " tensors, model expects " +
                        std::to_string(params.size()));
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (tensors[i].name != params[i].name || tensors[i].shape != params[i].value.shape()) {
      throw ContractError("checkpoint tensor '" + tensors[i].name + "' " + to_string(tensors[i].shape) +
                          " does not match model parameter '" + params[i].name + "' " +
                          to_string(params[i].value.shape()));
    }
    auto dst = params[i].value.mutable_data();
    std::copy(tensors[i].values.begin(), tensors[i].values.end(), dst.begin());
  }
}

/// Everything needed to rebuild a model and interpret its inputs and outputs.
struct ModelMetadata {
  ModelConfig config;
  std::vector<SliceSpec> slices;
  SliceOptions slice_options;
  std::vector<std::string> labels;
  /// "hashing:<d>" or "cache".
  std::string backbone;
};

inline nlohmann::json to_json(const MoAConfig& m) {
  return {{"phi", std::string(to_string(m.phi))},
          {"combine_op", std::string(to_string(m.combine_op))},
          {"tau", m.tau},
          {"expert_confidence", m.use_expert_confidence},
          {"stochastic_eval", m.stochastic_eval}};
}

inline MoAConfig moa_from_json(const nlohmann::json& j) {
  MoAConfig m;
  m.phi = parse_phi(j.at("phi").get<std::string>());
  m.combine_op = parse_combine_op(j.at("combine_op").get<std::string>());
  m.tau = j.at("tau").get<double>();
  m.use_expert_confidence = j.at("expert_confidence").get<bool>();
  m.stochastic_eval = j.at("stochastic_eval").get<bool>();
  return m;
}

inline nlohmann::json to_json(const ModelMetadata& meta) {
  nlohmann::json slices = nlohmann::json::array();
  for (const auto& s : meta.slices) slices.push_back({{"name", s.name}, {"builtin", s.builtin}, {"params", s.params}});
  const ModelConfig& c = meta.config;
  return {{"format", "slicemoa-model"},
          {"version", 1},
          {"model_kind", std::string(to_string(c.kind))},
          {"d", c.input_dim},
          {"k", c.num_slices},
          {"C", c.num_classes},
          {"hidden", c.hidden},
          {"dropout", c.dropout},
          {"bias", c.bias},
          {"moa", to_json(c.moa)},
          {"slices", slices},
          {"slice_case_insensitive", meta.slice_options.case_insensitive},
          {"labels", meta.labels},
          {"backbone", meta.backbone}};
}

inline ModelMetadata metadata_from_json(const nlohmann::json& j) {
  try {
    ModelMetadata meta;
    ModelConfig& c = meta.config;
    c.kind = parse_model_kind(j.at("model_kind").get<std::string>());
    c.input_dim = j.at("d").get<std::size_t>();
    c.num_slices = j.at("k").get<std::size_t>();
    c.num_classes = j.at("C").get<std::size_t>();
    c.hidden = j.at("hidden").get<std::size_t>();
    c.dropout = j.at("dropout").get<double>();
    c.bias = j.at("bias").get<bool>();
    c.moa = moa_from_json(j.at("moa"));
    for (const auto& s : j.at("slices")) {
      meta.slices.push_back({s.at("name").get<std::string>(), s.at("builtin").get<std::string>(),
                             s.at("params").get<SliceParams>()});
    }
    meta.slice_options.case_insensitive = j.at("slice_case_insensitive").get<bool>();
    meta.labels = j.at("labels").get<std::vector<std::string>>();
    meta.backbone = j.at("backbone").get<std::string>();
    if (meta.slices.size() + 1 != c.num_slices) throw DataError("model metadata: k does not match slice list");
    return meta;
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("model metadata: ") + e.what());
  }
}

inline std::filesystem::path metadata_path(const std::filesystem::path& checkpoint) {
  std::filesystem::path p = checkpoint;
  p += ".meta.json";
  return p;
}

/// Writes `<path>` (tensor table) and `<path>.meta.json` (sidecar metadata).
inline void save_checkpoint(const std::filesystem::path& path, const SliceModel& model, const ModelMetadata& meta) {
  {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw DataError("cannot write checkpoint '" + path.string() + "'");
    const std::string bytes = encode_checkpoint(model.parameters());
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  }
  std::ofstream meta_out(metadata_path(path), std::ios::binary | std::ios::trunc);
  if (!meta_out) throw DataError("cannot write checkpoint metadata for '" + path.string() + "'");
  meta_out << to_json(meta).dump(2) << '\n';
}

struct LoadedModel {
  ModelMetadata meta;
  SliceModel model;
};

inline LoadedModel load_checkpoint(const std::filesystem::path& path) {
  std::ifstream meta_in(metadata_path(path), std::ios::binary);
  if (!meta_in) throw DataError("cannot open checkpoint metadata '" + metadata_path(path).string() + "'");
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(meta_in);
  } catch (const nlohmann::json::exception& e) {
    throw DataError("checkpoint metadata: " + std::string(e.what()));
  }
  ModelMetadata meta = metadata_from_json(j);
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open checkpoint '" + path.string() + "'");
  const std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  Rng unused(0);
  SliceModel model(meta.config, unused);
  load_parameters(model, decode_checkpoint(bytes));
  return {std::move(meta), std::move(model)};
}

}  // namespace slicemoa
