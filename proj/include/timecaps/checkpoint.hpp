#pragma once

// Checkpoint file: one line of JSON (model config, metadata and a tensor
// manifest of name, shape and byte offset) followed by the raw parameter
// data as little-endian float64. Loading validates everything before any
// tensor is handed out.

#include <bit>
#include <cstdint>
#include <fstream>
#include <iterator>
#include <string>
#include <string_view>
#include <vector>

#include "timecaps/config_io.hpp"
#include "timecaps/data.hpp"
#include "timecaps/error.hpp"
#include "timecaps/model.hpp"

namespace timecaps {

inline constexpr const char* kCheckpointFormat = "timecaps-checkpoint";
inline constexpr int kCheckpointVersion = 1;

struct CheckpointMeta {
  NormMode normalization = NormMode::zscore;
  std::vector<std::string> class_names;

  friend bool operator==(const CheckpointMeta&, const CheckpointMeta&) = default;
};

struct Checkpoint {
  ModelConfig config;
  ModelParams params;
  CheckpointMeta meta;
};

namespace checkpoint_detail {

inline void put_f64(std::string& out, double v) {
  auto bits = std::bit_cast<std::uint64_t>(v);
  for (int b = 0; b < 8; ++b) out.push_back(static_cast<char>((bits >> (8 * b)) & 0xff));
}

inline double get_f64(const unsigned char* p) {
  std::uint64_t bits = 0;
  for (int b = 0; b < 8; ++b) bits |= static_cast<std::uint64_t>(p[b]) << (8 * b);
  return std::bit_cast<double>(bits);
}

}  // namespace checkpoint_detail

inline std::string serialize_checkpoint(const Checkpoint& ck) {
  check_param_shapes(ck.params, ck.config);
  json manifest = json::array();
  std::size_t offset = 0;
  ck.params.for_each([&](const std::string& name, const Tensor& t) {
    manifest.push_back({{"name", name}, {"shape", t.shape()}, {"offset", offset}});
    offset += t.numel() * sizeof(double);
  });
  const json header = {{"format", kCheckpointFormat},
                       {"version", kCheckpointVersion},
                       {"model", model_config_to_json(ck.config)},
                       {"normalization", to_string(ck.meta.normalization)},
                       {"class_names", ck.meta.class_names},
                       {"data_bytes", offset},
                       {"tensors", manifest}};
  std::string out = header.dump();
  out.push_back('\n');
  out.reserve(out.size() + offset);
  ck.params.for_each([&](const std::string&, const Tensor& t) {
    for (double v : t.data()) checkpoint_detail::put_f64(out, v);
  });
  return out;
}

inline Checkpoint parse_checkpoint(std::string_view bytes) {
  const auto nl = bytes.find('\n');
  if (nl == std::string_view::npos) throw CheckpointError("missing header line");
  json header;
  try {
    header = json::parse(bytes.substr(0, nl));
  } catch (const json::exception& e) {
    throw CheckpointError(std::string("header is not valid JSON: ") + e.what());
  }
  if (!header.is_object() || header.value("format", "") != kCheckpointFormat) {
    throw CheckpointError("not a timecaps checkpoint");
  }
  if (header.value("version", 0) != kCheckpointVersion) {
    throw CheckpointError("unsupported checkpoint version");
  }

  Checkpoint ck;
  try {
    ck.config = model_config_from_json(header.at("model"));
    ck.config.validate();
    ck.meta.normalization = parse_norm_mode(header.at("normalization").get<std::string>());
    ck.meta.class_names = header.at("class_names").get<std::vector<std::string>>();
  } catch (const json::exception& e) {
    throw CheckpointError(std::string("bad header field: ") + e.what());
  } catch (const ConfigError& e) {
    throw CheckpointError(e.detail());
  }

  const json& manifest = header.contains("tensors") ? header.at("tensors") : json();
  const auto specs = param_specs(ck.config);
  if (!manifest.is_array() || manifest.size() != specs.size()) {
    throw CheckpointError("manifest lists " + std::to_string(manifest.is_array() ? manifest.size() : 0) +
                          " tensors, model needs " + std::to_string(specs.size()));
  }
  const std::string_view data = bytes.substr(nl + 1);
  std::size_t expected_offset = 0;
  for (std::size_t i = 0; i < specs.size(); ++i) {
    const json& entry = manifest[i];
    std::string name;
    Shape shape;
    std::size_t offset = 0;
    try {
      name = entry.at("name").get<std::string>();
      shape = entry.at("shape").get<Shape>();
      offset = entry.at("offset").get<std::size_t>();
    } catch (const json::exception&) {
      throw CheckpointError("malformed manifest entry " + std::to_string(i));
    }
    if (name != specs[i].name) {
      throw CheckpointError("tensor " + std::to_string(i) + " is '" + name + "', expected '" + specs[i].name + "'");
    }
    if (shape != specs[i].shape) {
      throw CheckpointError("tensor '" + name + "' has shape " + to_string(shape) + ", expected " +
                            to_string(specs[i].shape));
    }
    if (offset != expected_offset) throw CheckpointError("tensor '" + name + "' has a bad offset");
    expected_offset += numel(shape) * sizeof(double);
  }
  if (header.value("data_bytes", std::size_t{0}) != expected_offset || data.size() != expected_offset) {
    throw CheckpointError("payload holds " + std::to_string(data.size()) + " bytes, manifest needs " +
                          std::to_string(expected_offset));
  }

  const auto* raw = reinterpret_cast<const unsigned char*>(data.data());
  std::size_t idx = 0;
  std::size_t pos = 0;
  ck.params.for_each([&](const std::string&, Tensor& t) {
    t = Tensor(specs[idx++].shape);
    for (double& v : t.data()) {
      v = checkpoint_detail::get_f64(raw + pos);
      pos += sizeof(double);
    }
  });
  return ck;
}

inline void save_checkpoint(const std::string& path, const Checkpoint& ck) {
  const std::string bytes = serialize_checkpoint(ck);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw CheckpointError("cannot write " + path);
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw CheckpointError("failed writing " + path);
}

inline Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CheckpointError("cannot open " + path);
  const std::string bytes{std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
  try {
    return parse_checkpoint(bytes);
  } catch (const CheckpointError& e) {
    throw CheckpointError(path + ": " + e.detail());
  }
}

}  // namespace timecaps
