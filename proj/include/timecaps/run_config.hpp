#pragma once

// Experiment description read by the command-line tool: model and training
// hyperparameters plus where the data comes from and how it is prepared.
//
//   { "model": {...}, "train": {...},
//     "data": { "path": "beats.csv", "normalization": "zscore",
//               "test_fraction": 0.333, "split_seed": 7, "min_class_count": 0,
//               "synthetic": { "per_class": 300, "noise": 0.1, "seed": 7 } } }
//
// Without "data.path" the synthetic waveform task is used.

#include <cstdint>
#include <fstream>
#include <optional>
#include <string>

#include "timecaps/config_io.hpp"
#include "timecaps/data.hpp"
#include "timecaps/error.hpp"
#include "timecaps/model.hpp"
#include "timecaps/training.hpp"

namespace timecaps {

struct SyntheticSpec {
  std::size_t per_class = 300;
  double noise = 0.1;
  std::uint64_t seed = 7;
};

struct DataConfig {
  std::optional<std::string> path;
  NormMode normalization = NormMode::zscore;
  double test_fraction = 1.0 / 3.0;
  std::optional<std::uint64_t> split_seed;  // defaults to the training seed
  std::size_t min_class_count = 0;
  SyntheticSpec synthetic;
};

struct RunConfig {
  ModelConfig model;
  TrainConfig train;
  DataConfig data;

  std::uint64_t split_seed() const { return data.split_seed.value_or(train.seed); }

  void validate() const {
    model.validate();
    train.validate();
    if (!(data.test_fraction > 0.0 && data.test_fraction < 1.0)) {
      throw ConfigError("data.test_fraction must lie in (0, 1)");
    }
    if (!data.path) {
      if (data.synthetic.per_class == 0) throw ConfigError("data.synthetic.per_class must be positive");
      if (!(data.synthetic.noise >= 0.0)) throw ConfigError("data.synthetic.noise must be non-negative");
      if (model.num_classes < 3) throw ConfigError("the synthetic task needs num_classes >= 3");
      if (model.L < 8) throw ConfigError("the synthetic task needs L >= 8");
    }
  }
};

inline json data_config_to_json(const DataConfig& d) {
  json j = {{"normalization", to_string(d.normalization)},
            {"test_fraction", d.test_fraction},
            {"min_class_count", d.min_class_count},
            {"synthetic", {{"per_class", d.synthetic.per_class}, {"noise", d.synthetic.noise}, {"seed", d.synthetic.seed}}}};
  if (d.path) j["path"] = *d.path;
  if (d.split_seed) j["split_seed"] = *d.split_seed;
  return j;
}

inline DataConfig data_config_from_json(const json& j, DataConfig d = {}) {
  const std::string where = "data config";
  detail::reject_unknown(j, {"path", "normalization", "test_fraction", "split_seed", "min_class_count", "synthetic"},
                         where);
  if (j.contains("path")) {
    std::string p;
    detail::read_opt(j, "path", p, where);
    d.path = p;
  }
  if (j.contains("normalization")) {
    std::string m;
    detail::read_opt(j, "normalization", m, where);
    d.normalization = parse_norm_mode(m);
  }
  detail::read_opt(j, "test_fraction", d.test_fraction, where);
  if (j.contains("split_seed")) {
    std::uint64_t s = 0;
    detail::read_opt(j, "split_seed", s, where);
    d.split_seed = s;
  }
  detail::read_opt(j, "min_class_count", d.min_class_count, where);
  if (j.contains("synthetic")) {
    const json& s = j.at("synthetic");
    detail::reject_unknown(s, {"per_class", "noise", "seed"}, "data.synthetic");
    detail::read_opt(s, "per_class", d.synthetic.per_class, "data.synthetic");
    detail::read_opt(s, "noise", d.synthetic.noise, "data.synthetic");
    detail::read_opt(s, "seed", d.synthetic.seed, "data.synthetic");
  }
  return d;
}

inline json run_config_to_json(const RunConfig& c) {
  return {{"model", model_config_to_json(c.model)},
          {"train", train_config_to_json(c.train)},
          {"data", data_config_to_json(c.data)}};
}

inline RunConfig run_config_from_json(const json& j) {
  detail::reject_unknown(j, {"model", "train", "data"}, "run config");
  RunConfig c;
  if (j.contains("model")) c.model = model_config_from_json(j.at("model"));
  if (j.contains("train")) c.train = train_config_from_json(j.at("train"));
  if (j.contains("data")) c.data = data_config_from_json(j.at("data"));
  return c;
}

inline RunConfig load_run_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config " + path);
  json j;
  try {
    j = json::parse(in);
  } catch (const json::exception& e) {
    throw ConfigError(path + ": invalid JSON: " + e.what());
  }
  try {
    return run_config_from_json(j);
  } catch (const ConfigError& e) {
    throw ConfigError(path + ": " + e.detail());
  }
}

// Loads (or synthesizes) the raw dataset described by the config and checks
// it against the model. Normalization is left to the caller.
inline Dataset load_dataset(const RunConfig& c, std::vector<std::string>* warnings = nullptr) {
  Dataset d = c.data.path ? load_csv(*c.data.path)
                          : synth_waveforms(c.data.synthetic.per_class, c.model.L, c.data.synthetic.noise,
                                            c.data.synthetic.seed);
  if (c.data.min_class_count > 0) {
    const std::size_t before = d.num_classes;
    d = filter_min_count(d, c.data.min_class_count);
    if (warnings && d.num_classes != before) {
      warnings->push_back("dropped " + std::to_string(before - d.num_classes) + " classes with fewer than " +
                          std::to_string(c.data.min_class_count) + " examples");
    }
    if (d.empty()) throw FormatError("no class has at least " + std::to_string(c.data.min_class_count) + " examples");
  }
  if (d.L != c.model.L) {
    throw ConfigError("dataset signals have length " + std::to_string(d.L) + " but the model expects L=" +
                      std::to_string(c.model.L));
  }
  if (d.num_classes > c.model.num_classes) {
    throw ConfigError("dataset has " + std::to_string(d.num_classes) + " classes but the model has num_classes=" +
                      std::to_string(c.model.num_classes));
  }
  return d;
}

}  // namespace timecaps
