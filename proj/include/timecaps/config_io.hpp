#pragma once

// JSON (de)serialization of configuration structs. Unknown keys are rejected
// so a typo never silently falls back to a default.

#include <json.hpp>

#include <set>
#include <string>

#include "timecaps/error.hpp"
#include "timecaps/model.hpp"
#include "timecaps/training.hpp"

namespace timecaps {

using json = nlohmann::json;

namespace detail {

inline void reject_unknown(const json& j, const std::set<std::string>& known, const std::string& where) {
  if (!j.is_object()) throw ConfigError(where + " must be a JSON object");
  for (const auto& [key, _] : j.items()) {
    if (!known.count(key)) throw ConfigError("unknown key '" + key + "' in " + where);
  }
}

template <class T>
void read_opt(const json& j, const char* key, T& dst, const std::string& where) {
  if (!j.contains(key)) return;
  try {
    dst = j.at(key).get<T>();
  } catch (const json::exception&) {
    throw ConfigError("bad value for '" + std::string(key) + "' in " + where);
  }
}

}  // namespace detail

inline json model_config_to_json(const ModelConfig& c) {
  json deconv = json::array();
  for (const auto& d : c.decoder_deconv) deconv.push_back({d.channels, d.width, d.stride});
  return {{"L", c.L},         {"k", c.k},         {"g1", c.g1},       {"g2", c.g2},
          {"g3", c.g3},       {"g_b", c.g_b},     {"c_p", c.c_p},     {"a_p", c.a_p},
          {"c_sa", c.c_sa},   {"a_sa", c.a_sa},   {"c_b", c.c_b},     {"a_b", c.a_b},
          {"n", c.n},         {"c_sb", c.c_sb},   {"a_sb", c.a_sb},   {"a_sig", c.a_sig},
          {"num_classes", c.num_classes}, {"routing_iters", c.routing_iters},
          {"routing_norm", to_string(c.routing_norm)},
          {"decoder_fc", {c.decoder_fc[0], c.decoder_fc[1]}}, {"decoder_deconv", deconv}};
}

// Missing keys keep the values already in `base`.
inline ModelConfig model_config_from_json(const json& j, ModelConfig base = {}) {
  const std::string where = "model config";
  detail::reject_unknown(j, {"L", "k", "g1", "g2", "g3", "g_b", "c_p", "a_p", "c_sa", "a_sa", "c_b", "a_b", "n",
                             "c_sb", "a_sb", "a_sig", "num_classes", "routing_iters", "routing_norm", "decoder_fc",
                             "decoder_deconv"},
                         where);
  ModelConfig& c = base;
  detail::read_opt(j, "L", c.L, where);
  detail::read_opt(j, "k", c.k, where);
  detail::read_opt(j, "g1", c.g1, where);
  detail::read_opt(j, "g2", c.g2, where);
  detail::read_opt(j, "g3", c.g3, where);
  detail::read_opt(j, "g_b", c.g_b, where);
  detail::read_opt(j, "c_p", c.c_p, where);
  detail::read_opt(j, "a_p", c.a_p, where);
  detail::read_opt(j, "c_sa", c.c_sa, where);
  detail::read_opt(j, "a_sa", c.a_sa, where);
  detail::read_opt(j, "c_b", c.c_b, where);
  detail::read_opt(j, "a_b", c.a_b, where);
  detail::read_opt(j, "n", c.n, where);
  detail::read_opt(j, "c_sb", c.c_sb, where);
  detail::read_opt(j, "a_sb", c.a_sb, where);
  detail::read_opt(j, "a_sig", c.a_sig, where);
  detail::read_opt(j, "num_classes", c.num_classes, where);
  detail::read_opt(j, "routing_iters", c.routing_iters, where);
  if (j.contains("routing_norm")) {
    if (!j.at("routing_norm").is_string()) throw ConfigError("routing_norm must be a string");
    c.routing_norm = parse_routing_norm(j.at("routing_norm").get<std::string>());
  }
  if (j.contains("decoder_fc")) {
    const auto& fc = j.at("decoder_fc");
    if (!fc.is_array() || fc.size() != 2) throw ConfigError("decoder_fc must hold two widths");
    for (std::size_t i = 0; i < 2; ++i) c.decoder_fc[i] = fc[i].get<std::size_t>();
  }
  if (j.contains("decoder_deconv")) {
    const auto& dc = j.at("decoder_deconv");
    if (!dc.is_array() || dc.size() != 5) throw ConfigError("decoder_deconv must hold five [channels, width, stride]");
    for (std::size_t i = 0; i < 5; ++i) {
      if (!dc[i].is_array() || dc[i].size() != 3) {
        throw ConfigError("decoder_deconv entries are [channels, width, stride]");
      }
      c.decoder_deconv[i] = {dc[i][0].get<std::size_t>(), dc[i][1].get<std::size_t>(), dc[i][2].get<std::size_t>()};
    }
  }
  return c;
}

inline json train_config_to_json(const TrainConfig& t) {
  return {{"epochs", t.epochs},         {"lr", t.lr},
          {"lambda_margin", t.lambda_margin}, {"m_plus", t.m_plus},
          {"m_minus", t.m_minus},       {"recon_weight", t.recon_weight},
          {"batch_size", t.batch_size}, {"seed", t.seed},
          {"lr_decay", t.lr_decay}};
}

inline TrainConfig train_config_from_json(const json& j, TrainConfig base = {}) {
  const std::string where = "train config";
  detail::reject_unknown(j, {"epochs", "lr", "lambda_margin", "m_plus", "m_minus", "recon_weight", "batch_size",
                             "seed", "lr_decay"},
                         where);
  TrainConfig& t = base;
  detail::read_opt(j, "epochs", t.epochs, where);
  detail::read_opt(j, "lr", t.lr, where);
  detail::read_opt(j, "lambda_margin", t.lambda_margin, where);
  detail::read_opt(j, "m_plus", t.m_plus, where);
  detail::read_opt(j, "m_minus", t.m_minus, where);
  detail::read_opt(j, "recon_weight", t.recon_weight, where);
  detail::read_opt(j, "batch_size", t.batch_size, where);
  detail::read_opt(j, "seed", t.seed, where);
  detail::read_opt(j, "lr_decay", t.lr_decay, where);
  return t;
}

// Deterministic: no wall-clock fields, so identical runs serialize identically.
inline json report_to_json(const TrainReport& r) {
  json epochs = json::array();
  for (const auto& e : r.epochs) {
    epochs.push_back({{"epoch", e.epoch},
                      {"margin_loss", e.margin_loss},
                      {"recon_loss", e.recon_loss},
                      {"total_loss", e.total_loss},
                      {"train_accuracy", e.train_accuracy},
                      {"test_accuracy", e.test_accuracy},
                      {"alpha", e.alpha},
                      {"beta", e.beta}});
  }
  return {{"epochs", epochs},
          {"confusion", r.confusion},
          {"final_test_accuracy", r.epochs.empty() ? 0.0 : r.epochs.back().test_accuracy},
          {"parameter_count", r.parameter_count}};
}

}  // namespace timecaps
