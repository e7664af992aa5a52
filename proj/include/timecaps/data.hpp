#pragma once

// Labeled 1D signals: CSV ingestion, per-signal normalization, stratified
// splitting and a synthetic three-class waveform task.

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <map>
#include <numbers>
#include <optional>
#include <random>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "timecaps/error.hpp"
#include "timecaps/tensor.hpp"

namespace timecaps {

struct LabeledSignal {
  std::vector<double> samples;
  std::size_t label = 0;

  friend bool operator==(const LabeledSignal&, const LabeledSignal&) = default;
};

struct Dataset {
  std::vector<LabeledSignal> signals;
  std::size_t L = 0;
  std::size_t num_classes = 0;
  std::vector<std::string> class_names;  // optional

  std::size_t size() const { return signals.size(); }
  bool empty() const { return signals.empty(); }

  Tensor input(std::size_t i) const { return Tensor({L}, signals.at(i).samples); }

  std::vector<std::size_t> class_counts() const {
    std::vector<std::size_t> counts(num_classes, 0);
    for (const auto& s : signals) ++counts[s.label];
    return counts;
  }

  void validate() const {
    for (std::size_t i = 0; i < signals.size(); ++i) {
      if (signals[i].samples.size() != L) {
        throw FormatError("signal " + std::to_string(i) + " has length " +
                          std::to_string(signals[i].samples.size()) + ", expected " + std::to_string(L));
      }
      if (signals[i].label >= num_classes) {
        throw FormatError("signal " + std::to_string(i) + " has label " + std::to_string(signals[i].label) +
                          " but the dataset declares " + std::to_string(num_classes) + " classes");
      }
    }
  }

  friend bool operator==(const Dataset&, const Dataset&) = default;
};

// ----------------------------------------------------------------------- CSV

namespace detail {

inline std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
  return s;
}

template <class T>
T parse_field(std::string_view field, std::size_t row, std::size_t col) {
  field = trim(field);
  T value{};
  const auto* end = field.data() + field.size();
  auto [ptr, ec] = std::from_chars(field.data(), end, value);
  if (ec != std::errc{} || ptr != end || field.empty()) {
    throw FormatError("row " + std::to_string(row) + ", field " + std::to_string(col + 1) + ": cannot parse '" +
                      std::string(field) + "'");
  }
  return value;
}

inline std::string format_double(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

}  // namespace detail

// Each line: `label,s0,...,s(L-1)`. L comes from the first row unless given.
inline Dataset parse_csv(std::istream& in, std::optional<std::size_t> expected_L = std::nullopt) {
  Dataset d;
  std::string line;
  std::size_t row = 0;
  std::size_t max_label = 0;
  while (std::getline(in, line)) {
    ++row;
    std::string_view view = detail::trim(line);
    if (view.empty()) continue;
    LabeledSignal sig;
    std::size_t col = 0;
    bool first = true;
    while (true) {
      const auto comma = view.find(',');
      const std::string_view field = view.substr(0, comma);
      if (first) {
        sig.label = detail::parse_field<std::size_t>(field, row, col);
        first = false;
      } else {
        sig.samples.push_back(detail::parse_field<double>(field, row, col));
      }
      ++col;
      if (comma == std::string_view::npos) break;
      view.remove_prefix(comma + 1);
    }
    if (sig.samples.empty()) throw FormatError("row " + std::to_string(row) + " has no samples");
    if (d.signals.empty() && d.L == 0) {
      d.L = expected_L.value_or(sig.samples.size());
    }
    if (sig.samples.size() != d.L) {
      throw FormatError("row " + std::to_string(row) + " has " + std::to_string(sig.samples.size()) +
                        " samples, expected " + std::to_string(d.L));
    }
    max_label = std::max(max_label, sig.label);
    d.signals.push_back(std::move(sig));
  }
  if (d.signals.empty()) throw FormatError("dataset is empty");
  d.num_classes = max_label + 1;
  return d;
}

inline Dataset load_csv(const std::string& path, std::optional<std::size_t> expected_L = std::nullopt) {
  std::ifstream in(path);
  if (!in) throw FormatError("cannot open " + path);
  try {
    return parse_csv(in, expected_L);
  } catch (const FormatError& e) {
    throw FormatError(path + ": " + e.detail());
  }
}

inline void write_csv(std::ostream& out, const Dataset& d) {
  for (const auto& s : d.signals) {
    out << s.label;
    for (double v : s.samples) out << ',' << detail::format_double(v);
    out << '\n';
  }
}

inline void save_csv(const std::string& path, const Dataset& d) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw FormatError("cannot write " + path);
  write_csv(out, d);
  if (!out) throw FormatError("failed writing " + path);
}

// ------------------------------------------------------------- normalization

enum class NormMode { none, zscore, minmax };

inline NormMode parse_norm_mode(const std::string& s) {
  if (s == "none") return NormMode::none;
  if (s == "zscore") return NormMode::zscore;
  if (s == "minmax") return NormMode::minmax;
  throw ConfigError("unknown normalization '" + s + "' (expected none, zscore or minmax)");
}

inline std::string to_string(NormMode m) {
  switch (m) {
    case NormMode::none: return "none";
    case NormMode::zscore: return "zscore";
    case NormMode::minmax: return "minmax";
  }
  return "none";
}

struct SignalStats {
  double mean = 0.0;
  double stdev = 0.0;
  double min = 0.0;
  double max = 0.0;
};

inline SignalStats signal_stats(const std::vector<double>& x) {
  SignalStats st;
  if (x.empty()) return st;
  double sum = 0.0;
  for (double v : x) sum += v;
  st.mean = sum / static_cast<double>(x.size());
  double var = 0.0;
  for (double v : x) var += (v - st.mean) * (v - st.mean);
  st.stdev = std::sqrt(var / static_cast<double>(x.size()));
  const auto [lo, hi] = std::minmax_element(x.begin(), x.end());
  st.min = *lo;
  st.max = *hi;
  return st;
}

// In-place per-signal normalization; returns the pre-normalization stats.
// zscore leaves near-constant signals at zero; minmax maps [min,max] to [-1,1].
inline std::vector<double> normalize_signal(std::vector<double>& x, NormMode mode, SignalStats* stats = nullptr) {
  const SignalStats st = signal_stats(x);
  if (stats) *stats = st;
  switch (mode) {
    case NormMode::none:
      break;
    case NormMode::zscore:
      for (double& v : x) v = st.stdev < 1e-12 ? 0.0 : (v - st.mean) / st.stdev;
      break;
    case NormMode::minmax: {
      const double range = st.max - st.min;
      for (double& v : x) v = range < 1e-12 ? 0.0 : 2.0 * (v - st.min) / range - 1.0;
      break;
    }
  }
  return x;
}

struct Normalized {
  Dataset data;
  std::vector<SignalStats> stats;  // one per signal, before normalization
};

inline Normalized normalize(const Dataset& d, NormMode mode) {
  if (d.empty()) throw ArgumentError("cannot normalize an empty dataset");
  Normalized out{d, {}};
  out.stats.resize(d.size());
  for (std::size_t i = 0; i < d.size(); ++i) normalize_signal(out.data.signals[i].samples, mode, &out.stats[i]);
  return out;
}

// ---------------------------------------------------------------- splitting

struct Split {
  Dataset train;
  Dataset test;
  std::vector<std::string> warnings;
};

// Stratified, seeded split. Each class contributes round(count * fraction)
// test examples, clamped so both sides keep at least one example.
inline Split split(const Dataset& d, double test_fraction, std::uint64_t seed) {
  if (!(test_fraction > 0.0 && test_fraction < 1.0)) throw ArgumentError("test fraction must lie in (0, 1)");
  Split out;
  for (Dataset* part : {&out.train, &out.test}) {
    part->L = d.L;
    part->num_classes = d.num_classes;
    part->class_names = d.class_names;
  }
  std::vector<std::vector<std::size_t>> by_class(d.num_classes);
  for (std::size_t i = 0; i < d.size(); ++i) by_class[d.signals[i].label].push_back(i);

  std::mt19937_64 rng(seed);
  for (std::size_t c = 0; c < by_class.size(); ++c) {
    auto& idx = by_class[c];
    std::shuffle(idx.begin(), idx.end(), rng);
    if (idx.empty()) continue;
    if (idx.size() < 2) {
      out.warnings.push_back("class " + std::to_string(c) + " has fewer than 2 examples; kept in train");
      for (std::size_t i : idx) out.train.signals.push_back(d.signals[i]);
      continue;
    }
    auto n_test = static_cast<std::size_t>(std::llround(static_cast<double>(idx.size()) * test_fraction));
    n_test = std::clamp<std::size_t>(n_test, 1, idx.size() - 1);
    for (std::size_t j = 0; j < idx.size(); ++j) {
      (j < n_test ? out.test : out.train).signals.push_back(d.signals[idx[j]]);
    }
  }
  return out;
}

// Drops classes with fewer than `min_count` examples and renumbers the rest
// densely, preserving their order.
inline Dataset filter_min_count(const Dataset& d, std::size_t min_count) {
  const auto counts = d.class_counts();
  std::vector<std::optional<std::size_t>> remap(d.num_classes);
  Dataset out;
  out.L = d.L;
  std::size_t next = 0;
  for (std::size_t c = 0; c < d.num_classes; ++c) {
    if (counts[c] >= min_count && counts[c] > 0) {
      remap[c] = next++;
      if (c < d.class_names.size()) out.class_names.push_back(d.class_names[c]);
    }
  }
  out.num_classes = next;
  for (const auto& s : d.signals) {
    if (remap[s.label]) out.signals.push_back({s.samples, *remap[s.label]});
  }
  return out;
}

// ---------------------------------------------------------------- synthetic

// Three classes: 0 sine, 1 square, 2 sawtooth. Each example draws a
// frequency in [2, 6] cycles per window and a phase in [0, 1) cycles, then
// adds N(0, noise_sigma^2) noise.
inline Dataset synth_waveforms(std::size_t num_per_class, std::size_t L, double noise_sigma, std::uint64_t seed) {
  if (L < 8) throw ArgumentError("synthetic signals need L >= 8");
  if (noise_sigma < 0.0) throw ArgumentError("noise sigma must be non-negative");
  Dataset d;
  d.L = L;
  d.num_classes = 3;
  d.class_names = {"sine", "square", "sawtooth"};
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> freq_dist(2.0, 6.0);
  std::uniform_real_distribution<double> phase_dist(0.0, 1.0);
  std::normal_distribution<double> noise(0.0, 1.0);
  for (std::size_t i = 0; i < num_per_class; ++i) {
    for (std::size_t c = 0; c < 3; ++c) {
      const double freq = freq_dist(rng);
      const double phase = phase_dist(rng);
      LabeledSignal s;
      s.label = c;
      s.samples.resize(L);
      for (std::size_t t = 0; t < L; ++t) {
        const double cycles = freq * static_cast<double>(t) / static_cast<double>(L) + phase;
        const double frac = cycles - std::floor(cycles);
        double v = 0.0;
        switch (c) {
          case 0: v = std::sin(2.0 * std::numbers::pi * cycles); break;
          case 1: v = frac < 0.5 ? 1.0 : -1.0; break;
          default: v = 2.0 * frac - 1.0; break;
        }
        if (noise_sigma > 0.0) v += noise_sigma * noise(rng);
        s.samples[t] = v;
      }
      d.signals.push_back(std::move(s));
    }
  }
  return d;
}

}  // namespace timecaps
