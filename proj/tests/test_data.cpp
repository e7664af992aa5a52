#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <complex>
#include <numbers>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "support.hpp"
#include "timecaps/data.hpp"

using namespace timecaps;

namespace {

Dataset parse(const std::string& text) {
  std::istringstream in(text);
  return parse_csv(in);
}

std::string error_of(const std::string& text) {
  try {
    parse(text);
  } catch (const FormatError& e) {
    return e.what();
  }
  return "";
}

// Power spectrum of a Hann-windowed, mean-removed signal (naive DFT).
std::vector<double> power_spectrum(std::vector<double> x) {
  const std::size_t L = x.size();
  double mean = 0.0;
  for (double v : x) mean += v;
  mean /= static_cast<double>(L);
  for (std::size_t t = 0; t < L; ++t) {
    x[t] = (x[t] - mean) * (0.5 - 0.5 * std::cos(2.0 * std::numbers::pi * static_cast<double>(t) / static_cast<double>(L)));
  }
  std::vector<double> p(L / 2 + 1);
  for (std::size_t k = 0; k < p.size(); ++k) {
    std::complex<double> acc;
    for (std::size_t t = 0; t < L; ++t) {
      acc += x[t] * std::polar(1.0, -2.0 * std::numbers::pi * static_cast<double>(k * t) / static_cast<double>(L));
    }
    p[k] = std::norm(acc);
  }
  return p;
}

// Peak power over the two bins bracketing frequency f.
double peak_near(const std::vector<double>& p, double f) {
  double best = 0.0;
  for (long k = std::lround(std::floor(f)); k <= std::lround(std::ceil(f)); ++k) {
    if (k >= 1 && k < static_cast<long>(p.size())) best = std::max(best, p[static_cast<std::size_t>(k)]);
  }
  return best;
}

// Sine has no harmonics, square only odd ones, sawtooth also even ones.
std::size_t spectral_class(const std::vector<double>& x) {
  const auto p = power_spectrum(x);
  std::size_t k1 = 1;
  for (std::size_t k = 1; k < p.size(); ++k) {
    if (p[k] > p[k1]) k1 = k;
  }
  double f0 = static_cast<double>(k1);
  if (k1 + 1 < p.size()) {
    const double a = std::log(p[k1 - 1] + 1e-300), b = std::log(p[k1]), c = std::log(p[k1 + 1] + 1e-300);
    f0 += 0.5 * (a - c) / (a - 2.0 * b + c);
  }
  const double r2 = peak_near(p, 2.0 * f0) / p[k1];
  const double r3 = peak_near(p, 3.0 * f0) / p[k1];
  if (r2 > 0.1) return 2;
  if (r3 > 0.03) return 1;
  return 0;
}

}  // namespace

// ---------------------------------------------------------------------- CSV

TEST(Csv, ParsesLabelAndSamples) {
  const Dataset d = parse("2,0.1,0.2,0.3\n");
  ASSERT_EQ(d.size(), 1u);
  EXPECT_EQ(d.signals[0].label, 2u);
  EXPECT_EQ(d.L, 3u);
  EXPECT_EQ(d.num_classes, 3u);
  EXPECT_EQ(d.signals[0].samples, (std::vector<double>{0.1, 0.2, 0.3}));
}

TEST(Csv, ToleratesWhitespaceCrlfAndBlankLines) {
  const Dataset d = parse("0, 1.5 ,2\r\n\n1,3,4\n");
  ASSERT_EQ(d.size(), 2u);
  EXPECT_EQ(d.signals[0].samples, (std::vector<double>{1.5, 2}));
}

TEST(Csv, RaggedRowNamesTheRow) {
  const std::string msg = error_of("0,1,2,3\n1,1,2\n");
  EXPECT_NE(msg.find("row 2"), std::string::npos) << msg;
}

TEST(Csv, RejectsMalformedInput) {
  EXPECT_NE(error_of("0,1,abc\n"), "");
  EXPECT_NE(error_of("x,1,2\n"), "");
  EXPECT_NE(error_of("-1,1,2\n"), "");
  EXPECT_NE(error_of("0,1,,2\n"), "");
  EXPECT_NE(error_of("0\n"), "");
  EXPECT_NE(error_of(""), "");
  EXPECT_NE(error_of("\n\n"), "");
}

TEST(Csv, MissingFileIsFormatError) {
  EXPECT_THROW(load_csv("/nonexistent/timecaps.csv"), FormatError);
}

TEST(Csv, RoundTripIsExact) {
  const auto dir = support::temp_dir("csv_roundtrip");
  const Dataset d = synth_waveforms(4, 16, 0.3, 9);
  save_csv((dir / "d.csv").string(), d);
  Dataset back = load_csv((dir / "d.csv").string());
  back.class_names = d.class_names;
  EXPECT_EQ(back, d);
}

// ------------------------------------------------------------ normalization

TEST(Normalize, ConstantSignalZscoreIsZero) {
  std::vector<double> x(10, 4.2);
  normalize_signal(x, NormMode::zscore);
  for (double v : x) EXPECT_EQ(v, 0.0);
}

TEST(Normalize, MinmaxMapsToUnitInterval) {
  std::vector<double> x{0, 1, 2};
  normalize_signal(x, NormMode::minmax);
  EXPECT_EQ(x, (std::vector<double>{-1, 0, 1}));
  std::vector<double> c(5, -3.0);
  normalize_signal(c, NormMode::minmax);
  for (double v : c) EXPECT_EQ(v, 0.0);
}

TEST(Normalize, ZscoreMoments) {
  std::mt19937_64 rng(1);
  std::normal_distribution<double> nd(5.0, 3.0);
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<double> x(2 + rng() % 100);
    for (double& v : x) v = nd(rng);
    normalize_signal(x, NormMode::zscore);
    const auto st = signal_stats(x);
    EXPECT_LT(std::abs(st.mean), 1e-12);
    EXPECT_LT(std::abs(st.stdev - 1.0), 1e-9);
  }
}

TEST(Normalize, DatasetKeepsStatsAndLabels) {
  const Dataset d = synth_waveforms(3, 16, 0.1, 2);
  const auto n = normalize(d, NormMode::zscore);
  ASSERT_EQ(n.stats.size(), d.size());
  for (std::size_t i = 0; i < d.size(); ++i) {
    EXPECT_EQ(n.data.signals[i].label, d.signals[i].label);
    EXPECT_EQ(n.stats[i].mean, signal_stats(d.signals[i].samples).mean);
  }
  EXPECT_EQ(parse_norm_mode(to_string(NormMode::minmax)), NormMode::minmax);
  EXPECT_THROW(parse_norm_mode("l2"), ConfigError);
}

// ---------------------------------------------------------------- splitting

namespace {

Dataset labelled(std::size_t per_class, std::size_t classes) {
  Dataset d;
  d.L = 1;
  d.num_classes = classes;
  for (std::size_t c = 0; c < classes; ++c) {
    for (std::size_t i = 0; i < per_class; ++i) {
      d.signals.push_back({{static_cast<double>(c * 1000 + i)}, c});
    }
  }
  return d;
}

std::multiset<double> ids(const Dataset& d) {
  std::multiset<double> s;
  for (const auto& x : d.signals) s.insert(x.samples[0]);
  return s;
}

}  // namespace

TEST(Split, StratifiedCounts) {
  const auto s = split(labelled(100, 3), 0.3, 1);
  EXPECT_EQ(s.train.class_counts(), (std::vector<std::size_t>{70, 70, 70}));
  EXPECT_EQ(s.test.class_counts(), (std::vector<std::size_t>{30, 30, 30}));
  EXPECT_TRUE(s.warnings.empty());
}

TEST(Split, SeededAndPartition) {
  const Dataset d = labelled(50, 4);
  const auto a = split(d, 0.25, 11), b = split(d, 0.25, 11), c = split(d, 0.25, 12);
  EXPECT_EQ(a.train, b.train);
  EXPECT_EQ(a.test, b.test);
  EXPECT_NE(ids(a.test), ids(c.test));
  std::multiset<double> all = ids(a.train);
  for (double v : ids(a.test)) all.insert(v);
  EXPECT_EQ(all, ids(d));
  for (double v : ids(a.test)) EXPECT_EQ(ids(a.train).count(v), 0u);
}

TEST(Split, SingletonClassStaysInTrain) {
  Dataset d = labelled(10, 2);
  d.num_classes = 3;
  d.signals.push_back({{9999.0}, 2});
  const auto s = split(d, 0.5, 3);
  EXPECT_EQ(s.train.class_counts()[2], 1u);
  EXPECT_EQ(s.test.class_counts()[2], 0u);
  EXPECT_EQ(s.warnings.size(), 1u);
  EXPECT_THROW(split(d, 0.0, 1), ArgumentError);
  EXPECT_THROW(split(d, 1.0, 1), ArgumentError);
}

TEST(FilterMinCount, RenumbersDensely) {
  Dataset d = labelled(3, 4);
  d.class_names = {"a", "b", "c", "d"};
  d.signals.erase(std::remove_if(d.signals.begin(), d.signals.end(),
                                 [](const LabeledSignal& s) { return s.label == 1 && s.samples[0] != 1000.0; }),
                  d.signals.end());
  const Dataset f = filter_min_count(d, 2);
  EXPECT_EQ(f.num_classes, 3u);
  EXPECT_EQ(f.class_names, (std::vector<std::string>{"a", "c", "d"}));
  EXPECT_EQ(f.class_counts(), (std::vector<std::size_t>{3, 3, 3}));
  EXPECT_NO_THROW(f.validate());
}

// ---------------------------------------------------------------- synthetic

TEST(Synthetic, CountsAndRange) {
  const Dataset d = synth_waveforms(200, 64, 0.0, 7);
  EXPECT_EQ(d.size(), 600u);
  EXPECT_EQ(d.num_classes, 3u);
  EXPECT_EQ(d.class_counts(), (std::vector<std::size_t>{200, 200, 200}));
  for (const auto& s : d.signals) {
    ASSERT_EQ(s.samples.size(), 64u);
    for (double v : s.samples) {
      EXPECT_GE(v, -1.0);
      EXPECT_LE(v, 1.0);
    }
  }
}

TEST(Synthetic, NoiselessSineIsASinusoid) {
  const Dataset d = synth_waveforms(20, 64, 0.0, 3);
  for (const auto& s : d.signals) {
    if (s.label != 0) continue;
    // x[t+1] + x[t-1] = 2 cos(w) x[t] for any sampled sinusoid.
    const auto& x = s.samples;
    const double c = (x[2] + x[0]) / (2.0 * x[1]);
    for (std::size_t t = 1; t + 1 < x.size(); ++t) EXPECT_NEAR(x[t + 1] + x[t - 1], 2.0 * c * x[t], 1e-9);
  }
}

TEST(Synthetic, SeededRegenerationIsBitIdentical) {
  EXPECT_EQ(synth_waveforms(30, 64, 0.1, 7), synth_waveforms(30, 64, 0.1, 7));
  EXPECT_NE(synth_waveforms(30, 64, 0.1, 7), synth_waveforms(30, 64, 0.1, 8));
}

TEST(Synthetic, ClassesSeparableBySpectralEnergy) {
  const Dataset d = synth_waveforms(50, 256, 0.0, 5);
  std::size_t correct = 0;
  for (const auto& s : d.signals) correct += spectral_class(s.samples) == s.label;
  EXPECT_EQ(correct, d.size());
}

TEST(Synthetic, RejectsBadArguments) {
  EXPECT_THROW(synth_waveforms(1, 4, 0.1, 1), ArgumentError);
  EXPECT_THROW(synth_waveforms(1, 64, -0.1, 1), ArgumentError);
}
