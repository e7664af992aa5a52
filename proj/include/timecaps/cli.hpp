#pragma once

// Command-line front end. Exit codes: 0 success, 1 verification failure,
// 2 usage, configuration or data error.

#include <CLI11.hpp>

#include <algorithm>
#include <chrono>
#include <cstdint>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <numeric>
#include <optional>
#include <ostream>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "timecaps/checkpoint.hpp"
#include "timecaps/config_io.hpp"
#include "timecaps/data.hpp"
#include "timecaps/error.hpp"
#include "timecaps/model.hpp"
#include "timecaps/run_config.hpp"
#include "timecaps/training.hpp"
#include "timecaps/verify.hpp"

namespace timecaps::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitVerify = 1;
inline constexpr int kExitUsage = 2;

inline constexpr double kGradTolerance = 1e-4;

namespace fs = std::filesystem;

// Writes `<path>.partial` and renames it over `path`, so readers never see a
// half-written file.
inline void write_atomic(const fs::path& path, const std::string& content) {
  fs::path tmp = path;
  tmp += ".partial";
  std::error_code ec;
  fs::remove(tmp, ec);
  {
    std::ofstream out(tmp, std::ios::binary);
    if (!out) throw FormatError("cannot write " + tmp.string());
    out.write(content.data(), static_cast<std::streamsize>(content.size()));
    out.close();
    if (!out) {
      fs::remove(tmp, ec);
      throw FormatError("failed writing " + tmp.string());
    }
  }
  fs::rename(tmp, path, ec);
  if (ec) {
    fs::remove(tmp, ec);
    throw FormatError("cannot move " + tmp.string() + " to " + path.string());
  }
}

inline void remove_partials(const fs::path& dir) {
  std::error_code ec;
  if (!fs::is_directory(dir, ec)) return;
  for (const auto& entry : fs::directory_iterator(dir, ec)) {
    if (entry.path().extension() == ".partial") fs::remove(entry.path(), ec);
  }
}

// Refuses output directories that exist as something else or cannot be made.
inline void prepare_out_dir(const fs::path& dir) {
  std::error_code ec;
  if (fs::exists(dir, ec) && !fs::is_directory(dir, ec)) {
    throw ConfigError("output path " + dir.string() + " exists and is not a directory");
  }
  fs::create_directories(dir, ec);
  if (ec) throw ConfigError("cannot create output directory " + dir.string() + ": " + ec.message());
  remove_partials(dir);
}

inline void check_threads_env() {
  const char* env = std::getenv("TIMECAPS_THREADS");
  if (!env) return;
  char* end = nullptr;
  const long v = std::strtol(env, &end, 10);
  if (end == env || *end != '\0' || v < 1) {
    throw ConfigError("TIMECAPS_THREADS must be a positive integer, got '" + std::string(env) + "'");
  }
}

inline std::string class_label(const std::vector<std::string>& names, std::size_t c) {
  return c < names.size() ? names[c] : std::to_string(c);
}

inline std::string confusion_csv(const ConfusionMatrix& m, const std::vector<std::string>& names) {
  std::ostringstream os;
  os << "true\\predicted";
  for (std::size_t c = 0; c < m.size(); ++c) os << ',' << class_label(names, c);
  os << '\n';
  for (std::size_t r = 0; r < m.size(); ++r) {
    os << class_label(names, r);
    for (std::size_t v : m[r]) os << ',' << v;
    os << '\n';
  }
  return os.str();
}

inline std::string csv_row(const Tensor& t) {
  std::string row;
  for (std::size_t i = 0; i < t.numel(); ++i) {
    if (i) row += ',';
    row += detail::format_double(t[i]);
  }
  return row;
}

inline std::string fixed4(double v) {
  std::ostringstream os;
  os << std::fixed << std::setprecision(4) << v;
  return os.str();
}

struct TrainArgs {
  std::string config;
  std::string data;
  std::string out = "timecaps_out";
  std::optional<int> epochs;
  std::optional<std::uint64_t> seed;
  std::optional<double> noise;
};

inline int cmd_train(const TrainArgs& a, std::ostream& out, std::ostream& err) {
  RunConfig rc = a.config.empty() ? RunConfig{} : load_run_config(a.config);
  if (!a.data.empty()) rc.data.path = a.data;
  if (a.epochs) rc.train.epochs = *a.epochs;
  if (a.seed) rc.train.seed = *a.seed;
  if (a.noise) rc.data.synthetic.noise = *a.noise;
  rc.validate();
  check_threads_env();

  std::vector<std::string> warnings;
  const Dataset data = load_dataset(rc, &warnings);
  Split sp = split(data, rc.data.test_fraction, rc.split_seed());
  warnings.insert(warnings.end(), sp.warnings.begin(), sp.warnings.end());
  if (sp.test.empty()) throw FormatError("test split is empty; every class needs at least 2 examples");
  const Dataset raw_test = sp.test;
  sp.train = normalize(sp.train, rc.data.normalization).data;
  sp.test = normalize(sp.test, rc.data.normalization).data;
  for (const auto& w : warnings) err << "warning: " << w << '\n';

  const fs::path dir(a.out);
  prepare_out_dir(dir);

  out << "train=" << sp.train.size() << " test=" << sp.test.size() << " classes=" << data.num_classes
      << " L=" << data.L << '\n';
  ModelParams params = init_params(rc.model, rc.train.seed);
  out << "parameters=" << count_parameters(params) << '\n';
  const int total = rc.train.epochs;
  TrainReport report = train(params, rc.model, sp.train, sp.test, rc.train, [&](const EpochStats& e) {
    out << "epoch " << e.epoch << '/' << total << " margin=" << fixed4(e.margin_loss)
        << " recon=" << fixed4(e.recon_loss) << " total=" << fixed4(e.total_loss)
        << " train_acc=" << fixed4(e.train_accuracy) << " test_acc=" << fixed4(e.test_accuracy)
        << " alpha=" << fixed4(e.alpha) << " beta=" << fixed4(e.beta) << std::endl;
  });
  if (report.confusion.empty()) report.confusion = evaluate(params, rc.model, sp.test).confusion;

  json rj = report_to_json(report);
  rj["config"] = run_config_to_json(rc);
  rj["class_names"] = data.class_names;
  write_atomic(dir / "report.json", rj.dump(2) + "\n");
  write_atomic(dir / "confusion.csv", confusion_csv(report.confusion, data.class_names));
  write_atomic(dir / "model.ckpt",
               serialize_checkpoint({rc.model, params, CheckpointMeta{rc.data.normalization, data.class_names}}));
  // Raw test split, so `eval` sees exactly the inputs training evaluated.
  std::ostringstream test_csv;
  write_csv(test_csv, raw_test);
  write_atomic(dir / "test.csv", test_csv.str());

  const double acc = report.epochs.empty() ? evaluate(params, rc.model, sp.test).accuracy
                                           : report.epochs.back().test_accuracy;
  out << "accuracy=" << fixed4(acc) << '\n';
  out << "wall_seconds=" << fixed4(report.wall_seconds) << '\n';
  out << "wrote " << (dir / "report.json").string() << ", " << (dir / "confusion.csv").string() << ", "
      << (dir / "model.ckpt").string() << '\n';
  return kExitOk;
}

// Loads a dataset for a trained model and applies the checkpoint's
// normalization.
inline Dataset dataset_for(const Checkpoint& ck, const std::string& path) {
  Dataset d = load_csv(path);
  if (d.L != ck.config.L) {
    throw ConfigError("dataset signals have length " + std::to_string(d.L) + " but the checkpoint expects L=" +
                      std::to_string(ck.config.L));
  }
  if (d.num_classes > ck.config.num_classes) {
    throw ConfigError("dataset has labels up to " + std::to_string(d.num_classes - 1) + " but the model has " +
                      std::to_string(ck.config.num_classes) + " classes");
  }
  d.num_classes = ck.config.num_classes;
  d.class_names = ck.meta.class_names;
  return normalize(d, ck.meta.normalization).data;
}

struct EvalArgs {
  std::string checkpoint;
  std::string data;
  std::string out;
};

inline int cmd_eval(const EvalArgs& a, std::ostream& out, std::ostream&) {
  check_threads_env();
  const Checkpoint ck = load_checkpoint(a.checkpoint);
  const Dataset d = dataset_for(ck, a.data);
  if (!a.out.empty()) prepare_out_dir(a.out);
  const EvalResult r = evaluate(ck.params, ck.config, d);
  out << "accuracy=" << fixed4(r.accuracy) << '\n';
  if (!a.out.empty()) {
    const fs::path path = fs::path(a.out) / "confusion.csv";
    write_atomic(path, confusion_csv(r.confusion, ck.meta.class_names));
    out << "wrote " << path.string() << '\n';
  } else {
    out << confusion_csv(r.confusion, ck.meta.class_names);
  }
  return kExitOk;
}

struct ReconstructArgs {
  std::string checkpoint;
  std::string data;
  std::string out = "timecaps_recon";
  std::size_t k = 3;
  std::uint64_t seed = 0;
};

inline int cmd_reconstruct(const ReconstructArgs& a, std::ostream& out, std::ostream& err) {
  if (a.k == 0) throw ConfigError("--k must be positive");
  const Checkpoint ck = load_checkpoint(a.checkpoint);
  const Dataset d = dataset_for(ck, a.data);
  std::size_t k = a.k;
  if (k > d.size()) {
    err << "warning: --k " << k << " exceeds dataset size " << d.size() << "; using " << d.size() << '\n';
    k = d.size();
  }
  prepare_out_dir(a.out);
  std::vector<std::size_t> idx(d.size());
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  std::mt19937_64 rng(a.seed);
  std::shuffle(idx.begin(), idx.end(), rng);
  idx.resize(k);
  std::sort(idx.begin(), idx.end());
  for (std::size_t j = 0; j < k; ++j) {
    const Tensor x = d.input(idx[j]);
    const Prediction p = predict(ck.params, ck.config, x);
    double mse = 0.0;
    for (std::size_t t = 0; t < x.numel(); ++t) mse += (x[t] - p.reconstruction[t]) * (x[t] - p.reconstruction[t]);
    mse /= static_cast<double>(x.numel());
    char name[32];
    std::snprintf(name, sizeof name, "recon_%03zu.csv", j);
    const fs::path path = fs::path(a.out) / name;
    write_atomic(path, csv_row(x) + "\n" + csv_row(p.reconstruction) + "\n");
    out << path.string() << " index=" << idx[j] << " label=" << d.signals[idx[j]].label
        << " predicted=" << p.predicted << " mse=" << fixed4(mse) << '\n';
  }
  return kExitOk;
}

struct GradcheckArgs {
  std::string config;
  std::uint64_t seed = 1;
  double corrupt = 0.0;  // test hook: bias added to every analytic gradient
};

// Runs the finite-difference suite on the small verification architecture;
// routing settings follow the config when one is given.
inline int cmd_gradcheck(const GradcheckArgs& a, std::ostream& out, std::ostream& err) {
  ModelConfig cfg = ModelConfig::tiny();
  if (!a.config.empty()) {
    const RunConfig rc = load_run_config(a.config);
    rc.validate();
    cfg.routing_iters = rc.model.routing_iters;
    cfg.routing_norm = rc.model.routing_norm;
  }
  GradCheckSuiteOptions opt;
  opt.seed = a.seed;
  opt.check.analytic_bias = a.corrupt;
  out << "gradcheck: L=" << cfg.L << " routing_iters=" << cfg.routing_iters
      << " routing_norm=" << to_string(cfg.routing_norm) << " step=" << opt.check.step
      << " tolerance=" << kGradTolerance << '\n';
  const auto entries = run_gradcheck_suite(cfg, opt, [&](const GradCheckEntry& e) {
    out << std::left << std::setw(18) << e.component << " max_rel_error=" << std::scientific << std::setprecision(3)
        << e.result.max_error << std::defaultfloat << "  " << (e.result.max_error < kGradTolerance ? "ok" : "FAIL")
        << '\n';
    out.flush();
  });
  const auto worst = std::max_element(entries.begin(), entries.end(), [](const auto& x, const auto& y) {
    return x.result.max_error < y.result.max_error;
  });
  if (worst != entries.end() && !(worst->result.max_error < kGradTolerance)) {
    err << "gradcheck failed: worst offender " << worst->component << " at " << worst->worst_input << '['
        << worst->result.worst_index << "] analytic=" << worst->result.worst_analytic
        << " numeric=" << worst->result.worst_numeric << " error=" << worst->result.max_error << '\n';
    return kExitVerify;
  }
  out << "gradcheck passed (" << entries.size() << " components)\n";
  return kExitOk;
}

struct SynthArgs {
  std::string out = "synthetic.csv";
  std::size_t per_class = 200;
  std::size_t length = 64;
  double noise = 0.1;
  std::uint64_t seed = 7;
};

inline int cmd_synth(const SynthArgs& a, std::ostream& out, std::ostream&) {
  if (a.per_class == 0) throw ConfigError("--per-class must be positive");
  const Dataset d = synth_waveforms(a.per_class, a.length, a.noise, a.seed);
  std::ostringstream os;
  write_csv(os, d);
  write_atomic(a.out, os.str());
  out << "wrote " << d.size() << " signals of length " << d.L << " to " << a.out << '\n';
  return kExitOk;
}

inline int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"TimeCaps: capsule networks for 1D signals"};
  app.require_subcommand(1);

  TrainArgs ta;
  auto* train_cmd = app.add_subcommand("train", "Train a model and write report.json, confusion.csv, model.ckpt");
  train_cmd->add_option("--config", ta.config, "Run configuration JSON");
  train_cmd->add_option("--data", ta.data, "Dataset CSV (label,s0,...); synthetic task when omitted");
  train_cmd->add_option("--out", ta.out, "Output directory")->capture_default_str();
  train_cmd->add_option("--epochs", ta.epochs, "Override train.epochs");
  train_cmd->add_option("--seed", ta.seed, "Override train.seed");
  train_cmd->add_option("--noise", ta.noise, "Override data.synthetic.noise");

  EvalArgs ea;
  auto* eval_cmd = app.add_subcommand("eval", "Evaluate a checkpoint on a dataset");
  eval_cmd->add_option("--checkpoint", ea.checkpoint, "Checkpoint written by train")->required();
  eval_cmd->add_option("--data", ea.data, "Dataset CSV")->required();
  eval_cmd->add_option("--out", ea.out, "Directory for confusion.csv (printed when omitted)");

  ReconstructArgs ra;
  auto* recon_cmd = app.add_subcommand("reconstruct", "Write original/reconstruction CSV pairs");
  recon_cmd->add_option("--checkpoint", ra.checkpoint, "Checkpoint written by train")->required();
  recon_cmd->add_option("--data", ra.data, "Dataset CSV")->required();
  recon_cmd->add_option("--out", ra.out, "Output directory")->capture_default_str();
  recon_cmd->add_option("--k", ra.k, "Number of signals")->capture_default_str();
  recon_cmd->add_option("--seed", ra.seed, "Sampling seed")->capture_default_str();

  GradcheckArgs ga;
  auto* grad_cmd = app.add_subcommand("gradcheck", "Finite-difference check of every component");
  grad_cmd->add_option("--config", ga.config, "Run configuration JSON (routing settings are used)");
  grad_cmd->add_option("--seed", ga.seed, "Seed for random test points")->capture_default_str();
  grad_cmd->add_option("--corrupt-gradient", ga.corrupt, "Test hook: perturb analytic gradients")
      ->group("");

  SynthArgs sa;
  auto* synth_cmd = app.add_subcommand("synth", "Write the synthetic sine/square/sawtooth dataset");
  synth_cmd->add_option("--out", sa.out, "Output CSV path")->capture_default_str();
  synth_cmd->add_option("--per-class", sa.per_class, "Signals per class")->capture_default_str();
  synth_cmd->add_option("--length", sa.length, "Signal length L")->capture_default_str();
  synth_cmd->add_option("--noise", sa.noise, "Gaussian noise sigma")->capture_default_str();
  synth_cmd->add_option("--seed", sa.seed, "Random seed")->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e, out, err) == 0 ? kExitOk : kExitUsage;
  }

  try {
    if (*train_cmd) return cmd_train(ta, out, err);
    if (*eval_cmd) return cmd_eval(ea, out, err);
    if (*recon_cmd) return cmd_reconstruct(ra, out, err);
    if (*grad_cmd) return cmd_gradcheck(ga, out, err);
    if (*synth_cmd) return cmd_synth(sa, out, err);
  } catch (const Error& e) {
    err << "error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return kExitUsage;
  }
  return kExitUsage;
}

}  // namespace timecaps::cli
