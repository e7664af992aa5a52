// Acceptance run: one PASS/FAIL line per criterion, exit status 1 if any fail.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <functional>
#include <iterator>
#include <numbers>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "oracles.hpp"
#include "support.hpp"
#include "timecaps/cli.hpp"
#include "timecaps/timecaps.hpp"

using namespace timecaps;
namespace fs = std::filesystem;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t) { return std::chrono::duration<double>(Clock::now() - t).count(); }

int failures = 0;

void report(int id, const std::string& name, bool pass, const std::string& detail) {
  std::printf("criterion %2d %-22s %s  %s\n", id, name.c_str(), pass ? "PASS" : "FAIL", detail.c_str());
  std::fflush(stdout);
  if (!pass) ++failures;
}

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

int run_cli(std::vector<std::string> args, std::string* out_text = nullptr) {
  args.insert(args.begin(), "timecaps");
  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  std::ostringstream out, err;
  const int code = cli::run_cli(static_cast<int>(argv.size()), argv.data(), out, err);
  if (out_text) *out_text = out.str();
  if (code != 0) std::fprintf(stderr, "%s", err.str().c_str());
  return code;
}

const std::string kConfigs = std::string(TIMECAPS_SOURCE_DIR) + "/configs/";

// ------------------------------------------------------------------------ 1

void gradcheck() {
  const auto t0 = Clock::now();
  const auto entries = run_gradcheck_suite(ModelConfig::tiny());
  const double secs = seconds_since(t0);
  double worst = 0.0;
  std::string worst_name;
  bool ok = entries.size() >= 6;
  for (const auto& e : entries) {
    if (e.result.max_error > worst) {
      worst = e.result.max_error;
      worst_name = e.component;
    }
    ok = ok && e.result.max_error < 1e-4;
  }
  report(1, "gradcheck", ok && secs < 120.0,
         std::to_string(entries.size()) + " components, max rel err " + fmt("%.2e", worst) + " (" + worst_name +
             "), " + fmt("%.1f s", secs));
}

// ------------------------------------------------------------------ 2 and 3

void routing() {
  std::mt19937_64 rng(2024);
  const int iters[] = {1, 2, 3, 5};
  double worst = 0.0, worst_sum = 0.0;
  bool nonneg = true;
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t P = support::pick(rng, 1, 4), R = support::pick(rng, 1, 4), S = support::pick(rng, 1, 4),
                      D = support::pick(rng, 1, 4);
    const int it = iters[support::pick(rng, 0, 3)];
    const Tensor votes = Tensor::normal({P, R, S, D}, 1.0, rng);
    for (RoutingNorm norm : {RoutingNorm::parents, RoutingNorm::blocks}) {
      RoutingState st;
      const Tensor got = dynamic_routing(votes, it, norm, &st);
      worst = std::max(worst, max_abs_diff(got, oracle::routing(votes, it, norm).output));
      for (const Tensor& k : st.couplings) {
        for (double v : k.data()) nonneg = nonneg && v >= 0.0;
        Graph g(false);
        const Tensor sums = ops::sum(g.constant(k), {routing_axis(norm)}).value();
        for (double s : sums.data()) worst_sum = std::max(worst_sum, std::abs(s - 1.0));
      }
    }
  }
  report(2, "routing oracle", worst < 1e-10, "100 instances x 2 normalizations, max abs diff " + fmt("%.2e", worst));
  report(3, "coupling simplex", nonneg && worst_sum < 1e-9,
         std::string(nonneg ? "nonnegative" : "NEGATIVE entry") + ", max |sum-1| over softmax axis " +
             fmt("%.2e", worst_sum));
}

// ------------------------------------------------------------------------ 4

void squash_law() {
  std::mt19937_64 rng(4);
  std::uniform_real_distribution<double> target(0.0, 100.0);
  const std::size_t dims[] = {1, 2, 8, 16};
  double worst = 0.0;
  bool below_one = true;
  for (int i = 0; i < 10000; ++i) {
    const std::size_t D = dims[i % 4];
    Tensor v = Tensor::normal({D}, 1.0, rng);
    double n0 = 0.0;
    for (double x : v.data()) n0 += x * x;
    n0 = std::sqrt(n0);
    const double n = target(rng);
    for (double& x : v.data()) x *= n / n0;
    double out = 0.0;
    const Tensor s = squash(v, 0);
    for (double x : s.data()) out += x * x;
    out = std::sqrt(out);
    worst = std::max(worst, std::abs(out - n * n / (1.0 + n * n)));
    below_one = below_one && out < 1.0;
  }
  const Tensor s = squash(Tensor::vector({3, 4}), 0);
  const double closed = std::max(std::abs(s[0] - 25.0 / 26.0 * 0.6), std::abs(s[1] - 25.0 / 26.0 * 0.8));
  report(4, "squash law", worst < 1e-9 && below_one && closed < 1e-12,
         "1e4 vectors, max norm err " + fmt("%.2e", worst) + ", (3,4) err " + fmt("%.2e", closed));
}

// ------------------------------------------------------------------------ 5

void margin_examples() {
  auto m = [](std::vector<double> l) {
    Graph g(false);
    return margin_loss(g.constant(Tensor({l.size()}, l)), 0).value().item();
  };
  const double a = m({0.95, 0.05, 0.0}), b = m({0.4, 0.0, 0.0}), c = m({0.9, 0.6, 0.1});
  const double err = std::max({std::abs(a), std::abs(b - 0.25), std::abs(c - 0.125)});
  report(5, "margin loss", err < 1e-12,
         "got " + fmt("%.15g", a) + ", " + fmt("%.15g", b) + ", " + fmt("%.15g", c));
}

// ------------------------------------------------------------------------ 6

void shapes() {
  std::mt19937_64 rng(6);
  int bad = 0;
  for (int trial = 0; trial < 50; ++trial) {
    const ModelConfig cfg = support::random_config(rng);
    const auto want = oracle::shapes(cfg);
    Graph g(false);
    const auto out = model_forward(g.constant(Tensor::normal({cfg.L}, 1.0, rng)),
                                   attach(g, init_params(cfg, trial), false), cfg);
    const bool ok = out.phi.shape() == want.phi && out.cell_a.primary.shape() == want.a_primary &&
                    out.cell_a.votes.shape() == want.a_votes && out.cell_a.output.shape() == want.a_output &&
                    out.cell_b.primary.shape() == want.b_primary && out.cell_b.votes.shape() == want.b_votes &&
                    out.cell_b.output.shape() == want.b_output && out.omega_cc.shape() == want.omega_cc &&
                    out.class_votes.shape() == want.class_votes &&
                    out.class_capsules.shape() == want.class_capsules &&
                    out.reconstruction.shape() == want.reconstruction &&
                    cfg.num_capsules() == cfg.L * cfg.c_sa + (cfg.L / cfg.n) * cfg.c_sb &&
                    out.omega_cc.shape()[0] == want.N;
    bad += !ok;
  }
  report(6, "shapes", bad == 0, std::to_string(50 - bad) + "/50 random configs match");
}

// ------------------------------------------------------------------ 7, 8, 10

struct ToyRun {
  bool ok = false;
  fs::path dir;
  double wall = 0.0;
};

ToyRun toy_run(const fs::path& dir) {
  ToyRun r;
  r.dir = dir;
  const auto t0 = Clock::now();
  r.ok = run_cli({"train", "--config", kConfigs + "toy.json", "--out", dir.string()}) == 0;
  r.wall = seconds_since(t0);
  return r;
}

void synthetic_task(const ToyRun& run) {
  if (!run.ok) {
    report(7, "synthetic task", false, "training run failed");
    report(8, "reconstruction", false, "training run failed");
    return;
  }
  const json rep = json::parse(slurp(run.dir / "report.json"));
  const json& epochs = rep.at("epochs");
  const double first = epochs.front().at("total_loss").get<double>();
  const double last = epochs.back().at("total_loss").get<double>();
  const double acc = epochs.back().at("test_accuracy").get<double>();
  int reached = 0;
  for (const auto& e : epochs) {
    if (e.at("test_accuracy").get<double>() >= 0.90) {
      reached = e.at("epoch").get<int>();
      break;
    }
  }
  const Checkpoint ck = load_checkpoint((run.dir / "model.ckpt").string());
  const Dataset train_raw = load_dataset(load_run_config(kConfigs + "toy.json"));
  const Dataset test = normalize(load_csv((run.dir / "test.csv").string()), ck.meta.normalization).data;
  report(7, "synthetic task",
         epochs.size() == 20 && test.size() == 300 && train_raw.size() == 900 && acc >= 0.90 && last < 0.5 * first &&
             run.wall < 600.0,
         "600/300 split, test acc " + fmt("%.4f", acc) + " at epoch 20 (>=0.90 from epoch " + std::to_string(reached) +
             "), loss " + fmt("%.4f", first) + " -> " + fmt("%.4f", last) + ", " + fmt("%.0f s", run.wall));

  double model = 0.0, baseline = 0.0;
  for (std::size_t i = 0; i < test.size(); ++i) {
    const Tensor x = test.input(i);
    const Tensor rec = predict(ck.params, ck.config, x).reconstruction;
    const double mean = signal_stats(test.signals[i].samples).mean;
    for (std::size_t t = 0; t < x.numel(); ++t) {
      model += (x[t] - rec[t]) * (x[t] - rec[t]);
      baseline += (x[t] - mean) * (x[t] - mean);
    }
  }
  const double n = static_cast<double>(test.size() * ck.config.L);
  model /= n;
  baseline /= n;
  report(8, "reconstruction", model < 0.5 * baseline,
         "test MSE " + fmt("%.4f", model) + " vs mean-predictor " + fmt("%.4f", baseline));
}

void determinism(const ToyRun& a, const ToyRun& b) {
  const bool ok = a.ok && b.ok && slurp(a.dir / "report.json") == slurp(b.dir / "report.json") &&
                  slurp(a.dir / "model.ckpt") == slurp(b.dir / "model.ckpt") &&
                  slurp(a.dir / "confusion.csv") == slurp(b.dir / "confusion.csv");
  report(10, "determinism", ok, "two seeded toy runs: report.json, confusion.csv, model.ckpt byte-identical");
}

// ------------------------------------------------------------------------ 9

// Beat-like signals: class-dependent Gaussian waves (P, QRS, T) with jitter.
Dataset beat_like(std::size_t per_class, std::uint64_t seed) {
  const std::size_t L = 360, classes = 13;
  Dataset d;
  d.L = L;
  d.num_classes = classes;
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> jitter(0.0, 1.0);
  for (std::size_t c = 0; c < classes; ++c) {
    const std::size_t count = c + 1 == classes ? 1 : per_class;  // one rare class
    for (std::size_t i = 0; i < count; ++i) {
      LabeledSignal s{std::vector<double>(L), c};
      const double qrs = 150.0 + 6.0 * static_cast<double>(c) + 3.0 * jitter(rng);
      const double width = 4.0 + 0.5 * static_cast<double>(c % 5);
      for (std::size_t t = 0; t < L; ++t) {
        const double x = static_cast<double>(t);
        s.samples[t] = 0.15 * std::exp(-std::pow((x - qrs + 60.0) / 10.0, 2)) +
                       std::exp(-std::pow((x - qrs) / width, 2)) +
                       (0.2 + 0.03 * static_cast<double>(c)) * std::exp(-std::pow((x - qrs - 90.0) / 18.0, 2)) +
                       0.03 * jitter(rng);
      }
      d.signals.push_back(std::move(s));
    }
  }
  return d;
}

void beat_csv(const fs::path& root) {
  const auto t0 = Clock::now();
  const fs::path csv = root / "beats.csv";
  save_csv(csv.string(), beat_like(8, 9));
  std::string out;
  const int code = run_cli({"train", "--config", kConfigs + "beat.json", "--data", csv.string(), "--epochs", "1",
                            "--out", (root / "beat").string()},
                           &out);
  std::size_t rows = 0;
  if (code == 0) {
    std::istringstream in(slurp(root / "beat" / "confusion.csv"));
    for (std::string l; std::getline(in, l);) rows += !l.empty();
  }
  const std::string acc = out.find("accuracy=") != std::string::npos ? out.substr(out.find("accuracy=") + 9, 6) : "-";
  // Header line plus one row per model class.
  report(9, "beat csv end to end", code == 0 && rows == 14,
         "L=360, 13 labels (1 rare class dropped), confusion " + std::to_string(rows ? rows - 1 : 0) + "x" +
             std::to_string(rows ? rows - 1 : 0) + ", accuracy " + acc + " after 1 epoch, " +
             fmt("%.0f s", seconds_since(t0)));
}

}  // namespace

int main() {
  const fs::path root = support::temp_dir("acceptance");
  gradcheck();
  routing();
  squash_law();
  margin_examples();
  shapes();
  const ToyRun first = toy_run(root / "toy_a");
  synthetic_task(first);
  beat_csv(root);
  const ToyRun second = toy_run(root / "toy_b");
  determinism(first, second);
  std::printf("%d of 10 criteria failed\n", failures);
  return failures == 0 ? 0 : 1;
}
