// Acceptance criteria 1-11. `acceptance [N ...] [--work DIR]` runs the listed
// criteria (all by default) and prints one PASS/FAIL line per criterion.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <numbers>
#include <sstream>

#include "vpgc/app/checks.hpp"
#include "vpgc/app/commands.hpp"
#include "vpgc/app/trainer.hpp"
#include "vpgc/net/checkpoint.hpp"

using namespace vpgc;
using namespace vpgc::app;
namespace fs = std::filesystem;

namespace {

fs::path g_work = fs::temp_directory_path() / "vpgc_acceptance";

struct Outcome {
  bool passed = false;
  std::string detail;
};

Outcome from_checks(std::initializer_list<CheckResult> results) {
  Outcome o{true, ""};
  for (const auto& r : results) {
    o.passed = o.passed && r.passed;
    o.detail += (o.detail.empty() ? "" : "; ") + r.name + ": " + r.detail;
  }
  return o;
}

std::string fixed(double v, int digits = 2) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", digits, v);
  return buf;
}

std::vector<char> file_bytes(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

double elapsed_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

// ---------------------------------------------------------------- criterion 8

const char* kMnistConfig = R"(
[data]
kind = mnist67-180
source = glyphs
glyphs_train_per_digit = 500
glyphs_test_per_digit = 100
max_per_digit = 500
[model]
recipe = se2
elements = 8
channels = 8
dist = continuous
partial = 2
[train]
epochs = 25
batch_size = 64
lambda = 0.01
model_optimizer = adamw
model_lr = 0.001
encoder_optimizer = sgd
encoder_lr = 0.001
evaluate_each_epoch = false
[eval]
deterministic = true
)";

// Share of `images` whose argmax is `want` after rotating by `degrees`.
double rotated_rate(Model& model, const data::ImageDataset& images, double degrees, int want) {
  data::ImageDataset rotated{images.channels, images.height, images.width, {}, {}, images.class_names, {}};
  for (int64_t i = 0; i < images.size(); ++i) {
    auto im = data::rotate_image(images.image(i), images.channels, images.height, images.width,
                                 degrees * std::numbers::pi / 180.0);
    for (float& v : im) v = std::clamp(v, 0.0f, 1.0f);
    rotated.append(im, images.labels[i]);
  }
  const auto probs = diag::probabilities(model, rotated, diag::EvalMode{});
  int64_t hit = 0;
  for (const auto& row : probs) hit += std::max_element(row.begin(), row.end()) - row.begin() == want;
  return static_cast<double>(hit) / static_cast<double>(probs.size());
}

Outcome criterion_8() {
  int good = 0;
  std::string detail;
  for (uint64_t seed = 1; seed <= 3; ++seed) {
    const auto t0 = std::chrono::steady_clock::now();
    auto config = RunConfig::parse(std::string("[run]\nseed = ") + std::to_string(seed) + "\nout = " +
                                   (g_work / ("c8_seed" + std::to_string(seed))).string() + "\n" + kMnistConfig);
    const auto datasets = make_datasets(config.data, config.seed);
    const auto outcome = train(config, datasets);
    auto model = net::load_checkpoint<float>(outcome.checkpoint);
    // The test split lists the unrotated 6s and 7s first: 100 + 100 held-out images.
    std::vector<int64_t> six, seven;
    for (int64_t i = 0; i < datasets.test.size() / 2; ++i) (datasets.test.labels[i] == 0 ? six : seven).push_back(i);
    const auto sixes = datasets.test.subset(six), sevens = datasets.test.subset(seven);
    double worst = 1.0;
    std::string rates;
    for (double deg : {-60.0, 0.0, 60.0}) {
      const double r = rotated_rate(model, sixes, deg, 0);
      worst = std::min(worst, r);
      rates += " 6@" + fixed(deg, 0) + "->6 " + fixed(r);
    }
    for (double deg : {150.0, 180.0, 210.0}) {
      const double r = rotated_rate(model, sixes, deg, 2);
      worst = std::min(worst, r);
      rates += " 6@" + fixed(deg, 0) + "->9 " + fixed(r);
    }
    double worst7 = 1.0;
    for (int k = 0; k < 8; ++k) worst7 = std::min(worst7, rotated_rate(model, sevens, 45.0 * k, 1));
    rates += " 7@all min " + fixed(worst7);
    const bool ok = worst >= 0.8 && worst7 >= 0.8;
    good += ok;
    detail += "seed " + std::to_string(seed) + (ok ? " ok" : " miss") + " (" + std::to_string(six.size()) + " sixes, " +
              std::to_string(seven.size()) + " sevens," + rates + ", train acc " +
              fixed(outcome.history.back().train_accuracy) + ", " + fixed(elapsed_since(t0) / 60, 1) + " min); ";
    std::cerr << "criterion 8: " << detail << std::endl;
  }
  return {good >= 2, std::to_string(good) + "/3 seeds meet the 80% rates; " + detail};
}

// ---------------------------------------------------------------- criteria 9, 10

std::string toy_colormnist(uint64_t seed, const std::string& out, const std::string& dist, int epochs,
                           const std::string& extra_train = "") {
  return "[run]\nseed = " + std::to_string(seed) + "\nout = " + (g_work / out).string() +
         "\n[data]\nkind = colormnist\nglyphs_train_per_digit = 400\nglyphs_test_per_digit = 20\n"
         "colors = 2\nclasses = 10\nhead = 200\ntest_head = 10\n"
         "[model]\nrecipe = hue\nelements = 3\nchannels = 4\ndist = " + dist + "\npartial = 4\n"
         "[train]\nepochs = " + std::to_string(epochs) +
         "\nmodel_optimizer = adam\nmodel_lr = 0.001\nencoder_optimizer = adam\nencoder_lr = 0.0001\n"
         "evaluate_each_epoch = false\nrecalibrate_batches = 0\n" + extra_train;
}

Outcome criterion_9() {
  int good = 0;
  std::string detail;
  for (uint64_t seed = 1; seed <= 3; ++seed) {
    std::map<std::string, double> variance;
    for (const std::string dist : {"discrete", "gumbel"}) {
      const auto config = RunConfig::parse(toy_colormnist(
          seed, "c9_" + dist + "_seed" + std::to_string(seed), dist, 200,
          "stability_layer = 4\nstability_probes = 32\nstability_draws = 32\n"));
      const auto outcome = train(config, make_datasets(config.data, config.seed));
      variance[dist] = outcome.stability->trailing_variance(0.2);
    }
    const bool ok = variance["discrete"] < variance["gumbel"];
    good += ok;
    detail += "seed " + std::to_string(seed) + ": novel " + diag::format_number(variance["discrete"]) + " vs gumbel " +
              diag::format_number(variance["gumbel"]) + (ok ? " ok" : " miss") + "; ";
    std::cerr << "criterion 9: " << detail << std::endl;
  }
  return {good >= 2, std::to_string(good) + "/3 seeds with lower trailing variance; " + detail};
}

Outcome criterion_10() {
  const int epochs = 20;
  const auto zero = RunConfig::parse(toy_colormnist(4, "c10_lambda0", "discrete", epochs, "lambda = 0\n"));
  const auto no_kl = RunConfig::parse(toy_colormnist(4, "c10_nokl", "discrete", epochs, "include_kl = false\n"));
  const auto data = make_datasets(zero.data, zero.seed);
  const auto a = train(zero, data), b = train(no_kl, data);
  const bool same_metrics = file_bytes(a.metrics_csv) == file_bytes(b.metrics_csv);
  const bool same_ckpt = file_bytes(a.checkpoint) == file_bytes(b.checkpoint);

  const auto one = RunConfig::parse(toy_colormnist(4, "c10_lambda1", "discrete", epochs, "lambda = 1\n"));
  const auto c = train(one, data);
  auto kl_sum = [](const EpochMetrics& m) {
    double s = 0;
    for (double k : m.kl) s += k;
    return s;
  };
  const double first = kl_sum(c.history.front()), last = kl_sum(c.history.back());
  const bool ok = same_metrics && same_ckpt && last < first;
  return {ok, std::string("lambda 0 vs no KL: metrics ") + (same_metrics ? "identical" : "DIFFER") + ", checkpoint " +
                  (same_ckpt ? "identical" : "DIFFERS") + "; lambda 1 KL epoch 1 " + diag::format_number(first) +
                  " -> epoch " + std::to_string(epochs) + " " + diag::format_number(last)};
}

// ---------------------------------------------------------------- criterion 11

Outcome criterion_11() {
  std::ostringstream sink;
  Streams io{sink, sink};
  const auto dir = g_work / "c11";
  const auto config = RunConfig::parse(
      "[run]\nseed = 11\nout = " + dir.string() +
      "\n[data]\nkind = mnist67-180\nglyphs_train_per_digit = 40\nglyphs_test_per_digit = 10\n"
      "[model]\nrecipe = se2\nchannels = 4\n[train]\nepochs = 2\nrecalibrate_batches = 2\n");
  const std::vector<std::string> names{"metrics.csv", "checkpoint.vpgc", "best.vpgc", "config.ini"};
  std::vector<std::vector<std::vector<char>>> runs;
  for (int run = 0; run < 2; ++run) {
    fs::remove_all(dir);
    if (cmd_train(config, io) != kOk) return {false, "train failed: " + sink.str()};
    runs.emplace_back();
    for (const auto& name : names) runs.back().push_back(file_bytes(dir / name));
  }
  std::string detail;
  bool ok = true;
  for (size_t i = 0; i < names.size(); ++i) {
    const bool same = !runs[0][i].empty() && runs[0][i] == runs[1][i];
    ok = ok && same;
    detail += names[i] + (same ? " identical (" + std::to_string(runs[0][i].size()) + " bytes) " : " DIFFERS ");
  }
  return {ok, detail};
}

const std::map<int, std::function<Outcome()>>& criteria() {
  static const std::map<int, std::function<Outcome()>> table{
      {1, [] { return from_checks({check_worked_example()}); }},
      {2, [] { return from_checks({check_hue_equivariance()}); }},
      {3, [] { return from_checks({check_rotation_equivariance()}); }},
      {4, [] { return from_checks({check_primitive_gradients(), check_elbo_gradient()}); }},
      {5, [] { return from_checks({check_kl_continuous(), check_kl_discrete()}); }},
      {6, [] { return from_checks({check_equivariance_bound(100)}); }},
      {7, [] { return from_checks({check_forced_masks()}); }},
      {8, criterion_8},
      {9, criterion_9},
      {10, criterion_10},
      {11, criterion_11},
  };
  return table;
}

}  // namespace

int main(int argc, char** argv) {
  std::vector<int> wanted;
  for (int i = 1; i < argc; ++i) {
    const std::string arg = argv[i];
    if (arg == "--work" && i + 1 < argc) {
      g_work = argv[++i];
    } else {
      try {
        wanted.push_back(std::stoi(arg));
      } catch (const std::exception&) {
        std::cerr << "usage: acceptance [N ...] [--work DIR]\n";
        return 2;
      }
    }
  }
  if (wanted.empty()) {
    for (const auto& [n, _] : criteria()) wanted.push_back(n);
  }
  fs::create_directories(g_work);
  bool all = true;
  for (int n : wanted) {
    const auto it = criteria().find(n);
    if (it == criteria().end()) {
      std::cerr << "no criterion " << n << '\n';
      return 2;
    }
    const auto t0 = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = it->second();
    } catch (const std::exception& e) {
      o = {false, std::string("threw: ") + e.what()};
    }
    all = all && o.passed;
    std::cout << "criterion " << n << ": " << (o.passed ? "PASS" : "FAIL") << " [" << fixed(elapsed_since(t0), 1)
              << " s] " << o.detail << std::endl;
  }
  return all ? 0 : 1;
}
