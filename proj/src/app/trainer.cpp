#include "vpgc/app/trainer.hpp"

#include <chrono>
#include <cmath>
#include <ctime>
#include <fstream>
#include <iomanip>
#include <limits>
#include <numeric>
#include <sstream>

#include "vpgc/net/checkpoint.hpp"

namespace vpgc::app {

namespace fs = std::filesystem;

namespace {

void write_text(const fs::path& path, const std::string& text) {
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot write " + tmp.string());
    out << text;
    if (!out) throw std::runtime_error("write failed for " + tmp.string());
  }
  fs::rename(tmp, path);
}

class SideLog {
 public:
  explicit SideLog(const fs::path& path) : out_(path, std::ios::trunc), start_(std::chrono::steady_clock::now()) {}

  void line(const std::string& text) {
    const auto now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
    const double elapsed = std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
    std::tm tm{};
    gmtime_r(&now, &tm);
    out_ << std::put_time(&tm, "%Y-%m-%dT%H:%M:%SZ") << " +" << std::fixed << std::setprecision(1) << elapsed << "s "
         << text << '\n';
    out_.flush();
  }

 private:
  std::ofstream out_;
  std::chrono::steady_clock::time_point start_;
};

}  // namespace

double accuracy(const std::vector<std::vector<double>>& probabilities, const std::vector<int>& labels) {
  if (labels.empty()) return std::numeric_limits<double>::quiet_NaN();
  int64_t ok = 0;
  for (size_t i = 0; i < labels.size(); ++i) {
    const auto& row = probabilities.at(i);
    ok += std::max_element(row.begin(), row.end()) - row.begin() == labels[i];
  }
  return static_cast<double>(ok) / static_cast<double>(labels.size());
}

void recalibrate(Model& model, const data::ImageDataset& train, int batches, int batch_size, uint64_t seed, int epoch) {
  if (batches <= 0 || train.size() == 0) return;
  Rng rng = Rng::stream(seed, "recal", static_cast<uint64_t>(epoch));
  const auto order = rng.permutation(static_cast<int>(train.size()));
  std::vector<ad::Tensor<float>> xs;
  for (int b = 0; b < batches; ++b) {
    const size_t lo = static_cast<size_t>(b) * batch_size;
    if (lo >= order.size()) break;
    const size_t hi = std::min(order.size(), lo + batch_size);
    std::vector<int64_t> idx(order.begin() + lo, order.begin() + hi);
    xs.push_back(train.batch<float>(idx));
  }
  model.recalibrate_norms(xs, rng);
}

void write_metrics_csv(std::ostream& out, const std::vector<int>& kl_layers, const std::vector<EpochMetrics>& rows) {
  out << "epoch,cross_entropy";
  for (int l : kl_layers) out << ",kl_" << l;
  out << ",total,train_accuracy,test_accuracy\n";
  for (const auto& r : rows) {
    out << r.epoch << ',' << diag::format_number(r.cross_entropy);
    for (double k : r.kl) out << ',' << diag::format_number(k);
    out << ',' << diag::format_number(r.total) << ',' << diag::format_number(r.train_accuracy) << ','
        << diag::format_number(r.test_accuracy) << '\n';
  }
}

TrainOutcome train(const RunConfig& config, const DatasetPair& data, const StepHook& hook) {
  const auto& spec = config.train;
  const auto& train_set = data.train;
  if (train_set.size() == 0) throw ConfigError("config key 'data.kind': training set is empty");
  const auto model_config = config.model_config(train_set.classes(), static_cast<int>(train_set.channels));

  fs::create_directories(config.out);
  TrainOutcome outcome;
  outcome.checkpoint = config.out / "checkpoint.vpgc";
  outcome.best_checkpoint = config.out / "best.vpgc";
  outcome.metrics_csv = config.out / "metrics.csv";
  write_text(config.out / "config.ini", config.to_ini());
  SideLog log(config.out / "train.log");

  Rng init = Rng::stream(config.seed, "init");
  Model model(model_config, init);
  const auto kl_layers = model.partial_layers();
  net::Optimizer<float> model_opt(spec.model_optimizer), encoder_opt(spec.encoder_optimizer);
  Rng sampling = Rng::stream(config.seed, "sampling");

  std::optional<data::ImageDataset> probes;
  if (spec.stability_layer >= 0) {
    const auto d = model_config.dist;
    if (d != net::DistKind::Discrete && d != net::DistKind::Gumbel) {
      throw ConfigError("config key 'train.stability_layer': selection frequencies need a discrete or gumbel model");
    }
    if (std::find(kl_layers.begin(), kl_layers.end(), spec.stability_layer) == kl_layers.end()) {
      throw ConfigError("config key 'train.stability_layer': layer " + std::to_string(spec.stability_layer) +
                        " is not a partial layer");
    }
    Rng pick = Rng::stream(config.seed, "probe");
    auto order = pick.permutation(static_cast<int>(train_set.size()));
    order.resize(std::min<size_t>(order.size(), static_cast<size_t>(spec.stability_probes)));
    probes = train_set.subset(std::vector<int64_t>(order.begin(), order.end()));
    outcome.stability = diag::StabilityTrace{spec.stability_layer, model_config.layers[spec.stability_layer].elements, {}, {}};
  }

  const diag::EvalMode eval_mode{config.eval.deterministic, config.eval.samples, Rng::stream(config.seed, "eval").bits()};
  const bool has_test = data.test.size() > 0;

  auto flush_files = [&] {
    std::ostringstream csv;
    write_metrics_csv(csv, kl_layers, outcome.history);
    write_text(outcome.metrics_csv, csv.str());
    if (outcome.stability) {
      std::ostringstream s;
      diag::write_stability_csv(s, *outcome.stability);
      write_text(config.out / "stability.csv", s.str());
    }
  };

  net::save_checkpoint(model, outcome.checkpoint);
  net::save_checkpoint(model, outcome.best_checkpoint);
  flush_files();
  log.line("start seed=" + std::to_string(config.seed) + " train=" + std::to_string(train_set.size()) +
           " test=" + std::to_string(data.test.size()));

  double best = -1;
  const int batch = spec.batch_size;
  for (int epoch = 1; epoch <= spec.epochs; ++epoch) {
    Rng shuffle = Rng::stream(config.seed, "data", static_cast<uint64_t>(epoch));
    const auto order = shuffle.permutation(static_cast<int>(train_set.size()));
    EpochMetrics m;
    m.epoch = epoch;
    m.kl.assign(kl_layers.size(), 0.0);
    int64_t correct = 0;
    int step = 0;
    try {
      for (size_t lo = 0; lo < order.size(); lo += batch, ++step) {
        const size_t hi = std::min(order.size(), lo + batch);
        const std::vector<int64_t> idx(order.begin() + lo, order.begin() + hi);
        if (hook) hook(model, epoch, step);
        const auto r = net::train_step(model, model_opt, encoder_opt, train_set.batch<float>(idx),
                                       train_set.batch_labels(idx), spec.lambda, sampling, spec.include_kl);
        const double w = static_cast<double>(idx.size());
        m.cross_entropy += r.cross_entropy * w;
        for (size_t k = 0; k < r.kl.size(); ++k) m.kl[k] += r.kl[k] * w;
        m.total += r.total * w;
        correct += r.correct;
      }
    } catch (const ad::NumericError& e) {
      outcome.aborted = true;
      outcome.message = "epoch " + std::to_string(epoch) + " step " + std::to_string(step) + ": " + e.what() +
                        "; keeping checkpoint from epoch " + std::to_string(epoch - 1);
      log.line("abort " + outcome.message);
      flush_files();
      return outcome;
    }
    const double n = static_cast<double>(train_set.size());
    m.cross_entropy /= n;
    for (auto& k : m.kl) k /= n;
    m.total /= n;
    m.train_accuracy = static_cast<double>(correct) / n;

    recalibrate(model, train_set, spec.recalibrate_batches, batch, config.seed, epoch);
    m.test_accuracy = std::numeric_limits<double>::quiet_NaN();
    if (has_test && (spec.evaluate_each_epoch || epoch == spec.epochs)) {
      m.test_accuracy = accuracy(diag::probabilities(model, data.test, eval_mode), data.test.labels);
    }
    if (outcome.stability) {
      Rng probe_rng = Rng::stream(config.seed, "probe", static_cast<uint64_t>(epoch));
      outcome.stability->record(
          epoch, diag::selection_frequency(model, spec.stability_layer, *probes, spec.stability_draws, probe_rng));
    }
    outcome.history.push_back(m);

    net::save_checkpoint(model, outcome.checkpoint);
    const double score = has_test && !std::isnan(m.test_accuracy) ? m.test_accuracy : m.train_accuracy;
    if (score > best) {
      best = score;
      net::save_checkpoint(model, outcome.best_checkpoint);
    }
    flush_files();
    log.line("epoch " + std::to_string(epoch) + " ce=" + diag::format_number(m.cross_entropy) +
             " train_acc=" + diag::format_number(m.train_accuracy) + " test_acc=" + diag::format_number(m.test_accuracy));
  }
  log.line("done");
  return outcome;
}

}  // namespace vpgc::app
