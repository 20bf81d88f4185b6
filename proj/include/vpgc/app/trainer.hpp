#pragma once

#include <filesystem>
#include <functional>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "vpgc/app/run_config.hpp"
#include "vpgc/diagnostics/diagnostics.hpp"

namespace vpgc::app {

using Model = net::Network<float>;

struct EpochMetrics {
  int epoch = 0;  // 1-based
  double cross_entropy = 0;
  std::vector<double> kl;  // batch-mean KL per partial layer
  double total = 0;
  double train_accuracy = 0;
  /// Accuracy on the test set under the eval protocol; NaN when not evaluated.
  double test_accuracy = 0;
};

struct TrainOutcome {
  std::vector<EpochMetrics> history;
  std::optional<diag::StabilityTrace> stability;
  /// Set when a non-finite loss stopped the run; the last checkpoint is kept.
  bool aborted = false;
  std::string message;
  std::filesystem::path checkpoint, best_checkpoint, metrics_csv;
};

/// Test hook called before every optimizer step with (model, epoch, step).
using StepHook = std::function<void(Model&, int, int)>;

/// Trains the configured model on `data` and writes into config.out:
///   metrics.csv       epoch,cross_entropy,kl_<layer>...,total,train_accuracy,test_accuracy
///   checkpoint.vpgc   after every epoch (initial weights before epoch 1)
///   best.vpgc         highest test accuracy (train accuracy without a test set)
///   stability.csv     when train.stability_layer >= 0
///   config.ini        canonical config
///   train.log         wall-clock sidecar, the only file with timestamps
/// Randomness comes from named streams of config.seed: "init", "data",
/// "sampling", "recal", "probe" and "eval".
TrainOutcome train(const RunConfig& config, const DatasetPair& data, const StepHook& hook = {});

void write_metrics_csv(std::ostream& out, const std::vector<int>& kl_layers, const std::vector<EpochMetrics>& rows);

/// Re-estimates normalization statistics on up to `batches` shuffled training batches.
void recalibrate(Model& model, const data::ImageDataset& train, int batches, int batch_size, uint64_t seed, int epoch);

/// Fraction of argmax predictions matching the labels.
double accuracy(const std::vector<std::vector<double>>& probabilities, const std::vector<int>& labels);

}  // namespace vpgc::app
