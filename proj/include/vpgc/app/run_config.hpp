#pragma once

#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <string>
#include <vector>

#include "vpgc/data/dataset.hpp"
#include "vpgc/net/network.hpp"

namespace vpgc::app {

/// Invalid run configuration; the message names the offending key.
class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

struct DataSpec {
  std::string kind = "mnist67-180";  // mnist67-180 | colormnist | digits
  std::string source = "glyphs";     // glyphs | idx | file (containers written by synth; kind ignored)
  int glyphs_train_per_digit = 500;
  int glyphs_test_per_digit = 100;
  std::filesystem::path train_images, train_labels, test_images, test_labels;
  int max_per_digit = -1;
  int colors = 3;
  int classes = 30;
  double exponent = 1.5;
  int head = 500;
  int test_head = 100;
};

struct ModelSpec {
  std::string recipe = "se2";  // se2 | hue
  int elements = 8;
  int channels = 8;
  std::string dist = "continuous";
  std::vector<int> partial = {2};
  std::string partial_mode = "variational";
  double eta = -1;
  double gumbel_temperature = 1.0;
  double siren_omega0 = 5.0;
};

struct TrainSpec {
  int epochs = 30;
  int batch_size = 64;
  double lambda = 0.01;
  bool include_kl = true;
  net::OptimizerConfig model_optimizer{net::OptimizerKind::AdamW, 1e-3};
  net::OptimizerConfig encoder_optimizer{net::OptimizerKind::Sgd, 1e-3};
  int recalibrate_batches = 16;
  int stability_layer = -1;  // -1: no stability trace
  int stability_probes = 32;
  int stability_draws = 64;
  bool evaluate_each_epoch = true;
};

struct EvalSpec {
  bool deterministic = true;
  int samples = 8;
};

/// Everything a command needs, read from an INI file with sections
/// [run] [data] [model] [train] [eval]. Unknown keys and ill-typed values
/// are rejected before any work starts.
struct RunConfig {
  uint64_t seed = 0;
  std::filesystem::path out = "out";
  DataSpec data;
  ModelSpec model;
  TrainSpec train;
  EvalSpec eval;

  static RunConfig parse(const std::string& ini_text);
  static RunConfig load(const std::filesystem::path& path);
  /// Canonical "section.key" form with every key present.
  net::KeyValues to_kv() const;
  /// Sorted "section.key = value" lines; parse(to_ini()) round-trips.
  std::string to_ini() const;
  /// Architecture for a dataset with `classes` classes and `channels` input channels.
  net::ModelConfig model_config(int classes, int image_channels) const;
};

struct DatasetPair {
  data::ImageDataset train, test;
};

/// Builds the train/test datasets described by `spec` from glyphs, IDX files
/// or dataset containers.
DatasetPair make_datasets(const DataSpec& spec, uint64_t seed);

/// Dataset container (tag "dataset"): pixels, labels, class names and provenance.
void save_dataset(const data::ImageDataset& d, const std::filesystem::path& path);
data::ImageDataset load_dataset(const std::filesystem::path& path);

}  // namespace vpgc::app
