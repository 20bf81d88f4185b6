#pragma once

#include <map>
#include <optional>
#include <string>
#include <vector>

#include "vpgc/conv/conv.hpp"
#include "vpgc/dist/dist.hpp"
#include "vpgc/tensor/autodiff.hpp"
#include "vpgc/tensor/param.hpp"

namespace vpgc::net {

using ad::Tensor;
using conv::ConvKind;
using conv::ConvLayerConfig;
using conv::PartialMode;
using group::FeatureMap;
using group::GroupKind;
using group::GroupSampleSet;

/// Flat, key-sorted settings. Section "a" key "b" is stored as "a.b".
using KeyValues = std::map<std::string, std::string>;

/// Distribution family used by every partial layer of a model.
enum class DistKind { Continuous, Density, Discrete, Gumbel };

std::string to_string(DistKind kind);
DistKind parse_dist_kind(const std::string& name);

struct ModelConfig {
  GroupKind group = GroupKind::Rotation;
  int image_channels = 1;
  int classes = 3;
  std::vector<ConvLayerConfig> layers;
  /// 2x2 max pooling after layer i.
  std::vector<bool> pool_after;
  DistKind dist = DistKind::Continuous;
  /// Selection slack for discrete masks; negative means 1 / (4 m).
  double eta = -1;
  double gumbel_temperature = 1.0;
  bool batch_norm = true;
  double bn_momentum = 0.1;
  double bn_epsilon = 1e-5;

  double effective_eta() const;
  /// Throws std::invalid_argument naming the first inconsistent field.
  void validate() const;
  KeyValues to_kv() const;
  static ModelConfig from_kv(const KeyValues& kv);
};

/// Lifting conv, two group convs, last one variational, on an n-point grid.
ModelConfig se2_recipe(int grid = 8, int channels = 8, int classes = 3);
/// Seven-layer hue stack with 3x3 kernels; layers listed in `partial` are variational.
ModelConfig hue_recipe(int m = 3, int classes = 10, int channels = 4, std::vector<int> partial = {4});

/// Normalization with statistics shared across batch, group and space so it
/// commutes with the regular action.
template <typename T>
class GroupBatchNorm {
 public:
  GroupBatchNorm() = default;
  GroupBatchNorm(int channels, double momentum, double epsilon);

  FeatureMap<T> operator()(const FeatureMap<T>& f, bool training);
  ad::ParamList<T> parameters() { return {{"gamma", &gamma_}, {"beta", &beta_}}; }

  std::vector<double>& running_mean() { return running_mean_; }
  std::vector<double>& running_var() { return running_var_; }
  /// Switches training-mode updates to an equal-weight running average that
  /// starts from scratch; `false` returns to the exponential update.
  void set_cumulative(bool on);

 private:
  Tensor<T> gamma_, beta_;
  std::vector<double> running_mean_, running_var_;
  double momentum_ = 0.1, epsilon_ = 1e-5;
  int64_t cumulative_count_ = -1;
};

struct ForwardOptions {
  bool training = false;
  /// Evaluation without noise: grid-midpoint angles, expected discrete masks,
  /// argmax Gumbel selection.
  bool deterministic = true;
  /// Draws for stochastic forwards; required unless deterministic.
  Rng* rng = nullptr;
  /// Per-layer override of the output element weights (layer index -> (m) or
  /// (batch, m)); the layer's distribution sample and KL are still computed.
  std::map<int, std::vector<double>> forced_weights;
  /// Treat every partial layer as fully equivariant.
  bool force_full = false;
};

template <typename T>
struct ForwardResult {
  Tensor<T> logits;
  /// One entry per partial layer, in layer order.
  std::vector<dist::DistSample<T>> samples;
  std::vector<int> sample_layers;
};

/// Stack of lifting/group convolutions with normalization, ReLU and pooling,
/// closed by group pooling, spatial pooling and a linear classifier.
template <typename T>
class Network {
 public:
  Network() = default;
  Network(ModelConfig config, Rng& init);

  ForwardResult<T> forward(const Tensor<T>& images, const ForwardOptions& options);

  const ModelConfig& config() const { return config_; }
  /// Classifier parameters (kernels, normalization, head).
  ad::ParamList<T> model_parameters();
  /// Distribution parameters (encoders and static thetas).
  ad::ParamList<T> encoder_parameters();
  ad::ParamList<T> parameters();
  /// Non-trainable state saved alongside the parameters.
  std::map<std::string, std::vector<double>*> buffers();

  std::vector<int> partial_layers() const;
  /// theta (or Gumbel logits) that layer `index` would use for the input of
  /// that layer; exposed for stability traces.
  dist::DistSample<T> sample_layer(int index, const FeatureMap<T>& input, const ForwardOptions& options) const;

  conv::ConvKernel<T>& kernel(int i) { return kernels_.at(i); }
  Tensor<T>& head_weight() { return head_w_; }
  Tensor<T>& head_bias() { return head_b_; }

  /// Re-estimates normalization statistics as plain averages over `batches`
  /// with the current parameters (stochastic training-mode forwards, no
  /// gradients). The exponential averages lag far behind fast-moving kernels.
  void recalibrate_norms(const std::vector<Tensor<T>>& batches, Rng& rng);

  /// Runs layers [0, upto) and returns the feature map entering layer `upto`.
  FeatureMap<T> features_before(const Tensor<T>& images, int upto, const ForwardOptions& options);

 private:
  FeatureMap<T> run_layer(int i, const FeatureMap<T>& input, const ForwardOptions& options, ForwardResult<T>* result);

  ModelConfig config_;
  std::vector<conv::ConvKernel<T>> kernels_;
  std::vector<GroupBatchNorm<T>> norms_;
  std::map<int, dist::EncoderNet<T>> encoders_;
  std::map<int, Tensor<T>> static_raw_;  // unsquashed theta or logits of static partial layers
  Tensor<T> head_w_, head_b_;
};

/// Loss = cross-entropy + lambda * sum over partial layers of the batch-mean KL.
template <typename T>
struct ElboBreakdown {
  Tensor<T> total;
  /// Mean negative log-likelihood, i.e. -L_CLS.
  double cross_entropy = 0;
  std::vector<double> kl;
  double lambda = 0;
  double total_value = 0;
};

/// With `include_kl` false the objective is the cross-entropy alone while the
/// KL values are still reported.
template <typename T>
ElboBreakdown<T> elbo_loss(const Tensor<T>& logits, const std::vector<int>& labels,
                           const std::vector<dist::DistSample<T>>& samples, double lambda, bool include_kl = true);

enum class OptimizerKind { Sgd, Adam, AdamW };

std::string to_string(OptimizerKind kind);
OptimizerKind parse_optimizer_kind(const std::string& name);

struct OptimizerConfig {
  OptimizerKind kind = OptimizerKind::AdamW;
  double lr = 1e-3;
  double weight_decay = 0;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

/// Per-parameter moment buffers keyed by parameter name.
template <typename T>
class Optimizer {
 public:
  explicit Optimizer(OptimizerConfig config = {}) : config_(config) {}

  /// Replaces every parameter with its updated value as a fresh leaf.
  void step(ad::ParamList<T>& params, const ad::GradientMap<T>& grads);
  int64_t steps() const { return steps_; }
  const OptimizerConfig& config() const { return config_; }

 private:
  OptimizerConfig config_;
  int64_t steps_ = 0;
  std::map<std::string, std::vector<double>> m_, v_;
};

struct StepResult {
  double cross_entropy = 0;
  std::vector<double> kl;
  double total = 0;
  int correct = 0;
};

/// One forward/backward pass and one update of each optimizer. Parameters are
/// untouched if the loss is not finite (NumericError).
template <typename T>
StepResult train_step(Network<T>& net, Optimizer<T>& model_opt, Optimizer<T>& encoder_opt, const Tensor<T>& images,
                      const std::vector<int>& labels, double lambda, Rng& rng, bool include_kl = true);

}  // namespace vpgc::net
