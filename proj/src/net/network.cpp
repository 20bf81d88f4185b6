#include "vpgc/net/network.hpp"

#include <charconv>
#include <cmath>
#include <numbers>
#include <stdexcept>

namespace vpgc::net {

namespace {

std::string fmt_double(double v) {
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

std::string get(const KeyValues& kv, const std::string& key) {
  auto it = kv.find(key);
  if (it == kv.end()) throw std::invalid_argument("model config: missing key '" + key + "'");
  return it->second;
}

int get_int(const KeyValues& kv, const std::string& key) {
  const auto s = get(kv, key);
  int v = 0;
  auto res = std::from_chars(s.data(), s.data() + s.size(), v);
  if (res.ec != std::errc() || res.ptr != s.data() + s.size()) {
    throw std::invalid_argument("model config: key '" + key + "' is not an integer: '" + s + "'");
  }
  return v;
}

double get_double(const KeyValues& kv, const std::string& key) {
  const auto s = get(kv, key);
  double v = 0;
  auto res = std::from_chars(s.data(), s.data() + s.size(), v);
  if (res.ec != std::errc() || res.ptr != s.data() + s.size()) {
    throw std::invalid_argument("model config: key '" + key + "' is not a number: '" + s + "'");
  }
  return v;
}

bool get_bool(const KeyValues& kv, const std::string& key) {
  const auto s = get(kv, key);
  if (s == "true" || s == "1") return true;
  if (s == "false" || s == "0") return false;
  throw std::invalid_argument("model config: key '" + key + "' is not a boolean: '" + s + "'");
}

GroupSampleSet full_set(const ConvLayerConfig& layer) {
  return layer.group == GroupKind::Hue ? GroupSampleSet::hue(layer.elements) : GroupSampleSet::rotation_grid(layer.elements);
}

template <typename T>
FeatureMap<T> map_data(const FeatureMap<T>& f, Tensor<T> data) {
  return {std::move(data), f.elements, f.item_angles};
}

template <typename T>
FeatureMap<T> pool2(const FeatureMap<T>& f) {
  const int64_t b = f.batch(), g = f.group_size(), c = f.channels();
  auto pooled = ad::max_pool2d(ad::reshape(f.data, {b, g * c, f.height(), f.width()}), 2);
  return map_data(f, ad::reshape(pooled, {b, g, c, pooled.dim(2), pooled.dim(3)}));
}

template <typename T>
Tensor<T> squash(const Tensor<T>& raw, dist::Squash mode) {
  if (mode == dist::Squash::UnitInterval) return ad::sigmoid(raw);
  return ad::add_scalar(ad::softplus(raw), static_cast<T>(dist::kThetaFloor));
}

}  // namespace

std::string to_string(DistKind kind) {
  switch (kind) {
    case DistKind::Continuous: return "continuous";
    case DistKind::Density: return "density";
    case DistKind::Discrete: return "discrete";
    case DistKind::Gumbel: return "gumbel";
  }
  return "continuous";
}

DistKind parse_dist_kind(const std::string& name) {
  if (name == "continuous") return DistKind::Continuous;
  if (name == "density") return DistKind::Density;
  if (name == "discrete") return DistKind::Discrete;
  if (name == "gumbel") return DistKind::Gumbel;
  throw std::invalid_argument("unknown distribution '" + name + "' (expected continuous, density, discrete or gumbel)");
}

double ModelConfig::effective_eta() const {
  if (eta >= 0) return eta;
  const int m = layers.empty() ? 1 : layers.front().elements;
  return 1.0 / (4.0 * m);
}

void ModelConfig::validate() const {
  auto fail = [](const std::string& field, const std::string& why) {
    throw std::invalid_argument("model config: " + field + ": " + why);
  };
  if (layers.empty()) fail("layers", "at least one layer is required");
  if (pool_after.size() != layers.size()) fail("pool_after", "one entry per layer is required");
  if (classes < 2) fail("classes", "need at least two classes");
  if (image_channels < 1) fail("image_channels", "must be positive");
  if (group == GroupKind::Hue && image_channels % 3 != 0) fail("image_channels", "hue models need RGB input");
  if (!(bn_momentum > 0 && bn_momentum <= 1)) fail("bn_momentum", "must lie in (0, 1]");
  if (!(bn_epsilon > 0)) fail("bn_epsilon", "must be positive");
  if (!(gumbel_temperature > 0)) fail("gumbel_temperature", "must be positive");
  const bool rotation_dist = dist == DistKind::Continuous || dist == DistKind::Density;
  if ((group == GroupKind::Rotation) != rotation_dist) {
    fail("dist", to_string(dist) + " does not apply to " + group::to_string(group) + " models");
  }
  for (size_t i = 0; i < layers.size(); ++i) {
    const auto& l = layers[i];
    const std::string name = "layer." + std::to_string(i);
    if (l.group != group) fail(name + ".group", "differs from the model group");
    if (l.kind != (i == 0 ? ConvKind::Lift : ConvKind::Group)) {
      fail(name + ".kind", i == 0 ? "the first layer must lift" : "only the first layer may lift");
    }
    const int expected_in = i == 0 ? image_channels : layers[i - 1].out_channels;
    if (l.in_channels != expected_in) fail(name + ".in_channels", "expected " + std::to_string(expected_in));
    if (l.out_channels < 1) fail(name + ".out_channels", "must be positive");
    if (l.kernel_size < 1 || l.kernel_size % 2 == 0) fail(name + ".kernel_size", "must be odd and positive");
    if (l.stride != 1) fail(name + ".stride", "only stride 1 is supported");
    if (l.elements < 1) fail(name + ".elements", "must be positive");
    if (group == GroupKind::Hue && l.elements != layers.front().elements) fail(name + ".elements", "hue order differs across layers");
    if (group == GroupKind::Hue && l.elements < 2 && l.partial != PartialMode::Full) fail(name + ".elements", "partial hue layers need m >= 2");
  }
  if (dist == DistKind::Discrete) {
    const double m = layers.front().elements;
    if (!(effective_eta() <= 1.0 / m)) fail("eta", "must lie in [0, 1/m]");
  }
}

KeyValues ModelConfig::to_kv() const {
  KeyValues kv;
  kv["model.group"] = group::to_string(group);
  kv["model.image_channels"] = std::to_string(image_channels);
  kv["model.classes"] = std::to_string(classes);
  kv["model.dist"] = to_string(dist);
  kv["model.eta"] = fmt_double(eta);
  kv["model.gumbel_temperature"] = fmt_double(gumbel_temperature);
  kv["model.batch_norm"] = batch_norm ? "true" : "false";
  kv["model.bn_momentum"] = fmt_double(bn_momentum);
  kv["model.bn_epsilon"] = fmt_double(bn_epsilon);
  kv["model.layers"] = std::to_string(layers.size());
  for (size_t i = 0; i < layers.size(); ++i) {
    const auto& l = layers[i];
    const std::string p = "layer." + std::to_string(i) + ".";
    kv[p + "elements"] = std::to_string(l.elements);
    kv[p + "partial"] = conv::to_string(l.partial);
    kv[p + "in_channels"] = std::to_string(l.in_channels);
    kv[p + "out_channels"] = std::to_string(l.out_channels);
    kv[p + "kernel_size"] = std::to_string(l.kernel_size);
    kv[p + "padding"] = std::to_string(l.padding);
    kv[p + "pool"] = pool_after[i] ? "true" : "false";
    kv[p + "siren_hidden"] = std::to_string(l.siren.hidden);
    kv[p + "siren_layers"] = std::to_string(l.siren.layers);
    kv[p + "siren_omega0"] = fmt_double(l.siren.omega0);
  }
  return kv;
}

ModelConfig ModelConfig::from_kv(const KeyValues& kv) {
  ModelConfig c;
  c.group = group::parse_group_kind(get(kv, "model.group"));
  c.image_channels = get_int(kv, "model.image_channels");
  c.classes = get_int(kv, "model.classes");
  c.dist = parse_dist_kind(get(kv, "model.dist"));
  c.eta = get_double(kv, "model.eta");
  c.gumbel_temperature = get_double(kv, "model.gumbel_temperature");
  c.batch_norm = get_bool(kv, "model.batch_norm");
  c.bn_momentum = get_double(kv, "model.bn_momentum");
  c.bn_epsilon = get_double(kv, "model.bn_epsilon");
  const int n = get_int(kv, "model.layers");
  if (n < 1 || n > 64) throw std::invalid_argument("model config: model.layers out of range");
  for (int i = 0; i < n; ++i) {
    const std::string p = "layer." + std::to_string(i) + ".";
    ConvLayerConfig l;
    l.kind = i == 0 ? ConvKind::Lift : ConvKind::Group;
    l.group = c.group;
    l.elements = get_int(kv, p + "elements");
    l.partial = conv::parse_partial_mode(get(kv, p + "partial"));
    l.in_channels = get_int(kv, p + "in_channels");
    l.out_channels = get_int(kv, p + "out_channels");
    l.kernel_size = get_int(kv, p + "kernel_size");
    l.padding = get_int(kv, p + "padding");
    l.siren.hidden = get_int(kv, p + "siren_hidden");
    l.siren.layers = get_int(kv, p + "siren_layers");
    l.siren.omega0 = get_double(kv, p + "siren_omega0");
    c.layers.push_back(l);
    c.pool_after.push_back(get_bool(kv, p + "pool"));
  }
  const auto known = c.to_kv();
  for (const auto& [key, value] : kv) {
    if (!known.count(key)) throw std::invalid_argument("model config: unknown key '" + key + "'");
  }
  c.validate();
  return c;
}

ModelConfig se2_recipe(int grid, int channels, int classes) {
  ModelConfig c;
  c.group = GroupKind::Rotation;
  c.image_channels = 1;
  c.classes = classes;
  c.dist = DistKind::Continuous;
  const int kernels[] = {7, 5, 5};
  for (int i = 0; i < 3; ++i) {
    ConvLayerConfig l;
    l.kind = i == 0 ? ConvKind::Lift : ConvKind::Group;
    l.group = GroupKind::Rotation;
    l.elements = grid;
    l.partial = i == 2 ? PartialMode::VariationalPartial : PartialMode::Full;
    l.in_channels = i == 0 ? 1 : channels;
    l.out_channels = channels;
    l.kernel_size = kernels[i];
    c.layers.push_back(l);
    c.pool_after.push_back(i < 2);
  }
  c.validate();
  return c;
}

ModelConfig hue_recipe(int m, int classes, int channels, std::vector<int> partial) {
  ModelConfig c;
  c.group = GroupKind::Hue;
  c.image_channels = 3;
  c.classes = classes;
  c.dist = DistKind::Discrete;
  for (int i = 0; i < 7; ++i) {
    ConvLayerConfig l;
    l.kind = i == 0 ? ConvKind::Lift : ConvKind::Group;
    l.group = GroupKind::Hue;
    l.elements = m;
    l.partial = PartialMode::Full;
    for (int p : partial) {
      if (p == i) l.partial = PartialMode::VariationalPartial;
    }
    l.in_channels = i == 0 ? 3 : channels;
    l.out_channels = channels;
    l.kernel_size = 3;
    c.layers.push_back(l);
    c.pool_after.push_back(i == 1 || i == 3);
  }
  c.validate();
  return c;
}

template <typename T>
GroupBatchNorm<T>::GroupBatchNorm(int channels, double momentum, double epsilon)
    : gamma_(Tensor<T>::full({channels}, T(1)).as_leaf(true)),
      beta_(Tensor<T>::zeros({channels}).as_leaf(true)),
      running_mean_(channels, 0.0),
      running_var_(channels, 1.0),
      momentum_(momentum),
      epsilon_(epsilon) {}

template <typename T>
FeatureMap<T> GroupBatchNorm<T>::operator()(const FeatureMap<T>& f, bool training) {
  const int64_t c = f.channels();
  if (c != gamma_.dim(0)) {
    throw ad::ShapeError("batch norm: expected " + std::to_string(gamma_.dim(0)) + " channels, got " +
                         ad::shape_str(f.data.shape()));
  }
  const ad::Shape bshape{1, 1, c, 1, 1};
  auto gamma = ad::reshape(gamma_, bshape);
  auto beta = ad::reshape(beta_, bshape);
  if (training) {
    auto mean = ad::mean(f.data, {0, 1, 3, 4}, true);
    auto centered = ad::sub(f.data, mean);
    auto var = ad::mean(ad::mul(centered, centered), {0, 1, 3, 4}, true);
    auto inv = ad::pow(ad::add_scalar(var, static_cast<T>(epsilon_)), T(-0.5));
    const double count = static_cast<double>(f.data.numel() / c);
    const double unbias = count > 1 ? count / (count - 1) : 1.0;
    const double rate = cumulative_count_ >= 0 ? 1.0 / static_cast<double>(++cumulative_count_) : momentum_;
    for (int64_t i = 0; i < c; ++i) {
      running_mean_[i] = (1 - rate) * running_mean_[i] + rate * static_cast<double>(mean[i]);
      running_var_[i] = (1 - rate) * running_var_[i] + rate * unbias * static_cast<double>(var[i]);
    }
    return map_data(f, ad::add(ad::mul(ad::mul(centered, inv), gamma), beta));
  }
  std::vector<T> scale(c), shift(c);
  for (int64_t i = 0; i < c; ++i) {
    scale[i] = static_cast<T>(1.0 / std::sqrt(running_var_[i] + epsilon_));
    shift[i] = static_cast<T>(-running_mean_[i] / std::sqrt(running_var_[i] + epsilon_));
  }
  auto normalized = ad::add(ad::mul(f.data, Tensor<T>(bshape, scale)), Tensor<T>(bshape, shift));
  return map_data(f, ad::add(ad::mul(normalized, gamma), beta));
}

template <typename T>
void GroupBatchNorm<T>::set_cumulative(bool on) {
  cumulative_count_ = on ? 0 : -1;
}

template <typename T>
void Network<T>::recalibrate_norms(const std::vector<Tensor<T>>& batches, Rng& rng) {
  if (batches.empty() || !config_.batch_norm) return;
  ad::NoGradGuard no_grad;
  for (auto& n : norms_) n.set_cumulative(true);
  ForwardOptions opts;
  opts.training = true;
  opts.deterministic = false;
  opts.rng = &rng;
  try {
    for (const auto& b : batches) forward(b, opts);
  } catch (...) {
    for (auto& n : norms_) n.set_cumulative(false);
    throw;
  }
  for (auto& n : norms_) n.set_cumulative(false);
}

template <typename T>
Network<T>::Network(ModelConfig config, Rng& init) : config_(std::move(config)) {
  config_.validate();
  const auto& layers = config_.layers;
  for (size_t i = 0; i < layers.size(); ++i) {
    const auto& l = layers[i];
    const int input_elements = i == 0 ? 1 : layers[i - 1].elements;
    kernels_.emplace_back(l, input_elements, init);
    norms_.emplace_back(l.out_channels, config_.bn_momentum, config_.bn_epsilon);
    if (l.partial == PartialMode::Full) continue;
    const int out_dim = config_.dist == DistKind::Gumbel ? l.elements : 1;
    const auto squash = config_.group == GroupKind::Rotation ? dist::Squash::UnitInterval : dist::Squash::Nonnegative;
    if (l.partial == PartialMode::VariationalPartial) {
      encoders_.emplace(static_cast<int>(i), dist::EncoderNet<T>(l.in_channels, out_dim, squash, init));
    } else {
      static_raw_.emplace(static_cast<int>(i), Tensor<T>::zeros({1, out_dim}).as_leaf(true));
    }
  }
  const int c = layers.back().out_channels;
  const double bound = 1.0 / std::sqrt(static_cast<double>(c));
  std::vector<T> w(static_cast<size_t>(c) * config_.classes);
  for (auto& v : w) v = static_cast<T>(init.uniform(-bound, bound));
  head_w_ = Tensor<T>({c, config_.classes}, std::move(w), true);
  head_b_ = Tensor<T>::zeros({1, config_.classes}).as_leaf(true);
}

template <typename T>
std::vector<int> Network<T>::partial_layers() const {
  std::vector<int> out;
  for (size_t i = 0; i < config_.layers.size(); ++i) {
    if (config_.layers[i].partial != PartialMode::Full) out.push_back(static_cast<int>(i));
  }
  return out;
}

template <typename T>
ad::ParamList<T> Network<T>::model_parameters() {
  ad::ParamList<T> out;
  for (size_t i = 0; i < kernels_.size(); ++i) {
    const std::string p = "layer." + std::to_string(i) + ".";
    ad::append_params(out, p + "kernel.", kernels_[i].parameters());
    if (config_.batch_norm) ad::append_params(out, p + "norm.", norms_[i].parameters());
  }
  out.push_back({"head.weight", &head_w_});
  out.push_back({"head.bias", &head_b_});
  return out;
}

template <typename T>
ad::ParamList<T> Network<T>::encoder_parameters() {
  ad::ParamList<T> out;
  for (auto& [i, enc] : encoders_) ad::append_params(out, "layer." + std::to_string(i) + ".encoder.", enc.parameters());
  for (auto& [i, raw] : static_raw_) out.push_back({"layer." + std::to_string(i) + ".static_theta", &raw});
  return out;
}

template <typename T>
ad::ParamList<T> Network<T>::parameters() {
  auto out = model_parameters();
  ad::append_params(out, "", encoder_parameters());
  return out;
}

template <typename T>
std::map<std::string, std::vector<double>*> Network<T>::buffers() {
  std::map<std::string, std::vector<double>*> out;
  if (!config_.batch_norm) return out;
  for (size_t i = 0; i < norms_.size(); ++i) {
    const std::string p = "layer." + std::to_string(i) + ".norm.";
    out[p + "running_mean"] = &norms_[i].running_mean();
    out[p + "running_var"] = &norms_[i].running_var();
  }
  return out;
}

template <typename T>
dist::DistSample<T> Network<T>::sample_layer(int index, const FeatureMap<T>& input, const ForwardOptions& options) const {
  const auto& l = config_.layers.at(index);
  if (l.partial == PartialMode::Full) throw std::invalid_argument("sample_layer: layer " + std::to_string(index) + " is not partial");
  if (!options.deterministic && !options.rng) throw std::invalid_argument("forward: stochastic forward needs an rng");
  const int64_t b = input.batch();
  Tensor<T> raw;
  if (auto it = encoders_.find(index); it != encoders_.end()) {
    raw = it->second.raw(input);
  } else {
    const auto& s = static_raw_.at(index);
    raw = ad::broadcast_to(s, {b, s.dim(1)});
  }
  Rng unused(0);
  Rng& rng = options.rng ? *options.rng : unused;
  switch (config_.dist) {
    case DistKind::Continuous: {
      auto theta = ad::reshape(squash(raw, dist::Squash::UnitInterval), {b});
      return dist::sample_continuous(theta, l.elements, rng, options.deterministic);
    }
    case DistKind::Density: {
      auto theta = ad::reshape(squash(raw, dist::Squash::UnitInterval), {b});
      return dist::sample_continuous_density(theta, GroupSampleSet::rotation_grid(l.elements));
    }
    case DistKind::Discrete: {
      auto theta = ad::reshape(squash(raw, dist::Squash::Nonnegative), {b});
      const int m = l.elements;
      if (!options.deterministic) return dist::sample_discrete(theta, m, config_.effective_eta(), rng);
      // Every element is equally likely to be kept, so the expected mask is
      // the kept fraction k(theta)/m, which depends only on theta.
      std::vector<double> sorted(b * m);
      for (int64_t i = 0; i < b; ++i)
        for (int j = 0; j < m; ++j) sorted[i * m + j] = m - j;
      auto s = dist::sample_discrete(theta, m, config_.effective_eta(), rng, &sorted);
      std::vector<T> expected(b * m);
      for (int64_t i = 0; i < b; ++i) {
        T kept = 0;
        for (int j = 0; j < m; ++j) kept += s.weights[i * m + j];
        for (int j = 0; j < m; ++j) expected[i * m + j] = kept / static_cast<T>(m);
      }
      s.weights = Tensor<T>({b, m}, std::move(expected));
      return s;
    }
    case DistKind::Gumbel: {
      const int m = l.elements;
      if (!options.deterministic) return dist::gumbel_sample(raw, config_.gumbel_temperature, rng);
      std::vector<T> hard(b * m, T(0));
      for (int64_t i = 0; i < b; ++i) {
        int best = 0;
        for (int j = 1; j < m; ++j) {
          if (raw[i * m + j] > raw[i * m + best]) best = j;
        }
        hard[i * m + best] = T(1);
      }
      return {GroupSampleSet::hue(m), std::nullopt, Tensor<T>({b, m}, std::move(hard)), ad::softmax(raw, -1), raw,
              dist::kl_discrete_from_logits(raw), {}};
    }
  }
  throw std::logic_error("sample_layer: unhandled distribution");
}

template <typename T>
FeatureMap<T> Network<T>::run_layer(int i, const FeatureMap<T>& input, const ForwardOptions& options,
                                    ForwardResult<T>* result) {
  const auto& l = config_.layers[i];
  const bool partial = l.partial != PartialMode::Full && !options.force_full;
  conv::OutputSpec<T> spec{full_set(l), std::nullopt, std::nullopt};
  if (partial) {
    auto sample = sample_layer(i, input, options);
    spec = {sample.elements, sample.angles, sample.weights};
    if (result) {
      result->samples.push_back(std::move(sample));
      result->sample_layers.push_back(i);
    }
  }
  if (auto it = options.forced_weights.find(i); it != options.forced_weights.end()) {
    const auto& w = it->second;
    const int64_t n = spec.elements.size();
    std::vector<T> wv(w.begin(), w.end());
    if (static_cast<int64_t>(w.size()) == n) {
      spec.weights = Tensor<T>({n}, std::move(wv));
    } else if (static_cast<int64_t>(w.size()) == input.batch() * n) {
      spec.weights = Tensor<T>({input.batch(), n}, std::move(wv));
    } else {
      throw ad::ShapeError("forward: forced weights for layer " + std::to_string(i) + " have " +
                           std::to_string(w.size()) + " entries, expected " + std::to_string(n) + " or batch x " +
                           std::to_string(n));
    }
  }
  FeatureMap<T> out;
  if (l.kind == ConvKind::Lift) {
    auto image = ad::reshape(input.data, {input.batch(), input.channels(), input.height(), input.width()});
    out = conv::lift_conv(image, spec, kernels_[i]);
  } else {
    out = conv::group_conv(input, spec, kernels_[i]);
  }
  if (config_.batch_norm) out = norms_[i](out, options.training);
  out = map_data(out, ad::relu(out.data));
  if (config_.pool_after[i]) out = pool2(out);
  return out;
}

template <typename T>
FeatureMap<T> Network<T>::features_before(const Tensor<T>& images, int upto, const ForwardOptions& options) {
  if (images.rank() != 4 || images.dim(1) != config_.image_channels) {
    throw ad::ShapeError("forward: expected (batch, " + std::to_string(config_.image_channels) + ", h, w) images, got " +
                         ad::shape_str(images.shape()));
  }
  auto f = conv::as_feature_map(images, config_.group);
  for (int i = 0; i < upto; ++i) f = run_layer(i, f, options, nullptr);
  return f;
}

template <typename T>
ForwardResult<T> Network<T>::forward(const Tensor<T>& images, const ForwardOptions& options) {
  if (images.rank() != 4 || images.dim(1) != config_.image_channels) {
    throw ad::ShapeError("forward: expected (batch, " + std::to_string(config_.image_channels) + ", h, w) images, got " +
                         ad::shape_str(images.shape()));
  }
  ForwardResult<T> result;
  auto f = conv::as_feature_map(images, config_.group);
  for (size_t i = 0; i < config_.layers.size(); ++i) f = run_layer(static_cast<int>(i), f, options, &result);
  auto pooled = ad::mean(f.data, {1, 3, 4});  // (batch, channels)
  result.logits = ad::add(ad::matmul(pooled, head_w_), head_b_);
  return result;
}

template <typename T>
ElboBreakdown<T> elbo_loss(const Tensor<T>& logits, const std::vector<int>& labels,
                           const std::vector<dist::DistSample<T>>& samples, double lambda, bool include_kl) {
  if (!(lambda >= 0 && lambda <= 1)) throw std::invalid_argument("elbo: lambda must lie in [0, 1]");
  for (int y : labels) {
    if (y < 0 || y >= logits.dim(1)) {
      throw std::invalid_argument("elbo: label " + std::to_string(y) + " outside [0, " + std::to_string(logits.dim(1)) + ")");
    }
  }
  ElboBreakdown<T> out;
  out.lambda = lambda;
  auto ce = ad::cross_entropy(logits, labels);
  out.cross_entropy = static_cast<double>(ce.item());
  Tensor<T> total = ce;
  for (const auto& s : samples) {
    auto kl = ad::mean_all(s.kl);
    out.kl.push_back(static_cast<double>(kl.item()));
    if (include_kl) total = ad::add(total, ad::mul_scalar(kl, static_cast<T>(lambda)));
  }
  out.total = total;
  out.total_value = static_cast<double>(total.item());
  return out;
}

std::string to_string(OptimizerKind kind) {
  switch (kind) {
    case OptimizerKind::Sgd: return "sgd";
    case OptimizerKind::Adam: return "adam";
    case OptimizerKind::AdamW: return "adamw";
  }
  return "sgd";
}

OptimizerKind parse_optimizer_kind(const std::string& name) {
  if (name == "sgd") return OptimizerKind::Sgd;
  if (name == "adam") return OptimizerKind::Adam;
  if (name == "adamw") return OptimizerKind::AdamW;
  throw std::invalid_argument("unknown optimizer '" + name + "' (expected sgd, adam or adamw)");
}

template <typename T>
void Optimizer<T>::step(ad::ParamList<T>& params, const ad::GradientMap<T>& grads) {
  ++steps_;
  const auto& c = config_;
  const double bc1 = 1 - std::pow(c.beta1, static_cast<double>(steps_));
  const double bc2 = 1 - std::pow(c.beta2, static_cast<double>(steps_));
  for (auto& p : params) {
    const auto& w = *p.tensor;
    const auto g = grads.of(w);
    std::vector<T> next(w.numel());
    if (c.kind == OptimizerKind::Sgd) {
      for (int64_t i = 0; i < w.numel(); ++i) {
        const double wi = w[i];
        next[i] = static_cast<T>(wi - c.lr * (static_cast<double>(g[i]) + c.weight_decay * wi));
      }
    } else {
      auto& m = m_[p.name];
      auto& v = v_[p.name];
      m.resize(w.numel(), 0.0);
      v.resize(w.numel(), 0.0);
      for (int64_t i = 0; i < w.numel(); ++i) {
        double wi = w[i];
        double gi = g[i];
        if (c.kind == OptimizerKind::Adam) gi += c.weight_decay * wi;
        else wi -= c.lr * c.weight_decay * wi;
        m[i] = c.beta1 * m[i] + (1 - c.beta1) * gi;
        v[i] = c.beta2 * v[i] + (1 - c.beta2) * gi * gi;
        next[i] = static_cast<T>(wi - c.lr * (m[i] / bc1) / (std::sqrt(v[i] / bc2) + c.epsilon));
      }
    }
    *p.tensor = Tensor<T>(w.shape(), std::move(next), true);
  }
}

template <typename T>
StepResult train_step(Network<T>& net, Optimizer<T>& model_opt, Optimizer<T>& encoder_opt, const Tensor<T>& images,
                      const std::vector<int>& labels, double lambda, Rng& rng, bool include_kl) {
  ForwardOptions opts;
  opts.training = true;
  opts.deterministic = false;
  opts.rng = &rng;
  auto fwd = net.forward(images, opts);
  auto elbo = elbo_loss(fwd.logits, labels, fwd.samples, lambda, include_kl);
  if (!std::isfinite(elbo.total_value)) {
    throw ad::NumericError("train_step: non-finite loss " + std::to_string(elbo.total_value) + " (cross-entropy " +
                           std::to_string(elbo.cross_entropy) + ")");
  }
  auto grads = ad::backward(elbo.total);
  auto mp = net.model_parameters();
  model_opt.step(mp, grads);
  auto ep = net.encoder_parameters();
  if (!ep.empty()) encoder_opt.step(ep, grads);

  StepResult r{elbo.cross_entropy, elbo.kl, elbo.total_value, 0};
  const int64_t k = fwd.logits.dim(1);
  for (size_t b = 0; b < labels.size(); ++b) {
    int64_t best = 0;
    for (int64_t j = 1; j < k; ++j) {
      if (fwd.logits[b * k + j] > fwd.logits[b * k + best]) best = j;
    }
    if (best == labels[b]) ++r.correct;
  }
  return r;
}

#define VPGC_INSTANTIATE_NET(T)                                                                                     \
  template class GroupBatchNorm<T>;                                                                                 \
  template class Network<T>;                                                                                        \
  template class Optimizer<T>;                                                                                      \
  template ElboBreakdown<T> elbo_loss<T>(const Tensor<T>&, const std::vector<int>&,                                 \
                                         const std::vector<dist::DistSample<T>>&, double, bool);                    \
  template StepResult train_step<T>(Network<T>&, Optimizer<T>&, Optimizer<T>&, const Tensor<T>&,                    \
                                    const std::vector<int>&, double, Rng&, bool);

VPGC_INSTANTIATE_NET(float)
VPGC_INSTANTIATE_NET(double)

}  // namespace vpgc::net
