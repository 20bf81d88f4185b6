#include "vpgc/conv/conv.hpp"

#include <cmath>
#include <numbers>
#include <stdexcept>

namespace vpgc::conv {

namespace {

constexpr double kPi = std::numbers::pi;

template <typename T>
Tensor<T> constant(ad::Shape shape, const std::vector<double>& values) {
  return Tensor<T>(std::move(shape), std::vector<T>(values.begin(), values.end()));
}

/// Kernel offsets (x = column, y = row) normalized so the outermost tap is at 1.
template <typename T>
std::pair<Tensor<T>, Tensor<T>> offset_grid(int k) {
  const double c = (k - 1) / 2.0;
  const double scale = c > 0 ? c : 1.0;
  std::vector<double> dx(k * k), dy(k * k);
  for (int r = 0; r < k; ++r)
    for (int col = 0; col < k; ++col) {
      dx[r * k + col] = (col - c) / scale;
      dy[r * k + col] = (r - c) / scale;
    }
  return {constant<T>({1, 1, k, k}, dx), constant<T>({1, 1, k, k}, dy)};
}

/// Offsets rotated by the inverse of each angle: R(-u) (dx, dy). angles (a, n)
/// -> two tensors (a, n, k, k).
template <typename T>
std::pair<Tensor<T>, Tensor<T>> rotated_offsets(const Tensor<T>& angles, int k) {
  const int64_t a = angles.dim(0), n = angles.dim(1);
  auto [dx, dy] = offset_grid<T>(k);
  auto c = ad::reshape(ad::cos(angles), {a, n, 1, 1});
  auto s = ad::reshape(ad::sin(angles), {a, n, 1, 1});
  auto xr = ad::add(ad::mul(c, dx), ad::mul(s, dy));
  auto yr = ad::sub(ad::mul(c, dy), ad::mul(s, dx));
  return {xr, yr};
}

template <typename T>
Tensor<T> shared_angles(const GroupSampleSet& set) {
  return constant<T>({1, set.size()}, set.angles());
}

template <typename T>
Tensor<T> apply_output_weights(const Tensor<T>& out, const std::optional<Tensor<T>>& weights) {
  if (!weights) return out;
  const int64_t b = out.dim(0), n = out.dim(1);
  const auto& w = *weights;
  for (T v : w.data()) {
    if (v < T(0)) throw std::domain_error("conv: per-element weights must be nonnegative");
  }
  if (w.rank() == 1 && w.dim(0) == n) return ad::mul(out, ad::reshape(w, {1, n, 1, 1, 1}));
  if (w.rank() == 2 && w.dim(0) == b && w.dim(1) == n) return ad::mul(out, ad::reshape(w, {b, n, 1, 1, 1}));
  throw ad::ShapeError("conv: weights " + ad::shape_str(w.shape()) + " do not match " + std::to_string(n) +
                       " output elements for batch " + std::to_string(b));
}

template <typename T>
Tensor<T> run_conv(const Tensor<T>& input, const Tensor<T>& weight, const ConvLayerConfig& cfg) {
  const int pad = cfg.effective_padding();
  const ad::Conv2dParams params{cfg.stride, pad, pad};
  // A leading axis of 1 means one kernel shared by every batch item.
  if (weight.rank() == 5 && weight.dim(0) == 1) {
    return ad::conv2d(input, ad::reshape(weight, {weight.dim(1), weight.dim(2), weight.dim(3), weight.dim(4)}), params);
  }
  return ad::conv2d(input, weight, params);
}

void check_spec_kind(const ConvLayerConfig& cfg, const GroupSampleSet& out) {
  if (out.kind() != cfg.group) {
    throw std::invalid_argument("conv: output elements are " + group::to_string(out.kind()) + " but the kernel is " +
                                group::to_string(cfg.group));
  }
  if (cfg.group == GroupKind::Hue && out.order() != cfg.elements) {
    throw std::invalid_argument("conv: hue kernel of order " + std::to_string(cfg.elements) + " asked for " +
                                std::to_string(out.order()) + " output elements");
  }
}

}  // namespace

std::string to_string(PartialMode mode) {
  switch (mode) {
    case PartialMode::Full: return "full";
    case PartialMode::StaticPartial: return "static";
    case PartialMode::VariationalPartial: return "variational";
  }
  return "full";
}

PartialMode parse_partial_mode(const std::string& name) {
  if (name == "full") return PartialMode::Full;
  if (name == "static" || name == "static-partial") return PartialMode::StaticPartial;
  if (name == "variational" || name == "vp" || name == "variational-partial") return PartialMode::VariationalPartial;
  throw std::invalid_argument("unknown partial mode '" + name + "' (expected full, static or variational)");
}

template <typename T>
ConvKernel<T>::ConvKernel(const ConvLayerConfig& config, int input_elements, Rng& rng)
    : config_(config), input_elements_(config.kind == ConvKind::Lift ? 1 : input_elements) {
  const int k = config.kernel_size;
  if (k < 1 || config.in_channels < 1 || config.out_channels < 1 || config.elements < 1 || input_elements_ < 1) {
    throw std::invalid_argument("conv kernel: sizes must be positive");
  }
  const double fan_in = static_cast<double>(config.in_channels) * k * k;
  if (config.group == GroupKind::Rotation) {
    SirenOptions opts = config.siren;
    // The taper roughly halves the effective tap count.
    opts.output_std = std::sqrt(4.0 * input_elements_ / fan_in);
    siren_ = SirenKernel<T>(config.kind == ConvKind::Lift ? 2 : 3, config.out_channels * config.in_channels, rng, opts);
    const double radius = k / 2.0;
    const double c = (k - 1) / 2.0;
    std::vector<double> win(k * k);
    for (int r = 0; r < k; ++r)
      for (int col = 0; col < k; ++col) {
        const double d = std::hypot(r - c, col - c);
        win[r * k + col] = d < radius ? 0.5 * (1 + std::cos(kPi * d / radius)) : 0.0;
      }
    window_ = constant<T>({1, k * k, 1}, win);
  } else {
    if (config.kind == ConvKind::Lift && config.in_channels % 3 != 0) {
      throw std::invalid_argument("conv kernel: hue lifting needs RGB input (channels a multiple of 3)");
    }
    if (config.kind == ConvKind::Group && input_elements_ != config.elements) {
      throw std::invalid_argument("conv kernel: hue group convolution needs m input and output elements");
    }
    const int g = config.kind == ConvKind::Lift ? 1 : config.elements;
    const double std_dev = std::sqrt(2.0 * g / fan_in);
    std::vector<T> v(static_cast<size_t>(config.out_channels) * config.in_channels * g * k * k);
    for (auto& x : v) x = static_cast<T>(std_dev * rng.normal());
    bank_ = Tensor<T>({config.out_channels, config.in_channels, g, k, k}, std::move(v), true);
  }
}

template <typename T>
ad::ParamList<T> ConvKernel<T>::parameters() {
  if (config_.group == GroupKind::Rotation) {
    ad::ParamList<T> out;
    ad::append_params(out, "siren.", siren_.parameters());
    return out;
  }
  return {{"bank", &bank_}};
}

template <typename T>
Tensor<T> ConvKernel<T>::rotation_lift_weights(const Tensor<T>& out_angles) const {
  const int k = config_.kernel_size;
  const int64_t a = out_angles.dim(0), n = out_angles.dim(1);
  const int64_t co = config_.out_channels, ci = config_.in_channels;
  auto [xr, yr] = rotated_offsets(out_angles, k);
  auto coords = ad::concat<T>({ad::reshape(xr, {a, n, k, k, 1}), ad::reshape(yr, {a, n, k, k, 1})}, 4);
  auto vals = siren_.eval(ad::reshape(coords, {a * n * k * k, 2}));
  vals = ad::mul(ad::reshape(vals, {a * n, k * k, co * ci}), window_);
  vals = ad::permute(ad::reshape(vals, {a, n, k, k, co, ci}), {0, 1, 4, 5, 2, 3});
  return ad::reshape(vals, {a, n * co, ci, k, k});
}

template <typename T>
Tensor<T> ConvKernel<T>::rotation_group_weights(const Tensor<T>& out_angles, const Tensor<T>& relative) const {
  const int k = config_.kernel_size;
  const int64_t n_out = out_angles.dim(1), n_in = relative.dim(2);
  const int64_t a = std::max(out_angles.dim(0), relative.dim(0));
  const int64_t co = config_.out_channels, ci = config_.in_channels;
  if (relative.dim(1) != n_out || n_in != input_elements_) {
    throw ad::ShapeError("group conv: relative angles " + ad::shape_str(relative.shape()) + " do not match " +
                         std::to_string(n_out) + " outputs and " + std::to_string(input_elements_) + " inputs");
  }
  auto [xr, yr] = rotated_offsets(out_angles, k);
  const ad::Shape full{a, n_out, n_in, k, k, 1};
  auto xs = ad::broadcast_to(ad::reshape(xr, {xr.dim(0), n_out, 1, k, k, 1}), full);
  auto ys = ad::broadcast_to(ad::reshape(yr, {yr.dim(0), n_out, 1, k, k, 1}), full);
  auto rel = ad::mul_scalar(ad::reshape(relative, {relative.dim(0), n_out, n_in, 1, 1, 1}), static_cast<T>(1.0 / kPi));
  auto coords = ad::concat<T>({xs, ys, ad::broadcast_to(rel, full)}, 5);
  auto vals = siren_.eval(ad::reshape(coords, {a * n_out * n_in * k * k, 3}));
  vals = ad::mul(ad::reshape(vals, {a * n_out * n_in, k * k, co * ci}), window_);
  vals = ad::permute(ad::reshape(vals, {a, n_out, n_in, k, k, co, ci}), {0, 1, 5, 2, 6, 3, 4});
  vals = ad::reshape(vals, {a, n_out * co, n_in * ci, k, k});
  return ad::mul_scalar(vals, static_cast<T>(1.0 / static_cast<double>(n_in)));
}

template <typename T>
Tensor<T> ConvKernel<T>::hue_lift_weights() const {
  const int k = config_.kernel_size, m = config_.elements;
  const int64_t co = config_.out_channels, ci = config_.in_channels;
  // Stack of block-diagonal fiber rotations, (m * ci, ci).
  std::vector<double> stack(static_cast<size_t>(m) * ci * ci, 0.0);
  for (int j = 0; j < m; ++j) {
    const auto mat = group::hm_matrix(m, j);
    for (int64_t blk = 0; blk < ci; blk += 3)
      for (int r = 0; r < 3; ++r)
        for (int c = 0; c < 3; ++c) stack[(j * ci + blk + r) * ci + blk + c] = mat[r * 3 + c];
  }
  auto psi = ad::permute(ad::reshape(bank_, {co, ci, k * k}), {1, 0, 2});
  auto w = ad::matmul(constant<T>({m * ci, ci}, stack), ad::reshape(psi, {ci, co * k * k}));
  w = ad::permute(ad::reshape(w, {m, ci, co, k, k}), {0, 2, 1, 3, 4});
  return ad::reshape(w, {m * co, ci, k, k});
}

template <typename T>
Tensor<T> ConvKernel<T>::hue_group_weights() const {
  const int k = config_.kernel_size, m = config_.elements;
  const int64_t co = config_.out_channels, ci = config_.in_channels;
  std::vector<int64_t> offsets;
  offsets.reserve(static_cast<size_t>(m) * m);
  for (int j = 0; j < m; ++j)
    for (int i = 0; i < m; ++i) offsets.push_back(((j - i) % m + m) % m);
  auto w = ad::reshape(ad::index_select(bank_, 2, offsets), {co, ci, m, m, k, k});
  w = ad::reshape(ad::permute(w, {2, 0, 3, 1, 4, 5}), {m * co, m * ci, k, k});
  return ad::mul_scalar(w, static_cast<T>(1.0 / m));
}

template <typename T>
FeatureMap<T> as_feature_map(const Tensor<T>& image, GroupKind kind) {
  if (image.rank() != 4) throw ad::ShapeError("as_feature_map: expected (batch, c, h, w), got " + ad::shape_str(image.shape()));
  auto set = kind == GroupKind::Hue ? GroupSampleSet::hue(1) : GroupSampleSet::rotation_grid(1);
  return {ad::reshape(image, {image.dim(0), 1, image.dim(1), image.dim(2), image.dim(3)}), set, std::nullopt};
}

template <typename T>
Tensor<T> relative_angles(const FeatureMap<T>& input, const OutputSpec<T>& spec) {
  const int64_t n_out = spec.elements.size(), n_in = input.group_size();
  if (!spec.item_angles && !input.item_angles && spec.elements.is_grid() && input.elements.is_grid()) {
    // Exact wrap from integer offsets so ties at pi resolve identically for
    // every (j, i) pair with the same relative rotation.
    const int64_t l = n_out * n_in;
    std::vector<double> rel(l);
    for (int64_t j = 0; j < n_out; ++j)
      for (int64_t i = 0; i < n_in; ++i) {
        int64_t num = ((j * n_in - i * n_out) % l + l) % l;
        if (2 * num > l) num -= l;
        rel[j * n_in + i] = 2 * kPi * static_cast<double>(num) / static_cast<double>(l);
      }
    return constant<T>({1, n_out, n_in}, rel);
  }
  auto u = spec.item_angles ? *spec.item_angles : shared_angles<T>(spec.elements);
  auto v = input.item_angles ? *input.item_angles : shared_angles<T>(input.elements);
  auto diff = ad::sub(ad::reshape(u, {u.dim(0), n_out, 1}), ad::reshape(v, {v.dim(0), 1, n_in}));
  std::vector<T> turns(diff.numel());
  for (int64_t i = 0; i < diff.numel(); ++i) {
    turns[i] = static_cast<T>(2 * kPi * std::round(static_cast<double>(diff[i]) / (2 * kPi)));
  }
  return ad::sub(diff, Tensor<T>(diff.shape(), std::move(turns)));
}

template <typename T>
FeatureMap<T> lift_conv(const Tensor<T>& image, const OutputSpec<T>& spec, const ConvKernel<T>& kernel) {
  const auto& cfg = kernel.config();
  if (cfg.kind != ConvKind::Lift) throw std::invalid_argument("lift_conv: kernel is not a lifting kernel");
  if (image.rank() != 4 || image.dim(1) != cfg.in_channels) {
    throw ad::ShapeError("lift_conv: expected (batch, " + std::to_string(cfg.in_channels) + ", h, w) input, got " +
                         ad::shape_str(image.shape()));
  }
  check_spec_kind(cfg, spec.elements);
  const int64_t b = image.dim(0), n = spec.elements.size();
  Tensor<T> weight;
  if (cfg.group == GroupKind::Rotation) {
    weight = kernel.rotation_lift_weights(spec.item_angles ? *spec.item_angles : shared_angles<T>(spec.elements));
  } else {
    weight = kernel.hue_lift_weights();
  }
  auto out = run_conv(image, weight, cfg);
  out = ad::reshape(out, {b, n, cfg.out_channels, out.dim(2), out.dim(3)});
  FeatureMap<T> fm{apply_output_weights(out, spec.weights), spec.elements, spec.item_angles};
  fm.validate();
  return fm;
}

template <typename T>
FeatureMap<T> group_conv(const FeatureMap<T>& f, const OutputSpec<T>& spec, const ConvKernel<T>& kernel) {
  const auto& cfg = kernel.config();
  f.validate();
  if (cfg.kind != ConvKind::Group) throw std::invalid_argument("group_conv: kernel is not a group kernel");
  if (f.channels() != cfg.in_channels || f.group_size() != kernel.input_elements() || f.elements.kind() != cfg.group) {
    throw ad::ShapeError("group_conv: kernel expects " + std::to_string(kernel.input_elements()) + " " +
                         group::to_string(cfg.group) + " elements x " + std::to_string(cfg.in_channels) +
                         " channels, feature map is " + ad::shape_str(f.data.shape()) + " over " +
                         group::to_string(f.elements.kind()));
  }
  check_spec_kind(cfg, spec.elements);
  const int64_t b = f.batch(), n = spec.elements.size();
  Tensor<T> weight;
  if (cfg.group == GroupKind::Rotation) {
    auto u = spec.item_angles ? *spec.item_angles : shared_angles<T>(spec.elements);
    weight = kernel.rotation_group_weights(u, relative_angles(f, spec));
  } else {
    weight = kernel.hue_group_weights();
  }
  auto input = ad::reshape(f.data, {b, f.group_size() * f.channels(), f.height(), f.width()});
  auto out = run_conv(input, weight, cfg);
  out = ad::reshape(out, {b, n, cfg.out_channels, out.dim(2), out.dim(3)});
  FeatureMap<T> fm{apply_output_weights(out, spec.weights), spec.elements, spec.item_angles};
  fm.validate();
  return fm;
}

template <typename T>
FeatureMap<T> partial_conv(const FeatureMap<T>& f, const dist::DistSample<T>& sample, const ConvKernel<T>& kernel) {
  if (sample.batch() != f.batch()) {
    throw std::invalid_argument("partial_conv: stale distribution sample (batch " + std::to_string(sample.batch()) +
                                " vs input batch " + std::to_string(f.batch()) + ")");
  }
  OutputSpec<T> spec{sample.elements, sample.angles, sample.weights};
  if (kernel.config().kind == ConvKind::Lift) {
    return lift_conv(ad::reshape(f.data, {f.batch(), f.channels(), f.height(), f.width()}), spec, kernel);
  }
  return group_conv(f, spec, kernel);
}

template <typename T>
FeatureMap<T> partial_conv(const Tensor<T>& image, const dist::DistSample<T>& sample, const ConvKernel<T>& kernel) {
  if (sample.batch() != image.dim(0)) {
    throw std::invalid_argument("partial_conv: stale distribution sample (batch " + std::to_string(sample.batch()) +
                                " vs input batch " + std::to_string(image.dim(0)) + ")");
  }
  return lift_conv(image, OutputSpec<T>{sample.elements, sample.angles, sample.weights}, kernel);
}

#define VPGC_INSTANTIATE_CONV(T)                                                                                \
  template class ConvKernel<T>;                                                                                 \
  template FeatureMap<T> lift_conv<T>(const Tensor<T>&, const OutputSpec<T>&, const ConvKernel<T>&);            \
  template FeatureMap<T> group_conv<T>(const FeatureMap<T>&, const OutputSpec<T>&, const ConvKernel<T>&);       \
  template FeatureMap<T> partial_conv<T>(const FeatureMap<T>&, const dist::DistSample<T>&, const ConvKernel<T>&); \
  template FeatureMap<T> partial_conv<T>(const Tensor<T>&, const dist::DistSample<T>&, const ConvKernel<T>&);   \
  template FeatureMap<T> as_feature_map<T>(const Tensor<T>&, GroupKind);                                         \
  template Tensor<T> relative_angles<T>(const FeatureMap<T>&, const OutputSpec<T>&);

VPGC_INSTANTIATE_CONV(float)
VPGC_INSTANTIATE_CONV(double)

}  // namespace vpgc::conv
