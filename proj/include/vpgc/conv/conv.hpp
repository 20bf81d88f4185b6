#pragma once

#include <optional>
#include <string>

#include "vpgc/conv/siren.hpp"
#include "vpgc/dist/dist.hpp"
#include "vpgc/group/group.hpp"

namespace vpgc::conv {

using group::FeatureMap;
using group::GroupKind;
using group::GroupSampleSet;

enum class ConvKind { Lift, Group };
enum class PartialMode { Full, StaticPartial, VariationalPartial };

std::string to_string(PartialMode mode);
PartialMode parse_partial_mode(const std::string& name);

struct ConvLayerConfig {
  ConvKind kind = ConvKind::Lift;
  GroupKind group = GroupKind::Rotation;
  int elements = 8;  // output group samples (m for hue)
  PartialMode partial = PartialMode::Full;
  int in_channels = 1;
  int out_channels = 8;
  int kernel_size = 5;
  int stride = 1;
  int padding = -1;  // -1: same padding for odd kernels
  SirenOptions siren;

  int effective_padding() const { return padding >= 0 ? padding : kernel_size / 2; }
};

/// Kernel of one lifting or group convolution. Rotation kernels are SIRENs
/// over (x, y) or (x, y, relative angle / pi) offsets normalized to [-1, 1];
/// hue kernels are discrete banks of shape (out, in, 1 or m, k, k).
template <typename T>
class ConvKernel {
 public:
  ConvKernel() = default;
  ConvKernel(const ConvLayerConfig& config, int input_elements, Rng& rng);

  const ConvLayerConfig& config() const { return config_; }
  /// Group samples on the input's group axis (1 for lifting).
  int input_elements() const { return input_elements_; }
  ad::ParamList<T> parameters();

  SirenKernel<T>& siren() { return siren_; }
  const SirenKernel<T>& siren() const { return siren_; }
  Tensor<T>& bank() { return bank_; }
  const Tensor<T>& bank() const { return bank_; }

  /// Rotation lifting weights for output angles (a, n) with a in {1, batch}:
  /// returns (a, n * out, in, k, k).
  Tensor<T> rotation_lift_weights(const Tensor<T>& out_angles) const;
  /// Rotation group weights for output angles (a, n_out) and relative angles
  /// (a, n_out, n_in): returns (a, n_out * out, n_in * in, k, k), Haar weight
  /// 1/n_in folded in.
  Tensor<T> rotation_group_weights(const Tensor<T>& out_angles, const Tensor<T>& relative) const;
  /// Hue lifting weights (m * out, in, k, k): input RGB fibers rotated per element.
  Tensor<T> hue_lift_weights() const;
  /// Hue group weights (m * out, m * in, k, k) with cyclic structure and 1/m.
  Tensor<T> hue_group_weights() const;

 private:
  ConvLayerConfig config_;
  int input_elements_ = 1;
  SirenKernel<T> siren_;
  Tensor<T> bank_;
  Tensor<T> window_;  // (k * k) radial taper applied to SIREN kernels
};

/// Output-side element specification: a shared set, optionally overridden by
/// per-item rotation angles (batch, n), plus optional per-element weights
/// (batch, n) or (n) that scale each output group slice.
template <typename T>
struct OutputSpec {
  GroupSampleSet elements;
  std::optional<Tensor<T>> item_angles;
  std::optional<Tensor<T>> weights;
};

/// image: (batch, channels, h, w) -> FeatureMap over spec.elements.
template <typename T>
FeatureMap<T> lift_conv(const Tensor<T>& image, const OutputSpec<T>& spec, const ConvKernel<T>& kernel);

template <typename T>
FeatureMap<T> group_conv(const FeatureMap<T>& f, const OutputSpec<T>& spec, const ConvKernel<T>& kernel);

/// Lifting (image input) or group convolution driven by a sample of q(u|f).
template <typename T>
FeatureMap<T> partial_conv(const FeatureMap<T>& f, const dist::DistSample<T>& sample, const ConvKernel<T>& kernel);
template <typename T>
FeatureMap<T> partial_conv(const Tensor<T>& image, const dist::DistSample<T>& sample, const ConvKernel<T>& kernel);

/// Wraps an image (batch, c, h, w) as a feature map with one group element.
template <typename T>
FeatureMap<T> as_feature_map(const Tensor<T>& image, GroupKind kind);

/// Relative angles wrap(u_j - v_i) as (a, n_out, n_in). Exact index-based
/// values when both sides are the same shared grid.
template <typename T>
Tensor<T> relative_angles(const FeatureMap<T>& input, const OutputSpec<T>& spec);

}  // namespace vpgc::conv
