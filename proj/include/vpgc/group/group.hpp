#pragma once

#include <array>
#include <optional>
#include <string>
#include <variant>
#include <vector>

#include "vpgc/tensor/ops.hpp"
#include "vpgc/tensor/rng.hpp"

namespace vpgc::group {

using ad::Tensor;

enum class GroupKind { Rotation, Hue };

std::string to_string(GroupKind kind);
GroupKind parse_group_kind(const std::string& name);

/// Reduces an angle into (-pi, pi].
double wrap_angle(double angle);

/// Planar rotation, angle kept in (-pi, pi].
struct RotationElement {
  double angle = 0;

  static RotationElement of(double radians) { return {wrap_angle(radians)}; }
  RotationElement compose(const RotationElement& other) const { return of(angle + other.angle); }
  RotationElement inverse() const { return of(-angle); }
};

using Matrix3 = std::array<double, 9>;  // row-major

/// Rotation by 2*pi*k/m about the unit RGB diagonal (1,1,1)/sqrt(3).
Matrix3 hm_matrix(int m, int k);
Matrix3 matmul3(const Matrix3& a, const Matrix3& b);
std::array<double, 3> apply3(const Matrix3& m, const std::array<double, 3>& v);

/// Element k of the cyclic hue group of order m.
struct HueElement {
  int order = 1;
  int index = 0;

  static HueElement of(int m, int k);
  HueElement compose(const HueElement& other) const { return of(order, index + other.index); }
  HueElement inverse() const { return of(order, -index); }
  Matrix3 matrix() const { return hm_matrix(order, index); }
};

using GroupElement = std::variant<RotationElement, HueElement>;

/// Ordered group elements with uniform Haar weights. Rotation sets are
/// either a regular grid (angle j = 2*pi*j/n, wrapped) or i.i.d. draws.
class GroupSampleSet {
 public:
  static GroupSampleSet hue(int m);
  static GroupSampleSet rotation_grid(int n);
  static GroupSampleSet rotation_random(int n, Rng& rng);
  /// Explicit angles, treated as a sample (not a grid).
  static GroupSampleSet rotation_angles(std::vector<double> angles);

  GroupKind kind() const { return kind_; }
  int size() const { return static_cast<int>(count_); }
  bool is_grid() const { return grid_; }
  /// Order of the hue group, or grid size for rotation grids.
  int order() const { return static_cast<int>(count_); }
  const std::vector<double>& angles() const { return angles_; }
  double weight(int) const { return 1.0 / static_cast<double>(count_); }
  std::vector<double> weights() const { return std::vector<double>(count_, 1.0 / static_cast<double>(count_)); }
  bool operator==(const GroupSampleSet& other) const;

 private:
  GroupKind kind_ = GroupKind::Rotation;
  size_t count_ = 1;
  bool grid_ = true;
  std::vector<double> angles_;
};

/// Samples from the Haar measure. For Hue, n must equal the order m and all
/// elements are returned.
GroupSampleSet sample_haar(GroupKind kind, int n, Rng& rng, bool grid_mode = false);

/// Signal on (group element, channel, position) per batch item. `data` has
/// axes (batch, group, channel, height, width); `elements` lists what the
/// group axis indexes. `item_angles` (batch, group) overrides the shared
/// rotation angles when each item carries its own sampled elements.
template <typename T>
struct FeatureMap {
  Tensor<T> data;
  GroupSampleSet elements;
  std::optional<Tensor<T>> item_angles;

  int64_t batch() const { return data.dim(0); }
  int64_t group_size() const { return data.dim(1); }
  int64_t channels() const { return data.dim(2); }
  int64_t height() const { return data.dim(3); }
  int64_t width() const { return data.dim(4); }
  void validate() const;
};

/// Per-pixel hue rotation of an image. Channels along `channel_axis` are
/// taken in RGB triples (count must be a multiple of 3). Not clamped.
template <typename T>
Tensor<T> act_on_rgb(const HueElement& g, const Tensor<T>& image, int channel_axis = 1);

/// Left-regular action on a feature map: (L_g f)(x, u) = f(g^-1 x, g^-1 u).
template <typename T>
FeatureMap<T> regular_action(const GroupElement& g, const FeatureMap<T>& f);

/// Group-axis shift that a rotation by `angle` induces on an n-point grid.
/// Throws when the angle is not a multiple of the grid spacing.
int grid_shift(double angle, int n);

}  // namespace vpgc::group
