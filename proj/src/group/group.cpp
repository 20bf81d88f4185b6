#include "vpgc/group/group.hpp"

#include <cmath>
#include <numbers>
#include <stdexcept>

namespace vpgc::group {

namespace {
constexpr double kPi = std::numbers::pi;
}

std::string to_string(GroupKind kind) { return kind == GroupKind::Rotation ? "so2" : "hue"; }

GroupKind parse_group_kind(const std::string& name) {
  if (name == "so2" || name == "rotation") return GroupKind::Rotation;
  if (name == "hue" || name == "hm") return GroupKind::Hue;
  throw std::invalid_argument("unknown group kind '" + name + "' (expected so2 or hue)");
}

double wrap_angle(double angle) {
  double a = std::remainder(angle, 2 * kPi);  // in [-pi, pi]
  if (a <= -kPi) a += 2 * kPi;
  return a;
}

Matrix3 hm_matrix(int m, int k) {
  if (m < 1) throw std::invalid_argument("hm_matrix: order must be positive, got " + std::to_string(m));
  if (k < 0 || k >= m) {
    throw std::out_of_range("hm_matrix: index " + std::to_string(k) + " outside [0, " + std::to_string(m) + ")");
  }
  if (k == 0) return {1, 0, 0, 0, 1, 0, 0, 0, 1};
  const double phi = 2 * kPi * k / m;
  const double c = std::cos(phi), s = std::sin(phi) / std::sqrt(3.0), t = (1 - c) / 3.0;
  // Rodrigues: I cos + [axis]_x sin + (1 - cos) axis axis^T.
  return {c + t, t - s, t + s,  //
          t + s, c + t, t - s,  //
          t - s, t + s, c + t};
}

Matrix3 matmul3(const Matrix3& a, const Matrix3& b) {
  Matrix3 out{};
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j)
      for (int k = 0; k < 3; ++k) out[i * 3 + j] += a[i * 3 + k] * b[k * 3 + j];
  return out;
}

std::array<double, 3> apply3(const Matrix3& m, const std::array<double, 3>& v) {
  return {m[0] * v[0] + m[1] * v[1] + m[2] * v[2], m[3] * v[0] + m[4] * v[1] + m[5] * v[2],
          m[6] * v[0] + m[7] * v[1] + m[8] * v[2]};
}

HueElement HueElement::of(int m, int k) {
  if (m < 1) throw std::invalid_argument("hue element: order must be positive");
  return {m, ((k % m) + m) % m};
}

GroupSampleSet GroupSampleSet::hue(int m) {
  if (m < 1) throw std::invalid_argument("hue sample set: order must be positive");
  GroupSampleSet s;
  s.kind_ = GroupKind::Hue;
  s.count_ = static_cast<size_t>(m);
  s.grid_ = true;
  return s;
}

GroupSampleSet GroupSampleSet::rotation_grid(int n) {
  if (n < 1) throw std::invalid_argument("rotation grid: size must be positive");
  GroupSampleSet s;
  s.kind_ = GroupKind::Rotation;
  s.count_ = static_cast<size_t>(n);
  s.grid_ = true;
  for (int j = 0; j < n; ++j) s.angles_.push_back(wrap_angle(2 * kPi * j / n));
  return s;
}

GroupSampleSet GroupSampleSet::rotation_random(int n, Rng& rng) {
  if (n < 1) throw std::invalid_argument("rotation sample: size must be positive");
  std::vector<double> a(n);
  // pi - 2*pi*[0,1) lies in (-pi, pi].
  for (auto& x : a) x = kPi - 2 * kPi * rng.uniform();
  return rotation_angles(std::move(a));
}

GroupSampleSet GroupSampleSet::rotation_angles(std::vector<double> angles) {
  if (angles.empty()) throw std::invalid_argument("rotation sample: no angles");
  GroupSampleSet s;
  s.kind_ = GroupKind::Rotation;
  s.count_ = angles.size();
  s.grid_ = false;
  for (auto& a : angles) a = wrap_angle(a);
  s.angles_ = std::move(angles);
  return s;
}

bool GroupSampleSet::operator==(const GroupSampleSet& other) const {
  return kind_ == other.kind_ && count_ == other.count_ && grid_ == other.grid_ && angles_ == other.angles_;
}

GroupSampleSet sample_haar(GroupKind kind, int n, Rng& rng, bool grid_mode) {
  if (n < 1) throw std::invalid_argument("sample_haar: count must be at least 1");
  if (kind == GroupKind::Hue) return GroupSampleSet::hue(n);
  return grid_mode ? GroupSampleSet::rotation_grid(n) : GroupSampleSet::rotation_random(n, rng);
}

template <typename T>
void FeatureMap<T>::validate() const {
  if (data.rank() != 5) {
    throw ad::ShapeError("feature map: expected (batch, group, channel, height, width), got " +
                         ad::shape_str(data.shape()));
  }
  if (data.dim(1) != elements.size()) {
    throw ad::ShapeError("feature map: group axis of length " + std::to_string(data.dim(1)) + " but " +
                         std::to_string(elements.size()) + " elements");
  }
  if (item_angles && item_angles->shape() != ad::Shape{data.dim(0), data.dim(1)}) {
    throw ad::ShapeError("feature map: per-item angles " + ad::shape_str(item_angles->shape()) +
                         " do not match (batch, group)");
  }
}

template <typename T>
Tensor<T> act_on_rgb(const HueElement& g, const Tensor<T>& image, int channel_axis) {
  const int ax = ad::normalize_axis(channel_axis, image.rank(), "act_on_rgb");
  const int64_t channels = image.dim(ax);
  if (channels % 3 != 0) {
    throw ad::ShapeError("act_on_rgb: channel axis " + std::to_string(ax) + " has " + std::to_string(channels) +
                         " entries, expected a multiple of 3");
  }
  if (g.index == 0) return image;
  const Matrix3 m = g.matrix();
  std::vector<Tensor<T>> out;
  out.reserve(channels);
  for (int64_t base = 0; base < channels; base += 3) {
    std::array<Tensor<T>, 3> rgb{ad::slice(image, ax, base, 1), ad::slice(image, ax, base + 1, 1),
                                 ad::slice(image, ax, base + 2, 1)};
    for (int r = 0; r < 3; ++r) {
      auto acc = ad::mul_scalar(rgb[0], static_cast<T>(m[r * 3]));
      acc = ad::add(acc, ad::mul_scalar(rgb[1], static_cast<T>(m[r * 3 + 1])));
      acc = ad::add(acc, ad::mul_scalar(rgb[2], static_cast<T>(m[r * 3 + 2])));
      out.push_back(acc);
    }
  }
  return ad::concat(out, ax);
}

int grid_shift(double angle, int n) {
  const double spacing = 2 * kPi / n;
  const double steps = angle / spacing;
  const double rounded = std::round(steps);
  if (std::abs(steps - rounded) > 1e-9) {
    throw std::invalid_argument("regular_action: angle " + std::to_string(angle) +
                                " is not a multiple of the grid spacing 2*pi/" + std::to_string(n) + " = " +
                                std::to_string(spacing));
  }
  return static_cast<int>(((static_cast<int64_t>(rounded) % n) + n) % n);
}

template <typename T>
FeatureMap<T> regular_action(const GroupElement& g, const FeatureMap<T>& f) {
  f.validate();
  if (const auto* h = std::get_if<HueElement>(&g)) {
    if (f.elements.kind() != GroupKind::Hue || f.elements.order() != h->order) {
      throw std::invalid_argument("regular_action: hue element of order " + std::to_string(h->order) +
                                  " on a feature map over " + to_string(f.elements.kind()) + " with " +
                                  std::to_string(f.elements.size()) + " elements");
    }
    return {ad::roll(f.data, h->index, 1), f.elements, f.item_angles};
  }
  const auto& r = std::get<RotationElement>(g);
  if (f.elements.kind() != GroupKind::Rotation || !f.elements.is_grid() || f.item_angles) {
    throw std::invalid_argument("regular_action: rotations act exactly only on a shared regular rotation grid");
  }
  const int shift = grid_shift(r.angle, f.elements.size());
  auto rotated = ad::bilinear_rotate(f.data, r.angle);
  return {ad::roll(rotated, shift, 1), f.elements, std::nullopt};
}

template struct FeatureMap<float>;
template struct FeatureMap<double>;
template Tensor<float> act_on_rgb<float>(const HueElement&, const Tensor<float>&, int);
template Tensor<double> act_on_rgb<double>(const HueElement&, const Tensor<double>&, int);
template FeatureMap<float> regular_action<float>(const GroupElement&, const FeatureMap<float>&);
template FeatureMap<double> regular_action<double>(const GroupElement&, const FeatureMap<double>&);

}  // namespace vpgc::group
