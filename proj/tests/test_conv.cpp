#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <numbers>

#include "vpgc/conv/conv.hpp"
#include "vpgc/tensor/autodiff.hpp"

using namespace vpgc;
using namespace vpgc::conv;
using TD = ad::Tensor<double>;
using TF = ad::Tensor<float>;
constexpr double kPi = std::numbers::pi;

namespace {

template <typename T>
ad::Tensor<T> random_tensor(ad::Shape shape, uint64_t seed) {
  Rng rng(seed);
  std::vector<T> v(ad::numel(shape));
  for (auto& x : v) x = static_cast<T>(rng.uniform(-1, 1));
  return ad::Tensor<T>(std::move(shape), std::move(v));
}

template <typename T>
double max_abs(const ad::Tensor<T>& a) {
  double d = 0;
  for (T v : a.data()) d = std::max(d, std::abs(static_cast<double>(v)));
  return d;
}

template <typename T>
double max_abs_diff(const ad::Tensor<T>& a, const ad::Tensor<T>& b) {
  REQUIRE(a.shape() == b.shape());
  double d = 0;
  for (int64_t i = 0; i < a.numel(); ++i) d = std::max(d, std::abs(static_cast<double>(a[i]) - static_cast<double>(b[i])));
  return d;
}

ConvLayerConfig hue_config(ConvKind kind, int m, int cin, int cout, int k = 3) {
  ConvLayerConfig c;
  c.kind = kind;
  c.group = GroupKind::Hue;
  c.elements = m;
  c.in_channels = cin;
  c.out_channels = cout;
  c.kernel_size = k;
  return c;
}

ConvLayerConfig rot_config(ConvKind kind, int n, int cin, int cout, int k) {
  ConvLayerConfig c;
  c.kind = kind;
  c.group = GroupKind::Rotation;
  c.elements = n;
  c.in_channels = cin;
  c.out_channels = cout;
  c.kernel_size = k;
  return c;
}

// Sum of anisotropic Gaussian bumps, smooth at the pixel scale.
template <typename T>
ad::Tensor<T> smooth_field(ad::Shape shape, uint64_t seed) {
  Rng rng(seed);
  const int64_t h = shape[shape.size() - 2], w = shape.back();
  const int64_t planes = ad::numel(shape) / (h * w);
  std::vector<T> v(ad::numel(shape));
  for (int64_t p = 0; p < planes; ++p) {
    for (int bump = 0; bump < 3; ++bump) {
      const double cy = (h - 1) / 2.0 + rng.uniform(-h / 5.0, h / 5.0);
      const double cx = (w - 1) / 2.0 + rng.uniform(-w / 5.0, w / 5.0);
      const double s = rng.uniform(2.0, 3.0), amp = rng.uniform(-1, 1);
      for (int64_t r = 0; r < h; ++r)
        for (int64_t c = 0; c < w; ++c)
          v[p * h * w + r * w + c] += static_cast<T>(amp * std::exp(-((r - cy) * (r - cy) + (c - cx) * (c - cx)) / (2 * s * s)));
    }
  }
  return ad::Tensor<T>(std::move(shape), std::move(v));
}

}  // namespace

TEST_CASE("siren kernel") {
  Rng rng(1);
  SirenKernel<double> s(3, 4, rng);
  auto coords = random_tensor<double>({10, 3}, 2);
  CHECK(s.eval(coords).values() == s.eval(coords).values());
  CHECK(s.eval(coords).shape() == ad::Shape{10, 4});
  auto z = s;
  z.weights().back() = TD::zeros(z.weights().back().shape());
  z.biases().back() = TD::zeros(z.biases().back().shape());
  CHECK(max_abs(z.eval(coords)) == 0.0);
  CHECK_THROWS_AS(s.eval(random_tensor<double>({10, 2}, 3)), ad::ShapeError);

  auto report = ad::grad_check(
      [&](const std::vector<TD>& p) {
        auto k = s;
        k.weights()[0] = p[0];
        return ad::sum_all(k.eval(coords));
      },
      {s.weights()[0]}, 1e-4);
  INFO("max rel err " << report.max_rel_error);
  CHECK(report.passed);
}

TEST_CASE("hue lifting: gray fixed point, masks, and direct-summation oracle") {
  Rng rng(3);
  ConvKernel<double> kernel(hue_config(ConvKind::Lift, 3, 3, 2), 1, rng);
  const auto set = GroupSampleSet::hue(3);

  std::vector<double> g(2 * 3 * 6 * 6);
  Rng d(4);
  for (int b = 0; b < 2; ++b)
    for (int p = 0; p < 36; ++p) {
      const double v = d.uniform();
      for (int c = 0; c < 3; ++c) g[(b * 3 + c) * 36 + p] = v;
    }
  auto gray = lift_conv(TD({2, 3, 6, 6}, g), {set, std::nullopt, std::nullopt}, kernel);
  for (int b = 0; b < 2; ++b)
    for (int j = 1; j < 3; ++j)
      for (int i = 0; i < 2 * 36; ++i)
        CHECK(std::abs(gray.data[(b * 3 + j) * 72 + i] - gray.data[(b * 3) * 72 + i]) <= 1e-6);

  auto x = random_tensor<double>({2, 3, 6, 6}, 5);
  auto full = lift_conv(x, {set, std::nullopt, std::nullopt}, kernel);
  auto masked = lift_conv(x, {set, std::nullopt, TD({3}, {1, 0, 0})}, kernel);
  for (int b = 0; b < 2; ++b)
    for (int j = 0; j < 3; ++j)
      for (int i = 0; i < 72; ++i) {
        const int64_t idx = (b * 3 + j) * 72 + i;
        if (j == 0) CHECK(std::abs(masked.data[idx] - full.data[idx]) <= 1e-6);
        else CHECK(masked.data[idx] == 0.0);
      }

  // Direct summation: rotate kernel RGB fibers by element j and loop over positions.
  const auto& bank = kernel.bank();  // (2, 3, 1, 3, 3)
  double diff = 0;
  for (int j = 0; j < 3; ++j) {
    const auto m = group::hm_matrix(3, j);
    for (int b = 0; b < 2; ++b)
      for (int co = 0; co < 2; ++co)
        for (int oy = 0; oy < 6; ++oy)
          for (int ox = 0; ox < 6; ++ox) {
            double acc = 0;
            for (int ky = 0; ky < 3; ++ky)
              for (int kx = 0; kx < 3; ++kx) {
                const int iy = oy + ky - 1, ix = ox + kx - 1;
                if (iy < 0 || iy >= 6 || ix < 0 || ix >= 6) continue;
                for (int c = 0; c < 3; ++c) {
                  double w = 0;
                  for (int c2 = 0; c2 < 3; ++c2) w += m[c * 3 + c2] * bank[((co * 3 + c2) * 3 + ky) * 3 + kx];
                  acc += w * x[((b * 3 + c) * 6 + iy) * 6 + ix];
                }
              }
            diff = std::max(diff, std::abs(acc - full.data[(((b * 3 + j) * 2 + co) * 6 + oy) * 6 + ox]));
          }
  }
  CHECK(diff <= 1e-5);
  CHECK_THROWS_AS(lift_conv(x, {set, std::nullopt, TD({2}, {1, 1})}, kernel), ad::ShapeError);
  CHECK_THROWS_AS(lift_conv(x, {set, std::nullopt, TD({3}, {1, -1, 1})}, kernel), std::domain_error);
}

TEST_CASE("hue group convolution with a delta kernel is the identity") {
  for (int m : {3, 6}) {
    Rng rng(6);
    ConvKernel<double> kernel(hue_config(ConvKind::Group, m, 2, 2), m, rng);
    std::vector<double> bank(2 * 2 * m * 9, 0.0);
    // Dirac at the identity offset under the normalized Haar measure has mass m.
    for (int c = 0; c < 2; ++c) bank[((c * 2 + c) * m + 0) * 9 + 4] = m;
    kernel.bank() = TD({2, 2, m, 3, 3}, bank);
    FeatureMap<double> f{random_tensor<double>({2, m, 2, 5, 5}, 7), GroupSampleSet::hue(m), std::nullopt};
    auto out = group_conv(f, {GroupSampleSet::hue(m), std::nullopt, std::nullopt}, kernel);
    CHECK(max_abs_diff(out.data, f.data) <= 1e-12);
  }
}

TEST_CASE("hue convolutions are exactly equivariant in 32-bit") {
  for (int m : {3, 6}) {
    Rng rng(static_cast<uint64_t>(m));
    ConvKernel<float> lift(hue_config(ConvKind::Lift, m, 3, 4), 1, rng);
    ConvKernel<float> gconv(hue_config(ConvKind::Group, m, 4, 3), m, rng);
    const auto set = GroupSampleSet::hue(m);
    const OutputSpec<float> spec{set, std::nullopt, TF::ones({m})};
    auto x = random_tensor<float>({2, 3, 7, 7}, 10 + m);
    auto f = lift_conv(x, spec, lift);
    for (int k = 0; k < m; ++k) {
      const auto g = group::HueElement::of(m, k);
      auto lhs = lift_conv(group::act_on_rgb(g, x), spec, lift);
      auto rhs = group::regular_action<float>(g, f);
      CHECK(max_abs_diff(lhs.data, rhs.data) <= 1e-5);
      auto lhs2 = group_conv(group::regular_action<float>(g, f), spec, gconv);
      auto rhs2 = group::regular_action<float>(g, group_conv(f, spec, gconv));
      CHECK(max_abs_diff(lhs2.data, rhs2.data) <= 1e-5);
    }
  }
}

TEST_CASE("linearity") {
  Rng rng(20);
  ConvKernel<double> gconv(hue_config(ConvKind::Group, 3, 2, 2), 3, rng);
  const auto set = GroupSampleSet::hue(3);
  FeatureMap<double> f{random_tensor<double>({1, 3, 2, 5, 5}, 21), set, std::nullopt};
  FeatureMap<double> h{random_tensor<double>({1, 3, 2, 5, 5}, 22), set, std::nullopt};
  FeatureMap<double> mix{ad::add(ad::mul_scalar(f.data, 0.7), ad::mul_scalar(h.data, -1.3)), set, std::nullopt};
  const OutputSpec<double> spec{set, std::nullopt, std::nullopt};
  auto lhs = group_conv(mix, spec, gconv).data;
  auto rhs = ad::add(ad::mul_scalar(group_conv(f, spec, gconv).data, 0.7), ad::mul_scalar(group_conv(h, spec, gconv).data, -1.3));
  CHECK(max_abs_diff(lhs, rhs) <= 1e-5);
}

TEST_CASE("partial convolution dispatch") {
  Rng rng(30);
  ConvKernel<double> gconv(hue_config(ConvKind::Group, 3, 2, 2), 3, rng);
  const auto set = GroupSampleSet::hue(3);
  FeatureMap<double> f{random_tensor<double>({2, 3, 2, 5, 5}, 31), set, std::nullopt};
  auto full = group_conv(f, {set, std::nullopt, TD::ones({3})}, gconv);
  dist::DistSample<double> all{set, std::nullopt, TD::ones({2, 3}), std::nullopt, TD::ones({2}), TD::zeros({2}), {}};
  CHECK(partial_conv(f, all, gconv).data.values() == full.data.values());
  dist::DistSample<double> one{set, std::nullopt, TD({2, 3}, {1, 0, 0, 1, 0, 0}), std::nullopt, TD::ones({2}), TD::zeros({2}), {}};
  auto masked = partial_conv(f, one, gconv);
  for (int b = 0; b < 2; ++b)
    for (int j = 0; j < 3; ++j)
      for (int i = 0; i < 50; ++i) {
        const int64_t idx = (b * 3 + j) * 50 + i;
        if (j == 0) CHECK(std::abs(masked.data[idx] - full.data[idx]) <= 1e-6);
        else CHECK(masked.data[idx] == 0.0);
      }
  dist::DistSample<double> stale{set, std::nullopt, TD::ones({1, 3}), std::nullopt, TD::ones({1}), TD::zeros({1}), {}};
  CHECK_THROWS_AS(partial_conv(f, stale, gconv), std::invalid_argument);
}

TEST_CASE("rotation convolutions: quarter turns on a 4-grid") {
  Rng rng(40);
  ConvKernel<double> lift(rot_config(ConvKind::Lift, 4, 1, 3, 5), 1, rng);
  ConvKernel<double> gconv(rot_config(ConvKind::Group, 4, 3, 2, 5), 4, rng);
  const auto grid = GroupSampleSet::rotation_grid(4);
  const OutputSpec<double> spec{grid, std::nullopt, std::nullopt};
  auto x = smooth_field<double>({1, 1, 15, 15}, 41);
  auto f = lift_conv(x, spec, lift);
  const auto g = group::RotationElement::of(kPi / 2);
  auto lhs = lift_conv(ad::bilinear_rotate(x, g.angle), spec, lift);
  auto rhs = group::regular_action<double>(g, f);
  CHECK(max_abs_diff(lhs.data, rhs.data) <= 1e-3);
  auto lhs2 = group_conv(group::regular_action<double>(g, f), spec, gconv);
  auto rhs2 = group::regular_action<double>(g, group_conv(f, spec, gconv));
  CHECK(max_abs_diff(lhs2.data, rhs2.data) <= 1e-3);
}

TEST_CASE("rotation convolutions: 8-grid equivariance on smooth inputs") {
  Rng rng(50);
  ConvKernel<float> lift(rot_config(ConvKind::Lift, 8, 1, 4, 7), 1, rng);
  ConvKernel<float> gconv(rot_config(ConvKind::Group, 8, 4, 4, 7), 8, rng);
  const auto grid = GroupSampleSet::rotation_grid(8);
  const OutputSpec<float> spec{grid, std::nullopt, std::nullopt};
  auto x = smooth_field<float>({2, 1, 29, 29}, 51);
  auto f = lift_conv(x, spec, lift);
  auto y = group_conv(f, spec, gconv);
  for (int k = 1; k < 8; ++k) {
    const auto g = group::RotationElement::of(2 * kPi * k / 8);
    auto lhs = group_conv(lift_conv(ad::bilinear_rotate(x, g.angle), spec, lift), spec, gconv);
    auto rhs = group::regular_action<float>(g, y);
    // Compare away from the border, where rotation moves content off the grid.
    double num = 0, den = 0;
    for (int64_t i = 0; i < lhs.data.numel(); ++i) {
      const int64_t col = i % 29, row = (i / 29) % 29;
      if (std::hypot(row - 14.0, col - 14.0) > 10.0) continue;
      num += std::pow(lhs.data[i] - rhs.data[i], 2);
      den += std::pow(rhs.data[i], 2);
    }
    const double rel = std::sqrt(num / den);
    INFO("rotation step " << k << " relative error " << rel);
    CHECK(rel <= 1e-2);
  }
}

TEST_CASE("relative angles resolve pi ties consistently on grids") {
  FeatureMap<double> f{TD::zeros({1, 8, 1, 3, 3}), GroupSampleSet::rotation_grid(8), std::nullopt};
  auto rel = relative_angles(f, OutputSpec<double>{GroupSampleSet::rotation_grid(8), std::nullopt, std::nullopt});
  for (int j = 0; j < 8; ++j)
    for (int i = 0; i < 8; ++i) {
      const double expect = group::wrap_angle(2 * kPi * ((j - i + 8) % 8) / 8);
      CHECK(rel[j * 8 + i] == doctest::Approx(expect));
    }
}

TEST_CASE("per-item sampled angles route gradients to the angles") {
  Rng rng(60);
  ConvKernel<double> lift(rot_config(ConvKind::Lift, 3, 1, 2, 5), 1, rng);
  ConvKernel<double> gconv(rot_config(ConvKind::Group, 3, 2, 2, 3), 3, rng);
  auto x = smooth_field<double>({2, 1, 7, 7}, 61);
  auto f = lift_conv(x, {GroupSampleSet::rotation_grid(3), std::nullopt, std::nullopt}, lift);
  auto report = ad::grad_check(
      [&](const std::vector<TD>& p) {
        OutputSpec<double> spec{GroupSampleSet::rotation_angles({0, 0, 0}), p[0], std::nullopt};
        auto a = lift_conv(x, spec, lift);
        auto b = group_conv(f, spec, gconv);
        return ad::add(ad::sum_all(ad::mul(a.data, a.data)), ad::sum_all(ad::mul(b.data, b.data)));
      },
      {TD({2, 3}, {0.3, -1.1, 2.0, 0.9, -2.5, 0.1})}, 1e-4);
  INFO("max rel err " << report.max_rel_error);
  CHECK(report.passed);
}
