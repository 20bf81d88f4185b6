#include "vpgc/app/checks.hpp"

#include <cmath>
#include <functional>
#include <numbers>
#include <sstream>

#include "vpgc/conv/conv.hpp"
#include "vpgc/diagnostics/diagnostics.hpp"
#include "vpgc/net/network.hpp"
#include "vpgc/tensor/ops.hpp"

namespace vpgc::app {

namespace {

using TD = ad::Tensor<double>;
using TF = ad::Tensor<float>;
constexpr double kPi = std::numbers::pi;

template <typename T>
ad::Tensor<T> random_tensor(ad::Shape shape, uint64_t seed, double lo = -1, double hi = 1) {
  Rng rng(seed);
  std::vector<T> v(ad::numel(shape));
  for (auto& x : v) x = static_cast<T>(rng.uniform(lo, hi));
  return ad::Tensor<T>(std::move(shape), std::move(v));
}

template <typename T>
double max_abs_diff(const ad::Tensor<T>& a, const ad::Tensor<T>& b) {
  if (a.shape() != b.shape()) return std::numeric_limits<double>::infinity();
  double d = 0;
  for (int64_t i = 0; i < a.numel(); ++i) d = std::max(d, std::abs(static_cast<double>(a[i]) - static_cast<double>(b[i])));
  return d;
}

// Sum of Gaussian bumps, smooth at the pixel scale.
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
          v[p * h * w + r * w + c] +=
              static_cast<T>(amp * std::exp(-((r - cy) * (r - cy) + (c - cx) * (c - cx)) / (2 * s * s)));
    }
  }
  return ad::Tensor<T>(std::move(shape), std::move(v));
}

conv::ConvLayerConfig layer(group::GroupKind g, conv::ConvKind kind, int n, int cin, int cout, int k) {
  conv::ConvLayerConfig c;
  c.kind = kind;
  c.group = g;
  c.elements = n;
  c.in_channels = cin;
  c.out_channels = cout;
  c.kernel_size = k;
  return c;
}

std::string fmt(double v) {
  if (v == 0) v = 0;  // no "-0"
  std::ostringstream s;
  s.precision(3);
  s << v;
  return s.str();
}

CheckResult run(const std::string& name, const std::function<CheckResult()>& body) {
  try {
    auto r = body();
    r.name = name;
    return r;
  } catch (const std::exception& e) {
    return {name, false, std::string("threw: ") + e.what()};
  }
}

}  // namespace

CheckResult check_worked_example() {
  return run("worked_example", [] {
    const TD eps({1, 3}, {3, 2, 1});
    const double expect1[] = {0.67, 0.24, 0.09}, expect3[] = {0.45, 0.32, 0.23};
    const auto w1 = dist::importance_weights(eps, TD({1}, {1.0}));
    const auto w3 = dist::importance_weights(eps, TD({1}, {3.0}));
    double worst = 0;
    for (int i = 0; i < 3; ++i) {
      worst = std::max({worst, std::abs(w1[i] - expect1[i]), std::abs(w3[i] - expect3[i])});
    }
    return CheckResult{"", worst <= 0.005,
                       "theta=1 -> (" + fmt(w1[0]) + ", " + fmt(w1[1]) + ", " + fmt(w1[2]) + "), theta=3 -> (" +
                           fmt(w3[0]) + ", " + fmt(w3[1]) + ", " + fmt(w3[2]) + "), max deviation " + fmt(worst)};
  });
}

CheckResult check_hue_equivariance() {
  return run("hue_equivariance", [] {
    double worst = 0;
    for (int m : {3, 6}) {
      for (uint64_t trial = 0; trial < 3; ++trial) {
        Rng rng(100 * m + trial);
        conv::ConvKernel<float> lift(layer(group::GroupKind::Hue, conv::ConvKind::Lift, m, 3, 4, 3), 1, rng);
        conv::ConvKernel<float> gconv(layer(group::GroupKind::Hue, conv::ConvKind::Group, m, 4, 3, 3), m, rng);
        const conv::OutputSpec<float> spec{group::GroupSampleSet::hue(m), std::nullopt, TF::ones({m})};
        const auto x = random_tensor<float>({2, 3, 7, 7}, 1000 * m + trial);
        const auto f = conv::lift_conv(x, spec, lift);
        const auto y = conv::group_conv(f, spec, gconv);
        for (int k = 0; k < m; ++k) {
          const auto g = group::HueElement::of(m, k);
          const auto lhs = conv::lift_conv(group::act_on_rgb(g, x), spec, lift);
          worst = std::max(worst, max_abs_diff(lhs.data, group::regular_action<float>(g, f).data));
          const auto lhs2 = conv::group_conv(group::regular_action<float>(g, f), spec, gconv);
          worst = std::max(worst, max_abs_diff(lhs2.data, group::regular_action<float>(g, y).data));
        }
      }
    }
    return CheckResult{"", worst <= 1e-5, "max |conv(L_g f) - L_g conv(f)| = " + fmt(worst) + " (limit 1e-5)"};
  });
}

CheckResult check_rotation_equivariance() {
  return run("rotation_equivariance", [] {
    Rng rng(50);
    conv::ConvKernel<float> lift(layer(group::GroupKind::Rotation, conv::ConvKind::Lift, 8, 1, 4, 7), 1, rng);
    conv::ConvKernel<float> gconv(layer(group::GroupKind::Rotation, conv::ConvKind::Group, 8, 4, 4, 7), 8, rng);
    const conv::OutputSpec<float> spec{group::GroupSampleSet::rotation_grid(8), std::nullopt, std::nullopt};
    const int64_t size = 29;
    const auto x = smooth_field<float>({2, 1, size, size}, 51);
    const auto y = conv::group_conv(conv::lift_conv(x, spec, lift), spec, gconv);
    double worst = 0;
    for (int k = 0; k < 8; ++k) {
      const auto g = group::RotationElement::of(2 * kPi * k / 8);
      const auto lhs = conv::group_conv(conv::lift_conv(ad::bilinear_rotate(x, g.angle), spec, lift), spec, gconv);
      const auto rhs = group::regular_action<float>(g, y);
      // Only the disc that stays inside the image under every rotation.
      double num = 0, den = 0;
      const double c = (size - 1) / 2.0;
      for (int64_t i = 0; i < lhs.data.numel(); ++i) {
        const int64_t col = i % size, row = (i / size) % size;
        if (std::hypot(row - c, col - c) > 10.0) continue;
        num += std::pow(static_cast<double>(lhs.data[i]) - rhs.data[i], 2);
        den += std::pow(static_cast<double>(rhs.data[i]), 2);
      }
      worst = std::max(worst, std::sqrt(num / den));
    }
    return CheckResult{"", worst <= 1e-2, "max relative error over the 8-grid = " + fmt(worst) + " (limit 1e-2)"};
  });
}

CheckResult check_primitive_gradients() {
  return run("primitive_gradients", [] {
    using P = std::vector<TD>;
    using namespace ad;
    auto probe = [](const TD& y, uint64_t seed) { return sum_all(mul(y, random_tensor<double>(y.shape(), seed))); };
    struct Case {
      const char* name;
      std::function<TD(const P&)> fn;
      P points;
    };
    const auto a = random_tensor<double>({2, 3}, 10), b = random_tensor<double>({2, 3}, 11);
    const auto row = random_tensor<double>({1, 3}, 12), pos = random_tensor<double>({2, 3}, 13, 0.5, 2.0);
    const auto x3 = random_tensor<double>({2, 3, 4}, 22);
    const TD grid({1, 2, 3, 2}, {0.3, 0.6, 1.2, 2.7, 2.6, 0.4, -0.5, 1.5, 3.4, 3.3, 1.7, 2.2});
    const std::vector<Case> cases{
        {"add", [&](const P& p) { return probe(p[0] + p[1], 1); }, {a, row}},
        {"sub", [&](const P& p) { return probe(p[0] - p[1], 2); }, {a, row}},
        {"mul", [&](const P& p) { return probe(p[0] * p[1], 3); }, {a, b}},
        {"div", [&](const P& p) { return probe(p[0] / p[1], 4); }, {a, pos}},
        {"scalar", [&](const P& p) { return probe(add_scalar(mul_scalar(p[0], 1.7), 0.3), 5); }, {a}},
        {"exp", [&](const P& p) { return probe(exp(p[0]), 7); }, {a}},
        {"log", [&](const P& p) { return probe(log(p[0]), 8); }, {pos}},
        {"sin", [&](const P& p) { return probe(sin(p[0]), 9); }, {a}},
        {"cos", [&](const P& p) { return probe(cos(p[0]), 10); }, {a}},
        {"sqrt", [&](const P& p) { return probe(sqrt(p[0]), 11); }, {pos}},
        {"pow", [&](const P& p) { return probe(pow(p[0], 2.5), 12); }, {pos}},
        {"relu", [&](const P& p) { return probe(relu(p[0]), 13); }, {a}},
        {"sigmoid", [&](const P& p) { return probe(sigmoid(p[0]), 14); }, {a}},
        {"softplus", [&](const P& p) { return probe(softplus(p[0]), 15); }, {a}},
        {"matmul", [&](const P& p) { return probe(matmul(p[0], p[1]), 16); },
         {random_tensor<double>({2, 2, 4}, 20), random_tensor<double>({2, 4, 3}, 21)}},
        {"sum", [&](const P& p) { return probe(sum(p[0], {0, 2}), 23); }, {x3}},
        {"mean", [&](const P& p) { return probe(mean(p[0], {1}, true), 24); }, {x3}},
        {"max", [&](const P& p) { return probe(max(p[0], 1), 25); }, {x3}},
        {"softmax", [&](const P& p) { return probe(softmax(p[0], 1), 26); }, {x3}},
        {"log_softmax", [&](const P& p) { return probe(log_softmax(p[0], -1), 27); }, {x3}},
        {"reshape", [&](const P& p) { return probe(reshape(p[0], {6, -1}), 28); }, {x3}},
        {"permute", [&](const P& p) { return probe(permute(p[0], {2, 0, 1}), 29); }, {x3}},
        {"slice", [&](const P& p) { return probe(slice(p[0], 2, 1, 2), 30); }, {x3}},
        {"concat", [&](const P& p) { return probe(concat<double>({p[0], p[1]}, 1), 31); },
         {x3, random_tensor<double>({2, 1, 4}, 32)}},
        {"broadcast_to", [&](const P& p) { return probe(broadcast_to(p[0], {2, 2, 3}), 33); }, {row}},
        {"roll", [&](const P& p) { return probe(roll(p[0], -1, 1), 34); }, {x3}},
        {"index_select", [&](const P& p) { return probe(index_select(p[0], 2, {3, 0, 0, 1, 2}), 35); }, {x3}},
        {"scatter_add", [&](const P& p) { return probe(scatter_add(p[0], 1, {1, 1, 0}, 2), 36); }, {x3}},
        {"conv2d", [&](const P& p) { return probe(conv2d(p[0], p[1], {2, 1, 1}), 37); },
         {random_tensor<double>({2, 2, 5, 4}, 38), random_tensor<double>({3, 2, 3, 3}, 39)}},
        {"conv2d per item", [&](const P& p) { return probe(conv2d(p[0], p[1], {1, 1, 1}), 43); },
         {random_tensor<double>({2, 2, 4, 4}, 44), random_tensor<double>({2, 3, 2, 3, 3}, 45)}},
        {"conv1d", [&](const P& p) { return probe(conv1d(p[0], p[1], 1), 46); },
         {random_tensor<double>({2, 3, 5}, 47), random_tensor<double>({2, 3, 3}, 48)}},
        {"max_pool2d", [&](const P& p) { return probe(max_pool2d(p[0], 2), 49); }, {random_tensor<double>({2, 1, 4, 6}, 50)}},
        {"grid_sample", [&](const P& p) { return probe(grid_sample(p[0], p[1]), 51); },
         {random_tensor<double>({1, 2, 4, 4}, 52), grid}},
        {"bilinear_rotate", [&](const P& p) { return probe(bilinear_rotate(p[0], 0.7), 53); },
         {random_tensor<double>({2, 5, 5}, 54)}},
        {"cross_entropy", [&](const P& p) { return cross_entropy(p[0], {2, 0}); }, {a}},
    };
    double worst = 0;
    std::string failed;
    for (const auto& c : cases) {
      const auto report = grad_check(c.fn, c.points, 1e-4);
      worst = std::max(worst, report.max_rel_error);
      if (!report.passed) failed += std::string(failed.empty() ? "" : ", ") + c.name;
    }
    return CheckResult{"", failed.empty(),
                       std::to_string(cases.size()) + " primitives, max relative error " + fmt(worst) +
                           (failed.empty() ? "" : "; failed: " + failed)};
  });
}

CheckResult check_elbo_gradient() {
  return run("elbo_gradient", [] {
    auto cfg = net::se2_recipe(4, 2, 2);
    cfg.layers.resize(2);
    cfg.pool_after = {false, false};
    cfg.layers[0].kernel_size = 3;
    cfg.layers[1].kernel_size = 3;
    cfg.layers[1].partial = conv::PartialMode::VariationalPartial;
    cfg.validate();
    Rng init(3);
    net::Network<double> model(cfg, init);
    const auto x = smooth_field<double>({2, 1, 7, 7}, 4);
    const std::vector<int> labels{0, 1};
    auto params = model.parameters();
    std::vector<TD> points;
    for (auto& p : params) points.push_back(*p.tensor);
    const auto report = ad::grad_check(
        [&](const std::vector<TD>& w) {
          for (size_t i = 0; i < params.size(); ++i) *params[i].tensor = w[i];
          Rng noise(5);
          net::ForwardOptions o;
          o.training = true;
          o.deterministic = false;
          o.rng = &noise;
          const auto out = model.forward(x, o);
          return net::elbo_loss(out.logits, labels, out.samples, 0.1).total;
        },
        points, 1e-4);
    return CheckResult{"", report.passed,
                       std::to_string(report.entries.size()) + " parameter entries, max relative error " +
                           fmt(report.max_rel_error) + " (limit 1e-4)"};
  });
}

CheckResult check_kl_continuous(const CheckOptions& options) {
  return run("kl_continuous", [&] {
    const bool broken = options.faults.count("kl_continuous") > 0;
    auto kl = [&](double theta) {
      const double v = dist::kl_continuous(TD({1}, {theta})).item();
      return broken ? -v : v;
    };
    const double at1 = kl(1.0), at_half = kl(0.5);
    const bool ok = std::abs(at1) <= 1e-9 && std::abs(at_half - std::log(2.0)) <= 1e-9;
    return CheckResult{"", ok, "kl(1) = " + fmt(at1) + ", kl(0.5) = " + fmt(at_half) + " (expected 0 and ln 2)"};
  });
}

CheckResult check_kl_discrete() {
  return run("kl_discrete", [] {
    double worst = 0;
    for (int m : {2, 3, 6}) {
      const TD uniform({1, m}, std::vector<double>(m, 1.0 / m));
      std::vector<double> hot(m, 0.0);
      hot[0] = 1.0;
      worst = std::max(worst, std::abs(dist::kl_discrete(uniform).item()));
      worst = std::max(worst, std::abs(dist::kl_discrete(TD({1, m}, hot)).item() - std::log(static_cast<double>(m))));
    }
    return CheckResult{"", worst <= 1e-9, "max deviation from (0, ln m) = " + fmt(worst)};
  });
}

CheckResult check_group_axioms() {
  return run("group_axioms", [] {
    Rng rng(3);
    double worst = 0;
    for (int t = 0; t < 50; ++t) {
      const auto a = group::RotationElement::of(rng.uniform(-4, 4)), b = group::RotationElement::of(rng.uniform(-4, 4)),
                 c = group::RotationElement::of(rng.uniform(-4, 4));
      worst = std::max(worst, std::abs(group::wrap_angle(a.compose(b).compose(c).angle - a.compose(b.compose(c)).angle)));
      worst = std::max(worst, std::abs(group::wrap_angle(a.compose(a.inverse()).angle)));
    }
    bool hue_ok = true;
    for (int m : {2, 3, 6}) {
      for (int k = 0; k < m; ++k) {
        const auto g = group::HueElement::of(m, k);
        hue_ok = hue_ok && g.compose(g.inverse()).index == 0;
        for (int j = 0; j < m; ++j) {
          const auto prod = group::matmul3(g.matrix(), group::hm_matrix(m, j));
          const auto expect = group::hm_matrix(m, (k + j) % m);
          for (int i = 0; i < 9; ++i) worst = std::max(worst, std::abs(prod[i] - expect[i]));
        }
      }
    }
    return CheckResult{"", hue_ok && worst <= 1e-9, "max deviation " + fmt(worst)};
  });
}

CheckResult check_equivariance_bound(int trials) {
  return run("equivariance_bound", [&] {
    const int m = 3;
    const auto set = group::GroupSampleSet::hue(m);
    Rng rng(606);
    double worst_ratio = 0, worst_exact = 0;
    int violations = 0, total = 0;
    for (double eps : {0.0, 0.01, 0.1}) {
      for (int t = 0; t < trials; ++t) {
        conv::ConvKernel<double> kernel(layer(group::GroupKind::Hue, conv::ConvKind::Group, m, 2, 2, 3), m, rng);
        const group::FeatureMap<double> f{random_tensor<double>({1, m, 2, 5, 5}, rng.bits()), set, std::nullopt};
        const int g = static_cast<int>(rng.below(m));
        std::vector<double> q(m);
        for (auto& v : q) v = rng.uniform(0.2, 1.0);
        // (L_g q)(u) = q(g^-1 u) through the same regular action the features use.
        const group::FeatureMap<double> qm{TD({1, m, 1, 1, 1}, q), set, std::nullopt};
        auto shifted = group::regular_action<double>(group::HueElement::of(m, g), qm).data.values();
        for (auto& v : shifted) v += eps * rng.uniform(-1, 1);
        const auto r = diag::hue_conv_bound(kernel, f, g, q, shifted);
        ++total;
        // Rounding slack only: both sides are sums of O(1) double terms.
        if (r.error > r.bound + 1e-9) ++violations;
        if (eps == 0) worst_exact = std::max(worst_exact, r.error);
        if (r.bound > 0) worst_ratio = std::max(worst_ratio, r.error / r.bound);
      }
    }
    const bool ok = violations == 0 && worst_exact <= 1e-5;
    return CheckResult{"", ok,
                       std::to_string(total) + " trials, " + std::to_string(violations) +
                           " above the bound, max error/bound " + fmt(worst_ratio) + ", max error at eps 0 " +
                           fmt(worst_exact)};
  });
}

CheckResult check_forced_masks() {
  return run("forced_masks", [] {
    auto cfg = net::hue_recipe(3, 4, 4, {});
    cfg.layers.resize(3);
    cfg.pool_after = {false, true, false};
    cfg.layers[1].partial = conv::PartialMode::VariationalPartial;
    cfg.validate();
    Rng i1(21), i2(21);
    net::Network<float> vp(cfg, i1), full(cfg, i2);
    const auto x = random_tensor<float>({4, 3, 8, 8}, 22, 0, 1);
    net::ForwardOptions ones, as_full, single;
    ones.forced_weights[1] = {1, 1, 1};
    as_full.force_full = true;
    single.forced_weights[1] = {1, 0, 0};
    const auto a = vp.forward(x, ones).logits;
    double same = max_abs_diff(a, full.forward(x, as_full).logits);
    double invariance = 0, broken = 0;
    for (int k = 1; k < 3; ++k) {
      const auto moved = group::act_on_rgb(group::HueElement::of(3, k), x);
      invariance = std::max(invariance, max_abs_diff(a, vp.forward(moved, ones).logits));
      broken = std::max(broken, max_abs_diff(vp.forward(x, single).logits, vp.forward(moved, single).logits));
    }
    const bool ok = same <= 1e-5 && invariance <= 1e-5 && broken > 1e-3;
    return CheckResult{"", ok,
                       "all-ones vs full " + fmt(same) + ", all-ones invariance " + fmt(invariance) +
                           ", (1,0,0) invariance error " + fmt(broken) + " (needs > 1e-3)"};
  });
}

std::vector<CheckResult> selfcheck(const CheckOptions& options) {
  return {check_worked_example(),       check_kl_continuous(options), check_kl_discrete(),
          check_group_axioms(),         check_hue_equivariance(),     check_primitive_gradients(),
          check_elbo_gradient(),        check_forced_masks()};
}

}  // namespace vpgc::app
