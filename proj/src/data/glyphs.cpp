#include <algorithm>
#include <array>
#include <cmath>
#include <numbers>

#include "vpgc/data/dataset.hpp"

namespace vpgc::data {

namespace {

struct Point {
  double x, y;
};
using Stroke = std::vector<Point>;

// Arc centred at (cx, cy), angles in degrees, y pointing down the page.
Stroke arc(double cx, double cy, double rx, double ry, double from, double to, int steps = 16) {
  Stroke s;
  for (int i = 0; i <= steps; ++i) {
    const double a = (from + (to - from) * i / steps) * std::numbers::pi / 180.0;
    s.push_back({cx + rx * std::cos(a), cy + ry * std::sin(a)});
  }
  return s;
}

Stroke concat(Stroke a, const Stroke& b) {
  a.insert(a.end(), b.begin(), b.end());
  return a;
}

// Unit-box templates. The 9 is the 6 turned by a half turn so the two
// differ only in orientation, as handwritten ones roughly do.
std::vector<Stroke> glyph(int digit) {
  switch (digit) {
    case 0: return {arc(0.5, 0.5, 0.26, 0.38, 0, 360, 32)};
    case 1: return {{{0.36, 0.24}, {0.52, 0.1}, {0.52, 0.9}}};
    case 2: return {concat(arc(0.5, 0.32, 0.24, 0.22, 190, 370), {{0.7, 0.5}, {0.24, 0.9}, {0.8, 0.9}})};
    case 3: return {concat(arc(0.48, 0.3, 0.24, 0.2, 200, 450), arc(0.48, 0.7, 0.26, 0.2, 270, 520))};
    case 4: return {{{0.64, 0.9}, {0.64, 0.1}, {0.2, 0.64}, {0.82, 0.64}}};
    case 5: return {concat({{0.76, 0.1}, {0.32, 0.1}, {0.28, 0.46}}, arc(0.48, 0.66, 0.26, 0.23, 220, 500))};
    case 6: return {concat({{0.66, 0.1}, {0.42, 0.32}}, arc(0.5, 0.66, 0.23, 0.23, 205, 565, 28))};
    case 7: return {{{0.22, 0.12}, {0.8, 0.12}, {0.42, 0.9}}};
    case 8: return {arc(0.5, 0.3, 0.2, 0.19, 0, 360, 24), arc(0.5, 0.7, 0.25, 0.21, 0, 360, 24)};
    case 9: {
      auto strokes = glyph(6);
      for (auto& s : strokes) {
        for (auto& p : s) p = {1 - p.x, 1 - p.y};
      }
      return strokes;
    }
    default: throw std::invalid_argument("glyph: digit must be 0..9");
  }
}

double segment_distance(Point p, Point a, Point b) {
  const double dx = b.x - a.x, dy = b.y - a.y;
  const double len2 = dx * dx + dy * dy;
  const double t = len2 > 0 ? std::clamp(((p.x - a.x) * dx + (p.y - a.y) * dy) / len2, 0.0, 1.0) : 0.0;
  return std::hypot(p.x - a.x - t * dx, p.y - a.y - t * dy);
}

}  // namespace

ImageDataset render_digits(int per_digit, uint64_t seed, int size) {
  if (per_digit < 1 || size < 8) throw std::invalid_argument("render_digits: need per_digit >= 1 and size >= 8");
  ImageDataset out;
  out.height = out.width = size;
  for (int d = 0; d < 10; ++d) out.class_names.push_back(std::to_string(d));
  Rng rng = Rng::stream(seed, "glyphs");
  std::vector<float> img(static_cast<size_t>(size) * size);
  // Interleave digits so any prefix is class balanced.
  for (int n = 0; n < per_digit; ++n) {
    for (int d = 0; d < 10; ++d) {
      // Random affine placement: the glyph box spans ~20 px of 28, as in MNIST.
      const double scale = size * rng.uniform(0.6, 0.76);
      const double aspect = rng.uniform(0.8, 1.15);
      const double shear = rng.uniform(-0.25, 0.25);
      const double tilt = rng.uniform(-0.18, 0.18);
      const double cx = size / 2.0 + rng.uniform(-1.5, 1.5), cy = size / 2.0 + rng.uniform(-1.5, 1.5);
      const double radius = rng.uniform(0.9, 1.6);
      const double jitter = 0.03;
      const double ct = std::cos(tilt), st = std::sin(tilt);
      std::vector<Stroke> strokes = glyph(d);
      for (auto& s : strokes) {
        for (auto& p : s) {
          double u = (p.x - 0.5 + rng.uniform(-jitter, jitter)) * aspect, v = p.y - 0.5 + rng.uniform(-jitter, jitter);
          u += shear * v;
          p = {cx + scale * (ct * u - st * v), cy + scale * (st * u + ct * v)};
        }
      }
      for (int r = 0; r < size; ++r) {
        for (int c = 0; c < size; ++c) {
          const Point q{c + 0.5, r + 0.5};
          double dist = 1e9;
          for (const auto& s : strokes) {
            for (size_t k = 1; k < s.size(); ++k) dist = std::min(dist, segment_distance(q, s[k - 1], s[k]));
          }
          img[r * size + c] = static_cast<float>(std::clamp(radius + 0.5 - dist, 0.0, 1.0));
        }
      }
      out.append(img, d);
    }
  }
  out.provenance = {"glyph-digits", seed, {}, "1", "per_digit=" + std::to_string(per_digit)};
  return out;
}

}  // namespace vpgc::data
