#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <numbers>

#include "vpgc/data/dataset.hpp"
#include "vpgc/group/group.hpp"

using namespace vpgc;
using namespace vpgc::data;
constexpr double kPi = std::numbers::pi;

namespace {

std::filesystem::path temp_dir() {
  auto dir = std::filesystem::temp_directory_path() / "vpgc_test_data";
  std::filesystem::create_directories(dir);
  return dir;
}

ImageDataset tiny_digits() {
  ImageDataset d;
  d.height = d.width = 6;
  for (int k = 0; k < 10; ++k) d.class_names.push_back(std::to_string(k));
  Rng rng(3);
  for (int label : {6, 7}) {
    std::vector<float> img(36);
    for (auto& v : img) v = static_cast<float>(rng.uniform());
    d.append(img, label);
  }
  return d;
}

}  // namespace

TEST_CASE("hand-built IDX image file decodes byte for byte") {
  const std::vector<uint8_t> bytes{0, 0, 8, 3, 0, 0, 0, 1, 0, 0, 0, 2, 0, 0, 0, 2, 0, 255, 128, 64};
  const auto a = parse_idx(bytes);
  CHECK(a.dims == std::vector<uint32_t>{1, 2, 2});
  CHECK(a.values == std::vector<uint8_t>{0, 255, 128, 64});

  const auto dir = temp_dir();
  IdxArray labels{{1}, {6}};
  write_bytes(dir / "img.idx", bytes);
  write_bytes(dir / "lab.idx.gz", encode_idx(labels));
  const auto ds = load_mnist(dir / "img.idx", dir / "lab.idx.gz");
  REQUIRE(ds.size() == 1);
  CHECK(ds.pixels[0] == 0.0f);
  CHECK(ds.pixels[1] == 1.0f);
  CHECK(ds.pixels[2] == doctest::Approx(0.50196).epsilon(1e-5));
  CHECK(ds.pixels[3] == doctest::Approx(0.25098).epsilon(1e-5));
  CHECK(ds.labels[0] == 6);
}

TEST_CASE("label file decodes and bad input reports a byte offset") {
  const std::vector<uint8_t> labels{0, 0, 8, 1, 0, 0, 0, 3, 6, 7, 9};
  CHECK(parse_idx(labels).values == std::vector<uint8_t>{6, 7, 9});

  const std::vector<uint8_t> bad{0xDE, 0xAD, 0xBE, 0xEF, 0, 0, 0, 0};
  CHECK_THROWS_WITH_AS(parse_idx(bad), doctest::Contains("at byte 0"), ParseError);

  const std::vector<uint8_t> truncated{0, 0, 8, 1, 0, 0, 0, 5, 1, 2};
  CHECK_THROWS_WITH_AS(parse_idx(truncated), doctest::Contains("at byte 10"), ParseError);
  CHECK_THROWS_AS(parse_idx(std::vector<uint8_t>{0, 0}), ParseError);
}

TEST_CASE("corrupt gzip stream is rejected") {
  const auto dir = temp_dir();
  const std::vector<uint8_t> payload{0, 0, 8, 1, 0, 0, 0, 3, 6, 7, 9};
  write_bytes(dir / "ok.gz", payload);
  CHECK(read_bytes(dir / "ok.gz") == payload);
  std::vector<uint8_t> packed;
  {
    std::ifstream in(dir / "ok.gz", std::ios::binary);
    packed.assign(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
  }
  packed.resize(packed.size() / 2);
  {
    std::ofstream out(dir / "cut.gz", std::ios::binary);
    out.write(reinterpret_cast<const char*>(packed.data()), static_cast<std::streamsize>(packed.size()));
  }
  CHECK_THROWS_AS(read_bytes(dir / "cut.gz"), ParseError);
}

TEST_CASE("mnist67-180 appends half-turn copies with 6 -> 9") {
  const auto src = tiny_digits();
  const auto out = make_mnist67_180(src, 7);
  REQUIRE(out.size() == 4);
  CHECK(out.class_names == std::vector<std::string>{"6", "7", "9"});
  // Class names by index give the digit labels (6, 7, 9, 7).
  std::vector<std::string> names;
  for (int l : out.labels) names.push_back(out.class_names[l]);
  CHECK(names == std::vector<std::string>{"6", "7", "9", "7"});
  out.validate();

  // A half turn reverses the pixel order exactly, and twice restores it.
  for (int64_t i = 0; i < 2; ++i) {
    const auto a = out.image(i), b = out.image(i + 2);
    for (size_t p = 0; p < a.size(); ++p) CHECK(b[p] == a[a.size() - 1 - p]);
    const auto back = rotate_image(out.image(i + 2), 1, 6, 6, kPi);
    for (size_t p = 0; p < a.size(); ++p) CHECK(back[p] == a[p]);
  }

  const auto glyphs = render_digits(20, 1);
  const auto big = make_mnist67_180(glyphs, 7);
  int sixes = 0, nines = 0;
  for (int l : big.labels) {
    sixes += l == 0;
    nines += l == 2;
  }
  CHECK(big.size() == 2 * 40);
  CHECK(sixes == nines);
  CHECK(make_mnist67_180(glyphs, 7, 5).size() == 20);

  ImageDataset no_sevens = tiny_digits();
  no_sevens.labels = {6, 6};
  CHECK_THROWS_AS(make_mnist67_180(no_sevens, 1), std::invalid_argument);
}

TEST_CASE("power-law class sizes") {
  CHECK(power_law_counts(10, 500, 1.5) == std::vector<int>{500, 177, 96, 62, 45, 34, 27, 22, 19, 16});
  const auto counts = power_law_counts(30, 500, 1.5);
  for (size_t i = 0; i < counts.size(); ++i) {
    CHECK(counts[i] >= 1);
    CHECK(std::abs(counts[i] - 500 * std::pow(i + 1.0, -1.5)) <= 0.5);
  }
}

TEST_CASE("long-tailed colour digits") {
  const auto src = render_digits(150, 2);  // 50 images per (digit, colour)
  ColorMnistOptions opts;
  opts.head = 40;
  const auto ds = make_longtailed_colormnist(src, 5, opts);
  ds.validate();
  CHECK(ds.classes() == 30);
  CHECK(ds.channels == 3);
  std::vector<int> hist(30, 0);
  for (int l : ds.labels) ++hist[l];
  CHECK(hist == power_law_counts(30, 40, 1.5));

  // Background is exact gray and foreground is a single pure channel.
  const int64_t plane = ds.height * ds.width;
  int background = 0;
  for (int64_t i = 0; i < ds.size(); ++i) {
    const auto img = ds.image(i);
    const int color = ds.labels[i] % 3;
    for (int64_t q = 0; q < plane; ++q) {
      const float r = img[q], g = img[plane + q], b = img[2 * plane + q];
      if (r == 0.5f && g == 0.5f && b == 0.5f) {
        ++background;
        continue;
      }
      const float c[3] = {r, g, b};
      for (int ch = 0; ch < 3; ++ch) {
        if (ch != color) CHECK(c[ch] == 0.0f);
      }
      CHECK(c[color] > 0.1f);
    }
  }
  CHECK(background > 0);

  // Gray is fixed by every hue element.
  const std::vector<float> gray(3 * 4, 0.5f);
  for (int k = 0; k < 3; ++k) {
    const auto shifted = hue_shift_image(gray, 2, 2, k / 3.0);
    for (float v : shifted) CHECK(v == doctest::Approx(0.5f).epsilon(1e-6));
  }

  // The head class is capped by what the source provides.
  const auto capped = make_longtailed_colormnist(render_digits(30, 2), 5, opts);
  CHECK(std::count(capped.labels.begin(), capped.labels.end(), 0) == 10);

  CHECK(make_longtailed_colormnist(src, 5, opts).pixels == ds.pixels);
  CHECK(make_longtailed_colormnist(src, 6, opts).pixels != ds.pixels);
  ColorMnistOptions too_many = opts;
  too_many.classes = 31;
  CHECK_THROWS_AS(make_longtailed_colormnist(src, 5, too_many), std::invalid_argument);
  ImageDataset empty{1, 28, 28, {}, {}, src.class_names, {}};
  CHECK_THROWS_AS(make_longtailed_colormnist(empty, 5, opts), std::invalid_argument);
}

TEST_CASE("hue shift matches the group action and composes") {
  Rng rng(11);
  std::vector<float> img(3 * 25);
  for (auto& v : img) v = static_cast<float>(rng.uniform(0.3, 0.7));
  CHECK(hue_shift_image(img, 5, 5, 0.0) == img);

  const auto twice = hue_shift_image(hue_shift_image(img, 5, 5, 0.5), 5, 5, 0.5);
  for (size_t i = 0; i < img.size(); ++i) CHECK(twice[i] == doctest::Approx(img[i]).epsilon(1e-6));

  const auto shifted = hue_shift_image(img, 5, 5, 1.0 / 3.0);
  ad::Tensor<double> t({1, 3, 5, 5}, std::vector<double>(img.begin(), img.end()));
  const auto expected = group::act_on_rgb(group::HueElement::of(3, 1), t);
  for (size_t i = 0; i < img.size(); ++i) CHECK(shifted[i] == doctest::Approx(expected[i]).epsilon(1e-6));
}

TEST_CASE("rotate_image identities") {
  const auto digits = render_digits(1, 4);
  const auto img = digits.image(6);
  const auto same = rotate_image(img, 1, 28, 28, 0.0);
  CHECK(std::equal(same.begin(), same.end(), img.begin()));
  const auto full = rotate_image(img, 1, 28, 28, 2 * kPi);
  for (int r = 4; r < 24; ++r)
    for (int c = 4; c < 24; ++c) CHECK(full[r * 28 + c] == doctest::Approx(img[r * 28 + c]).epsilon(1e-6));
  const auto half = rotate_image(img, 1, 28, 28, kPi);
  for (size_t p = 0; p < img.size(); ++p) CHECK(half[p] == img[img.size() - 1 - p]);
}

TEST_CASE("glyph renderer is deterministic, balanced and in range") {
  const auto a = render_digits(3, 9), b = render_digits(3, 9);
  CHECK(a.pixels == b.pixels);
  CHECK(a.labels == b.labels);
  CHECK(render_digits(3, 10).pixels != a.pixels);
  a.validate();
  std::vector<int> hist(10, 0);
  for (int l : a.labels) ++hist[l];
  CHECK(hist == std::vector<int>(10, 3));
  // Every glyph has ink and a blank border row.
  for (int64_t i = 0; i < a.size(); ++i) {
    const auto img = a.image(i);
    float ink = 0;
    for (float v : img) ink += v;
    CHECK(ink > 20.0f);
    for (int c = 0; c < 28; ++c) CHECK(img[c] == 0.0f);
  }
}

TEST_CASE("dataset container checks") {
  auto d = tiny_digits();
  d.validate();
  d.labels[0] = 12;
  CHECK_THROWS_AS(d.validate(), std::invalid_argument);
  d = tiny_digits();
  d.pixels[0] = 1.5f;
  CHECK_THROWS_AS(d.validate(), std::invalid_argument);
  d = tiny_digits();
  d.pixels.pop_back();
  CHECK_THROWS_AS(d.validate(), std::invalid_argument);

  d = tiny_digits();
  const std::vector<int64_t> idx{1, 0};
  const auto batch = d.batch<double>(idx);
  CHECK(batch.shape() == ad::Shape{2, 1, 6, 6});
  CHECK(batch[0] == d.image(1)[0]);
  CHECK(d.batch_labels(idx) == std::vector<int>{7, 6});
  CHECK(d.subset(idx).labels == std::vector<int>{7, 6});
}

TEST_CASE("cifar batches parse and reject partial records") {
  const auto dir = temp_dir();
  std::vector<uint8_t> rec(2 * 3073, 10);
  rec[0] = 3;
  rec[3073] = 9;
  write_bytes(dir / "cifar.bin", rec);
  const auto ds = load_cifar10({dir / "cifar.bin"});
  CHECK(ds.size() == 2);
  CHECK(ds.labels == std::vector<int>{3, 9});
  CHECK(ds.pixels[0] == doctest::Approx(10 / 255.0));
  rec.pop_back();
  write_bytes(dir / "cifar_bad.bin", rec);
  CHECK_THROWS_WITH_AS(load_cifar10({dir / "cifar_bad.bin"}), doctest::Contains("at byte 3073"), ParseError);
}
