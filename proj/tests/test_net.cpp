#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>

#include "vpgc/net/checkpoint.hpp"
#include "vpgc/net/network.hpp"
#include "vpgc/tensor/ops.hpp"

using namespace vpgc;
using namespace vpgc::net;

namespace {

template <typename T>
Tensor<T> random_images(int64_t b, int64_t c, int64_t hw, uint64_t seed, double lo = 0.2, double hi = 0.8) {
  Rng rng(seed);
  std::vector<T> v(b * c * hw * hw);
  for (auto& x : v) x = static_cast<T>(rng.uniform(lo, hi));
  return Tensor<T>({b, c, hw, hw}, std::move(v));
}

template <typename T>
double max_abs_diff(const Tensor<T>& a, const Tensor<T>& b) {
  REQUIRE(a.shape() == b.shape());
  double d = 0;
  for (int64_t i = 0; i < a.numel(); ++i) d = std::max(d, std::abs(static_cast<double>(a[i]) - static_cast<double>(b[i])));
  return d;
}

template <typename T>
bool bit_equal(const Tensor<T>& a, const Tensor<T>& b) {
  return a.shape() == b.shape() && a.values() == b.values();
}

// Small hue model: lift, one variational group conv, one full group conv.
ModelConfig three_layer_hue(PartialMode middle = PartialMode::VariationalPartial, int classes = 4) {
  auto c = hue_recipe(3, classes, 4, {});
  c.layers.resize(3);
  c.pool_after = {false, true, false};
  c.layers[1].partial = middle;
  c.validate();
  return c;
}

std::filesystem::path temp_path(const std::string& name) {
  auto dir = std::filesystem::temp_directory_path() / "vpgc_test_net";
  std::filesystem::create_directories(dir);
  return dir / name;
}

std::vector<uint8_t> file_bytes(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void put_file(const std::filesystem::path& p, const std::vector<uint8_t>& bytes) {
  std::ofstream out(p, std::ios::binary | std::ios::trunc);
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
}

}  // namespace

TEST_CASE("fully equivariant hue network is invariant to hue shifts") {
  Rng init(1);
  Network<float> net(hue_recipe(3, 10, 4, {}), init);
  const auto x = random_images<float>(3, 3, 12, 2);
  ForwardOptions eval;
  const auto base = net.forward(x, eval).logits;
  for (int k = 1; k < 3; ++k) {
    const auto moved = net.forward(group::act_on_rgb(group::HueElement::of(3, k), x), eval).logits;
    CHECK(max_abs_diff(base, moved) <= 1e-5);
  }
}

TEST_CASE("deterministic discrete variational network stays hue invariant") {
  Rng init(4);
  Network<float> net(hue_recipe(3, 10, 4, {4}), init);
  const auto x = random_images<float>(3, 3, 12, 5);
  ForwardOptions eval;
  const auto base = net.forward(x, eval).logits;
  const auto moved = net.forward(group::act_on_rgb(group::HueElement::of(3, 2), x), eval).logits;
  CHECK(max_abs_diff(base, moved) <= 1e-5);
}

TEST_CASE("zero head gives uniform probabilities") {
  Rng init(2);
  Network<double> net(three_layer_hue(), init);
  net.head_weight() = Tensor<double>::zeros(net.head_weight().shape()).as_leaf(true);
  const auto z = net.forward(random_images<double>(2, 3, 8, 3), ForwardOptions{}).logits;
  const auto p = ad::softmax(z, -1);
  for (int64_t i = 0; i < p.numel(); ++i) CHECK(p[i] == doctest::Approx(0.25).epsilon(1e-12));
}

TEST_CASE("same seed gives bit-identical stochastic forwards") {
  for (auto kind : {DistKind::Discrete, DistKind::Gumbel}) {
    auto cfg = three_layer_hue();
    cfg.dist = kind;
    Rng i1(7), i2(7);
    Network<float> a(cfg, i1), b(cfg, i2);
    const auto x = random_images<float>(4, 3, 8, 8);
    Rng r1(9), r2(9);
    ForwardOptions o1, o2;
    o1.deterministic = o2.deterministic = false;
    o1.training = o2.training = true;
    o1.rng = &r1;
    o2.rng = &r2;
    CHECK(bit_equal(a.forward(x, o1).logits, b.forward(x, o2).logits));
  }
}

TEST_CASE("rotation network without partial layers is invariant to quarter turns") {
  auto cfg = se2_recipe(4, 4, 3);
  cfg.layers[2].partial = PartialMode::Full;
  Rng init(3);
  Network<double> net(cfg, init);
  const auto x = random_images<double>(2, 1, 28, 4, 0.0, 1.0);
  ForwardOptions eval;
  const auto base = net.forward(x, eval).logits;
  for (int q = 1; q < 4; ++q) {
    const auto moved = net.forward(ad::bilinear_rotate(x, q * std::numbers::pi / 2), eval).logits;
    CHECK(max_abs_diff(base, moved) <= 1e-9);
  }
}

TEST_CASE("elbo loss decomposition") {
  const Tensor<double> flat({3, 2}, std::vector<double>(6, 0.0));
  const auto e0 = elbo_loss(flat, {0, 1, 1}, {}, 0.0);
  CHECK(e0.total_value == doctest::Approx(std::log(2.0)).epsilon(1e-12));
  CHECK(e0.cross_entropy == e0.total_value);

  Rng rng(1);
  const auto at_prior = dist::sample_continuous(Tensor<double>({3}, {1.0, 1.0, 1.0}), 4, rng);
  const auto e1 = elbo_loss(flat, {0, 1, 1}, {at_prior}, 0.7);
  REQUIRE(e1.kl.size() == 1);
  CHECK(e1.kl[0] == 0.0);
  CHECK(e1.total_value == e1.cross_entropy);

  const auto narrow = dist::sample_continuous(Tensor<double>({3}, {0.5, 0.25, 0.9}), 4, rng);
  const Tensor<double> logits({3, 2}, {0.3, -0.2, 1.0, 0.4, -0.5, 0.1});
  for (double lambda : {0.0, 0.01, 0.5, 1.0}) {
    const auto e = elbo_loss(logits, {1, 0, 1}, {narrow, at_prior}, lambda);
    CHECK(std::abs(e.total_value - (e.cross_entropy + lambda * (e.kl[0] + e.kl[1]))) <= 1e-6);
    if (lambda == 0.0) CHECK(e.total_value == e.cross_entropy);
    CHECK(elbo_loss(logits, {1, 0, 1}, {narrow}, lambda, false).total_value == e.cross_entropy);
  }
  CHECK_THROWS_AS(elbo_loss(logits, {1, 2, 0}, {}, 0.1), std::invalid_argument);
  CHECK_THROWS_AS(elbo_loss(logits, {1, 0, 0}, {}, 1.5), std::invalid_argument);
  CHECK_THROWS_AS(elbo_loss(logits, {1, 0, 0}, {}, -0.1), std::invalid_argument);
}

TEST_CASE("optimizer steps") {
  SUBCASE("plain gradient descent on x^2") {
    Tensor<double> x({1}, {1.0}, true);
    ad::ParamList<double> params{{"x", &x}};
    Optimizer<double> opt({OptimizerKind::Sgd, 0.1});
    opt.step(params, ad::backward(ad::sum_all(ad::mul(x, x))));
    CHECK(x[0] == doctest::Approx(0.8).epsilon(1e-15));
  }
  SUBCASE("learning rate zero leaves parameters bitwise unchanged") {
    for (auto kind : {OptimizerKind::Sgd, OptimizerKind::Adam, OptimizerKind::AdamW}) {
      Rng init(5);
      Network<float> net(three_layer_hue(), init);
      std::vector<std::vector<float>> before;
      for (auto& p : net.parameters()) before.push_back(p.tensor->values());
      Optimizer<float> mo({kind, 0.0, 0.01}), eo({kind, 0.0, 0.01});
      Rng rng(6);
      train_step(net, mo, eo, random_images<float>(4, 3, 8, 7), {0, 1, 2, 3}, 0.5, rng);
      size_t i = 0;
      for (auto& p : net.parameters()) CHECK(p.tensor->values() == before[i++]);
    }
  }
  SUBCASE("adam moves against the gradient sign by about lr") {
    Tensor<double> x({2}, {1.0, -1.0}, true);
    ad::ParamList<double> params{{"x", &x}};
    Optimizer<double> opt({OptimizerKind::Adam, 0.01});
    opt.step(params, ad::backward(ad::sum_all(ad::mul(x, x))));
    CHECK(x[0] == doctest::Approx(0.99).epsilon(1e-6));
    CHECK(x[1] == doctest::Approx(-0.99).epsilon(1e-6));
  }
  SUBCASE("decoupled decay shrinks a parameter with zero gradient") {
    Tensor<double> x({1}, {2.0}, true);
    Tensor<double> y({1}, {1.0}, true);
    ad::ParamList<double> params{{"x", &x}};
    Optimizer<double> opt({OptimizerKind::AdamW, 0.1, 0.5});
    opt.step(params, ad::backward(ad::sum_all(ad::mul(y, y))));
    CHECK(x[0] == doctest::Approx(2.0 * (1 - 0.1 * 0.5)).epsilon(1e-12));
  }
}

TEST_CASE("one small step with lambda zero lowers the cross-entropy") {
  auto cfg = three_layer_hue(PartialMode::Full);
  Rng init(11);
  Network<double> net(cfg, init);
  const auto x = random_images<double>(8, 3, 8, 12);
  const std::vector<int> y{0, 1, 2, 3, 3, 2, 1, 0};
  ForwardOptions measure;
  measure.training = true;
  const double before = elbo_loss(net.forward(x, measure).logits, y, {}, 0.0).cross_entropy;
  Optimizer<double> mo({OptimizerKind::Sgd, 1e-3}), eo({OptimizerKind::Sgd, 1e-3});
  Rng rng(1);
  train_step(net, mo, eo, x, y, 0.0, rng);
  const double after = elbo_loss(net.forward(x, measure).logits, y, {}, 0.0).cross_entropy;
  CHECK(after < before);
}

TEST_CASE("separable toy problem is fit in 200 steps") {
  ModelConfig cfg = three_layer_hue(PartialMode::VariationalPartial, 2);
  cfg.layers.resize(1);
  cfg.pool_after = {false};
  Rng init(2);
  Network<double> net(cfg, init);
  // Dark versus bright images.
  Rng data(3);
  std::vector<double> v;
  std::vector<int> y;
  for (int i = 0; i < 16; ++i) {
    const bool bright = i % 2;
    for (int k = 0; k < 3 * 36; ++k) v.push_back(bright ? data.uniform(0.6, 1.0) : data.uniform(0.0, 0.4));
    y.push_back(bright);
  }
  const Tensor<double> x({16, 3, 6, 6}, v);
  Optimizer<double> mo({OptimizerKind::Adam, 1e-2}), eo({OptimizerKind::Adam, 1e-2});
  Rng rng(4);
  StepResult last;
  for (int s = 0; s < 200; ++s) last = train_step(net, mo, eo, x, y, 0.01, rng);
  CHECK(last.correct == 16);
  Rng cal(5);
  net.recalibrate_norms({x}, cal);
  const auto z = net.forward(x, ForwardOptions{}).logits;
  int correct = 0;
  for (int i = 0; i < 16; ++i) correct += (z[2 * i + 1] > z[2 * i]) == (y[i] == 1);
  CHECK(correct == 16);
}

TEST_CASE("non-finite loss aborts the step without touching parameters") {
  Rng init(5);
  Network<double> net(three_layer_hue(PartialMode::Full), init);
  std::vector<std::vector<double>> before;
  for (auto& p : net.parameters()) before.push_back(p.tensor->values());
  auto x = random_images<double>(2, 3, 8, 1);
  std::vector<double> bad = x.values();
  bad[0] = std::nan("");
  Optimizer<double> mo, eo;
  Rng rng(1);
  CHECK_THROWS_AS(train_step(net, mo, eo, Tensor<double>(x.shape(), bad), {0, 1}, 0.0, rng), ad::NumericError);
  size_t i = 0;
  for (auto& p : net.parameters()) CHECK(p.tensor->values() == before[i++]);
}

TEST_CASE("recalibrated statistics match the batch statistics") {
  Rng init(8);
  Network<double> net(three_layer_hue(PartialMode::Full), init);
  const auto x = random_images<double>(16, 3, 8, 9);
  Rng rng(1);
  net.recalibrate_norms({x}, rng);
  ForwardOptions train;
  train.training = true;
  const auto batch_mode = net.forward(x, train).logits;
  // The exponential update above moved the averages; recalibrate again.
  net.recalibrate_norms({x}, rng);
  const auto eval = net.forward(x, ForwardOptions{}).logits;
  CHECK(max_abs_diff(batch_mode, eval) <= 2e-3);  // unbiased vs biased variance only
}

TEST_CASE("forcing the partial layer's mask") {
  Rng i1(21), i2(21);
  Network<float> vp(three_layer_hue(), i1);
  Network<float> full(three_layer_hue(), i2);
  const auto x = random_images<float>(4, 3, 8, 22);
  ForwardOptions ones;
  ones.forced_weights[1] = {1, 1, 1};
  ForwardOptions as_full;
  as_full.force_full = true;
  const auto a = vp.forward(x, ones).logits;
  CHECK(max_abs_diff(a, full.forward(x, as_full).logits) <= 1e-5);
  const auto shifted = group::act_on_rgb(group::HueElement::of(3, 1), x);
  CHECK(max_abs_diff(a, vp.forward(shifted, ones).logits) <= 1e-5);

  ForwardOptions single;
  single.forced_weights[1] = {1, 0, 0};
  double err = 0;
  for (int k = 1; k < 3; ++k) {
    const auto moved = group::act_on_rgb(group::HueElement::of(3, k), x);
    err = std::max(err, max_abs_diff(vp.forward(x, single).logits, vp.forward(moved, single).logits));
  }
  CHECK(err > 1e-3);

  ForwardOptions wrong;
  wrong.forced_weights[1] = {1, 0};
  CHECK_THROWS_AS(vp.forward(x, wrong), ad::ShapeError);
}

TEST_CASE("model config key-value round trip and validation") {
  for (const auto& cfg : {se2_recipe(8, 8, 3), hue_recipe(3, 30, 4, {2, 4}), three_layer_hue()}) {
    const auto kv = cfg.to_kv();
    CHECK(ModelConfig::from_kv(kv).to_kv() == kv);
  }
  auto kv = se2_recipe().to_kv();
  kv["model.colour"] = "red";
  CHECK_THROWS_WITH_AS(ModelConfig::from_kv(kv), doctest::Contains("model.colour"), std::invalid_argument);
  kv = se2_recipe().to_kv();
  kv.erase("layer.1.kernel_size");
  CHECK_THROWS_WITH_AS(ModelConfig::from_kv(kv), doctest::Contains("layer.1.kernel_size"), std::invalid_argument);
  kv = se2_recipe().to_kv();
  kv["model.dist"] = "beta";
  CHECK_THROWS_AS(ModelConfig::from_kv(kv), std::invalid_argument);

  auto bad = se2_recipe();
  bad.layers[1].in_channels = 5;
  CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
  bad = hue_recipe();
  bad.layers[2].elements = 4;
  CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
  CHECK(hue_recipe(3).effective_eta() == doctest::Approx(1.0 / 12));
  CHECK(hue_recipe(6).effective_eta() == doctest::Approx(1.0 / 24));
}

TEST_CASE("checkpoint round trip is bit exact") {
  Rng init(31);
  Network<float> net(three_layer_hue(), init);
  Optimizer<float> mo, eo;
  Rng rng(1);
  const auto x = random_images<float>(4, 3, 8, 32);
  for (int s = 0; s < 3; ++s) train_step(net, mo, eo, x, {0, 1, 2, 3}, 0.1, rng);
  const auto path = temp_path("model.vpgc");
  save_checkpoint(net, path);
  auto loaded = load_checkpoint<float>(path);
  CHECK(loaded.config().to_kv() == net.config().to_kv());
  ForwardOptions eval;
  CHECK(bit_equal(net.forward(x, eval).logits, loaded.forward(x, eval).logits));
  auto p1 = net.parameters(), p2 = loaded.parameters();
  REQUIRE(p1.size() == p2.size());
  for (size_t i = 0; i < p1.size(); ++i) CHECK(p1[i].tensor->values() == p2[i].tensor->values());

  // Saving the loaded model reproduces the file byte for byte.
  const auto again = temp_path("model2.vpgc");
  save_checkpoint(loaded, again);
  CHECK(file_bytes(path) == file_bytes(again));

  const auto cfg = load_checkpoint_config(path);
  CHECK(cfg.to_kv() == net.config().to_kv());
  Rng fresh(99);
  Network<float> rebuilt(cfg, fresh);
  CHECK(rebuilt.parameters().size() == p1.size());
}

TEST_CASE("damaged checkpoints are rejected") {
  Rng init(41);
  Network<double> net(three_layer_hue(), init);
  const auto path = temp_path("damaged.vpgc");
  save_checkpoint(net, path);
  const auto good = file_bytes(path);

  auto truncated = good;
  truncated.resize(good.size() / 2);
  put_file(path, truncated);
  CHECK_THROWS_WITH_AS(load_checkpoint<double>(path), doctest::Contains("truncated"), FormatError);

  auto flipped = good;
  flipped[good.size() / 2] ^= 0x40;
  put_file(path, flipped);
  CHECK_THROWS_AS(load_checkpoint<double>(path), FormatError);

  auto version = good;
  version[4] = 9;
  put_file(path, version);
  CHECK_THROWS_WITH_AS(load_checkpoint<double>(path), doctest::Contains("version"), FormatError);

  auto magic = good;
  magic[0] = 'X';
  put_file(path, magic);
  CHECK_THROWS_WITH_AS(load_checkpoint<double>(path), doctest::Contains("magic"), FormatError);

  // Precision mismatch between writer and reader.
  put_file(path, good);
  CHECK_THROWS_AS(load_checkpoint<float>(path), FormatError);
  CHECK_THROWS_AS(load_checkpoint<double>(temp_path("missing.vpgc")), FormatError);
}
