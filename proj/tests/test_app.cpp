#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <fstream>
#include <limits>
#include <sstream>

#include "vpgc/app/checks.hpp"
#include "vpgc/app/commands.hpp"
#include "vpgc/app/trainer.hpp"
#include "vpgc/net/checkpoint.hpp"

using namespace vpgc;
using namespace vpgc::app;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
  const auto p = fs::temp_directory_path() / ("vpgc_test_app_" + name);
  fs::remove_all(p);
  return p;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  REQUIRE(in);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

// Small rotation run: 3 classes of 6s, 7s and rotated 6s.
std::string tiny_se2(const fs::path& out, int epochs, int per_digit = 12) {
  return "[run]\nseed = 3\nout = " + out.string() +
         "\n[data]\nkind = mnist67-180\nglyphs_train_per_digit = " + std::to_string(per_digit) +
         "\nglyphs_test_per_digit = 4\n"
         "[model]\nrecipe = se2\nelements = 4\nchannels = 4\ndist = continuous\npartial = 2\n"
         "[train]\nepochs = " +
         std::to_string(epochs) + "\nbatch_size = 16\nrecalibrate_batches = 2\n";
}

std::string tiny_hue(const fs::path& out, int epochs) {
  return "[run]\nseed = 5\nout = " + out.string() +
         "\n[data]\nkind = colormnist\nglyphs_train_per_digit = 10\nglyphs_test_per_digit = 4\n"
         "colors = 3\nclasses = 6\nhead = 6\ntest_head = 3\n"
         "[model]\nrecipe = hue\nelements = 3\nchannels = 2\ndist = discrete\npartial = 4\n"
         "[train]\nepochs = " +
         std::to_string(epochs) + "\nbatch_size = 8\nrecalibrate_batches = 1\nstability_layer = 4\nstability_probes = 4\n"
         "stability_draws = 2\n";
}

struct Captured {
  std::ostringstream out, err;
  Streams io() { return {out, err}; }
};

std::string parse_error(const std::string& ini) {
  try {
    RunConfig::parse(ini);
  } catch (const ConfigError& e) {
    return e.what();
  }
  return "";
}

}  // namespace

TEST_CASE("example configs parse and round-trip") {
  for (const char* name : {"mnist67_180.ini", "colormnist.ini"}) {
    CAPTURE(name);
    const auto c = RunConfig::load(fs::path(VPGC_SOURCE_DIR) / "configs" / name);
    const auto again = RunConfig::parse(c.to_ini());
    CHECK(again.to_ini() == c.to_ini());
    CHECK(again.to_kv() == c.to_kv());
  }
  const auto c = RunConfig::load(fs::path(VPGC_SOURCE_DIR) / "configs" / "colormnist.ini");
  CHECK(c.model.recipe == "hue");
  CHECK(c.train.stability_layer == 4);
  CHECK(c.train.encoder_optimizer.lr == 1e-4);
  const auto m = c.model_config(30, 3);
  CHECK(m.layers[4].partial == conv::PartialMode::VariationalPartial);
  CHECK(m.dist == net::DistKind::Discrete);
}

TEST_CASE("malformed configs name the offending key") {
  const std::string base = "[data]\nkind = colormnist\n[model]\nrecipe = hue\ndist = discrete\npartial = 4\n";
  const std::vector<std::pair<std::string, std::string>> cases = {
      {base + "colour = 3\n", "model.colour"},
      {"[model]\nrecipe = hue\n", "data.kind"},
      {base + "[train]\nepochs = ten\n", "train.epochs"},
      {base + "[train]\nlambda = 2\n", "train.lambda"},
      {base + "[train]\nbatch_size = 0\n", "train.batch_size"},
      {"[data]\nkind = mnist67-180\n[model]\nrecipe = se2\ndist = discrete\n", "model.dist"},
      {base + "[train]\ninclude_kl = maybe\n", "train.include_kl"},
      {base + "[train]\nmodel_optimizer = rmsprop\n", "train.model_optimizer"},
      {"[data]\nkind = colormnist\nsource = idx\n[model]\nrecipe = hue\ndist = discrete\n", "data.train_images"},
      {"seed = 1\n" + base, "seed"},
      {base + "eta = 1.5\n", "model.eta"},
      {base + "[run]\nseed = -1\n", "run.seed"},
      {"[data]\nkind = colormnist\n[model]\nrecipe = hue\ndist = discrete\npartial = 1,,2\n", "model.partial"},
      {"[data]\nkind = colormnist\n[model]\nrecipe = hue\ndist = discrete\npartial = 7\n", "model.partial"},
      {"[data]\nkind = fashion\n[model]\nrecipe = hue\n", "data.kind"},
  };
  for (const auto& [ini, key] : cases) {
    CAPTURE(ini);
    const auto msg = parse_error(ini);
    REQUIRE(!msg.empty());
    CHECK(msg.find(key) != std::string::npos);
  }
}

TEST_CASE("datasets from glyphs") {
  auto c = RunConfig::parse(tiny_se2("unused", 1));
  const auto rot = make_datasets(c.data, c.seed);
  CHECK(rot.train.classes() == 3);
  CHECK(rot.train.channels == 1);
  CHECK(rot.test.size() > 0);

  c = RunConfig::parse(tiny_hue("unused", 1));
  const auto hue = make_datasets(c.data, c.seed);
  CHECK(hue.train.classes() == 6);
  CHECK(hue.train.channels == 3);

  c.data.kind = "digits";
  const auto digits = make_datasets(c.data, c.seed);
  CHECK(digits.train.classes() == 10);
  CHECK(digits.train.size() == 100);
}

TEST_CASE("dataset containers round-trip and reject corruption") {
  const auto dir = scratch("container");
  fs::create_directories(dir);
  const auto c = RunConfig::parse(tiny_hue(dir, 1));
  const auto d = make_datasets(c.data, c.seed).train;
  save_dataset(d, dir / "d.vpgc");
  const auto back = load_dataset(dir / "d.vpgc");
  CHECK(back.pixels == d.pixels);
  CHECK(back.labels == d.labels);
  CHECK(back.class_names == d.class_names);
  CHECK(back.provenance.seed == d.provenance.seed);

  auto bytes = slurp(dir / "d.vpgc");
  bytes[bytes.size() / 2] ^= 0x5a;
  std::ofstream(dir / "bad.vpgc", std::ios::binary) << bytes;
  CHECK_THROWS(load_dataset(dir / "bad.vpgc"));
  std::ofstream(dir / "short.vpgc", std::ios::binary) << bytes.substr(0, 20);
  CHECK_THROWS(load_dataset(dir / "short.vpgc"));
}

TEST_CASE("zero epochs writes the initial checkpoint and an empty history") {
  const auto dir = scratch("zero");
  const auto c = RunConfig::parse(tiny_se2(dir, 0));
  const auto outcome = train(c, make_datasets(c.data, c.seed));
  CHECK(outcome.history.empty());
  CHECK(!outcome.aborted);
  CHECK(fs::exists(dir / "checkpoint.vpgc"));
  CHECK(fs::exists(dir / "best.vpgc"));
  CHECK(slurp(dir / "metrics.csv") == "epoch,cross_entropy,kl_2,total,train_accuracy,test_accuracy\n");
  CHECK(net::load_checkpoint<float>(dir / "checkpoint.vpgc").config().group == group::GroupKind::Rotation);
}

TEST_CASE("a non-finite loss aborts and keeps the last good checkpoint") {
  const auto dir = scratch("nan");
  const auto c = RunConfig::parse(tiny_se2(dir, 3));
  const auto data = make_datasets(c.data, c.seed);
  std::string after_epoch_one;
  const auto outcome = train(c, data, [&](Model& model, int epoch, int step) {
    if (epoch == 2 && step == 0) {
      after_epoch_one = slurp(dir / "checkpoint.vpgc");
      auto params = model.parameters();
      *params[0].tensor = ad::Tensor<float>::full(params[0].tensor->shape(), std::numeric_limits<float>::quiet_NaN())
                              .as_leaf(true);
    }
  });
  CHECK(outcome.aborted);
  CHECK(outcome.message.find("epoch 2") != std::string::npos);
  CHECK(outcome.history.size() == 1);
  CHECK(slurp(dir / "checkpoint.vpgc") == after_epoch_one);
  const auto metrics = slurp(dir / "metrics.csv");
  CHECK(std::count(metrics.begin(), metrics.end(), '\n') == 2);
}

TEST_CASE("synth is deterministic and writes nothing on bad input") {
  const auto a = scratch("synth_a"), b = scratch("synth_b");
  Captured cap;
  REQUIRE(cmd_synth(RunConfig::parse(tiny_hue(a, 1)), cap.io()) == kOk);
  REQUIRE(cmd_synth(RunConfig::parse(tiny_hue(b, 1)), cap.io()) == kOk);
  CHECK(slurp(a / "train.vpgc") == slurp(b / "train.vpgc"));
  CHECK(slurp(a / "test.vpgc") == slurp(b / "test.vpgc"));
  CHECK(fs::exists(a / "provenance.ini"));

  // Containers written by synth feed training through source = file.
  auto c = RunConfig::parse(tiny_hue(scratch("from_file"), 1));
  c.data.source = "file";
  c.data.train_images = a / "train.vpgc";
  c.data.test_images = a / "test.vpgc";
  const auto d = make_datasets(c.data, c.seed);
  CHECK(d.train.pixels == load_dataset(a / "train.vpgc").pixels);

  const auto bad = scratch("synth_bad");
  auto idx = RunConfig::parse(tiny_se2(bad, 1));
  idx.data.source = "idx";
  idx.data.train_images = bad.parent_path() / "missing-images.idx";
  idx.data.train_labels = bad.parent_path() / "missing-labels.idx";
  Captured err;
  CHECK(cmd_synth(idx, err.io()) == kUsageError);
  CHECK(!err.err.str().empty());
  CHECK(!fs::exists(bad));
}

TEST_CASE("train, eval and profile on a tiny hue model") {
  const auto dir = scratch("hue_run");
  auto c = RunConfig::parse(tiny_hue(dir, 2));
  Captured cap;
  REQUIRE(cmd_train(c, cap.io()) == kOk);
  for (const char* f : {"metrics.csv", "stability.csv", "config.ini", "train.log", "checkpoint.vpgc", "best.vpgc"}) {
    CHECK(fs::exists(dir / f));
  }
  const auto trace = [&] {
    std::ifstream in(dir / "stability.csv");
    return diag::read_stability_csv(in);
  }();
  CHECK(trace.epochs == std::vector<int>{1, 2});
  CHECK(trace.layer == 4);

  auto e = c;
  e.out = dir / "eval1";
  REQUIRE(cmd_eval(e, dir / "checkpoint.vpgc", cap.io()) == kOk);
  e.out = dir / "eval2";
  REQUIRE(cmd_eval(e, dir / "checkpoint.vpgc", cap.io()) == kOk);
  CHECK(slurp(dir / "eval1" / "calibration.csv") == slurp(dir / "eval2" / "calibration.csv"));
  const auto acc = slurp(dir / "eval1" / "accuracy.csv");
  CHECK(acc.rfind("class,count,correct,accuracy\n", 0) == 0);
  CHECK(std::count(acc.begin(), acc.end(), '\n') == 7);

  e.eval.deterministic = false;
  e.eval.samples = 3;
  e.out = dir / "eval3";
  REQUIRE(cmd_eval(e, dir / "checkpoint.vpgc", cap.io()) == kOk);
  e.out = dir / "eval4";
  REQUIRE(cmd_eval(e, dir / "checkpoint.vpgc", cap.io()) == kOk);
  CHECK(slurp(dir / "eval3" / "calibration.csv") == slurp(dir / "eval4" / "calibration.csv"));

  auto p = c;
  p.out = dir / "profile";
  ProfileRequest req;
  req.kind = "hue";
  req.grid = {0.5, 0.0, 0.25};
  req.inputs = 2;
  REQUIRE(cmd_profile(p, dir / "checkpoint.vpgc", req, cap.io()) == kOk);
  std::ifstream prof(dir / "profile" / "profile_0.csv");
  const auto profile = diag::read_profile_csv(prof, diag::TransformKind::Hue);
  CHECK(profile.grid == std::vector<double>{0.0, 0.25, 0.5});
  CHECK(fs::exists(dir / "profile" / "profile_1.gp"));
  CHECK(fs::exists(dir / "profile" / "equiv_error.gp"));
  CHECK(slurp(dir / "profile" / "equiv_error_by_class.csv").rfind("class,min,max\n", 0) == 0);

  Captured bad;
  req.kind = "zoom";
  CHECK(cmd_profile(p, dir / "checkpoint.vpgc", req, bad.io()) == kUsageError);
  CHECK(bad.err.str().find("rotation") != std::string::npos);

  // A hue checkpoint against a rotation config.
  Captured mismatch;
  auto rot = RunConfig::parse(tiny_se2(dir / "mismatch", 1));
  CHECK(cmd_eval(rot, dir / "checkpoint.vpgc", mismatch.io()) == kUsageError);
  CHECK(mismatch.err.str().find("group") != std::string::npos);
  CHECK(cmd_eval(c, dir / "no-such.vpgc", mismatch.io()) == kUsageError);
}

TEST_CASE("selfcheck output is stable and faults fail it") {
  Captured a, b, f;
  CHECK(cmd_selfcheck({}, a.io()) == kOk);
  CHECK(cmd_selfcheck({}, b.io()) == kOk);
  CHECK(a.out.str() == b.out.str());
  CHECK(a.out.str().find("selfcheck passed") != std::string::npos);
  CHECK(cmd_selfcheck(CheckOptions{{"kl_continuous"}}, f.io()) == kCheckFailed);
  CHECK(f.out.str().find("FAIL kl_continuous") != std::string::npos);
}

TEST_CASE("a small rotation model fits its training set") {
  const auto dir = scratch("fit");
  auto c = RunConfig::parse(tiny_se2(dir, 30, 60));
  c.model.elements = 8;
  c.model.channels = 8;
  c.train.evaluate_each_epoch = false;
  c.train.model_optimizer.lr = 3e-3;
  const auto data = make_datasets(c.data, c.seed);
  const auto outcome = train(c, data);
  REQUIRE(!outcome.aborted);
  // Final accuracy on the training split under the deterministic eval protocol.
  auto model = net::load_checkpoint<float>(outcome.checkpoint);
  const double acc = accuracy(diag::probabilities(model, data.train, diag::EvalMode{}), data.train.labels);
  MESSAGE("train accuracy " << acc);
  CHECK(acc >= 0.95);
}
