#include <CLI11.hpp>

#include <iostream>
#include <optional>

#include "vpgc/app/commands.hpp"

using namespace vpgc;
using namespace vpgc::app;

namespace {

struct Overrides {
  std::string config;
  std::optional<uint64_t> seed;
  std::optional<std::string> out;
  std::optional<double> lambda, eta;
  std::optional<int> epochs, eval_samples;
  bool deterministic_eval = false;
};

void add_run_flags(CLI::App* cmd, Overrides& o) {
  cmd->add_option("--config", o.config, "INI run configuration")->required()->check(CLI::ExistingFile);
  cmd->add_option("--seed", o.seed, "root seed (overrides run.seed)");
  cmd->add_option("--out", o.out, "output directory (overrides run.out)");
  cmd->add_option("--lambda", o.lambda, "KL weight (overrides train.lambda)");
  cmd->add_option("--eta", o.eta, "selection slack (overrides model.eta)");
  cmd->add_option("--epochs", o.epochs, "training epochs (overrides train.epochs)");
  cmd->add_flag("--deterministic-eval", o.deterministic_eval, "noise-free evaluation forward");
  cmd->add_option("--eval-samples", o.eval_samples, "average this many stochastic forwards at evaluation");
}

// Applies the flags and re-validates through the same parser as the file.
RunConfig resolve(const Overrides& o) {
  auto c = RunConfig::load(o.config);
  if (o.seed) c.seed = *o.seed;
  if (o.out) c.out = *o.out;
  if (o.lambda) c.train.lambda = *o.lambda;
  if (o.eta) c.model.eta = *o.eta;
  if (o.epochs) c.train.epochs = *o.epochs;
  if (o.eval_samples) {
    c.eval.samples = *o.eval_samples;
    c.eval.deterministic = false;
  }
  if (o.deterministic_eval) c.eval.deterministic = true;
  return RunConfig::parse(c.to_ini());
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Variational partial group convolutions: data, training and diagnostics"};
  app.require_subcommand(1);
  Overrides o;
  std::string checkpoint;
  ProfileRequest profile;
  std::vector<std::string> faults;
  int per_digit = 100;
  uint64_t digits_seed = 0;
  std::string digits_out = "digits.vpgc";

  auto* synth = app.add_subcommand("synth", "build the configured dataset and write containers");
  add_run_flags(synth, o);
  auto* train = app.add_subcommand("train", "train the configured model");
  add_run_flags(train, o);
  auto* eval = app.add_subcommand("eval", "calibration and accuracy of a checkpoint");
  add_run_flags(eval, o);
  eval->add_option("--checkpoint", checkpoint, "checkpoint file")->required();
  auto* prof = app.add_subcommand("profile", "confidence profiles and equivariance errors of a checkpoint");
  add_run_flags(prof, o);
  prof->add_option("--checkpoint", checkpoint, "checkpoint file")->required();
  prof->add_option("--kind", profile.kind, "rotation or hue");
  prof->add_option("--grid", profile.grid, "explicit transform values (radians or turns)")->delimiter(',');
  prof->add_option("--grid-points", profile.grid_points, "evenly spaced values when --grid is absent")
      ->check(CLI::PositiveNumber);
  prof->add_option("--inputs", profile.inputs, "number of evaluation images to profile")->check(CLI::PositiveNumber);
  auto* self = app.add_subcommand("selfcheck", "fast invariant suite");
  self->add_option("--inject-fault", faults, "break a computation on purpose")->group("");
  auto* render = app.add_subcommand("render-digits", "write synthetic stroke digits as a dataset container");
  render->add_option("--per-digit", per_digit, "images per digit")->check(CLI::PositiveNumber);
  render->add_option("--seed", digits_seed, "generator seed");
  render->add_option("--out", digits_out, "output file");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kUsageError;
  }

  Streams io{std::cout, std::cerr};
  if (self->parsed()) return cmd_selfcheck(CheckOptions{{faults.begin(), faults.end()}}, io);
  if (render->parsed()) {
    try {
      save_dataset(data::render_digits(per_digit, digits_seed), digits_out);
      io.out << "render-digits: " << 10 * per_digit << " images -> " << digits_out << '\n';
      return kOk;
    } catch (const std::exception& e) {
      io.err << "render-digits: " << e.what() << '\n';
      return kUsageError;
    }
  }

  RunConfig config;
  try {
    config = resolve(o);
  } catch (const ConfigError& e) {
    io.err << e.what() << '\n';
    return kUsageError;
  }
  if (synth->parsed()) return cmd_synth(config, io);
  if (train->parsed()) return cmd_train(config, io);
  if (eval->parsed()) return cmd_eval(config, checkpoint, io);
  return cmd_profile(config, checkpoint, profile, io);
}
