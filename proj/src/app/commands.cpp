#include "vpgc/app/commands.hpp"

#include <algorithm>
#include <fstream>
#include <map>
#include <ostream>
#include <sstream>

#include "vpgc/app/trainer.hpp"
#include "vpgc/net/checkpoint.hpp"

namespace vpgc::app {

namespace fs = std::filesystem;

namespace {

void write_file(const fs::path& path, const std::string& text) {
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot write " + tmp.string());
    out << text;
  }
  fs::rename(tmp, path);
}

std::string first_line(const std::string& csv) {
  std::istringstream in(csv);
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line[0] != '#') return line;
  }
  return {};
}

void write_csv_with_plot(const fs::path& dir, const std::string& stem, const std::string& csv, const std::string& title) {
  write_file(dir / (stem + ".csv"), csv);
  write_file(dir / (stem + ".gp"), diag::gnuplot_script(stem + ".csv", first_line(csv), title));
}

// Uniform handling of the error classes every command shares.
template <typename F>
int guarded(Streams io, const char* command, F&& body) {
  try {
    return body();
  } catch (const ConfigError& e) {
    io.err << command << ": " << e.what() << '\n';
  } catch (const data::ParseError& e) {
    io.err << command << ": " << e.what() << '\n';
  } catch (const net::FormatError& e) {
    io.err << command << ": " << e.what() << '\n';
  } catch (const fs::filesystem_error& e) {
    io.err << command << ": " << e.what() << '\n';
  } catch (const std::invalid_argument& e) {
    io.err << command << ": " << e.what() << '\n';
  } catch (const std::runtime_error& e) {
    io.err << command << ": " << e.what() << '\n';
  }
  return kUsageError;
}

struct Loaded {
  Model model;
  data::ImageDataset eval_set;
};

Loaded load_for_eval(const RunConfig& config, const fs::path& checkpoint) {
  if (!fs::exists(checkpoint)) throw net::FormatError("checkpoint " + checkpoint.string() + " does not exist");
  auto datasets = make_datasets(config.data, config.seed);
  auto eval_set = datasets.test.size() > 0 ? std::move(datasets.test) : std::move(datasets.train);
  const auto stored = net::load_checkpoint_config(checkpoint);
  const auto expected = config.model_config(eval_set.classes(), static_cast<int>(eval_set.channels));
  if (stored.group != expected.group) {
    throw ConfigError("config key 'model.recipe': checkpoint uses the " + group::to_string(stored.group) +
                      " group but the config describes " + group::to_string(expected.group));
  }
  if (stored.classes != eval_set.classes() || stored.image_channels != eval_set.channels) {
    throw ConfigError("config key 'data.kind': checkpoint expects " + std::to_string(stored.classes) + " classes and " +
                      std::to_string(stored.image_channels) + " channels, dataset has " +
                      std::to_string(eval_set.classes()) + " and " + std::to_string(eval_set.channels));
  }
  return {net::load_checkpoint<float>(checkpoint), std::move(eval_set)};
}

diag::EvalMode eval_mode(const RunConfig& config) {
  return {config.eval.deterministic, config.eval.samples, Rng::stream(config.seed, "eval").bits()};
}

}  // namespace

int cmd_synth(const RunConfig& config, Streams io) {
  return guarded(io, "synth", [&] {
    const auto d = make_datasets(config.data, config.seed);
    fs::create_directories(config.out);
    save_dataset(d.train, config.out / "train.vpgc");
    if (d.test.size() > 0) save_dataset(d.test, config.out / "test.vpgc");
    std::string prov = config.to_ini();
    prov += "\n[provenance]\ngenerator = " + d.train.provenance.generator + "\nparameters = " +
            d.train.provenance.parameters + "\nseed = " + std::to_string(d.train.provenance.seed) + "\n";
    write_file(config.out / "provenance.ini", prov);
    io.out << "synth: " << d.train.size() << " train and " << d.test.size() << " test images, "
           << d.train.classes() << " classes -> " << config.out.string() << '\n';
    return kOk;
  });
}

int cmd_train(const RunConfig& config, Streams io) {
  return guarded(io, "train", [&] {
    const auto d = make_datasets(config.data, config.seed);
    const auto outcome = train(config, d);
    if (outcome.aborted) {
      io.err << "train: non-finite loss, " << outcome.message << '\n';
      return static_cast<int>(kCheckFailed);
    }
    io.out << "train: " << outcome.history.size() << " epochs";
    if (!outcome.history.empty()) {
      const auto& last = outcome.history.back();
      io.out << ", final train accuracy " << diag::format_number(last.train_accuracy) << ", test accuracy "
             << diag::format_number(last.test_accuracy);
    }
    io.out << " -> " << outcome.checkpoint.string() << '\n';
    return static_cast<int>(kOk);
  });
}

int cmd_eval(const RunConfig& config, const fs::path& checkpoint, Streams io) {
  return guarded(io, "eval", [&] {
    auto [model, set] = load_for_eval(config, checkpoint);
    const auto probs = diag::probabilities(model, set, eval_mode(config));
    const auto report = diag::calibration(probs, set.labels);
    fs::create_directories(config.out);
    std::ostringstream cal;
    diag::write_calibration_csv(cal, report);
    write_file(config.out / "calibration.csv", cal.str());

    std::vector<int64_t> count(set.classes(), 0), correct(set.classes(), 0);
    for (size_t i = 0; i < probs.size(); ++i) {
      const int y = set.labels[i];
      ++count[y];
      correct[y] += std::max_element(probs[i].begin(), probs[i].end()) - probs[i].begin() == y;
    }
    std::ostringstream acc;
    acc << "class,count,correct,accuracy\n";
    for (int c = 0; c < set.classes(); ++c) {
      const double a = count[c] ? static_cast<double>(correct[c]) / static_cast<double>(count[c]) : 0.0;
      acc << set.class_names[c] << ',' << count[c] << ',' << correct[c] << ',' << diag::format_number(a) << '\n';
    }
    write_file(config.out / "accuracy.csv", acc.str());
    io.out << "eval: " << report.count << " images, accuracy " << diag::format_number(report.accuracy) << ", nll "
           << diag::format_number(report.nll) << ", brier " << diag::format_number(report.brier) << '\n';
    return static_cast<int>(kOk);
  });
}

int cmd_profile(const RunConfig& config, const fs::path& checkpoint, const ProfileRequest& request, Streams io) {
  return guarded(io, "profile", [&] {
    const auto kind = diag::parse_transform_kind(request.kind);
    if (request.inputs < 1) throw ConfigError("profile: --inputs must be positive");
    auto grid = request.grid.empty() ? diag::uniform_grid(kind, request.grid_points) : request.grid;
    std::sort(grid.begin(), grid.end());
    auto [model, set] = load_for_eval(config, checkpoint);
    if (kind == diag::TransformKind::Hue && set.channels != 3) {
      throw ConfigError("profile: hue transforms need RGB images");
    }
    const int64_t n = std::min<int64_t>(request.inputs, set.size());
    std::vector<int64_t> idx(static_cast<size_t>(n));
    for (int64_t i = 0; i < n; ++i) idx[static_cast<size_t>(i)] = i;
    const auto inputs = set.subset(idx);
    fs::create_directories(config.out);
    const auto mode = eval_mode(config);
    for (int64_t i = 0; i < n; ++i) {
      const auto p = diag::confidence_profile(model, inputs, i, kind, grid, mode);
      std::ostringstream csv;
      diag::write_profile_csv(csv, p);
      write_csv_with_plot(config.out, "profile_" + std::to_string(i), csv.str(),
                          "input " + std::to_string(i) + " (class " + set.class_names[inputs.labels[i]] + ")");
    }
    const auto report = diag::equivariance_error(model, inputs, kind, grid);
    std::ostringstream err;
    diag::write_equiv_error_csv(err, report);
    write_csv_with_plot(config.out, "equiv_error", err.str(), "equivariance error per input");
    std::ostringstream by_class;
    by_class << "class,min,max\n";
    for (const auto& [c, mm] : report.per_class) {
      by_class << c << ',' << diag::format_number(mm.first) << ',' << diag::format_number(mm.second) << '\n';
    }
    write_file(config.out / "equiv_error_by_class.csv", by_class.str());
    io.out << "profile: " << n << " inputs x " << grid.size() << " " << diag::to_string(kind) << " values -> "
           << config.out.string() << '\n';
    return static_cast<int>(kOk);
  });
}

int cmd_selfcheck(const CheckOptions& options, Streams io) {
  bool ok = true;
  for (const auto& r : selfcheck(options)) {
    io.out << (r.passed ? "PASS " : "FAIL ") << r.name << ": " << r.detail << '\n';
    ok = ok && r.passed;
  }
  io.out << (ok ? "selfcheck passed\n" : "selfcheck FAILED\n");
  return ok ? kOk : kCheckFailed;
}

}  // namespace vpgc::app
