#pragma once

#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

#include "vpgc/app/checks.hpp"
#include "vpgc/app/run_config.hpp"

namespace vpgc::app {

enum ExitCode : int { kOk = 0, kCheckFailed = 1, kUsageError = 2 };

struct Streams {
  std::ostream& out;
  std::ostream& err;
};

/// Writes train.vpgc, test.vpgc (when a test split exists) and provenance.ini
/// into config.out. Sources are read completely before anything is written.
int cmd_synth(const RunConfig& config, Streams io);
/// See app::train for the files written.
int cmd_train(const RunConfig& config, Streams io);
/// Writes calibration.csv and accuracy.csv (class,count,correct,accuracy) for
/// the test split, or the train split when there is none.
int cmd_eval(const RunConfig& config, const std::filesystem::path& checkpoint, Streams io);

struct ProfileRequest {
  std::string kind = "rotation";
  /// Explicit grid in radians (rotation) or turns (hue); sorted before use.
  std::vector<double> grid;
  /// Evenly spaced points when `grid` is empty.
  int grid_points = 8;
  /// Leading images of the evaluation split to profile.
  int inputs = 4;
};

/// Writes profile_<i>.csv per input, equiv_error.csv, equiv_error_by_class.csv
/// (class,min,max) and a .gp script next to each CSV.
int cmd_profile(const RunConfig& config, const std::filesystem::path& checkpoint, const ProfileRequest& request,
                Streams io);

/// Runs app::selfcheck and prints one PASS/FAIL line per check.
int cmd_selfcheck(const CheckOptions& options, Streams io);

}  // namespace vpgc::app
