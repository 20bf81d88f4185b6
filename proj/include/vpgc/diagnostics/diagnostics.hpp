#pragma once

#include <functional>
#include <iosfwd>
#include <map>
#include <string>
#include <vector>

#include "vpgc/data/dataset.hpp"
#include "vpgc/net/network.hpp"

namespace vpgc::diag {

using net::Network;

/// Test-time protocol: deterministic (noise-free) forward, or the mean of
/// softmax outputs over `samples` stochastic forwards seeded by `seed`.
struct EvalMode {
  bool deterministic = true;
  int samples = 8;
  uint64_t seed = 0;
};

/// Row-major (batch, classes) logits of a frozen model, processed in chunks.
template <typename T>
std::vector<double> logits(Network<T>& net, const data::ImageDataset& images, int chunk = 128);
/// Softmax probabilities, one row per image, under `mode`.
template <typename T>
std::vector<std::vector<double>> probabilities(Network<T>& net, const data::ImageDataset& images, const EvalMode& mode,
                                               int chunk = 128);

enum class TransformKind { Rotation, Hue };

std::string to_string(TransformKind kind);
/// Throws std::invalid_argument listing the valid kinds.
TransformKind parse_transform_kind(const std::string& name);
/// Rotation angle in radians or hue fraction applied to a (c, h, w) image.
std::vector<float> transform_image(std::span<const float> image, int64_t channels, int64_t height, int64_t width,
                                   TransformKind kind, double value);
/// `n` evenly spaced values: angles in [0, 2 pi) or fractions in [0, 1).
std::vector<double> uniform_grid(TransformKind kind, int n);

struct ConfidenceProfile {
  TransformKind kind = TransformKind::Rotation;
  std::vector<double> grid;
  std::vector<std::vector<double>> probabilities;
  std::vector<int> argmax;
};

/// Softmax of the transformed image at each grid point (grid sorted first).
template <typename T>
ConfidenceProfile confidence_profile(Network<T>& net, const data::ImageDataset& images, int64_t index,
                                     TransformKind kind, std::vector<double> grid, const EvalMode& mode = {});

struct EquivarianceErrorReport {
  TransformKind kind = TransformKind::Rotation;
  std::vector<double> grid;
  std::vector<double> errors;  // per input
  std::vector<int> labels;
  /// class -> (min, max) over that class's inputs.
  std::map<int, std::pair<double, double>> per_class;
};

/// Maps a batch of images to one output vector per image.
using BatchModel = std::function<std::vector<std::vector<double>>(const data::ImageDataset&)>;
/// The group action on one output vector; identity for invariant heads.
using OutputAction = std::function<std::vector<double>(const std::vector<double>&, double)>;

/// Per input, max over the grid of the L2 norm of psi(g x) - rho(g) psi(x).
EquivarianceErrorReport equivariance_error(const BatchModel& psi, const data::ImageDataset& inputs, TransformKind kind,
                                           std::vector<double> grid, const OutputAction& rho = {});
/// Same with psi = deterministic logits of `net` (invariant head).
template <typename T>
EquivarianceErrorReport equivariance_error(Network<T>& net, const data::ImageDataset& inputs, TransformKind kind,
                                           std::vector<double> grid);

struct CalibrationReport {
  double nll = 0;
  double brier = 0;
  double accuracy = 0;
  int64_t count = 0;
  /// Inputs whose true-class probability was below the 1e-12 floor.
  int64_t floored = 0;
};

/// Throws std::invalid_argument for rows that are not probability vectors.
CalibrationReport calibration(const std::vector<std::vector<double>>& probabilities, const std::vector<int>& labels);

/// Selection share of each group element per epoch for one partial layer.
struct StabilityTrace {
  int layer = 0;
  int elements = 0;
  std::vector<int> epochs;
  std::vector<std::vector<double>> frequency;  // [epoch][element]

  void record(int epoch, std::vector<double> shares);
  /// Per-element variance over the last ceil(fraction * epochs) epochs.
  std::vector<double> trailing_variance_per_element(double fraction = 0.2) const;
  /// Mean of the per-element trailing variances.
  double trailing_variance(double fraction = 0.2) const;
};

/// Draws the layer's distribution `draws` times on the probes and returns,
/// per element, the mean over draws and probes of mask_j / sum(mask). Only
/// discrete kinds have a mask.
template <typename T>
std::vector<double> selection_frequency(Network<T>& net, int layer, const data::ImageDataset& probes, int draws,
                                        Rng& rng);

/// Single-layer bound for a weighted hue group convolution. The measured error
/// is the L2 norm of conv_{q'}(L_g f) - L_g conv_q(f); the bound is the
/// Cauchy-Schwarz bound sqrt(sum_u |q'(u) - q(g^-1 u)|^2 * mean_v ||k(v^-1 g^-1 u) f(v)||^2).
struct EquivarianceBound {
  double error = 0;
  double bound = 0;
};

template <typename T>
EquivarianceBound hue_conv_bound(const conv::ConvKernel<T>& kernel, const group::FeatureMap<T>& f, int g,
                                 const std::vector<double>& q, const std::vector<double>& q_shifted);

// CSV files with fixed headers. Values are written in shortest round-trip form.
void write_profile_csv(std::ostream& out, const ConfidenceProfile& p);
ConfidenceProfile read_profile_csv(std::istream& in, TransformKind kind);
void write_equiv_error_csv(std::ostream& out, const EquivarianceErrorReport& r);
EquivarianceErrorReport read_equiv_error_csv(std::istream& in);
void write_calibration_csv(std::ostream& out, const CalibrationReport& r);
CalibrationReport read_calibration_csv(std::istream& in);
void write_stability_csv(std::ostream& out, const StabilityTrace& t);
StabilityTrace read_stability_csv(std::istream& in);

/// Gnuplot script plotting one of the CSVs above, chosen by its header.
std::string gnuplot_script(const std::string& csv_name, const std::string& header, const std::string& title);

std::string format_number(double v);

}  // namespace vpgc::diag
