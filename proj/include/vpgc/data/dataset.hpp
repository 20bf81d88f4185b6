#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "vpgc/tensor/rng.hpp"
#include "vpgc/tensor/tensor.hpp"

namespace vpgc::data {

/// Malformed IDX or CIFAR bytes; the message carries the byte offset.
class ParseError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct Provenance {
  std::string generator;
  uint64_t seed = 0;
  std::vector<std::string> sources;
  std::string version = "1";
  std::string parameters;  // free-form "key=value;..." record of generator settings
};

/// Images (count, channels, height, width) with values in [0, 1].
struct ImageDataset {
  int64_t channels = 1, height = 0, width = 0;
  std::vector<float> pixels;
  std::vector<int> labels;
  std::vector<std::string> class_names;
  Provenance provenance;

  int64_t size() const { return static_cast<int64_t>(labels.size()); }
  int64_t image_size() const { return channels * height * width; }
  int classes() const { return static_cast<int>(class_names.size()); }
  std::span<const float> image(int64_t i) const;
  /// Throws std::invalid_argument when sizes, labels or values are inconsistent.
  void validate() const;
  void append(std::span<const float> image, int label);

  template <typename T>
  ad::Tensor<T> batch(std::span<const int64_t> indices) const;
  std::vector<int> batch_labels(std::span<const int64_t> indices) const;
  ImageDataset subset(std::span<const int64_t> indices) const;
};

struct IdxArray {
  std::vector<uint32_t> dims;
  std::vector<uint8_t> values;
};

/// Decodes an unsigned-byte IDX file (magic 0x00000801 or 0x00000803).
IdxArray parse_idx(std::span<const uint8_t> bytes);
std::vector<uint8_t> encode_idx(const IdxArray& array);
/// Raw bytes of a file, inflated when it starts with the gzip magic.
std::vector<uint8_t> read_bytes(const std::filesystem::path& path);
/// Writes bytes, gzip-compressed when the path ends in ".gz".
void write_bytes(const std::filesystem::path& path, std::span<const uint8_t> bytes);

/// Digits with class names "0".."9" from an image and a label IDX file.
ImageDataset load_mnist(const std::filesystem::path& images, const std::filesystem::path& labels);
/// CIFAR-10 binary batch files (label byte + 3072 pixel bytes per record).
ImageDataset load_cifar10(const std::vector<std::filesystem::path>& batches);

/// Keeps 6s and 7s (at most `max_per_digit` each, -1 for all) and appends
/// the half-turn copy of every kept image: classes "6", "7", "9".
ImageDataset make_mnist67_180(const ImageDataset& src, uint64_t seed, int max_per_digit = -1);

struct ColorMnistOptions {
  int colors = 3;
  int classes = 30;
  double exponent = 1.5;
  int head = 500;
  double threshold = 0.1;
};

/// Class = digit * colors + color; strokes tinted pure R/G/B, background gray,
/// class sizes following head * (i + 1)^-exponent.
ImageDataset make_longtailed_colormnist(const ImageDataset& src, uint64_t seed, const ColorMnistOptions& options = {});
/// head * (i + 1)^-exponent rounded half to even, at least 1.
std::vector<int> power_law_counts(int classes, int head, double exponent);

/// Rotation of the RGB values about the gray axis by 2 pi fraction,
/// clamped to [0, 1]. `image` is (3, h, w).
std::vector<float> hue_shift_image(std::span<const float> image, int64_t height, int64_t width, double fraction);
/// Bilinear rotation of a (c, h, w) image about its center, zero outside.
std::vector<float> rotate_image(std::span<const float> image, int64_t channels, int64_t height, int64_t width,
                                double angle);

/// Deterministic stroke-glyph digits (28 x 28) used where MNIST is unavailable.
ImageDataset render_digits(int per_digit, uint64_t seed, int size = 28);

}  // namespace vpgc::data
