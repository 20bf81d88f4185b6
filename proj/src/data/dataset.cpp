#include "vpgc/data/dataset.hpp"

#include <zlib.h>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>

#include "vpgc/tensor/ops.hpp"

namespace vpgc::data {

namespace {

std::string at(size_t offset) { return " at byte " + std::to_string(offset); }

uint32_t read_be32(std::span<const uint8_t> b, size_t offset) {
  if (offset + 4 > b.size()) throw ParseError("truncated header" + at(b.size()));
  return (uint32_t{b[offset]} << 24) | (uint32_t{b[offset + 1]} << 16) | (uint32_t{b[offset + 2]} << 8) |
         uint32_t{b[offset + 3]};
}

void put_be32(std::vector<uint8_t>& out, uint32_t v) {
  for (int shift = 24; shift >= 0; shift -= 8) out.push_back(static_cast<uint8_t>(v >> shift));
}

std::vector<uint8_t> gunzip(const std::vector<uint8_t>& compressed) {
  z_stream zs{};
  if (inflateInit2(&zs, 16 + MAX_WBITS) != Z_OK) throw ParseError("gzip: inflateInit failed");
  zs.next_in = const_cast<Bytef*>(compressed.data());
  zs.avail_in = static_cast<uInt>(compressed.size());
  std::vector<uint8_t> out;
  std::vector<uint8_t> chunk(1 << 16);
  int rc = Z_OK;
  while (rc != Z_STREAM_END) {
    zs.next_out = chunk.data();
    zs.avail_out = static_cast<uInt>(chunk.size());
    rc = inflate(&zs, Z_NO_FLUSH);
    if (rc != Z_OK && rc != Z_STREAM_END) {
      const auto consumed = zs.total_in;
      inflateEnd(&zs);
      throw ParseError("gzip: corrupt stream" + at(consumed));
    }
    out.insert(out.end(), chunk.data(), chunk.data() + (chunk.size() - zs.avail_out));
    if (rc != Z_STREAM_END && zs.avail_in == 0 && zs.avail_out != 0) {
      inflateEnd(&zs);
      throw ParseError("gzip: truncated stream" + at(compressed.size()));
    }
  }
  inflateEnd(&zs);
  return out;
}

std::vector<uint8_t> gzip(std::span<const uint8_t> raw) {
  z_stream zs{};
  if (deflateInit2(&zs, Z_DEFAULT_COMPRESSION, Z_DEFLATED, 16 + MAX_WBITS, 8, Z_DEFAULT_STRATEGY) != Z_OK) {
    throw std::runtime_error("gzip: deflateInit failed");
  }
  std::vector<uint8_t> out(deflateBound(&zs, raw.size()) + 32);
  zs.next_in = const_cast<Bytef*>(raw.data());
  zs.avail_in = static_cast<uInt>(raw.size());
  zs.next_out = out.data();
  zs.avail_out = static_cast<uInt>(out.size());
  const int rc = deflate(&zs, Z_FINISH);
  deflateEnd(&zs);
  if (rc != Z_STREAM_END) throw std::runtime_error("gzip: deflate failed");
  out.resize(zs.total_out);
  return out;
}

// Rodrigues rotation about the unit gray axis.
std::array<double, 9> gray_axis_rotation(double angle) {
  const double c = std::cos(angle), s = std::sin(angle), a = 1.0 / std::sqrt(3.0);
  const double t = (1 - c) * a * a;
  return {c + t, t - s * a, t + s * a,  //
          t + s * a, c + t, t - s * a,  //
          t - s * a, t + s * a, c + t};
}

}  // namespace

std::span<const float> ImageDataset::image(int64_t i) const {
  if (i < 0 || i >= size()) throw std::out_of_range("image index " + std::to_string(i));
  return {pixels.data() + i * image_size(), static_cast<size_t>(image_size())};
}

void ImageDataset::validate() const {
  if (channels <= 0 || height <= 0 || width <= 0) throw std::invalid_argument("dataset: empty image geometry");
  if (static_cast<int64_t>(pixels.size()) != size() * image_size()) {
    throw std::invalid_argument("dataset: " + std::to_string(pixels.size()) + " pixels for " +
                                std::to_string(size()) + " images");
  }
  for (int label : labels) {
    if (label < 0 || label >= classes()) throw std::invalid_argument("dataset: label out of range");
  }
  for (float v : pixels) {
    if (!(v >= 0.0f && v <= 1.0f)) throw std::invalid_argument("dataset: pixel outside [0, 1]");
  }
}

void ImageDataset::append(std::span<const float> img, int label) {
  if (static_cast<int64_t>(img.size()) != image_size()) throw std::invalid_argument("dataset: image size mismatch");
  pixels.insert(pixels.end(), img.begin(), img.end());
  labels.push_back(label);
}

template <typename T>
ad::Tensor<T> ImageDataset::batch(std::span<const int64_t> indices) const {
  std::vector<T> values;
  values.reserve(indices.size() * image_size());
  for (int64_t i : indices) {
    const auto img = image(i);
    values.insert(values.end(), img.begin(), img.end());
  }
  return ad::Tensor<T>({static_cast<int64_t>(indices.size()), channels, height, width}, std::move(values));
}

template ad::Tensor<float> ImageDataset::batch<float>(std::span<const int64_t>) const;
template ad::Tensor<double> ImageDataset::batch<double>(std::span<const int64_t>) const;

std::vector<int> ImageDataset::batch_labels(std::span<const int64_t> indices) const {
  std::vector<int> out;
  out.reserve(indices.size());
  for (int64_t i : indices) out.push_back(labels.at(i));
  return out;
}

ImageDataset ImageDataset::subset(std::span<const int64_t> indices) const {
  ImageDataset out{channels, height, width, {}, {}, class_names, provenance};
  for (int64_t i : indices) out.append(image(i), labels.at(i));
  return out;
}

IdxArray parse_idx(std::span<const uint8_t> bytes) {
  const uint32_t magic = read_be32(bytes, 0);
  if ((magic >> 16) != 0) throw ParseError("idx: bad magic" + at(0));
  const uint32_t type = (magic >> 8) & 0xff;
  if (type != 0x08) throw ParseError("idx: only unsigned-byte data is supported, got type " + std::to_string(type) + at(2));
  const uint32_t rank = magic & 0xff;
  if (rank == 0 || rank > 4) throw ParseError("idx: unsupported rank " + std::to_string(rank) + at(3));
  IdxArray out;
  uint64_t count = 1;
  for (uint32_t d = 0; d < rank; ++d) {
    out.dims.push_back(read_be32(bytes, 4 + 4 * d));
    count *= out.dims.back();
  }
  const size_t data_offset = 4 + 4 * rank;
  if (bytes.size() < data_offset + count) {
    throw ParseError("idx: truncated data, expected " + std::to_string(count) + " values" + at(bytes.size()));
  }
  if (bytes.size() > data_offset + count) throw ParseError("idx: trailing bytes" + at(data_offset + count));
  out.values.assign(bytes.begin() + data_offset, bytes.end());
  return out;
}

std::vector<uint8_t> encode_idx(const IdxArray& array) {
  std::vector<uint8_t> out;
  put_be32(out, 0x0800u | static_cast<uint32_t>(array.dims.size()));
  for (uint32_t d : array.dims) put_be32(out, d);
  out.insert(out.end(), array.values.begin(), array.values.end());
  return out;
}

std::vector<uint8_t> read_bytes(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  std::vector<uint8_t> raw((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  if (raw.size() >= 2 && raw[0] == 0x1f && raw[1] == 0x8b) return gunzip(raw);
  return raw;
}

void write_bytes(const std::filesystem::path& path, std::span<const uint8_t> bytes) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::vector<uint8_t> packed;
  if (path.extension() == ".gz") {
    packed = gzip(bytes);
    bytes = packed;
  }
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw std::runtime_error("cannot write " + path.string());
}

ImageDataset load_mnist(const std::filesystem::path& images, const std::filesystem::path& labels) {
  const auto img = parse_idx(read_bytes(images));
  const auto lab = parse_idx(read_bytes(labels));
  if (img.dims.size() != 3) throw ParseError("idx: image file must have rank 3" + at(3));
  if (lab.dims.size() != 1) throw ParseError("idx: label file must have rank 1" + at(3));
  if (img.dims[0] != lab.dims[0]) {
    throw ParseError("idx: " + std::to_string(img.dims[0]) + " images but " + std::to_string(lab.dims[0]) +
                     " labels" + at(4));
  }
  ImageDataset out;
  out.height = img.dims[1];
  out.width = img.dims[2];
  for (int d = 0; d < 10; ++d) out.class_names.push_back(std::to_string(d));
  out.pixels.resize(img.values.size());
  std::transform(img.values.begin(), img.values.end(), out.pixels.begin(), [](uint8_t v) { return v / 255.0f; });
  for (size_t i = 0; i < lab.values.size(); ++i) {
    if (lab.values[i] > 9) throw ParseError("idx: label " + std::to_string(lab.values[i]) + at(8 + i));
    out.labels.push_back(lab.values[i]);
  }
  out.provenance = {"mnist-idx", 0, {images.string(), labels.string()}, "1", ""};
  return out;
}

ImageDataset load_cifar10(const std::vector<std::filesystem::path>& batches) {
  constexpr size_t kRecord = 1 + 3 * 32 * 32;
  ImageDataset out;
  out.channels = 3;
  out.height = out.width = 32;
  out.class_names = {"airplane", "automobile", "bird", "cat", "deer", "dog", "frog", "horse", "ship", "truck"};
  out.provenance.generator = "cifar10-binary";
  for (const auto& path : batches) {
    const auto bytes = read_bytes(path);
    if (bytes.size() % kRecord != 0) {
      throw ParseError("cifar: " + path.string() + " is not a whole number of records" +
                       at(bytes.size() - bytes.size() % kRecord));
    }
    for (size_t r = 0; r < bytes.size(); r += kRecord) {
      if (bytes[r] > 9) throw ParseError("cifar: label " + std::to_string(bytes[r]) + at(r));
      out.labels.push_back(bytes[r]);
      for (size_t k = 1; k < kRecord; ++k) out.pixels.push_back(bytes[r + k] / 255.0f);
    }
    out.provenance.sources.push_back(path.string());
  }
  return out;
}

ImageDataset make_mnist67_180(const ImageDataset& src, uint64_t seed, int max_per_digit) {
  if (src.channels != 1) throw std::invalid_argument("mnist67-180: expects grayscale digits");
  ImageDataset out{1, src.height, src.width, {}, {}, {"6", "7", "9"}, {}};
  std::vector<int64_t> kept;
  int sixes = 0, sevens = 0;
  for (int64_t i = 0; i < src.size(); ++i) {
    const auto& name = src.class_names.at(src.labels[i]);
    if (name == "6" && (max_per_digit < 0 || sixes < max_per_digit)) {
      ++sixes;
      kept.push_back(i);
    } else if (name == "7" && (max_per_digit < 0 || sevens < max_per_digit)) {
      ++sevens;
      kept.push_back(i);
    }
  }
  if (sixes == 0 || sevens == 0) throw std::invalid_argument("mnist67-180: source has no 6s or no 7s");
  auto is_six = [&](int64_t i) { return src.class_names[src.labels[i]] == "6"; };
  for (int64_t i : kept) out.append(src.image(i), is_six(i) ? 0 : 1);
  for (int64_t i : kept) {
    auto turned = rotate_image(src.image(i), 1, src.height, src.width, std::numbers::pi);
    for (float& v : turned) v = std::clamp(v, 0.0f, 1.0f);  // interpolation rounding
    out.append(turned, is_six(i) ? 2 : 1);
  }
  out.provenance = {"mnist67-180", seed, {src.provenance.generator}, "1",
                    "max_per_digit=" + std::to_string(max_per_digit)};
  return out;
}

std::vector<int> power_law_counts(int classes, int head, double exponent) {
  std::vector<int> counts;
  for (int i = 0; i < classes; ++i) {
    const double n = std::nearbyint(head * std::pow(i + 1.0, -exponent));
    counts.push_back(std::max(1, static_cast<int>(n)));
  }
  return counts;
}

ImageDataset make_longtailed_colormnist(const ImageDataset& src, uint64_t seed, const ColorMnistOptions& o) {
  if (src.channels != 1) throw std::invalid_argument("colormnist: expects grayscale digits");
  if (o.colors < 1 || o.colors > 3) throw std::invalid_argument("colormnist: colors must be 1..3");
  if (o.classes < 1 || o.classes > 10 * o.colors) throw std::invalid_argument("colormnist: bad class count");

  // Digit pools, shuffled once and split into disjoint per-colour runs.
  std::vector<std::vector<int64_t>> pool(10);
  for (int64_t i = 0; i < src.size(); ++i) {
    const int digit = std::stoi(src.class_names.at(src.labels[i]));
    pool.at(digit).push_back(i);
  }
  Rng rng = Rng::stream(seed, "colormnist");
  for (auto& p : pool) {
    for (size_t i = p.size(); i > 1; --i) std::swap(p[i - 1], p[rng.below(i)]);
  }
  auto available = [&](int cls) {
    const auto& p = pool[cls / o.colors];
    return static_cast<int>(p.size()) / o.colors;
  };
  const int head = std::min(o.head, available(0));
  if (head < 1) throw std::invalid_argument("colormnist: no source images for the head class");
  const auto wanted = power_law_counts(o.classes, head, o.exponent);

  ImageDataset out;
  out.channels = 3;
  out.height = src.height;
  out.width = src.width;
  static const char* kColor[] = {"red", "green", "blue"};
  for (int c = 0; c < o.classes; ++c) out.class_names.push_back(std::to_string(c / o.colors) + "-" + kColor[c % o.colors]);
  const int64_t plane = src.height * src.width;
  std::vector<float> rgb(3 * plane);
  std::string sizes;
  for (int c = 0; c < o.classes; ++c) {
    const int digit = c / o.colors, color = c % o.colors;
    const int n = std::min(wanted[c], available(c));
    if (n < 1) throw std::invalid_argument("colormnist: no source images for class " + std::to_string(c));
    sizes += (c ? "," : "") + std::to_string(n);
    const auto& p = pool[digit];
    const size_t first = static_cast<size_t>(color) * (p.size() / o.colors);
    for (int k = 0; k < n; ++k) {
      const auto gray = src.image(p[first + k]);
      for (int64_t q = 0; q < plane; ++q) {
        const float v = gray[q];
        for (int ch = 0; ch < 3; ++ch) rgb[ch * plane + q] = v > o.threshold ? (ch == color ? v : 0.0f) : 0.5f;
      }
      out.append(rgb, c);
    }
  }
  out.provenance = {"longtailed-colormnist", seed, {src.provenance.generator}, "1",
                    "exponent=" + std::to_string(o.exponent) + ";head=" + std::to_string(head) + ";sizes=" + sizes};
  return out;
}

std::vector<float> hue_shift_image(std::span<const float> image, int64_t height, int64_t width, double fraction) {
  const int64_t plane = height * width;
  if (static_cast<int64_t>(image.size()) != 3 * plane) throw std::invalid_argument("hue_shift_image: need (3, h, w)");
  const auto m = gray_axis_rotation(2 * std::numbers::pi * fraction);
  std::vector<float> out(image.size());
  for (int64_t q = 0; q < plane; ++q) {
    const double r = image[q], g = image[plane + q], b = image[2 * plane + q];
    for (int ch = 0; ch < 3; ++ch) {
      const double v = m[3 * ch] * r + m[3 * ch + 1] * g + m[3 * ch + 2] * b;
      out[ch * plane + q] = static_cast<float>(std::clamp(v, 0.0, 1.0));
    }
  }
  return out;
}

std::vector<float> rotate_image(std::span<const float> image, int64_t channels, int64_t height, int64_t width,
                                double angle) {
  if (static_cast<int64_t>(image.size()) != channels * height * width) {
    throw std::invalid_argument("rotate_image: size mismatch");
  }
  ad::NoGradGuard no_grad;
  ad::Tensor<float> x({channels, height, width}, std::vector<float>(image.begin(), image.end()));
  return ad::bilinear_rotate(x, angle).values();
}

}  // namespace vpgc::data
