#pragma once

#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <string>
#include <vector>

#include "vpgc/net/network.hpp"

namespace vpgc::net {

/// Raised for unreadable, truncated, corrupted or mismatched containers.
class FormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

enum class Dtype : uint8_t { F32 = 0, F64 = 1, U8 = 2, I32 = 3 };

size_t dtype_size(Dtype d);

struct Block {
  std::string name;
  Dtype dtype = Dtype::F32;
  ad::Shape shape;
  std::vector<uint8_t> bytes;  // little-endian values

  template <typename V>
  static Block of(std::string name, ad::Shape shape, const std::vector<V>& values);
  template <typename V>
  std::vector<V> as() const;
};

/// Versioned binary container: "VPGC", version, tag, key-sorted config text,
/// then named blocks; a CRC32 of everything before it closes the file.
struct Container {
  static constexpr uint32_t kVersion = 1;
  std::string tag;
  KeyValues config;
  std::vector<Block> blocks;

  const Block& block(const std::string& name) const;
  bool has(const std::string& name) const;
};

std::string canonical_text(const KeyValues& kv);
KeyValues parse_canonical_text(const std::string& text);

std::vector<uint8_t> encode_container(const Container& c);
Container decode_container(const std::vector<uint8_t>& bytes);
/// Writes through a temporary file and renames, so readers never see a partial file.
void write_container(const std::filesystem::path& path, const Container& c);
Container read_container(const std::filesystem::path& path);

template <typename T>
void save_checkpoint(Network<T>& net, const std::filesystem::path& path);
template <typename T>
Network<T> load_checkpoint(const std::filesystem::path& path);
/// Architecture only; the returned config builds a freshly initialized model.
ModelConfig load_checkpoint_config(const std::filesystem::path& path);

}  // namespace vpgc::net
