#include "vpgc/net/checkpoint.hpp"

#include <zlib.h>

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>

static_assert(std::endian::native == std::endian::little, "container encoding assumes a little-endian host");

namespace vpgc::net {

namespace {

template <typename V>
constexpr Dtype dtype_of() {
  if constexpr (std::is_same_v<V, float>) return Dtype::F32;
  else if constexpr (std::is_same_v<V, double>) return Dtype::F64;
  else if constexpr (std::is_same_v<V, uint8_t>) return Dtype::U8;
  else {
    static_assert(std::is_same_v<V, int32_t>);
    return Dtype::I32;
  }
}

class Writer {
 public:
  template <typename V>
  void pod(V v) {
    const auto* p = reinterpret_cast<const uint8_t*>(&v);
    out_.insert(out_.end(), p, p + sizeof(V));
  }
  void str32(const std::string& s) {
    pod(static_cast<uint32_t>(s.size()));
    out_.insert(out_.end(), s.begin(), s.end());
  }
  void raw(const std::vector<uint8_t>& b) { out_.insert(out_.end(), b.begin(), b.end()); }
  std::vector<uint8_t>& bytes() { return out_; }

 private:
  std::vector<uint8_t> out_;
};

class Reader {
 public:
  Reader(const std::vector<uint8_t>& in, size_t end) : in_(in), end_(end) {}

  template <typename V>
  V pod(const char* field) {
    need(sizeof(V), field);
    V v;
    std::memcpy(&v, in_.data() + pos_, sizeof(V));
    pos_ += sizeof(V);
    return v;
  }
  std::string str(size_t n, const char* field) {
    need(n, field);
    std::string s(reinterpret_cast<const char*>(in_.data() + pos_), n);
    pos_ += n;
    return s;
  }
  std::vector<uint8_t> raw(size_t n, const char* field) {
    need(n, field);
    std::vector<uint8_t> b(in_.begin() + static_cast<std::ptrdiff_t>(pos_), in_.begin() + static_cast<std::ptrdiff_t>(pos_ + n));
    pos_ += n;
    return b;
  }
  size_t pos() const { return pos_; }

 private:
  void need(size_t n, const char* field) const {
    if (n > end_ - pos_) {
      throw FormatError("container: truncated while reading " + std::string(field) + " at byte " + std::to_string(pos_));
    }
  }
  const std::vector<uint8_t>& in_;
  size_t end_;
  size_t pos_ = 0;
};

uint32_t crc_of(const uint8_t* data, size_t n) {
  uLong crc = crc32(0L, Z_NULL, 0);
  // zlib takes uInt lengths; feed in chunks.
  while (n > 0) {
    const uInt chunk = static_cast<uInt>(std::min<size_t>(n, 1u << 30));
    crc = crc32(crc, data, chunk);
    data += chunk;
    n -= chunk;
  }
  return static_cast<uint32_t>(crc);
}

}  // namespace

size_t dtype_size(Dtype d) {
  switch (d) {
    case Dtype::F32: return 4;
    case Dtype::F64: return 8;
    case Dtype::U8: return 1;
    case Dtype::I32: return 4;
  }
  throw FormatError("container: unknown dtype tag " + std::to_string(static_cast<int>(d)));
}

template <typename V>
Block Block::of(std::string name, ad::Shape shape, const std::vector<V>& values) {
  if (ad::numel(shape) != static_cast<int64_t>(values.size())) {
    throw std::invalid_argument("block '" + name + "': shape " + ad::shape_str(shape) + " does not match " +
                                std::to_string(values.size()) + " values");
  }
  Block b{std::move(name), dtype_of<V>(), std::move(shape), {}};
  b.bytes.resize(values.size() * sizeof(V));
  if (!values.empty()) std::memcpy(b.bytes.data(), values.data(), b.bytes.size());
  return b;
}

template <typename V>
std::vector<V> Block::as() const {
  if (dtype != dtype_of<V>()) {
    throw FormatError("block '" + name + "': stored dtype " + std::to_string(static_cast<int>(dtype)) +
                      " does not match the requested type");
  }
  std::vector<V> out(bytes.size() / sizeof(V));
  if (!out.empty()) std::memcpy(out.data(), bytes.data(), bytes.size());
  return out;
}

template Block Block::of<float>(std::string, ad::Shape, const std::vector<float>&);
template Block Block::of<double>(std::string, ad::Shape, const std::vector<double>&);
template Block Block::of<uint8_t>(std::string, ad::Shape, const std::vector<uint8_t>&);
template Block Block::of<int32_t>(std::string, ad::Shape, const std::vector<int32_t>&);
template std::vector<float> Block::as<float>() const;
template std::vector<double> Block::as<double>() const;
template std::vector<uint8_t> Block::as<uint8_t>() const;
template std::vector<int32_t> Block::as<int32_t>() const;

const Block& Container::block(const std::string& name) const {
  for (const auto& b : blocks) {
    if (b.name == name) return b;
  }
  throw FormatError("container: missing block '" + name + "'");
}

bool Container::has(const std::string& name) const {
  for (const auto& b : blocks) {
    if (b.name == name) return true;
  }
  return false;
}

std::string canonical_text(const KeyValues& kv) {
  std::string out;
  for (const auto& [k, v] : kv) {
    if (k.find_first_of("=\n") != std::string::npos || v.find('\n') != std::string::npos) {
      throw std::invalid_argument("canonical_text: key '" + k + "' or its value contains a separator");
    }
    out += k + "=" + v + "\n";
  }
  return out;
}

KeyValues parse_canonical_text(const std::string& text) {
  KeyValues kv;
  size_t start = 0;
  while (start < text.size()) {
    const size_t end = text.find('\n', start);
    if (end == std::string::npos) throw FormatError("config text: unterminated line at offset " + std::to_string(start));
    const std::string line = text.substr(start, end - start);
    const size_t eq = line.find('=');
    if (eq == std::string::npos) throw FormatError("config text: line without '=' at offset " + std::to_string(start));
    kv[line.substr(0, eq)] = line.substr(eq + 1);
    start = end + 1;
  }
  return kv;
}

std::vector<uint8_t> encode_container(const Container& c) {
  Writer w;
  w.raw({'V', 'P', 'G', 'C'});
  w.pod(Container::kVersion);
  w.str32(c.tag);
  const auto text = canonical_text(c.config);
  w.pod(static_cast<uint64_t>(text.size()));
  w.raw(std::vector<uint8_t>(text.begin(), text.end()));
  w.pod(static_cast<uint32_t>(c.blocks.size()));
  for (const auto& b : c.blocks) {
    if (static_cast<int64_t>(b.bytes.size()) != ad::numel(b.shape) * static_cast<int64_t>(dtype_size(b.dtype))) {
      throw std::invalid_argument("container: block '" + b.name + "' byte size does not match its shape");
    }
    w.str32(b.name);
    w.pod(static_cast<uint8_t>(b.dtype));
    w.pod(static_cast<uint32_t>(b.shape.size()));
    for (auto d : b.shape) w.pod(static_cast<int64_t>(d));
    w.raw(b.bytes);
  }
  const uint32_t crc = crc_of(w.bytes().data(), w.bytes().size());
  w.pod(crc);
  return std::move(w.bytes());
}

Container decode_container(const std::vector<uint8_t>& bytes) {
  if (bytes.size() < 12) throw FormatError("container: truncated (" + std::to_string(bytes.size()) + " bytes)");
  if (std::memcmp(bytes.data(), "VPGC", 4) != 0) throw FormatError("container: bad magic at byte 0");
  Reader r(bytes, bytes.size() - 4);
  r.str(4, "magic");
  const auto version = r.pod<uint32_t>("version");
  if (version != Container::kVersion) {
    throw FormatError("container: version " + std::to_string(version) + " is not supported (expected " +
                      std::to_string(Container::kVersion) + ")");
  }
  Container c;
  c.tag = r.str(r.pod<uint32_t>("tag length"), "tag");
  const auto text_len = r.pod<uint64_t>("config length");
  c.config = parse_canonical_text(r.str(text_len, "config"));
  const auto count = r.pod<uint32_t>("block count");
  for (uint32_t i = 0; i < count; ++i) {
    Block b;
    b.name = r.str(r.pod<uint32_t>("block name length"), "block name");
    b.dtype = static_cast<Dtype>(r.pod<uint8_t>("dtype"));
    const auto size = dtype_size(b.dtype);
    const auto rank = r.pod<uint32_t>("rank");
    if (rank > 16) throw FormatError("container: block '" + b.name + "' has implausible rank " + std::to_string(rank));
    int64_t n = 1;
    for (uint32_t d = 0; d < rank; ++d) {
      const auto dim = r.pod<int64_t>("shape");
      if (dim < 0 || dim > (int64_t{1} << 40)) throw FormatError("container: block '" + b.name + "' has a bad dimension");
      b.shape.push_back(dim);
      n *= dim;
    }
    b.bytes = r.raw(static_cast<size_t>(n) * size, ("values of " + b.name).c_str());
    c.blocks.push_back(std::move(b));
  }
  if (r.pos() != bytes.size() - 4) throw FormatError("container: trailing bytes after block " + std::to_string(count));
  uint32_t stored;
  std::memcpy(&stored, bytes.data() + bytes.size() - 4, 4);
  if (stored != crc_of(bytes.data(), bytes.size() - 4)) throw FormatError("container: checksum mismatch");
  return c;
}

void write_container(const std::filesystem::path& path, const Container& c) {
  const auto bytes = encode_container(c);
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw FormatError("cannot open " + tmp.string() + " for writing");
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw FormatError("write failed for " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

Container read_container(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open " + path.string());
  std::vector<uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return decode_container(bytes);
}

template <typename T>
void save_checkpoint(Network<T>& net, const std::filesystem::path& path) {
  Container c;
  c.tag = "model";
  c.config = net.config().to_kv();
  for (auto& p : net.parameters()) c.blocks.push_back(Block::of(p.name, p.tensor->shape(), p.tensor->values()));
  for (auto& [name, buf] : net.buffers()) {
    c.blocks.push_back(Block::of(name, {static_cast<int64_t>(buf->size())}, *buf));
  }
  write_container(path, c);
}

template <typename T>
Network<T> load_checkpoint(const std::filesystem::path& path) {
  const auto c = read_container(path);
  if (c.tag != "model") throw FormatError("checkpoint: container tag is '" + c.tag + "', expected 'model'");
  Rng unused(0);
  Network<T> net(ModelConfig::from_kv(c.config), unused);
  size_t expected = 0;
  for (auto& p : net.parameters()) {
    const auto& b = c.block(p.name);
    if (b.shape != p.tensor->shape()) {
      throw FormatError("checkpoint: block '" + p.name + "' has shape " + ad::shape_str(b.shape) + ", model expects " +
                        ad::shape_str(p.tensor->shape()));
    }
    *p.tensor = Tensor<T>(b.shape, b.template as<T>(), true);
    ++expected;
  }
  for (auto& [name, buf] : net.buffers()) {
    auto v = c.block(name).template as<double>();
    if (v.size() != buf->size()) throw FormatError("checkpoint: buffer '" + name + "' has the wrong length");
    *buf = std::move(v);
    ++expected;
  }
  if (expected != c.blocks.size()) {
    throw FormatError("checkpoint: " + std::to_string(c.blocks.size() - expected) + " unexpected blocks");
  }
  return net;
}

ModelConfig load_checkpoint_config(const std::filesystem::path& path) {
  const auto c = read_container(path);
  if (c.tag != "model") throw FormatError("checkpoint: container tag is '" + c.tag + "', expected 'model'");
  return ModelConfig::from_kv(c.config);
}

template void save_checkpoint<float>(Network<float>&, const std::filesystem::path&);
template void save_checkpoint<double>(Network<double>&, const std::filesystem::path&);
template Network<float> load_checkpoint<float>(const std::filesystem::path&);
template Network<double> load_checkpoint<double>(const std::filesystem::path&);

}  // namespace vpgc::net
