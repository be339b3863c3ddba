#include "mdseg/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>

#include <zlib.h>

namespace mdseg {

namespace {

class Writer {
 public:
  void u8(std::uint8_t v) { bytes_.push_back(v); }
  void u16(std::uint16_t v) {
    u8(static_cast<std::uint8_t>(v));
    u8(static_cast<std::uint8_t>(v >> 8));
  }
  void u32(std::uint32_t v) {
    for (int i = 0; i < 4; ++i) u8(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  void f32(float v) { u32(std::bit_cast<std::uint32_t>(v)); }
  void dim(int v, const char* what) {
    if (v < 0 || v > 0xFFFF) throw ConfigError(std::string("checkpoint: ") + what + " does not fit in u16");
    u16(static_cast<std::uint16_t>(v));
  }
  std::vector<std::uint8_t>& bytes() { return bytes_; }

 private:
  std::vector<std::uint8_t> bytes_;
};

class Reader {
 public:
  Reader(const std::vector<std::uint8_t>& bytes, std::size_t end) : bytes_(bytes), end_(end) {}
  std::uint8_t u8() {
    need(1);
    return bytes_[pos_++];
  }
  std::uint16_t u16() {
    need(2);
    const auto v = static_cast<std::uint16_t>(bytes_[pos_] | (bytes_[pos_ + 1] << 8));
    pos_ += 2;
    return v;
  }
  std::uint32_t u32() {
    need(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(bytes_[pos_ + i]) << (8 * i);
    pos_ += 4;
    return v;
  }
  float f32() { return std::bit_cast<float>(u32()); }
  std::size_t pos() const { return pos_; }

 private:
  void need(std::size_t n) const {
    if (pos_ + n > end_) throw FormatError("checkpoint truncated", pos_);
  }
  const std::vector<std::uint8_t>& bytes_;
  std::size_t end_;
  std::size_t pos_ = 0;
};

std::uint32_t crc32_of(const std::uint8_t* data, std::size_t n) {
  uLong crc = crc32(0L, Z_NULL, 0);
  crc = crc32(crc, data, static_cast<uInt>(n));
  return static_cast<std::uint32_t>(crc);
}

void write_spec(Writer& w, const LayerSpec& s) {
  w.u8(static_cast<std::uint8_t>(s.kind));
  w.dim(s.in_channels, "in_channels");
  w.dim(s.out_channels, "out_channels");
  w.dim(s.kernel_h, "kernel_h");
  w.dim(s.kernel_w, "kernel_w");
  w.dim(s.stride, "stride");
  w.dim(s.padding, "padding");
}

LayerSpec read_spec(Reader& r) {
  const std::size_t at = r.pos();
  const std::uint8_t kind = r.u8();
  if (kind > static_cast<std::uint8_t>(LayerKind::Relu)) throw FormatError("unknown layer kind", at);
  LayerSpec s;
  s.kind = static_cast<LayerKind>(kind);
  s.in_channels = r.u16();
  s.out_channels = r.u16();
  s.kernel_h = r.u16();
  s.kernel_w = r.u16();
  s.stride = r.u16();
  s.padding = r.u16();
  try {
    s.validate();
  } catch (const ConfigError& e) {
    throw FormatError(std::string("invalid layer table entry: ") + e.what(), at);
  }
  return s;
}

void write_stack(Writer& w, const Stack<float>& stack) {
  for (const auto& l : stack) {
    for (float v : l.weights.storage()) w.f32(v);
    for (float v : l.bias) w.f32(v);
  }
}

Stack<float> read_stack(Reader& r, const std::vector<LayerSpec>& specs) {
  Stack<float> stack;
  for (const auto& spec : specs) {
    Layer<float> l{spec, {}, {}};
    if (spec.has_weights()) {
      l.weights = Tensor<float>(spec.weight_shape());
      for (auto& v : l.weights.storage()) v = r.f32();
      l.bias.resize(static_cast<std::size_t>(spec.out_channels));
      for (auto& v : l.bias) v = r.f32();
    }
    stack.push_back(std::move(l));
  }
  return stack;
}

}  // namespace

std::vector<std::uint8_t> encode_checkpoint(const ModelParams& params) {
  validate_model(params);
  Writer w;
  for (char c : std::string("MDFC")) w.u8(static_cast<std::uint8_t>(c));
  w.u32(kCheckpointVersion);
  w.u8(static_cast<std::uint8_t>(params.variant));
  w.dim(params.num_domains, "num_domains");
  w.dim(params.num_classes, "num_classes");
  w.dim(params.working_resolution, "working_resolution");
  w.dim(static_cast<int>(params.trunk.size()), "trunk layer count");
  w.dim(static_cast<int>(params.heads.front().size()), "head layer count");
  for (const auto& l : params.trunk) write_spec(w, l.spec);
  for (const auto& l : params.heads.front()) write_spec(w, l.spec);
  write_stack(w, params.trunk);
  for (const auto& h : params.heads) write_stack(w, h);
  const std::uint32_t crc = crc32_of(w.bytes().data(), w.bytes().size());
  w.u32(crc);
  return std::move(w.bytes());
}

ModelParams decode_checkpoint(const std::vector<std::uint8_t>& bytes) {
  if (bytes.size() < 4 || std::memcmp(bytes.data(), "MDFC", 4) != 0) throw FormatError("bad checkpoint magic", 0);
  if (bytes.size() < 8) throw FormatError("checkpoint truncated", bytes.size());
  Reader r(bytes, bytes.size() - 4);
  r.u32();  // magic
  const std::uint32_t version = r.u32();
  if (version != kCheckpointVersion)
    throw FormatError("unsupported checkpoint version " + std::to_string(version), 4);
  const std::size_t variant_at = r.pos();
  const std::uint8_t variant = r.u8();
  if (variant > static_cast<std::uint8_t>(Variant::MD)) throw FormatError("unknown variant tag", variant_at);

  ModelParams m;
  m.variant = static_cast<Variant>(variant);
  m.num_domains = r.u16();
  m.num_classes = r.u16();
  m.working_resolution = r.u16();
  const int trunk_layers = r.u16();
  const int head_layers = r.u16();
  std::vector<LayerSpec> trunk_specs, head_specs;
  for (int i = 0; i < trunk_layers; ++i) trunk_specs.push_back(read_spec(r));
  for (int i = 0; i < head_layers; ++i) head_specs.push_back(read_spec(r));
  const std::size_t table_end = r.pos();

  std::size_t expected = table_end + 4;
  for (const auto& s : trunk_specs) expected += 4 * s.parameter_count();
  const int heads = m.variant == Variant::MD ? m.num_domains : 1;
  for (const auto& s : head_specs) expected += 4 * s.parameter_count() * static_cast<std::size_t>(heads);
  if (bytes.size() < expected) throw FormatError("checkpoint truncated", bytes.size());
  if (bytes.size() > expected) throw FormatError("trailing bytes after checkpoint", expected);

  const std::uint32_t stored = static_cast<std::uint32_t>(bytes[bytes.size() - 4]) |
                               static_cast<std::uint32_t>(bytes[bytes.size() - 3]) << 8 |
                               static_cast<std::uint32_t>(bytes[bytes.size() - 2]) << 16 |
                               static_cast<std::uint32_t>(bytes[bytes.size() - 1]) << 24;
  if (stored != crc32_of(bytes.data(), bytes.size() - 4)) throw FormatError("checkpoint CRC mismatch", bytes.size() - 4);

  m.trunk = read_stack(r, trunk_specs);
  for (int h = 0; h < heads; ++h) m.heads.push_back(read_stack(r, head_specs));
  try {
    validate_model(m);
  } catch (const ConfigError& e) {
    throw FormatError(std::string("inconsistent checkpoint: ") + e.what(), 8);
  }
  return m;
}

void save_checkpoint(const ModelParams& params, const std::string& path) {
  const auto bytes = encode_checkpoint(params);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw FilesystemError("cannot write checkpoint", path);
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw FilesystemError("write failed", path);
}

ModelParams load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FilesystemError("cannot open checkpoint", path);
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return decode_checkpoint(bytes);
}

}  // namespace mdseg
