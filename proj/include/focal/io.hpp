#pragma once

#include <algorithm>
#include <array>
#include <bit>
#include <cctype>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <map>
#include <sstream>
#include <string>
#include <string_view>
#include <system_error>
#include <vector>

#include "focal/error.hpp"
#include "focal/tensor.hpp"

namespace focal {

static_assert(std::endian::native == std::endian::little, "FTZ I/O assumes a little-endian host");

// ---------------------------------------------------------------------------
// Raw file helpers.

inline std::vector<std::uint8_t> read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  if (in.bad()) throw IoError("read failed: " + path.string());
  return bytes;
}

inline void write_file(const std::filesystem::path& path, std::span<const std::uint8_t> bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open for writing: " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("write failed: " + path.string());
}

inline void write_text(const std::filesystem::path& path, std::string_view text) {
  write_file(path, {reinterpret_cast<const std::uint8_t*>(text.data()), text.size()});
}

inline std::string read_text(const std::filesystem::path& path) {
  auto bytes = read_file(path);
  return {bytes.begin(), bytes.end()};
}

// ---------------------------------------------------------------------------
// FTZ tensor format (little-endian):
//   "FTZ1" | u8 dtype (1 = f32) | u8 ndim | ndim x u32 extents | f32 payload

inline constexpr std::array<char, 4> kFtzMagic = {'F', 'T', 'Z', '1'};
inline constexpr std::uint8_t kFtzFloat32 = 1;

inline std::vector<std::uint8_t> encode_tensor(const Tensor<float>& t) {
  if (!all_finite(t.values())) throw NumericError("refusing to encode a tensor with non-finite values");
  std::vector<std::uint8_t> out;
  out.reserve(6 + 4 * t.rank() + 4 * t.size());
  out.insert(out.end(), kFtzMagic.begin(), kFtzMagic.end());
  out.push_back(kFtzFloat32);
  out.push_back(static_cast<std::uint8_t>(t.rank()));
  for (auto d : t.dims()) {
    if (d > UINT32_MAX) throw DimensionError("tensor extent exceeds u32");
    const auto v = static_cast<std::uint32_t>(d);
    const auto* p = reinterpret_cast<const std::uint8_t*>(&v);
    out.insert(out.end(), p, p + 4);
  }
  const auto* payload = reinterpret_cast<const std::uint8_t*>(t.data());
  out.insert(out.end(), payload, payload + 4 * t.size());
  return out;
}

inline Tensor<float> decode_tensor(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < 6 || std::memcmp(bytes.data(), kFtzMagic.data(), 4) != 0)
    throw FormatError("not an FTZ1 tensor (bad magic)");
  if (bytes[4] != kFtzFloat32) throw FormatError("unsupported FTZ dtype code " + std::to_string(bytes[4]));
  const std::size_t ndim = bytes[5];
  if (ndim == 0 || ndim > kMaxTensorRank) throw FormatError("FTZ rank must be in [1, 4]");
  if (bytes.size() < 6 + 4 * ndim) throw FormatError("FTZ header truncated");
  std::vector<std::size_t> dims(ndim);
  std::size_t count = 1;
  for (std::size_t i = 0; i < ndim; ++i) {
    std::uint32_t v;
    std::memcpy(&v, bytes.data() + 6 + 4 * i, 4);
    if (v == 0) throw FormatError("FTZ extents must be positive");
    dims[i] = v;
    count *= v;
  }
  const std::size_t offset = 6 + 4 * ndim;
  if (bytes.size() - offset != 4 * count)
    throw FormatError("FTZ payload has " + std::to_string(bytes.size() - offset) + " bytes, extents need " +
                      std::to_string(4 * count));
  std::vector<float> data(count);
  std::memcpy(data.data(), bytes.data() + offset, 4 * count);
  Tensor<float> t(std::move(dims), std::move(data));
  if (!all_finite(t.values())) throw FormatError("FTZ payload contains non-finite values");
  return t;
}

inline void save_tensor(const Tensor<float>& t, const std::filesystem::path& path) {
  write_file(path, encode_tensor(t));
}

inline Tensor<float> load_tensor(const std::filesystem::path& path) {
  const auto bytes = read_file(path);
  try {
    return decode_tensor(bytes);
  } catch (const FormatError& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
}

inline void save_feature_map(const FeatureMap& f, const std::filesystem::path& path) { save_tensor(to_tensor(f), path); }

inline FeatureMap load_feature_map(const std::filesystem::path& path) {
  return feature_map_from_tensor(load_tensor(path));
}

// ---------------------------------------------------------------------------
// Netpbm (P5 greyscale, P6 RGB), maxval <= 255.

namespace detail {

struct NetpbmHeader {
  char kind = 0;
  std::size_t width = 0;
  std::size_t height = 0;
  std::size_t maxval = 0;
  std::size_t data_offset = 0;
};

inline NetpbmHeader parse_netpbm(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < 2 || bytes[0] != 'P' || (bytes[1] != '5' && bytes[1] != '6'))
    throw FormatError("expected a binary PGM (P5) or PPM (P6) header");
  NetpbmHeader h;
  h.kind = static_cast<char>(bytes[1]);
  std::size_t pos = 2;
  auto next_number = [&]() -> std::size_t {
    for (;;) {
      if (pos >= bytes.size()) throw FormatError("netpbm header truncated");
      if (bytes[pos] == '#') {
        while (pos < bytes.size() && bytes[pos] != '\n') ++pos;
      } else if (std::isspace(bytes[pos])) {
        ++pos;
      } else {
        break;
      }
    }
    std::size_t value = 0;
    const auto* first = reinterpret_cast<const char*>(bytes.data() + pos);
    const auto* last = reinterpret_cast<const char*>(bytes.data() + bytes.size());
    auto [ptr, ec] = std::from_chars(first, last, value);
    if (ec != std::errc{} || ptr == first) throw FormatError("malformed netpbm header field");
    pos += static_cast<std::size_t>(ptr - first);
    return value;
  };
  h.width = next_number();
  h.height = next_number();
  h.maxval = next_number();
  if (h.width == 0 || h.height == 0) throw FormatError("netpbm dimensions must be positive");
  if (h.maxval == 0 || h.maxval > 255) throw FormatError("only 8-bit netpbm (maxval 1..255) is supported");
  if (pos >= bytes.size() || !std::isspace(bytes[pos])) throw FormatError("netpbm header not terminated");
  h.data_offset = pos + 1;
  const std::size_t channels = h.kind == '6' ? 3 : 1;
  if (bytes.size() - h.data_offset < h.width * h.height * channels) throw FormatError("netpbm payload truncated");
  return h;
}

inline std::string netpbm_header(char kind, std::size_t width, std::size_t height) {
  return std::string("P") + kind + "\n" + std::to_string(width) + " " + std::to_string(height) + "\n255\n";
}

}  // namespace detail

/// Masks are written as P5 with 0 = pristine and 255 = forged.
inline std::vector<std::uint8_t> encode_mask(const ForgeryMask& m) {
  const auto header = detail::netpbm_header('5', m.width(), m.height());
  std::vector<std::uint8_t> out(header.begin(), header.end());
  for (auto v : m.values()) out.push_back(v ? 255 : 0);
  return out;
}

/// Any sample value >= 128 (on the 0..255 scale) loads as forged.
inline ForgeryMask decode_mask(std::span<const std::uint8_t> bytes) {
  const auto h = detail::parse_netpbm(bytes);
  if (h.kind != '5') throw FormatError("mask must be a greyscale PGM (P5)");
  std::vector<std::uint8_t> data(h.width * h.height);
  for (std::size_t i = 0; i < data.size(); ++i) {
    const std::size_t v = bytes[h.data_offset + i] * 255 / h.maxval;
    data[i] = v >= 128 ? 1 : 0;
  }
  return ForgeryMask(h.height, h.width, std::move(data));
}

inline void save_mask(const ForgeryMask& m, const std::filesystem::path& path) { write_file(path, encode_mask(m)); }

inline ForgeryMask load_mask(const std::filesystem::path& path) {
  const auto bytes = read_file(path);
  try {
    return decode_mask(bytes);
  } catch (const FormatError& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
}

/// Real-valued mask stored as an FTZ [H, W] tensor, binarized at 0.5.
inline ForgeryMask mask_from_probabilities(const Tensor<float>& t, float threshold = 0.5f) {
  if (t.rank() != 2) throw DimensionError("probability masks must have rank 2 [H, W]");
  std::vector<std::uint8_t> data(t.size());
  for (std::size_t i = 0; i < t.size(); ++i) data[i] = t[i] >= threshold ? 1 : 0;
  return ForgeryMask(t.dims()[0], t.dims()[1], std::move(data));
}

/// Loads a .pgm mask or an .ftz probability map.
inline ForgeryMask load_any_mask(const std::filesystem::path& path) {
  if (path.extension() == ".ftz") return mask_from_probabilities(load_tensor(path));
  return load_mask(path);
}

/// RGB image as an H x W x 3 tensor with values in [0, 1].
inline Tensor<float> decode_image(std::span<const std::uint8_t> bytes) {
  const auto h = detail::parse_netpbm(bytes);
  if (h.kind != '6') throw FormatError("image must be a binary PPM (P6)");
  Tensor<float> t({h.height, h.width, 3});
  for (std::size_t i = 0; i < t.size(); ++i)
    t[i] = static_cast<float>(bytes[h.data_offset + i]) / static_cast<float>(h.maxval);
  return t;
}

/// Quantizes [0, 1] values to 8 bits.
inline std::vector<std::uint8_t> encode_image(const Tensor<float>& image) {
  if (image.rank() != 3 || image.dims()[2] != 3) throw DimensionError("PPM images must be H x W x 3");
  const auto header = detail::netpbm_header('6', image.dims()[1], image.dims()[0]);
  std::vector<std::uint8_t> out(header.begin(), header.end());
  out.reserve(header.size() + image.size());
  for (float v : image.values())
    out.push_back(static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0f, 1.0f) * 255.0f)));
  return out;
}

inline void save_image(const Tensor<float>& image, const std::filesystem::path& path) {
  write_file(path, encode_image(image));
}

/// Loads a .ppm image or an .ftz H x W x 3 tensor.
inline Tensor<float> load_image(const std::filesystem::path& path) {
  if (path.extension() == ".ftz") {
    auto t = load_tensor(path);
    if (t.rank() != 3 || t.dims()[2] != 3) throw FormatError(path.string() + ": image tensors must be H x W x 3");
    return t;
  }
  const auto bytes = read_file(path);
  try {
    return decode_image(bytes);
  } catch (const FormatError& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
}

// ---------------------------------------------------------------------------
// Text formatting: shortest round-trip representation, "." decimal separator.

inline std::string format_number(double v) {
  std::array<char, 64> buf{};
  auto [ptr, ec] = std::to_chars(buf.data(), buf.data() + buf.size(), v);
  if (ec != std::errc{}) throw FormatError("number formatting failed");
  return std::string(buf.data(), ptr);
}

// ---------------------------------------------------------------------------
// key=value text files ('#' starts a comment line, surrounding blanks ignored).

class KeyValueFile {
 public:
  static KeyValueFile parse(std::string_view text, const std::string& origin = "<config>") {
    KeyValueFile kv;
    std::size_t line_no = 0;
    std::istringstream in{std::string(text)};
    std::string line;
    while (std::getline(in, line)) {
      ++line_no;
      const auto body = trim(line);
      if (body.empty() || body.front() == '#') continue;
      const auto eq = body.find('=');
      if (eq == std::string_view::npos)
        throw ConfigError(origin + ":" + std::to_string(line_no) + ": expected key=value");
      const auto key = std::string(trim(body.substr(0, eq)));
      if (key.empty()) throw ConfigError(origin + ":" + std::to_string(line_no) + ": empty key");
      if (kv.values_.contains(key)) throw ConfigError(origin + ": duplicate key '" + key + "'");
      kv.values_[key] = std::string(trim(body.substr(eq + 1)));
      kv.order_.push_back(key);
    }
    return kv;
  }

  static KeyValueFile load(const std::filesystem::path& path) { return parse(read_text(path), path.string()); }

  void set(const std::string& key, std::string value) {
    if (!values_.contains(key)) order_.push_back(key);
    values_[key] = std::move(value);
  }

  bool contains(const std::string& key) const { return values_.contains(key); }
  const std::string& get(const std::string& key) const {
    auto it = values_.find(key);
    if (it == values_.end()) throw ConfigError("missing key '" + key + "'");
    return it->second;
  }
  const std::vector<std::string>& keys() const noexcept { return order_; }

  std::string to_string() const {
    std::string out;
    for (const auto& k : order_) out += k + "=" + values_.at(k) + "\n";
    return out;
  }

 private:
  static std::string_view trim(std::string_view s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string_view::npos) return {};
    const auto e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
  }

  std::map<std::string, std::string> values_;
  std::vector<std::string> order_;
};

}  // namespace focal
