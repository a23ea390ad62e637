#pragma once

#include <bit>
#include <cctype>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <map>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "ppx/affine.hpp"
#include "ppx/grid.hpp"

namespace ppx {

namespace detail {

inline std::vector<char> read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  std::vector<char> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  if (in.bad()) throw IoError("read failed for " + path.string());
  return bytes;
}

inline void write_file(const std::filesystem::path& path, const std::string& bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  out.close();
  if (!out) throw IoError("write failed for " + path.string());
}

/// Cursor over a netpbm-style header: whitespace-separated tokens with '#'
/// comments.
class HeaderReader {
 public:
  HeaderReader(const std::vector<char>& bytes, std::string name)
      : bytes_(bytes), name_(std::move(name)) {}

  std::string token() {
    skip_space_and_comments();
    std::string t;
    while (pos_ < bytes_.size() && !std::isspace(static_cast<unsigned char>(bytes_[pos_]))) {
      t.push_back(bytes_[pos_++]);
    }
    if (t.empty()) throw FormatError(name_ + ": truncated header");
    return t;
  }

  long integer() {
    const std::string t = token();
    char* end = nullptr;
    const long v = std::strtol(t.c_str(), &end, 10);
    if (end == t.c_str() || *end != '\0') throw FormatError(name_ + ": bad header field '" + t + "'");
    return v;
  }

  double real() {
    const std::string t = token();
    char* end = nullptr;
    const double v = std::strtod(t.c_str(), &end);
    if (end == t.c_str() || *end != '\0') throw FormatError(name_ + ": bad header field '" + t + "'");
    return v;
  }

  /// Consumes the single whitespace byte that terminates the header.
  void end_header() {
    if (pos_ >= bytes_.size() || !std::isspace(static_cast<unsigned char>(bytes_[pos_]))) {
      throw FormatError(name_ + ": header not terminated");
    }
    ++pos_;
  }

  std::size_t position() const { return pos_; }

 private:
  void skip_space_and_comments() {
    while (pos_ < bytes_.size()) {
      const char c = bytes_[pos_];
      if (c == '#') {
        while (pos_ < bytes_.size() && bytes_[pos_] != '\n') ++pos_;
      } else if (std::isspace(static_cast<unsigned char>(c))) {
        ++pos_;
      } else {
        break;
      }
    }
  }

  const std::vector<char>& bytes_;
  std::string name_;
  std::size_t pos_ = 0;
};

inline std::uint32_t byteswap32(std::uint32_t v) {
  return ((v & 0xffu) << 24) | ((v & 0xff00u) << 8) | ((v >> 8) & 0xff00u) | (v >> 24);
}

inline float float_from_bytes(const char* p, bool little_endian) {
  std::uint32_t bits;
  std::memcpy(&bits, p, 4);
  if (little_endian != (std::endian::native == std::endian::little)) bits = byteswap32(bits);
  return std::bit_cast<float>(bits);
}

inline void append_le32(std::string& out, std::uint32_t bits) {
  if constexpr (std::endian::native != std::endian::little) bits = byteswap32(bits);
  char b[4];
  std::memcpy(b, &bits, 4);
  out.append(b, 4);
}

inline void append_float_le(std::string& out, float v) { append_le32(out, std::bit_cast<std::uint32_t>(v)); }

inline std::string lower_extension(const std::filesystem::path& p) {
  std::string ext = p.extension().string();
  for (char& c : ext) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  return ext;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// PGM / PFM

inline Image load_pgm(const std::filesystem::path& path) {
  const auto bytes = detail::read_file(path);
  detail::HeaderReader hdr(bytes, path.string());
  if (hdr.token() != "P5") throw FormatError(path.string() + ": not a binary PGM (P5)");
  const long w = hdr.integer();
  const long h = hdr.integer();
  const long maxval = hdr.integer();
  if (w < 1 || h < 1) throw FormatError(path.string() + ": invalid dimensions");
  if (maxval < 1 || maxval > 65535) throw FormatError(path.string() + ": invalid maxval");
  hdr.end_header();

  const bool wide = maxval > 255;
  const std::size_t bps = wide ? 2 : 1;
  const std::size_t n = static_cast<std::size_t>(w) * static_cast<std::size_t>(h);
  if (bytes.size() - hdr.position() < n * bps) throw IoError(path.string() + ": truncated pixel data");

  Image img(static_cast<int>(w), static_cast<int>(h));
  const auto* p = reinterpret_cast<const unsigned char*>(bytes.data() + hdr.position());
  const double scale = 255.0 / static_cast<double>(maxval == 255 ? 255 : maxval);
  for (std::size_t i = 0; i < n; ++i) {
    const unsigned raw = wide ? (static_cast<unsigned>(p[2 * i]) << 8) | p[2 * i + 1] : p[i];
    img[i] = maxval == 255 ? static_cast<float>(raw) : static_cast<float>(raw * scale);
  }
  return img;
}

/// 8-bit PGM; samples clamped to [0, 255] and rounded half away from zero.
inline void save_pgm(const Image& img, const std::filesystem::path& path) {
  std::ostringstream head;
  head << "P5\n" << img.width() << ' ' << img.height() << "\n255\n";
  std::string out = head.str();
  out.reserve(out.size() + img.size());
  for (float s : img.samples()) {
    const double c = std::clamp(static_cast<double>(s), 0.0, 255.0);
    out.push_back(static_cast<char>(static_cast<unsigned char>(std::round(c))));
  }
  detail::write_file(path, out);
}

inline Image load_pfm(const std::filesystem::path& path) {
  const auto bytes = detail::read_file(path);
  detail::HeaderReader hdr(bytes, path.string());
  const std::string magic = hdr.token();
  if (magic == "PF") throw FormatError(path.string() + ": color PFM is not supported");
  if (magic != "Pf") throw FormatError(path.string() + ": not a grayscale PFM");
  const long w = hdr.integer();
  const long h = hdr.integer();
  const double scale = hdr.real();
  if (w < 1 || h < 1) throw FormatError(path.string() + ": invalid dimensions");
  if (scale == 0.0 || !std::isfinite(scale)) throw FormatError(path.string() + ": invalid scale");
  hdr.end_header();

  const std::size_t n = static_cast<std::size_t>(w) * static_cast<std::size_t>(h);
  if (bytes.size() - hdr.position() < n * 4) throw IoError(path.string() + ": truncated pixel data");
  const bool little = scale < 0.0;
  Image img(static_cast<int>(w), static_cast<int>(h));
  const char* p = bytes.data() + hdr.position();
  // rows are stored bottom-to-top
  for (long y = 0; y < h; ++y) {
    const long src_row = h - 1 - y;
    for (long x = 0; x < w; ++x) {
      img(static_cast<int>(x), static_cast<int>(y)) =
          detail::float_from_bytes(p + 4 * (src_row * w + x), little);
    }
  }
  return img;
}

inline void save_pfm(const Image& img, const std::filesystem::path& path) {
  std::ostringstream head;
  head << "Pf\n" << img.width() << ' ' << img.height() << "\n-1.0\n";
  std::string out = head.str();
  out.reserve(out.size() + 4 * img.size());
  for (int y = img.height() - 1; y >= 0; --y) {
    for (float s : img.row(y)) detail::append_float_le(out, s);
  }
  detail::write_file(path, out);
}

/// Loads PGM or PFM, chosen by the magic bytes.
inline Image load_image(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  char magic[2] = {0, 0};
  in.read(magic, 2);
  if (!in) throw FormatError(path.string() + ": file too short");
  in.close();
  if (magic[0] == 'P' && magic[1] == '5') return load_pgm(path);
  if (magic[0] == 'P' && (magic[1] == 'f' || magic[1] == 'F')) return load_pfm(path);
  throw FormatError(path.string() + ": unrecognized image format");
}

/// Writes PGM for .pgm paths, PFM otherwise.
inline void save_image(const Image& img, const std::filesystem::path& path) {
  if (detail::lower_extension(path) == ".pgm") {
    save_pgm(img, path);
  } else {
    save_pfm(img, path);
  }
}

// ---------------------------------------------------------------------------
// Optical-flow binary files (.flo)

inline constexpr float kFlowMagic = 202021.25f;

inline FlowField load_flow(const std::filesystem::path& path) {
  const auto bytes = detail::read_file(path);
  if (bytes.size() < 12) throw FormatError(path.string() + ": flow header truncated");
  if (detail::float_from_bytes(bytes.data(), true) != kFlowMagic) {
    throw FormatError(path.string() + ": bad flow magic");
  }
  std::int32_t w, h;
  std::uint32_t bits;
  std::memcpy(&bits, bytes.data() + 4, 4);
  if constexpr (std::endian::native != std::endian::little) bits = detail::byteswap32(bits);
  w = static_cast<std::int32_t>(bits);
  std::memcpy(&bits, bytes.data() + 8, 4);
  if constexpr (std::endian::native != std::endian::little) bits = detail::byteswap32(bits);
  h = static_cast<std::int32_t>(bits);
  if (w < 1 || h < 1 || w > (1 << 20) || h > (1 << 20)) {
    throw FormatError(path.string() + ": invalid flow dimensions");
  }
  const std::size_t n = static_cast<std::size_t>(w) * static_cast<std::size_t>(h);
  if (bytes.size() - 12 < n * 8) throw IoError(path.string() + ": truncated flow data");
  FlowField f(w, h);
  const char* p = bytes.data() + 12;
  for (std::size_t i = 0; i < n; ++i) {
    f.u[i] = detail::float_from_bytes(p + 8 * i, true);
    f.v[i] = detail::float_from_bytes(p + 8 * i + 4, true);
  }
  return f;
}

template <typename T>
void save_flow(const BasicFlowField<T>& flow, const std::filesystem::path& path) {
  std::string out;
  out.reserve(12 + 8 * flow.size());
  detail::append_float_le(out, kFlowMagic);
  detail::append_le32(out, static_cast<std::uint32_t>(flow.width()));
  detail::append_le32(out, static_cast<std::uint32_t>(flow.height()));
  for (std::size_t i = 0; i < flow.size(); ++i) {
    detail::append_float_le(out, static_cast<float>(flow.u[i]));
    detail::append_float_le(out, static_cast<float>(flow.v[i]));
  }
  detail::write_file(path, out);
}

// ---------------------------------------------------------------------------
// Affinity text: "i m11 m12 m21 m22 tx ty", one frame per line.

inline std::string format_affinities(const AffinityMap& affinities) {
  std::ostringstream os;
  os << std::setprecision(12);
  for (const auto& [i, a] : affinities) {
    os << i << ' ' << a.m11 << ' ' << a.m12 << ' ' << a.m21 << ' ' << a.m22 << ' ' << a.tx << ' '
       << a.ty << '\n';
  }
  return os.str();
}

inline AffinityMap parse_affinities(const std::string& text, const std::string& name = "affinities") {
  AffinityMap out;
  std::istringstream is(text);
  std::string line;
  int lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    const auto first = line.find_first_not_of(" \t\r");
    if (first == std::string::npos || line[first] == '#') continue;
    std::istringstream ls(line);
    int idx;
    AffineTransform a;
    if (!(ls >> idx >> a.m11 >> a.m12 >> a.m21 >> a.m22 >> a.tx >> a.ty)) {
      throw FormatError(name + ":" + std::to_string(lineno) + ": expected 'i m11 m12 m21 m22 tx ty'");
    }
    std::string rest;
    if (ls >> rest) throw FormatError(name + ":" + std::to_string(lineno) + ": trailing fields");
    if (!out.emplace(idx, a).second) {
      throw FormatError(name + ":" + std::to_string(lineno) + ": duplicate frame index " + std::to_string(idx));
    }
  }
  return out;
}

inline void save_affinities(const AffinityMap& affinities, const std::filesystem::path& path) {
  detail::write_file(path, format_affinities(affinities));
}

inline AffinityMap load_affinities(const std::filesystem::path& path) {
  const auto bytes = detail::read_file(path);
  return parse_affinities(std::string(bytes.begin(), bytes.end()), path.string());
}

// ---------------------------------------------------------------------------
// Flat key=value text (configs, scene specs, metric records).

using KeyValues = std::map<std::string, std::string>;

inline KeyValues parse_key_values(const std::string& text, const std::string& name = "config") {
  KeyValues kv;
  std::istringstream is(text);
  std::string line;
  int lineno = 0;
  const auto trim = [](std::string s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return std::string();
    const auto e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
  };
  while (std::getline(is, line)) {
    ++lineno;
    const std::string t = trim(line);
    if (t.empty() || t[0] == '#') continue;
    const auto eq = t.find('=');
    if (eq == std::string::npos) {
      throw ConfigError(name + ":" + std::to_string(lineno) + ": expected key=value");
    }
    const std::string key = trim(t.substr(0, eq));
    if (key.empty()) throw ConfigError(name + ":" + std::to_string(lineno) + ": empty key");
    kv[key] = trim(t.substr(eq + 1));
  }
  return kv;
}

inline KeyValues load_key_values(const std::filesystem::path& path) {
  const auto bytes = detail::read_file(path);
  return parse_key_values(std::string(bytes.begin(), bytes.end()), path.string());
}

namespace detail {

inline double kv_double(const KeyValues& kv, const std::string& key, double fallback) {
  const auto it = kv.find(key);
  if (it == kv.end()) return fallback;
  try {
    std::size_t pos = 0;
    const double v = std::stod(it->second, &pos);
    if (pos != it->second.size()) throw std::invalid_argument(key);
    return v;
  } catch (const std::exception&) {
    throw ConfigError("invalid number for '" + key + "': " + it->second);
  }
}

inline long kv_int(const KeyValues& kv, const std::string& key, long fallback) {
  const auto it = kv.find(key);
  if (it == kv.end()) return fallback;
  try {
    std::size_t pos = 0;
    const long v = std::stol(it->second, &pos);
    if (pos != it->second.size()) throw std::invalid_argument(key);
    return v;
  } catch (const std::exception&) {
    throw ConfigError("invalid integer for '" + key + "': " + it->second);
  }
}

}  // namespace detail

/// Ordered metric record, one key=value per line.
class MetricsRecord {
 public:
  void add(const std::string& key, double value) {
    std::ostringstream os;
    os << std::setprecision(9) << value;
    add(key, os.str());
  }
  void add(const std::string& key, const std::string& value) { entries_.emplace_back(key, value); }

  std::string str() const {
    std::string out;
    for (const auto& [k, v] : entries_) out += k + "=" + v + "\n";
    return out;
  }
  const std::vector<std::pair<std::string, std::string>>& entries() const { return entries_; }

  void save(const std::filesystem::path& path) const { detail::write_file(path, str()); }

 private:
  std::vector<std::pair<std::string, std::string>> entries_;
};

}  // namespace ppx
