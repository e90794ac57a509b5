// keto - keypoint-driven tool manipulation lab
//
// "KETO" binary point-cloud container. Layout:
//   magic "KETO" | u16 version = 1 | u32 cloud count |
//   per cloud: u32 M | M * 3 little-endian f32 (x, y, z)
// Round-trips must be bit-exact, so coordinates are quantized to f32 on
// write and clouds intended for persistence should be quantized up front
// (see quantize_f32).

#ifndef KETO_CLOUD_IO_HPP
#define KETO_CLOUD_IO_HPP

#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <vector>

#include "keto/geometry.hpp"

namespace keto {

namespace detail {

inline void put_u16(std::string& out, std::uint16_t v) {
  out.push_back(static_cast<char>(v & 0xFF));
  out.push_back(static_cast<char>((v >> 8) & 0xFF));
}

inline void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}

inline void put_f32(std::string& out, float v) {
  std::uint32_t bits;
  std::memcpy(&bits, &v, 4);
  put_u32(out, bits);
}

class ByteReader {
 public:
  ByteReader(const char* data, std::size_t size) : data_(data), size_(size) {}

  std::uint8_t u8() {
    need(1);
    return static_cast<std::uint8_t>(data_[pos_++]);
  }
  std::uint16_t u16() {
    need(2);
    std::uint16_t v = static_cast<std::uint8_t>(data_[pos_]) |
                      (static_cast<std::uint16_t>(
                           static_cast<std::uint8_t>(data_[pos_ + 1]))
                       << 8);
    pos_ += 2;
    return v;
  }
  std::uint32_t u32() {
    need(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) {
      v |= static_cast<std::uint32_t>(static_cast<std::uint8_t>(data_[pos_ + i]))
           << (8 * i);
    }
    pos_ += 4;
    return v;
  }
  float f32() {
    std::uint32_t bits = u32();
    float v;
    std::memcpy(&v, &bits, 4);
    return v;
  }
  void expect(const char* tag, std::size_t n) {
    need(n);
    if (std::memcmp(data_ + pos_, tag, n) != 0) {
      fail("parse-error", std::string("bad magic, expected ") + tag);
    }
    pos_ += n;
  }

 private:
  void need(std::size_t n) {
    if (pos_ + n > size_) fail("parse-error", "truncated binary file");
  }
  const char* data_;
  std::size_t size_;
  std::size_t pos_ = 0;
};

inline std::string read_file_bytes(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail("io-error", "cannot open " + path);
  std::string bytes((std::istreambuf_iterator<char>(in)),
                    std::istreambuf_iterator<char>());
  return bytes;
}

inline void write_file_bytes(const std::string& path, const std::string& bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) fail("io-error", "cannot open " + path + " for writing");
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) fail("io-error", "short write to " + path);
}

}  // namespace detail

/// Rounds a double through f32. The store goes through a volatile float:
/// gcc's SLP vectorizer otherwise elides paired narrowing conversions at
/// -O3, leaving the value unrounded.
inline double round_f32(double v) {
  volatile float f = static_cast<float>(v);
  return static_cast<double>(f);
}

/// Quantizes every coordinate through f32, the persisted precision. Clouds
/// that will be stored are quantized before use so that replaying from disk
/// reproduces in-memory results exactly.
inline PointCloud quantize_f32(const PointCloud& cloud) {
  PointCloud out;
  out.points.reserve(cloud.count());
  for (const auto& p : cloud.points) {
    out.points.push_back({round_f32(p.x), round_f32(p.y), round_f32(p.z)});
  }
  return out;
}

inline std::string encode_clouds(const std::vector<PointCloud>& clouds) {
  std::string out;
  out += "KETO";
  detail::put_u16(out, 1);
  detail::put_u32(out, static_cast<std::uint32_t>(clouds.size()));
  for (const auto& c : clouds) {
    detail::put_u32(out, static_cast<std::uint32_t>(c.count()));
    for (const auto& p : c.points) {
      detail::put_f32(out, static_cast<float>(p.x));
      detail::put_f32(out, static_cast<float>(p.y));
      detail::put_f32(out, static_cast<float>(p.z));
    }
  }
  return out;
}

inline std::vector<PointCloud> decode_clouds(const std::string& bytes) {
  detail::ByteReader r(bytes.data(), bytes.size());
  r.expect("KETO", 4);
  std::uint16_t version = r.u16();
  if (version != 1) fail("parse-error", "unsupported KETO version");
  std::uint32_t n = r.u32();
  std::vector<PointCloud> clouds(n);
  for (std::uint32_t i = 0; i < n; ++i) {
    std::uint32_t m = r.u32();
    clouds[i].points.resize(m);
    for (std::uint32_t j = 0; j < m; ++j) {
      double x = r.f32(), y = r.f32(), z = r.f32();
      clouds[i].points[j] = {x, y, z};
    }
  }
  return clouds;
}

inline void save_clouds(const std::string& path,
                        const std::vector<PointCloud>& clouds) {
  detail::write_file_bytes(path, encode_clouds(clouds));
}

inline std::vector<PointCloud> load_clouds(const std::string& path) {
  return decode_clouds(detail::read_file_bytes(path));
}

}  // namespace keto

#endif  // KETO_CLOUD_IO_HPP
