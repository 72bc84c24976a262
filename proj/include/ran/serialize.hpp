#pragma once

#include <cstdint>
#include <cstring>
#include <fstream>
#include <istream>
#include <ostream>
#include <stdexcept>
#include <string>
#include <vector>

#include "ran/tensor.hpp"

// Tensor container: magic "RANT", version 0x01, dtype byte (0x01 = float32,
// 0x02 = float64), ndim byte, ndim little-endian u32 extents, then the
// row-major little-endian payload.

namespace ran {

enum class DType : std::uint8_t { kFloat32 = 0x01, kFloat64 = 0x02 };

namespace detail {

inline void put_u32le(std::ostream& os, std::uint32_t v) {
  unsigned char b[4] = {static_cast<unsigned char>(v & 0xff),
                        static_cast<unsigned char>((v >> 8) & 0xff),
                        static_cast<unsigned char>((v >> 16) & 0xff),
                        static_cast<unsigned char>((v >> 24) & 0xff)};
  os.write(reinterpret_cast<const char*>(b), 4);
}

inline void put_u64le(std::ostream& os, std::uint64_t v) {
  unsigned char b[8];
  for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>((v >> (8 * i)) & 0xff);
  os.write(reinterpret_cast<const char*>(b), 8);
}

inline bool get_bytes(std::istream& is, unsigned char* out, std::size_t n) {
  is.read(reinterpret_cast<char*>(out), static_cast<std::streamsize>(n));
  return static_cast<std::size_t>(is.gcount()) == n;
}

inline std::uint32_t u32le(const unsigned char* b) {
  return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
         (static_cast<std::uint32_t>(b[2]) << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
}

inline std::uint64_t u64le(const unsigned char* b) {
  std::uint64_t v = 0;
  for (int i = 7; i >= 0; --i) v = (v << 8) | b[i];
  return v;
}

}  // namespace detail

inline void encode_tensor(std::ostream& os, const Tensor& t, DType dtype) {
  os.write("RANT", 4);
  os.put(0x01);
  os.put(static_cast<char>(dtype));
  if (t.rank() > 255) throw std::invalid_argument("encode_tensor: rank too large");
  os.put(static_cast<char>(t.rank()));
  for (std::size_t e : t.shape()) {
    if (e > 0xffffffffull) throw std::invalid_argument("encode_tensor: extent too large");
    detail::put_u32le(os, static_cast<std::uint32_t>(e));
  }
  for (double v : t.values()) {
    if (dtype == DType::kFloat32) {
      float f = static_cast<float>(v);
      std::uint32_t bits;
      std::memcpy(&bits, &f, 4);
      detail::put_u32le(os, bits);
    } else {
      std::uint64_t bits;
      std::memcpy(&bits, &v, 8);
      detail::put_u64le(os, bits);
    }
  }
  if (!os) throw std::runtime_error("encode_tensor: write failed");
}

inline Tensor decode_tensor(std::istream& is, const std::string& context) {
  unsigned char head[7];
  if (!detail::get_bytes(is, head, 7))
    throw std::runtime_error(context + ": truncated tensor header");
  if (std::memcmp(head, "RANT", 4) != 0) throw std::runtime_error(context + ": bad magic bytes");
  if (head[4] != 0x01)
    throw std::runtime_error(context + ": unsupported version " + std::to_string(head[4]));
  if (head[5] != 0x01 && head[5] != 0x02)
    throw std::runtime_error(context + ": unknown dtype " + std::to_string(head[5]));
  const DType dtype = static_cast<DType>(head[5]);
  const std::size_t ndim = head[6];
  if (ndim == 0) throw std::runtime_error(context + ": zero-rank tensor");
  Shape shape(ndim);
  for (std::size_t i = 0; i < ndim; ++i) {
    unsigned char b[4];
    if (!detail::get_bytes(is, b, 4)) throw std::runtime_error(context + ": truncated extents");
    shape[i] = detail::u32le(b);
    if (shape[i] == 0) throw std::runtime_error(context + ": zero extent");
  }
  const std::size_t n = shape_numel(shape);
  std::vector<double> data(n);
  for (std::size_t i = 0; i < n; ++i) {
    if (dtype == DType::kFloat32) {
      unsigned char b[4];
      if (!detail::get_bytes(is, b, 4)) throw std::runtime_error(context + ": truncated payload");
      std::uint32_t bits = detail::u32le(b);
      float f;
      std::memcpy(&f, &bits, 4);
      data[i] = static_cast<double>(f);
    } else {
      unsigned char b[8];
      if (!detail::get_bytes(is, b, 8)) throw std::runtime_error(context + ": truncated payload");
      std::uint64_t bits = detail::u64le(b);
      double d;
      std::memcpy(&d, &bits, 8);
      data[i] = d;
    }
  }
  return Tensor::from_data(std::move(shape), std::move(data));
}

inline void save_tensor(const std::string& path, const Tensor& t,
                        DType dtype = DType::kFloat64) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("save_tensor: cannot open " + path);
  encode_tensor(os, t, dtype);
  if (!os) throw std::runtime_error("save_tensor: write failed for " + path);
}

inline Tensor load_tensor(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("load_tensor: cannot open " + path);
  Tensor t = decode_tensor(is, path);
  // Reject trailing garbage so truncation errors cannot hide an offset bug.
  char extra;
  if (is.get(extra)) throw std::runtime_error(path + ": trailing bytes after payload");
  return t;
}

}  // namespace ran
