#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "stnl/tensor.hpp"

namespace stnl {

// TNSR container, version 1, little-endian throughout:
//   bytes 0-3   ASCII magic "TNSR"
//   u16         version (= 1)
//   u8          dtype (0 = float32, 1 = float64)
//   u8          ndim
//   ndim x u64  dimension sizes
//   payload     raw row-major element data
// No padding, no checksum.

enum class Dtype : std::uint8_t { Float32 = 0, Float64 = 1 };

template <typename T>
constexpr Dtype dtype_of() {
  if constexpr (std::is_same_v<T, float>) return Dtype::Float32;
  else return Dtype::Float64;
}

inline const char* dtype_name(Dtype d) { return d == Dtype::Float32 ? "float32" : "float64"; }

class TensorIoError : public std::runtime_error {
 public:
  enum class Kind { Io, BadMagic, UnsupportedVersion, UnsupportedDtype, DtypeMismatch, Truncated };

  TensorIoError(Kind kind, const std::string& msg) : std::runtime_error(msg), kind_(kind) {}
  Kind kind() const { return kind_; }

 private:
  Kind kind_;
};

struct TensorFileInfo {
  Dtype dtype;
  Shape shape;
  std::size_t payload_offset = 0;
};

namespace detail {

inline void put_bytes(std::vector<unsigned char>& out, std::uint64_t v, int nbytes) {
  for (int i = 0; i < nbytes; ++i) out.push_back(static_cast<unsigned char>((v >> (8 * i)) & 0xFF));
}

inline std::uint64_t get_bytes(const std::vector<unsigned char>& in, std::size_t pos, int nbytes) {
  std::uint64_t v = 0;
  for (int i = 0; i < nbytes; ++i) v |= static_cast<std::uint64_t>(in[pos + i]) << (8 * i);
  return v;
}

template <typename T>
void encode_elems(std::vector<unsigned char>& out, const T* src, std::size_t n) {
  using Bits = std::conditional_t<sizeof(T) == 4, std::uint32_t, std::uint64_t>;
  for (std::size_t i = 0; i < n; ++i) put_bytes(out, std::bit_cast<Bits>(src[i]), sizeof(T));
}

template <typename T>
void decode_elems(const std::vector<unsigned char>& in, std::size_t pos, T* dst, std::size_t n) {
  using Bits = std::conditional_t<sizeof(T) == 4, std::uint32_t, std::uint64_t>;
  for (std::size_t i = 0; i < n; ++i)
    dst[i] = std::bit_cast<T>(static_cast<Bits>(get_bytes(in, pos + i * sizeof(T), sizeof(T))));
}

inline std::vector<unsigned char> read_file(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw TensorIoError(TensorIoError::Kind::Io, "cannot open " + path);
  std::vector<unsigned char> buf((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  if (f.bad()) throw TensorIoError(TensorIoError::Kind::Io, "read failure on " + path);
  return buf;
}

inline TensorFileInfo parse_header(const std::vector<unsigned char>& buf, const std::string& path) {
  if (buf.size() < 8) {
    throw TensorIoError(TensorIoError::Kind::Truncated, path + ": truncated header");
  }
  if (std::memcmp(buf.data(), "TNSR", 4) != 0) {
    throw TensorIoError(TensorIoError::Kind::BadMagic, path + ": bad magic, not a TNSR file");
  }
  const std::uint64_t version = get_bytes(buf, 4, 2);
  if (version != 1) {
    throw TensorIoError(TensorIoError::Kind::UnsupportedVersion,
                        path + ": unsupported version " + std::to_string(version));
  }
  const std::uint64_t dtype_byte = get_bytes(buf, 6, 1);
  if (dtype_byte > 1) {
    throw TensorIoError(TensorIoError::Kind::UnsupportedDtype,
                        path + ": unsupported dtype code " + std::to_string(dtype_byte));
  }
  const std::size_t ndim = static_cast<std::size_t>(get_bytes(buf, 7, 1));
  if (buf.size() < 8 + 8 * ndim) {
    throw TensorIoError(TensorIoError::Kind::Truncated, path + ": truncated dimension list");
  }
  TensorFileInfo info;
  info.dtype = static_cast<Dtype>(dtype_byte);
  for (std::size_t i = 0; i < ndim; ++i)
    info.shape.push_back(static_cast<std::size_t>(get_bytes(buf, 8 + 8 * i, 8)));
  info.payload_offset = 8 + 8 * ndim;
  return info;
}

template <typename T>
std::vector<unsigned char> encode_tensor(const Tensor<T>& t) {
  std::vector<unsigned char> buf;
  buf.reserve(8 + 8 * t.rank() + sizeof(T) * t.numel());
  buf.insert(buf.end(), {'T', 'N', 'S', 'R'});
  put_bytes(buf, 1, 2);
  put_bytes(buf, static_cast<std::uint64_t>(dtype_of<T>()), 1);
  put_bytes(buf, t.rank(), 1);
  for (std::size_t i = 0; i < t.rank(); ++i) put_bytes(buf, t.dim(i), 8);
  encode_elems(buf, t.data(), t.numel());
  return buf;
}

template <typename T>
Tensor<T> decode_tensor(const std::vector<unsigned char>& buf, const std::string& path) {
  const TensorFileInfo info = parse_header(buf, path);
  if (info.dtype != dtype_of<T>()) {
    throw TensorIoError(TensorIoError::Kind::DtypeMismatch,
                        path + ": file holds " + dtype_name(info.dtype) + ", requested " +
                            dtype_name(dtype_of<T>()));
  }
  const std::size_t n = numel_of(info.shape);
  if (buf.size() != info.payload_offset + n * sizeof(T)) {
    throw TensorIoError(TensorIoError::Kind::Truncated,
                        path + ": payload size mismatch, expected " +
                            std::to_string(info.payload_offset + n * sizeof(T)) + " bytes, got " +
                            std::to_string(buf.size()));
  }
  Tensor<T> t(info.shape);
  decode_elems(buf, info.payload_offset, t.data(), n);
  return t;
}

}  // namespace detail

template <typename T>
void write_tensor(const Tensor<T>& t, const std::string& path) {
  const auto buf = detail::encode_tensor(t);
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw TensorIoError(TensorIoError::Kind::Io, "cannot open " + path + " for writing");
  f.write(reinterpret_cast<const char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
  if (!f) throw TensorIoError(TensorIoError::Kind::Io, "write failure on " + path);
}

template <typename T>
Tensor<T> read_tensor(const std::string& path) {
  return detail::decode_tensor<T>(detail::read_file(path), path);
}

/// Header-only peek: dtype and shape without loading the payload.
inline TensorFileInfo probe_tensor(const std::string& path) {
  return detail::parse_header(detail::read_file(path), path);
}

}  // namespace stnl
