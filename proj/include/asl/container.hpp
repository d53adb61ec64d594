#pragma once

// Binary tensor container (".aslt"), little-endian regardless of host:
//
//   offset 0  "ASLT"             magic, 4 bytes
//          4  version            u8, = 1
//          5  dtype              u8, 1 = float32, 2 = float64 (IEEE-754)
//          6  ndim               u8
//          7  dims[ndim]         u32 each
//          .  payload            row-major elements
//
// The payload length must equal element size * product(dims) exactly.

#include <bit>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <sstream>
#include <string>
#include <vector>

#include "asl/errors.hpp"
#include "asl/image.hpp"
#include "asl/rng.hpp"
#include "asl/tensor.hpp"

namespace asl {

enum class DType : std::uint8_t { f32 = 1, f64 = 2 };

inline constexpr char kContainerMagic[4] = {'A', 'S', 'L', 'T'};
inline constexpr std::uint8_t kContainerVersion = 1;

// Values are held as double; f32 containers store (and reload) them as float.
struct TensorContainer {
  DType dtype = DType::f64;
  std::vector<std::uint32_t> dims;
  std::vector<double> values;

  std::size_t element_count() const {
    std::size_t n = 1;
    for (auto d : dims) n *= d;
    return n;
  }

  friend bool operator==(const TensorContainer&, const TensorContainer&) = default;
};

namespace detail {

inline void put_le(std::string& out, std::uint64_t v, int bytes) {
  for (int i = 0; i < bytes; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

inline std::uint64_t get_le(const std::string& in, std::size_t pos, int bytes) {
  std::uint64_t v = 0;
  for (int i = 0; i < bytes; ++i) v |= static_cast<std::uint64_t>(static_cast<unsigned char>(in[pos + i])) << (8 * i);
  return v;
}

}  // namespace detail

inline std::string encode_tensor(const TensorContainer& t) {
  if (t.dims.empty() || t.dims.size() > 255) throw ContainerError("container: ndim must lie in [1, 255]");
  if (t.values.size() != t.element_count()) throw ContainerError("container: value count does not match dims");
  const int esize = t.dtype == DType::f32 ? 4 : 8;
  std::string out(kContainerMagic, 4);
  out.push_back(static_cast<char>(kContainerVersion));
  out.push_back(static_cast<char>(t.dtype));
  out.push_back(static_cast<char>(t.dims.size()));
  for (auto d : t.dims) detail::put_le(out, d, 4);
  out.reserve(out.size() + t.values.size() * static_cast<std::size_t>(esize));
  for (double v : t.values) {
    if (t.dtype == DType::f32) {
      detail::put_le(out, std::bit_cast<std::uint32_t>(static_cast<float>(v)), 4);
    } else {
      detail::put_le(out, std::bit_cast<std::uint64_t>(v), 8);
    }
  }
  return out;
}

inline TensorContainer decode_tensor(const std::string& bytes) {
  if (bytes.size() < 7 || bytes.compare(0, 4, kContainerMagic, 4) != 0) throw BadMagic("container: bad magic");
  const auto version = static_cast<std::uint8_t>(bytes[4]);
  if (version != kContainerVersion) {
    throw UnsupportedVersion("container: unsupported version " + std::to_string(version));
  }
  const auto dtype = static_cast<std::uint8_t>(bytes[5]);
  if (dtype != 1 && dtype != 2) throw UnsupportedDtype("container: unsupported dtype code " + std::to_string(dtype));
  const auto ndim = static_cast<std::uint8_t>(bytes[6]);
  if (ndim == 0) throw ContainerError("container: zero dimensions");
  const std::size_t header = 7 + 4 * static_cast<std::size_t>(ndim);
  if (bytes.size() < header) throw TruncatedPayload("container: truncated header");

  TensorContainer t;
  t.dtype = static_cast<DType>(dtype);
  for (std::size_t i = 0; i < ndim; ++i) t.dims.push_back(static_cast<std::uint32_t>(detail::get_le(bytes, 7 + 4 * i, 4)));
  const std::size_t esize = t.dtype == DType::f32 ? 4 : 8;
  const std::size_t n = t.element_count();
  const std::size_t want = header + n * esize;
  if (bytes.size() < want) {
    throw TruncatedPayload("container: payload has " + std::to_string(bytes.size() - header) + " bytes, expected " +
                           std::to_string(n * esize));
  }
  if (bytes.size() > want) throw ContainerError("container: trailing bytes after payload");
  t.values.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t pos = header + i * esize;
    if (t.dtype == DType::f32) {
      t.values[i] = static_cast<double>(std::bit_cast<float>(static_cast<std::uint32_t>(detail::get_le(bytes, pos, 4))));
    } else {
      t.values[i] = std::bit_cast<double>(detail::get_le(bytes, pos, 8));
    }
  }
  return t;
}

inline std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("io: cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline void write_file(const std::filesystem::path& path, const std::string& bytes) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("io: cannot write " + path.string());
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw Error("io: write failed for " + path.string());
}

inline void save_tensor(const std::filesystem::path& path, const TensorContainer& t) { write_file(path, encode_tensor(t)); }

inline TensorContainer load_tensor(const std::filesystem::path& path) { return decode_tensor(read_file(path)); }

// Hex FNV-1a 64 of a byte string, used as file checksum in manifests.
inline std::string checksum_hex(const std::string& bytes) {
  std::ostringstream ss;
  ss << std::hex << std::setw(16) << std::setfill('0') << fnv1a64(bytes);
  return ss.str();
}

inline std::string file_checksum(const std::filesystem::path& path) { return checksum_hex(read_file(path)); }

// Image2D <-> (height, width) container.
inline TensorContainer to_container(const Image2D& img, DType dtype = DType::f64) {
  return {dtype, {static_cast<std::uint32_t>(img.height()), static_cast<std::uint32_t>(img.width())}, img.values()};
}

inline Image2D image_from_container(const TensorContainer& t, VoxelSize voxel = {}) {
  if (t.dims.size() != 2) throw ShapeMismatch("container: expected a 2-D tensor for an image");
  return Image2D(t.dims[1], t.dims[0], voxel, t.values);
}

// Stack of equally-shaped images <-> (count, height, width).
inline TensorContainer stack_to_container(const std::vector<Image2D>& imgs, DType dtype = DType::f64) {
  if (imgs.empty()) throw ContainerError("container: empty image stack");
  TensorContainer t{dtype,
                    {static_cast<std::uint32_t>(imgs.size()), static_cast<std::uint32_t>(imgs[0].height()),
                     static_cast<std::uint32_t>(imgs[0].width())},
                    {}};
  t.values.reserve(imgs.size() * imgs[0].size());
  for (const auto& im : imgs) {
    require_same_shape(imgs[0], im, "container");
    t.values.insert(t.values.end(), im.values().begin(), im.values().end());
  }
  return t;
}

inline std::vector<Image2D> stack_from_container(const TensorContainer& t, VoxelSize voxel = {}) {
  if (t.dims.size() != 3) throw ShapeMismatch("container: expected a 3-D tensor for an image stack");
  const std::size_t n = t.dims[1] * static_cast<std::size_t>(t.dims[2]);
  std::vector<Image2D> out;
  for (std::size_t k = 0; k < t.dims[0]; ++k) {
    out.emplace_back(t.dims[2], t.dims[1], voxel,
                     std::vector<double>(t.values.begin() + static_cast<std::ptrdiff_t>(k * n),
                                         t.values.begin() + static_cast<std::ptrdiff_t>((k + 1) * n)));
  }
  return out;
}

template <typename T>
TensorContainer to_container(const Tensor4<T>& x) {
  TensorContainer t{std::is_same_v<T, float> ? DType::f32 : DType::f64, {}, {}};
  for (auto d : x.dims()) t.dims.push_back(static_cast<std::uint32_t>(d));
  t.values.assign(x.data().begin(), x.data().end());
  return t;
}

template <typename T>
Tensor4<T> tensor_from_container(const TensorContainer& t) {
  if (t.dims.size() != 4) throw ShapeMismatch("container: expected a 4-D tensor");
  std::vector<T> data(t.values.size());
  for (std::size_t i = 0; i < data.size(); ++i) data[i] = static_cast<T>(t.values[i]);
  return Tensor4<T>({t.dims[0], t.dims[1], t.dims[2], t.dims[3]}, std::move(data));
}

}  // namespace asl
