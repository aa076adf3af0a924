#pragma once

#include <array>
#include <cstring>
#include <fstream>
#include <istream>
#include <ostream>
#include <string>

#include "densedct/colorspace.hpp"

namespace densedct {

enum class Component : std::uint8_t { Y = 0, Cb = 1, Cr = 2 };

inline const char* component_name(Component c) {
  switch (c) {
    case Component::Y: return "Y";
    case Component::Cb: return "Cb";
    case Component::Cr: return "Cr";
  }
  return "?";
}

struct ChannelDescriptor {
  Component component = Component::Y;
  std::uint8_t u = 0;  // vertical frequency
  std::uint8_t v = 0;  // horizontal frequency
  bool operator==(const ChannelDescriptor&) const = default;
};

// Channel index = component * N² + u * N + v.
inline int channel_index(const ChannelDescriptor& d, int block_size) {
  return static_cast<int>(d.component) * block_size * block_size + d.u * block_size + d.v;
}

inline ChannelDescriptor descriptor_for(int index, int block_size) {
  const int nn = block_size * block_size;
  return {static_cast<Component>(index / nn), static_cast<std::uint8_t>((index % nn) / block_size),
          static_cast<std::uint8_t>(index % block_size)};
}

inline std::vector<ChannelDescriptor> full_descriptors(int block_size) {
  std::vector<ChannelDescriptor> out;
  out.reserve(3 * static_cast<std::size_t>(block_size) * block_size);
  for (int i = 0; i < 3 * block_size * block_size; ++i) out.push_back(descriptor_for(i, block_size));
  return out;
}

// Block-DCT coefficients regrouped frequency-major: channel (comp, u, v) holds
// coefficient (u, v) of every block, laid out on the luma block grid.
struct FrequencyTensor {
  int block_size = 8;
  std::vector<ChannelDescriptor> descriptors;
  Tensor3<double> coeffs;
  int source_height = 0;
  int source_width = 0;

  int channels() const { return coeffs.channels; }
  int height() const { return coeffs.height; }
  int width() const { return coeffs.width; }

  // True when every (comp, u, v) is present in canonical order.
  bool complete() const {
    if (coeffs.channels != 3 * block_size * block_size) return false;
    if (descriptors.size() != static_cast<std::size_t>(coeffs.channels)) return false;
    for (int i = 0; i < coeffs.channels; ++i)
      if (channel_index(descriptors[i], block_size) != i) return false;
    return true;
  }

  bool operator==(const FrequencyTensor&) const = default;
};

enum class ChromaUpsample { Nearest, Bilinear };

// Orthonormal DCT-II basis, row k = frequency, column n = sample.
inline std::vector<double> dct_basis(int n) {
  std::vector<double> phi(static_cast<std::size_t>(n) * n);
  for (int k = 0; k < n; ++k) {
    const double s = k == 0 ? std::sqrt(1.0 / n) : std::sqrt(2.0 / n);
    for (int i = 0; i < n; ++i) phi[k * n + i] = s * std::cos(M_PI * (2 * i + 1) * k / (2.0 * n));
  }
  return phi;
}

namespace detail {

inline void check_square(const Plane<double>& block, const char* what) {
  if (block.height != block.width) throw ArgumentError(std::string(what) + ": block must be square");
  if (block.height < 2) throw ArgumentError(std::string(what) + ": block size must be >= 2");
}

// out = A · X · Bᵀ for n×n row-major matrices.
inline void sandwich(const std::vector<double>& a, const double* x, const std::vector<double>& b, double* out, int n,
                     bool transpose_a) {
  std::vector<double> tmp(static_cast<std::size_t>(n) * n, 0.0);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j) {
      double acc = 0.0;
      for (int k = 0; k < n; ++k) acc += (transpose_a ? a[k * n + i] : a[i * n + k]) * x[k * n + j];
      tmp[i * n + j] = acc;
    }
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j) {
      double acc = 0.0;
      for (int k = 0; k < n; ++k) acc += tmp[i * n + k] * (transpose_a ? b[k * n + j] : b[j * n + k]);
      out[i * n + j] = acc;
    }
}

}  // namespace detail

inline Plane<double> dct2d_block(const Plane<double>& block) {
  detail::check_square(block, "dct2d_block");
  const int n = block.height;
  const auto phi = dct_basis(n);
  Plane<double> out(n, n);
  detail::sandwich(phi, block.data.data(), phi, out.data.data(), n, false);
  return out;
}

inline Plane<double> idct2d_block(const Plane<double>& coeffs) {
  detail::check_square(coeffs, "idct2d_block");
  const int n = coeffs.height;
  const auto phi = dct_basis(n);
  Plane<double> out(n, n);
  detail::sandwich(phi, coeffs.data.data(), phi, out.data.data(), n, true);
  return out;
}

// JPEG zig-zag scan: anti-diagonals from (0,0), direction alternating.
// Returns row-major indices u*N + v.
inline std::vector<int> zigzag_order(int n) {
  if (n < 1) throw ArgumentError("zigzag_order: N must be >= 1");
  std::vector<int> order;
  order.reserve(static_cast<std::size_t>(n) * n);
  for (int d = 0; d <= 2 * (n - 1); ++d) {
    const int lo = std::max(0, d - (n - 1));
    const int hi = std::min(d, n - 1);
    if (d % 2 == 0) {
      for (int u = hi; u >= lo; --u) order.push_back(u * n + (d - u));
    } else {
      for (int u = lo; u <= hi; ++u) order.push_back(u * n + (d - u));
    }
  }
  return order;
}

// Inverse permutation: zig-zag position of each row-major index.
inline std::vector<int> zigzag_positions(int n) {
  const auto order = zigzag_order(n);
  std::vector<int> pos(order.size());
  for (std::size_t i = 0; i < order.size(); ++i) pos[order[i]] = static_cast<int>(i);
  return pos;
}

namespace detail {

// Transforms one plane into N² maps of size (H/N)×(W/N).
inline std::vector<Plane<double>> plane_to_frequency_maps(const Plane<double>& p, int n, const std::vector<double>& phi) {
  const int gh = p.height / n;
  const int gw = p.width / n;
  std::vector<Plane<double>> maps(static_cast<std::size_t>(n) * n, Plane<double>(gh, gw));
  std::vector<double> block(static_cast<std::size_t>(n) * n);
  std::vector<double> coef(block.size());
  for (int br = 0; br < gh; ++br)
    for (int bc = 0; bc < gw; ++bc) {
      for (int i = 0; i < n; ++i)
        for (int j = 0; j < n; ++j) block[i * n + j] = p(br * n + i, bc * n + j);
      sandwich(phi, block.data(), phi, coef.data(), n, false);
      for (int k = 0; k < n * n; ++k) maps[k](br, bc) = coef[k];
    }
  return maps;
}

inline Plane<double> frequency_maps_to_plane(const std::vector<Plane<double>>& maps, int n,
                                             const std::vector<double>& phi) {
  const int gh = maps[0].height;
  const int gw = maps[0].width;
  Plane<double> p(gh * n, gw * n);
  std::vector<double> coef(static_cast<std::size_t>(n) * n);
  std::vector<double> block(coef.size());
  for (int br = 0; br < gh; ++br)
    for (int bc = 0; bc < gw; ++bc) {
      for (int k = 0; k < n * n; ++k) coef[k] = maps[k](br, bc);
      sandwich(phi, coef.data(), phi, block.data(), n, true);
      for (int i = 0; i < n; ++i)
        for (int j = 0; j < n; ++j) p(br * n + i, bc * n + j) = block[i * n + j];
    }
  return p;
}

inline Plane<double> upsample_map(const Plane<double>& m, ChromaUpsample mode) {
  return mode == ChromaUpsample::Nearest ? nearest_upsample2(m) : resample_bilinear(m, m.height * 2, m.width * 2);
}

}  // namespace detail

// JPEG level shift: samples are centered on 128 before the transform, so DC
// measures deviation from mid-gray (luma) and from neutral (chroma).
inline constexpr double kLevelShift = 128.0;

// Full pipeline step from a 4:2:0 image to a 3N²-channel tensor on the luma
// block grid. Chroma maps are upsampled 2× to match.
inline FrequencyTensor encode(const YcbcrImage& img, int block_size = 8,
                              ChromaUpsample mode = ChromaUpsample::Nearest) {
  if (!img.subsampled) throw ArgumentError("encode: expects a chroma-subsampled image");
  img.validate();
  if (block_size < 2) throw ArgumentError("encode: block size must be >= 2");
  const int n = block_size;
  if (img.y.height % n || img.y.width % n || img.cb.height % n || img.cb.width % n)
    throw ArgumentError("encode: plane dimensions must be divisible by the block size");
  const auto phi = dct_basis(n);
  const int gh = img.y.height / n;
  const int gw = img.y.width / n;
  const int nn = n * n;

  FrequencyTensor t;
  t.block_size = n;
  t.descriptors = full_descriptors(n);
  t.coeffs = Tensor3<double>(3 * nn, gh, gw);
  t.source_height = img.y.height;
  t.source_width = img.y.width;

  const std::array<const Plane<double>*, 3> planes{&img.y, &img.cb, &img.cr};
  for (int comp = 0; comp < 3; ++comp) {
    Plane<double> centered = *planes[comp];
    for (double& v : centered.data) v -= kLevelShift;
    auto maps = detail::plane_to_frequency_maps(centered, n, phi);
    for (int k = 0; k < nn; ++k) {
      const Plane<double>& m = comp == 0 ? maps[k] : detail::upsample_map(maps[k], mode);
      std::copy(m.data.begin(), m.data.end(), t.coeffs.channel(comp * nn + k).begin());
    }
  }
  return t;
}

// Inverse of encode. Chroma maps are brought back to half resolution by 2×2
// averaging, which exactly undoes nearest upsampling.
inline YcbcrImage decode(const FrequencyTensor& t) {
  if (!t.complete()) throw StateError("decode: incomplete channel set; zero_fill first");
  const int n = t.block_size;
  const int nn = n * n;
  if (t.height() % 2 || t.width() % 2) throw ArgumentError("decode: block grid must be even for 4:2:0 chroma");
  const auto phi = dct_basis(n);
  YcbcrImage out;
  out.subsampled = true;
  std::array<Plane<double>*, 3> planes{&out.y, &out.cb, &out.cr};
  for (int comp = 0; comp < 3; ++comp) {
    std::vector<Plane<double>> maps;
    maps.reserve(nn);
    for (int k = 0; k < nn; ++k) {
      Plane<double> m(t.height(), t.width());
      const auto ch = t.coeffs.channel(comp * nn + k);
      std::copy(ch.begin(), ch.end(), m.data.begin());
      maps.push_back(comp == 0 ? std::move(m) : box_downsample2(m));
    }
    *planes[comp] = detail::frequency_maps_to_plane(maps, n, phi);
    for (double& v : planes[comp]->data) v += kLevelShift;
  }
  return out;
}

// RGB -> YCbCr -> 4:2:0 -> block DCT.
inline FrequencyTensor encode_rgb(const RgbImage& img, int block_size = 8, ChromaUpsample mode = ChromaUpsample::Nearest) {
  return encode(subsample_chroma(rgb_to_ycbcr(img)), block_size, mode);
}

inline RgbImage decode_rgb(const FrequencyTensor& t) { return ycbcr_to_rgb(upsample_chroma(decode(t))); }

// --- DFT1 container -------------------------------------------------------
//
// "DFT1", u32 version, u32 C, u32 H, u32 W, u8 dtype (0 = f64, 1 = f32),
// u16 N, C × (u8 component, u8 u, u8 v), then channel-major row-major data.
// Little-endian throughout. N = 0 marks a container without descriptors
// (token grids).

enum class DType : std::uint8_t { Float64 = 0, Float32 = 1 };

namespace detail {

inline void put_u8(std::ostream& os, std::uint8_t v) { os.put(static_cast<char>(v)); }
inline void put_le(std::ostream& os, std::uint64_t v, int bytes) {
  for (int i = 0; i < bytes; ++i) put_u8(os, static_cast<std::uint8_t>((v >> (8 * i)) & 0xFF));
}
inline std::uint64_t get_le(std::istream& is, int bytes) {
  std::uint64_t v = 0;
  for (int i = 0; i < bytes; ++i) {
    const int c = is.get();
    if (c == std::char_traits<char>::eof()) throw FormatError("DFT1: unexpected end of file");
    v |= static_cast<std::uint64_t>(static_cast<std::uint8_t>(c)) << (8 * i);
  }
  return v;
}

}  // namespace detail

inline constexpr std::uint32_t kDft1Version = 1;

inline void write_tensor(std::ostream& os, const Tensor3<double>& values, const std::vector<ChannelDescriptor>& descriptors,
                         int block_size, DType dtype) {
  if (!descriptors.empty() && descriptors.size() != static_cast<std::size_t>(values.channels))
    throw ArgumentError("write_tensor: descriptor count != channel count");
  os.write("DFT1", 4);
  detail::put_le(os, kDft1Version, 4);
  detail::put_le(os, static_cast<std::uint32_t>(values.channels), 4);
  detail::put_le(os, static_cast<std::uint32_t>(values.height), 4);
  detail::put_le(os, static_cast<std::uint32_t>(values.width), 4);
  detail::put_u8(os, static_cast<std::uint8_t>(dtype));
  detail::put_le(os, descriptors.empty() ? 0u : static_cast<std::uint16_t>(block_size), 2);
  for (const auto& d : descriptors) {
    detail::put_u8(os, static_cast<std::uint8_t>(d.component));
    detail::put_u8(os, d.u);
    detail::put_u8(os, d.v);
  }
  for (double v : values.data) {
    if (dtype == DType::Float64) {
      std::uint64_t bits;
      std::memcpy(&bits, &v, 8);
      detail::put_le(os, bits, 8);
    } else {
      const float f = static_cast<float>(v);
      std::uint32_t bits;
      std::memcpy(&bits, &f, 4);
      detail::put_le(os, bits, 4);
    }
  }
  if (!os) throw IoError("write_tensor: stream write failed");
}

inline void write_tensor(std::ostream& os, const FrequencyTensor& t, DType dtype = DType::Float64) {
  write_tensor(os, t.coeffs, t.descriptors, t.block_size, dtype);
}

struct RawTensorFile {
  Tensor3<double> values;
  std::vector<ChannelDescriptor> descriptors;
  int block_size = 0;
  DType dtype = DType::Float64;
};

inline RawTensorFile read_raw_tensor(std::istream& is) {
  char magic[4] = {};
  is.read(magic, 4);
  if (!is || std::memcmp(magic, "DFT1", 4) != 0) throw FormatError("DFT1: bad magic");
  const auto version = detail::get_le(is, 4);
  if (version != kDft1Version) throw FormatError("DFT1: unsupported version " + std::to_string(version));
  RawTensorFile f;
  const auto c = detail::get_le(is, 4);
  const auto h = detail::get_le(is, 4);
  const auto w = detail::get_le(is, 4);
  if (c > (1u << 20) || h > (1u << 16) || w > (1u << 16)) throw FormatError("DFT1: implausible dimensions");
  const auto dtype = detail::get_le(is, 1);
  if (dtype > 1) throw FormatError("DFT1: unknown dtype code");
  f.dtype = static_cast<DType>(dtype);
  f.block_size = static_cast<int>(detail::get_le(is, 2));
  f.values = Tensor3<double>(static_cast<int>(c), static_cast<int>(h), static_cast<int>(w));
  if (f.block_size > 0) {
    f.descriptors.resize(c);
    for (auto& d : f.descriptors) {
      const auto comp = detail::get_le(is, 1);
      if (comp > 2) throw FormatError("DFT1: bad component code");
      d.component = static_cast<Component>(comp);
      d.u = static_cast<std::uint8_t>(detail::get_le(is, 1));
      d.v = static_cast<std::uint8_t>(detail::get_le(is, 1));
      if (d.u >= f.block_size || d.v >= f.block_size) throw FormatError("DFT1: descriptor frequency out of range");
    }
  }
  for (double& v : f.values.data) {
    if (f.dtype == DType::Float64) {
      const std::uint64_t bits = detail::get_le(is, 8);
      std::memcpy(&v, &bits, 8);
    } else {
      const auto bits = static_cast<std::uint32_t>(detail::get_le(is, 4));
      float fv;
      std::memcpy(&fv, &bits, 4);
      v = fv;
    }
  }
  return f;
}

inline FrequencyTensor read_tensor(std::istream& is) {
  auto raw = read_raw_tensor(is);
  if (raw.block_size == 0) throw FormatError("DFT1: container has no channel descriptors");
  FrequencyTensor t;
  t.block_size = raw.block_size;
  t.descriptors = std::move(raw.descriptors);
  t.coeffs = std::move(raw.values);
  t.source_height = t.coeffs.height * t.block_size;
  t.source_width = t.coeffs.width * t.block_size;
  return t;
}

inline void save_tensor(const std::string& path, const FrequencyTensor& t, DType dtype = DType::Float64) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError("cannot open for writing: " + path);
  write_tensor(os, t, dtype);
}

inline FrequencyTensor load_tensor(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open: " + path);
  return read_tensor(is);
}

}  // namespace densedct
