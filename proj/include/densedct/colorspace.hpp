#pragma once

#include <array>

#include "densedct/common.hpp"

namespace densedct {

// Planar RGB, unit-float intensities in [0, 1]. Planes stored R, G, B.
struct RgbImage {
  int width = 0;
  int height = 0;
  std::vector<double> data;

  RgbImage() = default;
  RgbImage(int w, int h, double fill = 0.0) : width(w), height(h), data(3 * static_cast<std::size_t>(w) * h, fill) {
    if (w < 1 || h < 1) throw ArgumentError("RgbImage: dimensions must be >= 1");
  }

  std::size_t plane_size() const { return static_cast<std::size_t>(width) * height; }
  double& at(int c, int r, int col) { return data[c * plane_size() + static_cast<std::size_t>(r) * width + col]; }
  double at(int c, int r, int col) const { return data[c * plane_size() + static_cast<std::size_t>(r) * width + col]; }

  Plane<double> plane(int c) const {
    Plane<double> p(height, width);
    std::copy_n(data.begin() + static_cast<std::ptrdiff_t>(c * plane_size()), plane_size(), p.data.begin());
    return p;
  }
  void set_plane(int c, const Plane<double>& p) {
    std::copy(p.data.begin(), p.data.end(), data.begin() + static_cast<std::ptrdiff_t>(c * plane_size()));
  }

  void validate() const {
    if (width < 1 || height < 1) throw ArgumentError("RgbImage: dimensions must be >= 1");
    if (data.size() != 3 * plane_size()) throw ArgumentError("RgbImage: data length != 3*width*height");
    for (double v : data)
      if (!(v >= 0.0 && v <= 1.0)) throw ArgumentError("RgbImage: intensity outside [0, 1]");
  }

  bool operator==(const RgbImage&) const = default;
};

// Y, Cb, Cr planes on the [0, 255] scale. Chroma is (H/2)×(W/2) when subsampled.
struct YcbcrImage {
  Plane<double> y;
  Plane<double> cb;
  Plane<double> cr;
  bool subsampled = false;

  void validate() const {
    const int ch = subsampled ? y.height / 2 : y.height;
    const int cw = subsampled ? y.width / 2 : y.width;
    if (subsampled && (y.height % 2 != 0 || y.width % 2 != 0))
      throw ArgumentError("YcbcrImage: subsampling requires even dimensions");
    if (cb.height != ch || cb.width != cw || cr.height != ch || cr.width != cw)
      throw ArgumentError("YcbcrImage: chroma plane dimensions inconsistent with subsampled flag");
  }
};

namespace detail {

using Mat3 = std::array<std::array<double, 3>, 3>;

// Full-range BT.601 (JFIF) forward matrix; offsets are +128 on Cb and Cr.
inline constexpr Mat3 kRgbToYcc{{{0.299, 0.587, 0.114},
                                 {-0.168736, -0.331264, 0.5},
                                 {0.5, -0.418688, -0.081312}}};

// Exact inverse of kRgbToYcc by cofactors; the rounded JFIF inverse
// constants are not a true inverse of the forward ones.
inline Mat3 invert(const Mat3& m) {
  const double det = m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1]) -
                     m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0]) +
                     m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0]);
  Mat3 inv{};
  inv[0][0] = (m[1][1] * m[2][2] - m[1][2] * m[2][1]) / det;
  inv[0][1] = (m[0][2] * m[2][1] - m[0][1] * m[2][2]) / det;
  inv[0][2] = (m[0][1] * m[1][2] - m[0][2] * m[1][1]) / det;
  inv[1][0] = (m[1][2] * m[2][0] - m[1][0] * m[2][2]) / det;
  inv[1][1] = (m[0][0] * m[2][2] - m[0][2] * m[2][0]) / det;
  inv[1][2] = (m[0][2] * m[1][0] - m[0][0] * m[1][2]) / det;
  inv[2][0] = (m[1][0] * m[2][1] - m[1][1] * m[2][0]) / det;
  inv[2][1] = (m[0][1] * m[2][0] - m[0][0] * m[2][1]) / det;
  inv[2][2] = (m[0][0] * m[1][1] - m[0][1] * m[1][0]) / det;
  return inv;
}

inline const Mat3& ycc_to_rgb_matrix() {
  static const Mat3 inv = invert(kRgbToYcc);
  return inv;
}

inline double clamp255(double v) { return std::clamp(v, 0.0, 255.0); }

}  // namespace detail

// Converts a single pixel given on the [0, 255] scale. No clamping.
inline std::array<double, 3> rgb_to_ycbcr_pixel(double r, double g, double b) {
  const auto& m = detail::kRgbToYcc;
  return {m[0][0] * r + m[0][1] * g + m[0][2] * b, 128.0 + m[1][0] * r + m[1][1] * g + m[1][2] * b,
          128.0 + m[2][0] * r + m[2][1] * g + m[2][2] * b};
}

inline std::array<double, 3> ycbcr_to_rgb_pixel(double y, double cb, double cr) {
  const auto& m = detail::ycc_to_rgb_matrix();
  const double db = cb - 128.0;
  const double dr = cr - 128.0;
  return {m[0][0] * y + m[0][1] * db + m[0][2] * dr, m[1][0] * y + m[1][1] * db + m[1][2] * dr,
          m[2][0] * y + m[2][1] * db + m[2][2] * dr};
}

inline YcbcrImage rgb_to_ycbcr(const RgbImage& img) {
  img.validate();
  YcbcrImage out{Plane<double>(img.height, img.width), Plane<double>(img.height, img.width),
                 Plane<double>(img.height, img.width), false};
  for (int r = 0; r < img.height; ++r) {
    for (int c = 0; c < img.width; ++c) {
      const auto ycc = rgb_to_ycbcr_pixel(255.0 * img.at(0, r, c), 255.0 * img.at(1, r, c), 255.0 * img.at(2, r, c));
      out.y(r, c) = detail::clamp255(ycc[0]);
      out.cb(r, c) = detail::clamp255(ycc[1]);
      out.cr(r, c) = detail::clamp255(ycc[2]);
    }
  }
  return out;
}

inline RgbImage ycbcr_to_rgb(const YcbcrImage& img) {
  if (img.subsampled) throw StateError("ycbcr_to_rgb: chroma is subsampled; call upsample_chroma first");
  img.validate();
  RgbImage out(img.y.width, img.y.height);
  for (int r = 0; r < img.y.height; ++r) {
    for (int c = 0; c < img.y.width; ++c) {
      const auto rgb = ycbcr_to_rgb_pixel(img.y(r, c), img.cb(r, c), img.cr(r, c));
      for (int k = 0; k < 3; ++k) out.at(k, r, c) = detail::clamp255(rgb[k]) / 255.0;
    }
  }
  return out;
}

inline Plane<double> box_downsample2(const Plane<double>& p) {
  if (p.height % 2 != 0 || p.width % 2 != 0) throw ArgumentError("box_downsample2: odd dimensions");
  Plane<double> out(p.height / 2, p.width / 2);
  for (int r = 0; r < out.height; ++r)
    for (int c = 0; c < out.width; ++c)
      out(r, c) = 0.25 * (p(2 * r, 2 * c) + p(2 * r, 2 * c + 1) + p(2 * r + 1, 2 * c) + p(2 * r + 1, 2 * c + 1));
  return out;
}

inline Plane<double> nearest_upsample2(const Plane<double>& p) {
  Plane<double> out(p.height * 2, p.width * 2);
  for (int r = 0; r < out.height; ++r)
    for (int c = 0; c < out.width; ++c) out(r, c) = p(r / 2, c / 2);
  return out;
}

// 4:2:0 by 2×2 box averaging. Luma is copied untouched.
inline YcbcrImage subsample_chroma(const YcbcrImage& img) {
  if (img.subsampled) throw StateError("subsample_chroma: already subsampled");
  img.validate();
  if (img.y.height % 2 != 0 || img.y.width % 2 != 0) throw ArgumentError("subsample_chroma: odd image dimensions");
  return {img.y, box_downsample2(img.cb), box_downsample2(img.cr), true};
}

// Replicates each chroma sample over a 2×2 area.
inline YcbcrImage upsample_chroma(const YcbcrImage& img) {
  if (!img.subsampled) return img;
  img.validate();
  return {img.y, nearest_upsample2(img.cb), nearest_upsample2(img.cr), false};
}

}  // namespace densedct
