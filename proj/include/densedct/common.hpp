#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <iomanip>
#include <random>
#include <sstream>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace densedct {

// Error taxonomy shared by every module.
struct ArgumentError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};
struct FormatError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct IoError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct StateError : std::logic_error {
  using std::logic_error::logic_error;
};
struct TrainingError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Shortest text that round-trips a double.
inline std::string format_double(double v) {
  std::ostringstream os;
  os << std::setprecision(17) << v;
  return os.str();
}

// Row-major 2-D array of samples.
template <typename T>
struct Plane {
  int height = 0;
  int width = 0;
  std::vector<T> data;

  Plane() = default;
  Plane(int h, int w, T fill = T{}) : height(h), width(w), data(static_cast<std::size_t>(h) * w, fill) {}

  T& operator()(int r, int c) { return data[static_cast<std::size_t>(r) * width + c]; }
  const T& operator()(int r, int c) const { return data[static_cast<std::size_t>(r) * width + c]; }
  std::size_t size() const { return data.size(); }
  bool operator==(const Plane&) const = default;
};

// Channel-major C×H×W tensor.
template <typename T>
struct Tensor3 {
  int channels = 0;
  int height = 0;
  int width = 0;
  std::vector<T> data;

  Tensor3() = default;
  Tensor3(int c, int h, int w, T fill = T{})
      : channels(c), height(h), width(w), data(static_cast<std::size_t>(c) * h * w, fill) {}

  std::size_t plane_size() const { return static_cast<std::size_t>(height) * width; }
  T& operator()(int c, int r, int col) { return data[(c * plane_size()) + static_cast<std::size_t>(r) * width + col]; }
  const T& operator()(int c, int r, int col) const {
    return data[(c * plane_size()) + static_cast<std::size_t>(r) * width + col];
  }
  std::span<T> channel(int c) { return {data.data() + c * plane_size(), plane_size()}; }
  std::span<const T> channel(int c) const { return {data.data() + c * plane_size(), plane_size()}; }
  bool operator==(const Tensor3&) const = default;

  template <typename U>
  Tensor3<U> cast() const {
    Tensor3<U> out(channels, height, width);
    for (std::size_t i = 0; i < data.size(); ++i) out.data[i] = static_cast<U>(data[i]);
    return out;
  }
};

// Pairwise (tree) summation: error grows O(log n) instead of O(n).
template <typename T>
T pairwise_sum(std::span<const T> xs) {
  constexpr std::size_t kLeaf = 32;
  if (xs.size() <= kLeaf) {
    T acc{};
    for (const T& x : xs) acc += x;
    return acc;
  }
  const std::size_t half = xs.size() / 2;
  return pairwise_sum(xs.first(half)) + pairwise_sum(xs.subspan(half));
}

template <typename T>
T pairwise_sum_squares(std::span<const T> xs) {
  std::vector<T> sq(xs.size());
  for (std::size_t i = 0; i < xs.size(); ++i) sq[i] = xs[i] * xs[i];
  return pairwise_sum(std::span<const T>(sq));
}

// Seeded generator. std distributions are implementation-defined; these
// draws are bit-identical on every platform.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  std::uint64_t next() { return engine_(); }
  // Uniform in [0, 1).
  double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
  // Uniform integer in [0, n).
  std::uint64_t below(std::uint64_t n) { return engine_() % n; }
  // Box-Muller, one value per call.
  double normal() {
    double u1 = uniform();
    while (u1 <= 0.0) u1 = uniform();
    const double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * M_PI * u2);
  }

  template <typename It>
  void shuffle(It first, It last) {
    const auto n = static_cast<std::uint64_t>(last - first);
    for (std::uint64_t i = n; i > 1; --i) std::swap(first[i - 1], first[below(i)]);
  }

 private:
  std::mt19937_64 engine_;
};

// Bilinear resampling of one plane, edge-clamped, align-corners = false.
inline Plane<double> resample_bilinear(const Plane<double>& src, int target_h, int target_w) {
  Plane<double> out(target_h, target_w);
  const double sy = static_cast<double>(src.height) / target_h;
  const double sx = static_cast<double>(src.width) / target_w;
  for (int r = 0; r < target_h; ++r) {
    double fy = (r + 0.5) * sy - 0.5;
    fy = std::clamp(fy, 0.0, static_cast<double>(src.height - 1));
    const int y0 = static_cast<int>(std::floor(fy));
    const int y1 = std::min(y0 + 1, src.height - 1);
    const double wy = fy - y0;
    for (int c = 0; c < target_w; ++c) {
      double fx = (c + 0.5) * sx - 0.5;
      fx = std::clamp(fx, 0.0, static_cast<double>(src.width - 1));
      const int x0 = static_cast<int>(std::floor(fx));
      const int x1 = std::min(x0 + 1, src.width - 1);
      const double wx = fx - x0;
      const double top = std::lerp(src(y0, x0), src(y0, x1), wx);
      const double bottom = std::lerp(src(y1, x0), src(y1, x1), wx);
      out(r, c) = std::lerp(top, bottom, wy);
    }
  }
  return out;
}

inline Plane<double> resample_nearest(const Plane<double>& src, int target_h, int target_w) {
  Plane<double> out(target_h, target_w);
  for (int r = 0; r < target_h; ++r) {
    const int y = std::min(static_cast<int>((r + 0.5) * src.height / target_h), src.height - 1);
    for (int c = 0; c < target_w; ++c) {
      const int x = std::min(static_cast<int>((c + 0.5) * src.width / target_w), src.width - 1);
      out(r, c) = src(y, x);
    }
  }
  return out;
}

}  // namespace densedct
