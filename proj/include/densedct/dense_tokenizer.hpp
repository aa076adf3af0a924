#pragma once

#include <fstream>

#include <nlohmann/json.hpp>

#include "densedct/channel_selection.hpp"

namespace densedct {

// (H·W) tokens of dimension D, row-major over positions.
template <typename T>
struct TokenGrid {
  int height = 0;
  int width = 0;
  int dim = 0;
  std::vector<T> tokens;

  std::size_t count() const { return static_cast<std::size_t>(height) * width; }
  std::span<const T> token(std::size_t p) const { return {tokens.data() + p * dim, static_cast<std::size_t>(dim)}; }

  // D×H×W view, the layout attention and the DFT1 container use.
  Tensor3<T> to_chw() const {
    Tensor3<T> t(dim, height, width);
    for (std::size_t p = 0; p < count(); ++p)
      for (int d = 0; d < dim; ++d) t.data[d * count() + p] = tokens[p * dim + d];
    return t;
  }
  static TokenGrid from_chw(const Tensor3<T>& t) {
    TokenGrid g{t.height, t.width, t.channels, std::vector<T>(t.data.size())};
    for (std::size_t p = 0; p < g.count(); ++p)
      for (int d = 0; d < g.dim; ++d) g.tokens[p * g.dim + d] = t.data[d * g.count() + p];
    return g;
  }
};

// token_p = Wᵀ·x_p + b, with W stored in_dim × dim.
template <typename T>
struct LinearEmbedding {
  int in_dim = 0;
  int dim = 0;
  std::vector<T> weight;  // [in][dim]
  std::vector<T> bias;    // [dim]
};

// Uniform in ±sqrt(1/fan_in); bias drawn the same way.
template <typename T>
LinearEmbedding<T> make_linear_embedding(int in_dim, int dim, std::uint64_t seed) {
  if (in_dim < 1 || dim < 1) throw ArgumentError("make_linear_embedding: dimensions must be >= 1");
  Rng rng(seed);
  LinearEmbedding<T> e{in_dim, dim, std::vector<T>(static_cast<std::size_t>(in_dim) * dim), std::vector<T>(dim)};
  const double bound = std::sqrt(1.0 / in_dim);
  for (auto& w : e.weight) w = static_cast<T>(rng.uniform(-bound, bound));
  for (auto& b : e.bias) b = static_cast<T>(rng.uniform(-bound, bound));
  return e;
}

template <typename T>
TokenGrid<T> dense_embed(const Tensor3<T>& x, const LinearEmbedding<T>& e) {
  if (x.channels != e.in_dim) throw ArgumentError("dense_embed: weight rows != input channel count");
  if (e.weight.size() != static_cast<std::size_t>(e.in_dim) * e.dim || e.bias.size() != static_cast<std::size_t>(e.dim))
    throw ArgumentError("dense_embed: malformed weights");
  TokenGrid<T> g{x.height, x.width, e.dim, std::vector<T>(x.plane_size() * e.dim)};
  for (std::size_t p = 0; p < g.count(); ++p) {
    T* tok = g.tokens.data() + p * e.dim;
    std::copy(e.bias.begin(), e.bias.end(), tok);
    for (int c = 0; c < e.in_dim; ++c) {
      const T v = x.data[c * x.plane_size() + p];
      const T* row = e.weight.data() + static_cast<std::size_t>(c) * e.dim;
      for (int d = 0; d < e.dim; ++d) tok[d] += row[d] * v;
    }
  }
  return g;
}

inline TokenGrid<double> dense_embed(const DenseTensor& d, const LinearEmbedding<double>& e) {
  return dense_embed(d.values.coeffs, e);
}

template <typename T>
struct EmbedGradients {
  std::vector<T> weight;
  std::vector<T> bias;
  Tensor3<T> input;
};

template <typename T>
EmbedGradients<T> dense_embed_backward(const Tensor3<T>& x, const LinearEmbedding<T>& e, const TokenGrid<T>& dtokens) {
  if (dtokens.dim != e.dim || dtokens.count() != x.plane_size()) throw ArgumentError("dense_embed_backward: shape mismatch");
  EmbedGradients<T> g{std::vector<T>(e.weight.size(), T(0)), std::vector<T>(e.dim, T(0)),
                      Tensor3<T>(x.channels, x.height, x.width)};
  for (std::size_t p = 0; p < x.plane_size(); ++p) {
    const T* dt = dtokens.tokens.data() + p * e.dim;
    for (int d = 0; d < e.dim; ++d) g.bias[d] += dt[d];
    for (int c = 0; c < e.in_dim; ++c) {
      const T v = x.data[c * x.plane_size() + p];
      const T* row = e.weight.data() + static_cast<std::size_t>(c) * e.dim;
      T* grow = g.weight.data() + static_cast<std::size_t>(c) * e.dim;
      T acc{};
      for (int d = 0; d < e.dim; ++d) {
        grow[d] += dt[d] * v;
        acc += row[d] * dt[d];
      }
      g.input.data[c * x.plane_size() + p] = acc;
    }
  }
  return g;
}

// Non-overlapping P×P RGB patches, flattened channel-major (c, py, px) and
// projected with `e` (in_dim = 3·P²).
template <typename T>
TokenGrid<T> patch_embed_rgb(const RgbImage& img, int patch, const LinearEmbedding<T>& e) {
  if (patch < 1) throw ArgumentError("patch_embed_rgb: patch size must be >= 1");
  if (img.width % patch || img.height % patch) throw ArgumentError("patch_embed_rgb: dimensions not divisible by patch");
  if (e.in_dim != 3 * patch * patch) throw ArgumentError("patch_embed_rgb: embedding expects 3*P*P inputs");
  const int gh = img.height / patch;
  const int gw = img.width / patch;
  Tensor3<T> flat(e.in_dim, gh, gw);
  for (int r = 0; r < gh; ++r)
    for (int c = 0; c < gw; ++c)
      for (int k = 0; k < 3; ++k)
        for (int py = 0; py < patch; ++py)
          for (int px = 0; px < patch; ++px)
            flat((k * patch + py) * patch + px, r, c) = static_cast<T>(img.at(k, r * patch + py, c * patch + px));
  return dense_embed(flat, e);
}

// --- Coordinate attention -------------------------------------------------
//
// Pool along width (C×H) and height (C×W), shared 1×1 reduction to C/r with
// h-swish, then per-direction 1×1 expansions and sigmoid gates:
//   out[c,i,j] = x[c,i,j] · a_h[c,i] · a_w[c,j]

template <typename T>
struct CoordinateAttention {
  int channels = 0;
  int reduction = 2;
  int mid = 0;
  std::vector<T> w1, b1;  // [mid][C], [mid]
  std::vector<T> wh, bh;  // [C][mid], [C]
  std::vector<T> ww, bw;  // [C][mid], [C]

  std::vector<std::vector<T>*> parameters() { return {&w1, &b1, &wh, &bh, &ww, &bw}; }
};

template <typename T>
CoordinateAttention<T> make_coordinate_attention(int channels, int reduction, std::uint64_t seed) {
  if (channels < 1 || reduction < 1) throw ArgumentError("coordinate_attention: channels and reduction must be >= 1");
  if (channels % reduction != 0) throw ArgumentError("coordinate_attention: channels not divisible by reduction ratio");
  CoordinateAttention<T> a;
  a.channels = channels;
  a.reduction = reduction;
  a.mid = channels / reduction;
  Rng rng(seed);
  auto fill = [&](std::vector<T>& v, std::size_t n, int fan_in) {
    const double bound = std::sqrt(1.0 / fan_in);
    v.resize(n);
    for (auto& x : v) x = static_cast<T>(rng.uniform(-bound, bound));
  };
  fill(a.w1, static_cast<std::size_t>(a.mid) * channels, channels);
  fill(a.b1, a.mid, channels);
  fill(a.wh, static_cast<std::size_t>(channels) * a.mid, a.mid);
  fill(a.bh, channels, a.mid);
  fill(a.ww, static_cast<std::size_t>(channels) * a.mid, a.mid);
  fill(a.bw, channels, a.mid);
  return a;
}

namespace detail {

template <typename T>
T hswish(T z) {
  return z * std::clamp(z + T(3), T(0), T(6)) / T(6);
}
template <typename T>
T hswish_grad(T z) {
  if (z <= T(-3)) return T(0);
  if (z >= T(3)) return T(1);
  return (T(2) * z + T(3)) / T(6);
}
template <typename T>
T sigmoid(T z) {
  return T(1) / (T(1) + std::exp(-z));
}

}  // namespace detail

template <typename T>
struct AttentionCache {
  Tensor3<T> input;
  std::vector<T> pooled;  // [C][H+W]: width-pooled rows then height-pooled columns
  std::vector<T> z1;      // [mid][H+W]
  std::vector<T> hidden;  // [mid][H+W]
  std::vector<T> gate_h;  // [C][H]
  std::vector<T> gate_w;  // [C][W]
};

template <typename T>
Tensor3<T> coordinate_attention(const Tensor3<T>& x, const CoordinateAttention<T>& a, AttentionCache<T>* cache = nullptr) {
  if (x.channels != a.channels) throw ArgumentError("coordinate_attention: channel count mismatch");
  if (x.channels % a.reduction != 0) throw ArgumentError("coordinate_attention: channels not divisible by reduction ratio");
  const int c_n = x.channels, h = x.height, w = x.width, l = h + w, mid = a.mid;
  std::vector<T> pooled(static_cast<std::size_t>(c_n) * l, T(0));
  for (int c = 0; c < c_n; ++c) {
    for (int i = 0; i < h; ++i) {
      T acc{};
      for (int j = 0; j < w; ++j) acc += x(c, i, j);
      pooled[c * l + i] = acc / static_cast<T>(w);
    }
    for (int j = 0; j < w; ++j) {
      T acc{};
      for (int i = 0; i < h; ++i) acc += x(c, i, j);
      pooled[c * l + h + j] = acc / static_cast<T>(h);
    }
  }
  std::vector<T> z1(static_cast<std::size_t>(mid) * l), hidden(z1.size());
  for (int m = 0; m < mid; ++m)
    for (int p = 0; p < l; ++p) {
      T acc = a.b1[m];
      for (int c = 0; c < c_n; ++c) acc += a.w1[static_cast<std::size_t>(m) * c_n + c] * pooled[c * l + p];
      z1[m * l + p] = acc;
      hidden[m * l + p] = detail::hswish(acc);
    }
  std::vector<T> gh(static_cast<std::size_t>(c_n) * h), gw(static_cast<std::size_t>(c_n) * w);
  for (int c = 0; c < c_n; ++c) {
    for (int i = 0; i < h; ++i) {
      T acc = a.bh[c];
      for (int m = 0; m < mid; ++m) acc += a.wh[static_cast<std::size_t>(c) * mid + m] * hidden[m * l + i];
      gh[c * h + i] = detail::sigmoid(acc);
    }
    for (int j = 0; j < w; ++j) {
      T acc = a.bw[c];
      for (int m = 0; m < mid; ++m) acc += a.ww[static_cast<std::size_t>(c) * mid + m] * hidden[m * l + h + j];
      gw[c * w + j] = detail::sigmoid(acc);
    }
  }
  Tensor3<T> out(c_n, h, w);
  for (int c = 0; c < c_n; ++c)
    for (int i = 0; i < h; ++i)
      for (int j = 0; j < w; ++j) out(c, i, j) = x(c, i, j) * gh[c * h + i] * gw[c * w + j];
  if (cache) *cache = {x, std::move(pooled), std::move(z1), std::move(hidden), std::move(gh), std::move(gw)};
  return out;
}

template <typename T>
struct AttentionGradients {
  std::vector<T> w1, b1, wh, bh, ww, bw;
  Tensor3<T> input;

  std::vector<std::vector<T>*> tensors() { return {&w1, &b1, &wh, &bh, &ww, &bw}; }
};

template <typename T>
AttentionGradients<T> coordinate_attention_backward(const CoordinateAttention<T>& a, const AttentionCache<T>& cache,
                                                    const Tensor3<T>& dout) {
  const auto& x = cache.input;
  const int c_n = x.channels, h = x.height, w = x.width, l = h + w, mid = a.mid;
  if (dout.channels != c_n || dout.height != h || dout.width != w)
    throw ArgumentError("coordinate_attention_backward: shape mismatch");
  AttentionGradients<T> g{std::vector<T>(a.w1.size(), T(0)), std::vector<T>(a.b1.size(), T(0)),
                          std::vector<T>(a.wh.size(), T(0)), std::vector<T>(a.bh.size(), T(0)),
                          std::vector<T>(a.ww.size(), T(0)), std::vector<T>(a.bw.size(), T(0)),
                          Tensor3<T>(c_n, h, w)};
  std::vector<T> dzh(static_cast<std::size_t>(c_n) * h, T(0)), dzw(static_cast<std::size_t>(c_n) * w, T(0));
  for (int c = 0; c < c_n; ++c)
    for (int i = 0; i < h; ++i)
      for (int j = 0; j < w; ++j) {
        const T go = dout(c, i, j);
        const T ah = cache.gate_h[c * h + i];
        const T aw = cache.gate_w[c * w + j];
        g.input(c, i, j) = go * ah * aw;
        dzh[c * h + i] += go * x(c, i, j) * aw;
        dzw[c * w + j] += go * x(c, i, j) * ah;
      }
  for (int c = 0; c < c_n; ++c) {
    for (int i = 0; i < h; ++i) {
      const T s = cache.gate_h[c * h + i];
      dzh[c * h + i] *= s * (T(1) - s);
    }
    for (int j = 0; j < w; ++j) {
      const T s = cache.gate_w[c * w + j];
      dzw[c * w + j] *= s * (T(1) - s);
    }
  }
  std::vector<T> dhidden(static_cast<std::size_t>(mid) * l, T(0));
  for (int c = 0; c < c_n; ++c) {
    for (int i = 0; i < h; ++i) {
      const T d = dzh[c * h + i];
      g.bh[c] += d;
      for (int m = 0; m < mid; ++m) {
        g.wh[static_cast<std::size_t>(c) * mid + m] += d * cache.hidden[m * l + i];
        dhidden[m * l + i] += a.wh[static_cast<std::size_t>(c) * mid + m] * d;
      }
    }
    for (int j = 0; j < w; ++j) {
      const T d = dzw[c * w + j];
      g.bw[c] += d;
      for (int m = 0; m < mid; ++m) {
        g.ww[static_cast<std::size_t>(c) * mid + m] += d * cache.hidden[m * l + h + j];
        dhidden[m * l + h + j] += a.ww[static_cast<std::size_t>(c) * mid + m] * d;
      }
    }
  }
  std::vector<T> dpooled(static_cast<std::size_t>(c_n) * l, T(0));
  for (int m = 0; m < mid; ++m)
    for (int p = 0; p < l; ++p) {
      const T dz = dhidden[m * l + p] * detail::hswish_grad(cache.z1[m * l + p]);
      g.b1[m] += dz;
      for (int c = 0; c < c_n; ++c) {
        g.w1[static_cast<std::size_t>(m) * c_n + c] += dz * cache.pooled[c * l + p];
        dpooled[c * l + p] += a.w1[static_cast<std::size_t>(m) * c_n + c] * dz;
      }
    }
  for (int c = 0; c < c_n; ++c)
    for (int i = 0; i < h; ++i)
      for (int j = 0; j < w; ++j)
        g.input(c, i, j) += dpooled[c * l + i] / static_cast<T>(w) + dpooled[c * l + h + j] / static_cast<T>(h);
  return g;
}

// --- Weight files ---------------------------------------------------------

inline void save_embedding(const LinearEmbedding<double>& e, const std::string& path) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError("cannot open for writing: " + path);
  nlohmann::json j{{"in_dim", e.in_dim}, {"dim", e.dim}, {"weight", e.weight}, {"bias", e.bias}};
  os << j.dump() << '\n';
}

inline LinearEmbedding<double> load_embedding(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw IoError("cannot open: " + path);
  LinearEmbedding<double> e;
  try {
    const auto j = nlohmann::json::parse(is);
    e.in_dim = j.at("in_dim").get<int>();
    e.dim = j.at("dim").get<int>();
    e.weight = j.at("weight").get<std::vector<double>>();
    e.bias = j.at("bias").get<std::vector<double>>();
  } catch (const nlohmann::json::exception& ex) {
    throw FormatError(std::string("embedding JSON: ") + ex.what());
  }
  if (e.in_dim < 1 || e.dim < 1 || e.weight.size() != static_cast<std::size_t>(e.in_dim) * e.dim ||
      e.bias.size() != static_cast<std::size_t>(e.dim))
    throw FormatError("embedding JSON: inconsistent shapes");
  return e;
}

// Token grids go into DFT1 as float32 D×H×W without descriptors.
inline void save_tokens(const TokenGrid<double>& g, const std::string& path) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError("cannot open for writing: " + path);
  write_tensor(os, g.to_chw(), {}, 0, DType::Float32);
}

inline TokenGrid<double> load_tokens(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open: " + path);
  return TokenGrid<double>::from_chw(read_raw_tensor(is).values);
}

}  // namespace densedct
