#pragma once

#include <algorithm>
#include <atomic>
#include <fstream>
#include <functional>
#include <numeric>
#include <optional>
#include <sstream>
#include <thread>

#include <nlohmann/json.hpp>

#include "densedct/channel_selection.hpp"
#include "densedct/image_io.hpp"

namespace densedct {

enum class HeadType { Cosine, Linear };
enum class HeatmapNormalization { JointMax, Raw };

inline const char* head_name(HeadType h) { return h == HeadType::Cosine ? "cosine" : "linear"; }
inline HeadType parse_head(const std::string& s) {
  if (s == "cosine") return HeadType::Cosine;
  if (s == "linear") return HeadType::Linear;
  throw ArgumentError("unknown head type: " + s);
}
inline const char* normalization_name(HeatmapNormalization n) {
  return n == HeatmapNormalization::JointMax ? "joint-max" : "raw";
}
inline HeatmapNormalization parse_normalization(const std::string& s) {
  if (s == "joint-max") return HeatmapNormalization::JointMax;
  if (s == "raw") return HeatmapNormalization::Raw;
  throw ArgumentError("unknown heatmap normalization: " + s);
}

struct ProbeConfig {
  int in_channels = 192;
  int class_count = 2;
  std::vector<int> widths{32, 64, 128};
  std::vector<int> strides{1, 2, 2};
  HeadType head = HeadType::Cosine;
  double cosine_scale = 16.0;
  std::uint64_t seed = 0;
};

inline constexpr double kCosineEps = 1e-8;

// 3×3 convolution, zero padding 1, followed by ReLU.
template <typename T>
struct ConvStage {
  int in_channels = 0;
  int out_channels = 0;
  int stride = 1;
  std::vector<T> weight;  // [out][in][3][3]
  std::vector<T> bias;    // [out]

  int out_dim(int in) const { return (in - 1) / stride + 1; }
  T& w(int o, int i, int ky, int kx) { return weight[((static_cast<std::size_t>(o) * in_channels + i) * 3 + ky) * 3 + kx]; }
  T w(int o, int i, int ky, int kx) const {
    return weight[((static_cast<std::size_t>(o) * in_channels + i) * 3 + ky) * 3 + kx];
  }
};

template <typename T>
struct ProbeModel {
  ProbeConfig config;
  std::vector<ConvStage<T>> stages;
  std::vector<T> head_weight;  // [class][D]: linear weights or cosine prototypes (unnormalized)
  std::vector<T> head_bias;    // [class]; linear head only
  std::vector<T> input_mean;   // per input channel
  std::vector<T> input_std;
  std::uint64_t revision = 0;  // bumped on every parameter update

  int feature_dim() const { return stages.empty() ? config.in_channels : stages.back().out_channels; }
  int class_count() const { return config.class_count; }

  std::vector<std::string> tap_names() const {
    std::vector<std::string> names;
    for (std::size_t i = 0; i < stages.size(); ++i) names.push_back("block" + std::to_string(i + 1));
    return names;
  }
  std::string default_tap() const { return "block" + std::to_string(stages.size()); }
  int tap_index(const std::string& name) const {
    const auto names = tap_names();
    const auto it = std::find(names.begin(), names.end(), name);
    if (it == names.end()) throw ArgumentError("unknown tap: " + name);
    return static_cast<int>(it - names.begin());
  }

  // Every trainable tensor, in a fixed order.
  std::vector<std::vector<T>*> parameters() {
    std::vector<std::vector<T>*> ps;
    for (auto& s : stages) {
      ps.push_back(&s.weight);
      ps.push_back(&s.bias);
    }
    ps.push_back(&head_weight);
    if (config.head == HeadType::Linear) ps.push_back(&head_bias);
    return ps;
  }

  template <typename U>
  ProbeModel<U> cast() const {
    ProbeModel<U> m;
    m.config = config;
    auto conv = [](const std::vector<T>& v) { return std::vector<U>(v.begin(), v.end()); };
    for (const auto& s : stages) m.stages.push_back({s.in_channels, s.out_channels, s.stride, conv(s.weight), conv(s.bias)});
    m.head_weight = conv(head_weight);
    m.head_bias = conv(head_bias);
    m.input_mean = conv(input_mean);
    m.input_std = conv(input_std);
    return m;
  }
};

template <typename T>
ProbeModel<T> make_probe(const ProbeConfig& cfg) {
  if (cfg.in_channels < 1 || cfg.class_count < 2) throw ArgumentError("make_probe: need >= 1 input channel and >= 2 classes");
  if (cfg.widths.size() != cfg.strides.size() || cfg.widths.empty())
    throw ArgumentError("make_probe: widths and strides must be non-empty and equally long");
  Rng rng(cfg.seed);
  ProbeModel<T> m;
  m.config = cfg;
  int in = cfg.in_channels;
  for (std::size_t i = 0; i < cfg.widths.size(); ++i) {
    if (cfg.widths[i] < 1 || cfg.strides[i] < 1) throw ArgumentError("make_probe: widths/strides must be positive");
    ConvStage<T> s{in, cfg.widths[i], cfg.strides[i], {}, {}};
    const double bound = std::sqrt(6.0 / (9.0 * in));  // He-uniform
    s.weight.resize(static_cast<std::size_t>(s.out_channels) * in * 9);
    for (auto& w : s.weight) w = static_cast<T>(rng.uniform(-bound, bound));
    s.bias.assign(s.out_channels, T(0));
    m.stages.push_back(std::move(s));
    in = cfg.widths[i];
  }
  const int d = m.feature_dim();
  m.head_weight.resize(static_cast<std::size_t>(cfg.class_count) * d);
  if (cfg.head == HeadType::Cosine) {
    for (auto& w : m.head_weight) w = static_cast<T>(rng.normal());
  } else {
    const double bound = std::sqrt(1.0 / d);
    for (auto& w : m.head_weight) w = static_cast<T>(rng.uniform(-bound, bound));
  }
  m.head_bias.assign(cfg.class_count, T(0));
  m.input_mean.assign(cfg.in_channels, T(0));
  m.input_std.assign(cfg.in_channels, T(1));
  return m;
}

// --- Forward --------------------------------------------------------------

template <typename T>
struct ForwardCache {
  std::uint64_t revision = 0;
  const void* model = nullptr;
  Tensor3<T> input;             // standardized
  std::vector<Tensor3<T>> pre;  // conv outputs before ReLU
  std::vector<Tensor3<T>> post; // tap activations (after ReLU)
  std::vector<T> feature;
  std::vector<T> logits;
};

namespace detail {

// Patch matrix [position][in*9] in weight order (i, ky, kx); zero padded.
template <typename T>
std::vector<T> im2col(const Tensor3<T>& in, int oh, int ow, int st) {
  const std::size_t k_n = static_cast<std::size_t>(in.channels) * 9;
  std::vector<T> col(static_cast<std::size_t>(oh) * ow * k_n, T(0));
  for (int r = 0; r < oh; ++r)
    for (int c = 0; c < ow; ++c) {
      T* dst = col.data() + (static_cast<std::size_t>(r) * ow + c) * k_n;
      for (int ky = 0; ky < 3; ++ky) {
        const int y = r * st + ky - 1;
        if (y < 0 || y >= in.height) continue;
        for (int kx = 0; kx < 3; ++kx) {
          const int x = c * st + kx - 1;
          if (x < 0 || x >= in.width) continue;
          for (int i = 0; i < in.channels; ++i) dst[i * 9 + ky * 3 + kx] = in(i, y, x);
        }
      }
    }
  return col;
}

template <typename T>
Tensor3<T> conv3x3(const ConvStage<T>& s, const Tensor3<T>& in) {
  const int oh = s.out_dim(in.height);
  const int ow = s.out_dim(in.width);
  const int st = s.stride;
  Tensor3<T> out(s.out_channels, oh, ow);
  std::vector<char> active(in.channels, 0);
  int active_count = 0;
  for (int i = 0; i < in.channels; ++i) {
    const auto ch = in.channel(i);
    active[i] = std::any_of(ch.begin(), ch.end(), [](T v) { return v != T(0); });
    active_count += active[i];
  }
  if (4 * active_count >= in.channels) {
    const std::size_t k_n = static_cast<std::size_t>(in.channels) * 9;
    const auto col = im2col(in, oh, ow, st);
    for (int o = 0; o < s.out_channels; ++o) {
      const T* w = s.weight.data() + o * k_n;
      for (std::size_t p = 0; p < out.plane_size(); ++p) {
        const T* x = col.data() + p * k_n;
        T acc{};
        for (std::size_t k = 0; k < k_n; ++k) acc += w[k] * x[k];
        out.data[o * out.plane_size() + p] = s.bias[o] + acc;
      }
    }
    return out;
  }
  // Sparse path: masked heatmap inputs have a single live channel.
  for (int o = 0; o < s.out_channels; ++o) {
    auto dst = out.channel(o);
    std::fill(dst.begin(), dst.end(), s.bias[o]);
    for (int i = 0; i < in.channels; ++i) {
      if (!active[i]) continue;
      for (int ky = 0; ky < 3; ++ky)
        for (int kx = 0; kx < 3; ++kx) {
          const T w = s.w(o, i, ky, kx);
          for (int r = 0; r < oh; ++r) {
            const int y = r * st + ky - 1;
            if (y < 0 || y >= in.height) continue;
            for (int c = 0; c < ow; ++c) {
              const int x = c * st + kx - 1;
              if (x < 0 || x >= in.width) continue;
              out(o, r, c) += w * in(i, y, x);
            }
          }
        }
    }
  }
  return out;
}

// Gradients of a conv stage given d(loss)/d(pre-activation).
template <typename T>
void conv3x3_backward(const ConvStage<T>& s, const Tensor3<T>& in, const Tensor3<T>& dz, std::vector<T>* dw,
                      std::vector<T>* db, Tensor3<T>* din) {
  const int st = s.stride;
  const std::size_t k_n = static_cast<std::size_t>(in.channels) * 9;
  const std::size_t positions = dz.plane_size();
  const auto col = im2col(in, dz.height, dz.width, st);
  std::vector<T> dcol(din ? col.size() : 0, T(0));
  for (int o = 0; o < s.out_channels; ++o) {
    const auto g_o = dz.channel(o);
    const T* w = s.weight.data() + o * k_n;
    T* gw = dw ? dw->data() + o * k_n : nullptr;
    T bias_acc{};
    for (std::size_t p = 0; p < positions; ++p) {
      const T g = g_o[p];
      if (g == T(0)) continue;
      bias_acc += g;
      if (gw) {
        const T* x = col.data() + p * k_n;
        for (std::size_t k = 0; k < k_n; ++k) gw[k] += g * x[k];
      }
      if (din) {
        T* dx = dcol.data() + p * k_n;
        for (std::size_t k = 0; k < k_n; ++k) dx[k] += g * w[k];
      }
    }
    if (db) (*db)[o] += bias_acc;
  }
  if (!din) return;
  *din = Tensor3<T>(in.channels, in.height, in.width);
  for (int r = 0; r < dz.height; ++r)
    for (int c = 0; c < dz.width; ++c) {
      const T* src = dcol.data() + (static_cast<std::size_t>(r) * dz.width + c) * k_n;
      for (int ky = 0; ky < 3; ++ky) {
        const int y = r * st + ky - 1;
        if (y < 0 || y >= in.height) continue;
        for (int kx = 0; kx < 3; ++kx) {
          const int x = c * st + kx - 1;
          if (x < 0 || x >= in.width) continue;
          for (int i = 0; i < in.channels; ++i) (*din)(i, y, x) += src[i * 9 + ky * 3 + kx];
        }
      }
    }
}

template <typename T>
T l2norm(std::span<const T> v) {
  T acc{};
  for (T x : v) acc += x * x;
  return std::sqrt(acc);
}

template <typename T>
std::vector<T> head_forward(const ProbeModel<T>& m, const std::vector<T>& f) {
  const int d = m.feature_dim();
  std::vector<T> logits(m.class_count());
  if (m.config.head == HeadType::Linear) {
    for (int k = 0; k < m.class_count(); ++k) {
      T acc = m.head_bias[k];
      for (int j = 0; j < d; ++j) acc += m.head_weight[static_cast<std::size_t>(k) * d + j] * f[j];
      logits[k] = acc;
    }
  } else {
    const T nf = l2norm<T>(f) + T(kCosineEps);
    for (int k = 0; k < m.class_count(); ++k) {
      std::span<const T> w(m.head_weight.data() + static_cast<std::size_t>(k) * d, d);
      const T nw = l2norm<T>(w) + T(kCosineEps);
      T dot{};
      for (int j = 0; j < d; ++j) dot += f[j] * w[j];
      logits[k] = static_cast<T>(m.config.cosine_scale) * dot / (nf * nw);
    }
  }
  return logits;
}

template <typename T>
std::vector<T> global_average(const Tensor3<T>& a) {
  std::vector<T> f(a.channels);
  const T inv = T(1) / static_cast<T>(a.plane_size());
  for (int k = 0; k < a.channels; ++k) {
    T acc{};
    for (T v : a.channel(k)) acc += v;
    f[k] = acc * inv;
  }
  return f;
}

}  // namespace detail

template <typename T>
Tensor3<T> standardize(const ProbeModel<T>& m, const Tensor3<T>& x) {
  if (x.channels != m.config.in_channels) throw ArgumentError("probe: input channel count mismatch");
  Tensor3<T> out = x;
  for (int c = 0; c < x.channels; ++c) {
    const T mu = m.input_mean[c];
    const T inv = T(1) / m.input_std[c];
    for (T& v : out.channel(c)) v = (v - mu) * inv;
  }
  return out;
}

// Runs stages [first_stage, end) on `act` and then the head.
template <typename T>
void run_from(const ProbeModel<T>& m, int first_stage, ForwardCache<T>& cache) {
  for (std::size_t s = first_stage; s < m.stages.size(); ++s) {
    const Tensor3<T>& in = s == 0 ? cache.input : cache.post[s - 1];
    cache.pre[s] = detail::conv3x3(m.stages[s], in);
    cache.post[s] = cache.pre[s];
    for (T& v : cache.post[s].data) v = std::max(v, T(0));
  }
  cache.feature = detail::global_average(cache.post.back());
  cache.logits = detail::head_forward(m, cache.feature);
}

// Forward pass on an already standardized input.
template <typename T>
ForwardCache<T> forward_standardized(const ProbeModel<T>& m, Tensor3<T> x) {
  if (x.channels != m.config.in_channels) throw ArgumentError("probe: input channel count mismatch");
  if (x.height < 1 || x.width < 1) throw ArgumentError("probe: empty spatial input");
  ForwardCache<T> cache;
  cache.revision = m.revision;
  cache.model = &m;
  cache.input = std::move(x);
  cache.pre.resize(m.stages.size());
  cache.post.resize(m.stages.size());
  run_from(m, 0, cache);
  return cache;
}

template <typename T>
ForwardCache<T> forward_one(const ProbeModel<T>& m, const Tensor3<T>& raw) {
  return forward_standardized(m, standardize(m, raw));
}

template <typename T>
struct BatchForward {
  std::vector<std::vector<T>> logits;  // batch × class_count
  std::vector<ForwardCache<T>> caches;
};

template <typename T>
BatchForward<T> forward(const ProbeModel<T>& m, std::span<const Tensor3<T>> batch) {
  BatchForward<T> out;
  for (const auto& x : batch) {
    out.caches.push_back(forward_one(m, x));
    out.logits.push_back(out.caches.back().logits);
  }
  return out;
}

// Logits obtained by injecting activation `a` at `tap` (used by oracles).
template <typename T>
std::vector<T> forward_from_tap(const ProbeModel<T>& m, const std::string& tap, const Tensor3<T>& a) {
  const int t = m.tap_index(tap);
  ForwardCache<T> cache;
  cache.pre.resize(m.stages.size());
  cache.post.resize(m.stages.size());
  cache.post[t] = a;
  run_from(m, t + 1, cache);
  return cache.logits;
}

template <typename T>
std::vector<T> cosine_logits(std::span<const T> feature, const ProbeModel<T>& m) {
  if (m.config.head != HeadType::Cosine) throw ArgumentError("cosine_logits: model has a linear head");
  if (static_cast<int>(feature.size()) != m.feature_dim()) throw ArgumentError("cosine_logits: feature size mismatch");
  return detail::head_forward(m, std::vector<T>(feature.begin(), feature.end()));
}

// --- Backward -------------------------------------------------------------

template <typename T>
struct ProbeGradients {
  std::vector<std::vector<T>> stage_weight;
  std::vector<std::vector<T>> stage_bias;
  std::vector<T> head_weight;
  std::vector<T> head_bias;
  Tensor3<T> input;  // w.r.t. the standardized input

  static ProbeGradients zeros_like(const ProbeModel<T>& m) {
    ProbeGradients g;
    for (const auto& s : m.stages) {
      g.stage_weight.emplace_back(s.weight.size(), T(0));
      g.stage_bias.emplace_back(s.bias.size(), T(0));
    }
    g.head_weight.assign(m.head_weight.size(), T(0));
    g.head_bias.assign(m.head_bias.size(), T(0));
    return g;
  }

  std::vector<std::vector<T>*> tensors(HeadType head) {
    std::vector<std::vector<T>*> ts;
    for (std::size_t i = 0; i < stage_weight.size(); ++i) {
      ts.push_back(&stage_weight[i]);
      ts.push_back(&stage_bias[i]);
    }
    ts.push_back(&head_weight);
    if (head == HeadType::Linear) ts.push_back(&head_bias);
    return ts;
  }
};

namespace detail {

// d(logits)/d(feature)ᵀ·g, accumulating head parameter gradients into `grads`.
template <typename T>
std::vector<T> head_backward(const ProbeModel<T>& m, const std::vector<T>& f, std::span<const T> g,
                             ProbeGradients<T>* grads) {
  const int d = m.feature_dim();
  std::vector<T> df(d, T(0));
  if (m.config.head == HeadType::Linear) {
    for (int k = 0; k < m.class_count(); ++k) {
      if (g[k] == T(0)) continue;
      for (int j = 0; j < d; ++j) {
        df[j] += m.head_weight[static_cast<std::size_t>(k) * d + j] * g[k];
        if (grads) grads->head_weight[static_cast<std::size_t>(k) * d + j] += g[k] * f[j];
      }
      if (grads) grads->head_bias[k] += g[k];
    }
    return df;
  }
  const T s = static_cast<T>(m.config.cosine_scale);
  const T rf = l2norm<T>(f);
  const T nf = rf + T(kCosineEps);
  for (int k = 0; k < m.class_count(); ++k) {
    if (g[k] == T(0)) continue;
    std::span<const T> w(m.head_weight.data() + static_cast<std::size_t>(k) * d, d);
    const T rw = l2norm<T>(w);
    const T nw = rw + T(kCosineEps);
    T dot{};
    for (int j = 0; j < d; ++j) dot += f[j] * w[j];
    for (int j = 0; j < d; ++j) {
      const T unit_f = rf > T(0) ? f[j] / rf : T(0);
      const T unit_w = rw > T(0) ? w[j] / rw : T(0);
      df[j] += g[k] * s * (w[j] / (nf * nw) - dot / (nf * nf * nw) * unit_f);
      if (grads)
        grads->head_weight[static_cast<std::size_t>(k) * d + j] += g[k] * s * (f[j] / (nf * nw) - dot / (nf * nw * nw) * unit_w);
    }
  }
  return df;
}

// Backpropagates from the logits down to the output of stage `stop_stage`
// (a tap activation) or, with stop_stage = -1, to the input.
template <typename T>
Tensor3<T> backward_impl(const ProbeModel<T>& m, const ForwardCache<T>& cache, std::span<const T> upstream,
                         int stop_stage, ProbeGradients<T>* grads, bool input_grad = true) {
  if (cache.model != &m || cache.revision != m.revision)
    throw StateError("probe backward: cache does not belong to the current model parameters");
  if (static_cast<int>(upstream.size()) != m.class_count()) throw ArgumentError("probe backward: upstream size mismatch");
  const auto df = head_backward(m, cache.feature, upstream, grads);
  const Tensor3<T>& last = cache.post.back();
  Tensor3<T> da(last.channels, last.height, last.width);
  const T inv = T(1) / static_cast<T>(last.plane_size());
  for (int k = 0; k < last.channels; ++k)
    for (T& v : da.channel(k)) v = df[k] * inv;
  for (int s = static_cast<int>(m.stages.size()) - 1; s > stop_stage; --s) {
    Tensor3<T> dz = da;
    const auto& z = cache.pre[s];
    for (std::size_t i = 0; i < dz.data.size(); ++i)
      if (!(z.data[i] > T(0))) dz.data[i] = T(0);
    const Tensor3<T>& in = s == 0 ? cache.input : cache.post[s - 1];
    const bool need_input = s > 0 || input_grad;
    Tensor3<T> din;
    conv3x3_backward(m.stages[s], in, dz, grads ? &grads->stage_weight[s] : nullptr,
                     grads ? &grads->stage_bias[s] : nullptr, need_input ? &din : nullptr);
    da = std::move(din);
  }
  return da;
}

}  // namespace detail

// Exact gradients of sum_k upstream[k]·logits[k] w.r.t. every parameter and
// the standardized input.
template <typename T>
ProbeGradients<T> backward(const ProbeModel<T>& m, const ForwardCache<T>& cache, std::span<const T> upstream) {
  auto g = ProbeGradients<T>::zeros_like(m);
  g.input = detail::backward_impl(m, cache, upstream, -1, &g);
  return g;
}

// Gradient w.r.t. the activation at `tap` only; parameters untouched.
template <typename T>
Tensor3<T> backward_to_tap(const ProbeModel<T>& m, const ForwardCache<T>& cache, std::span<const T> upstream,
                           const std::string& tap) {
  return detail::backward_impl<T>(m, cache, upstream, m.tap_index(tap), nullptr);
}

// Softmax cross-entropy; returns the loss and writes d(loss)/d(logits).
template <typename T>
T softmax_cross_entropy(std::span<const T> logits, int label, std::span<T> dlogits) {
  const T mx = *std::max_element(logits.begin(), logits.end());
  T z{};
  for (std::size_t k = 0; k < logits.size(); ++k) z += std::exp(logits[k] - mx);
  for (std::size_t k = 0; k < logits.size(); ++k) dlogits[k] = std::exp(logits[k] - mx) / z;
  dlogits[label] -= T(1);
  return std::log(z) + mx - logits[label];
}

// --- GradCAM --------------------------------------------------------------

// ReLU(Σ_k α_k A_k) with α_k = spatial mean of dA_k, bilinearly resized to
// out_h × out_w. No normalization.
template <typename T>
Plane<double> gradcam_map(const Tensor3<T>& a, const Tensor3<T>& da, int out_h, int out_w) {
  if (a.channels != da.channels || a.height != da.height || a.width != da.width)
    throw ArgumentError("gradcam_map: activation/gradient shape mismatch");
  Plane<double> cam(a.height, a.width, 0.0);
  for (int k = 0; k < a.channels; ++k) {
    double alpha = 0.0;
    for (T g : da.channel(k)) alpha += static_cast<double>(g);
    alpha /= static_cast<double>(da.plane_size());
    if (alpha == 0.0) continue;
    const auto ak = a.channel(k);
    for (std::size_t i = 0; i < cam.data.size(); ++i) cam.data[i] += alpha * static_cast<double>(ak[i]);
  }
  for (double& v : cam.data) v = std::max(v, 0.0);
  if (cam.height == out_h && cam.width == out_w) return cam;
  return resample_bilinear(cam, out_h, out_w);
}

template <typename T>
Plane<double> gradcam_standardized(const ProbeModel<T>& m, Tensor3<T> x_std, int target, const std::string& tap) {
  const int t = m.tap_index(tap);
  if (target < 0 || target >= m.class_count()) throw ArgumentError("gradcam: target class out of range");
  const int h = x_std.height;
  const int w = x_std.width;
  const auto cache = forward_standardized(m, std::move(x_std));
  std::vector<T> onehot(m.class_count(), T(0));
  onehot[target] = T(1);
  const auto da = detail::backward_impl<T>(m, cache, onehot, t, nullptr);
  return gradcam_map(cache.post[t], da, h, w);
}

template <typename T>
Plane<double> gradcam(const ProbeModel<T>& m, const Tensor3<T>& raw, int target, const std::string& tap) {
  return gradcam_standardized(m, standardize(m, raw), target, tap);
}

struct HeatmapSet {
  std::vector<Plane<double>> maps;  // one per input channel, at input resolution
  std::vector<double> scores;       // spatial mean of each map
  std::string tap;
  HeadType head = HeadType::Cosine;
  std::string checkpoint_id;
};

// For each channel i: zero every other (standardized) channel, GradCAM with
// the ground-truth target. Zero in the standardized domain is the training
// mean of that channel.
template <typename T>
HeatmapSet channelwise_heatmap(const ProbeModel<T>& m, const Tensor3<T>& raw, int label, const std::string& tap) {
  if (raw.channels != m.config.in_channels) throw ArgumentError("channelwise_heatmap: channel count mismatch");
  m.tap_index(tap);
  const auto xs = standardize(m, raw);
  HeatmapSet hs;
  hs.tap = tap;
  hs.head = m.config.head;
  for (int i = 0; i < raw.channels; ++i) {
    Tensor3<T> masked(raw.channels, raw.height, raw.width);
    const auto src = xs.channel(i);
    std::copy(src.begin(), src.end(), masked.channel(i).begin());
    auto map = gradcam_standardized(m, std::move(masked), label, tap);
    hs.scores.push_back(pairwise_sum(std::span<const double>(map.data)) / static_cast<double>(map.size()));
    hs.maps.push_back(std::move(map));
  }
  return hs;
}

inline void normalize_heatmaps(HeatmapSet& hs, HeatmapNormalization mode) {
  if (mode == HeatmapNormalization::Raw) return;
  double mx = 0.0;
  for (const auto& m : hs.maps)
    for (double v : m.data) mx = std::max(mx, v);
  if (mx <= 0.0) return;
  for (auto& m : hs.maps)
    for (double& v : m.data) v /= mx;
  for (double& s : hs.scores) s /= mx;
}

// --- Datasets in the frequency domain -------------------------------------

struct FrequencyDataset {
  std::vector<Tensor3<double>> inputs;
  std::vector<int> labels;
  int class_count = 0;

  std::size_t size() const { return inputs.size(); }
  void validate() const {
    if (inputs.empty()) throw ArgumentError("FrequencyDataset: empty");
    if (labels.size() != inputs.size()) throw ArgumentError("FrequencyDataset: label count mismatch");
    for (const auto& x : inputs)
      if (x.channels != inputs[0].channels || x.height != inputs[0].height || x.width != inputs[0].width)
        throw ArgumentError("FrequencyDataset: inconsistent tensor shapes");
    for (int l : labels)
      if (l < 0 || l >= class_count) throw ArgumentError("FrequencyDataset: label out of range");
  }
};

inline FrequencyDataset to_frequency_dataset(const LabeledDataset& ds, int block_size = 8,
                                             ChromaUpsample mode = ChromaUpsample::Nearest,
                                             const ChannelSelection* selection = nullptr) {
  ds.validate();
  FrequencyDataset out;
  out.class_count = ds.class_count;
  for (const auto& it : ds.items) {
    auto t = encode_rgb(it.image, block_size, mode);
    out.inputs.push_back(selection ? apply_selection(t, *selection).values.coeffs : std::move(t.coeffs));
    out.labels.push_back(it.label);
  }
  return out;
}

// Per-channel mean/std over every position of every input (pairwise sums).
template <typename T>
void fit_standardization(ProbeModel<T>& m, const FrequencyDataset& data) {
  data.validate();
  const int c = data.inputs[0].channels;
  if (c != m.config.in_channels) throw ArgumentError("fit_standardization: channel count mismatch");
  const double count = static_cast<double>(data.inputs.size() * data.inputs[0].plane_size());
  std::vector<double> sums(data.inputs.size());
  for (int ch = 0; ch < c; ++ch) {
    for (std::size_t i = 0; i < data.inputs.size(); ++i) sums[i] = pairwise_sum(data.inputs[i].channel(ch));
    const double mean = pairwise_sum(std::span<const double>(sums)) / count;
    for (std::size_t i = 0; i < data.inputs.size(); ++i) {
      double acc = 0.0;
      for (double v : data.inputs[i].channel(ch)) acc += (v - mean) * (v - mean);
      sums[i] = acc;
    }
    const double var = pairwise_sum(std::span<const double>(sums)) / count;
    const double sd = std::sqrt(var);
    m.input_mean[ch] = static_cast<T>(mean);
    m.input_std[ch] = static_cast<T>(sd > 1e-8 ? sd : 1.0);
  }
}

// --- Training -------------------------------------------------------------

struct TrainConfig {
  int epochs = 12;
  int batch = 32;
  double lr = 0.05;
  int warmup_steps = 10;
  double weight_decay = 5e-4;
  std::uint64_t seed = 0;
  HeadType head = HeadType::Cosine;
  double cosine_scale = 16.0;
  std::vector<int> widths{32, 64, 128};
  std::vector<int> strides{1, 2, 2};
  std::vector<int> checkpoint_epochs;  // 1-based epochs to snapshot
};

// Linear warmup to `lr`, then cosine decay to zero over the remaining steps.
inline double learning_rate(const TrainConfig& cfg, int step, int total_steps) {
  if (step < cfg.warmup_steps) return cfg.lr * (step + 1) / cfg.warmup_steps;
  const int span = std::max(1, total_steps - cfg.warmup_steps);
  const double progress = static_cast<double>(step - cfg.warmup_steps) / span;
  return cfg.lr * 0.5 * (1.0 + std::cos(M_PI * progress));
}

struct EpochStats {
  int epoch = 0;
  int steps = 0;
  double mean_loss = 0.0;
  double accuracy = 0.0;  // running accuracy over the epoch's batches
};

template <typename T>
struct ProbeCheckpoint {
  int epoch = 0;
  ProbeModel<T> model;
};

template <typename T>
struct TrainResult {
  ProbeModel<T> model;
  std::vector<ProbeCheckpoint<T>> checkpoints;
  std::vector<EpochStats> history;
  int steps = 0;
};

template <typename T>
double accuracy(const ProbeModel<T>& m, const FrequencyDataset& data) {
  int correct = 0;
  for (std::size_t i = 0; i < data.size(); ++i) {
    const auto cache = forward_one(m, data.inputs[i].cast<T>());
    const auto best = std::max_element(cache.logits.begin(), cache.logits.end()) - cache.logits.begin();
    correct += best == data.labels[i];
  }
  return static_cast<double>(correct) / static_cast<double>(data.size());
}

// Mini-batch gradient descent with cross-entropy; deterministic per seed.
template <typename T = float>
TrainResult<T> train_probe(const FrequencyDataset& data, const TrainConfig& cfg) {
  data.validate();
  if (cfg.epochs < 0 || cfg.batch < 1 || cfg.lr < 0.0 || cfg.warmup_steps < 0)
    throw ArgumentError("train_probe: invalid configuration");
  ProbeConfig pc;
  pc.in_channels = data.inputs[0].channels;
  pc.class_count = data.class_count;
  pc.widths = cfg.widths;
  pc.strides = cfg.strides;
  pc.head = cfg.head;
  pc.cosine_scale = cfg.cosine_scale;
  pc.seed = cfg.seed;
  TrainResult<T> res{make_probe<T>(pc), {}, {}, 0};
  auto& m = res.model;
  fit_standardization(m, data);

  std::vector<Tensor3<T>> inputs;
  inputs.reserve(data.size());
  for (const auto& x : data.inputs) inputs.push_back(x.cast<T>());

  Rng rng(cfg.seed ^ 0x9E3779B97F4A7C15ull);
  std::vector<std::size_t> order(data.size());
  std::iota(order.begin(), order.end(), 0);
  const int steps_per_epoch = static_cast<int>((data.size() + cfg.batch - 1) / cfg.batch);
  const int total_steps = steps_per_epoch * cfg.epochs;
  int step = 0;
  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    rng.shuffle(order.begin(), order.end());
    EpochStats st{epoch, 0, 0.0, 0.0};
    int seen = 0;
    int correct = 0;
    for (std::size_t start = 0; start < order.size(); start += cfg.batch) {
      const std::size_t stop = std::min(order.size(), start + cfg.batch);
      const T inv_batch = T(1) / static_cast<T>(stop - start);
      auto grads = ProbeGradients<T>::zeros_like(m);
      double batch_loss = 0.0;
      for (std::size_t b = start; b < stop; ++b) {
        const auto idx = order[b];
        const auto cache = forward_one(m, inputs[idx]);
        std::vector<T> dl(m.class_count());
        const T loss = softmax_cross_entropy<T>(cache.logits, data.labels[idx], dl);
        if (!std::isfinite(static_cast<double>(loss))) {
          std::ostringstream os;
          os << "train_probe: non-finite loss at epoch " << epoch << ", step " << step << ", item " << idx
             << ", lr " << learning_rate(cfg, step, total_steps);
          throw TrainingError(os.str());
        }
        batch_loss += static_cast<double>(loss);
        const auto best = std::max_element(cache.logits.begin(), cache.logits.end()) - cache.logits.begin();
        correct += best == data.labels[idx];
        for (T& g : dl) g *= inv_batch;
        detail::backward_impl<T>(m, cache, dl, -1, &grads, false);
      }
      seen += static_cast<int>(stop - start);
      st.mean_loss += batch_loss;
      const T lr = static_cast<T>(learning_rate(cfg, step, total_steps));
      const T wd = static_cast<T>(cfg.weight_decay);
      auto params = m.parameters();
      auto gts = grads.tensors(m.config.head);
      for (std::size_t p = 0; p < params.size(); ++p) {
        auto& w = *params[p];
        const auto& g = *gts[p];
        for (std::size_t i = 0; i < w.size(); ++i) w[i] -= lr * (g[i] + wd * w[i]);
      }
      ++m.revision;
      ++step;
      ++st.steps;
    }
    st.mean_loss /= std::max(1, seen);
    st.accuracy = static_cast<double>(correct) / std::max(1, seen);
    res.history.push_back(st);
    if (std::find(cfg.checkpoint_epochs.begin(), cfg.checkpoint_epochs.end(), epoch) != cfg.checkpoint_epochs.end())
      res.checkpoints.push_back({epoch, m});
  }
  res.steps = step;
  return res;
}

// --- Aggregation ----------------------------------------------------------

// Runs fn(i) for i in [0, n) on `workers` threads; each index is visited once.
inline void parallel_for(std::size_t n, int workers, const std::function<void(std::size_t)>& fn) {
  if (workers <= 1 || n <= 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::vector<std::exception_ptr> errors(workers);
  {
    std::vector<std::jthread> pool;
    for (int w = 0; w < workers; ++w)
      pool.emplace_back([&, w] {
        try {
          for (std::size_t i = next++; i < n; i = next++) fn(i);
        } catch (...) {
          errors[w] = std::current_exception();
        }
      });
  }
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
}

// Mean over images of the (normalized) per-channel heatmap scores. With
// samples > 0 only the first `samples` items are used.
template <typename T>
std::vector<double> aggregate_scores(const ProbeModel<T>& m, const FrequencyDataset& data, const std::string& tap,
                                     HeatmapNormalization norm, std::size_t samples = 0, int workers = 1) {
  if (data.inputs.empty()) throw ArgumentError("aggregate_scores: empty dataset");
  data.validate();
  m.tap_index(tap);
  const std::size_t n = samples > 0 ? std::min(samples, data.size()) : data.size();
  std::vector<std::vector<double>> per_image(n);
  parallel_for(n, workers, [&](std::size_t i) {
    auto hs = channelwise_heatmap(m, data.inputs[i].cast<T>(), data.labels[i], tap);
    normalize_heatmaps(hs, norm);
    per_image[i] = std::move(hs.scores);
  });
  const int c = m.config.in_channels;
  std::vector<double> out(c);
  std::vector<double> col(n);
  for (int ch = 0; ch < c; ++ch) {
    for (std::size_t i = 0; i < n; ++i) col[i] = per_image[i][ch];
    std::sort(col.begin(), col.end());  // order-free reduction
    out[ch] = pairwise_sum(std::span<const double>(col)) / static_cast<double>(n);
  }
  return out;
}

// --- Score files ----------------------------------------------------------

inline void write_scores_csv(std::span<const double> scores, int block_size, std::ostream& os) {
  os << "channel_index,component,u,v,score\n";
  for (std::size_t i = 0; i < scores.size(); ++i) {
    const auto d = descriptor_for(static_cast<int>(i), block_size);
    os << i << ',' << component_name(d.component) << ',' << int(d.u) << ',' << int(d.v) << ','
       << format_double(scores[i]) << '\n';
  }
}

// The three N×N grids (Y, Cb, Cr) of per-channel scores.
inline void write_score_grid_csv(std::span<const double> scores, int block_size, std::ostream& os) {
  const int nn = block_size * block_size;
  if (static_cast<int>(scores.size()) != 3 * nn) throw ArgumentError("write_score_grid_csv: need 3*N^2 scores");
  os << "component,u";
  for (int v = 0; v < block_size; ++v) os << ",v" << v;
  os << '\n';
  for (int comp = 0; comp < 3; ++comp)
    for (int u = 0; u < block_size; ++u) {
      os << component_name(static_cast<Component>(comp)) << ',' << u;
      for (int v = 0; v < block_size; ++v) os << ',' << format_double(scores[comp * nn + u * block_size + v]);
      os << '\n';
    }
}

inline std::vector<double> read_scores_csv(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw IoError("cannot open scores file: " + path);
  std::string line;
  if (!std::getline(is, line) || line.rfind("channel_index", 0) != 0) throw FormatError("scores CSV: missing header");
  std::vector<double> scores;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    std::vector<std::string> fields;
    std::stringstream ss(line);
    std::string f;
    while (std::getline(ss, f, ',')) fields.push_back(f);
    if (fields.size() != 5) throw FormatError("scores CSV: expected 5 columns");
    try {
      if (std::stoul(fields[0]) != scores.size()) throw FormatError("scores CSV: channel indices not consecutive");
      scores.push_back(std::stod(fields[4]));
    } catch (const std::logic_error&) {
      throw FormatError("scores CSV: bad number in line '" + line + "'");
    }
  }
  if (scores.empty()) throw FormatError("scores CSV: no rows");
  return scores;
}

// --- Checkpoints ----------------------------------------------------------
//
// "DPCK", u32 version, u32 header length, JSON header (config, dtype, config
// hash), then every tensor as little-endian float32/float64 in the order
// stage weights/biases, head weight, head bias, input mean, input std.

inline std::uint64_t fnv1a64(std::string_view s) {
  std::uint64_t h = 1469598103934665603ull;
  for (unsigned char c : s) {
    h ^= c;
    h *= 1099511628211ull;
  }
  return h;
}

inline nlohmann::json probe_config_json(const ProbeConfig& c) {
  return {{"in_channels", c.in_channels}, {"class_count", c.class_count}, {"widths", c.widths},
          {"strides", c.strides},         {"head", head_name(c.head)},     {"cosine_scale", c.cosine_scale},
          {"seed", c.seed}};
}

template <typename T>
void write_checkpoint(std::ostream& os, const ProbeModel<T>& m, int epoch = 0) {
  constexpr bool f32 = std::is_same_v<T, float>;
  nlohmann::json header;
  header["config"] = probe_config_json(m.config);
  header["config_hash"] = fnv1a64(header["config"].dump());
  header["dtype"] = f32 ? "float32" : "float64";
  header["epoch"] = epoch;
  const std::string text = header.dump();
  os.write("DPCK", 4);
  detail::put_le(os, 1, 4);
  detail::put_le(os, text.size(), 4);
  os.write(text.data(), static_cast<std::streamsize>(text.size()));
  auto put = [&](const std::vector<T>& v) {
    for (T x : v) {
      if constexpr (f32) {
        std::uint32_t bits;
        std::memcpy(&bits, &x, 4);
        detail::put_le(os, bits, 4);
      } else {
        std::uint64_t bits;
        std::memcpy(&bits, &x, 8);
        detail::put_le(os, bits, 8);
      }
    }
  };
  for (const auto& s : m.stages) {
    put(s.weight);
    put(s.bias);
  }
  put(m.head_weight);
  put(m.head_bias);
  put(m.input_mean);
  put(m.input_std);
  if (!os) throw IoError("write_checkpoint: stream write failed");
}

template <typename T>
ProbeModel<T> read_checkpoint(std::istream& is, int* epoch = nullptr) {
  constexpr bool f32 = std::is_same_v<T, float>;
  char magic[4] = {};
  is.read(magic, 4);
  if (!is || std::memcmp(magic, "DPCK", 4) != 0) throw FormatError("checkpoint: bad magic");
  if (detail::get_le(is, 4) != 1) throw FormatError("checkpoint: unsupported version");
  const auto len = detail::get_le(is, 4);
  if (len > (1u << 20)) throw FormatError("checkpoint: header too large");
  std::string text(len, '\0');
  is.read(text.data(), static_cast<std::streamsize>(len));
  if (static_cast<std::uint64_t>(is.gcount()) != len) throw FormatError("checkpoint: truncated header");
  ProbeConfig cfg;
  try {
    const auto header = nlohmann::json::parse(text);
    const auto& c = header.at("config");
    if (header.at("config_hash").get<std::uint64_t>() != fnv1a64(c.dump()))
      throw FormatError("checkpoint: config hash mismatch");
    if (header.at("dtype").get<std::string>() != (f32 ? "float32" : "float64"))
      throw FormatError("checkpoint: dtype does not match requested precision");
    cfg.in_channels = c.at("in_channels").get<int>();
    cfg.class_count = c.at("class_count").get<int>();
    cfg.widths = c.at("widths").get<std::vector<int>>();
    cfg.strides = c.at("strides").get<std::vector<int>>();
    cfg.head = parse_head(c.at("head").get<std::string>());
    cfg.cosine_scale = c.at("cosine_scale").get<double>();
    cfg.seed = c.at("seed").get<std::uint64_t>();
    if (epoch) *epoch = header.at("epoch").get<int>();
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("checkpoint header: ") + e.what());
  } catch (const ArgumentError& e) {
    throw FormatError(std::string("checkpoint header: ") + e.what());
  }
  ProbeModel<T> m = make_probe<T>(cfg);
  auto get = [&](std::vector<T>& v) {
    for (T& x : v) {
      if constexpr (f32) {
        const auto bits = static_cast<std::uint32_t>(detail::get_le(is, 4));
        std::memcpy(&x, &bits, 4);
      } else {
        const std::uint64_t bits = detail::get_le(is, 8);
        std::memcpy(&x, &bits, 8);
      }
    }
  };
  try {
    for (auto& s : m.stages) {
      get(s.weight);
      get(s.bias);
    }
    get(m.head_weight);
    get(m.head_bias);
    get(m.input_mean);
    get(m.input_std);
  } catch (const FormatError&) {
    throw FormatError("checkpoint: truncated parameter data");
  }
  return m;
}

template <typename T>
void save_checkpoint(const std::string& path, const ProbeModel<T>& m, int epoch = 0) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError("cannot open for writing: " + path);
  write_checkpoint(os, m, epoch);
}

template <typename T>
ProbeModel<T> load_checkpoint(const std::string& path, int* epoch = nullptr) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open: " + path);
  return read_checkpoint<T>(is, epoch);
}

}  // namespace densedct
