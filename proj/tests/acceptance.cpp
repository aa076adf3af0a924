// Acceptance checks: one PASS/FAIL line per criterion; exit status 1 if any fail.
#include <sys/wait.h>

#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <numeric>
#include <optional>
#include <set>
#include <sstream>

#include "densedct/densedct.hpp"
#include "test_support.hpp"

using namespace densedct;
namespace fs = std::filesystem;
using Clock = std::chrono::steady_clock;

namespace {

int failures = 0;

void report(int id, const std::string& name, bool ok, const std::string& detail) {
  std::printf("%s %2d %s: %s\n", ok ? "PASS" : "FAIL", id, name.c_str(), detail.c_str());
  std::fflush(stdout);
  failures += !ok;
}

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

std::string fmt(const char* f, double a, double b = 0.0, double c = 0.0) {
  char buf[256];
  std::snprintf(buf, sizeof buf, f, a, b, c);
  return buf;
}

Plane<double> naive_dct(const Plane<double>& x) {
  const int n = x.height;
  auto s = [n](int k) { return k == 0 ? std::sqrt(1.0 / n) : std::sqrt(2.0 / n); };
  Plane<double> out(n, n);
  for (int u = 0; u < n; ++u)
    for (int v = 0; v < n; ++v) {
      long double acc = 0.0L;
      for (int i = 0; i < n; ++i)
        for (int j = 0; j < n; ++j)
          acc += x(i, j) * std::cos(M_PI * (2 * i + 1) * u / (2.0 * n)) * std::cos(M_PI * (2 * j + 1) * v / (2.0 * n));
      out(u, v) = static_cast<double>(acc) * s(u) * s(v);
    }
  return out;
}

// 1 ----------------------------------------------------------------------
void codec_exactness() {
  Rng rng(1);
  std::vector<Plane<double>> blocks;
  for (int b = 0; b < 100; ++b) {
    Plane<double> x(8, 8);
    for (double& v : x.data) v = rng.uniform(-128, 128);
    blocks.push_back(x);
  }
  const auto t0 = Clock::now();
  double inv = 0.0;
  std::vector<Plane<double>> coeffs;
  for (const auto& x : blocks) {
    coeffs.push_back(dct2d_block(x));
    const auto back = idct2d_block(coeffs.back());
    for (std::size_t i = 0; i < x.size(); ++i) inv = std::max(inv, std::abs(back.data[i] - x.data[i]));
  }
  const double secs = seconds_since(t0);
  double naive = 0.0;
  for (std::size_t b = 0; b < blocks.size(); ++b) {
    const auto ref = naive_dct(blocks[b]);
    for (std::size_t i = 0; i < ref.size(); ++i) naive = std::max(naive, std::abs(ref.data[i] - coeffs[b].data[i]));
  }
  report(1, "codec exactness", inv <= 1e-10 && naive <= 1e-12 && secs < 1.0,
         fmt("inverse max err %.3g, naive max err %.3g, %.4f s", inv, naive, secs));
}

// 2 ----------------------------------------------------------------------
void parseval(const std::vector<FrequencyTensor>& corpus) {
  Rng rng(2);
  double worst_block = 0.0;
  for (int b = 0; b < 100; ++b) {
    Plane<double> x(8, 8);
    for (double& v : x.data) v = rng.uniform(0, 255);
    const auto c = dct2d_block(x);
    const double ex = pairwise_sum_squares(std::span<const double>(x.data));
    const double ec = pairwise_sum_squares(std::span<const double>(c.data));
    worst_block = std::max(worst_block, std::abs(ex - ec) / ex);
  }
  const double total = channel_energy(corpus).total();
  std::vector<double> px;
  for (const auto& t : corpus) px.push_back(plane_energy(decode(t), t.block_size, kLevelShift));
  const double pixel = pairwise_sum(std::span<const double>(px)) / static_cast<double>(px.size());
  const double rel = std::abs(total - pixel) / pixel;
  report(2, "Parseval", worst_block <= 1e-10 && rel <= 1e-8,
         fmt("per-block rel err %.3g, dataset rel err %.3g over %g images", worst_block, rel,
             static_cast<double>(corpus.size())));
}

// 3 ----------------------------------------------------------------------
void shape_ledger() {
  Rng rng(3);
  RgbImage big(448, 448), small(64, 64);
  for (double& v : big.data) v = rng.uniform();
  for (double& v : small.data) v = rng.uniform();
  const auto a = encode_rgb(big), b = encode_rgb(small);
  bool ok = a.channels() == 192 && a.height() == 56 && a.width() == 56 && b.channels() == 192 && b.height() == 8 &&
            b.width() == 8;
  std::ostringstream detail;
  detail << "448->" << a.channels() << "x" << a.height() << "x" << a.width() << ", 64->" << b.channels() << "x"
         << b.height() << "x" << b.width() << ", ratios 1/2/4/8 ->";
  const int sizes[] = {64, 128, 256, 448};
  const int expect[] = {8, 16, 32, 56};
  for (int i = 0; i < 4; ++i) {
    const auto t = encode_rgb(resize(small, sizes[i], sizes[i]));
    ok = ok && t.channels() == 192 && t.height() == expect[i] && t.width() == expect[i];
    detail << ' ' << t.height();
  }
  report(3, "shape ledger", ok, detail.str());
}

// 4 ----------------------------------------------------------------------
void threshold_monotonicity() {
  const double ts[] = {0.08, 0.07, 0.06, 0.03, 0.022, 0.02, 0.01, 0.0, -std::numeric_limits<double>::infinity()};
  bool ok = true;
  // Property over random score vectors on the heatmap score scale.
  Rng rng(4);
  for (int trial = 0; trial < 200 && ok; ++trial) {
    std::vector<double> s(192);
    for (double& v : s) v = trial % 2 ? rng.uniform(-0.02, 0.1) : 0.03 * rng.normal();
    std::optional<ChannelSelection> prev;  // sweep runs from high t to low t
    for (double t : ts) {
      const auto sel = select_by_threshold(s, t);
      std::size_t direct = 0;
      for (double v : s) direct += v > t;
      ok = ok && sel.size() == direct;
      if (prev) {
        ok = ok && sel.size() >= prev->size();
        for (int ch : prev->kept) ok = ok && sel.contains(ch);
      }
      prev = sel;
    }
    ok = ok && prev->size() == 192;
  }
  // A staircase score vector reproduces the 17→192 count pattern exactly.
  std::vector<double> s;
  for (auto [n, v] : std::vector<std::pair<int, double>>{{17, 0.09}, {1, 0.08}, {3, 0.065}, {1, 0.045}, {2, 0.025},
                                                          {1, 0.021}, {3, 0.015}, {13, 0.005}, {151, 0.0}})
    s.insert(s.end(), n, v);
  const std::vector<std::size_t> want{17, 18, 21, 22, 24, 25, 28, 41, 192};
  std::vector<std::size_t> got;
  for (double t : ts) got.push_back(select_by_threshold(s, t).size());
  ok = ok && got == want;
  std::ostringstream d;
  d << "200 random vectors nested; staircase counts";
  for (auto g : got) d << ' ' << g;
  report(4, "threshold monotonicity", ok, d.str());
}

// 5 ----------------------------------------------------------------------
template <typename Loss>
double fd_check(std::vector<std::vector<double>*> params, std::vector<const std::vector<double>*> grads, Loss loss,
                std::size_t& count) {
  const double eps = 1e-6;
  double worst = 0.0;
  for (std::size_t p = 0; p < params.size(); ++p)
    for (std::size_t i = 0; i < params[p]->size(); ++i) {
      double& w = (*params[p])[i];
      const double w0 = w;
      w = w0 + eps;
      const double lp = loss();
      w = w0 - eps;
      const double lm = loss();
      w = w0;
      const double an = (*grads[p])[i];
      worst = std::max(worst, std::abs((lp - lm) / (2 * eps) - an) / std::max(1.0, std::abs(an)));
      ++count;
    }
  return worst;
}

void gradient_fidelity() {
  const auto t0 = Clock::now();
  double worst = 0.0;
  std::size_t count = 0;
  bool kink_free = true;
  Rng rng(5);
  auto rnd = [&](int c, int h, int w) {
    Tensor3<double> x(c, h, w);
    for (double& v : x.data) v = rng.normal();
    return x;
  };
  for (HeadType head : {HeadType::Cosine, HeadType::Linear}) {
    ProbeConfig pc;
    pc.in_channels = 3;
    pc.class_count = 3;
    pc.widths = {4, 5};
    pc.strides = {1, 2};
    pc.head = head;
    pc.seed = 3;
    auto m = make_probe<double>(pc);
    for (auto& s : m.stages)
      for (double& b : s.bias) b = 0.1 * rng.normal();
    for (double& b : m.head_bias) b = 0.1 * rng.normal();
    const auto x = rnd(3, 6, 6);
    const std::vector<double> up{0.7, -1.3, 0.4};
    const auto cache = forward_standardized(m, x);
    for (const auto& z : cache.pre)  // central differences need distance from ReLU kinks
      for (double v : z.data) kink_free = kink_free && std::abs(v) > 1e-4;
    auto g = backward(m, cache, std::span<const double>(up));
    auto gt = g.tensors(head);
    const auto loss = [&] {
      const auto l = forward_standardized(m, x).logits;
      return up[0] * l[0] + up[1] * l[1] + up[2] * l[2];
    };
    worst = std::max(worst, fd_check(m.parameters(), {gt.begin(), gt.end()}, loss, count));
  }
  {
    auto e = make_linear_embedding<double>(3, 4, 8);
    const auto x = rnd(3, 2, 3);
    TokenGrid<double> up{2, 3, 4, std::vector<double>(24)};
    for (double& v : up.tokens) v = rng.normal();
    const auto g = dense_embed_backward(x, e, up);
    const auto loss = [&] {
      const auto t = dense_embed(x, e).tokens;
      return std::inner_product(t.begin(), t.end(), up.tokens.begin(), 0.0);
    };
    worst = std::max(worst, fd_check({&e.weight, &e.bias}, {&g.weight, &g.bias}, loss, count));
  }
  {
    auto a = make_coordinate_attention<double>(4, 2, 5);
    const auto x = rnd(4, 4, 4), up = rnd(4, 4, 4);
    AttentionCache<double> cache;
    coordinate_attention(x, a, &cache);
    auto g = coordinate_attention_backward(a, cache, up);
    auto gt = g.tensors();
    const auto loss = [&] {
      const auto y = coordinate_attention(x, a).data;
      return std::inner_product(y.begin(), y.end(), up.data.begin(), 0.0);
    };
    worst = std::max(worst, fd_check(a.parameters(), {gt.begin(), gt.end()}, loss, count));
  }
  const double secs = seconds_since(t0);
  report(5, "gradient fidelity", kink_free && worst <= 1e-4 && secs < 30.0,
         fmt("%g parameters, worst rel err %.3g, %.2f s", static_cast<double>(count), worst, secs) +
             (kink_free ? "" : " (instance too close to a ReLU kink)"));
}

// 6 ----------------------------------------------------------------------
void synthetic_recovery() {
  const auto t0 = Clock::now();
  const auto fd = to_frequency_dataset(synth_dataset(0, 512, 2, {0, 5}, 32));
  TrainConfig cfg;
  cfg.seed = 0;
  const auto res = train_probe<float>(fd, cfg);
  const double acc = accuracy(res.model, fd);
  const double train_secs = seconds_since(t0);
  const auto tap = res.model.default_tap();
  const auto s = aggregate_scores(res.model, fd, tap, HeatmapNormalization::JointMax, 128);
  std::vector<int> order(s.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](int x, int y) { return s[x] > s[y]; });
  const std::set<int> top5(order.begin(), order.begin() + 5);
  const bool in_top5 = top5.count(0) && top5.count(5);
  // Sweep every midpoint between consecutive distinct scores for an exact {0,5}.
  bool exact = false;
  double found = 0.0;
  for (std::size_t k = 0; k + 1 < order.size() && !exact; ++k) {
    if (!(s[order[k]] > s[order[k + 1]])) continue;
    const double t = 0.5 * (s[order[k]] + s[order[k + 1]]);
    if (select_by_threshold(s, t).kept == std::vector<int>{0, 5}) {
      exact = true;
      found = t;
    }
  }
  const double secs = seconds_since(t0);
  std::ostringstream d;
  d << "accuracy " << acc << " in " << res.steps << " steps (" << fmt("%.1f", train_secs) << " s), top5";
  for (int i = 0; i < 5; ++i) d << ' ' << order[i];
  d << ", threshold " << (exact ? format_double(found) : std::string("none")) << " keeps {0,5}, total "
    << fmt("%.1f", secs) << " s";
  report(6, "synthetic channel recovery", acc >= 0.95 && res.steps <= 200 && train_secs < 300.0 && in_top5 && exact,
         d.str());
}

// 7 ----------------------------------------------------------------------
double psnr(const RgbImage& a, const RgbImage& b) {
  double se = 0.0;
  for (std::size_t i = 0; i < a.data.size(); ++i) {
    const double d = 255.0 * (a.data[i] - b.data[i]);
    se += d * d;
  }
  const double mse = se / a.data.size();
  return mse > 0 ? 10.0 * std::log10(255.0 * 255.0 / mse) : std::numeric_limits<double>::infinity();
}

double median_psnr(const std::vector<FrequencyTensor>& corpus, const std::vector<RgbImage>& full,
                   const ChannelSelection& sel) {
  std::vector<double> ps;
  for (std::size_t i = 0; i < corpus.size(); ++i)
    ps.push_back(psnr(full[i], decode_rgb(zero_fill(apply_selection(corpus[i], sel)))));
  std::sort(ps.begin(), ps.end());
  const std::size_t n = ps.size();
  return n % 2 ? ps[n / 2] : 0.5 * (ps[n / 2 - 1] + ps[n / 2]);
}

void energy_compaction(const std::vector<FrequencyTensor>& corpus) {
  const auto p = channel_energy(corpus);
  const bool y0_max = std::max_element(p.per_channel.begin(), p.per_channel.end()) - p.per_channel.begin() == 0;
  std::vector<RgbImage> full;
  for (const auto& t : corpus) full.push_back(decode_rgb(t));
  const auto low = select_square(8, 4, 1, 1);
  const double ours = median_psnr(corpus, full, low);
  Rng rng(7);
  double best_random = -std::numeric_limits<double>::infinity();
  bool ok = y0_max && corpus.size() >= 20 && low.size() == 18;
  for (int trial = 0; trial < 30; ++trial) {
    std::vector<int> all(192);
    std::iota(all.begin(), all.end(), 0);
    rng.shuffle(all.begin(), all.end());
    all.resize(18);
    const double r = median_psnr(corpus, full, select_explicit(all, 192));
    best_random = std::max(best_random, r);
    ok = ok && ours > r;
  }
  report(7, "energy compaction", ok,
         fmt("%g images, Y0 max energy: ", static_cast<double>(corpus.size())) + (y0_max ? "yes" : "no") +
             fmt(", median PSNR low-frequency-18 %.2f dB vs best of 30 random %.2f dB", ours, best_random));
}

// 8 ----------------------------------------------------------------------
void residual_identity(const std::vector<FrequencyTensor>& corpus) {
  Rng rng(8);
  double worst = 0.0;
  int checks = 0;
  std::vector<ChannelSelection> sels{select_square(8, 4, 1, 1), select_square(8, 1, 1, 1), select_all(192),
                                     select_explicit({191}, 192)};
  for (int k = 0; k < 20; ++k) {
    std::vector<int> idx;
    const double keep = rng.uniform();
    for (int ch = 0; ch < 192; ++ch)
      if (rng.uniform() < keep) idx.push_back(ch);
    if (idx.empty()) idx.push_back(static_cast<int>(rng.below(192)));
    sels.push_back(select_explicit(idx, 192));
  }
  for (const auto& t : corpus) {
    const std::vector<FrequencyTensor> one{t};
    const auto prof = channel_energy(one);
    const auto whole = decode(t);
    for (const auto& sel : sels) {
      const double resid = plane_energy(difference(whole, decode(zero_fill(apply_selection(t, sel)))), 8);
      const double dropped = dropped_energy(prof, sel);
      const double err = dropped > 0 ? std::abs(resid - dropped) / dropped : std::abs(resid);
      worst = std::max(worst, err);
      ++checks;
    }
  }
  report(8, "residual identity", worst <= 1e-6,
         fmt("%g image/selection pairs, worst rel err %.3g", checks, worst));
}

// 9 ----------------------------------------------------------------------
void tokenizer_contract() {
  Rng rng(9);
  RgbImage img(448, 448);
  for (double& v : img.data) v = rng.uniform();
  const auto d = apply_selection(encode_rgb(img), select_square(8, 4, 1, 1));
  const auto tokens = dense_embed(d, make_linear_embedding<double>(18, 96, 1));
  const auto x = tokens.to_chw();
  const auto y = coordinate_attention(x, make_coordinate_attention<double>(96, 2, 2));
  bool attenuates = true;
  for (std::size_t i = 0; i < x.data.size(); ++i) attenuates = attenuates && std::abs(y.data[i]) <= std::abs(x.data[i]);
  const bool shape = d.channels() == 18 && d.values.height() == 56 && d.values.width() == 56 &&
                     tokens.count() == 3136 && tokens.dim == 96;
  const bool same = y.channels == x.channels && y.height == x.height && y.width == x.width;
  std::ostringstream s;
  s << d.channels() << "x" << d.values.height() << "x" << d.values.width() << " -> " << tokens.count() << " tokens x "
    << tokens.dim << ", attention " << y.channels << "x" << y.height << "x" << y.width
    << (attenuates ? ", |out| <= |in|" : ", amplifies somewhere");
  report(9, "tokenizer contract", shape && same && attenuates, s.str());
}

// 10 ---------------------------------------------------------------------
int run_cli(const std::string& args, const fs::path& log) {
  const std::string cmd = std::string(DENSEDCT_CLI) + " " + args + " >>" + log.string() + " 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

std::string slurp(const fs::path& p) {
  std::ifstream is(p, std::ios::binary);
  std::ostringstream os;
  os << is.rdbuf();
  return os.str();
}

void determinism() {
  const auto root = fs::temp_directory_path() / "densedct_acceptance";
  fs::remove_all(root);
  fs::create_directories(root);
  const auto work = root / "run";
  const auto log = root / "log.txt";
  const auto natural = (fs::path(DENSEDCT_TEST_DATA) / "natural").string();
  auto p = [&](const char* n) { return (work / n).string(); };
  const std::vector<std::string> commands{
      "synth --out " + p("synth") + " --n 64 --size 32 --seed 3",
      "encode --in " + p("synth") + " --out " + p("enc") + " --workers 2",
      "encode --in " + natural + " --out " + p("nat") + " --workers 2",
      "train-probe --data " + p("enc") + " --out " + p("probe") + " --epochs 2 --checkpoint-epochs 1",
      "heatmap --data " + p("enc") + " --checkpoint " + p("probe") + "/probe.dpck --out " + p("hm") +
          " --samples 8 --maps --workers 2",
      "select --scores " + p("hm") + "/scores.csv --out " + p("sel") + " --threshold 0.02",
      "select --scores " + p("hm") + "/scores.csv --out " + p("sq") + " --square 4,1,1",
      "reconstruct --data " + p("nat") + " --selection " + p("sq") + "/selection.json --out " + p("rec") +
          " --workers 2",
      "energy --data " + p("nat") + " --out " + p("energy") + " --selection " + p("sq") + "/selection.json",
      "embed --data " + p("nat") + " --selection " + p("sq") + "/selection.json --out " + p("emb") +
          " --attention after --workers 2",
      "repro fig5 --out " + p("fig5") + " --n 64 --epochs 2 --samples 8",
      "repro table3 --out " + p("table3") + " --scores " + p("hm") + "/scores.csv",
      "repro table5-shapes --out " + p("table5"),
  };
  std::string problem;
  auto run_all = [&] {
    for (const auto& c : commands)
      if (run_cli(c, log) != 0) {
        problem = "command failed: " + c.substr(0, c.find(' '));
        return false;
      }
    return true;
  };
  bool ok = run_all();
  const auto first = root / "first";
  std::size_t files = 0, differing = 0;
  if (ok) {
    fs::rename(work, first);
    ok = run_all();
  }
  if (ok) {
    for (const auto& e : fs::recursive_directory_iterator(first)) {
      if (!e.is_regular_file()) continue;
      ++files;
      const auto rel = fs::relative(e.path(), first);
      if (!fs::exists(work / rel) || slurp(e.path()) != slurp(work / rel)) {
        ++differing;
        if (problem.empty()) problem = "differs: " + rel.string();
      }
    }
    std::size_t second = 0;
    for (const auto& e : fs::recursive_directory_iterator(work)) second += e.is_regular_file();
    if (second != files) {
      ++differing;
      problem = "file sets differ";
    }
  }
  ok = ok && differing == 0 && files > 0;
  std::ostringstream d;
  d << commands.size() << " commands run twice, " << files << " files compared, " << differing << " differ";
  if (!problem.empty()) d << " (" << problem << ")";
  report(10, "determinism", ok, d.str());
}

}  // namespace

int main() {
  const auto corpus = densedct::testing::natural_tensors();
  codec_exactness();
  parseval(corpus);
  shape_ledger();
  threshold_monotonicity();
  gradient_fidelity();
  synthetic_recovery();
  energy_compaction(corpus);
  residual_identity(corpus);
  tokenizer_contract();
  determinism();
  std::printf("%d of 10 criteria passed\n", 10 - failures);
  return failures == 0 ? 0 : 1;
}
