// densedct: command-line driver for the dense-DCT pipeline.
//
// Exit codes: 0 success, 2 usage/input error, 3 numeric failure.

#include <algorithm>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <mutex>
#include <set>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "densedct/densedct.hpp"

namespace fs = std::filesystem;
using json = nlohmann::json;
using namespace densedct;

namespace {

constexpr const char* kVersion = "0.1.0";
constexpr const char* kManifest = "manifest.tsv";

struct NumericFailure : std::runtime_error {
  using std::runtime_error::runtime_error;
};

int default_workers() {
  if (const char* env = std::getenv("DENSEDCT_WORKERS")) {
    try {
      const int w = std::stoi(env);
      if (w >= 1) return w;
    } catch (const std::exception&) {
    }
    std::cerr << "warning: ignoring invalid DENSEDCT_WORKERS='" << env << "'\n";
  }
  return 1;
}

void make_dir(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw IoError("cannot create directory " + dir.string() + ": " + ec.message());
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError("cannot open for writing: " + path.string());
  os << text;
}

template <typename Fn>
void write_stream(const fs::path& path, Fn&& fn) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError("cannot open for writing: " + path.string());
  fn(os);
  if (!os) throw IoError("write failed: " + path.string());
}

// Written next to every command's outputs. No timestamps, so reruns match.
void write_run_config(const fs::path& dir, const std::string& command, const json& params) {
  json j;
  j["tool"] = "densedct";
  j["version"] = kVersion;
  j["command"] = command;
  j["params"] = params;
  write_text(dir / "run_config.json", j.dump(2) + "\n");
}

std::vector<int> parse_int_list(const std::string& s) {
  std::vector<int> out;
  std::stringstream ss(s);
  std::string tok;
  while (std::getline(ss, tok, ',')) {
    if (tok.empty()) continue;
    try {
      std::size_t used = 0;
      out.push_back(std::stoi(tok, &used));
      if (used != tok.size()) throw std::invalid_argument(tok);
    } catch (const std::exception&) {
      throw ArgumentError("bad integer in list: '" + tok + "'");
    }
  }
  return out;
}

double parse_threshold(const std::string& s) {
  if (s == "-inf") return -std::numeric_limits<double>::infinity();
  if (s == "inf" || s == "+inf") return std::numeric_limits<double>::infinity();
  try {
    std::size_t used = 0;
    const double t = std::stod(s, &used);
    if (used != s.size() || std::isnan(t)) throw std::invalid_argument(s);
    return t;
  } catch (const std::exception&) {
    throw ArgumentError("bad threshold: '" + s + "'");
  }
}

std::string threshold_text(double t) {
  if (std::isinf(t)) return t < 0 ? "-inf" : "inf";
  return format_double(t);
}

ChromaUpsample parse_chroma(const std::string& s) {
  if (s == "nearest") return ChromaUpsample::Nearest;
  if (s == "bilinear") return ChromaUpsample::Bilinear;
  throw ArgumentError("unknown chroma upsampling: " + s);
}

ResizeMethod parse_resize(const std::string& s) {
  if (s == "nearest") return ResizeMethod::Nearest;
  if (s == "bilinear") return ResizeMethod::Bilinear;
  throw ArgumentError("unknown resize method: " + s);
}

int block_size_for(int channels) {
  for (int n = 1; 3 * n * n <= channels; ++n)
    if (3 * n * n == channels) return n;
  throw ArgumentError("channel count " + std::to_string(channels) + " is not 3*N^2");
}

// --- Tensor directories ---------------------------------------------------

struct TensorItem {
  std::string name;
  int label = 0;
  FrequencyTensor tensor;
};

std::vector<TensorItem> load_tensor_dir(const fs::path& dir, int workers) {
  const auto manifest = dir / kManifest;
  if (!fs::exists(manifest)) throw IoError("no " + std::string(kManifest) + " in " + dir.string());
  const auto entries = read_manifest(manifest.string());
  if (entries.empty()) throw ArgumentError("empty manifest: " + manifest.string());
  std::vector<TensorItem> items(entries.size());
  parallel_for(entries.size(), workers, [&](std::size_t i) {
    items[i] = {entries[i].path, entries[i].label, load_tensor((dir / entries[i].path).string())};
  });
  for (const auto& it : items)
    if (it.tensor.channels() != items[0].tensor.channels() || it.tensor.height() != items[0].tensor.height() ||
        it.tensor.width() != items[0].tensor.width() || it.tensor.descriptors != items[0].tensor.descriptors)
      throw ArgumentError("tensor layout differs across " + dir.string() + " (" + it.name + ")");
  return items;
}

FrequencyDataset to_dataset(const std::vector<TensorItem>& items) {
  FrequencyDataset ds;
  for (const auto& it : items) {
    ds.inputs.push_back(it.tensor.coeffs);
    ds.labels.push_back(it.label);
    ds.class_count = std::max(ds.class_count, it.label + 1);
  }
  ds.validate();
  return ds;
}

std::string tensor_name(const std::string& relative) {
  auto s = fs::path(relative).replace_extension(".dft").generic_string();
  std::replace(s.begin(), s.end(), '/', '_');
  return s;
}

std::string stem_of(const std::string& name) { return fs::path(name).stem().string(); }

void write_history_csv(const fs::path& path, const std::vector<EpochStats>& history) {
  write_stream(path, [&](std::ostream& os) {
    os << "epoch,steps,mean_loss,accuracy\n";
    for (const auto& h : history)
      os << h.epoch << ',' << h.steps << ',' << format_double(h.mean_loss) << ',' << format_double(h.accuracy) << '\n';
  });
}

// N×N score grids as PGM, each cell enlarged for viewing; scaled to [0, max].
void render_grids(const fs::path& dir, const std::string& prefix, std::span<const double> scores, int n) {
  double hi = 0.0;
  for (double s : scores) hi = std::max(hi, s);
  if (hi <= 0.0) hi = 1.0;
  const int nn = n * n;
  for (int comp = 0; comp < 3; ++comp) {
    Plane<double> g(n, n);
    for (int k = 0; k < nn; ++k) g.data[k] = scores[comp * nn + k];
    save_pgm(resample_nearest(g, n * 16, n * 16), (dir / (prefix + component_name(static_cast<Component>(comp)) + ".pgm")).string(),
             0.0, hi);
  }
}

// --- synth ----------------------------------------------------------------

struct SynthArgs {
  std::string out;
  std::uint64_t seed = 0;
  int n = 512;
  int classes = 2;
  std::string informative = "0,5";
  int size = 32;
  int block = 8;
  double amplitude = SynthOptions{}.amplitude;
  double noise = SynthOptions{}.noise_sigma;
};

int cmd_synth(const SynthArgs& a) {
  SynthOptions opt;
  opt.block_size = a.block;
  opt.amplitude = a.amplitude;
  opt.noise_sigma = a.noise;
  auto ds = synth_dataset(a.seed, a.n, a.classes, parse_int_list(a.informative), a.size, opt);
  const fs::path out(a.out);
  make_dir(out);
  std::vector<ManifestEntry> entries;
  for (std::size_t i = 0; i < ds.items.size(); ++i) {
    char name[32];
    std::snprintf(name, sizeof name, "img_%05zu.png", i);
    save_png(ds.items[i].image, (out / name).string());
    entries.push_back({name, ds.items[i].label});
  }
  write_manifest((out / kManifest).string(), entries);
  write_run_config(out, "synth",
                   {{"seed", a.seed}, {"n", a.n}, {"classes", a.classes}, {"informative", parse_int_list(a.informative)},
                    {"size", a.size}, {"block", a.block}, {"amplitude", a.amplitude}, {"noise", a.noise}});
  std::cout << "wrote " << entries.size() << " images to " << out.string() << '\n';
  return 0;
}

// --- encode ---------------------------------------------------------------

struct EncodeArgs {
  std::string in, out;
  int size = 0;
  int block = 8;
  std::string chroma = "nearest";
  std::string resize = "bilinear";
  int workers = 1;
};

std::vector<ManifestEntry> list_inputs(const fs::path& in) {
  if (!fs::is_directory(in)) throw IoError("input directory not found: " + in.string());
  if (fs::exists(in / kManifest)) return read_manifest((in / kManifest).string());
  std::vector<ManifestEntry> entries;
  for (const auto& e : fs::recursive_directory_iterator(in)) {
    if (!e.is_regular_file()) continue;
    const auto ext = detail::lower_ext(e.path().string());
    if (ext == ".png" || ext == ".ppm" || ext == ".pgm" || ext == ".pnm")
      entries.push_back({fs::relative(e.path(), in).generic_string(), 0});
  }
  std::sort(entries.begin(), entries.end(), [](const auto& x, const auto& y) { return x.path < y.path; });
  return entries;
}

int cmd_encode(const EncodeArgs& a) {
  const fs::path in(a.in), out(a.out);
  const auto inputs = list_inputs(in);
  if (inputs.empty()) throw ArgumentError("no input images in " + in.string());
  if (a.size < 0) throw ArgumentError("--size must be >= 0");
  const auto mode = parse_chroma(a.chroma);
  const auto method = parse_resize(a.resize);
  make_dir(out);

  std::vector<std::string> errors(inputs.size());
  std::vector<std::string> names(inputs.size());
  parallel_for(inputs.size(), a.workers, [&](std::size_t i) {
    try {
      auto img = load_image((in / inputs[i].path).string());
      if (a.size > 0 && (img.width != a.size || img.height != a.size)) img = resize(img, a.size, a.size, method);
      const auto t = encode_rgb(img, a.block, mode);
      names[i] = tensor_name(inputs[i].path);
      save_tensor((out / names[i]).string(), t);
    } catch (const std::exception& e) {
      errors[i] = e.what();
    }
  });
  std::vector<ManifestEntry> entries;
  int failures = 0;
  for (std::size_t i = 0; i < inputs.size(); ++i) {
    if (!errors[i].empty()) {
      std::cerr << "error: " << inputs[i].path << ": " << errors[i] << '\n';
      ++failures;
    } else {
      entries.push_back({names[i], inputs[i].label});
    }
  }
  write_manifest((out / kManifest).string(), entries);
  write_run_config(out, "encode",
                   {{"in", a.in}, {"size", a.size}, {"block", a.block}, {"chroma_upsample", a.chroma},
                    {"resize_method", a.resize}, {"workers", a.workers}});
  std::cout << "encoded " << entries.size() << " of " << inputs.size() << " images\n";
  return failures ? 2 : 0;
}

// --- train-probe ----------------------------------------------------------

struct TrainArgs {
  std::string data, out;
  TrainConfig cfg;
  std::string head = "cosine";
  std::string widths = "32,64,128";
  std::string strides = "1,2,2";
  std::string checkpoint_epochs;
  int workers = 1;
};

int cmd_train(TrainArgs a) {
  const auto items = load_tensor_dir(a.data, a.workers);
  const auto ds = to_dataset(items);
  if (ds.class_count < 2) throw ArgumentError("training data needs at least 2 classes");
  a.cfg.head = parse_head(a.head);
  a.cfg.widths = parse_int_list(a.widths);
  a.cfg.strides = parse_int_list(a.strides);
  a.cfg.checkpoint_epochs = parse_int_list(a.checkpoint_epochs);
  const auto res = train_probe<float>(ds, a.cfg);
  const fs::path out(a.out);
  make_dir(out);
  save_checkpoint((out / "probe.dpck").string(), res.model, a.cfg.epochs);
  for (const auto& c : res.checkpoints) {
    char name[32];
    std::snprintf(name, sizeof name, "probe_epoch%03d.dpck", c.epoch);
    save_checkpoint((out / name).string(), c.model, c.epoch);
  }
  write_history_csv(out / "history.csv", res.history);
  write_run_config(out, "train-probe",
                   {{"data", a.data},
                    {"epochs", a.cfg.epochs},
                    {"batch", a.cfg.batch},
                    {"lr", a.cfg.lr},
                    {"warmup_steps", a.cfg.warmup_steps},
                    {"weight_decay", a.cfg.weight_decay},
                    {"seed", a.cfg.seed},
                    {"head", a.head},
                    {"cosine_scale", a.cfg.cosine_scale},
                    {"widths", a.cfg.widths},
                    {"strides", a.cfg.strides},
                    {"checkpoint_epochs", a.cfg.checkpoint_epochs}});
  const double acc = accuracy(res.model, ds);
  std::cout << "steps " << res.steps << ", training accuracy " << format_double(acc) << '\n';
  return 0;
}

// --- heatmap --------------------------------------------------------------

struct HeatmapArgs {
  std::string data, checkpoint, out;
  std::string tap;
  std::string normalization = "joint-max";
  std::size_t samples = 0;
  bool maps = false;
  int workers = 1;
};

int cmd_heatmap(const HeatmapArgs& a) {
  const auto items = load_tensor_dir(a.data, a.workers);
  const auto ds = to_dataset(items);
  const auto model = load_checkpoint<float>(a.checkpoint);
  if (model.config.in_channels != ds.inputs[0].channels)
    throw ArgumentError("checkpoint expects " + std::to_string(model.config.in_channels) + " channels, data has " +
                        std::to_string(ds.inputs[0].channels));
  if (ds.class_count > model.class_count()) throw ArgumentError("data labels exceed the checkpoint's class count");
  const std::string tap = a.tap.empty() ? model.default_tap() : a.tap;
  const auto norm = parse_normalization(a.normalization);
  const auto scores = aggregate_scores(model, ds, tap, norm, a.samples, a.workers);

  const fs::path out(a.out);
  make_dir(out);
  const int n = items[0].tensor.block_size;
  write_stream(out / "scores.csv", [&](std::ostream& os) { write_scores_csv(scores, n, os); });
  if (static_cast<int>(scores.size()) == 3 * n * n) {
    write_stream(out / "grid.csv", [&](std::ostream& os) { write_score_grid_csv(scores, n, os); });
    render_grids(out, "grid_", scores, n);
  }
  if (a.maps) {
    // Per-channel maps of the first item, on one shared scale.
    auto hs = channelwise_heatmap(model, ds.inputs[0].cast<float>(), ds.labels[0], tap);
    normalize_heatmaps(hs, HeatmapNormalization::JointMax);
    make_dir(out / "maps");
    for (std::size_t ch = 0; ch < hs.maps.size(); ++ch) {
      char name[32];
      std::snprintf(name, sizeof name, "ch_%03zu.pgm", ch);
      save_pgm(hs.maps[ch], (out / "maps" / name).string(), 0.0, 1.0);
    }
  }
  write_run_config(out, "heatmap",
                   {{"data", a.data},
                    {"checkpoint", a.checkpoint},
                    {"tap", tap},
                    {"normalization", a.normalization},
                    {"samples", a.samples},
                    {"maps", a.maps},
                    {"workers", a.workers}});
  std::vector<int> order(scores.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](int x, int y) { return scores[x] > scores[y]; });
  std::cout << "top channels:";
  for (std::size_t i = 0; i < std::min<std::size_t>(5, order.size()); ++i)
    std::cout << ' ' << order[i] << " (" << format_double(scores[order[i]]) << ')';
  std::cout << '\n';
  return 0;
}

// --- select ---------------------------------------------------------------

struct SelectArgs {
  std::string scores, out;
  std::string threshold;
  std::string square;
};

int cmd_select(const SelectArgs& a) {
  if (a.threshold.empty() == a.square.empty()) throw ArgumentError("exactly one of --threshold or --square is required");
  const auto scores = read_scores_csv(a.scores);
  const int n = block_size_for(static_cast<int>(scores.size()));
  ChannelSelection sel;
  json params{{"scores", a.scores}};
  if (!a.threshold.empty()) {
    const double t = parse_threshold(a.threshold);
    sel = select_by_threshold(scores, t, n);
    params["threshold"] = threshold_text(t);
  } else {
    const auto sides = parse_int_list(a.square);
    if (sides.size() != 3) throw ArgumentError("--square expects sY,sCb,sCr");
    sel = select_square(n, sides[0], sides[1], sides[2]);
    sel.scores = scores;
    params["square"] = sides;
  }
  const fs::path out(a.out);
  make_dir(out);
  save_selection(sel, (out / "selection.json").string());
  write_run_config(out, "select", params);
  std::cout << "kept " << sel.size() << " of " << sel.total << " channels\n";
  return 0;
}

// --- reconstruct ----------------------------------------------------------

struct ReconstructArgs {
  std::string data, selection, out;
  int workers = 1;
};

struct ReconRow {
  std::string name;
  double psnr = 0.0;
  double max_abs = 0.0;
  double residual_energy = 0.0;
  double dropped = 0.0;
};

double psnr_db(const RgbImage& a, const RgbImage& b) {
  std::vector<double> sq(a.data.size());
  for (std::size_t i = 0; i < sq.size(); ++i) {
    const double d = 255.0 * (a.data[i] - b.data[i]);
    sq[i] = d * d;
  }
  const double mse = pairwise_sum(std::span<const double>(sq)) / static_cast<double>(sq.size());
  return mse > 0.0 ? 10.0 * std::log10(255.0 * 255.0 / mse) : std::numeric_limits<double>::infinity();
}

int cmd_reconstruct(const ReconstructArgs& a) {
  const auto items = load_tensor_dir(a.data, a.workers);
  const auto sel = load_selection(a.selection);
  if (sel.total != items[0].tensor.channels())
    throw ArgumentError("selection covers " + std::to_string(sel.total) + " channels, tensors have " +
                        std::to_string(items[0].tensor.channels()));
  const fs::path out(a.out);
  make_dir(out / "recon");
  make_dir(out / "residual");
  std::vector<ReconRow> rows(items.size());
  parallel_for(items.size(), a.workers, [&](std::size_t i) {
    const auto& t = items[i].tensor;
    const auto full = decode(t);
    const auto part = decode(zero_fill(apply_selection(t, sel)));
    const auto rgb_full = ycbcr_to_rgb(upsample_chroma(full));
    const auto rgb_part = ycbcr_to_rgb(upsample_chroma(part));
    RgbImage residual(rgb_full.width, rgb_full.height);
    double max_abs = 0.0;
    for (std::size_t k = 0; k < residual.data.size(); ++k) {
      const double d = rgb_full.data[k] - rgb_part.data[k];
      max_abs = std::max(max_abs, std::abs(d) * 255.0);
      residual.data[k] = std::clamp(0.5 + d, 0.0, 1.0);
    }
    const auto stem = stem_of(items[i].name);
    save_png(rgb_part, (out / "recon" / (stem + ".png")).string());
    save_png(residual, (out / "residual" / (stem + ".png")).string());
    const FrequencyTensor one[] = {t};
    rows[i] = {items[i].name, psnr_db(rgb_full, rgb_part), max_abs,
               plane_energy(difference(full, part), t.block_size), dropped_energy(channel_energy(one), sel)};
  });
  for (const auto& r : rows)
    if (!std::isfinite(r.residual_energy) || !std::isfinite(r.dropped) || std::isnan(r.psnr))
      throw NumericFailure("non-finite reconstruction statistics for " + r.name);

  write_stream(out / "psnr.csv", [&](std::ostream& os) {
    os << "name,kept,psnr_db,max_abs_residual,residual_energy,dropped_energy\n";
    for (const auto& r : rows)
      os << r.name << ',' << sel.size() << ',' << threshold_text(r.psnr) << ',' << format_double(r.max_abs) << ','
         << format_double(r.residual_energy) << ',' << format_double(r.dropped) << '\n';
  });
  write_run_config(out, "reconstruct", {{"data", a.data}, {"selection", a.selection}, {"workers", a.workers}});
  std::vector<double> ps;
  for (const auto& r : rows) ps.push_back(r.psnr);
  std::sort(ps.begin(), ps.end());
  const double median = ps.size() % 2 ? ps[ps.size() / 2] : 0.5 * (ps[ps.size() / 2 - 1] + ps[ps.size() / 2]);
  std::cout << "median PSNR " << threshold_text(median) << " dB over " << rows.size() << " images, " << sel.size()
            << " channels kept\n";
  return 0;
}

// --- energy ---------------------------------------------------------------

struct EnergyArgs {
  std::string data, out, selection;
  int workers = 1;
};

int cmd_energy(const EnergyArgs& a) {
  const auto items = load_tensor_dir(a.data, a.workers);
  std::vector<FrequencyTensor> ts;
  for (const auto& it : items) ts.push_back(it.tensor);
  const auto p = channel_energy(ts);
  for (double e : p.per_channel)
    if (!std::isfinite(e)) throw NumericFailure("non-finite channel energy");
  const fs::path out(a.out);
  make_dir(out);
  write_stream(out / "energy.csv", [&](std::ostream& os) { write_profile_csv(p, os); });
  if (static_cast<int>(p.per_channel.size()) == 3 * p.block_size * p.block_size)
    write_stream(out / "zigzag.csv", [&](std::ostream& os) { write_zigzag_csv(p, os); });
  json params{{"data", a.data}};
  if (!a.selection.empty()) {
    const auto sel = load_selection(a.selection);
    const double gain = density_gain(p, sel);
    write_stream(out / "density.csv", [&](std::ostream& os) {
      os << "kept,total,dropped_energy,total_energy,density_gain\n";
      os << sel.size() << ',' << sel.total << ',' << format_double(dropped_energy(p, sel)) << ','
         << format_double(p.total()) << ',' << format_double(gain) << '\n';
    });
    params["selection"] = a.selection;
    std::cout << "density gain " << format_double(gain) << '\n';
  }
  write_run_config(out, "energy", params);
  const auto top = std::max_element(p.per_channel.begin(), p.per_channel.end()) - p.per_channel.begin();
  std::cout << "total energy " << format_double(p.total()) << ", max channel " << top << '\n';
  return 0;
}

// --- embed ----------------------------------------------------------------

struct EmbedArgs {
  std::string data, selection, out, weights;
  int dim = 96;
  std::uint64_t seed = 0;
  std::string attention = "none";
  int reduction = 2;
  int workers = 1;
};

json attention_json(const CoordinateAttention<double>& a) {
  return {{"channels", a.channels}, {"reduction", a.reduction}, {"w1", a.w1}, {"b1", a.b1},
          {"wh", a.wh},             {"bh", a.bh},               {"ww", a.ww}, {"bw", a.bw}};
}

int cmd_embed(const EmbedArgs& a) {
  if (a.attention != "none" && a.attention != "before" && a.attention != "after")
    throw ArgumentError("--attention must be none, before or after");
  const auto items = load_tensor_dir(a.data, a.workers);
  const auto sel = load_selection(a.selection);
  const int in_dim = static_cast<int>(sel.size());
  const auto emb = a.weights.empty() ? make_linear_embedding<double>(in_dim, a.dim, a.seed) : load_embedding(a.weights);
  if (emb.in_dim != in_dim) throw ArgumentError("embedding expects " + std::to_string(emb.in_dim) + " input channels");
  std::optional<CoordinateAttention<double>> att;
  if (a.attention == "before") att = make_coordinate_attention<double>(in_dim, a.reduction, a.seed + 1);
  if (a.attention == "after") att = make_coordinate_attention<double>(emb.dim, a.reduction, a.seed + 1);

  const fs::path out(a.out);
  make_dir(out / "tokens");
  std::vector<std::array<int, 3>> shapes(items.size());
  parallel_for(items.size(), a.workers, [&](std::size_t i) {
    auto x = apply_selection(items[i].tensor, sel).values.coeffs;
    if (a.attention == "before") x = coordinate_attention(x, *att);
    auto g = dense_embed(x, emb);
    if (a.attention == "after") g = TokenGrid<double>::from_chw(coordinate_attention(g.to_chw(), *att));
    for (double v : g.tokens)
      if (!std::isfinite(v)) throw NumericFailure("non-finite token for " + items[i].name);
    shapes[i] = {static_cast<int>(g.count()), g.dim, 0};
    save_tokens(g, (out / "tokens" / items[i].name).string());
  });
  std::vector<ManifestEntry> entries;
  for (const auto& it : items) entries.push_back({"tokens/" + it.name, it.label});
  write_manifest((out / kManifest).string(), entries);
  save_embedding(emb, (out / "embedding.json").string());
  if (att) write_text(out / "attention.json", attention_json(*att).dump() + "\n");
  write_run_config(out, "embed",
                   {{"data", a.data},
                    {"selection", a.selection},
                    {"weights", a.weights},
                    {"dim", a.dim},
                    {"seed", a.seed},
                    {"attention", a.attention},
                    {"reduction", a.reduction},
                    {"workers", a.workers}});
  std::cout << items.size() << " token grids of " << shapes[0][0] << " tokens x " << shapes[0][1] << '\n';
  return 0;
}

// --- repro ----------------------------------------------------------------

struct Fig5Args {
  std::string out;
  std::uint64_t seed = 0;
  int n = 512;
  int size = 32;
  std::string informative = "0,5";
  int epochs = TrainConfig{}.epochs;
  std::size_t samples = 128;
  std::string normalization = "joint-max";
  int workers = 1;
};

json fig5_params(const Fig5Args& a) {
  return {{"seed", a.seed},       {"n", a.n},       {"size", a.size},
          {"informative", parse_int_list(a.informative)}, {"epochs", a.epochs}, {"samples", a.samples},
          {"normalization", a.normalization}, {"workers", a.workers}};
}

// Synthetic probe run: scores per tap plus training stats.
struct Fig5Result {
  std::map<std::string, std::vector<double>> scores;
  std::vector<EpochStats> history;
  double accuracy = 0.0;
  int steps = 0;
};

Fig5Result run_fig5(const Fig5Args& a) {
  const auto informative = parse_int_list(a.informative);
  const auto ds = synth_dataset(a.seed, a.n, 2, informative, a.size);
  const auto fd = to_frequency_dataset(ds);
  TrainConfig cfg;
  cfg.seed = a.seed;
  cfg.epochs = a.epochs;
  const auto res = train_probe<float>(fd, cfg);
  Fig5Result r;
  r.history = res.history;
  r.steps = res.steps;
  r.accuracy = accuracy(res.model, fd);
  const auto norm = parse_normalization(a.normalization);
  for (const auto& tap : res.model.tap_names())
    r.scores[tap] = aggregate_scores(res.model, fd, tap, norm, a.samples, a.workers);
  return r;
}

int cmd_fig5(const Fig5Args& a) {
  const auto informative = parse_int_list(a.informative);
  const auto r = run_fig5(a);
  const fs::path out(a.out);
  make_dir(out);
  for (const auto& [tap, s] : r.scores) {
    write_stream(out / ("scores_" + tap + ".csv"), [&](std::ostream& os) { write_scores_csv(s, 8, os); });
    write_stream(out / ("grid_" + tap + ".csv"), [&](std::ostream& os) { write_score_grid_csv(s, 8, os); });
    render_grids(out, "grid_" + tap + "_", s, 8);
  }
  write_history_csv(out / "history.csv", r.history);

  // Recovery check on the last block: does some threshold keep exactly the
  // informative set?
  const auto& s = r.scores.rbegin()->second;
  std::vector<int> order(s.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](int x, int y) { return s[x] > s[y]; });
  const std::size_t k = informative.size();
  std::set<int> top(order.begin(), order.begin() + k);
  const bool recovered = top == std::set<int>(informative.begin(), informative.end()) && s[order[k - 1]] > s[order[k]];
  json report{{"tap", r.scores.rbegin()->first},
              {"train_accuracy", r.accuracy},
              {"steps", r.steps},
              {"top5", std::vector<int>(order.begin(), order.begin() + 5)},
              {"recovered", recovered}};
  if (recovered) {
    const double t = 0.5 * (s[order[k - 1]] + s[order[k]]);
    report["threshold"] = format_double(t);
    save_selection(select_by_threshold(s, t, 8), (out / "selection.json").string());
  }
  write_text(out / "recovery.json", report.dump(2) + "\n");
  write_run_config(out, "repro fig5", fig5_params(a));
  std::cout << "training accuracy " << format_double(r.accuracy) << ", top5";
  for (int i = 0; i < 5; ++i) std::cout << ' ' << order[i];
  std::cout << (recovered ? ", informative set recovered\n" : ", informative set NOT recovered\n");
  return 0;
}

struct Table3Args {
  Fig5Args fig5;
  std::string scores;
  std::string thresholds = "0.08,0.07,0.06,0.03,0.022,0.02,0.01,0.0,-inf";
};

int cmd_table3(const Table3Args& a) {
  std::vector<double> scores;
  json params;
  if (!a.scores.empty()) {
    scores = read_scores_csv(a.scores);
    params["scores"] = a.scores;
  } else {
    scores = run_fig5(a.fig5).scores.rbegin()->second;
    params["fig5"] = fig5_params(a.fig5);
  }
  const int n = block_size_for(static_cast<int>(scores.size()));
  std::vector<double> ts;
  std::stringstream ss(a.thresholds);
  for (std::string tok; std::getline(ss, tok, ',');) ts.push_back(parse_threshold(tok));
  if (ts.empty()) throw ArgumentError("no thresholds given");
  std::vector<std::string> shown;
  for (double t : ts) shown.push_back(threshold_text(t));
  params["thresholds"] = shown;
  const fs::path out(a.fig5.out);
  make_dir(out);
  write_stream(out / "scores.csv", [&](std::ostream& os) { write_scores_csv(scores, n, os); });
  write_stream(out / "table3.csv", [&](std::ostream& os) {
    os << "threshold,channels\n";
    for (double t : ts) os << threshold_text(t) << ',' << select_by_threshold(scores, t, n).size() << '\n';
  });
  write_run_config(out, "repro table3", params);
  for (double t : ts) std::cout << threshold_text(t) << " -> " << select_by_threshold(scores, t, n).size() << '\n';
  return 0;
}

struct Table5Args {
  std::string out, input;
  int base = 64;
  int block = 8;
  std::string resize = "bilinear";
  std::uint64_t seed = 0;
};

// Resize ratios of the base size; ratio 8 uses 448 (the transformer's
// 56×56 token grid) rather than 8·64.
int cmd_table5(const Table5Args& a) {
  RgbImage img(a.base, a.base);
  if (!a.input.empty()) {
    img = resize(load_image(a.input), a.base, a.base, parse_resize(a.resize));
  } else {
    Rng rng(a.seed);
    for (double& v : img.data) v = rng.uniform();
  }
  const fs::path out(a.out);
  make_dir(out);
  std::ostringstream csv;
  csv << "ratio,image_size,channels,height,width\n";
  for (int ratio : {1, 2, 4, 8}) {
    const int size = ratio == 8 ? 448 : a.base * ratio;
    const auto t = encode_rgb(size == a.base ? img : resize(img, size, size, parse_resize(a.resize)), a.block);
    csv << ratio << ',' << size << ',' << t.channels() << ',' << t.height() << ',' << t.width() << '\n';
  }
  write_text(out / "table5_shapes.csv", csv.str());
  write_run_config(out, "repro table5-shapes",
                   {{"input", a.input}, {"base", a.base}, {"block", a.block}, {"resize_method", a.resize}, {"seed", a.seed}});
  std::cout << csv.str();
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Dense block-DCT frequency pipeline: encode, probe, select, reconstruct, embed"};
  app.require_subcommand(1);
  app.set_version_flag("--version", kVersion);
  const int workers = default_workers();

  SynthArgs synth;
  auto* c_synth = app.add_subcommand("synth", "Generate a labeled synthetic dataset (PNG + manifest)");
  c_synth->add_option("--out", synth.out, "Output directory")->required();
  c_synth->add_option("--seed", synth.seed, "Random seed");
  c_synth->add_option("--n", synth.n, "Number of images");
  c_synth->add_option("--classes", synth.classes, "Number of classes");
  c_synth->add_option("--informative", synth.informative, "Comma-separated informative channel indices");
  c_synth->add_option("--size", synth.size, "Image side in pixels");
  c_synth->add_option("--block", synth.block, "Block size");
  c_synth->add_option("--amplitude", synth.amplitude, "Top-class coefficient level");
  c_synth->add_option("--noise", synth.noise, "Per-coefficient noise std");

  EncodeArgs enc;
  enc.workers = workers;
  auto* c_enc = app.add_subcommand("encode", "Encode images into DFT1 frequency tensors");
  c_enc->add_option("--in", enc.in, "Input directory (uses manifest.tsv if present)")->required();
  c_enc->add_option("--out", enc.out, "Output directory")->required();
  c_enc->add_option("--size", enc.size, "Resize to size x size first (0 = keep)");
  c_enc->add_option("--block", enc.block, "Block size N");
  c_enc->add_option("--chroma-upsample", enc.chroma, "nearest | bilinear");
  c_enc->add_option("--resize-method", enc.resize, "bilinear | nearest");
  c_enc->add_option("--workers", enc.workers, "Worker threads");

  TrainArgs tr;
  tr.workers = workers;
  auto* c_tr = app.add_subcommand("train-probe", "Train the probe network on encoded tensors");
  c_tr->add_option("--data", tr.data, "Encoded data directory")->required();
  c_tr->add_option("--out", tr.out, "Output directory")->required();
  c_tr->add_option("--epochs", tr.cfg.epochs, "Epochs");
  c_tr->add_option("--batch", tr.cfg.batch, "Batch size");
  c_tr->add_option("--lr", tr.cfg.lr, "Peak learning rate");
  c_tr->add_option("--warmup", tr.cfg.warmup_steps, "Linear warmup steps");
  c_tr->add_option("--weight-decay", tr.cfg.weight_decay, "Weight decay");
  c_tr->add_option("--seed", tr.cfg.seed, "Random seed");
  c_tr->add_option("--head", tr.head, "cosine | linear");
  c_tr->add_option("--cosine-scale", tr.cfg.cosine_scale, "Cosine head scale s");
  c_tr->add_option("--widths", tr.widths, "Stage widths");
  c_tr->add_option("--strides", tr.strides, "Stage strides");
  c_tr->add_option("--checkpoint-epochs", tr.checkpoint_epochs, "Epochs to snapshot, comma-separated");
  c_tr->add_option("--workers", tr.workers, "Worker threads (loading)");

  HeatmapArgs hm;
  hm.workers = workers;
  auto* c_hm = app.add_subcommand("heatmap", "Channel-wise GradCAM scores from a trained probe");
  c_hm->add_option("--data", hm.data, "Encoded data directory")->required();
  c_hm->add_option("--checkpoint", hm.checkpoint, "Probe checkpoint")->required();
  c_hm->add_option("--out", hm.out, "Output directory")->required();
  c_hm->add_option("--tap", hm.tap, "block1..blockK (default: last)");
  c_hm->add_option("--normalization", hm.normalization, "joint-max | raw");
  c_hm->add_option("--samples", hm.samples, "Use only the first N items (0 = all)");
  c_hm->add_flag("--maps", hm.maps, "Also write per-channel maps of the first item");
  c_hm->add_option("--workers", hm.workers, "Worker threads");

  SelectArgs se;
  auto* c_se = app.add_subcommand("select", "Build a channel selection from scores");
  c_se->add_option("--scores", se.scores, "Scores CSV")->required();
  c_se->add_option("--out", se.out, "Output directory")->required();
  auto* o_t = c_se->add_option("--threshold", se.threshold, "Keep channels with score > t (accepts -inf)");
  auto* o_s = c_se->add_option("--square", se.square, "Square baseline sides sY,sCb,sCr");
  o_t->excludes(o_s);

  ReconstructArgs rc;
  rc.workers = workers;
  auto* c_rc = app.add_subcommand("reconstruct", "Reconstruct images from selected channels");
  c_rc->add_option("--data", rc.data, "Encoded data directory")->required();
  c_rc->add_option("--selection", rc.selection, "Selection JSON")->required();
  c_rc->add_option("--out", rc.out, "Output directory")->required();
  c_rc->add_option("--workers", rc.workers, "Worker threads");

  EnergyArgs en;
  en.workers = workers;
  auto* c_en = app.add_subcommand("energy", "Per-channel energy and zig-zag profiles");
  c_en->add_option("--data", en.data, "Encoded data directory")->required();
  c_en->add_option("--out", en.out, "Output directory")->required();
  c_en->add_option("--selection", en.selection, "Optional selection for density gain");
  c_en->add_option("--workers", en.workers, "Worker threads (loading)");

  EmbedArgs em;
  em.workers = workers;
  auto* c_em = app.add_subcommand("embed", "Embed dense tensors into token grids");
  c_em->add_option("--data", em.data, "Encoded data directory")->required();
  c_em->add_option("--selection", em.selection, "Selection JSON")->required();
  c_em->add_option("--out", em.out, "Output directory")->required();
  c_em->add_option("--weights", em.weights, "Embedding JSON (default: seeded init)");
  c_em->add_option("--dim", em.dim, "Token dimension");
  c_em->add_option("--seed", em.seed, "Random seed");
  c_em->add_option("--attention", em.attention, "none | before | after");
  c_em->add_option("--reduction", em.reduction, "Coordinate attention reduction ratio");
  c_em->add_option("--workers", em.workers, "Worker threads");

  auto* c_repro = app.add_subcommand("repro", "Figure/table recipes");
  c_repro->require_subcommand(1);
  Fig5Args f5;
  f5.workers = workers;
  auto add_fig5 = [](CLI::App* c, Fig5Args& f) {
    c->add_option("--out", f.out, "Output directory")->required();
    c->add_option("--seed", f.seed, "Random seed");
    c->add_option("--n", f.n, "Synthetic images");
    c->add_option("--size", f.size, "Image side");
    c->add_option("--informative", f.informative, "Informative channels");
    c->add_option("--epochs", f.epochs, "Probe epochs");
    c->add_option("--samples", f.samples, "Heatmap samples");
    c->add_option("--normalization", f.normalization, "joint-max | raw");
    c->add_option("--workers", f.workers, "Worker threads");
  };
  auto* c_f5 = c_repro->add_subcommand("fig5", "Synthetic channel-wise heatmap grids per block");
  add_fig5(c_f5, f5);
  Table3Args t3;
  t3.fig5.workers = workers;
  auto* c_t3 = c_repro->add_subcommand("table3", "Threshold sweep channel counts");
  add_fig5(c_t3, t3.fig5);
  c_t3->add_option("--scores", t3.scores, "Scores CSV (default: run the fig5 recipe)");
  c_t3->add_option("--thresholds", t3.thresholds, "Comma-separated thresholds");
  Table5Args t5;
  auto* c_t5 = c_repro->add_subcommand("table5-shapes", "Tensor shapes for resize ratios 1/2/4/8");
  c_t5->add_option("--out", t5.out, "Output directory")->required();
  c_t5->add_option("--input", t5.input, "Source image (default: seeded random)");
  c_t5->add_option("--base", t5.base, "Base image side");
  c_t5->add_option("--block", t5.block, "Block size");
  c_t5->add_option("--resize-method", t5.resize, "bilinear | nearest");
  c_t5->add_option("--seed", t5.seed, "Random seed");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForVersion& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }

  try {
    if (*c_synth) return cmd_synth(synth);
    if (*c_enc) return cmd_encode(enc);
    if (*c_tr) return cmd_train(tr);
    if (*c_hm) return cmd_heatmap(hm);
    if (*c_se) return cmd_select(se);
    if (*c_rc) return cmd_reconstruct(rc);
    if (*c_en) return cmd_energy(en);
    if (*c_em) return cmd_embed(em);
    if (*c_f5) return cmd_fig5(f5);
    if (*c_t3) return cmd_table3(t3);
    if (*c_t5) return cmd_table5(t5);
  } catch (const TrainingError& e) {
    std::cerr << "numeric failure: " << e.what() << '\n';
    return 3;
  } catch (const NumericFailure& e) {
    std::cerr << "numeric failure: " << e.what() << '\n';
    return 3;
  } catch (const ArgumentError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  } catch (const FormatError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  } catch (const IoError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  } catch (const StateError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  } catch (const std::system_error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "numeric failure: " << e.what() << '\n';
    return 3;
  }
  return 2;
}
