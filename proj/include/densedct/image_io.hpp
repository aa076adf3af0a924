#pragma once

#include <png.h>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <memory>
#include <sstream>
#include <string>

#include "densedct/block_dct.hpp"

namespace densedct {

// --- Netpbm ---------------------------------------------------------------

namespace detail {

inline int read_pnm_int(std::istream& is) {
  int c = is.get();
  while (c != std::char_traits<char>::eof()) {
    if (c == '#') {
      while (c != '\n' && c != std::char_traits<char>::eof()) c = is.get();
    } else if (!std::isspace(c)) {
      break;
    }
    c = is.get();
  }
  if (c == std::char_traits<char>::eof() || !std::isdigit(c)) throw FormatError("PNM: malformed header");
  long v = 0;
  while (c != std::char_traits<char>::eof() && std::isdigit(c)) {
    v = v * 10 + (c - '0');
    if (v > 1'000'000) throw FormatError("PNM: header value out of range");
    c = is.get();
  }
  // c is the single whitespace byte that terminates the field.
  if (c == std::char_traits<char>::eof()) throw FormatError("PNM: truncated header");
  return static_cast<int>(v);
}

inline double to_unit(unsigned v, unsigned maxval) {
  const unsigned v8 = maxval == 255 ? v : static_cast<unsigned>(std::lround(v * 255.0 / maxval));
  return v8 / 255.0;
}

inline std::uint8_t to_u8(double unit) { return static_cast<std::uint8_t>(std::lround(std::clamp(unit, 0.0, 1.0) * 255.0)); }

inline RgbImage read_pnm(std::istream& is) {
  char magic[2];
  is.read(magic, 2);
  if (!is || magic[0] != 'P' || (magic[1] != '5' && magic[1] != '6')) throw FormatError("PNM: expected P5 or P6");
  const bool color = magic[1] == '6';
  const int w = read_pnm_int(is);
  const int h = read_pnm_int(is);
  const int maxval = read_pnm_int(is);
  if (w < 1 || h < 1 || maxval < 1 || maxval > 65535) throw FormatError("PNM: invalid dimensions or maxval");
  const int bytes = maxval > 255 ? 2 : 1;
  const int chans = color ? 3 : 1;
  std::vector<unsigned char> raw(static_cast<std::size_t>(w) * h * chans * bytes);
  is.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(raw.size()));
  if (static_cast<std::size_t>(is.gcount()) != raw.size()) throw FormatError("PNM: truncated pixel data");
  RgbImage img(w, h);
  for (int r = 0; r < h; ++r)
    for (int c = 0; c < w; ++c)
      for (int k = 0; k < 3; ++k) {
        const std::size_t idx = (static_cast<std::size_t>(r) * w + c) * chans + (color ? k : 0);
        const unsigned v = bytes == 1 ? raw[idx] : (raw[2 * idx] << 8 | raw[2 * idx + 1]);
        if (v > static_cast<unsigned>(maxval)) throw FormatError("PNM: sample exceeds maxval");
        img.at(k, r, c) = to_unit(v, static_cast<unsigned>(maxval));
      }
  return img;
}

struct PngReadDeleter {
  png_structp png = nullptr;
  png_infop info = nullptr;
  ~PngReadDeleter() {
    if (png) png_destroy_read_struct(&png, info ? &info : nullptr, nullptr);
  }
};

struct FileCloser {
  void operator()(std::FILE* f) const {
    if (f) std::fclose(f);
  }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

inline RgbImage read_png(const std::string& path) {
  FilePtr fp(std::fopen(path.c_str(), "rb"));
  if (!fp) throw IoError("cannot open: " + path);
  PngReadDeleter guard;
  guard.png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  if (!guard.png) throw IoError("png_create_read_struct failed");
  guard.info = png_create_info_struct(guard.png);
  if (!guard.info) throw IoError("png_create_info_struct failed");
  if (setjmp(png_jmpbuf(guard.png))) throw FormatError("PNG: decode failed: " + path);
  png_init_io(guard.png, fp.get());
  png_read_info(guard.png, guard.info);
  const int w = static_cast<int>(png_get_image_width(guard.png, guard.info));
  const int h = static_cast<int>(png_get_image_height(guard.png, guard.info));
  const int color = png_get_color_type(guard.png, guard.info);
  const int depth = png_get_bit_depth(guard.png, guard.info);
  if (color == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(guard.png);
  if (color == PNG_COLOR_TYPE_GRAY && depth < 8) png_set_expand_gray_1_2_4_to_8(guard.png);
  if (color == PNG_COLOR_TYPE_GRAY || color == PNG_COLOR_TYPE_GRAY_ALPHA) png_set_gray_to_rgb(guard.png);
  if (png_get_valid(guard.png, guard.info, PNG_INFO_tRNS)) png_set_tRNS_to_alpha(guard.png);
  if (depth == 16) png_set_strip_16(guard.png);
  png_set_strip_alpha(guard.png);
  png_read_update_info(guard.png, guard.info);
  const std::size_t rowbytes = png_get_rowbytes(guard.png, guard.info);
  if (rowbytes != static_cast<std::size_t>(w) * 3) throw FormatError("PNG: unexpected row layout");
  std::vector<png_byte> pixels(rowbytes * h);
  std::vector<png_bytep> rows(h);
  for (int r = 0; r < h; ++r) rows[r] = pixels.data() + r * rowbytes;
  png_read_image(guard.png, rows.data());
  png_read_end(guard.png, nullptr);
  RgbImage img(w, h);
  for (int r = 0; r < h; ++r)
    for (int c = 0; c < w; ++c)
      for (int k = 0; k < 3; ++k) img.at(k, r, c) = rows[r][3 * c + k] / 255.0;
  return img;
}

inline void write_png(const std::string& path, int w, int h, int chans, const std::vector<std::uint8_t>& interleaved) {
  FilePtr fp(std::fopen(path.c_str(), "wb"));
  if (!fp) throw IoError("cannot open for writing: " + path);
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  if (!png) throw IoError("png_create_write_struct failed");
  png_infop info = png_create_info_struct(png);
  struct Guard {
    png_structp* p;
    png_infop* i;
    ~Guard() { png_destroy_write_struct(p, i); }
  } guard{&png, &info};
  if (!info) throw IoError("png_create_info_struct failed");
  if (setjmp(png_jmpbuf(png))) throw IoError("PNG: encode failed: " + path);
  png_init_io(png, fp.get());
  png_set_IHDR(png, info, w, h, 8, chans == 3 ? PNG_COLOR_TYPE_RGB : PNG_COLOR_TYPE_GRAY, PNG_INTERLACE_NONE,
               PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  for (int r = 0; r < h; ++r)
    png_write_row(png, const_cast<png_bytep>(interleaved.data() + static_cast<std::size_t>(r) * w * chans));
  png_write_end(png, nullptr);
}

inline std::string lower_ext(const std::string& path) {
  auto ext = std::filesystem::path(path).extension().string();
  for (auto& ch : ext) ch = static_cast<char>(std::tolower(static_cast<unsigned char>(ch)));
  return ext;
}

}  // namespace detail

inline RgbImage load_image(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open: " + path);
  unsigned char sig[8] = {};
  is.read(reinterpret_cast<char*>(sig), 8);
  const auto got = is.gcount();
  if (got >= 8 && png_sig_cmp(sig, 0, 8) == 0) {
    is.close();
    return detail::read_png(path);
  }
  if (got >= 2 && sig[0] == 'P' && (sig[1] == '5' || sig[1] == '6')) {
    is.clear();
    is.seekg(0);
    return detail::read_pnm(is);
  }
  throw FormatError("unsupported image format: " + path);
}

inline std::vector<std::uint8_t> to_interleaved_u8(const RgbImage& img) {
  std::vector<std::uint8_t> out(img.plane_size() * 3);
  for (int r = 0; r < img.height; ++r)
    for (int c = 0; c < img.width; ++c)
      for (int k = 0; k < 3; ++k)
        out[(static_cast<std::size_t>(r) * img.width + c) * 3 + k] = detail::to_u8(img.at(k, r, c));
  return out;
}

inline void save_ppm(const RgbImage& img, const std::string& path) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError("cannot open for writing: " + path);
  os << "P6\n" << img.width << ' ' << img.height << "\n255\n";
  const auto bytes = to_interleaved_u8(img);
  os.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!os) throw IoError("write failed: " + path);
}

inline void save_png(const RgbImage& img, const std::string& path) {
  detail::write_png(path, img.width, img.height, 3, to_interleaved_u8(img));
}

// Gray plane with values in [lo, hi] mapped linearly to 0..255.
inline void save_pgm(const Plane<double>& p, const std::string& path, double lo = 0.0, double hi = 255.0) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError("cannot open for writing: " + path);
  os << "P5\n" << p.width << ' ' << p.height << "\n255\n";
  const double span = hi > lo ? hi - lo : 1.0;
  for (double v : p.data) os.put(static_cast<char>(detail::to_u8((v - lo) / span)));
  if (!os) throw IoError("write failed: " + path);
}

// Dispatches on extension: .png, otherwise binary PPM.
inline void save_image(const RgbImage& img, const std::string& path) {
  if (detail::lower_ext(path) == ".png")
    save_png(img, path);
  else
    save_ppm(img, path);
}

// --- Resize ---------------------------------------------------------------

enum class ResizeMethod { Nearest, Bilinear };

inline RgbImage resize(const RgbImage& img, int target_w, int target_h, ResizeMethod method = ResizeMethod::Bilinear) {
  if (target_w < 1 || target_h < 1) throw ArgumentError("resize: target dimensions must be >= 1");
  img.validate();
  RgbImage out(target_w, target_h);
  for (int k = 0; k < 3; ++k) {
    const auto p = img.plane(k);
    out.set_plane(k, method == ResizeMethod::Bilinear ? resample_bilinear(p, target_h, target_w)
                                                      : resample_nearest(p, target_h, target_w));
  }
  return out;
}

// --- Datasets -------------------------------------------------------------

struct LabeledItem {
  std::string path;  // relative reference; empty for in-memory items
  int label = 0;
  RgbImage image;
};

struct LabeledDataset {
  std::vector<LabeledItem> items;
  int class_count = 0;

  void validate() const {
    if (items.empty()) throw ArgumentError("LabeledDataset: empty");
    if (class_count < 1) throw ArgumentError("LabeledDataset: class_count must be positive");
    for (const auto& it : items)
      if (it.label < 0 || it.label >= class_count) throw ArgumentError("LabeledDataset: label out of range");
  }
};

struct ManifestEntry {
  std::string path;
  int label = -1;
};

// One `relative/path<TAB>label` per line.
inline std::vector<ManifestEntry> read_manifest(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw IoError("cannot open manifest: " + path);
  std::vector<ManifestEntry> out;
  std::string line;
  int lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const auto tab = line.find('\t');
    if (tab == std::string::npos) throw FormatError("manifest line " + std::to_string(lineno) + ": missing TAB");
    ManifestEntry e;
    e.path = line.substr(0, tab);
    try {
      std::size_t used = 0;
      e.label = std::stoi(line.substr(tab + 1), &used);
      if (used != line.size() - tab - 1) throw std::invalid_argument("trailing");
    } catch (const std::exception&) {
      throw FormatError("manifest line " + std::to_string(lineno) + ": bad label");
    }
    out.push_back(std::move(e));
  }
  return out;
}

inline void write_manifest(const std::string& path, const std::vector<ManifestEntry>& entries) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError("cannot open for writing: " + path);
  for (const auto& e : entries) os << e.path << '\t' << e.label << '\n';
}

inline LabeledDataset load_dataset(const std::string& manifest_path) {
  const auto base = std::filesystem::path(manifest_path).parent_path();
  LabeledDataset ds;
  for (const auto& e : read_manifest(manifest_path)) {
    ds.items.push_back({e.path, e.label, load_image((base / e.path).string())});
    ds.class_count = std::max(ds.class_count, e.label + 1);
  }
  ds.validate();
  return ds;
}

struct SynthOptions {
  int block_size = 8;
  double noise_sigma = 6.0;   // per-coefficient std of uninformative channels
  double amplitude = 80.0;    // coefficient offset of the top class on informative channels
};

// Class-labeled images built in the frequency domain. Class k carries level
// amplitude·k/(K−1), split across the informative channels by a random
// per-image weighting (so no single channel separates the classes, but their
// summed energy does). Every channel gets i.i.d. Gaussian noise (level-shifted, so DC sits at mid-gray),
// then the tensor is decoded to RGB.
inline LabeledDataset synth_dataset(std::uint64_t seed, int n, int class_count, const std::vector<int>& informative,
                                    int size, const SynthOptions& opt = {}) {
  const int bs = opt.block_size;
  const int nn = bs * bs;
  if (class_count < 2) throw ArgumentError("synth_dataset: class_count must be >= 2");
  if (n < 2 * class_count) throw ArgumentError("synth_dataset: n must be >= 2*class_count");
  if (size < 2 * bs || size % (2 * bs) != 0)
    throw ArgumentError("synth_dataset: size must be a positive multiple of 2*block_size");
  for (int ch : informative)
    if (ch < 0 || ch >= 3 * nn) throw ArgumentError("synth_dataset: informative channel out of range");

  std::vector<bool> is_informative(3 * nn, false);
  for (int ch : informative) is_informative[ch] = true;

  Rng rng(seed);
  const int grid = size / bs;
  LabeledDataset ds;
  ds.class_count = class_count;
  ds.items.reserve(n);
  for (int i = 0; i < n; ++i) {
    const int label = i % class_count;
    const double level = opt.amplitude * label / (class_count - 1);
    FrequencyTensor t;
    t.block_size = bs;
    t.descriptors = full_descriptors(bs);
    t.coeffs = Tensor3<double>(3 * nn, grid, grid);
    t.source_height = t.source_width = size;
    // Unit-norm random weights: Σ (level·w_c)² == level² per image.
    std::vector<double> weight(3 * nn, 0.0);
    double norm = 0.0;
    for (int ch : informative) {
      weight[ch] = 0.05 + rng.uniform();
      norm += weight[ch] * weight[ch];
    }
    for (double& w : weight) w /= std::sqrt(norm);
    for (int ch = 0; ch < 3 * nn; ++ch) {
      const bool luma = ch < nn;
      // Chroma maps are drawn on the half grid and replicated so the tensor
      // is exactly representable after 4:2:0 decoding.
      const int g = luma ? grid : grid / 2;
      Plane<double> m(g, g);
      for (double& v : m.data) {
        double x = opt.noise_sigma * rng.normal();
        if (is_informative[ch]) {
          x += level * weight[ch];
        }
        v = x;
      }
      if (!luma) m = nearest_upsample2(m);
      std::copy(m.data.begin(), m.data.end(), t.coeffs.channel(ch).begin());
    }
    LabeledItem item;
    item.label = label;
    item.image = ycbcr_to_rgb(upsample_chroma(decode(t)));
    ds.items.push_back(std::move(item));
  }
  return ds;
}

}  // namespace densedct
