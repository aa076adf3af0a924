#pragma once

#include <algorithm>
#include <fstream>
#include <limits>
#include <optional>
#include <set>
#include <string>
#include <variant>

#include <nlohmann/json.hpp>

#include "densedct/block_dct.hpp"

namespace densedct {

struct ThresholdStrategy {
  double threshold = 0.0;
  bool operator==(const ThresholdStrategy&) const = default;
};
struct SquareStrategy {
  int y = 0, cb = 0, cr = 0;
  bool operator==(const SquareStrategy&) const = default;
};
struct ExplicitStrategy {
  bool operator==(const ExplicitStrategy&) const = default;
};
using SelectionStrategy = std::variant<ThresholdStrategy, SquareStrategy, ExplicitStrategy>;

// Ordered subset of the C frequency channels, with the strategy (and scores)
// that produced it.
struct ChannelSelection {
  std::vector<int> kept;  // ascending, unique
  int total = 0;
  int block_size = 8;
  SelectionStrategy strategy = ExplicitStrategy{};
  std::optional<std::vector<double>> scores;

  std::size_t size() const { return kept.size(); }
  bool contains(int ch) const { return std::binary_search(kept.begin(), kept.end(), ch); }

  void validate() const {
    if (total < 1) throw ArgumentError("ChannelSelection: total must be positive");
    for (std::size_t i = 0; i < kept.size(); ++i) {
      if (kept[i] < 0 || kept[i] >= total) throw ArgumentError("ChannelSelection: index out of range");
      if (i > 0 && kept[i] <= kept[i - 1]) throw ArgumentError("ChannelSelection: indices not strictly ascending");
    }
    if (scores && scores->size() != static_cast<std::size_t>(total))
      throw ArgumentError("ChannelSelection: score count != total");
    if (const auto* th = std::get_if<ThresholdStrategy>(&strategy); th && scores) {
      std::vector<int> expect;
      for (int i = 0; i < total; ++i)
        if ((*scores)[i] > th->threshold) expect.push_back(i);
      if (expect != kept) throw ArgumentError("ChannelSelection: kept set disagrees with threshold and scores");
    }
  }

  bool operator==(const ChannelSelection&) const = default;
};

// Keeps exactly { i : scores[i] > t }.
inline ChannelSelection select_by_threshold(std::span<const double> scores, double t, int block_size = 8) {
  if (scores.empty()) throw ArgumentError("select_by_threshold: no scores");
  if (std::isnan(t)) throw ArgumentError("select_by_threshold: NaN threshold");
  ChannelSelection sel;
  sel.total = static_cast<int>(scores.size());
  sel.block_size = block_size;
  sel.strategy = ThresholdStrategy{t};
  for (int i = 0; i < sel.total; ++i) {
    if (std::isnan(scores[i])) throw ArgumentError("select_by_threshold: NaN score at channel " + std::to_string(i));
    if (scores[i] > t) sel.kept.push_back(i);
  }
  sel.scores = std::vector<double>(scores.begin(), scores.end());
  return sel;
}

// Keeps the top-left side×side square of each component's frequency grid.
inline ChannelSelection select_square(int block_size, int side_y, int side_cb, int side_cr) {
  if (block_size < 1) throw ArgumentError("select_square: block size must be >= 1");
  const int sides[3] = {side_y, side_cb, side_cr};
  for (int s : sides)
    if (s < 0 || s > block_size) throw ArgumentError("select_square: side must lie in [0, N]");
  ChannelSelection sel;
  sel.block_size = block_size;
  sel.total = 3 * block_size * block_size;
  sel.strategy = SquareStrategy{side_y, side_cb, side_cr};
  for (int comp = 0; comp < 3; ++comp)
    for (int u = 0; u < sides[comp]; ++u)
      for (int v = 0; v < sides[comp]; ++v) sel.kept.push_back(comp * block_size * block_size + u * block_size + v);
  return sel;
}

inline ChannelSelection select_explicit(std::vector<int> indices, int total, int block_size = 8) {
  std::sort(indices.begin(), indices.end());
  ChannelSelection sel;
  sel.kept = std::move(indices);
  sel.total = total;
  sel.block_size = block_size;
  sel.validate();
  return sel;
}

inline ChannelSelection select_all(int total, int block_size = 8) {
  std::vector<int> all(total);
  for (int i = 0; i < total; ++i) all[i] = i;
  return select_explicit(std::move(all), total, block_size);
}

// Tensor restricted to the kept channels, in ascending channel order.
struct DenseTensor {
  FrequencyTensor values;
  ChannelSelection selection;

  int channels() const { return values.channels(); }
};

inline DenseTensor apply_selection(const FrequencyTensor& t, const ChannelSelection& sel) {
  sel.validate();
  if (sel.total != t.channels()) throw ArgumentError("apply_selection: selection total != tensor channel count");
  if (sel.kept.empty()) throw ArgumentError("apply_selection: empty selection");
  DenseTensor d;
  d.selection = sel;
  d.values.block_size = t.block_size;
  d.values.source_height = t.source_height;
  d.values.source_width = t.source_width;
  d.values.coeffs = Tensor3<double>(static_cast<int>(sel.kept.size()), t.height(), t.width());
  for (std::size_t i = 0; i < sel.kept.size(); ++i) {
    const int ch = sel.kept[i];
    if (!t.descriptors.empty()) d.values.descriptors.push_back(t.descriptors[ch]);
    const auto src = t.coeffs.channel(ch);
    std::copy(src.begin(), src.end(), d.values.coeffs.channel(static_cast<int>(i)).begin());
  }
  return d;
}

// Full tensor with every dropped channel set to zero.
inline FrequencyTensor zero_fill(const DenseTensor& d) {
  const auto& sel = d.selection;
  if (d.values.channels() != static_cast<int>(sel.kept.size()))
    throw ArgumentError("zero_fill: channel count != selection size");
  FrequencyTensor t;
  t.block_size = d.values.block_size;
  t.source_height = d.values.source_height;
  t.source_width = d.values.source_width;
  t.coeffs = Tensor3<double>(sel.total, d.values.height(), d.values.width());
  if (sel.total == 3 * t.block_size * t.block_size) t.descriptors = full_descriptors(t.block_size);
  for (std::size_t i = 0; i < sel.kept.size(); ++i) {
    const auto src = d.values.coeffs.channel(static_cast<int>(i));
    std::copy(src.begin(), src.end(), t.coeffs.channel(sel.kept[i]).begin());
  }
  return t;
}

// --- JSON -----------------------------------------------------------------

namespace detail {

// JSON has no infinities; they are spelled as strings.
inline nlohmann::json number_to_json(double v) {
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  return v;
}

inline double number_from_json(const nlohmann::json& j) {
  if (j.is_number()) return j.get<double>();
  if (j.is_string()) {
    const auto s = j.get<std::string>();
    if (s == "inf") return std::numeric_limits<double>::infinity();
    if (s == "-inf") return -std::numeric_limits<double>::infinity();
  }
  throw FormatError("selection JSON: expected a number");
}

}  // namespace detail

inline nlohmann::json selection_to_json(const ChannelSelection& sel) {
  nlohmann::json j;
  j["block_size"] = sel.block_size;
  j["total"] = sel.total;
  std::visit(
      [&](const auto& s) {
        using S = std::decay_t<decltype(s)>;
        if constexpr (std::is_same_v<S, ThresholdStrategy>) {
          j["strategy"] = {{"type", "threshold"}, {"threshold", detail::number_to_json(s.threshold)}};
        } else if constexpr (std::is_same_v<S, SquareStrategy>) {
          j["strategy"] = {{"type", "square"}, {"y", s.y}, {"cb", s.cb}, {"cr", s.cr}};
        } else {
          j["strategy"] = {{"type", "explicit"}};
        }
      },
      sel.strategy);
  j["kept"] = sel.kept;
  if (sel.scores) {
    auto arr = nlohmann::json::array();
    for (double v : *sel.scores) arr.push_back(detail::number_to_json(v));
    j["scores"] = std::move(arr);
  } else {
    j["scores"] = nullptr;
  }
  return j;
}

inline ChannelSelection selection_from_json(const nlohmann::json& j) {
  ChannelSelection sel;
  try {
    sel.block_size = j.at("block_size").get<int>();
    sel.total = j.at("total").get<int>();
    const auto& st = j.at("strategy");
    const auto type = st.at("type").get<std::string>();
    if (type == "threshold")
      sel.strategy = ThresholdStrategy{detail::number_from_json(st.at("threshold"))};
    else if (type == "square")
      sel.strategy = SquareStrategy{st.at("y").get<int>(), st.at("cb").get<int>(), st.at("cr").get<int>()};
    else if (type == "explicit")
      sel.strategy = ExplicitStrategy{};
    else
      throw FormatError("selection JSON: unknown strategy '" + type + "'");
    sel.kept = j.at("kept").get<std::vector<int>>();
    if (j.contains("scores") && !j.at("scores").is_null()) {
      std::vector<double> scores;
      for (const auto& v : j.at("scores")) scores.push_back(detail::number_from_json(v));
      sel.scores = std::move(scores);
    }
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("selection JSON: ") + e.what());
  }
  std::set<int> seen;
  for (int k : sel.kept) {
    if (!seen.insert(k).second) throw FormatError("selection JSON: duplicate channel index " + std::to_string(k));
    if (k < 0 || k >= sel.total) throw FormatError("selection JSON: channel index out of range " + std::to_string(k));
  }
  if (!std::is_sorted(sel.kept.begin(), sel.kept.end())) throw FormatError("selection JSON: kept must be ascending");
  try {
    sel.validate();
  } catch (const ArgumentError& e) {
    throw FormatError(std::string("selection JSON: ") + e.what());
  }
  return sel;
}

inline void save_selection(const ChannelSelection& sel, const std::string& path) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError("cannot open for writing: " + path);
  os << selection_to_json(sel).dump(2) << '\n';
}

inline ChannelSelection load_selection(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw IoError("cannot open: " + path);
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(is);
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("selection JSON: ") + e.what());
  }
  return selection_from_json(j);
}

}  // namespace densedct
