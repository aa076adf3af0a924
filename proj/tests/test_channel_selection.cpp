#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <limits>

#include "densedct/channel_selection.hpp"
#include "test_support.hpp"

using namespace densedct;

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

// 192 scores shaped so the thresholds below keep 17/18/21/22/24/25/28/41/192.
// Several values sit exactly on a threshold to pin the strict comparison.
std::vector<double> staircase_scores() {
  std::vector<std::pair<int, double>> runs{{17, 0.09}, {1, 0.08},  {3, 0.065}, {1, 0.045}, {2, 0.025},
                                           {1, 0.021}, {3, 0.015}, {13, 0.005}, {100, 0.0}, {51, -0.2}};
  std::vector<double> s;
  for (auto [n, v] : runs) s.insert(s.end(), n, v);
  // Spread the values over the channels so kept sets are not prefixes.
  Rng rng(21);
  rng.shuffle(s.begin(), s.end());
  return s;
}

}  // namespace

TEST(Threshold, StrictlyGreater) {
  const std::vector<double> s{0.5, 0.2, 0.2, -1.0};
  EXPECT_EQ(select_by_threshold(s, 0.2, 1).kept, (std::vector<int>{0}));
  EXPECT_EQ(select_by_threshold(s, 0.19, 1).kept, (std::vector<int>{0, 1, 2}));
  EXPECT_EQ(select_by_threshold(s, -kInf, 1).kept.size(), 4u);
  EXPECT_TRUE(select_by_threshold(s, kInf, 1).kept.empty());
}

TEST(Threshold, StaircaseCounts) {
  const auto s = staircase_scores();
  ASSERT_EQ(s.size(), 192u);
  const double ts[] = {0.08, 0.07, 0.06, 0.03, 0.022, 0.02, 0.01, 0.0, -kInf};
  const std::size_t counts[] = {17, 18, 21, 22, 24, 25, 28, 41, 192};
  for (int i = 0; i < 9; ++i) {
    const auto sel = select_by_threshold(s, ts[i]);
    EXPECT_EQ(sel.size(), counts[i]) << "t=" << ts[i];
    for (int ch : sel.kept) EXPECT_GT(s[ch], ts[i]);
  }
}

TEST(Threshold, MonotoneNesting) {
  Rng rng(4);
  std::vector<double> s(192);
  for (double& v : s) v = rng.normal() * 0.05;
  double prev_t = -kInf;
  auto prev = select_by_threshold(s, prev_t);
  for (int k = 0; k < 200; ++k) {
    const double t = prev_t + rng.uniform() * 0.002;
    const auto cur = select_by_threshold(s, t);
    for (int ch : cur.kept) EXPECT_TRUE(prev.contains(ch));
    EXPECT_LE(cur.size(), prev.size());
    prev = cur;
    prev_t = t;
  }
}

TEST(Threshold, RejectsNaN) {
  std::vector<double> s{0.1, std::nan(""), 0.3};
  EXPECT_THROW(select_by_threshold(s, 0.0, 1), ArgumentError);
  std::vector<double> ok{0.1};
  EXPECT_THROW(select_by_threshold(ok, std::nan(""), 1), ArgumentError);
  std::vector<double> none;
  EXPECT_THROW(select_by_threshold(none, 0.0), ArgumentError);
}

TEST(Square, Sizes) {
  EXPECT_EQ(select_square(8, 8, 8, 8).size(), 192u);
  const auto dc = select_square(8, 1, 1, 1);
  EXPECT_EQ(dc.kept, (std::vector<int>{0, 64, 128}));
  EXPECT_EQ(select_square(8, 4, 2, 2).size(), 24u);
  EXPECT_EQ(select_square(8, 2, 2, 4).size(), 24u);
  EXPECT_EQ(select_square(8, 4, 1, 1).size(), 18u);
  EXPECT_EQ(select_square(8, 2, 0, 0).kept, (std::vector<int>{0, 1, 8, 9}));
  EXPECT_THROW(select_square(8, 9, 0, 0), ArgumentError);
  EXPECT_THROW(select_square(8, -1, 0, 0), ArgumentError);
}

TEST(Explicit, SortsAndValidates) {
  EXPECT_EQ(select_explicit({5, 0, 3}, 10).kept, (std::vector<int>{0, 3, 5}));
  EXPECT_THROW(select_explicit({1, 1}, 10), ArgumentError);
  EXPECT_THROW(select_explicit({10}, 10), ArgumentError);
  EXPECT_THROW(select_explicit({-1}, 10), ArgumentError);
  EXPECT_EQ(select_all(192).size(), 192u);
}

TEST(Apply, KeepsChannelsInOrderAndZeroFillRestores) {
  const auto t = densedct::testing::random_tensor(8, 3, 4, 9);
  const auto sel = select_explicit({0, 5, 77, 191}, 192);
  const auto d = apply_selection(t, sel);
  ASSERT_EQ(d.channels(), 4);
  for (int i = 0; i < 4; ++i) {
    const auto a = d.values.coeffs.channel(i), b = t.coeffs.channel(sel.kept[i]);
    EXPECT_TRUE(std::equal(a.begin(), a.end(), b.begin()));
    EXPECT_EQ(d.values.descriptors[i], t.descriptors[sel.kept[i]]);
  }
  const auto back = zero_fill(d);
  EXPECT_TRUE(back.complete());
  for (int ch = 0; ch < 192; ++ch)
    for (std::size_t k = 0; k < back.coeffs.plane_size(); ++k)
      EXPECT_EQ(back.coeffs.channel(ch)[k], sel.contains(ch) ? t.coeffs.channel(ch)[k] : 0.0);
  EXPECT_EQ(zero_fill(apply_selection(t, select_all(192))), t);
}

TEST(Apply, Errors) {
  const auto t = densedct::testing::random_tensor(8, 2, 2, 10);
  EXPECT_THROW(apply_selection(t, select_explicit({}, 192)), ArgumentError);
  EXPECT_THROW(apply_selection(t, select_explicit({0}, 64)), ArgumentError);
}

TEST(Json, RoundTripsAllStrategies) {
  const auto s = staircase_scores();
  for (const auto& sel : {select_by_threshold(s, 0.022), select_by_threshold(s, -kInf), select_square(8, 4, 2, 2),
                          select_explicit({1, 2, 190}, 192)}) {
    const auto text = selection_to_json(sel).dump();
    EXPECT_EQ(selection_from_json(nlohmann::json::parse(text)), sel);
  }
  const auto j = selection_to_json(select_by_threshold(s, -kInf));
  EXPECT_EQ(j["strategy"]["threshold"], "-inf");
}

TEST(Json, FileRoundTrip) {
  const auto dir = std::filesystem::temp_directory_path() / "densedct_test_selection";
  std::filesystem::create_directories(dir);
  const auto sel = select_by_threshold(staircase_scores(), 0.01);
  save_selection(sel, (dir / "sel.json").string());
  EXPECT_EQ(load_selection((dir / "sel.json").string()), sel);
  EXPECT_THROW(load_selection((dir / "missing.json").string()), IoError);
  std::ofstream(dir / "bad.json") << "{not json";
  EXPECT_THROW(load_selection((dir / "bad.json").string()), FormatError);
}

TEST(Json, RejectsMalformedSelections) {
  auto j = selection_to_json(select_explicit({1, 2}, 192));
  j["kept"] = {1, 1};
  EXPECT_THROW(selection_from_json(j), FormatError);
  j["kept"] = {1, 192};
  EXPECT_THROW(selection_from_json(j), FormatError);
  j["kept"] = {3, 2};
  EXPECT_THROW(selection_from_json(j), FormatError);
  j["kept"] = {1, 2};
  j["strategy"] = {{"type", "magic"}};
  EXPECT_THROW(selection_from_json(j), FormatError);
  // Kept set inconsistent with threshold and scores.
  auto t = selection_to_json(select_by_threshold(staircase_scores(), 0.08));
  t["kept"] = {0};
  EXPECT_THROW(selection_from_json(t), FormatError);
}
