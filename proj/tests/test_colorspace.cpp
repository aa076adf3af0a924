#include <gtest/gtest.h>

#include "densedct/colorspace.hpp"

using namespace densedct;

namespace {

// Forward transform written out term by term.
std::array<double, 3> forward_oracle(double r, double g, double b) {
  return {0.299 * r + 0.587 * g + 0.114 * b, 128.0 - 0.168736 * r - 0.331264 * g + 0.5 * b,
          128.0 + 0.5 * r - 0.418688 * g - 0.081312 * b};
}

// Inverse by Gaussian elimination with partial pivoting on the forward system.
std::array<double, 3> inverse_oracle(double y, double cb, double cr) {
  double a[3][4] = {{0.299, 0.587, 0.114, y},
                    {-0.168736, -0.331264, 0.5, cb - 128.0},
                    {0.5, -0.418688, -0.081312, cr - 128.0}};
  for (int col = 0; col < 3; ++col) {
    int piv = col;
    for (int r = col + 1; r < 3; ++r)
      if (std::abs(a[r][col]) > std::abs(a[piv][col])) piv = r;
    std::swap(a[col], a[piv]);
    for (int r = 0; r < 3; ++r) {
      if (r == col) continue;
      const double f = a[r][col] / a[col][col];
      for (int k = col; k < 4; ++k) a[r][k] -= f * a[col][k];
    }
  }
  return {a[0][3] / a[0][0], a[1][3] / a[1][1], a[2][3] / a[2][2]};
}

RgbImage one_pixel(double r, double g, double b) {
  RgbImage img(1, 1);
  img.at(0, 0, 0) = r / 255.0;
  img.at(1, 0, 0) = g / 255.0;
  img.at(2, 0, 0) = b / 255.0;
  return img;
}

}  // namespace

TEST(RgbToYcbcr, WhiteAndBlack) {
  auto w = rgb_to_ycbcr(one_pixel(255, 255, 255));
  EXPECT_NEAR(w.y(0, 0), 255.0, 1e-12);
  EXPECT_NEAR(w.cb(0, 0), 128.0, 1e-12);
  EXPECT_NEAR(w.cr(0, 0), 128.0, 1e-12);
  auto k = rgb_to_ycbcr(one_pixel(0, 0, 0));
  EXPECT_EQ(k.y(0, 0), 0.0);
  EXPECT_EQ(k.cb(0, 0), 128.0);
  EXPECT_EQ(k.cr(0, 0), 128.0);
}

TEST(RgbToYcbcr, PureRedMatchesFormula) {
  const auto expect = forward_oracle(255, 0, 0);
  EXPECT_NEAR(expect[0], 76.245, 1e-12);
  const auto got = rgb_to_ycbcr(one_pixel(255, 0, 0));
  EXPECT_NEAR(got.y(0, 0), expect[0], 1e-12);
  EXPECT_NEAR(got.cb(0, 0), expect[1], 1e-12);
  EXPECT_NEAR(got.cr(0, 0), 255.0, 1e-12);  // 128 + 127.5 clamps at 255
}

TEST(RgbToYcbcr, RandomPixelsMatchFormula) {
  Rng rng(11);
  for (int i = 0; i < 1000; ++i) {
    const double r = rng.uniform(0, 255), g = rng.uniform(0, 255), b = rng.uniform(0, 255);
    const auto got = rgb_to_ycbcr_pixel(r, g, b);
    const auto expect = forward_oracle(r, g, b);
    for (int k = 0; k < 3; ++k) EXPECT_NEAR(got[k], expect[k], 1e-12);
  }
}

TEST(YcbcrToRgb, InverseOfWhite) {
  YcbcrImage img{Plane<double>(1, 1, 255.0), Plane<double>(1, 1, 128.0), Plane<double>(1, 1, 128.0), false};
  const auto rgb = ycbcr_to_rgb(img);
  for (int k = 0; k < 3; ++k) EXPECT_NEAR(rgb.at(k, 0, 0), 1.0, 1e-12);
}

TEST(YcbcrToRgb, MatchesLinearSolve) {
  Rng rng(12);
  for (int i = 0; i < 1000; ++i) {
    const double y = rng.uniform(0, 255), cb = rng.uniform(0, 255), cr = rng.uniform(0, 255);
    const auto got = ycbcr_to_rgb_pixel(y, cb, cr);
    const auto expect = inverse_oracle(y, cb, cr);
    for (int k = 0; k < 3; ++k) EXPECT_NEAR(got[k], expect[k], 1e-9);
  }
}

TEST(YcbcrToRgb, FloatRoundTripIsExact) {
  Rng rng(13);
  RgbImage img(17, 9);
  for (double& v : img.data) v = rng.uniform();
  const auto back = ycbcr_to_rgb(rgb_to_ycbcr(img));
  double worst = 0.0;
  for (std::size_t i = 0; i < img.data.size(); ++i) worst = std::max(worst, std::abs(back.data[i] - img.data[i]) * 255.0);
  EXPECT_LE(worst, 1e-12);
}

// Quantize YCbCr to 8 bits, convert back, quantize RGB: at most one step.
TEST(YcbcrToRgb, EightBitRoundTripWithinOneStep) {
  int worst = 0;
  for (int r = 0; r < 256; r += 3)
    for (int g = 0; g < 256; g += 3)
      for (int b = 0; b < 256; b += 3) {
        const auto ycc = forward_oracle(r, g, b);
        double q[3];
        for (int k = 0; k < 3; ++k) q[k] = std::clamp(std::round(ycc[k]), 0.0, 255.0);
        YcbcrImage img{Plane<double>(1, 1, q[0]), Plane<double>(1, 1, q[1]), Plane<double>(1, 1, q[2]), false};
        const auto rgb = ycbcr_to_rgb(img);
        const int in[3] = {r, g, b};
        for (int k = 0; k < 3; ++k)
          worst = std::max(worst, std::abs(static_cast<int>(std::lround(rgb.at(k, 0, 0) * 255.0)) - in[k]));
      }
  EXPECT_LE(worst, 1);
}

TEST(YcbcrToRgb, RejectsSubsampled) {
  YcbcrImage img{Plane<double>(2, 2), Plane<double>(1, 1), Plane<double>(1, 1), true};
  EXPECT_THROW(ycbcr_to_rgb(img), StateError);
}

TEST(SubsampleChroma, BoxAverage) {
  YcbcrImage img{Plane<double>(2, 2, 7.0), Plane<double>(2, 2), Plane<double>(2, 2, 99.0), false};
  img.cb.data = {10, 20, 30, 40};
  const auto s = subsample_chroma(img);
  EXPECT_TRUE(s.subsampled);
  EXPECT_EQ(s.cb.height, 1);
  EXPECT_EQ(s.cb(0, 0), 25.0);
  EXPECT_EQ(s.cr(0, 0), 99.0);
  EXPECT_EQ(s.y, img.y);
}

TEST(SubsampleChroma, LargeImageHalvesChromaAndKeepsMean) {
  Rng rng(14);
  YcbcrImage img{Plane<double>(448, 448), Plane<double>(448, 448), Plane<double>(448, 448), false};
  for (auto* p : {&img.y, &img.cb, &img.cr})
    for (double& v : p->data) v = rng.uniform(0, 255);
  const auto s = subsample_chroma(img);
  EXPECT_EQ(s.cb.height, 224);
  EXPECT_EQ(s.cr.width, 224);
  EXPECT_EQ(s.y, img.y);
  const auto mean = [](const Plane<double>& p) {
    return pairwise_sum(std::span<const double>(p.data)) / static_cast<double>(p.size());
  };
  EXPECT_NEAR(mean(s.cb), mean(img.cb), 1e-9);
  EXPECT_NEAR(mean(s.cr), mean(img.cr), 1e-9);
}

TEST(SubsampleChroma, RejectsOddDimensions) {
  YcbcrImage img{Plane<double>(3, 4), Plane<double>(3, 4), Plane<double>(3, 4), false};
  EXPECT_THROW(subsample_chroma(img), ArgumentError);
}

TEST(UpsampleChroma, ReplicatesSamples) {
  YcbcrImage img{Plane<double>(2, 2), Plane<double>(1, 1, 5.0), Plane<double>(1, 1, 6.0), true};
  const auto u = upsample_chroma(img);
  EXPECT_FALSE(u.subsampled);
  for (double v : u.cb.data) EXPECT_EQ(v, 5.0);
  for (double v : u.cr.data) EXPECT_EQ(v, 6.0);
}
