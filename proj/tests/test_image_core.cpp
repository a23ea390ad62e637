#include <gtest/gtest.h>

#include <cmath>
#include <fstream>
#include <numbers>

#include "ppx/filter.hpp"
#include "ppx/io.hpp"
#include "ppx/spline.hpp"
#include "ppx/warp.hpp"
#include "test_support.hpp"

using namespace ppx;
using namespace ppx::testing;

namespace {

void write_bytes(const std::filesystem::path& p, const std::string& s) {
  std::ofstream out(p, std::ios::binary);
  out << s;
}

}  // namespace

TEST(Grid, RejectsEmptyDimensions) {
  EXPECT_THROW(Image(0, 4), ContractViolation);
  EXPECT_THROW(Image(4, -1), ContractViolation);
  Image img(3, 2, 1.5f);
  EXPECT_EQ(img.size(), 6u);
  EXPECT_FLOAT_EQ(img(2, 1), 1.5f);
}

TEST(ImageIo, Pgm8BitIsIdentity) {
  const auto dir = scratch_dir("pgm8");
  write_bytes(dir / "a.pgm", std::string("P5\n2 2\n255\n") + std::string("\x00\xff\x80\x40", 4));
  const Image img = load_image(dir / "a.pgm");
  ASSERT_EQ(img.width(), 2);
  ASSERT_EQ(img.height(), 2);
  EXPECT_EQ(img(0, 0), 0.0f);
  EXPECT_EQ(img(1, 0), 255.0f);
  EXPECT_EQ(img(0, 1), 128.0f);
  EXPECT_EQ(img(1, 1), 64.0f);
}

TEST(ImageIo, Pgm16BitScalesByMaxval) {
  const auto dir = scratch_dir("pgm16");
  write_bytes(dir / "a.pgm", std::string("P5\n2 1\n65535\n") + std::string("\xff\xff\x01\x01", 4));
  const Image img = load_image(dir / "a.pgm");
  EXPECT_FLOAT_EQ(img(0, 0), 255.0f);
  EXPECT_NEAR(img(1, 0), 257.0 / 257.0, 1e-5);  // big-endian 0x0101 = 257
}

TEST(ImageIo, PgmSaveClampsAndRoundsHalfAway) {
  const auto dir = scratch_dir("pgmsave");
  Image img(4, 1);
  img(0, 0) = 255.7f;
  img(1, 0) = 127.5f;
  img(2, 0) = -3.0f;
  img(3, 0) = 10.49f;
  save_image(img, dir / "b.pgm");
  const Image back = load_image(dir / "b.pgm");
  EXPECT_EQ(back(0, 0), 255.0f);
  EXPECT_EQ(back(1, 0), 128.0f);
  EXPECT_EQ(back(2, 0), 0.0f);
  EXPECT_EQ(back(3, 0), 10.0f);
}

TEST(ImageIo, PfmRoundTripIsBitExact) {
  const auto dir = scratch_dir("pfm");
  const Image img = textured(17, 9);
  save_image(img, dir / "c.pfm");
  const Image back = load_image(dir / "c.pfm");
  ASSERT_TRUE(back.same_shape(img));
  for (std::size_t i = 0; i < img.size(); ++i) EXPECT_EQ(std::bit_cast<std::uint32_t>(img[i]), std::bit_cast<std::uint32_t>(back[i]));
}

TEST(ImageIo, PfmBigEndianAndRowOrder) {
  // 1x2 big-endian PFM: stored bottom row first
  const auto dir = scratch_dir("pfmbe");
  std::string payload;
  for (float v : {1.0f, 2.0f}) {
    const auto bits = std::bit_cast<std::uint32_t>(v);
    for (int s = 24; s >= 0; s -= 8) payload.push_back(static_cast<char>((bits >> s) & 0xff));
  }
  write_bytes(dir / "d.pfm", "Pf\n1 2\n1.0\n" + payload);
  const Image img = load_image(dir / "d.pfm");
  EXPECT_EQ(img(0, 0), 2.0f);
  EXPECT_EQ(img(0, 1), 1.0f);
}

TEST(ImageIo, ErrorsDistinguishFormatFromTruncation) {
  const auto dir = scratch_dir("ioerr");
  write_bytes(dir / "bad.pgm", "P2\n2 2\n255\n0 0 0 0");
  EXPECT_THROW(load_image(dir / "bad.pgm"), FormatError);
  write_bytes(dir / "short.pgm", std::string("P5\n4 4\n255\n") + "abc");
  EXPECT_THROW(load_image(dir / "short.pgm"), IoError);
  EXPECT_THROW(load_image(dir / "missing.pgm"), IoError);
  EXPECT_THROW(save_image(Image(2, 2), dir / "no" / "such" / "dir.pfm"), IoError);
}

TEST(FlowIo, RoundTripAndMagic) {
  const auto dir = scratch_dir("flo");
  FlowField f(5, 3);
  for (std::size_t i = 0; i < f.size(); ++i) {
    f.u[i] = 0.25f * static_cast<float>(i);
    f.v[i] = -1.5f + static_cast<float>(i);
  }
  save_flow(f, dir / "f.flo");
  const FlowField g = load_flow(dir / "f.flo");
  EXPECT_EQ(g, f);
  std::ifstream in(dir / "f.flo", std::ios::binary);
  float magic = 0;
  in.read(reinterpret_cast<char*>(&magic), 4);
  EXPECT_EQ(magic, 202021.25f);
  write_bytes(dir / "bad.flo", std::string("abcd") + std::string(8, '\0'));
  EXPECT_THROW(load_flow(dir / "bad.flo"), FormatError);
}

TEST(AffinityIo, RoundTripsTwelveDigits) {
  AffinityMap m;
  m[0] = AffineTransform::identity();
  m[-2] = AffineTransform{1.001, -0.002, 0.0005, 0.999, 1.25, -3.5};
  const AffinityMap back = parse_affinities(format_affinities(m));
  ASSERT_EQ(back.size(), 2u);
  for (int k = 0; k < 6; ++k) EXPECT_NEAR(back.at(-2).coefficients()[k], m.at(-2).coefficients()[k], 1e-12);
  EXPECT_THROW(parse_affinities("1 2 3\n"), FormatError);
}

TEST(KeyValues, ParsesCommentsAndRejectsGarbage) {
  const KeyValues kv = parse_key_values("# comment\nalpha = 10\n\nmode=sr\n");
  EXPECT_EQ(kv.at("alpha"), "10");
  EXPECT_EQ(kv.at("mode"), "sr");
  EXPECT_THROW(parse_key_values("novalue\n"), ConfigError);
}

TEST(Affine, InverseAndComposition) {
  const AffineTransform a{1.01, 0.02, -0.01, 0.98, 2.0, -1.0};
  const AffineTransform id = compose(a, a.inverse());
  for (int k = 0; k < 6; ++k) EXPECT_NEAR(id.coefficients()[k], AffineTransform::identity().coefficients()[k], 1e-12);
  const Point p = compose(a, AffineTransform::translation(1, 2))(3, 4);
  const Point q = a(4, 6);
  EXPECT_NEAR(p.x, q.x, 1e-12);
  EXPECT_NEAR(p.y, q.y, 1e-12);
  EXPECT_DOUBLE_EQ(AffineTransform::translation(0.5, -2).distance_to_identity(), 2.0);
  EXPECT_THROW((AffineTransform{-1, 0, 0, 1, 0, 0}.validate()), ContractViolation);
}

TEST(Pyramid, DimensionsFollowRecurrence) {
  const Pyramid p = build_pyramid(Image(64, 64, 1.0f), 0.5, 16);
  ASSERT_EQ(p.size(), 3u);
  EXPECT_EQ(p[0].width(), 64);
  EXPECT_EQ(p[1].width(), 32);
  EXPECT_EQ(p[2].width(), 16);
  EXPECT_EQ(build_pyramid(Image(20, 20), 0.5, 32).size(), 1u);
  EXPECT_EQ(pyramid_dim(100, 0.65), 65);
  EXPECT_THROW(build_pyramid(Image(64, 64), 0.3, 16), ContractViolation);
  EXPECT_THROW(build_pyramid(Image(64, 64), 0.5, 8), ContractViolation);
}

TEST(Pyramid, PreservesDc) {
  const Pyramid p = build_pyramid(Image(80, 60, 42.0f), 0.65, 16);
  for (const Image& l : p.levels)
    for (float v : l.samples()) EXPECT_NEAR(v, 42.0, 1e-4);

  Image noisy(96, 96);
  std::mt19937 rng(5);
  std::normal_distribution<float> n(0.0f, 2.0f);
  for (float& v : noisy.samples()) v = 100.0f + n(rng);
  const Pyramid q = build_pyramid(noisy, 0.65, 16);
  const auto mean = [](const Image& i) {
    double s = 0;
    for (float v : i.samples()) s += v;
    return s / static_cast<double>(i.size());
  };
  for (const Image& l : q.levels) EXPECT_NEAR(mean(l), mean(noisy), 0.01 * mean(noisy));
}

TEST(Gradients, CentralDifferencesOnRamps) {
  const auto [cx, cy] = gradients(Image(8, 8, 5.0f));
  for (std::size_t i = 0; i < cx.size(); ++i) {
    EXPECT_EQ(cx[i], 0.0f);
    EXPECT_EQ(cy[i], 0.0f);
  }
  const auto [gx, gy0] = gradients(sampled(8, 6, [](int x, int) { return 2.0 * x; }));
  const auto [gx0, gy] = gradients(sampled(8, 6, [](int, int y) { return 3.0 * y; }));
  for (int y = 1; y < 5; ++y)
    for (int x = 1; x < 7; ++x) {
      EXPECT_FLOAT_EQ(gx(x, y), 2.0f);
      EXPECT_FLOAT_EQ(gy(x, y), 3.0f);
    }
  EXPECT_THROW(gradients(Image(2, 5)), ContractViolation);
}

TEST(Spline, InterpolatesNodesAndReproducesLowOrderPolynomials) {
  const Image img = textured(20, 16);
  for (int order : {1, 3, 5}) {
    const SplineImage s(img, order);
    for (int y = 0; y < 16; ++y)
      for (int x = 0; x < 20; ++x) EXPECT_NEAR(s(x, y), img(x, y), 1e-3) << "order " << order;
  }
  // interior reproduction of a linear function
  const Image lin = sampled(24, 24, [](int x, int y) { return 3.0 + 0.5 * x - 0.25 * y; });
  const SplineImage s5(lin, 5);
  EXPECT_NEAR(s5(10.3, 11.7), 3.0 + 0.5 * 10.3 - 0.25 * 11.7, 1e-4);
  EXPECT_THROW(SplineImage(img, 2), ContractViolation);
}

TEST(Warp, ZeroFlowIsIdentityForAllOrders) {
  const Image img = textured(32, 24);
  for (int order : {1, 3, 5}) {
    const WarpResult r = warp(img, FlowField(32, 24), order);
    EXPECT_LE(max_abs_diff(r.image, img, 1), 1e-6 * 255.0);
    for (auto m : r.mask.samples()) EXPECT_EQ(m, 1);
  }
}

TEST(Warp, IntegerShiftMatchesIndexing) {
  const Image img = textured(20, 12);
  const WarpResult r = warp(img, constant_flow(20, 12, 1.0f, 0.0f), 3);
  for (int y = 0; y < 12; ++y) {
    for (int x = 0; x < 19; ++x) {
      ASSERT_EQ(r.mask(x, y), 1);
      EXPECT_NEAR(r.image(x, y), img(x + 1, y), 1e-3);
    }
    EXPECT_EQ(r.mask(19, y), 0);
    EXPECT_EQ(r.image(19, y), 0.0f);
  }
  EXPECT_THROW(warp(img, FlowField(5, 5), 3), ContractViolation);
}

TEST(Warp, HalfPixelSinusoidMatchesAnalyticShift) {
  const auto f = [](double x) { return std::sin(2.0 * std::numbers::pi * x / 16.0); };
  const Image img = sampled(64, 8, [&](int x, int) { return f(x); });
  const WarpResult r = warp(img, constant_flow(64, 8, 0.5f, 0.0f), 5);
  double err = 0.0;
  for (int y = 0; y < 8; ++y)
    for (int x = 8; x < 56; ++x) err = std::max(err, std::abs(r.image(x, y) - f(x + 0.5)));
  EXPECT_LT(err, 1e-3);
}

TEST(ApplyAffine, TranslationAndComposition) {
  const Image img = textured(24, 24);
  const WarpResult id = apply_affine(img, AffineTransform::identity(), 5);
  EXPECT_LE(max_abs_diff(id.image, img), 1e-4);
  const WarpResult t = apply_affine(img, AffineTransform::translation(2, 0), 5);
  for (int y = 0; y < 24; ++y)
    for (int x = 0; x < 22; ++x) EXPECT_NEAR(t.image(x, y), img(x + 2, y), 1e-3);

  // out(x) = img(A x) then out2(x) = out(B x) = img(A B x)
  const Image smooth = sampled(64, 64, [](int x, int y) { return smooth_pattern(x, y); });
  const AffineTransform a{1.01, 0.01, -0.01, 0.995, 0.7, -0.4};
  const AffineTransform b{0.99, -0.005, 0.008, 1.01, -0.3, 0.9};
  const Image two = apply_affine(apply_affine(smooth, a, 5).image, b, 5).image;
  const Image one = apply_affine(smooth, compose(a, b), 5).image;
  EXPECT_LT(max_abs_diff(two, one, 8), 5e-2);  // two interpolation passes
  double err = 0.0;
  for (int y = 8; y < 56; ++y)
    for (int x = 8; x < 56; ++x) {
      const Point p = a(b(x, y));
      err = std::max(err, std::abs(one(x, y) - smooth_pattern(p.x, p.y)));
    }
  EXPECT_LT(err, 1e-2);
}
