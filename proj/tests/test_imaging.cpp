#include <cmath>
#include <fstream>
#include <limits>
#include <random>

#include <gtest/gtest.h>
#include <opencv2/imgcodecs.hpp>

#include "hazeclip/image.hpp"
#include "hazeclip/image_io.hpp"
#include "hazeclip/synthetic.hpp"
#include "test_util.hpp"

using namespace hazeclip;

TEST(LoadImage, EightBitValuesScaleToUnitRange) {
    const auto dir = testutil::temp_dir();
    cv::Mat m(16, 16, CV_8UC3, cv::Scalar(0, 0, 0));
    m.at<cv::Vec3b>(0, 0) = {255, 128, 0};  // BGR
    ASSERT_TRUE(cv::imwrite((dir / "a.png").string(), m));
    const auto img = load_image(dir / "a.png");
    EXPECT_EQ(img.height(), 16);
    EXPECT_EQ(img.width(), 16);
    EXPECT_FLOAT_EQ(img(0, 0, 0), 0.0f);
    EXPECT_NEAR(img(0, 0, 1), 128.0 / 255.0, 1e-7);
    EXPECT_NEAR(img(0, 0, 1), 0.50196, 1e-5);
    EXPECT_FLOAT_EQ(img(0, 0, 2), 1.0f);
}

TEST(LoadImage, MissingFileIsNotFound) {
    EXPECT_THROW(load_image("/nonexistent/dir/img.png"), NotFoundError);
}

TEST(LoadImage, GarbageIsFormatError) {
    const auto dir = testutil::temp_dir();
    std::ofstream(dir / "bad.png") << "not an image at all";
    EXPECT_THROW(load_image(dir / "bad.png"), FormatError);
}

TEST(SaveImage, SixteenBitRoundTripWithinOneStep) {
    const auto dir = testutil::temp_dir();
    std::mt19937_64 rng(3);
    const auto img = testutil::random_image<double>(17, 23, rng);
    save_image(img, dir / "x.png", BitDepth::k16);
    const auto back = load_image(dir / "x.png");
    double worst = 0;
    for (std::size_t i = 0; i < img.values().size(); ++i)
        worst = std::max(worst, std::abs(img.values()[i] - static_cast<double>(back.values()[i])));
    EXPECT_LE(worst, 1.0 / 65535.0);
}

TEST(Masks, PngRoundTrip) {
    const auto dir = testutil::temp_dir();
    std::mt19937_64 rng(5);
    const auto m = testutil::random_mask(20, 18, rng);
    save_mask(m, dir / "m.png");
    EXPECT_EQ(load_mask(dir / "m.png"), m);
}

TEST(Masks, ComplementPartitionsGrid) {
    std::mt19937_64 rng(9);
    const auto m = testutil::random_mask(19, 21, rng, 0.3);
    const auto n = m.complement();
    for (int r = 0; r < m.height(); ++r)
        for (int c = 0; c < m.width(); ++c) EXPECT_NE(m(r, c), n(r, c));
    EXPECT_EQ(m.count() + n.count(), m.size());
}

TEST(Composite, AllTrueIsIdentity) {
    std::mt19937_64 rng(1);
    const auto img = testutil::random_image(16, 16, rng);
    EXPECT_EQ(composite(img, RegionMask(16, 16, true)), img);
}

TEST(Composite, AllFalseIsConstantFill) {
    std::mt19937_64 rng(1);
    const auto img = testutil::random_image(16, 20, rng);
    EXPECT_EQ(composite(img, RegionMask(16, 20, false), {0.5, 0.5, 0.5}), ImageF(16, 20, 0.5f));
}

TEST(Composite, CheckerboardMatchesPixelLoop) {
    std::mt19937_64 rng(2);
    const auto img = testutil::random_image(18, 18, rng);
    RegionMask m(18, 18);
    for (int r = 0; r < 18; ++r)
        for (int c = 0; c < 18; ++c) m.set(r, c, (r + c) % 2 == 0);
    const Rgb fill{0.1, 0.2, 0.3};
    const auto out = composite(img, m, fill);
    for (int r = 0; r < 18; ++r)
        for (int c = 0; c < 18; ++c)
            for (int ch = 0; ch < 3; ++ch) {
                const float want = (r + c) % 2 == 0 ? img(r, c, ch) : static_cast<float>(fill[ch]);
                EXPECT_EQ(out(r, c, ch), want);
            }
}

TEST(Composite, ShapeMismatchIsDimensionError) {
    EXPECT_THROW(composite(ImageF(16, 16), RegionMask(16, 17)), DimensionError);
}

TEST(Composite, RecombineOfBothRegionsRestoresImage) {
    std::mt19937_64 rng(4);
    for (int trial = 0; trial < 10; ++trial) {
        const auto img = testutil::random_image(16, 24, rng);
        const auto m = testutil::random_mask(16, 24, rng);
        const auto a = composite(img, m);
        const auto b = composite(img, m.complement());
        EXPECT_EQ(recombine(a, b, m), img);
    }
}

TEST(DarkChannel, ConstantImages) {
    for (float v : {0.0f, 1.0f}) {
        const auto dc = dark_channel(ImageF(16, 16, v), 15);
        for (float x : dc.values()) EXPECT_EQ(x, v);
    }
}

TEST(DarkChannel, MatchesBruteForceWindowMinimum) {
    std::mt19937_64 rng(11);
    const auto img = testutil::random_image<double>(5, 5, rng);
    const auto dc = dark_channel(img, 3);
    for (int r = 0; r < 5; ++r)
        for (int c = 0; c < 5; ++c) {
            double m = std::numeric_limits<double>::infinity();
            for (int rr = r - 1; rr <= r + 1; ++rr)
                for (int cc = c - 1; cc <= c + 1; ++cc) {
                    if (rr < 0 || rr >= 5 || cc < 0 || cc >= 5) continue;
                    for (int ch = 0; ch < 3; ++ch) m = std::min(m, img(rr, cc, ch));
                }
            EXPECT_EQ(dc(r, c), m) << r << "," << c;
        }
}

TEST(DarkChannel, EvenPatchIsArgumentError) {
    EXPECT_THROW(dark_channel(ImageF(16, 16), 4), ArgumentError);
    EXPECT_THROW(dark_channel(ImageF(16, 16), 0), ArgumentError);
}

TEST(DarkChannel, NonincreasingInPatchSize) {
    std::mt19937_64 rng(12);
    const auto img = testutil::random_image(20, 20, rng);
    auto prev = dark_channel(img, 1);
    for (int p = 3; p <= 15; p += 2) {
        const auto cur = dark_channel(img, p);
        for (std::size_t i = 0; i < cur.size(); ++i) EXPECT_LE(cur.values()[i], prev.values()[i]);
        prev = cur;
    }
}

TEST(SynthesizeHaze, ZeroBetaIsExactIdentity) {
    std::mt19937_64 rng(13);
    const auto img = testutil::random_image(16, 16, rng);
    HazeParams p{0.0, {0.9, 0.9, 0.9}, Plane<double>(16, 16, 3.0)};
    EXPECT_EQ(synthesize_haze(img, p), img);
}

TEST(SynthesizeHaze, InfiniteDepthGivesAirlight) {
    std::mt19937_64 rng(14);
    const auto img = testutil::random_image<double>(16, 16, rng);
    HazeParams p{1.0, {0.7, 0.8, 0.9}, Plane<double>(16, 16, std::numeric_limits<double>::infinity())};
    const auto out = synthesize_haze(img, p);
    for (int r = 0; r < 16; ++r)
        for (int c = 0; c < 16; ++c)
            for (int ch = 0; ch < 3; ++ch) EXPECT_DOUBLE_EQ(out(r, c, ch), p.airlight[ch]);
}

TEST(SynthesizeHaze, ScalarModelEvaluation) {
    HazeParams p{1.0, {1.0, 1.0, 1.0}, Plane<double>(16, 16, 1.0)};
    const auto out = synthesize_haze(ImageD(16, 16, 0.0), p);
    EXPECT_NEAR(out(3, 4, 1), 1.0 - std::exp(-1.0), 1e-15);
    EXPECT_NEAR(out(3, 4, 1), 0.63212, 1e-5);
}

TEST(SynthesizeHaze, InvalidParameters) {
    ImageF img(16, 16);
    EXPECT_THROW(synthesize_haze(img, {-0.1, {0.9, 0.9, 0.9}, Plane<double>(16, 16, 1.0)}), ArgumentError);
    EXPECT_THROW(synthesize_haze(img, {1.0, {0.5, 0.9, 0.9}, Plane<double>(16, 16, 1.0)}), ArgumentError);
    EXPECT_THROW(synthesize_haze(img, {1.0, {0.9, 0.9, 0.9}, Plane<double>(16, 16, -1.0)}), ArgumentError);
    EXPECT_THROW(synthesize_haze(img, {1.0, {0.9, 0.9, 0.9}, Plane<double>(15, 16, 1.0)}), DimensionError);
}

TEST(SynthesizeHaze, LargerBetaMovesTowardAirlight) {
    std::mt19937_64 rng(15);
    const auto img = testutil::random_image<double>(16, 16, rng);
    Plane<double> depth(16, 16);
    for (auto& d : depth.values()) d = std::uniform_real_distribution<double>(0.0, 2.0)(rng);
    const Rgb a{0.85, 0.9, 0.95};
    ImageD prev = img;
    for (double beta : {0.25, 0.5, 1.0, 2.0, 4.0}) {
        const auto out = synthesize_haze(img, {beta, a, depth});
        for (int r = 0; r < 16; ++r)
            for (int c = 0; c < 16; ++c)
                for (int ch = 0; ch < 3; ++ch)
                    EXPECT_LE(std::abs(out(r, c, ch) - a[ch]), std::abs(prev(r, c, ch) - a[ch]) + 1e-15);
        prev = out;
    }
}

TEST(Synthetic, PairsAreDeterministicAndAligned) {
    const auto a = synthetic::make_pairs(4, {}, 21);
    const auto b = synthetic::make_pairs(4, {}, 21);
    ASSERT_EQ(a.size(), 4u);
    for (std::size_t i = 0; i < a.size(); ++i) {
        EXPECT_EQ(a[i].hazy, b[i].hazy);
        EXPECT_TRUE(a[i].hazy.same_shape(a[i].clean));
        EXPECT_TRUE(a[i].sky.matches(a[i].clean));
        EXPECT_TRUE(a[i].sky.any());
        for (float v : a[i].hazy.values()) {
            EXPECT_GE(v, 0.0f);
            EXPECT_LE(v, 1.0f);
        }
    }
}

TEST(ImageHash, SensitiveToContentAndStable) {
    std::mt19937_64 rng(22);
    auto img = testutil::random_image(16, 16, rng);
    const auto h = image_hash(img);
    EXPECT_EQ(image_hash(img), h);
    img(5, 5, 1) = img(5, 5, 1) > 0.5f ? 0.0f : 1.0f;
    EXPECT_NE(image_hash(img), h);
}
