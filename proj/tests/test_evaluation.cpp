#include <fstream>
#include <random>
#include <sstream>

#include <gtest/gtest.h>

#include "hazeclip/evaluation.hpp"
#include "hazeclip/synthetic.hpp"
#include "test_util.hpp"

using namespace hazeclip;

namespace {

std::vector<nlohmann::json> parse_lines(const std::string& s) {
    std::vector<nlohmann::json> out;
    std::istringstream is(s);
    for (std::string line; std::getline(is, line);) out.push_back(nlohmann::json::parse(line));
    return out;
}

fs::path write_script(const fs::path& dir, const std::string& name, const std::string& body) {
    const auto p = dir / name;
    std::ofstream(p) << "#!/bin/sh\n" << body << "\n";
    fs::permissions(p, fs::perms::owner_all);
    return p;
}

}  // namespace

TEST(HazeProxy, WhiteAndBlackImages) {
    EXPECT_EQ(haze_density_proxy(ImageF(20, 20, 1.0f)), 1.0);
    EXPECT_EQ(haze_density_proxy(ImageF(20, 20, 0.0f)), 0.0);
}

TEST(HazeProxy, IncreasesWithAddedHaze) {
    std::mt19937_64 rng(1);
    for (int t = 0; t < 5; ++t) {
        const auto s = synthetic::make_scene({}, rng);
        const auto hazy = synthesize_haze(s.clean, {1.5, {0.9, 0.9, 0.9}, synthetic::make_depth(32, 32, rng)});
        EXPECT_GT(haze_density_proxy(hazy), haze_density_proxy(s.clean));
    }
}

TEST(HazeProxy, OutOfRangeValuesAreClamped) {
    EXPECT_EQ(haze_density_proxy(ImageF(16, 16, 1.7f)), 1.0);
}

TEST(Contrast, ConstantIsZeroTwoToneIsHalfDifference) {
    EXPECT_EQ(contrast_statistic(ImageF(16, 16, 0.3f)), 0.0);
    ImageD img(16, 16, 0.0);
    for (int r = 0; r < 8; ++r)
        for (int c = 0; c < 16; ++c)
            for (int ch = 0; ch < 3; ++ch) img(r, c, ch) = 1.0;
    EXPECT_NEAR(contrast_statistic(img), 0.5, 1e-6);
}

TEST(MetricRegistry, BuiltinsAndErrors) {
    MetricRegistry reg;
    EXPECT_EQ(reg.names(), (std::vector<std::string>{"contrast", "haze_proxy"}));
    EXPECT_THROW(reg.get("fade"), LookupError);
    EXPECT_THROW(reg.add_external("haze_proxy", "true"), RegistrationError);
}

TEST(Evaluate, EmptyMetricListGivesEmptyScores) {
    const auto dir = testutil::temp_dir();
    save_image(ImageF(16, 16, 0.5f), dir / "a.png");
    const auto r = evaluate<float>(dir, {});
    ASSERT_EQ(r.images.size(), 1u);
    EXPECT_TRUE(r.images[0].scores.empty());
    EXPECT_TRUE(r.means().empty());
}

TEST(Evaluate, SingleImageMeanIsItsScore) {
    const auto dir = testutil::temp_dir();
    std::mt19937_64 rng(2);
    save_image(testutil::random_image(24, 24, rng), dir / "x.png", BitDepth::k16);
    const auto r = evaluate<float>(dir, {"haze_proxy"});
    ASSERT_EQ(r.images.size(), 1u);
    EXPECT_DOUBLE_EQ(r.mean("haze_proxy"), r.images[0].scores[0]);
    EXPECT_NEAR(r.images[0].scores[0], haze_density_proxy(load_image(dir / "x.png")), 1e-12);
}

TEST(Evaluate, TwoImageMeanByHandAndFilenameOrder) {
    const auto dir = testutil::temp_dir();
    save_image(ImageF(16, 16, 0.2f), dir / "b.png", BitDepth::k16);
    save_image(ImageF(16, 16, 0.8f), dir / "a.png", BitDepth::k16);
    const auto r = evaluate<float>(dir, {"haze_proxy", "contrast"});
    ASSERT_EQ(r.images.size(), 2u);
    EXPECT_EQ(r.images[0].file, "a.png");
    EXPECT_EQ(r.images[1].file, "b.png");
    EXPECT_NEAR(r.mean("haze_proxy"), 0.5, 1e-4);
    EXPECT_NEAR(r.mean("contrast"), 0.0, 1e-6);
    EXPECT_THROW(r.mean("nima"), LookupError);
}

TEST(Evaluate, UnreadableFileIsSkippedNotFatal) {
    const auto dir = testutil::temp_dir();
    save_image(ImageF(16, 16, 0.5f), dir / "good.png");
    std::ofstream(dir / "broken.png") << "garbage";
    const auto r = evaluate<float>(dir, {"haze_proxy"});
    EXPECT_EQ(r.images.size(), 1u);
    ASSERT_EQ(r.skipped.size(), 1u);
    EXPECT_EQ(r.skipped[0].file, "broken.png");
}

TEST(Evaluate, MissingCorpusIsNotFound) {
    EXPECT_THROW(evaluate<float>("/nonexistent/corpus", {"haze_proxy"}), NotFoundError);
}

TEST(Evaluate, IdentityModelMatchesRawInput) {
    const auto dir = testutil::temp_dir();
    std::mt19937_64 rng(3);
    for (int i = 0; i < 3; ++i)
        save_image(testutil::random_image(20, 20, rng), dir / ("i" + std::to_string(i) + ".png"), BitDepth::k16);
    const auto id = tiny_backbone<float>(8, 1, 0, true);
    const auto raw = evaluate<float>(dir, {"haze_proxy"});
    const auto with = evaluate<float>(dir, {"haze_proxy"}, id.get());
    EXPECT_DOUBLE_EQ(raw.mean("haze_proxy"), with.mean("haze_proxy"));
}

TEST(Evaluate, JsonlRecordsAndSummary) {
    const auto dir = testutil::temp_dir();
    save_image(ImageF(16, 16, 0.25f), dir / "a.png", BitDepth::k16);
    std::ofstream(dir / "z.png") << "junk";
    EvalOptions opt;
    opt.method = "baseline";
    opt.config = {{"k", 1}};
    const auto r = evaluate<float>(dir, {"haze_proxy"}, nullptr, opt);
    const auto lines = parse_lines(r.to_jsonl());
    ASSERT_EQ(lines.size(), 3u);
    EXPECT_EQ(lines[0]["type"], "image");
    EXPECT_NEAR(lines[0]["scores"]["haze_proxy"].get<double>(), 0.25, 1e-4);
    EXPECT_EQ(lines[1]["type"], "skip");
    EXPECT_EQ(lines[2]["type"], "summary");
    EXPECT_EQ(lines[2]["method"], "baseline");
    EXPECT_EQ(lines[2]["config_hash"], config_hash(opt.config));
    EXPECT_EQ(lines[2]["images"], 1);
    EXPECT_EQ(lines[2]["skipped"], 1);
    EXPECT_NE(config_hash({{"k", 2}}), config_hash(opt.config));
    EXPECT_NE(r.summary_table().find("baseline"), std::string::npos);
}

TEST(ExternalMetric, ParsesSingleNumber) {
    const auto dir = testutil::temp_dir();
    const auto script = write_script(dir, "m.sh", "echo 4.25");
    fs::create_directories(dir / "corpus");
    save_image(ImageF(16, 16, 0.5f), dir / "corpus" / "a.png");
    MetricRegistry reg;
    reg.add_external("brisque", script.string());
    const auto r = evaluate<float>(dir / "corpus", {"brisque"}, nullptr, {}, reg);
    ASSERT_EQ(r.images.size(), 1u);
    EXPECT_DOUBLE_EQ(r.images[0].scores[0], 4.25);
}

TEST(ExternalMetric, ReceivesDehazedImagePath) {
    const auto dir = testutil::temp_dir();
    // Prints the byte size of the file it is given.
    const auto script = write_script(dir, "size.sh", "wc -c < \"$1\"");
    fs::create_directories(dir / "corpus");
    save_image(ImageF(16, 16, 0.5f), dir / "corpus" / "a.png");
    MetricRegistry reg;
    reg.add_external("bytes", script.string());
    EvalOptions opt;
    opt.scratch_dir = dir / "scratch";
    const auto id = tiny_backbone<float>(8, 1, 0, true);
    const auto r = evaluate<float>(dir / "corpus", {"bytes"}, id.get(), opt, reg);
    ASSERT_EQ(r.images.size(), 1u);
    EXPECT_DOUBLE_EQ(r.images[0].scores[0], static_cast<double>(fs::file_size(dir / "scratch" / "a.png")));
}

TEST(ExternalMetric, FailuresBecomeSkips) {
    const auto dir = testutil::temp_dir();
    fs::create_directories(dir / "corpus");
    save_image(ImageF(16, 16, 0.5f), dir / "corpus" / "a.png");
    MetricRegistry reg;
    reg.add_external("words", write_script(dir, "w.sh", "echo not-a-number").string());
    reg.add_external("fails", write_script(dir, "f.sh", "exit 3").string());
    for (const char* m : {"words", "fails"}) {
        const auto r = evaluate<float>(dir / "corpus", {m}, nullptr, {}, reg);
        EXPECT_TRUE(r.images.empty());
        ASSERT_EQ(r.skipped.size(), 1u) << m;
    }
}
