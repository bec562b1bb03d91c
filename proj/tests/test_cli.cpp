#include <algorithm>
#include <cstdlib>
#include <fstream>
#include <sstream>
#include <sys/wait.h>

#include <gtest/gtest.h>
#include <nlohmann/json.hpp>

#include "hazeclip/image_io.hpp"
#include "hazeclip/synthetic.hpp"
#include "test_util.hpp"

#ifndef HAZECLIP_CLI_PATH
#error "HAZECLIP_CLI_PATH must point at the hazeclip executable"
#endif

using namespace hazeclip;

namespace {

struct Run {
    int code = -1;
    std::string out;
    std::string err;
};

std::string read_file(const fs::path& p) {
    std::ifstream f(p);
    std::stringstream ss;
    ss << f.rdbuf();
    return ss.str();
}

// Runs the CLI inside `dir` with the given argument string.
Run cli(const fs::path& dir, const std::string& args) {
    const std::string cmd = "cd '" + dir.string() + "' && '" HAZECLIP_CLI_PATH "' " + args + " > stdout.txt 2> stderr.txt";
    const int status = std::system(cmd.c_str());
    Run r;
    r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
    r.out = read_file(dir / "stdout.txt");
    r.err = read_file(dir / "stderr.txt");
    return r;
}

std::string first_line(const std::string& s) { return s.substr(0, s.find('\n')); }

}  // namespace

TEST(Cli, HelpExitsZero) {
    const auto r = cli(testutil::temp_dir(), "--help");
    EXPECT_EQ(r.code, 0);
    for (const char* sub : {"pretrain", "finetune", "dehaze", "eval", "simmap", "mask", "prompts"})
        EXPECT_NE(r.out.find(sub), std::string::npos) << sub;
}

TEST(Cli, UsageErrorsExitTwo) {
    const auto dir = testutil::temp_dir();
    for (const char* args : {"", "bogus", "prompts --no-such-flag", "dehaze --input x", "prompts hide"}) {
        const auto r = cli(dir, args);
        EXPECT_EQ(r.code, 2) << args;
        EXPECT_EQ(first_line(r.err).rfind("error: usage: ", 0), 0u) << args << ": " << r.err;
    }
    EXPECT_NE(cli(dir, "bogus").err.find("unknown subcommand 'bogus'"), std::string::npos);
}

TEST(Cli, LibraryErrorsExitOneWithKind) {
    const auto dir = testutil::temp_dir();
    const auto r = cli(dir, "dehaze --checkpoint missing.hzck --input in --output out");
    EXPECT_EQ(r.code, 1);
    EXPECT_EQ(first_line(r.err).rfind("error: not_found: ", 0), 0u) << r.err;
    EXPECT_EQ(r.err.find('\n'), r.err.size() - 1);
}

TEST(Cli, PromptsShowListsHazeTemplates) {
    for (const char* args : {"prompts", "prompts show"}) {
        const auto r = cli(testutil::temp_dir(), args);
        ASSERT_EQ(r.code, 0);
        const auto j = nlohmann::json::parse(r.out);
        EXPECT_EQ(j["sky"]["negatives"].size(), 2u);
        EXPECT_NE(r.out.find("a picture of sky in the fog."), std::string::npos);
        EXPECT_EQ(j["non_sky"]["negatives"].size(), 6u);
    }
}

TEST(Cli, PromptsHonourConfigFile) {
    const auto dir = testutil::temp_dir();
    std::ofstream(dir / "cfg.json") << R"({"prompts": {"non_sky": {"entities": ["road"]}}})";
    const auto r = cli(dir, "prompts --config cfg.json");
    ASSERT_EQ(r.code, 0);
    EXPECT_EQ(nlohmann::json::parse(r.out)["non_sky"]["negatives"][0], "a picture of road in the fog.");
}

TEST(Cli, TrainDehazeEvalRoundTrip) {
    const auto dir = testutil::temp_dir();
    ASSERT_EQ(cli(dir, "pretrain --synthetic 4 --epochs 1 --out pre.hzck --log pre.jsonl").code, 0);
    const auto ft = cli(dir, "finetune --checkpoint pre.hzck --synthetic 4 --epochs 1 --out ft.hzck --log ft.jsonl");
    ASSERT_EQ(ft.code, 0) << ft.err;
    EXPECT_FALSE(read_file(dir / "ft.jsonl").empty());

    const auto again = cli(dir, "finetune --checkpoint ft.hzck --synthetic 4 --epochs 1 --out x.hzck");
    EXPECT_EQ(again.code, 1);
    EXPECT_EQ(first_line(again.err).rfind("error: stage: ", 0), 0u) << again.err;

    fs::create_directories(dir / "in");
    const auto imgs = synthetic::make_hazy_images(2, {}, 3);
    save_image(imgs[0], dir / "in" / "one.png");
    save_image(imgs[1], dir / "in" / "two.png");
    ASSERT_EQ(cli(dir, "dehaze --checkpoint ft.hzck --input in --output out").code, 0);
    std::vector<std::string> names;
    for (const auto& e : fs::directory_iterator(dir / "out")) names.push_back(e.path().filename().string());
    std::sort(names.begin(), names.end());
    EXPECT_EQ(names, (std::vector<std::string>{"one.png", "two.png"}));
    EXPECT_EQ(load_image(dir / "out" / "one.png").height(), imgs[0].height());

    const auto ev = cli(dir, "eval --input in --checkpoint ft.hzck --metrics haze_proxy,contrast --out report.jsonl");
    ASSERT_EQ(ev.code, 0) << ev.err;
    std::istringstream is(read_file(dir / "report.jsonl"));
    std::string line, last;
    int n = 0;
    while (std::getline(is, line)) last = line, ++n;
    EXPECT_EQ(n, 3);
    const auto summary = nlohmann::json::parse(last);
    EXPECT_EQ(summary["type"], "summary");
    EXPECT_EQ(summary["images"], 2);
    EXPECT_TRUE(summary["means"].contains("haze_proxy"));
}

TEST(Cli, UnknownMetricIsLookupError) {
    const auto dir = testutil::temp_dir();
    fs::create_directories(dir / "in");
    save_image(ImageF(16, 16, 0.5f), dir / "in" / "a.png");
    const auto r = cli(dir, "eval --input in --metrics fade");
    EXPECT_EQ(r.code, 1);
    EXPECT_EQ(first_line(r.err).rfind("error: lookup: ", 0), 0u) << r.err;
}

TEST(Cli, MaskAndSimmapWriteImages) {
    const auto dir = testutil::temp_dir();
    const auto img = synthetic::make_hazy_images(1, {48, 48, 16}, 5)[0];
    save_image(img, dir / "h.png");
    ASSERT_EQ(cli(dir, "mask --image h.png --out m.png").code, 0);
    EXPECT_TRUE(load_mask(dir / "m.png").matches(img));
    ASSERT_EQ(cli(dir, "simmap --image h.png --out heat.png --mask-out m2.png").code, 0);
    EXPECT_TRUE(fs::exists(dir / "heat.png"));
    EXPECT_TRUE(fs::exists(dir / "m2.png"));
}
