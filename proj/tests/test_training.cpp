#include <cmath>
#include <fstream>

#include <gtest/gtest.h>

#include "hazeclip/synthetic.hpp"
#include "hazeclip/toy_encoder.hpp"
#include "hazeclip/training.hpp"
#include "test_util.hpp"

using namespace hazeclip;

namespace {

const ToyEncoder<double>& enc() {
    static const ToyEncoder<double> e;
    return e;
}

std::vector<PairSample> toy_pairs(int n, unsigned long long seed) {
    std::vector<PairSample> out;
    for (auto& p : synthetic::make_pairs(n, {}, seed)) out.push_back({p.hazy, p.clean});
    return out;
}

TrainConfig small_finetune(int epochs = 2) {
    auto c = TrainConfig::finetune_defaults();
    c.epochs = epochs;
    c.batch = 4;
    c.lr0 = 1e-3;
    c.seed = 17;
    c.workers = 1;
    return c;
}

Checkpoint<double> start_ckpt(unsigned long long seed = 3) {
    return Checkpoint<double>(tiny_backbone<double>(8, 1, seed), Stage::pretrained, {{"note", "start"}});
}

MaskProvider heuristic_masks() {
    return [](const ImageF& img) { return heuristic_sky_mask(img); };
}

double mean_abs_change(const DehazeModel<double>& a, const DehazeModel<double>& b, const std::vector<ImageF>& imgs) {
    double s = 0;
    std::size_t n = 0;
    for (const auto& im : imgs) {
        const auto x = im.cast<double>();
        const auto ya = a.forward(x), yb = b.forward(x);
        for (std::size_t i = 0; i < ya.values().size(); ++i, ++n) s += std::abs(ya.values()[i] - yb.values()[i]);
    }
    return s / static_cast<double>(n);
}

}  // namespace

TEST(LrSchedule, EndpointsAndMidpoint) {
    EXPECT_NEAR(lr_at(0, 3e-5, 0.0, 100), 3e-5, 1e-12);
    EXPECT_NEAR(lr_at(100, 3e-5, 0.0, 100), 0.0, 1e-12);
    EXPECT_NEAR(lr_at(50, 3e-5, 0.0, 100), 1.5e-5, 1e-12);
    EXPECT_NEAR(lr_at(100, 3e-5, 1e-6, 100), 1e-6, 1e-12);
    EXPECT_NEAR(lr_at(25, 1.0, 0.0, 100), 0.5 * (1 + std::cos(M_PI / 4)), 1e-15);
}

TEST(LrSchedule, OutOfRangeIsArgumentError) {
    EXPECT_THROW(lr_at(-1, 3e-5, 0.0, 10), ArgumentError);
    EXPECT_THROW(lr_at(11, 3e-5, 0.0, 10), ArgumentError);
}

TEST(LrSchedule, NonincreasingOverRun) {
    double prev = 1.0;
    for (long long s = 0; s <= 60; ++s) {
        const double v = lr_at(s, 1.0, 0.1, 60);
        EXPECT_LE(v, prev);
        prev = v;
    }
}

TEST(TrainConfig, PublishedDefaults) {
    const auto p = TrainConfig::pretrain_defaults();
    EXPECT_EQ(p.epochs, 200);
    EXPECT_EQ(p.lr0, 3e-5);
    EXPECT_EQ(p.optimizer, OptimizerKind::lion);
    EXPECT_EQ(p.eta_min, 0.0);
    const auto f = TrainConfig::finetune_defaults();
    EXPECT_EQ(f.epochs, 15);
    EXPECT_EQ(f.stage, TrainStage::finetune);
    EXPECT_EQ(f.loss.weights.lambda1, 0.5);
    EXPECT_EQ(f.loss.weights.lambda2, 0.1);
}

TEST(TrainConfig, JsonOverlayAndValidation) {
    const auto c = TrainConfig::from_json({{"lr0", 1e-3}, {"epochs", 7}, {"optimizer", "adamw"}, {"region_split", false}},
                                          TrainConfig::finetune_defaults());
    EXPECT_EQ(c.lr0, 1e-3);
    EXPECT_EQ(c.epochs, 7);
    EXPECT_EQ(c.optimizer, OptimizerKind::adamw);
    EXPECT_FALSE(c.loss.region_split);
    EXPECT_EQ(c.stage, TrainStage::finetune);
    EXPECT_EQ(TrainConfig::from_json(c.to_json(), {}).to_json(), c.to_json());
    EXPECT_THROW(TrainConfig::from_json({{"alpha", {1, 2}}}, {}), ArgumentError);
    EXPECT_THROW(TrainConfig::from_json({{"optimizer", "sgd"}}, {}), ArgumentError);
    auto bad = TrainConfig{};
    bad.batch = 0;
    EXPECT_THROW(bad.validate(), ArgumentError);
}

TEST(Optimizer, LionStepsMatchHandComputation) {
    std::vector<double> p{1.0, -2.0, 0.5};
    Lion<double> opt(3, 0.9, 0.99);
    opt.step(p, std::vector<double>{0.3, -0.1, 0.0}, 0.01);
    // m = 0: update direction sign(0.1·g).
    EXPECT_DOUBLE_EQ(p[0], 1.0 - 0.01);
    EXPECT_DOUBLE_EQ(p[1], -2.0 + 0.01);
    EXPECT_DOUBLE_EQ(p[2], 0.5);
    // m = 0.01·g1 = {0.003, −0.001, 0}; c = 0.9·m + 0.1·g2 with g2 = {−0.01, 0.05, 0.2}.
    opt.step(p, std::vector<double>{-0.01, 0.05, 0.2}, 0.01);
    EXPECT_DOUBLE_EQ(p[0], 0.99 - 0.01);   // c = 0.0027 − 0.001 > 0
    EXPECT_DOUBLE_EQ(p[1], -1.99 - 0.01);  // c = −0.0009 + 0.005 > 0
    EXPECT_DOUBLE_EQ(p[2], 0.5 - 0.01);
}

TEST(Optimizer, LionWeightDecayAndSizeCheck) {
    std::vector<double> p{2.0};
    Lion<double> opt(1, 0.9, 0.99, 0.1);
    opt.step(p, std::vector<double>{0.0}, 0.5);
    EXPECT_DOUBLE_EQ(p[0], 2.0 - 0.5 * 0.1 * 2.0);
    EXPECT_THROW(opt.step(p, std::vector<double>{1.0, 2.0}, 0.1), DimensionError);
}

TEST(Optimizer, AdamFirstStepIsNearlySignTimesLr) {
    std::vector<double> p{0.0, 0.0};
    AdamW<double> opt(2);
    opt.step(p, std::vector<double>{4.0, -0.25}, 1e-3);
    EXPECT_NEAR(p[0], -1e-3, 1e-9);
    EXPECT_NEAR(p[1], 1e-3, 1e-9);
}

TEST(L1Loss, ValueAndGradient) {
    ImageD a(16, 16, 0.5), b(16, 16, 0.25);
    ImageD g;
    EXPECT_DOUBLE_EQ(l1_loss(a, b, &g), 0.25);
    for (double v : g.values()) EXPECT_DOUBLE_EQ(v, 1.0 / (16 * 16 * 3));
    EXPECT_THROW(l1_loss(a, ImageD(16, 17)), DimensionError);
}

TEST(Pretrain, IdentityPairsWithIdentityModelStayPut) {
    std::vector<PairSample> pairs;
    for (const auto& p : toy_pairs(4, 1)) pairs.push_back({p.clean, p.clean});
    const auto init = tiny_backbone<double>(8, 1, 2, true);
    auto cfg = TrainConfig::pretrain_defaults();
    cfg.epochs = 3;
    cfg.batch = 2;
    cfg.workers = 1;
    const auto r = pretrain<double>(cfg, pairs, init.get());
    for (const auto& s : r.record.steps) EXPECT_EQ(s.loss, 0.0);
    EXPECT_TRUE(std::ranges::equal(r.checkpoint.model->parameters(), init->parameters()));
    EXPECT_EQ(r.checkpoint.stage, Stage::pretrained);
}

TEST(Pretrain, FirstStepLossIsL1OfInitialOutput) {
    const auto pairs = toy_pairs(1, 4);
    const auto init = tiny_backbone<double>(8, 1, 5);
    auto cfg = TrainConfig::pretrain_defaults();
    cfg.epochs = 1;
    cfg.workers = 1;
    const auto r = pretrain<double>(cfg, pairs, init.get());
    ASSERT_EQ(r.record.steps.size(), 1u);
    const auto out = init->forward(pairs[0].hazy.cast<double>());
    const auto target = pairs[0].clean.cast<double>();
    double sum = 0;
    for (std::size_t i = 0; i < out.values().size(); ++i) sum += std::abs(out.values()[i] - target.values()[i]);
    EXPECT_NEAR(r.record.steps[0].loss, sum / static_cast<double>(out.values().size()), 1e-12);
}

TEST(Pretrain, ScheduleSpansAllSteps) {
    auto cfg = TrainConfig::pretrain_defaults();
    cfg.epochs = 3;
    cfg.batch = 2;
    cfg.workers = 1;
    cfg.backbone_params = TinyBackboneConfig{8, 1, 0, false}.to_json();
    const auto r = pretrain<double>(cfg, toy_pairs(5, 6));
    ASSERT_EQ(r.record.steps.size(), 9u);  // ceil(5/2)·3
    for (const auto& s : r.record.steps) EXPECT_DOUBLE_EQ(s.lr, lr_at(s.step, 3e-5, 0.0, 9));
    EXPECT_EQ(r.record.epochs.size(), 3u);
    EXPECT_EQ(r.record.counters.samples_loaded, 15u);
}

TEST(Pretrain, LossDecreasesOnToyPairs) {
    auto cfg = TrainConfig::pretrain_defaults();
    cfg.epochs = 12;
    cfg.lr0 = 1e-3;
    cfg.batch = 4;
    cfg.backbone_params = TinyBackboneConfig{8, 1, 1, false}.to_json();
    const auto r = pretrain<float>(cfg, toy_pairs(8, 7));
    EXPECT_LT(r.record.epochs.back().mean_loss, r.record.epochs.front().mean_loss);
}

TEST(Pretrain, InvalidDatasets) {
    EXPECT_THROW(pretrain<double>(TrainConfig{}, {}), ArgumentError);
    std::vector<PairSample> bad{{ImageF(16, 16), ImageF(16, 20)}};
    EXPECT_THROW(pretrain<double>(TrainConfig{}, bad), DimensionError);
}

TEST(Pretrain, WritesLogAndPeriodicCheckpoints) {
    const auto dir = testutil::temp_dir();
    auto cfg = TrainConfig::pretrain_defaults();
    cfg.epochs = 4;
    cfg.batch = 2;
    cfg.workers = 1;
    cfg.checkpoint_every = 2;
    cfg.checkpoint_dir = dir / "ckpt";
    cfg.log_path = dir / "log.jsonl";
    cfg.backbone_params = TinyBackboneConfig{8, 1, 0, false}.to_json();
    const auto r = pretrain<float>(cfg, toy_pairs(4, 8));
    ASSERT_EQ(r.record.checkpoints.size(), 2u);
    for (const auto& p : r.record.checkpoints) EXPECT_EQ(load_checkpoint<float>(p).stage, Stage::pretrained);
    std::ifstream log(cfg.log_path);
    int lines = 0;
    long long last = -1;
    for (std::string line; std::getline(log, line); ++lines) {
        const auto j = nlohmann::json::parse(line);
        if (j.contains("step")) {
            EXPECT_EQ(j["step"].get<long long>(), last + 1);
            last = j["step"];
        }
    }
    EXPECT_EQ(lines, 8 + 4);
}

TEST(Finetune, ZeroEpochsIsNoOp) {
    const auto start = start_ckpt();
    const auto imgs = synthetic::make_hazy_images(3, {}, 9);
    const auto r = finetune<double>(small_finetune(0), imgs, start, enc(), default_prompt_sets(), heuristic_masks());
    EXPECT_EQ(r.checkpoint.stage, Stage::finetuned);
    for (const auto& im : imgs)
        EXPECT_EQ(r.checkpoint.model->forward(im.cast<double>()), start.model->forward(im.cast<double>()));
    EXPECT_EQ(r.checkpoint.config["pretrain"], start.config);
}

TEST(Finetune, RejectsWrongStageAndEmptyCorpus) {
    auto done = start_ckpt();
    done.stage = Stage::finetuned;
    const auto imgs = synthetic::make_hazy_images(2, {}, 10);
    EXPECT_THROW(finetune<double>(small_finetune(), imgs, done, enc(), default_prompt_sets(), heuristic_masks()),
                 StageError);
    EXPECT_THROW(finetune<double>(small_finetune(), {}, start_ckpt(), enc(), default_prompt_sets(), heuristic_masks()),
                 ArgumentError);
}

TEST(Finetune, MasksLookedUpOncePerImage) {
    const auto imgs = synthetic::make_hazy_images(5, {}, 11);
    int calls = 0;
    MaskProvider counting = [&](const ImageF& img) {
        ++calls;
        return heuristic_sky_mask(img);
    };
    auto cfg = small_finetune(3);
    cfg.crop = 24;
    const auto r = finetune<double>(cfg, imgs, start_ckpt(), enc(), default_prompt_sets(), counting);
    EXPECT_EQ(calls, 5);
    EXPECT_EQ(r.record.counters.mask_lookups, 5u);
    EXPECT_EQ(r.record.counters.crops, 15u);
    EXPECT_EQ(r.record.counters.samples_loaded, 15u);
}

TEST(Finetune, DeterministicAcrossRunsAndWorkerCounts) {
    const auto imgs = synthetic::make_hazy_images(6, {}, 12);
    auto cfg = small_finetune(2);
    cfg.crop = 24;
    const auto a = finetune<double>(cfg, imgs, start_ckpt(), enc(), default_prompt_sets(), heuristic_masks());
    const auto b = finetune<double>(cfg, imgs, start_ckpt(), enc(), default_prompt_sets(), heuristic_masks());
    cfg.workers = 3;
    const auto c = finetune<double>(cfg, imgs, start_ckpt(), enc(), default_prompt_sets(), heuristic_masks());
    EXPECT_EQ(a.record.deterministic_json(), b.record.deterministic_json());
    EXPECT_EQ(a.record.deterministic_json(), c.record.deterministic_json());
    EXPECT_TRUE(std::ranges::equal(a.checkpoint.model->parameters(), b.checkpoint.model->parameters()));
    EXPECT_TRUE(std::ranges::equal(a.checkpoint.model->parameters(), c.checkpoint.model->parameters()));
}

TEST(Finetune, AblationsChangeOnlyLossTerms) {
    const auto imgs = synthetic::make_hazy_images(5, {}, 13);
    const auto base = finetune<double>(small_finetune(), imgs, start_ckpt(), enc(), default_prompt_sets(),
                                       heuristic_masks());
    auto no_split = small_finetune();
    no_split.loss.region_split = false;
    auto no_enh = small_finetune();
    no_enh.loss.enhance_set = false;
    const auto a = finetune<double>(no_split, imgs, start_ckpt(), enc(), default_prompt_sets(), heuristic_masks());
    const auto b = finetune<double>(no_enh, imgs, start_ckpt(), enc(), default_prompt_sets(), heuristic_masks());
    EXPECT_EQ(a.record.counters, base.record.counters);
    EXPECT_EQ(b.record.counters, base.record.counters);
    for (const auto& s : a.record.steps) {
        EXPECT_FALSE(s.breakdown->sky_applied);
        EXPECT_EQ(s.breakdown->sky, 0.0);
        EXPECT_TRUE(s.to_json()["breakdown"]["sky"].is_null());
    }
    for (const auto& s : b.record.steps) {
        EXPECT_FALSE(s.breakdown->enhance_applied);
        EXPECT_EQ(s.breakdown->enhance, 0.0);
    }
}

TEST(Finetune, EncoderChecksumUnchanged) {
    const auto imgs = synthetic::make_hazy_images(3, {}, 14);
    const auto r = finetune<double>(small_finetune(1), imgs, start_ckpt(), enc(), default_prompt_sets(),
                                    heuristic_masks());
    EXPECT_EQ(r.record.encoder_checksum_before, enc().weights_checksum());
    EXPECT_EQ(r.record.encoder_checksum_after, r.record.encoder_checksum_before);
    EXPECT_EQ(r.checkpoint.encoder, enc().metadata());
}

TEST(Finetune, HeavyFidelityWeightMovesOutputLess) {
    const auto imgs = synthetic::make_hazy_images(8, {}, 15);
    const auto start = start_ckpt(4);
    auto cfg = small_finetune(3);
    const auto light = finetune<double>(cfg, imgs, start, enc(), default_prompt_sets(), heuristic_masks());
    cfg.loss.weights.lambda2 = 1e6;
    const auto heavy = finetune<double>(cfg, imgs, start, enc(), default_prompt_sets(), heuristic_masks());
    EXPECT_LT(mean_abs_change(*heavy.checkpoint.model, *start.model, imgs),
              mean_abs_change(*light.checkpoint.model, *start.model, imgs));
}

TEST(Finetune, LowersNonSkyPromptLossOnToyCorpus) {
    const auto imgs = synthetic::make_hazy_images(8, {}, 16);
    const auto start = start_ckpt(5);
    const auto r = finetune<double>(small_finetune(4), imgs, start, enc(), default_prompt_sets(), heuristic_masks());
    const auto sets = ensemble_all(default_prompt_sets(), enc());
    auto mean_loss = [&](const DehazeModel<double>& m) {
        double s = 0;
        for (const auto& im : imgs) s += clip_prompt_loss(m.forward(im.cast<double>()), sets.non_sky, enc());
        return s / static_cast<double>(imgs.size());
    };
    EXPECT_LT(mean_loss(*r.checkpoint.model), mean_loss(*start.model));
}
