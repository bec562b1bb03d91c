// hazeclip command-line front end.
//
//   hazeclip pretrain  --out ckpt.hzck (--data DIR | --synthetic N)
//   hazeclip finetune  --checkpoint ckpt.hzck --out tuned.hzck (--data DIR | --synthetic N)
//   hazeclip dehaze    --checkpoint ckpt.hzck --input DIR --output DIR
//   hazeclip eval      --input DIR [--metrics a,b] [--checkpoint ckpt.hzck]
//   hazeclip simmap    --image IMG --out heat.png [--mask-out mask.png]
//   hazeclip mask      --image IMG --out mask.png
//   hazeclip prompts [show]
//
// Failures print one line "error: <kind>: <message>" and exit 1; usage
// errors exit 2.

#include <cstdlib>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "hazeclip/hazeclip.hpp"

namespace hz = hazeclip;
namespace fs = std::filesystem;
using json = nlohmann::json;
using Scalar = float;

namespace {

struct Common {
    std::string config_path;
    std::string backend = "toy";
    std::optional<unsigned long long> seed;
};

struct TrainArgs {
    std::string data;
    int synthetic = 0;
    std::string dump_synthetic;
    std::string out;
    std::string checkpoint;
    std::string log;
    std::string masks;
    std::string segmenter_cmd;
    std::optional<int> epochs;
    std::optional<int> batch;
    std::optional<double> lr;
    std::optional<double> lambda1;
    std::optional<double> lambda2;
    std::string region_mode;
    bool no_region_split = false;
    bool no_enhance_set = false;
};

json read_config(const std::string& path) {
    if (path.empty()) return json::object();
    std::ifstream f(path);
    if (!f) throw hz::NotFoundError("config file not found: " + path);
    try {
        return json::parse(f);
    } catch (const json::exception& e) {
        throw hz::FormatError("config " + path + ": " + e.what());
    }
}

// Relative data paths that do not exist are looked up under $HAZECLIP_DATA.
fs::path resolve_data(const std::string& p) {
    fs::path path(p);
    if (path.is_relative() && !fs::exists(path))
        if (const char* root = std::getenv("HAZECLIP_DATA")) return fs::path(root) / path;
    return path;
}

hz::TrainConfig train_config(const Common& c, const TrainArgs& a, const json& cfg, hz::TrainConfig base,
                             const char* section) {
    if (cfg.contains(section)) base = hz::TrainConfig::from_json(cfg.at(section), base);
    if (c.seed) base.seed = *c.seed;
    if (a.epochs) base.epochs = *a.epochs;
    if (a.batch) base.batch = *a.batch;
    if (a.lr) base.lr0 = *a.lr;
    if (a.lambda1) base.loss.weights.lambda1 = *a.lambda1;
    if (a.lambda2) base.loss.weights.lambda2 = *a.lambda2;
    if (!a.region_mode.empty()) base.loss.region_mode = hz::parse_region_mode(a.region_mode);
    if (a.no_region_split) base.loss.region_split = false;
    if (a.no_enhance_set) base.loss.enhance_set = false;
    if (!a.log.empty()) base.log_path = a.log;
    return base;
}

hz::PromptSets prompt_sets(const json& cfg) {
    return cfg.contains("prompts") ? hz::prompt_sets_from_json(cfg.at("prompts")) : hz::default_prompt_sets();
}

hz::SkyMaskOptions mask_options(const json& cfg) {
    hz::SkyMaskOptions o;
    if (cfg.contains("regions")) {
        const auto& r = cfg.at("regions");
        if (r.contains("map_backend")) o.backend = hz::parse_map_backend(r.at("map_backend").get<std::string>());
        o.points = r.value("points", o.points);
        o.percentile = r.value("percentile", o.percentile);
        o.sky_text = r.value("sky_text", o.sky_text);
    }
    return o;
}

std::unique_ptr<hz::SkySegmenter> make_segmenter(const std::string& cmd, const fs::path& work) {
    if (cmd.empty()) return std::make_unique<hz::HeuristicSegmenter>();
    return std::make_unique<hz::CommandSegmenter>(cmd, work);
}

void dump_images(const std::vector<hz::ImageF>& images, const fs::path& dir, const std::string& prefix) {
    fs::create_directories(dir);
    for (std::size_t i = 0; i < images.size(); ++i) {
        char name[32];
        std::snprintf(name, sizeof name, "%s%04zu.png", prefix.c_str(), i);
        hz::save_image(images[i], dir / name, hz::BitDepth::k16);
    }
}

void print_epoch(const hz::EpochRecord& e) {
    std::cout << "epoch " << e.epoch << " loss " << e.mean_loss << " (" << e.seconds << " s)\n";
}

int cmd_pretrain(const Common& c, const TrainArgs& a) {
    const json cfg = read_config(c.config_path);
    const auto tc = train_config(c, a, cfg, hz::TrainConfig::pretrain_defaults(), "pretrain");
    std::vector<hz::PairSample> pairs;
    if (a.synthetic > 0) {
        for (auto& p : hz::synthetic::make_pairs(a.synthetic, {}, tc.seed)) pairs.push_back({p.hazy, p.clean});
        if (!a.dump_synthetic.empty()) {
            std::vector<hz::ImageF> h, cl;
            for (const auto& p : pairs) {
                h.push_back(p.hazy);
                cl.push_back(p.clean);
            }
            dump_images(h, fs::path(a.dump_synthetic) / "hazy", "pair");
            dump_images(cl, fs::path(a.dump_synthetic) / "clean", "pair");
        }
    } else {
        if (a.data.empty()) throw hz::ArgumentError("pretrain needs --data or --synthetic");
        const fs::path root = resolve_data(a.data);
        for (const auto& hp : hz::list_images(root / "hazy")) {
            const fs::path cp = root / "clean" / hp.filename();
            if (!fs::exists(cp)) throw hz::NotFoundError("no clean image for " + hp.filename().string());
            pairs.push_back({hz::load_image(hp), hz::load_image(cp)});
        }
    }
    hz::TrainHooks hooks;
    hooks.on_epoch = print_epoch;
    auto res = hz::pretrain<Scalar>(tc, pairs, nullptr, hooks);
    hz::save_checkpoint(res.checkpoint, a.out);
    std::cout << "saved " << a.out << " (" << res.record.steps.size() << " steps, " << res.record.seconds << " s)\n";
    return 0;
}

int cmd_finetune(const Common& c, const TrainArgs& a) {
    const json cfg = read_config(c.config_path);
    const auto tc = train_config(c, a, cfg, hz::TrainConfig::finetune_defaults(), "finetune");
    std::vector<hz::ImageF> images;
    if (a.synthetic > 0) {
        images = hz::synthetic::make_hazy_images(a.synthetic, {}, tc.seed + 1);
        if (!a.dump_synthetic.empty()) dump_images(images, a.dump_synthetic, "hazy");
    } else {
        if (a.data.empty()) throw hz::ArgumentError("finetune needs --data or --synthetic");
        for (const auto& p : hz::list_images(resolve_data(a.data))) images.push_back(hz::load_image(p));
    }
    const auto start = hz::load_checkpoint<Scalar>(a.checkpoint);
    const auto encoder = hz::make_encoder<Scalar>(c.backend);
    const auto map_encoder = hz::make_encoder<float>(c.backend);
    const fs::path mask_dir = a.masks.empty() ? fs::path(a.out).parent_path() / "masks" : fs::path(a.masks);
    const auto segmenter = make_segmenter(a.segmenter_cmd, mask_dir / "segmenter");
    const auto mopt = mask_options(cfg);
    hz::MaskCache cache([&](const hz::ImageF& img) { return hz::compute_sky_mask(img, *map_encoder, *segmenter, mopt); },
                        mask_dir);
    hz::TrainHooks hooks;
    hooks.on_epoch = print_epoch;
    auto res = hz::finetune<Scalar>(tc, images, start, *encoder, prompt_sets(cfg), hz::mask_provider(cache), hooks);
    hz::save_checkpoint(res.checkpoint, a.out);
    for (const auto& w : encoder->warnings()) std::cerr << "warning: " << w << '\n';
    std::cout << "saved " << a.out << " (" << res.record.steps.size() << " steps, " << res.record.seconds << " s)\n";
    return 0;
}

int cmd_dehaze(const std::string& checkpoint, const std::string& input, const std::string& output) {
    const auto ck = hz::load_checkpoint<Scalar>(checkpoint);
    const auto files = hz::list_images(resolve_data(input));
    fs::create_directories(output);
    for (const auto& f : files) {
        const auto out = ck.model->infer(hz::load_image(f));
        hz::save_image(out, fs::path(output) / f.filename(), hz::BitDepth::k8);
    }
    std::cout << "wrote " << files.size() << " image(s) to " << output << '\n';
    return 0;
}

struct EvalArgs {
    std::string input;
    std::string metrics = "haze_proxy,contrast";
    std::string checkpoint;
    std::string out;
    std::string method;
    std::vector<std::string> metric_cmds;
};

int cmd_eval(const Common& c, const EvalArgs& a) {
    const json cfg = read_config(c.config_path);
    hz::MetricRegistry registry;
    for (const auto& spec : a.metric_cmds) {
        const auto eq = spec.find('=');
        if (eq == std::string::npos || eq == 0) throw hz::ArgumentError("--metric-cmd expects NAME=COMMAND");
        registry.add_external(spec.substr(0, eq), spec.substr(eq + 1));
    }
    std::vector<std::string> names;
    std::stringstream ss(a.metrics);
    for (std::string n; std::getline(ss, n, ',');)
        if (!n.empty()) names.push_back(n);
    std::optional<hz::Checkpoint<Scalar>> ck;
    if (!a.checkpoint.empty()) ck = hz::load_checkpoint<Scalar>(a.checkpoint);
    hz::EvalOptions opt;
    opt.method = !a.method.empty() ? a.method : (ck ? fs::path(a.checkpoint).stem().string() : "input");
    opt.config = {{"config", cfg}, {"checkpoint", a.checkpoint}, {"metrics", names}, {"backend", c.backend}};
    const auto report = hz::evaluate<Scalar>(resolve_data(a.input), names, ck ? ck->model.get() : nullptr, opt, registry);
    if (!a.out.empty()) {
        std::ofstream f(a.out);
        if (!f) throw hz::NotFoundError("cannot write report: " + a.out);
        f << report.to_jsonl();
    }
    std::cout << report.summary_table();
    for (const auto& s : report.skipped) std::cerr << "skipped " << s.file << ": " << s.reason << '\n';
    return 0;
}

struct RegionArgs {
    std::string image;
    std::string out;
    std::string mask_out;
    std::string text;
    std::string role = "sky";
    std::string map_backend = "surgery";
    std::string segmenter_cmd;
};

std::string role_text(const RegionArgs& a, const json& cfg) {
    if (!a.text.empty()) return a.text;
    const auto sets = prompt_sets(cfg);
    switch (hz::parse_role(a.role)) {
        case hz::PromptRole::sky: return mask_options(cfg).sky_text;
        case hz::PromptRole::non_sky: return sets.non_sky.negatives.front();
        case hz::PromptRole::enhance: return sets.enhance.negatives.front();
    }
    return {};
}

int cmd_simmap(const Common& c, const RegionArgs& a) {
    const json cfg = read_config(c.config_path);
    const auto enc = hz::make_encoder<float>(c.backend);
    const auto img = hz::load_image(a.image);
    const auto map = hz::similarity_map(img, enc->encode_text(role_text(a, cfg)), *enc,
                                        hz::parse_map_backend(a.map_backend));
    hz::save_heatmap(map.grid, a.out, -1.0, 1.0);
    if (!a.mask_out.empty()) {
        auto mopt = mask_options(cfg);
        mopt.backend = hz::parse_map_backend(a.map_backend);
        const auto seg = make_segmenter(a.segmenter_cmd, fs::temp_directory_path() / "hazeclip_segmenter");
        hz::save_mask(hz::compute_sky_mask(img, *enc, *seg, mopt), a.mask_out);
    }
    std::cout << "map " << map.grid.height() << "x" << map.grid.width() << " written to " << a.out << '\n';
    return 0;
}

int cmd_mask(const Common& c, const RegionArgs& a) {
    const json cfg = read_config(c.config_path);
    const auto enc = hz::make_encoder<float>(c.backend);
    const auto img = hz::load_image(a.image);
    const auto seg = make_segmenter(a.segmenter_cmd, fs::temp_directory_path() / "hazeclip_segmenter");
    std::vector<std::string> warnings;
    const auto mask = hz::compute_sky_mask(img, *enc, *seg, mask_options(cfg), &warnings);
    hz::save_mask(mask, a.out);
    for (const auto& w : warnings) std::cerr << "warning: " << w << '\n';
    std::cout << "sky coverage " << mask.coverage() << '\n';
    return 0;
}

int cmd_prompts(const Common& c) {
    const auto sets = prompt_sets(read_config(c.config_path));
    std::cout << json{{"sky", hz::to_json(sets.sky)}, {"non_sky", hz::to_json(sets.non_sky)},
                      {"enhance", hz::to_json(sets.enhance)}}
                     .dump(2)
              << '\n';
    return 0;
}

void add_common(CLI::App* app, Common& c) {
    app->add_option("--config", c.config_path, "JSON config file");
    app->add_option("--backend", c.backend, "encoder backend (toy or a registered pretrained backend)");
    app->add_option("--seed", c.seed, "random seed");
}

void add_train(CLI::App* app, TrainArgs& a, bool finetune) {
    app->add_option("--data", a.data, finetune ? "directory of unpaired hazy images" : "directory with hazy/ and clean/");
    app->add_option("--synthetic", a.synthetic, "generate N toy samples instead of reading --data");
    app->add_option("--dump-synthetic", a.dump_synthetic, "write generated toy samples to this directory");
    app->add_option("--out", a.out, "output checkpoint")->required();
    app->add_option("--log", a.log, "line-delimited JSON training log");
    app->add_option("--epochs", a.epochs);
    app->add_option("--batch", a.batch);
    app->add_option("--lr", a.lr, "initial learning rate");
    if (!finetune) return;
    app->add_option("--checkpoint", a.checkpoint, "pretrained checkpoint")->required();
    app->add_option("--masks", a.masks, "sky mask cache directory");
    app->add_option("--segmenter", a.segmenter_cmd, "external promptable segmenter command");
    app->add_option("--lambda1", a.lambda1);
    app->add_option("--lambda2", a.lambda2);
    app->add_option("--region-mode", a.region_mode, "mask-output or mask-input");
    app->add_flag("--no-region-split", a.no_region_split, "single prompt set over the whole image");
    app->add_flag("--no-enhance-set", a.no_enhance_set, "drop the enhancing prompt set");
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Language-guided fine-tuning of dehazing networks", "hazeclip"};
    app.require_subcommand(1);
    Common common;
    TrainArgs pre, fine;
    EvalArgs ev;
    RegionArgs sim, msk;
    std::string dh_ckpt, dh_in, dh_out;

    auto* p = app.add_subcommand("pretrain", "supervised pre-training on hazy/clean pairs");
    add_common(p, common);
    add_train(p, pre, false);

    auto* f = app.add_subcommand("finetune", "language-guided fine-tuning on unpaired hazy images");
    add_common(f, common);
    add_train(f, fine, true);

    auto* d = app.add_subcommand("dehaze", "apply a checkpoint to a directory of images");
    add_common(d, common);
    d->add_option("--checkpoint", dh_ckpt)->required();
    d->add_option("--input", dh_in)->required();
    d->add_option("--output", dh_out)->required();

    auto* e = app.add_subcommand("eval", "score a directory of images");
    add_common(e, common);
    e->add_option("--input", ev.input)->required();
    e->add_option("--metrics", ev.metrics, "comma-separated metric names");
    e->add_option("--checkpoint", ev.checkpoint, "dehaze before scoring");
    e->add_option("--out", ev.out, "line-delimited JSON report");
    e->add_option("--method", ev.method, "method label");
    e->add_option("--metric-cmd", ev.metric_cmds, "NAME=COMMAND external metric");

    auto* s = app.add_subcommand("simmap", "language-image similarity map and sky mask");
    add_common(s, common);
    s->add_option("--image", sim.image)->required();
    s->add_option("--out", sim.out, "heatmap PNG")->required();
    s->add_option("--mask-out", sim.mask_out, "sky mask PNG");
    s->add_option("--text", sim.text, "query text (overrides --role)");
    s->add_option("--role", sim.role, "sky, non_sky or enhance");
    s->add_option("--map-backend", sim.map_backend, "raw or surgery");
    s->add_option("--segmenter", sim.segmenter_cmd);

    auto* m = app.add_subcommand("mask", "compute a sky mask");
    add_common(m, common);
    m->add_option("--image", msk.image)->required();
    m->add_option("--out", msk.out)->required();
    m->add_option("--segmenter", msk.segmenter_cmd);

    auto* pr = app.add_subcommand("prompts", "print the expanded prompt sets");
    add_common(pr, common);
    std::string pr_action = "show";
    pr->add_option("action", pr_action, "show")->check(CLI::IsMember({"show"}));

    if (argc > 1 && argv[1][0] != '-') {
        const std::string sub = argv[1];
        bool known = false;
        for (const auto* sc : app.get_subcommands({})) known = known || sc->get_name() == sub;
        if (!known) {
            std::cerr << "error: usage: unknown subcommand '" << sub << "'\n" << app.help();
            return 2;
        }
    }

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& ex) {
        return app.exit(ex);
    } catch (const CLI::CallForAllHelp& ex) {
        return app.exit(ex);
    } catch (const CLI::ParseError& ex) {
        std::cerr << "error: usage: " << ex.what() << '\n' << app.help();
        return 2;
    }

    try {
        if (*p) return cmd_pretrain(common, pre);
        if (*f) return cmd_finetune(common, fine);
        if (*d) return cmd_dehaze(dh_ckpt, dh_in, dh_out);
        if (*e) return cmd_eval(common, ev);
        if (*s) return cmd_simmap(common, sim);
        if (*m) return cmd_mask(common, msk);
        if (*pr) return cmd_prompts(common);
    } catch (const hz::Error& ex) {
        std::cerr << "error: " << ex.kind() << ": " << ex.what() << '\n';
        return 1;
    } catch (const std::exception& ex) {
        std::cerr << "error: internal: " << ex.what() << '\n';
        return 1;
    }
    return 2;
}
