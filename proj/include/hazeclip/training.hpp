#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <future>
#include <memory>
#include <numbers>
#include <numeric>
#include <optional>
#include <random>
#include <span>
#include <thread>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "hazeclip/backbone.hpp"
#include "hazeclip/checkpoint.hpp"
#include "hazeclip/encoder.hpp"
#include "hazeclip/image.hpp"
#include "hazeclip/losses.hpp"
#include "hazeclip/prompts.hpp"
#include "hazeclip/regions.hpp"

namespace hazeclip {

enum class TrainStage { pretrain, finetune };
enum class OptimizerKind { lion, adamw };

inline std::string to_string(TrainStage s) { return s == TrainStage::pretrain ? "pretrain" : "finetune"; }
inline std::string to_string(OptimizerKind o) { return o == OptimizerKind::lion ? "lion" : "adamw"; }

inline OptimizerKind parse_optimizer(std::string_view s) {
    if (s == "lion") return OptimizerKind::lion;
    if (s == "adamw" || s == "adam") return OptimizerKind::adamw;
    throw ArgumentError("unknown optimizer: " + std::string(s));
}

struct TrainConfig {
    TrainStage stage = TrainStage::pretrain;
    OptimizerKind optimizer = OptimizerKind::lion;
    double lr0 = 3e-5;
    double eta_min = 0.0;
    long long t_max = 0;  // 0: total number of optimizer steps in the run
    int epochs = 200;
    int batch = 8;
    double beta1 = 0.9;
    double beta2 = 0.99;
    double weight_decay = 0.0;
    int crop = 256;
    unsigned long long seed = 0;
    int workers = 0;  // 0: hardware concurrency
    LossOptions loss;
    std::string backbone = "tiny";
    nlohmann::json backbone_params = TinyBackboneConfig{}.to_json();
    int checkpoint_every = 0;
    std::filesystem::path checkpoint_dir;
    std::filesystem::path log_path;

    static TrainConfig pretrain_defaults() { return {}; }

    static TrainConfig finetune_defaults() {
        TrainConfig c;
        c.stage = TrainStage::finetune;
        c.epochs = 15;
        return c;
    }

    void validate() const {
        if (!(lr0 > 0)) throw ArgumentError("lr0 must be positive");
        if (!(eta_min >= 0) || eta_min > lr0) throw ArgumentError("eta_min must lie in [0, lr0]");
        if (epochs < 0) throw ArgumentError("epochs must be nonnegative");
        if (batch < 1) throw ArgumentError("batch must be >= 1");
        if (crop < 16) throw ArgumentError("crop must be >= 16");
        if (t_max < 0) throw ArgumentError("t_max must be nonnegative");
        loss.weights.validate();
    }

    nlohmann::json to_json() const {
        return {{"stage", to_string(stage)},
                {"optimizer", to_string(optimizer)},
                {"lr0", lr0},
                {"eta_min", eta_min},
                {"t_max", t_max},
                {"epochs", epochs},
                {"batch", batch},
                {"beta1", beta1},
                {"beta2", beta2},
                {"weight_decay", weight_decay},
                {"crop", crop},
                {"seed", seed},
                {"lambda1", loss.weights.lambda1},
                {"lambda2", loss.weights.lambda2},
                {"alpha", loss.weights.alpha},
                {"region_mode", loss.region_mode == RegionMode::mask_output ? "mask-output" : "mask-input"},
                {"region_split", loss.region_split},
                {"enhance_set", loss.enhance_set},
                {"temperature", loss.temperature},
                {"orientation", loss.orientation == LossOrientation::literal ? "literal" : "neg-log-positive"},
                {"backbone", backbone},
                {"backbone_params", backbone_params}};
    }

    // Overlays keys present in `j` onto `base`.
    static TrainConfig from_json(const nlohmann::json& j, TrainConfig base) {
        TrainConfig c = std::move(base);
        if (j.contains("stage")) c.stage = j.at("stage") == "finetune" ? TrainStage::finetune : TrainStage::pretrain;
        if (j.contains("optimizer")) c.optimizer = parse_optimizer(j.at("optimizer").get<std::string>());
        c.lr0 = j.value("lr0", c.lr0);
        c.eta_min = j.value("eta_min", c.eta_min);
        c.t_max = j.value("t_max", c.t_max);
        c.epochs = j.value("epochs", c.epochs);
        c.batch = j.value("batch", c.batch);
        c.beta1 = j.value("beta1", c.beta1);
        c.beta2 = j.value("beta2", c.beta2);
        c.weight_decay = j.value("weight_decay", c.weight_decay);
        c.crop = j.value("crop", c.crop);
        c.seed = j.value("seed", c.seed);
        c.workers = j.value("workers", c.workers);
        c.loss.weights.lambda1 = j.value("lambda1", c.loss.weights.lambda1);
        c.loss.weights.lambda2 = j.value("lambda2", c.loss.weights.lambda2);
        if (j.contains("alpha")) {
            const auto a = j.at("alpha").get<std::vector<double>>();
            if (a.size() != c.loss.weights.alpha.size())
                throw ArgumentError("alpha must list " + std::to_string(kLayerCount) + " layer weights");
            std::copy(a.begin(), a.end(), c.loss.weights.alpha.begin());
        }
        if (j.contains("region_mode")) c.loss.region_mode = parse_region_mode(j.at("region_mode").get<std::string>());
        c.loss.region_split = j.value("region_split", c.loss.region_split);
        c.loss.enhance_set = j.value("enhance_set", c.loss.enhance_set);
        c.loss.temperature = j.value("temperature", c.loss.temperature);
        if (j.contains("orientation")) c.loss.orientation = parse_orientation(j.at("orientation").get<std::string>());
        c.backbone = j.value("backbone", c.backbone);
        if (j.contains("backbone_params")) c.backbone_params = j.at("backbone_params");
        c.checkpoint_every = j.value("checkpoint_every", c.checkpoint_every);
        if (j.contains("checkpoint_dir")) c.checkpoint_dir = j.at("checkpoint_dir").get<std::string>();
        if (j.contains("log_path")) c.log_path = j.at("log_path").get<std::string>();
        return c;
    }
};

// Cosine annealing: eta_min + ½(lr0 − eta_min)(1 + cos(π·step/T_max)).
inline double lr_at(long long step, double lr0, double eta_min, long long t_max) {
    if (t_max < 0 || step < 0 || step > t_max)
        throw ArgumentError("lr_at: step " + std::to_string(step) + " outside [0, " + std::to_string(t_max) + "]");
    if (t_max == 0) return lr0;
    return eta_min +
           0.5 * (lr0 - eta_min) * (1.0 + std::cos(std::numbers::pi * static_cast<double>(step) / static_cast<double>(t_max)));
}

inline double lr_at(long long step, const TrainConfig& cfg) { return lr_at(step, cfg.lr0, cfg.eta_min, cfg.t_max); }

template <typename T>
class Optimizer {
public:
    virtual ~Optimizer() = default;
    virtual void step(std::span<T> params, std::span<const T> grads, double lr) = 0;
};

// Lion: p ← p − lr·(sign(β₁m + (1−β₁)g) + wd·p);  m ← β₂m + (1−β₂)g.
template <typename T>
class Lion final : public Optimizer<T> {
public:
    Lion(std::size_t n, double beta1 = 0.9, double beta2 = 0.99, double weight_decay = 0.0)
        : m_(n, T(0)), b1_(beta1), b2_(beta2), wd_(weight_decay) {}

    void step(std::span<T> params, std::span<const T> grads, double lr) override {
        if (params.size() != m_.size() || grads.size() != m_.size()) throw DimensionError("lion: size mismatch");
        const T b1 = static_cast<T>(b1_), b2 = static_cast<T>(b2_), wd = static_cast<T>(wd_), a = static_cast<T>(lr);
        for (std::size_t i = 0; i < m_.size(); ++i) {
            const T c = b1 * m_[i] + (T(1) - b1) * grads[i];
            const T s = c > T(0) ? T(1) : (c < T(0) ? T(-1) : T(0));
            params[i] -= a * (s + wd * params[i]);
            m_[i] = b2 * m_[i] + (T(1) - b2) * grads[i];
        }
    }

private:
    std::vector<T> m_;
    double b1_, b2_, wd_;
};

template <typename T>
class AdamW final : public Optimizer<T> {
public:
    AdamW(std::size_t n, double beta1 = 0.9, double beta2 = 0.999, double weight_decay = 0.0, double eps = 1e-8)
        : m_(n, T(0)), v_(n, T(0)), b1_(beta1), b2_(beta2), wd_(weight_decay), eps_(eps) {}

    void step(std::span<T> params, std::span<const T> grads, double lr) override {
        if (params.size() != m_.size() || grads.size() != m_.size()) throw DimensionError("adamw: size mismatch");
        ++t_;
        const double c1 = 1.0 - std::pow(b1_, static_cast<double>(t_));
        const double c2 = 1.0 - std::pow(b2_, static_cast<double>(t_));
        for (std::size_t i = 0; i < m_.size(); ++i) {
            m_[i] = static_cast<T>(b1_) * m_[i] + static_cast<T>(1 - b1_) * grads[i];
            v_[i] = static_cast<T>(b2_) * v_[i] + static_cast<T>(1 - b2_) * grads[i] * grads[i];
            const double upd = (m_[i] / c1) / (std::sqrt(v_[i] / c2) + eps_) + wd_ * params[i];
            params[i] -= static_cast<T>(lr * upd);
        }
    }

private:
    std::vector<T> m_, v_;
    double b1_, b2_, wd_, eps_;
    long long t_ = 0;
};

template <typename T>
std::unique_ptr<Optimizer<T>> make_optimizer(const TrainConfig& cfg, std::size_t n) {
    if (cfg.optimizer == OptimizerKind::lion) return std::make_unique<Lion<T>>(n, cfg.beta1, cfg.beta2, cfg.weight_decay);
    return std::make_unique<AdamW<T>>(n, cfg.beta1, 0.999, cfg.weight_decay);
}

struct StepRecord {
    int epoch = 0;
    long long step = 0;
    double lr = 0;
    double loss = 0;                       // pretrain: L1; finetune: total
    std::optional<LossBreakdown> breakdown;  // finetune only

    nlohmann::json to_json() const {
        nlohmann::json j{{"epoch", epoch}, {"step", step}, {"lr", lr}, {"loss", loss}};
        if (breakdown) j["breakdown"] = breakdown->to_json();
        return j;
    }
};

struct EpochRecord {
    int epoch = 0;
    double mean_loss = 0;
    std::optional<LossBreakdown> mean_breakdown;
    double seconds = 0;

    nlohmann::json to_json(bool with_timing = true) const {
        nlohmann::json j{{"epoch", epoch}, {"mean_loss", mean_loss}};
        if (mean_breakdown) j["mean_breakdown"] = mean_breakdown->to_json();
        if (with_timing) j["seconds"] = seconds;
        return j;
    }
};

// Counters over the data pipeline; identical across loss-term ablations.
struct PipelineCounters {
    std::size_t samples_loaded = 0;
    std::size_t mask_lookups = 0;
    std::size_t crops = 0;

    bool operator==(const PipelineCounters&) const = default;
    nlohmann::json to_json() const {
        return {{"samples_loaded", samples_loaded}, {"mask_lookups", mask_lookups}, {"crops", crops}};
    }
};

struct TrainRecord {
    TrainStage stage = TrainStage::pretrain;
    std::vector<StepRecord> steps;
    std::vector<EpochRecord> epochs;
    PipelineCounters counters;
    double seconds = 0;
    std::vector<std::string> checkpoints;
    std::uint64_t encoder_checksum_before = 0;
    std::uint64_t encoder_checksum_after = 0;

    // Everything except wall-clock timings.
    nlohmann::json deterministic_json() const {
        nlohmann::json j{{"stage", to_string(stage)}, {"counters", counters.to_json()}};
        j["steps"] = nlohmann::json::array();
        for (const auto& s : steps) j["steps"].push_back(s.to_json());
        j["epochs"] = nlohmann::json::array();
        for (const auto& e : epochs) j["epochs"].push_back(e.to_json(false));
        j["checkpoints"] = checkpoints;
        j["encoder_checksum_before"] = encoder_checksum_before;
        j["encoder_checksum_after"] = encoder_checksum_after;
        return j;
    }
};

struct TrainHooks {
    std::function<void(const StepRecord&)> on_step;
    std::function<void(const EpochRecord&)> on_epoch;
};

template <typename T>
struct TrainResult {
    Checkpoint<T> checkpoint;
    TrainRecord record;
};

namespace detail {

inline long long steps_per_epoch(std::size_t n, int batch) {
    return static_cast<long long>((n + static_cast<std::size_t>(batch) - 1) / static_cast<std::size_t>(batch));
}

inline TrainConfig resolve_schedule(TrainConfig cfg, std::size_t n) {
    if (cfg.t_max == 0) cfg.t_max = steps_per_epoch(n, cfg.batch) * cfg.epochs;
    return cfg;
}

inline std::size_t worker_count(const TrainConfig& cfg) {
    if (cfg.workers > 0) return static_cast<std::size_t>(cfg.workers);
    return std::max(1u, std::thread::hardware_concurrency());
}

// Runs fn(i) for i in [0, n), at most `workers` at a time. Results are
// stored by index, so reductions over them are order-deterministic.
template <typename R, typename Fn>
std::vector<R> parallel_map(std::size_t n, std::size_t workers, Fn fn) {
    std::vector<R> out(n);
    if (workers <= 1 || n <= 1) {
        for (std::size_t i = 0; i < n; ++i) out[i] = fn(i);
        return out;
    }
    for (std::size_t start = 0; start < n; start += workers) {
        const std::size_t end = std::min(n, start + workers);
        std::vector<std::future<R>> fut;
        for (std::size_t i = start; i < end; ++i) fut.push_back(std::async(std::launch::async, fn, i));
        for (std::size_t i = start; i < end; ++i) out[i] = fut[i - start].get();
    }
    return out;
}

class JsonlLog {
public:
    explicit JsonlLog(const std::filesystem::path& path) {
        if (path.empty()) return;
        if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
        out_.open(path, std::ios::trunc);
        if (!out_) throw NotFoundError("cannot open training log: " + path.string());
    }
    void write(const nlohmann::json& j) {
        if (out_.is_open()) out_ << j.dump() << '\n' << std::flush;
    }

private:
    std::ofstream out_;
};

inline void accumulate(LossBreakdown& acc, const LossBreakdown& b, double scale) {
    acc.total += scale * b.total;
    acc.guidance += scale * b.guidance;
    acc.fidelity += scale * b.fidelity;
    acc.sky += scale * b.sky;
    acc.non_sky += scale * b.non_sky;
    acc.enhance += scale * b.enhance;
    acc.sky_applied = acc.sky_applied || b.sky_applied;
    acc.non_sky_applied = acc.non_sky_applied || b.non_sky_applied;
    acc.enhance_applied = acc.enhance_applied || b.enhance_applied;
}

template <typename T>
void maybe_save(const TrainConfig& cfg, const DehazeModel<T>& model, Stage stage, const nlohmann::json& encoder_meta,
                int epoch, TrainRecord& rec) {
    if (cfg.checkpoint_every <= 0 || cfg.checkpoint_dir.empty() || epoch % cfg.checkpoint_every != 0) return;
    const auto path = cfg.checkpoint_dir / (to_string(cfg.stage) + "_epoch" + std::to_string(epoch) + ".hzck");
    save_checkpoint(Checkpoint<T>(model.clone(), stage, cfg.to_json(), encoder_meta), path);
    rec.checkpoints.push_back(path.string());
}

}  // namespace detail

// Mean absolute error; `grad` (if given) receives d/dOutput.
template <typename T>
T l1_loss(const Image<T>& output, const Image<T>& target, Image<T>* grad = nullptr) {
    if (!output.same_shape(target)) throw DimensionError("l1_loss: shapes differ");
    const auto o = output.values();
    const auto t = target.values();
    const T inv = T(1) / static_cast<T>(o.size());
    T sum = 0;
    if (grad) *grad = Image<T>(output.height(), output.width());
    for (std::size_t i = 0; i < o.size(); ++i) {
        const T d = o[i] - t[i];
        sum += std::abs(d);
        if (grad) grad->values()[i] = (d > T(0) ? T(1) : (d < T(0) ? T(-1) : T(0))) * inv;
    }
    return sum * inv;
}

struct PairSample {
    ImageF hazy;
    ImageF clean;
};

// Supervised L1 training on aligned (hazy, clean) pairs. `init` overrides
// the backbone built from the config.
template <typename T>
TrainResult<T> pretrain(const TrainConfig& config, const std::vector<PairSample>& pairs,
                        const DehazeModel<T>* init = nullptr, const TrainHooks& hooks = {}) {
    if (pairs.empty()) throw ArgumentError("pretrain: dataset is empty");
    for (const auto& p : pairs)
        if (!p.hazy.same_shape(p.clean)) throw DimensionError("pretrain: hazy/clean pair shapes differ");
    const TrainConfig cfg = detail::resolve_schedule(config, pairs.size());
    cfg.validate();

    const auto t0 = std::chrono::steady_clock::now();
    auto model = init ? init->clone() : BackboneRegistry<T>::global().create(cfg.backbone, cfg.backbone_params);
    auto opt = make_optimizer<T>(cfg, model->parameter_count());
    std::mt19937_64 rng(cfg.seed);
    detail::JsonlLog log(cfg.log_path);
    const std::size_t workers = detail::worker_count(cfg);

    std::vector<Image<T>> hazy, clean;
    for (const auto& p : pairs) {
        hazy.push_back(p.hazy.template cast<T>());
        clean.push_back(p.clean.template cast<T>());
    }

    TrainRecord rec;
    rec.stage = TrainStage::pretrain;
    std::vector<std::size_t> order(pairs.size());
    long long step = 0;
    for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
        const auto e0 = std::chrono::steady_clock::now();
        std::iota(order.begin(), order.end(), std::size_t{0});
        std::shuffle(order.begin(), order.end(), rng);
        double epoch_sum = 0;
        for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(cfg.batch)) {
            const std::size_t n = std::min(order.size() - start, static_cast<std::size_t>(cfg.batch));
            struct Out {
                T loss{};
                std::vector<T> grad;
            };
            auto outs = detail::parallel_map<Out>(n, workers, [&](std::size_t k) {
                const std::size_t i = order[start + k];
                Out o;
                o.grad.assign(model->parameter_count(), T(0));
                std::unique_ptr<typename DehazeModel<T>::Trace> tr;
                const auto y = model->forward(hazy[i], &tr);
                Image<T> g;
                o.loss = l1_loss(y, clean[i], &g);
                model->backward(*tr, g, o.grad);
                return o;
            });
            rec.counters.samples_loaded += n;
            std::vector<T> grad(model->parameter_count(), T(0));
            double loss = 0;
            for (const auto& o : outs) {
                loss += static_cast<double>(o.loss) / static_cast<double>(n);
                for (std::size_t i = 0; i < grad.size(); ++i) grad[i] += o.grad[i] / static_cast<T>(n);
            }
            const double lr = lr_at(step, cfg);
            opt->step(model->parameters(), grad, lr);
            StepRecord sr{epoch, step, lr, loss, std::nullopt};
            log.write(sr.to_json());
            if (hooks.on_step) hooks.on_step(sr);
            rec.steps.push_back(std::move(sr));
            epoch_sum += loss * static_cast<double>(n);
            ++step;
        }
        EpochRecord er{epoch, epoch_sum / static_cast<double>(order.size()), std::nullopt,
                       std::chrono::duration<double>(std::chrono::steady_clock::now() - e0).count()};
        log.write({{"epoch_summary", er.to_json()}});
        if (hooks.on_epoch) hooks.on_epoch(er);
        rec.epochs.push_back(er);
        detail::maybe_save(cfg, *model, Stage::pretrained, {}, epoch, rec);
    }
    rec.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    return {Checkpoint<T>(std::move(model), Stage::pretrained, cfg.to_json()), std::move(rec)};
}

// Source of per-image sky masks; typically a MaskCache lookup.
using MaskProvider = std::function<RegionMask(const ImageF&)>;

inline MaskProvider mask_provider(MaskCache& cache) {
    return [&cache](const ImageF& img) { return cache.get(img); };
}

// Language-guided fine-tuning on unpaired images. The encoder is frozen;
// its weight checksum is verified after training.
template <typename T>
TrainResult<T> finetune(const TrainConfig& config, const std::vector<ImageF>& images, const Checkpoint<T>& start,
                        const VisionLanguageEncoder<T>& encoder, const PromptSets& prompt_sets,
                        const MaskProvider& masks, const TrainHooks& hooks = {}) {
    if (!start.model) throw ArgumentError("finetune: checkpoint has no model");
    if (start.stage != Stage::pretrained)
        throw StageError("finetune expects a pretrained checkpoint, got stage '" + stage_name(start.stage) + "'");
    if (images.empty()) throw ArgumentError("finetune: corpus is empty");
    const TrainConfig cfg = detail::resolve_schedule(config, images.size());
    cfg.validate();

    const auto t0 = std::chrono::steady_clock::now();
    TrainRecord rec;
    rec.stage = TrainStage::finetune;
    rec.encoder_checksum_before = encoder.weights_checksum();

    const auto sets = ensemble_all(prompt_sets, encoder);
    auto model = start.model->clone();
    auto opt = make_optimizer<T>(cfg, model->parameter_count());
    std::mt19937_64 rng(cfg.seed);
    detail::JsonlLog log(cfg.log_path);
    const std::size_t workers = detail::worker_count(cfg);

    // Masks are fixed per image: look each up once, before optimisation.
    std::vector<RegionMask> sky;
    sky.reserve(images.size());
    for (const auto& img : images) {
        if (img.height() < 16 || img.width() < 16) throw DimensionError("finetune: images must be at least 16x16");
        sky.push_back(masks(img));
        ++rec.counters.mask_lookups;
        if (!sky.back().matches(img)) throw DimensionError("finetune: sky mask does not match its image");
    }

    std::vector<std::size_t> order(images.size());
    long long step = 0;
    for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
        const auto e0 = std::chrono::steady_clock::now();
        std::iota(order.begin(), order.end(), std::size_t{0});
        std::shuffle(order.begin(), order.end(), rng);
        LossBreakdown epoch_acc;
        for (std::size_t start_i = 0; start_i < order.size(); start_i += static_cast<std::size_t>(cfg.batch)) {
            const std::size_t n = std::min(order.size() - start_i, static_cast<std::size_t>(cfg.batch));
            // Crop offsets are drawn sequentially so the stream is independent of threading.
            struct Job {
                std::size_t index;
                int r0, c0, h, w;
            };
            std::vector<Job> jobs;
            for (std::size_t k = 0; k < n; ++k) {
                const std::size_t i = order[start_i + k];
                const int h = std::min(cfg.crop, images[i].height()), w = std::min(cfg.crop, images[i].width());
                int r0 = 0, c0 = 0;
                if (h < images[i].height() || w < images[i].width()) {
                    r0 = std::uniform_int_distribution<int>(0, images[i].height() - h)(rng);
                    c0 = std::uniform_int_distribution<int>(0, images[i].width() - w)(rng);
                    ++rec.counters.crops;
                }
                jobs.push_back({i, r0, c0, h, w});
            }
            struct Out {
                LossBreakdown b;
                std::vector<T> grad;
            };
            auto outs = detail::parallel_map<Out>(n, workers, [&](std::size_t k) {
                const auto& j = jobs[k];
                const bool cropped = j.h != images[j.index].height() || j.w != images[j.index].width();
                const Image<T> img = (cropped ? images[j.index].crop(j.r0, j.c0, j.h, j.w) : images[j.index])
                                         .template cast<T>();
                const RegionMask m = cropped ? sky[j.index].crop(j.r0, j.c0, j.h, j.w) : sky[j.index];
                Out o;
                o.grad.assign(model->parameter_count(), T(0));
                o.b = total_loss<T>(img, m, *model, encoder, sets, cfg.loss, o.grad);
                return o;
            });
            rec.counters.samples_loaded += n;
            std::vector<T> grad(model->parameter_count(), T(0));
            LossBreakdown mean;
            for (const auto& o : outs) {
                detail::accumulate(mean, o.b, 1.0 / static_cast<double>(n));
                for (std::size_t i = 0; i < grad.size(); ++i) grad[i] += o.grad[i] / static_cast<T>(n);
            }
            const double lr = lr_at(step, cfg);
            opt->step(model->parameters(), grad, lr);
            StepRecord sr{epoch, step, lr, mean.total, mean};
            log.write(sr.to_json());
            if (hooks.on_step) hooks.on_step(sr);
            rec.steps.push_back(std::move(sr));
            detail::accumulate(epoch_acc, mean, static_cast<double>(n) / static_cast<double>(order.size()));
            ++step;
        }
        EpochRecord er{epoch, epoch_acc.total, epoch_acc,
                       std::chrono::duration<double>(std::chrono::steady_clock::now() - e0).count()};
        log.write({{"epoch_summary", er.to_json()}});
        if (hooks.on_epoch) hooks.on_epoch(er);
        rec.epochs.push_back(er);
        detail::maybe_save(cfg, *model, Stage::finetuned, encoder.metadata(), epoch, rec);
    }

    rec.encoder_checksum_after = encoder.weights_checksum();
    if (rec.encoder_checksum_after != rec.encoder_checksum_before)
        throw ContractError("finetune: encoder weights changed during fine-tuning");
    rec.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    nlohmann::json snapshot = cfg.to_json();
    snapshot["pretrain"] = start.config;
    return {Checkpoint<T>(std::move(model), Stage::finetuned, std::move(snapshot), encoder.metadata()), std::move(rec)};
}

}  // namespace hazeclip
