#pragma once

#include <array>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <iomanip>
#include <map>
#include <memory>
#include <mutex>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "hazeclip/backbone.hpp"
#include "hazeclip/errors.hpp"
#include "hazeclip/image.hpp"
#include "hazeclip/image_io.hpp"
#include "hazeclip/linalg.hpp"
#include "hazeclip/training.hpp"

namespace hazeclip {

inline constexpr int kHazeProxyPatch = 15;

// Mean dark channel (15×15 patches) of the clamped image; lower = less hazy.
template <typename T>
double haze_density_proxy(const Image<T>& image) {
    return static_cast<double>(dark_channel(image.clamped(), kHazeProxyPatch).mean());
}

// RMS contrast: standard deviation of luminance.
template <typename T>
double contrast_statistic(const Image<T>& image) {
    const auto y = luminance_plane(image.clamped());
    const double m = static_cast<double>(y.mean());
    double s = 0;
    for (auto v : y.values()) s += (static_cast<double>(v) - m) * (static_cast<double>(v) - m);
    return std::sqrt(s / static_cast<double>(y.values().size()));
}

// A named image → scalar score. `path` points at the scored pixels on disk
// (the dehazed result when a model is applied).
class Metric {
public:
    virtual ~Metric() = default;
    virtual std::string name() const = 0;
    virtual double score(const ImageF& image, const fs::path& path) const = 0;
    virtual bool needs_file() const { return false; }
};

class FunctionMetric final : public Metric {
public:
    FunctionMetric(std::string name, std::function<double(const ImageF&)> fn)
        : name_(std::move(name)), fn_(std::move(fn)) {}
    std::string name() const override { return name_; }
    double score(const ImageF& image, const fs::path&) const override { return fn_(image); }

private:
    std::string name_;
    std::function<double(const ImageF&)> fn_;
};

// Wraps an external evaluator invoked as `<command> <image-path>` that
// prints a single number on stdout.
class ExternalMetric final : public Metric {
public:
    ExternalMetric(std::string name, std::string command) : name_(std::move(name)), command_(std::move(command)) {}
    std::string name() const override { return name_; }
    bool needs_file() const override { return true; }

    double score(const ImageF&, const fs::path& path) const override {
        const std::string cmd = command_ + " '" + path.string() + "' 2>/dev/null";
        std::unique_ptr<FILE, int (*)(FILE*)> pipe(popen(cmd.c_str(), "r"), pclose);
        if (!pipe) throw BackendError("metric '" + name_ + "': cannot start command");
        std::string out;
        std::array<char, 256> buf{};
        while (std::fgets(buf.data(), static_cast<int>(buf.size()), pipe.get())) out += buf.data();
        const int status = pclose(pipe.release());
        if (status != 0) throw BackendError("metric '" + name_ + "': command exited with status " + std::to_string(status));
        try {
            std::size_t used = 0;
            const double v = std::stod(out, &used);
            if (out.find_first_not_of(" \t\r\n", used) != std::string::npos) throw std::invalid_argument(out);
            return v;
        } catch (const std::exception&) {
            throw FormatError("metric '" + name_ + "': expected a single number on stdout, got \"" + out + "\"");
        }
    }

private:
    std::string name_;
    std::string command_;
};

class MetricRegistry {
public:
    MetricRegistry() {
        add(std::make_shared<FunctionMetric>("haze_proxy", [](const ImageF& i) { return haze_density_proxy(i); }));
        add(std::make_shared<FunctionMetric>("contrast", [](const ImageF& i) { return contrast_statistic(i); }));
    }

    void add(std::shared_ptr<const Metric> m) {
        std::lock_guard lock(mutex_);
        const auto name = m->name();
        if (!metrics_.emplace(name, std::move(m)).second) throw RegistrationError("metric already registered: " + name);
    }

    void add_external(const std::string& name, const std::string& command) {
        add(std::make_shared<ExternalMetric>(name, command));
    }

    std::shared_ptr<const Metric> get(const std::string& name) const {
        std::lock_guard lock(mutex_);
        auto it = metrics_.find(name);
        if (it == metrics_.end()) {
            std::string known;
            for (const auto& [k, _] : metrics_) known += (known.empty() ? "" : ", ") + k;
            throw LookupError("unknown metric '" + name + "' (registered: " + known + ")");
        }
        return it->second;
    }

    std::vector<std::string> names() const {
        std::lock_guard lock(mutex_);
        std::vector<std::string> out;
        for (const auto& [k, _] : metrics_) out.push_back(k);
        return out;
    }

private:
    mutable std::mutex mutex_;
    std::map<std::string, std::shared_ptr<const Metric>> metrics_;
};

struct ImageScore {
    std::string file;
    std::vector<double> scores;  // in MetricReport::metrics order
};

struct SkipRecord {
    std::string file;
    std::string reason;
};

struct MetricReport {
    std::string method;
    std::string config_hash;
    std::vector<std::string> metrics;
    std::vector<ImageScore> images;
    std::vector<SkipRecord> skipped;

    std::vector<double> means() const {
        std::vector<double> m(metrics.size(), 0.0);
        if (images.empty()) return m;
        for (std::size_t k = 0; k < metrics.size(); ++k) {
            double s = 0;
            for (const auto& img : images) s += img.scores[k];
            m[k] = s / static_cast<double>(images.size());
        }
        return m;
    }

    double mean(const std::string& metric) const {
        for (std::size_t k = 0; k < metrics.size(); ++k)
            if (metrics[k] == metric) return means()[k];
        throw LookupError("metric not in report: " + metric);
    }

    // One record per image and per skip, then a summary record.
    std::string to_jsonl() const {
        std::ostringstream os;
        for (const auto& img : images) {
            nlohmann::ordered_json j{{"type", "image"}, {"file", img.file}};
            for (std::size_t k = 0; k < metrics.size(); ++k) j["scores"][metrics[k]] = img.scores[k];
            if (metrics.empty()) j["scores"] = nlohmann::ordered_json::object();
            os << j.dump() << '\n';
        }
        for (const auto& s : skipped)
            os << nlohmann::ordered_json{{"type", "skip"}, {"file", s.file}, {"reason", s.reason}}.dump() << '\n';
        nlohmann::ordered_json summary{{"type", "summary"},
                                       {"method", method},
                                       {"config_hash", config_hash},
                                       {"images", images.size()},
                                       {"skipped", skipped.size()}};
        summary["means"] = nlohmann::ordered_json::object();
        const auto m = means();
        for (std::size_t k = 0; k < metrics.size(); ++k) summary["means"][metrics[k]] = m[k];
        os << summary.dump() << '\n';
        return os.str();
    }

    std::string summary_table() const {
        std::ostringstream os;
        os << std::left << std::setw(24) << "method";
        for (const auto& m : metrics) os << std::right << std::setw(14) << m;
        os << std::right << std::setw(8) << "n" << '\n';
        os << std::left << std::setw(24) << method;
        os << std::fixed << std::setprecision(6);
        for (double v : means()) os << std::right << std::setw(14) << v;
        os << std::right << std::setw(8) << images.size() << '\n';
        return os.str();
    }
};

struct EvalOptions {
    std::string method = "input";
    nlohmann::json config = nlohmann::json::object();
    int workers = 0;
    fs::path scratch_dir;  // dehazed images for external metrics; temp dir when empty
};

inline std::string config_hash(const nlohmann::json& config) {
    return MaskCache::hex(linalg::fnv1a(config.dump()));
}

// Scores every decodable image in `corpus_dir` (filename order), after
// dehazing with `model` when given. Unreadable images and per-image metric
// failures are recorded as skips.
template <typename T = float>
MetricReport evaluate(const fs::path& corpus_dir, const std::vector<std::string>& metric_names,
                      const DehazeModel<T>* model = nullptr, const EvalOptions& opt = {},
                      const MetricRegistry& registry = MetricRegistry{}) {
    if (!fs::is_directory(corpus_dir)) throw NotFoundError("corpus directory not found: " + corpus_dir.string());
    std::vector<std::shared_ptr<const Metric>> metrics;
    bool needs_file = false;
    for (const auto& n : metric_names) {
        metrics.push_back(registry.get(n));
        needs_file = needs_file || metrics.back()->needs_file();
    }
    fs::path scratch = opt.scratch_dir;
    if (model && needs_file && scratch.empty())
        scratch = fs::temp_directory_path() / ("hazeclip_eval_" + MaskCache::hex(linalg::fnv1a(corpus_dir.string())));
    if (!scratch.empty()) fs::create_directories(scratch);

    MetricReport report;
    report.method = opt.method;
    report.metrics = metric_names;
    report.config_hash = config_hash(opt.config);

    const auto files = list_images(corpus_dir);
    struct Result {
        std::optional<ImageScore> score;
        std::optional<SkipRecord> skip;
    };
    TrainConfig wc;
    wc.workers = opt.workers;
    auto results = detail::parallel_map<Result>(files.size(), detail::worker_count(wc), [&](std::size_t i) {
        const auto& path = files[i];
        const std::string name = path.filename().string();
        try {
            ImageF img = load_image(path);
            fs::path scored = path;
            if (model) {
                img = model->infer(img.template cast<T>()).template cast<float>();
                if (needs_file) {
                    scored = scratch / (path.stem().string() + ".png");
                    save_image(img, scored, BitDepth::k16);
                }
            }
            ImageScore s{name, {}};
            for (const auto& m : metrics) s.scores.push_back(m->score(img, scored));
            return Result{s, std::nullopt};
        } catch (const std::exception& e) {
            return Result{std::nullopt, SkipRecord{name, e.what()}};
        }
    });
    for (auto& r : results) {
        if (r.score) report.images.push_back(std::move(*r.score));
        if (r.skip) report.skipped.push_back(std::move(*r.skip));
    }
    return report;
}

}  // namespace hazeclip
