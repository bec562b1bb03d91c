#pragma once

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <deque>
#include <filesystem>
#include <fstream>
#include <limits>
#include <map>
#include <functional>
#include <memory>
#include <mutex>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include "hazeclip/encoder.hpp"
#include "hazeclip/image.hpp"
#include "hazeclip/image_io.hpp"

namespace hazeclip {

enum class MapBackend { raw, surgery };

inline MapBackend parse_map_backend(std::string_view s) {
    if (s == "raw") return MapBackend::raw;
    if (s == "surgery") return MapBackend::surgery;
    throw ArgumentError("unknown similarity-map backend: " + std::string(s));
}

// Per-patch cosine similarities (values in [-1, 1]).
template <typename T>
struct SimilarityMap {
    Plane<T> grid;
    int patch_size = 0;
    int stride = 0;
};

struct PixelPoint {
    int row = 0;
    int col = 0;
    bool operator==(const PixelPoint&) const = default;
};

struct PointPrompt {
    std::vector<PixelPoint> points;
    std::vector<double> scores;  // descending
    bool empty() const noexcept { return points.empty(); }
};

// Generic captions whose mean embedding is removed from the target text in
// the surgery backend.
inline const std::vector<std::string>& neutral_text_bank() {
    static const std::vector<std::string> bank{"a photo.", "a picture.", "an image.", "a photograph.",
                                               "a photo of a thing.", "a picture of an object."};
    return bank;
}

inline constexpr double kSurgeryAttentionTemperature = 0.1;

namespace detail {

// Value-value self-attention over patch features, renormalised per patch.
template <typename T>
PatchFeatures<T> value_value_attention(const PatchFeatures<T>& pf, T temperature) {
    const int n = pf.grid_h * pf.grid_w;
    PatchFeatures<T> out = pf;
    std::vector<T> logits(n);
    for (int i = 0; i < n; ++i) {
        const auto fi = pf.at(i / pf.grid_w, i % pf.grid_w);
        T mx = -std::numeric_limits<T>::infinity();
        for (int j = 0; j < n; ++j) {
            logits[j] = linalg::dot<T>(fi, pf.at(j / pf.grid_w, j % pf.grid_w)) / temperature;
            mx = std::max(mx, logits[j]);
        }
        T z = 0;
        for (T& l : logits) z += (l = std::exp(l - mx));
        auto dst = out.at(i / pf.grid_w, i % pf.grid_w);
        std::fill(dst.begin(), dst.end(), T(0));
        for (int j = 0; j < n; ++j) {
            const auto fj = pf.at(j / pf.grid_w, j % pf.grid_w);
            for (int k = 0; k < pf.dim; ++k) dst[k] += logits[j] / z * fj[k];
        }
        const T nn = linalg::norm<T>(dst);
        if (nn > T(0))
            for (T& v : dst) v /= nn;
    }
    return out;
}

}  // namespace detail

template <typename T>
SimilarityMap<T> similarity_map(const Image<T>& image, const Embedding<T>& text_emb,
                                const VisionLanguageEncoder<T>& encoder, MapBackend backend = MapBackend::raw) {
    PatchFeatures<T> pf = encoder.patch_token_features(image);
    if (static_cast<std::size_t>(pf.dim) != text_emb.dim())
        throw DimensionError("similarity_map: text embedding dimension mismatch");
    std::vector<T> text = text_emb.values;
    if (backend == MapBackend::surgery) {
        pf = detail::value_value_attention(pf, static_cast<T>(kSurgeryAttentionTemperature));
        std::vector<T> mean(text.size(), T(0));
        const auto& bank = neutral_text_bank();
        for (const auto& s : bank) {
            const auto e = encoder.encode_text(s);
            for (std::size_t i = 0; i < mean.size(); ++i) mean[i] += e.values[i] / static_cast<T>(bank.size());
        }
        std::vector<T> shifted(text.size());
        for (std::size_t i = 0; i < text.size(); ++i) shifted[i] = text[i] - mean[i];
        if (linalg::norm<T>(shifted) > T(1e-6)) text = linalg::normalized<T>(shifted);
    }
    const T tn = linalg::norm<T>(text);
    SimilarityMap<T> map{Plane<T>(pf.grid_h, pf.grid_w), pf.patch_size, pf.stride};
    for (int r = 0; r < pf.grid_h; ++r)
        for (int c = 0; c < pf.grid_w; ++c) {
            const auto f = pf.at(r, c);
            const T cosv = linalg::dot<T>(f, text) / (linalg::norm<T>(f) * tn);
            map.grid(r, c) = std::clamp(cosv, T(-1), T(1));
        }
    return map;
}

// Linear-interpolated percentile (numpy "linear" convention), p in [0, 100].
inline double percentile(std::vector<double> values, double p) {
    if (values.empty()) throw ArgumentError("percentile of an empty set");
    std::sort(values.begin(), values.end());
    const double pos = p / 100.0 * static_cast<double>(values.size() - 1);
    const auto lo = static_cast<std::size_t>(std::floor(pos));
    const auto hi = std::min(lo + 1, values.size() - 1);
    return values[lo] + (pos - static_cast<double>(lo)) * (values[hi] - values[lo]);
}

// Up to k patch centres scoring strictly above the given percentile of the
// map, highest first. An empty result means "no sky".
template <typename T>
PointPrompt select_sky_points(const SimilarityMap<T>& map, int k = 3, double pct = 95.0) {
    if (k < 1) throw ArgumentError("select_sky_points: k must be >= 1");
    if (!(pct > 0.0 && pct < 100.0)) throw ArgumentError("select_sky_points: percentile must be in (0, 100)");
    PointPrompt out;
    if (map.grid.size() == 0) return out;
    std::vector<double> vals(map.grid.values().begin(), map.grid.values().end());
    const double thr = percentile(vals, pct);
    std::vector<std::size_t> idx;
    for (std::size_t i = 0; i < vals.size(); ++i)
        if (vals[i] > thr) idx.push_back(i);
    std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return vals[a] > vals[b]; });
    if (idx.size() > static_cast<std::size_t>(k)) idx.resize(static_cast<std::size_t>(k));
    const int w = map.grid.width();
    for (auto i : idx) {
        const int gr = static_cast<int>(i) / w, gc = static_cast<int>(i) % w;
        out.points.push_back({gr * map.stride + map.patch_size / 2, gc * map.stride + map.patch_size / 2});
        out.scores.push_back(vals[i]);
    }
    return out;
}

// ---------------------------------------------------------------------------
// Mask morphology

namespace detail {

inline RegionMask dilate3(const RegionMask& m) {
    RegionMask out(m.height(), m.width());
    for (int r = 0; r < m.height(); ++r)
        for (int c = 0; c < m.width(); ++c) {
            bool v = false;
            for (int dr = -1; dr <= 1 && !v; ++dr)
                for (int dc = -1; dc <= 1 && !v; ++dc) {
                    const int rr = r + dr, cc = c + dc;
                    if (rr >= 0 && rr < m.height() && cc >= 0 && cc < m.width()) v = m(rr, cc);
                }
            out.set(r, c, v);
        }
    return out;
}

// Out-of-bounds neighbours do not erode.
inline RegionMask erode3(const RegionMask& m) {
    RegionMask out(m.height(), m.width());
    for (int r = 0; r < m.height(); ++r)
        for (int c = 0; c < m.width(); ++c) {
            bool v = true;
            for (int dr = -1; dr <= 1 && v; ++dr)
                for (int dc = -1; dc <= 1 && v; ++dc) {
                    const int rr = r + dr, cc = c + dc;
                    if (rr >= 0 && rr < m.height() && cc >= 0 && cc < m.width()) v = m(rr, cc);
                }
            out.set(r, c, v);
        }
    return out;
}

// 4-connected flood fill over pixels where `allowed` equals `value`,
// starting from the given seeds.
inline RegionMask flood(const RegionMask& allowed, bool value, const std::vector<PixelPoint>& seeds) {
    RegionMask reached(allowed.height(), allowed.width());
    std::deque<PixelPoint> queue;
    for (const auto& s : seeds) {
        if (s.row < 0 || s.row >= allowed.height() || s.col < 0 || s.col >= allowed.width()) continue;
        if (allowed(s.row, s.col) != value || reached(s.row, s.col)) continue;
        reached.set(s.row, s.col, true);
        queue.push_back(s);
    }
    constexpr int dr[4] = {-1, 1, 0, 0}, dc[4] = {0, 0, -1, 1};
    while (!queue.empty()) {
        const auto p = queue.front();
        queue.pop_front();
        for (int k = 0; k < 4; ++k) {
            const int r = p.row + dr[k], c = p.col + dc[k];
            if (r < 0 || r >= allowed.height() || c < 0 || c >= allowed.width()) continue;
            if (allowed(r, c) != value || reached(r, c)) continue;
            reached.set(r, c, true);
            queue.push_back({r, c});
        }
    }
    return reached;
}

inline std::vector<PixelPoint> top_row(int width) {
    std::vector<PixelPoint> s;
    for (int c = 0; c < width; ++c) s.push_back({0, c});
    return s;
}

inline std::vector<PixelPoint> border(int height, int width) {
    std::vector<PixelPoint> s;
    for (int c = 0; c < width; ++c) {
        s.push_back({0, c});
        s.push_back({height - 1, c});
    }
    for (int r = 0; r < height; ++r) {
        s.push_back({r, 0});
        s.push_back({r, width - 1});
    }
    return s;
}

inline RegionMask refine_once(const RegionMask& m) {
    const RegionMask closed = erode3(dilate3(m));
    const RegionMask kept = flood(closed, true, top_row(m.width()));
    // Background not reachable from the border is a hole.
    const RegionMask outside = flood(kept, false, border(m.height(), m.width()));
    return outside.complement();
}

}  // namespace detail

// 3×3 closing, keep components touching the top border, fill holes; iterated
// to a fixed point so the result is idempotent.
inline RegionMask refine_mask(const RegionMask& mask) {
    if (mask.size() == 0) return mask;
    RegionMask cur = detail::refine_once(mask);
    for (int i = 0; i < 16; ++i) {
        RegionMask next = detail::refine_once(cur);
        if (next == cur) break;
        cur = std::move(next);
    }
    return cur;
}

// ---------------------------------------------------------------------------
// Segmenters

struct SkyThresholds {
    double min_luminance = 0.6;
    double max_saturation = 0.25;
    double max_gradient = 0.05;
};

// Pixels that look like sky: bright, unsaturated (HSV), and locally flat.
// The gradient per axis is the smaller of the forward and backward
// differences, so the rows and columns bordering a flat region still pass.
template <typename T>
RegionMask sky_candidates(const Image<T>& image, const SkyThresholds& th = {}) {
    const Plane<T> y = luminance_plane(image);
    const int h = image.height(), w = image.width();
    RegionMask m(h, w);
    auto one_sided = [](double a, double b, bool has_a, bool has_b) {
        if (has_a && has_b) return std::min(std::abs(a), std::abs(b));
        if (has_a) return std::abs(a);
        if (has_b) return std::abs(b);
        return 0.0;
    };
    for (int r = 0; r < h; ++r)
        for (int c = 0; c < w; ++c) {
            const double mx = std::max({image(r, c, 0), image(r, c, 1), image(r, c, 2)});
            const double mn = std::min({image(r, c, 0), image(r, c, 1), image(r, c, 2)});
            const double sat = mx > 0 ? (mx - mn) / mx : 0.0;
            const double yc = y(r, c);
            const double gx = one_sided(c + 1 < w ? y(r, c + 1) - yc : 0.0, c > 0 ? yc - y(r, c - 1) : 0.0, c + 1 < w,
                                        c > 0);
            const double gy = one_sided(r + 1 < h ? y(r + 1, c) - yc : 0.0, r > 0 ? yc - y(r - 1, c) : 0.0, r + 1 < h,
                                        r > 0);
            const double grad = std::sqrt(gx * gx + gy * gy);
            m.set(r, c, yc > th.min_luminance && sat < th.max_saturation && grad < th.max_gradient);
        }
    return m;
}

template <typename T>
RegionMask heuristic_sky_mask(const Image<T>& image, const SkyThresholds& th = {}) {
    const RegionMask cand = sky_candidates(image, th);
    return refine_mask(detail::flood(cand, true, detail::top_row(image.width())));
}

// Promptable segmenter: point prompts in, sky mask out.
class SkySegmenter {
public:
    virtual ~SkySegmenter() = default;
    virtual std::string name() const = 0;
    virtual RegionMask segment(const ImageF& image, const PointPrompt& points) const = 0;
};

// Grows the sky from the prompted points over sky-candidate pixels.
class HeuristicSegmenter final : public SkySegmenter {
public:
    explicit HeuristicSegmenter(SkyThresholds th = {}) : th_(th) {}
    std::string name() const override { return "heuristic"; }
    RegionMask segment(const ImageF& image, const PointPrompt& points) const override {
        if (points.empty()) return RegionMask(image.height(), image.width(), false);
        const RegionMask cand = sky_candidates(image, th_);
        return refine_mask(detail::flood(cand, true, points.points));
    }

private:
    SkyThresholds th_;
};

// Adapter for an external promptable segmenter executable, invoked as
//   <command> <image.png> <points.json> <mask-out.png>
// where points.json is {"points": [[row, col], ...]}. Access is serialised.
class CommandSegmenter final : public SkySegmenter {
public:
    CommandSegmenter(std::string command, fs::path work_dir)
        : command_(std::move(command)), work_dir_(std::move(work_dir)) {}

    std::string name() const override { return "command"; }

    RegionMask segment(const ImageF& image, const PointPrompt& points) const override {
        if (points.empty()) return RegionMask(image.height(), image.width(), false);
        std::lock_guard lock(mutex_);
        fs::create_directories(work_dir_);
        const auto img_path = work_dir_ / "segment_input.png";
        const auto pts_path = work_dir_ / "segment_points.json";
        const auto out_path = work_dir_ / "segment_mask.png";
        save_image(image, img_path, BitDepth::k16);
        nlohmann::json pj;
        pj["points"] = nlohmann::json::array();
        for (const auto& p : points.points) pj["points"].push_back({p.row, p.col});
        {
            std::ofstream(pts_path) << pj.dump();
        }
        fs::remove(out_path);
        const std::string cmd =
            command_ + " '" + img_path.string() + "' '" + pts_path.string() + "' '" + out_path.string() + "'";
        if (std::system(cmd.c_str()) != 0) throw BackendError("segmenter command failed: " + command_);
        RegionMask m = load_mask(out_path);
        if (!m.matches(image)) throw BackendError("segmenter returned a mask of the wrong shape");
        return m;
    }

private:
    std::string command_;
    fs::path work_dir_;
    mutable std::mutex mutex_;
};

// Runs the segmenter; on failure falls back to the heuristic and records a
// warning.
inline RegionMask segment_sky(const ImageF& image, const PointPrompt& points, const SkySegmenter& segmenter,
                              std::vector<std::string>* warnings = nullptr) {
    if (points.empty()) return RegionMask(image.height(), image.width(), false);
    try {
        return segmenter.segment(image, points);
    } catch (const std::exception& e) {
        if (warnings) warnings->push_back(std::string("segmenter '") + segmenter.name() + "' failed (" + e.what() +
                                          "); using heuristic fallback");
        return HeuristicSegmenter{}.segment(image, points);
    }
}

struct SkyMaskOptions {
    MapBackend backend = MapBackend::surgery;
    int points = 3;
    double percentile = 95.0;
    std::string sky_text = "a photo of the sky.";
};

// Full pipeline: sky similarity map → point prompts → segmenter.
inline RegionMask compute_sky_mask(const ImageF& image, const VisionLanguageEncoder<float>& encoder,
                                   const SkySegmenter& segmenter, const SkyMaskOptions& opt = {},
                                   std::vector<std::string>* warnings = nullptr) {
    const auto text = encoder.encode_text(opt.sky_text);
    const auto map = similarity_map(image, text, encoder, opt.backend);
    const auto pts = select_sky_points(map, opt.points, opt.percentile);
    return segment_sky(image, pts, segmenter, warnings);
}

// Masks are fixed per training image, so they are computed once and stored
// as <hash>.png under the cache directory (or kept in memory only).
class MaskCache {
public:
    using Compute = std::function<RegionMask(const ImageF&)>;

    explicit MaskCache(Compute compute, fs::path dir = {}) : compute_(std::move(compute)), dir_(std::move(dir)) {}

    RegionMask get(const ImageF& image) {
        const auto key = image_hash(image);
        std::lock_guard lock(mutex_);
        ++lookups_;
        if (auto it = memory_.find(key); it != memory_.end()) return it->second;
        if (!dir_.empty()) {
            const auto path = dir_ / (hex(key) + ".png");
            if (fs::exists(path)) {
                RegionMask m = load_mask(path);
                if (m.matches(image)) return memory_[key] = m;
            }
        }
        ++computed_;
        RegionMask m = compute_(image);
        if (!dir_.empty()) save_mask(m, dir_ / (hex(key) + ".png"));
        return memory_[key] = m;
    }

    std::size_t lookups() const { return lookups_; }
    std::size_t computed() const { return computed_; }

    static std::string hex(std::uint64_t v) {
        char buf[17];
        std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
        return buf;
    }

private:
    Compute compute_;
    fs::path dir_;
    std::mutex mutex_;
    std::map<std::uint64_t, RegionMask> memory_;
    std::size_t lookups_ = 0;
    std::size_t computed_ = 0;
};

}  // namespace hazeclip
