#pragma once

#include <algorithm>
#include <cmath>
#include <numbers>
#include <random>
#include <utility>
#include <vector>

#include "hazeclip/image.hpp"

namespace hazeclip::synthetic {

// Procedural outdoor-like scenes used as desk-scale pre-training and
// fine-tuning data: a low-texture sky band over textured, saturated ground.

struct SceneLayout {
    int height = 32;
    int width = 32;
    int sky_rows = 10;  // rows [0, sky_rows) are sky
};

struct Scene {
    ImageF clean;
    RegionMask sky;  // ground-truth sky band
};

inline double uniform(std::mt19937_64& rng, double lo, double hi) {
    return std::uniform_real_distribution<double>(lo, hi)(rng);
}

// HSV (h in [0,1)) to RGB.
inline Rgb hsv_to_rgb(double h, double s, double v) {
    const double hh = std::fmod(h, 1.0) * 6.0;
    const int i = static_cast<int>(hh) % 6;
    const double f = hh - std::floor(hh);
    const double p = v * (1 - s), q = v * (1 - s * f), t = v * (1 - s * (1 - f));
    switch (i) {
        case 0: return {v, t, p};
        case 1: return {q, v, p};
        case 2: return {p, v, t};
        case 3: return {p, q, v};
        case 4: return {t, p, v};
        default: return {v, p, q};
    }
}

inline Scene make_scene(const SceneLayout& layout, std::mt19937_64& rng) {
    const int h = layout.height, w = layout.width;
    Scene scene{ImageF(h, w), RegionMask(h, w)};
    ImageF& img = scene.clean;

    const Rgb zenith{uniform(rng, 0.45, 0.6), uniform(rng, 0.62, 0.72), uniform(rng, 0.85, 0.95)};
    for (int r = 0; r < layout.sky_rows && r < h; ++r) {
        const double k = layout.sky_rows > 1 ? static_cast<double>(r) / (layout.sky_rows - 1) : 0.0;
        for (int c = 0; c < w; ++c) {
            for (int ch = 0; ch < 3; ++ch)
                img(r, c, ch) = static_cast<float>(zenith[ch] + k * (0.92 - zenith[ch]) * 0.5);
            scene.sky.set(r, c, true);
        }
    }

    // Ground: a base colour plus a few coloured blocks, shaded and textured.
    const Rgb base = hsv_to_rgb(uniform(rng, 0.0, 1.0), uniform(rng, 0.4, 0.7), uniform(rng, 0.3, 0.5));
    for (int r = layout.sky_rows; r < h; ++r)
        for (int c = 0; c < w; ++c)
            for (int ch = 0; ch < 3; ++ch) img(r, c, ch) = static_cast<float>(base[ch]);

    const int blocks = 3 + static_cast<int>(rng() % 3);
    for (int b = 0; b < blocks; ++b) {
        const Rgb color = hsv_to_rgb(uniform(rng, 0.0, 1.0), uniform(rng, 0.5, 0.95), uniform(rng, 0.25, 0.85));
        const int bw = std::max(2, static_cast<int>(uniform(rng, 0.15, 0.4) * w));
        const int bh = std::max(2, static_cast<int>(uniform(rng, 0.2, 0.5) * (h - layout.sky_rows)));
        const int left = static_cast<int>(uniform(rng, 0.0, 1.0) * std::max(1, w - bw));
        const int top = h - bh - static_cast<int>(uniform(rng, 0.0, 0.3) * std::max(1, h - layout.sky_rows - bh));
        for (int r = std::max(top, layout.sky_rows); r < std::min(h, top + bh); ++r)
            for (int c = left; c < std::min(w, left + bw); ++c)
                for (int ch = 0; ch < 3; ++ch) img(r, c, ch) = static_cast<float>(color[ch]);
    }

    std::normal_distribution<double> noise(0.0, 0.05);
    for (int r = layout.sky_rows; r < h; ++r)
        for (int c = 0; c < w; ++c) {
            const double n = noise(rng);
            for (int ch = 0; ch < 3; ++ch)
                img(r, c, ch) = static_cast<float>(std::clamp(img(r, c, ch) + n, 0.0, 1.0));
        }
    return scene;
}

// Vertical linear depth gradient (top = far) with low-frequency ripple.
inline Plane<double> make_depth(int height, int width, std::mt19937_64& rng, double near_depth = 0.3,
                                double far_depth = 1.6) {
    Plane<double> d(height, width);
    const double p1 = uniform(rng, 0.0, 2 * std::numbers::pi), p2 = uniform(rng, 0.0, 2 * std::numbers::pi);
    const double amp = 0.05 * (far_depth - near_depth);
    for (int r = 0; r < height; ++r) {
        const double k = height > 1 ? 1.0 - static_cast<double>(r) / (height - 1) : 1.0;
        for (int c = 0; c < width; ++c) {
            const double u = static_cast<double>(c) / std::max(1, width - 1);
            const double v = static_cast<double>(r) / std::max(1, height - 1);
            const double ripple = amp * (std::sin(2 * std::numbers::pi * u + p1) + std::cos(2 * std::numbers::pi * v + p2));
            d(r, c) = std::max(0.0, near_depth + (far_depth - near_depth) * k + ripple);
        }
    }
    return d;
}

inline HazeParams random_haze(int height, int width, std::mt19937_64& rng) {
    HazeParams p;
    p.beta = uniform(rng, 0.8, 1.6);
    const double a = uniform(rng, 0.8, 0.95);
    for (double& ch : p.airlight) ch = std::clamp(a + uniform(rng, -0.02, 0.02), 0.6, 1.0);
    p.depth = make_depth(height, width, rng);
    return p;
}

struct HazyPair {
    ImageF hazy;
    ImageF clean;
    RegionMask sky;
};

inline std::vector<HazyPair> make_pairs(int count, const SceneLayout& layout, unsigned long long seed) {
    std::mt19937_64 rng(seed);
    std::vector<HazyPair> pairs;
    pairs.reserve(static_cast<std::size_t>(count));
    for (int i = 0; i < count; ++i) {
        SceneLayout l = layout;
        l.sky_rows = std::clamp(static_cast<int>(uniform(rng, 0.25, 0.45) * layout.height), 1, layout.height - 1);
        Scene s = make_scene(l, rng);
        HazeParams hp = random_haze(l.height, l.width, rng);
        pairs.push_back({synthesize_haze(s.clean, hp), std::move(s.clean), std::move(s.sky)});
    }
    return pairs;
}

inline std::vector<ImageF> make_hazy_images(int count, const SceneLayout& layout, unsigned long long seed) {
    std::vector<ImageF> out;
    for (auto& p : make_pairs(count, layout, seed)) out.push_back(std::move(p.hazy));
    return out;
}

}  // namespace hazeclip::synthetic
