#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include "hazeclip/errors.hpp"

namespace hazeclip {

using Rgb = std::array<double, 3>;

inline constexpr Rgb kMidGray{0.5, 0.5, 0.5};

// Single-channel H×W array of reals (dark channels, depth maps, similarity maps).
template <typename T>
class Plane {
public:
    Plane() = default;
    Plane(int height, int width, T value = T(0))
        : height_(height), width_(width), data_(static_cast<std::size_t>(height) * width, value) {
        if (height < 0 || width < 0) throw DimensionError("plane dimensions must be nonnegative");
    }

    int height() const noexcept { return height_; }
    int width() const noexcept { return width_; }
    std::size_t size() const noexcept { return data_.size(); }

    T& operator()(int r, int c) { return data_[static_cast<std::size_t>(r) * width_ + c]; }
    const T& operator()(int r, int c) const { return data_[static_cast<std::size_t>(r) * width_ + c]; }

    std::span<T> values() noexcept { return data_; }
    std::span<const T> values() const noexcept { return data_; }

    T mean() const {
        if (data_.empty()) return T(0);
        long double s = 0;
        for (T v : data_) s += v;
        return static_cast<T>(s / data_.size());
    }

    bool operator==(const Plane&) const = default;

private:
    int height_ = 0;
    int width_ = 0;
    std::vector<T> data_;
};

// H×W×3 RGB raster, channel-interleaved, row-major. Values loaded from disk
// or produced by public imaging operations lie in [0,1]; network outputs held
// during loss evaluation may leave that range until clamped for export.
template <typename T>
class Image {
public:
    using value_type = T;

    Image() = default;
    Image(int height, int width, T value = T(0))
        : height_(height), width_(width), data_(static_cast<std::size_t>(height) * width * 3, value) {
        if (height < 0 || width < 0) throw DimensionError("image dimensions must be nonnegative");
    }
    Image(int height, int width, const Rgb& color) : Image(height, width) {
        for (std::size_t i = 0; i < data_.size(); ++i) data_[i] = static_cast<T>(color[i % 3]);
    }

    int height() const noexcept { return height_; }
    int width() const noexcept { return width_; }
    std::size_t pixel_count() const noexcept { return static_cast<std::size_t>(height_) * width_; }
    std::size_t size() const noexcept { return data_.size(); }
    bool empty() const noexcept { return data_.empty(); }

    T& operator()(int r, int c, int ch) { return data_[(static_cast<std::size_t>(r) * width_ + c) * 3 + ch]; }
    const T& operator()(int r, int c, int ch) const {
        return data_[(static_cast<std::size_t>(r) * width_ + c) * 3 + ch];
    }

    std::span<T> values() noexcept { return data_; }
    std::span<const T> values() const noexcept { return data_; }

    bool same_shape(const Image& o) const noexcept { return height_ == o.height_ && width_ == o.width_; }

    template <typename U>
    Image<U> cast() const {
        Image<U> out(height_, width_);
        auto dst = out.values();
        for (std::size_t i = 0; i < data_.size(); ++i) dst[i] = static_cast<U>(data_[i]);
        return out;
    }

    Image clamped() const {
        Image out = *this;
        for (T& v : out.data_) v = std::clamp(v, T(0), T(1));
        return out;
    }

    Image crop(int top, int left, int h, int w) const {
        if (top < 0 || left < 0 || h <= 0 || w <= 0 || top + h > height_ || left + w > width_)
            throw DimensionError("crop window outside image");
        Image out(h, w);
        for (int r = 0; r < h; ++r)
            for (int c = 0; c < w; ++c)
                for (int ch = 0; ch < 3; ++ch) out(r, c, ch) = (*this)(top + r, left + c, ch);
        return out;
    }

    bool operator==(const Image&) const = default;

private:
    int height_ = 0;
    int width_ = 0;
    std::vector<T> data_;
};

using ImageF = Image<float>;
using ImageD = Image<double>;

// Binary sky(true) / non-sky(false) partition of an image grid.
class RegionMask {
public:
    RegionMask() = default;
    RegionMask(int height, int width, bool value = false)
        : height_(height), width_(width), bits_(static_cast<std::size_t>(height) * width, value ? 1 : 0) {
        if (height < 0 || width < 0) throw DimensionError("mask dimensions must be nonnegative");
    }

    int height() const noexcept { return height_; }
    int width() const noexcept { return width_; }
    std::size_t size() const noexcept { return bits_.size(); }

    bool operator()(int r, int c) const { return bits_[static_cast<std::size_t>(r) * width_ + c] != 0; }
    void set(int r, int c, bool v) { bits_[static_cast<std::size_t>(r) * width_ + c] = v ? 1 : 0; }
    bool at(std::size_t i) const { return bits_[i] != 0; }

    std::size_t count() const {
        return static_cast<std::size_t>(std::count(bits_.begin(), bits_.end(), std::uint8_t{1}));
    }
    double coverage() const { return bits_.empty() ? 0.0 : static_cast<double>(count()) / bits_.size(); }
    bool any() const { return count() > 0; }

    RegionMask complement() const {
        RegionMask out = *this;
        for (auto& b : out.bits_) b = b ? 0 : 1;
        return out;
    }

    RegionMask crop(int top, int left, int h, int w) const {
        if (top < 0 || left < 0 || h <= 0 || w <= 0 || top + h > height_ || left + w > width_)
            throw DimensionError("crop window outside mask");
        RegionMask out(h, w);
        for (int r = 0; r < h; ++r)
            for (int c = 0; c < w; ++c) out.set(r, c, (*this)(top + r, left + c));
        return out;
    }

    template <typename T>
    bool matches(const Image<T>& img) const noexcept {
        return height_ == img.height() && width_ == img.width();
    }

    bool operator==(const RegionMask&) const = default;

private:
    int height_ = 0;
    int width_ = 0;
    std::vector<std::uint8_t> bits_;
};

// Pixels where `mask` is true come from `image`, the rest are `fill`.
template <typename T>
Image<T> composite(const Image<T>& image, const RegionMask& mask, const Rgb& fill = kMidGray) {
    if (!mask.matches(image)) throw DimensionError("composite: mask shape does not match image");
    Image<T> out(image.height(), image.width());
    for (int r = 0; r < image.height(); ++r)
        for (int c = 0; c < image.width(); ++c) {
            const bool keep = mask(r, c);
            for (int ch = 0; ch < 3; ++ch) out(r, c, ch) = keep ? image(r, c, ch) : static_cast<T>(fill[ch]);
        }
    return out;
}

// Vector-Jacobian product of composite() with respect to `image`.
template <typename T>
Image<T> composite_vjp(const Image<T>& grad_out, const RegionMask& mask) {
    if (!mask.matches(grad_out)) throw DimensionError("composite_vjp: mask shape does not match gradient");
    Image<T> g(grad_out.height(), grad_out.width());
    for (int r = 0; r < g.height(); ++r)
        for (int c = 0; c < g.width(); ++c)
            if (mask(r, c))
                for (int ch = 0; ch < 3; ++ch) g(r, c, ch) = grad_out(r, c, ch);
    return g;
}

// Per-pixel select between two images by mask: `a` where true, `b` where false.
template <typename T>
Image<T> recombine(const Image<T>& a, const Image<T>& b, const RegionMask& mask) {
    if (!a.same_shape(b) || !mask.matches(a)) throw DimensionError("recombine: shape mismatch");
    Image<T> out(a.height(), a.width());
    for (int r = 0; r < a.height(); ++r)
        for (int c = 0; c < a.width(); ++c)
            for (int ch = 0; ch < 3; ++ch) out(r, c, ch) = mask(r, c) ? a(r, c, ch) : b(r, c, ch);
    return out;
}

template <typename T>
T luminance(const Image<T>& img, int r, int c) {
    return T(0.299) * img(r, c, 0) + T(0.587) * img(r, c, 1) + T(0.114) * img(r, c, 2);
}

template <typename T>
Plane<T> luminance_plane(const Image<T>& img) {
    Plane<T> y(img.height(), img.width());
    for (int r = 0; r < img.height(); ++r)
        for (int c = 0; c < img.width(); ++c) y(r, c) = luminance(img, r, c);
    return y;
}

// Sliding-window minimum with a square odd window, clipped at the borders.
template <typename T>
Plane<T> min_filter(const Plane<T>& in, int patch) {
    if (patch < 1 || patch % 2 == 0) throw ArgumentError("patch size must be an odd integer >= 1");
    const int rad = patch / 2;
    const int h = in.height(), w = in.width();
    Plane<T> rows(h, w), out(h, w);
    for (int r = 0; r < h; ++r)
        for (int c = 0; c < w; ++c) {
            T m = std::numeric_limits<T>::max();
            for (int k = std::max(0, c - rad); k <= std::min(w - 1, c + rad); ++k) m = std::min(m, in(r, k));
            rows(r, c) = m;
        }
    for (int r = 0; r < h; ++r)
        for (int c = 0; c < w; ++c) {
            T m = std::numeric_limits<T>::max();
            for (int k = std::max(0, r - rad); k <= std::min(h - 1, r + rad); ++k) m = std::min(m, rows(k, c));
            out(r, c) = m;
        }
    return out;
}

// Minimum over a patch×patch neighbourhood of the per-pixel channel minimum.
template <typename T>
Plane<T> dark_channel(const Image<T>& image, int patch) {
    if (patch < 1 || patch % 2 == 0) throw ArgumentError("dark_channel: patch must be odd and >= 1");
    Plane<T> cmin(image.height(), image.width());
    for (int r = 0; r < image.height(); ++r)
        for (int c = 0; c < image.width(); ++c)
            cmin(r, c) = std::min({image(r, c, 0), image(r, c, 1), image(r, c, 2)});
    return min_filter(cmin, patch);
}

struct HazeParams {
    double beta = 1.0;
    Rgb airlight{0.9, 0.9, 0.9};
    Plane<double> depth;

    void validate() const {
        if (!(beta >= 0.0)) throw ArgumentError("haze: beta must be >= 0");
        for (double a : airlight)
            if (!(a >= 0.6 && a <= 1.0)) throw ArgumentError("haze: airlight channels must lie in [0.6, 1.0]");
        for (double d : depth.values())
            if (std::isnan(d) || d < 0.0) throw ArgumentError("haze: depth must be nonnegative");
    }
};

// Atmospheric scattering model: I = J·t + A·(1 − t), t = exp(−β·d).
template <typename T>
Image<T> synthesize_haze(const Image<T>& clean, const HazeParams& params) {
    params.validate();
    if (params.depth.height() != clean.height() || params.depth.width() != clean.width())
        throw DimensionError("synthesize_haze: depth shape does not match image");
    if (params.beta == 0.0) return clean;
    Image<T> out(clean.height(), clean.width());
    for (int r = 0; r < clean.height(); ++r)
        for (int c = 0; c < clean.width(); ++c) {
            const double t = std::exp(-params.beta * params.depth(r, c));
            for (int ch = 0; ch < 3; ++ch) {
                const double v = clean(r, c, ch) * t + params.airlight[ch] * (1.0 - t);
                out(r, c, ch) = static_cast<T>(std::clamp(v, 0.0, 1.0));
            }
        }
    return out;
}

// 64-bit FNV-1a over the 16-bit quantised pixel values; stable across runs.
template <typename T>
std::uint64_t image_hash(const Image<T>& img) {
    std::uint64_t h = 1469598103934665603ULL;
    auto mix = [&h](std::uint64_t v, int bytes) {
        for (int i = 0; i < bytes; ++i) {
            h ^= (v >> (8 * i)) & 0xffU;
            h *= 1099511628211ULL;
        }
    };
    mix(static_cast<std::uint64_t>(img.height()), 4);
    mix(static_cast<std::uint64_t>(img.width()), 4);
    for (T v : img.values()) {
        const double q = std::clamp(static_cast<double>(v), 0.0, 1.0) * 65535.0;
        mix(static_cast<std::uint64_t>(std::lround(q)), 2);
    }
    return h;
}

inline void require_min_size(int height, int width, const char* who) {
    if (height < 16 || width < 16)
        throw DimensionError(std::string(who) + ": image must be at least 16x16");
}

}  // namespace hazeclip
