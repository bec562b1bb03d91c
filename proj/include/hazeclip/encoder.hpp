#pragma once

#include <array>
#include <cstdint>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "hazeclip/errors.hpp"
#include "hazeclip/image.hpp"
#include "hazeclip/linalg.hpp"

namespace hazeclip {

// Unit-norm latent vector produced by an image or text encoder.
template <typename T>
struct Embedding {
    std::vector<T> values;

    std::size_t dim() const noexcept { return values.size(); }
    T norm() const { return linalg::norm<T>(values); }
    std::span<const T> span() const noexcept { return values; }

    bool operator==(const Embedding&) const = default;
};

template <typename T>
T cosine(const Embedding<T>& a, const Embedding<T>& b) {
    if (a.dim() != b.dim()) throw DimensionError("cosine: embedding dimensions differ");
    return linalg::dot<T>(a.values, b.values) / (a.norm() * b.norm());
}

inline constexpr int kLayerCount = 5;

struct LayerShape {
    int grid_h = 0;
    int grid_w = 0;
    int channels = 0;
    std::size_t size() const noexcept { return static_cast<std::size_t>(grid_h) * grid_w * channels; }
};

// Per-layer image features; index 0 is the stem, 1..4 the encoder stages.
template <typename T>
struct LayerFeatures {
    std::array<std::vector<T>, kLayerCount> layers;
    std::array<LayerShape, kLayerCount> shapes;
};

// Unit-normalised features of image patches on a regular grid.
template <typename T>
struct PatchFeatures {
    int grid_h = 0;
    int grid_w = 0;
    int dim = 0;
    int patch_size = 0;
    int stride = 0;
    std::vector<T> data;

    std::span<const T> at(int r, int c) const {
        return std::span<const T>(data).subspan((static_cast<std::size_t>(r) * grid_w + c) * dim, dim);
    }
    std::span<T> at(int r, int c) {
        return std::span<T>(data).subspan((static_cast<std::size_t>(r) * grid_w + c) * dim, dim);
    }
};

// Frozen vision-language encoder. Implementations are read-only after
// construction; all methods may be called concurrently.
//
// The *_vjp methods return the gradient of a scalar loss with respect to the
// input image, given the gradient with respect to the encoder output.
template <typename T>
class VisionLanguageEncoder {
public:
    virtual ~VisionLanguageEncoder() = default;

    virtual std::string name() const = 0;
    virtual std::size_t dim() const = 0;

    virtual Embedding<T> encode_image(const Image<T>& image) const = 0;
    virtual Image<T> encode_image_vjp(const Image<T>& image, std::span<const T> grad_embedding) const = 0;

    virtual Embedding<T> encode_text(const std::string& text) const = 0;

    virtual LayerFeatures<T> image_layer_features(const Image<T>& image) const = 0;
    virtual Image<T> layer_features_vjp(const Image<T>& image, const LayerFeatures<T>& grad) const = 0;

    virtual PatchFeatures<T> patch_token_features(const Image<T>& image) const = 0;

    // Checksum over all weights; used to verify the encoder stays frozen.
    virtual std::uint64_t weights_checksum() const = 0;

    // Preprocessing and identity metadata recorded into checkpoints.
    virtual nlohmann::json metadata() const = 0;

    // Warnings such as prompt truncation, accumulated across calls.
    std::vector<std::string> warnings() const {
        std::lock_guard lock(warn_mutex_);
        return warnings_;
    }

protected:
    void record_warning(std::string w) const {
        std::lock_guard lock(warn_mutex_);
        warnings_.push_back(std::move(w));
    }

private:
    mutable std::mutex warn_mutex_;
    mutable std::vector<std::string> warnings_;
};

template <typename T>
using EncoderFactory = std::function<std::unique_ptr<VisionLanguageEncoder<T>>(const std::string& cache_dir)>;

// Environment variable naming the directory where pretrained encoder
// weights are looked up.
inline constexpr const char* kCacheEnv = "HAZECLIP_CACHE";

inline std::string default_cache_dir() {
    if (const char* v = std::getenv(kCacheEnv)) return v;
    return ".hazeclip-cache";
}

}  // namespace hazeclip
