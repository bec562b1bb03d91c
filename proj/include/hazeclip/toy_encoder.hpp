#pragma once

#include <algorithm>
#include <array>
#include <cctype>
#include <cmath>
#include <map>
#include <optional>
#include <random>
#include <string>
#include <string_view>
#include <vector>

#include "hazeclip/encoder.hpp"
#include "hazeclip/resample.hpp"

namespace hazeclip {

// Deterministic, differentiable stand-in for a vision-language encoder.
//
// Both modalities meet in a small "concept" space whose named axes carry
// haze-related image statistics. A fixed random orthogonal matrix Q (seeded)
// lifts concept coordinates and pooled pixels into the embedding space, so
// cosines between concept-space vectors are preserved exactly.
//
// Image embedding, on the image bilinearly resized to 32×32 (values x):
//   contrast  c = sqrt(var(Y) + 1e-6), Y = Rec.601 luminance
//   darkness  d = mean over pixels of softmin_τ(r, g, b)
//   saturation s = mean over pixels of softmax_τ(r, g, b) − softmin_τ(r, g, b)
//     with softmin_τ(v) = −τ·log(mean_k exp(−v_k/τ)), softmax_τ its mirror, τ = 0.05
//   concept  = [bias 1, 4·(c − 0.15), 4·(d − 0.35), 4·(s − 0.20), 0, ...]
//   pixels   = 0.25·(4×4 average-pooled x − 0.5)           (48 values)
//   e = normalize(Q_concept·concept + Q_pixels·pixels)
//
// Text embedding: the sum of per-word concept vectors (vocabulary below),
// normalised and lifted by Q_concept. A negator ("without", "no", "not")
// replaces the next vocabulary word by its antonym. Unknown words add a
// hashed direction in the lexical sub-space with weight 0.25. The anchors
//   hazy  = (bias + (−contrast + dark − saturation)/√3)/√2
//   clean = (bias + ( contrast − dark + saturation)/√3)/√2
// are orthogonal.
//
// Layer features operate on z = (x − 0.5)/0.25: the stem maps each 4×4 patch
// to a 16-d token (8×8 grid); each of the four stages adds
// tanh(W_l · mean_{3×3}(previous tokens)), growing the receptive field by one
// token per stage. Emitted features are multiplied by 1/32 = 1/sqrt(8·8·16).
//
// Patch tokens use 8×8 pixel patches at the input resolution with concept
// coordinates [generic 0.05, bright mean(Y), saturation 2·mean(max − min),
// texture 4·mean(|∂x Y| + |∂y Y|)].
namespace toy {

enum Axis : int {
    kBias = 0,
    kContrast,
    kDark,
    kSaturation,
    kBright,
    kTexture,
    kGeneric,
    kBuilding,
    kPeople,
    kScene,
    kLexical0,
};

inline constexpr int kConceptDim = 19;
inline constexpr int kLexicalDim = kConceptDim - kLexical0;
inline constexpr int kPoolCells = 4;
inline constexpr int kPixelDim = kPoolCells * kPoolCells * 3;
inline constexpr int kEmbedDim = 72;
inline constexpr int kNativeRes = 32;
inline constexpr int kTokenPatch = 4;
inline constexpr int kTokenGrid = kNativeRes / kTokenPatch;
inline constexpr int kTokenDim = 16;
inline constexpr double kLayerFeatureScale = 1.0 / 32.0;
inline constexpr int kPatchSize = 8;
inline constexpr int kMaxTokens = 32;
inline constexpr double kTau = 0.05;
inline constexpr double kStatGain = 4.0;
inline constexpr double kContrastRef = 0.15;
inline constexpr double kDarkRef = 0.35;
inline constexpr double kSaturationRef = 0.20;
inline constexpr double kPixelWeight = 0.25;
inline constexpr double kLexicalWeight = 0.25;
inline constexpr double kContrastEps = 1e-6;
inline constexpr double kNormMean = 0.5;
inline constexpr double kNormStd = 0.25;

using Concept = std::array<double, kConceptDim>;

inline Concept axis(int a, double v = 1.0) {
    Concept c{};
    c[a] = v;
    return c;
}

inline Concept hazy_anchor() {
    Concept c{};
    const double s3 = std::sqrt(3.0), s2 = std::sqrt(2.0);
    c[kBias] = 1 / s2;
    c[kContrast] = -1 / (s3 * s2);
    c[kDark] = 1 / (s3 * s2);
    c[kSaturation] = -1 / (s3 * s2);
    return c;
}

inline Concept clean_anchor() {
    Concept c = hazy_anchor();
    c[kContrast] *= -1;
    c[kDark] *= -1;
    c[kSaturation] *= -1;
    return c;
}

inline Concept pair_anchor(int stat, double sign) {
    Concept c{};
    c[kBias] = 1 / std::sqrt(2.0);
    c[stat] = sign / std::sqrt(2.0);
    return c;
}

inline Concept dirty_anchor(double sign) {
    Concept c{};
    c[kBias] = 1 / std::sqrt(2.0);
    c[kDark] = sign * 0.5;
    c[kSaturation] = -sign * 0.5;
    return c;
}

struct WordEntry {
    Concept vec;
    Concept antonym;
};

inline const std::map<std::string, WordEntry, std::less<>>& vocabulary() {
    static const std::map<std::string, WordEntry, std::less<>> vocab = [] {
        std::map<std::string, WordEntry, std::less<>> v;
        const WordEntry hazy{hazy_anchor(), clean_anchor()};
        const WordEntry clean{clean_anchor(), hazy_anchor()};
        for (const char* w : {"hazy", "haze", "fog", "foggy", "misty", "mist", "smog", "smoggy", "murky",
                              "low-quality", "poor", "bad"})
            v[w] = hazy;
        for (const char* w : {"clean", "clear", "haze-free", "fog-free", "dehazed", "crisp", "high-quality", "good",
                              "beautiful"})
            v[w] = clean;
        const WordEntry sharp{pair_anchor(kContrast, 1), pair_anchor(kContrast, -1)};
        const WordEntry blurry{pair_anchor(kContrast, -1), pair_anchor(kContrast, 1)};
        for (const char* w : {"sharp", "high-contrast", "vivid"}) v[w] = sharp;
        for (const char* w : {"blurry", "low-contrast", "flat", "soft"}) v[w] = blurry;
        const WordEntry colorful{pair_anchor(kSaturation, 1), pair_anchor(kSaturation, -1)};
        const WordEntry dull{pair_anchor(kSaturation, -1), pair_anchor(kSaturation, 1)};
        for (const char* w : {"colorful", "colourful", "vibrant", "saturated"}) v[w] = colorful;
        for (const char* w : {"dull", "grey", "gray", "faded", "washed-out", "pale"}) v[w] = dull;
        v["dirty"] = {dirty_anchor(1), dirty_anchor(-1)};
        v["sky"] = {axis(kBright), axis(kBright, -1)};
        for (const char* w : {"photo", "picture", "image", "photograph"}) v[w] = {axis(kGeneric), axis(kGeneric, -1)};
        for (const char* w : {"building", "buildings"}) v[w] = {axis(kBuilding), axis(kBuilding, -1)};
        for (const char* w : {"people", "person"}) v[w] = {axis(kPeople), axis(kPeople, -1)};
        v["scene"] = {axis(kScene), axis(kScene, -1)};
        return v;
    }();
    return vocab;
}

inline bool is_stopword(std::string_view w) {
    static const std::array<std::string_view, 13> stop{"a", "an", "the", "of", "in", "on", "with", "at",
                                                        "and", "is", "this", "that", "to"};
    return std::find(stop.begin(), stop.end(), w) != stop.end();
}

inline bool is_negator(std::string_view w) { return w == "without" || w == "no" || w == "not" || w == "non"; }

// Lower-cased words; separators are anything but letters, digits and '-'.
inline std::vector<std::string> tokenize(std::string_view text) {
    std::vector<std::string> words;
    std::string cur;
    for (char ch : text) {
        const auto u = static_cast<unsigned char>(ch);
        if (std::isalnum(u) || ch == '-') {
            cur.push_back(static_cast<char>(std::tolower(u)));
        } else if (!cur.empty()) {
            words.push_back(std::move(cur));
            cur.clear();
        }
    }
    if (!cur.empty()) words.push_back(std::move(cur));
    return words;
}

inline Concept lexical_direction(std::string_view word) {
    std::mt19937_64 rng(linalg::fnv1a(word));
    std::normal_distribution<double> nd(0.0, 1.0);
    Concept c{};
    double n = 0;
    for (int i = kLexical0; i < kConceptDim; ++i) {
        c[i] = nd(rng);
        n += c[i] * c[i];
    }
    n = std::sqrt(n);
    for (int i = kLexical0; i < kConceptDim; ++i) c[i] /= n;
    return c;
}

}  // namespace toy

template <typename T>
class ToyEncoder final : public VisionLanguageEncoder<T> {
public:
    static constexpr unsigned long long kDefaultSeed = 0x5eedc11bULL;

    explicit ToyEncoder(unsigned long long seed = kDefaultSeed) : seed_(seed) {
        std::mt19937_64 rng(seed);
        q_master_ = linalg::random_orthogonal(toy::kEmbedDim, rng);
        w0_master_ = linalg::gaussian_matrix(toy::kTokenDim, toy::kTokenPatch * toy::kTokenPatch * 3, rng,
                                             1.0 / std::sqrt(48.0));
        for (auto& w : stage_master_) w = linalg::gaussian_matrix(toy::kTokenDim, toy::kTokenDim, rng, 0.5 / 4.0);
        q_ = q_master_.template cast<T>();
        w0_ = w0_master_.template cast<T>();
        for (int i = 0; i < 4; ++i) stage_[i] = stage_master_[i].template cast<T>();
    }

    std::string name() const override { return "toy"; }
    std::size_t dim() const override { return toy::kEmbedDim; }

    // Lifts a concept-space vector into the embedding space (unnormalised).
    std::vector<T> lift(const toy::Concept& c) const {
        std::vector<T> out(toy::kEmbedDim, T(0));
        for (int i = 0; i < toy::kEmbedDim; ++i) {
            T s = 0;
            for (int k = 0; k < toy::kConceptDim; ++k) s += q_(i, k) * static_cast<T>(c[k]);
            out[i] = s;
        }
        return out;
    }

    // Concept-space coordinates of an embedding (Q_conceptᵀ e).
    toy::Concept to_concept(std::span<const T> e) const {
        toy::Concept c{};
        for (int k = 0; k < toy::kConceptDim; ++k) {
            double s = 0;
            for (int i = 0; i < toy::kEmbedDim; ++i) s += static_cast<double>(q_(i, k)) * e[i];
            c[k] = s;
        }
        return c;
    }

    Embedding<T> encode_text(const std::string& text) const override {
        auto words = toy::tokenize(text);
        if (words.empty()) throw ArgumentError("encode_text: empty prompt");
        if (words.size() > static_cast<std::size_t>(toy::kMaxTokens)) {
            this->record_warning("prompt truncated to " + std::to_string(toy::kMaxTokens) + " tokens: " + text);
            words.resize(toy::kMaxTokens);
        }
        const auto& vocab = toy::vocabulary();
        toy::Concept acc{};
        bool negate = false;
        for (const auto& w : words) {
            if (toy::is_negator(w)) {
                negate = true;
                continue;
            }
            if (toy::is_stopword(w)) continue;
            auto it = vocab.find(w);
            if (it != vocab.end()) {
                const auto& v = negate ? it->second.antonym : it->second.vec;
                for (int k = 0; k < toy::kConceptDim; ++k) acc[k] += v[k];
            } else {
                const auto v = toy::lexical_direction(w);
                for (int k = 0; k < toy::kConceptDim; ++k) acc[k] += toy::kLexicalWeight * v[k];
            }
            negate = false;
        }
        double n = 0;
        for (double v : acc) n += v * v;
        if (!(n > 0)) {
            // Only stop-words or negators: fall back to a hashed direction.
            acc = toy::lexical_direction(text);
            n = 1.0;
        }
        n = std::sqrt(n);
        for (double& v : acc) v /= n;
        return {lift(acc)};
    }

    Embedding<T> encode_image(const Image<T>& image) const override {
        return {global_forward(image).embedding};
    }

    Image<T> encode_image_vjp(const Image<T>& image, std::span<const T> grad_embedding) const override {
        if (grad_embedding.size() != dim()) throw DimensionError("encode_image_vjp: gradient dimension mismatch");
        const GlobalState st = global_forward(image);
        const auto du = linalg::normalize_vjp<T>(st.embedding, st.norm, grad_embedding);

        // Qᵀ du split into concept and pixel parts.
        std::vector<T> dq(toy::kEmbedDim, T(0));
        for (int i = 0; i < toy::kEmbedDim; ++i)
            for (int k = 0; k < toy::kEmbedDim; ++k) dq[k] += q_(i, k) * du[i];

        const int n = toy::kNativeRes;
        const T npx = static_cast<T>(n * n);
        const T gain = static_cast<T>(toy::kStatGain);
        const T d_contrast = gain * dq[toy::kContrast];
        const T d_dark = gain * dq[toy::kDark];
        const T d_sat = gain * dq[toy::kSaturation];

        Image<T> dx(n, n);
        const T d_var = d_contrast / (2 * st.contrast);
        const T lw[3] = {T(0.299), T(0.587), T(0.114)};
        const int cell = n / toy::kPoolCells;
        for (int r = 0; r < n; ++r)
            for (int c = 0; c < n; ++c) {
                const T dy = d_var * 2 * (st.luma(r, c) - st.luma_mean) / npx;
                const auto& sm = st.soft[static_cast<std::size_t>(r) * n + c];
                const int pool = ((r / cell) * toy::kPoolCells + (c / cell)) * 3;
                for (int ch = 0; ch < 3; ++ch) {
                    T g = dy * lw[ch];
                    g += (d_dark - d_sat) / npx * sm.min_weight[ch];
                    g += d_sat / npx * sm.max_weight[ch];
                    g += dq[toy::kConceptDim + pool + ch] * static_cast<T>(toy::kPixelWeight) /
                         static_cast<T>(cell * cell);
                    dx(r, c, ch) = g;
                }
            }
        return resize_bilinear_transpose(dx, image.height(), image.width());
    }

    LayerFeatures<T> image_layer_features(const Image<T>& image) const override {
        LayerFeatures<T> f = layer_forward(image).features;
        for (auto& layer : f.layers)
            for (T& v : layer) v *= static_cast<T>(toy::kLayerFeatureScale);
        return f;
    }

    Image<T> layer_features_vjp(const Image<T>& image, const LayerFeatures<T>& grad) const override {
        const LayerState st = layer_forward(image);
        constexpr int g = toy::kTokenGrid, d = toy::kTokenDim;
        for (int l = 0; l < kLayerCount; ++l)
            if (grad.layers[l].size() != st.features.layers[l].size())
                throw ContractError("layer_features_vjp: gradient layer shape mismatch");

        const T fs = static_cast<T>(toy::kLayerFeatureScale);
        std::vector<T> acc = grad.layers[4];
        for (T& v : acc) v *= fs;
        for (int l = 4; l >= 1; --l) {
            const auto& th = st.tanh_out[l - 1];
            std::vector<T> dpre(acc.size());
            for (std::size_t i = 0; i < acc.size(); ++i) dpre[i] = acc[i] * (1 - th[i] * th[i]);
            std::vector<T> dmean(acc.size(), T(0));
            for (int t = 0; t < g * g; ++t)
                linalg::matvec_transpose_add<T>(stage_[l - 1], std::span<const T>(dpre).subspan(t * d, d),
                                                std::span<T>(dmean).subspan(t * d, d));
            std::vector<T> prev = neighbour_mean(dmean);  // symmetric operator
            for (std::size_t i = 0; i < prev.size(); ++i) prev[i] += acc[i] + fs * grad.layers[l - 1][i];
            acc = std::move(prev);
        }

        constexpr int p = toy::kTokenPatch, n = toy::kNativeRes;
        Image<T> dx(n, n);
        std::vector<T> dvec(p * p * 3);
        for (int gr = 0; gr < g; ++gr)
            for (int gc = 0; gc < g; ++gc) {
                std::fill(dvec.begin(), dvec.end(), T(0));
                linalg::matvec_transpose_add<T>(w0_, std::span<const T>(acc).subspan((gr * g + gc) * d, d), dvec);
                for (int pr = 0; pr < p; ++pr)
                    for (int pc = 0; pc < p; ++pc)
                        for (int ch = 0; ch < 3; ++ch)
                            dx(gr * p + pr, gc * p + pc, ch) =
                                dvec[(pr * p + pc) * 3 + ch] / static_cast<T>(toy::kNormStd);
            }
        return resize_bilinear_transpose(dx, image.height(), image.width());
    }

    PatchFeatures<T> patch_token_features(const Image<T>& image) const override {
        const int ps = toy::kPatchSize;
        PatchFeatures<T> pf;
        pf.grid_h = image.height() / ps;
        pf.grid_w = image.width() / ps;
        pf.dim = toy::kEmbedDim;
        pf.patch_size = ps;
        pf.stride = ps;
        pf.data.assign(static_cast<std::size_t>(pf.grid_h) * pf.grid_w * pf.dim, T(0));
        const Plane<T> y = luminance_plane(image);
        for (int gr = 0; gr < pf.grid_h; ++gr)
            for (int gc = 0; gc < pf.grid_w; ++gc) {
                double lum = 0, sat = 0, tex = 0;
                for (int r = gr * ps; r < (gr + 1) * ps; ++r)
                    for (int c = gc * ps; c < (gc + 1) * ps; ++c) {
                        lum += y(r, c);
                        const double mx = std::max({image(r, c, 0), image(r, c, 1), image(r, c, 2)});
                        const double mn = std::min({image(r, c, 0), image(r, c, 1), image(r, c, 2)});
                        sat += mx - mn;
                        if (c + 1 < (gc + 1) * ps) tex += std::abs(static_cast<double>(y(r, c + 1) - y(r, c)));
                        if (r + 1 < (gr + 1) * ps) tex += std::abs(static_cast<double>(y(r + 1, c) - y(r, c)));
                    }
                const double cnt = ps * ps;
                toy::Concept con{};
                con[toy::kGeneric] = 0.05;
                con[toy::kBright] = lum / cnt;
                con[toy::kSaturation] = 2.0 * sat / cnt;
                con[toy::kTexture] = 4.0 * tex / cnt;
                const auto v = linalg::normalized<T>(lift(con));
                std::copy(v.begin(), v.end(), pf.at(gr, gc).begin());
            }
        return pf;
    }

    std::uint64_t weights_checksum() const override {
        std::uint64_t h = linalg::fnv1a_values<double>(q_master_.data);
        h = linalg::fnv1a_values<double>(w0_master_.data, h);
        for (const auto& w : stage_master_) h = linalg::fnv1a_values<double>(w.data, h);
        return h;
    }

    nlohmann::json metadata() const override {
        return {{"backend", "toy"},
                {"seed", seed_},
                {"native_resolution", toy::kNativeRes},
                {"resize", "bilinear"},
                {"mean", {toy::kNormMean, toy::kNormMean, toy::kNormMean}},
                {"std", {toy::kNormStd, toy::kNormStd, toy::kNormStd}},
                {"embedding_dim", toy::kEmbedDim},
                {"patch_size", toy::kPatchSize},
                {"weights_checksum", weights_checksum()}};
    }

private:
    struct SoftStats {
        T min_weight[3];
        T max_weight[3];
    };

    struct GlobalState {
        std::vector<T> embedding;
        T norm{};
        T contrast{};
        T luma_mean{};
        Plane<T> luma;
        std::vector<SoftStats> soft;
    };

    struct LayerState {
        LayerFeatures<T> features;
        std::array<std::vector<T>, 4> tanh_out;
    };

    // softmin_τ / softmax_τ with their gradients (softmax weights).
    static void soft_extrema(const T v[3], T& smin, T& smax, SoftStats& st) {
        const T tau = static_cast<T>(toy::kTau);
        const T lo = std::min({v[0], v[1], v[2]});
        const T hi = std::max({v[0], v[1], v[2]});
        T emin[3], emax[3], zmin = 0, zmax = 0;
        for (int k = 0; k < 3; ++k) {
            emin[k] = std::exp(-(v[k] - lo) / tau);
            emax[k] = std::exp((v[k] - hi) / tau);
            zmin += emin[k];
            zmax += emax[k];
        }
        smin = lo - tau * std::log(zmin / 3);
        smax = hi + tau * std::log(zmax / 3);
        for (int k = 0; k < 3; ++k) {
            st.min_weight[k] = emin[k] / zmin;
            st.max_weight[k] = emax[k] / zmax;
        }
    }

    GlobalState global_forward(const Image<T>& image) const {
        require_min_size(image.height(), image.width(), "toy encoder");
        const int n = toy::kNativeRes;
        const Image<T> x = resize_bilinear(image, n, n);
        GlobalState st;
        st.luma = luminance_plane(x);
        st.soft.resize(static_cast<std::size_t>(n) * n);
        const T npx = static_cast<T>(n * n);

        T lsum = 0, dsum = 0, ssum = 0;
        for (int r = 0; r < n; ++r)
            for (int c = 0; c < n; ++c) {
                const T v[3] = {x(r, c, 0), x(r, c, 1), x(r, c, 2)};
                T smin, smax;
                soft_extrema(v, smin, smax, st.soft[static_cast<std::size_t>(r) * n + c]);
                lsum += st.luma(r, c);
                dsum += smin;
                ssum += smax - smin;
            }
        st.luma_mean = lsum / npx;
        T var = 0;
        for (T yv : st.luma.values()) var += (yv - st.luma_mean) * (yv - st.luma_mean);
        var /= npx;
        st.contrast = std::sqrt(var + static_cast<T>(toy::kContrastEps));
        const T dark = dsum / npx;
        const T sat = ssum / npx;

        std::vector<T> z(toy::kEmbedDim, T(0));
        const T gain = static_cast<T>(toy::kStatGain);
        z[toy::kBias] = 1;
        z[toy::kContrast] = gain * (st.contrast - static_cast<T>(toy::kContrastRef));
        z[toy::kDark] = gain * (dark - static_cast<T>(toy::kDarkRef));
        z[toy::kSaturation] = gain * (sat - static_cast<T>(toy::kSaturationRef));

        const int cell = n / toy::kPoolCells;
        for (int pr = 0; pr < toy::kPoolCells; ++pr)
            for (int pc = 0; pc < toy::kPoolCells; ++pc)
                for (int ch = 0; ch < 3; ++ch) {
                    T s = 0;
                    for (int r = pr * cell; r < (pr + 1) * cell; ++r)
                        for (int c = pc * cell; c < (pc + 1) * cell; ++c) s += x(r, c, ch);
                    s /= static_cast<T>(cell * cell);
                    z[toy::kConceptDim + (pr * toy::kPoolCells + pc) * 3 + ch] =
                        static_cast<T>(toy::kPixelWeight) * (s - static_cast<T>(0.5));
                }

        std::vector<T> u(toy::kEmbedDim);
        linalg::matvec<T>(q_, z, u);
        st.norm = linalg::norm<T>(u);
        st.embedding = u;
        for (T& v : st.embedding) v /= st.norm;
        return st;
    }

    // Zero-padded 3×3 token mean (a symmetric linear operator).
    static std::vector<T> neighbour_mean(const std::vector<T>& tokens) {
        constexpr int g = toy::kTokenGrid, d = toy::kTokenDim;
        std::vector<T> out(tokens.size(), T(0));
        for (int r = 0; r < g; ++r)
            for (int c = 0; c < g; ++c) {
                T* dst = &out[(r * g + c) * d];
                for (int dr = -1; dr <= 1; ++dr)
                    for (int dc = -1; dc <= 1; ++dc) {
                        const int rr = r + dr, cc = c + dc;
                        if (rr < 0 || rr >= g || cc < 0 || cc >= g) continue;
                        const T* src = &tokens[(rr * g + cc) * d];
                        for (int k = 0; k < d; ++k) dst[k] += src[k];
                    }
                for (int k = 0; k < d; ++k) dst[k] /= T(9);
            }
        return out;
    }

    LayerState layer_forward(const Image<T>& image) const {
        require_min_size(image.height(), image.width(), "toy encoder");
        constexpr int n = toy::kNativeRes, p = toy::kTokenPatch, g = toy::kTokenGrid, d = toy::kTokenDim;
        const Image<T> x = resize_bilinear(image, n, n);
        LayerState st;
        for (auto& s : st.features.shapes) s = {g, g, d};

        auto& l0 = st.features.layers[0];
        l0.assign(static_cast<std::size_t>(g) * g * d, T(0));
        std::vector<T> vec(p * p * 3);
        for (int gr = 0; gr < g; ++gr)
            for (int gc = 0; gc < g; ++gc) {
                for (int pr = 0; pr < p; ++pr)
                    for (int pc = 0; pc < p; ++pc)
                        for (int ch = 0; ch < 3; ++ch)
                            vec[(pr * p + pc) * 3 + ch] =
                                (x(gr * p + pr, gc * p + pc, ch) - static_cast<T>(toy::kNormMean)) /
                                static_cast<T>(toy::kNormStd);
                linalg::matvec<T>(w0_, vec, std::span<T>(l0).subspan((gr * g + gc) * d, d));
            }

        for (int l = 1; l < kLayerCount; ++l) {
            const auto& prev = st.features.layers[l - 1];
            const std::vector<T> mean = neighbour_mean(prev);
            auto& th = st.tanh_out[l - 1];
            th.assign(prev.size(), T(0));
            auto& cur = st.features.layers[l];
            cur = prev;
            for (int t = 0; t < g * g; ++t) {
                linalg::matvec<T>(stage_[l - 1], std::span<const T>(mean).subspan(t * d, d),
                                  std::span<T>(th).subspan(t * d, d));
                for (int k = 0; k < d; ++k) {
                    T& h = th[t * d + k];
                    h = std::tanh(h);
                    cur[t * d + k] += h;
                }
            }
        }
        return st;
    }

    unsigned long long seed_;
    linalg::Matrix<double> q_master_;
    linalg::Matrix<double> w0_master_;
    std::array<linalg::Matrix<double>, 4> stage_master_;
    linalg::Matrix<T> q_;
    linalg::Matrix<T> w0_;
    std::array<linalg::Matrix<T>, 4> stage_;
};

}  // namespace hazeclip
