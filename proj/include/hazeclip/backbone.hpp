#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <random>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "hazeclip/errors.hpp"
#include "hazeclip/image.hpp"

namespace hazeclip {

// Backbone-agnostic dehazing network. `forward` returns unclamped outputs
// (losses need the gradient at saturation); `infer` clamps for export.
template <typename T>
class DehazeModel {
public:
    // Opaque activations recorded by forward() for backward().
    struct Trace {
        virtual ~Trace() = default;
    };

    virtual ~DehazeModel() = default;

    virtual std::string name() const = 0;
    virtual nlohmann::json hyperparameters() const = 0;
    virtual std::unique_ptr<DehazeModel> clone() const = 0;

    virtual std::span<T> parameters() = 0;
    virtual std::span<const T> parameters() const = 0;
    std::size_t parameter_count() const { return parameters().size(); }

    // Output spatial size equals input size for H, W divisible by this.
    virtual int stride_factor() const { return 1; }

    virtual Image<T> forward(const Image<T>& input, std::unique_ptr<Trace>* trace = nullptr) const = 0;

    // Accumulates dLoss/dParameters into `grad_params` given dLoss/dOutput.
    virtual void backward(const Trace& trace, const Image<T>& grad_output, std::span<T> grad_params) const = 0;

    Image<T> infer(const Image<T>& input) const { return forward(input).clamped(); }
};

struct TinyBackboneConfig {
    int channels = 16;
    int blocks = 2;
    unsigned long long seed = 0;
    bool zero_init_output = false;

    nlohmann::json to_json() const {
        return {{"channels", channels}, {"blocks", blocks}, {"seed", seed}, {"zero_init_output", zero_init_output}};
    }
    static TinyBackboneConfig from_json(const nlohmann::json& j) {
        TinyBackboneConfig c;
        c.channels = j.value("channels", c.channels);
        c.blocks = j.value("blocks", c.blocks);
        c.seed = j.value("seed", c.seed);
        c.zero_init_output = j.value("zero_init_output", c.zero_init_output);
        return c;
    }
};

// Number of trainable values of the tiny backbone: 3×3 convolutions with
// bias, 3→C stem, `blocks` residual pairs C→C, C→3 head.
constexpr std::size_t tiny_parameter_count(int channels, int blocks) {
    const auto c = static_cast<std::size_t>(channels);
    const auto conv = [](std::size_t in, std::size_t out) { return out * in * 9 + out; };
    return conv(3, c) + static_cast<std::size_t>(blocks) * 2 * conv(c, c) + conv(c, 3);
}

namespace detail {

// Channel-planar feature map.
template <typename T>
struct Tensor3 {
    int c = 0, h = 0, w = 0;
    std::vector<T> v;
    Tensor3() = default;
    Tensor3(int c_, int h_, int w_) : c(c_), h(h_), w(w_), v(static_cast<std::size_t>(c_) * h_ * w_, T(0)) {}
    T* plane(int ch) { return v.data() + static_cast<std::size_t>(ch) * h * w; }
    const T* plane(int ch) const { return v.data() + static_cast<std::size_t>(ch) * h * w; }
};

struct ConvLayout {
    int in = 0, out = 0;
    std::size_t offset = 0;  // weights [out][in][3][3] followed by bias [out]
    std::size_t weight_count() const { return static_cast<std::size_t>(in) * out * 9; }
    std::size_t size() const { return weight_count() + static_cast<std::size_t>(out); }
};

// 3×3 convolution, stride 1, zero padding 1.
template <typename T>
Tensor3<T> conv3x3(const Tensor3<T>& x, const ConvLayout& L, std::span<const T> params) {
    Tensor3<T> y(L.out, x.h, x.w);
    const T* w = params.data() + L.offset;
    const T* b = w + L.weight_count();
    const int H = x.h, W = x.w;
    for (int co = 0; co < L.out; ++co) {
        T* dst = y.plane(co);
        std::fill(dst, dst + static_cast<std::size_t>(H) * W, b[co]);
        for (int ci = 0; ci < L.in; ++ci) {
            const T* src = x.plane(ci);
            for (int ky = 0; ky < 3; ++ky)
                for (int kx = 0; kx < 3; ++kx) {
                    const T k = w[((static_cast<std::size_t>(co) * L.in + ci) * 3 + ky) * 3 + kx];
                    const int y0 = std::max(0, 1 - ky), y1 = std::min(H, H + 1 - ky);
                    const int x0 = std::max(0, 1 - kx), x1 = std::min(W, W + 1 - kx);
                    for (int yy = y0; yy < y1; ++yy) {
                        T* drow = dst + static_cast<std::size_t>(yy) * W;
                        const T* srow = src + static_cast<std::ptrdiff_t>(yy + ky - 1) * W + (kx - 1);
                        for (int xx = x0; xx < x1; ++xx) drow[xx] += k * srow[xx];
                    }
                }
        }
    }
    return y;
}

// Accumulates weight/bias gradients; returns the input gradient when asked.
template <typename T>
Tensor3<T> conv3x3_backward(const Tensor3<T>& x, const Tensor3<T>& dy, const ConvLayout& L,
                            std::span<const T> params, std::span<T> grad, bool need_input_grad) {
    Tensor3<T> dx;
    if (need_input_grad) dx = Tensor3<T>(L.in, x.h, x.w);
    const T* w = params.data() + L.offset;
    T* gw = grad.data() + L.offset;
    T* gb = gw + L.weight_count();
    const int H = x.h, W = x.w;
    for (int co = 0; co < L.out; ++co) {
        const T* g = dy.plane(co);
        T s = 0;
        for (std::size_t i = 0; i < static_cast<std::size_t>(H) * W; ++i) s += g[i];
        gb[co] += s;
        for (int ci = 0; ci < L.in; ++ci) {
            const T* src = x.plane(ci);
            T* dsrc = need_input_grad ? dx.plane(ci) : nullptr;
            for (int ky = 0; ky < 3; ++ky)
                for (int kx = 0; kx < 3; ++kx) {
                    const std::size_t wi = ((static_cast<std::size_t>(co) * L.in + ci) * 3 + ky) * 3 + kx;
                    const T k = w[wi];
                    const int y0 = std::max(0, 1 - ky), y1 = std::min(H, H + 1 - ky);
                    const int x0 = std::max(0, 1 - kx), x1 = std::min(W, W + 1 - kx);
                    T acc = 0;
                    for (int yy = y0; yy < y1; ++yy) {
                        const T* grow = g + static_cast<std::size_t>(yy) * W;
                        const std::ptrdiff_t soff = static_cast<std::ptrdiff_t>(yy + ky - 1) * W + (kx - 1);
                        const T* srow = src + soff;
                        for (int xx = x0; xx < x1; ++xx) acc += grow[xx] * srow[xx];
                        if (dsrc) {
                            T* drow = dsrc + soff;
                            for (int xx = x0; xx < x1; ++xx) drow[xx] += k * grow[xx];
                        }
                    }
                    gw[wi] += acc;
                }
        }
    }
    return dx;
}

template <typename T>
T sigmoid(T x) {
    return T(1) / (T(1) + std::exp(-x));
}

// SiLU x·σ(x): smooth everywhere, which keeps finite-difference checks clean.
template <typename T>
Tensor3<T> silu(const Tensor3<T>& z) {
    Tensor3<T> a = z;
    for (T& v : a.v) v = v * sigmoid(v);
    return a;
}

template <typename T>
Tensor3<T> silu_backward(const Tensor3<T>& z, const Tensor3<T>& da) {
    Tensor3<T> dz = da;
    for (std::size_t i = 0; i < dz.v.size(); ++i) {
        const T s = sigmoid(z.v[i]);
        dz.v[i] *= s * (T(1) + z.v[i] * (T(1) - s));
    }
    return dz;
}

template <typename T>
Tensor3<T> to_planar(const Image<T>& img) {
    Tensor3<T> t(3, img.height(), img.width());
    for (int r = 0; r < img.height(); ++r)
        for (int c = 0; c < img.width(); ++c)
            for (int ch = 0; ch < 3; ++ch) t.plane(ch)[static_cast<std::size_t>(r) * img.width() + c] = img(r, c, ch);
    return t;
}

template <typename T>
Image<T> from_planar(const Tensor3<T>& t) {
    Image<T> img(t.h, t.w);
    for (int r = 0; r < t.h; ++r)
        for (int c = 0; c < t.w; ++c)
            for (int ch = 0; ch < 3; ++ch) img(r, c, ch) = t.plane(ch)[static_cast<std::size_t>(r) * t.w + c];
    return img;
}

}  // namespace detail

// Small residual CNN predicting an additive correction:
//   h0 = silu(conv_in(x)); h_{b+1} = h_b + conv_b2(silu(conv_b1(h_b)));
//   output = x + conv_out(h_B)
template <typename T>
class TinyBackbone final : public DehazeModel<T> {
public:
    explicit TinyBackbone(const TinyBackboneConfig& cfg) : cfg_(cfg) {
        if (cfg.channels < 8) throw ArgumentError("tiny_backbone: channels must be >= 8");
        if (cfg.blocks < 1) throw ArgumentError("tiny_backbone: blocks must be >= 1");
        std::size_t off = 0;
        auto add = [&](int in, int out) {
            detail::ConvLayout L{in, out, off};
            off += L.size();
            return L;
        };
        stem_ = add(3, cfg.channels);
        for (int b = 0; b < cfg.blocks; ++b) blocks_.push_back({add(cfg.channels, cfg.channels), add(cfg.channels, cfg.channels)});
        head_ = add(cfg.channels, 3);
        params_.assign(off, T(0));
        initialize();
    }

    std::string name() const override { return "tiny"; }
    nlohmann::json hyperparameters() const override { return cfg_.to_json(); }
    std::unique_ptr<DehazeModel<T>> clone() const override { return std::make_unique<TinyBackbone>(*this); }
    std::span<T> parameters() override { return params_; }
    std::span<const T> parameters() const override { return params_; }
    const TinyBackboneConfig& config() const { return cfg_; }

    Image<T> forward(const Image<T>& input,
                     std::unique_ptr<typename DehazeModel<T>::Trace>* trace = nullptr) const override {
        require_min_size(input.height(), input.width(), "tiny_backbone");
        auto tr = std::make_unique<TinyTrace>();
        tr->x = detail::to_planar(input);
        tr->z0 = detail::conv3x3<T>(tr->x, stem_, params_);
        detail::Tensor3<T> h = detail::silu(tr->z0);
        for (const auto& blk : blocks_) {
            tr->h_in.push_back(h);
            tr->za.push_back(detail::conv3x3<T>(h, blk.a, params_));
            tr->ta.push_back(detail::silu(tr->za.back()));
            const auto d = detail::conv3x3<T>(tr->ta.back(), blk.b, params_);
            for (std::size_t i = 0; i < h.v.size(); ++i) h.v[i] += d.v[i];
        }
        const auto corr = detail::conv3x3<T>(h, head_, params_);
        tr->h_last = std::move(h);
        detail::Tensor3<T> out = tr->x;
        for (std::size_t i = 0; i < out.v.size(); ++i) out.v[i] += corr.v[i];
        if (trace) *trace = std::move(tr);
        return detail::from_planar(out);
    }

    void backward(const typename DehazeModel<T>::Trace& trace, const Image<T>& grad_output,
                  std::span<T> grad_params) const override {
        const auto* tr = dynamic_cast<const TinyTrace*>(&trace);
        if (!tr) throw ContractError("tiny_backbone: foreign trace");
        if (grad_params.size() != params_.size()) throw DimensionError("tiny_backbone: gradient buffer size");
        const auto dout = detail::to_planar(grad_output);
        detail::Tensor3<T> dh = detail::conv3x3_backward<T>(tr->h_last, dout, head_, params_, grad_params, true);
        for (int b = static_cast<int>(blocks_.size()) - 1; b >= 0; --b) {
            const auto& blk = blocks_[b];
            const auto dta = detail::conv3x3_backward<T>(tr->ta[b], dh, blk.b, params_, grad_params, true);
            const auto dza = detail::silu_backward(tr->za[b], dta);
            const auto dh_in = detail::conv3x3_backward<T>(tr->h_in[b], dza, blk.a, params_, grad_params, true);
            for (std::size_t i = 0; i < dh.v.size(); ++i) dh.v[i] += dh_in.v[i];
        }
        const auto dz0 = detail::silu_backward(tr->z0, dh);
        detail::conv3x3_backward<T>(tr->x, dz0, stem_, params_, grad_params, false);
    }

private:
    struct Block {
        detail::ConvLayout a, b;
    };

    struct TinyTrace final : DehazeModel<T>::Trace {
        detail::Tensor3<T> x, z0, h_last;
        std::vector<detail::Tensor3<T>> h_in, za, ta;
    };

    void initialize() {
        std::mt19937_64 rng(cfg_.seed);
        auto fill = [&](const detail::ConvLayout& L, double scale) {
            std::normal_distribution<double> nd(0.0, scale * std::sqrt(2.0 / (L.in * 9.0)));
            for (std::size_t i = 0; i < L.weight_count(); ++i) params_[L.offset + i] = static_cast<T>(nd(rng));
        };
        fill(stem_, 1.0);
        for (const auto& blk : blocks_) {
            fill(blk.a, 1.0);
            fill(blk.b, 0.1);
        }
        if (!cfg_.zero_init_output) fill(head_, 0.01);
    }

    TinyBackboneConfig cfg_;
    detail::ConvLayout stem_, head_;
    std::vector<Block> blocks_;
    std::vector<T> params_;
};

template <typename T>
using BackboneFactory = std::function<std::unique_ptr<DehazeModel<T>>(const nlohmann::json& hyperparameters)>;

// Name → factory map used to construct backbones from config and checkpoints.
template <typename T>
class BackboneRegistry {
public:
    struct WithBuiltins {};

    BackboneRegistry() = default;
    explicit BackboneRegistry(WithBuiltins) {
        add("tiny", [](const nlohmann::json& j) {
            return std::make_unique<TinyBackbone<T>>(TinyBackboneConfig::from_json(j));
        });
    }

    void add(const std::string& name, BackboneFactory<T> factory) {
        std::lock_guard lock(mutex_);
        if (!factories_.emplace(name, std::move(factory)).second)
            throw RegistrationError("backbone already registered: " + name);
    }

    std::unique_ptr<DehazeModel<T>> create(const std::string& name, const nlohmann::json& hyperparameters = {}) const {
        BackboneFactory<T> f;
        {
            std::lock_guard lock(mutex_);
            auto it = factories_.find(name);
            if (it == factories_.end()) {
                std::string known;
                for (const auto& [k, _] : factories_) known += (known.empty() ? "" : ", ") + k;
                throw LookupError("unknown backbone '" + name + "' (registered: " + known + ")");
            }
            f = it->second;
        }
        return f(hyperparameters.is_null() ? nlohmann::json::object() : hyperparameters);
    }

    static BackboneRegistry& global() {
        static BackboneRegistry r{WithBuiltins{}};
        return r;
    }

private:
    mutable std::mutex mutex_;
    std::map<std::string, BackboneFactory<T>> factories_;
};

template <typename T>
void register_backbone(const std::string& name, BackboneFactory<T> factory) {
    BackboneRegistry<T>::global().add(name, std::move(factory));
}

template <typename T>
std::unique_ptr<TinyBackbone<T>> tiny_backbone(int channels, int blocks, unsigned long long seed,
                                               bool zero_init_output = false) {
    return std::make_unique<TinyBackbone<T>>(TinyBackboneConfig{channels, blocks, seed, zero_init_output});
}

}  // namespace hazeclip
