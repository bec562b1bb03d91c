#pragma once

#include <array>
#include <cmath>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "hazeclip/backbone.hpp"
#include "hazeclip/encoder.hpp"
#include "hazeclip/image.hpp"
#include "hazeclip/prompts.hpp"

namespace hazeclip {

struct LossWeights {
    double lambda1 = 0.5;  // enhancing-set weight in the guidance loss
    double lambda2 = 0.1;  // fidelity weight in the total loss
    std::array<double, kLayerCount> alpha{1.0, 1.0, 1.0, 1.0, 0.5};

    void validate() const {
        if (!(lambda1 >= 0) || !(lambda2 >= 0)) throw ArgumentError("loss weights must be nonnegative");
        for (double a : alpha)
            if (!(a >= 0)) throw ArgumentError("alpha weights must be nonnegative");
    }
};

// Which quantity the prompt loss minimises. The default minimises
// −log p(positive); `literal` minimises the raw softmax mass on the positive
// prompt and is kept for diagnostics.
enum class LossOrientation { neg_log_positive, literal };

// mask_output: run the network once and mask its output per region.
// mask_input:  run the network on each masked input separately.
enum class RegionMode { mask_output, mask_input };

inline RegionMode parse_region_mode(std::string_view s) {
    if (s == "mask-output" || s == "mask_output") return RegionMode::mask_output;
    if (s == "mask-input" || s == "mask_input") return RegionMode::mask_input;
    throw ArgumentError("unknown region mode: " + std::string(s));
}

inline LossOrientation parse_orientation(std::string_view s) {
    if (s == "neg-log-positive" || s == "neg_log_positive") return LossOrientation::neg_log_positive;
    if (s == "literal") return LossOrientation::literal;
    throw ArgumentError("unknown loss orientation: " + std::string(s));
}

struct LossOptions {
    LossWeights weights;
    RegionMode region_mode = RegionMode::mask_output;
    bool region_split = true;
    bool enhance_set = true;
    double temperature = 1.0;
    LossOrientation orientation = LossOrientation::neg_log_positive;
    Rgb fill = kMidGray;
};

struct LossBreakdown {
    double total = 0;
    double guidance = 0;
    double fidelity = 0;
    double sky = 0;
    double non_sky = 0;
    double enhance = 0;
    bool sky_applied = false;
    bool non_sky_applied = false;
    bool enhance_applied = false;

    nlohmann::json to_json() const {
        nlohmann::json j{{"total", total}, {"guidance", guidance}, {"fidelity", fidelity}};
        j["sky"] = sky_applied ? nlohmann::json(sky) : nlohmann::json(nullptr);
        j["non_sky"] = non_sky_applied ? nlohmann::json(non_sky) : nlohmann::json(nullptr);
        j["enhance"] = enhance_applied ? nlohmann::json(enhance) : nlohmann::json(nullptr);
        return j;
    }
};

// Prompt loss on an already computed image embedding. When `grad_embedding`
// is given it receives dLoss/dEmbedding.
template <typename T>
T clip_prompt_loss_from_embedding(const Embedding<T>& emb, const EnsembledPrompts<T>& prompts, T temperature = T(1),
                                  LossOrientation orientation = LossOrientation::neg_log_positive,
                                  std::vector<T>* grad_embedding = nullptr) {
    const auto p = class_probabilities(emb, prompts, temperature);
    const T loss = orientation == LossOrientation::neg_log_positive ? -std::log(p[0]) : p[0];
    if (grad_embedding) {
        grad_embedding->assign(emb.dim(), T(0));
        for (std::size_t j = 0; j < p.size(); ++j) {
            const T onehot = j == 0 ? T(1) : T(0);
            // dLoss/dlogit_j, then through logit_j = cos_j / temperature.
            const T dlogit = orientation == LossOrientation::neg_log_positive ? p[j] - onehot : p[0] * (onehot - p[j]);
            const auto& t = j == 0 ? prompts.positive : prompts.negatives[j - 1];
            for (std::size_t i = 0; i < emb.dim(); ++i) (*grad_embedding)[i] += dlogit / temperature * t.values[i];
        }
    }
    return loss;
}

// Contrastive prompt loss of an image. `grad_image`, if given, receives
// dLoss/dImage.
template <typename T>
T clip_prompt_loss(const Image<T>& image, const EnsembledPrompts<T>& prompts, const VisionLanguageEncoder<T>& encoder,
                   T temperature = T(1), LossOrientation orientation = LossOrientation::neg_log_positive,
                   Image<T>* grad_image = nullptr) {
    const auto emb = encoder.encode_image(image);
    std::vector<T> g;
    const T loss = clip_prompt_loss_from_embedding(emb, prompts, temperature, orientation, grad_image ? &g : nullptr);
    if (grad_image) *grad_image = encoder.encode_image_vjp(image, g);
    return loss;
}

// Σ_l α_l ‖Φ^l(output) − Φ^l(input)‖₂ over the five encoder layers.
template <typename T>
T fidelity_loss(const Image<T>& input, const Image<T>& output, const VisionLanguageEncoder<T>& encoder,
                std::span<const double> alpha, Image<T>* grad_output = nullptr) {
    if (alpha.size() != static_cast<std::size_t>(kLayerCount))
        throw ContractError("fidelity_loss: expected " + std::to_string(kLayerCount) + " layer weights");
    if (!input.same_shape(output)) throw DimensionError("fidelity_loss: input/output shapes differ");
    const auto fi = encoder.image_layer_features(input);
    const auto fo = encoder.image_layer_features(output);
    LayerFeatures<T> grads;
    T loss = 0;
    for (int l = 0; l < kLayerCount; ++l) {
        if (fi.layers[l].size() != fo.layers[l].size()) throw ContractError("fidelity_loss: layer shape mismatch");
        std::vector<T> diff(fi.layers[l].size());
        for (std::size_t i = 0; i < diff.size(); ++i) diff[i] = fo.layers[l][i] - fi.layers[l][i];
        const T n = linalg::norm<T>(diff);
        loss += static_cast<T>(alpha[l]) * n;
        grads.layers[l].assign(diff.size(), T(0));
        grads.shapes[l] = fo.shapes[l];
        if (grad_output && n > T(0))
            for (std::size_t i = 0; i < diff.size(); ++i) grads.layers[l][i] = static_cast<T>(alpha[l]) * diff[i] / n;
    }
    if (grad_output) *grad_output = encoder.layer_features_vjp(output, grads);
    return loss;
}

namespace detail {

template <typename T>
void add_into(Image<T>& acc, const Image<T>& g, T scale = T(1)) {
    auto a = acc.values();
    auto b = g.values();
    for (std::size_t i = 0; i < a.size(); ++i) a[i] += scale * b[i];
}

template <typename T>
struct ObjectiveContext {
    const Image<T>& input;
    const RegionMask& sky;
    const DehazeModel<T>& model;
    const VisionLanguageEncoder<T>& encoder;
    const EnsembledSets<T>& sets;
    const LossOptions& opt;
};

// Shared evaluation of the guidance loss and, optionally, the fidelity term.
// With a non-empty `grad_params`, dTotal/dParameters is accumulated into it.
template <typename T>
LossBreakdown evaluate_objective(const ObjectiveContext<T>& ctx, bool with_fidelity, std::span<T> grad_params) {
    const auto& opt = ctx.opt;
    opt.weights.validate();
    if (!ctx.sky.matches(ctx.input)) throw DimensionError("sky mask does not match the input image");
    const bool want_grad = !grad_params.empty();
    const T temp = static_cast<T>(opt.temperature);
    const T lambda1 = static_cast<T>(opt.weights.lambda1);
    const T lambda2 = static_cast<T>(opt.weights.lambda2);

    LossBreakdown b;
    std::unique_ptr<typename DehazeModel<T>::Trace> trace;
    const Image<T> out = ctx.model.forward(ctx.input, want_grad ? &trace : nullptr);
    Image<T> grad_out(out.height(), out.width());
    Image<T> g;
    Image<T>* gp = want_grad ? &g : nullptr;

    const RegionMask non_sky = ctx.sky.complement();
    const bool split = opt.region_split;
    const bool do_sky = split && ctx.sky.any();
    const bool do_non_sky = !split || non_sky.any();

    // One prompt term on a region: masked output, or the network re-run on
    // the masked input.
    auto region_term = [&](const RegionMask& region, const EnsembledPrompts<T>& prompts) -> double {
        if (opt.region_mode == RegionMode::mask_output) {
            const T v = clip_prompt_loss(composite(out, region, opt.fill), prompts, ctx.encoder, temp,
                                         opt.orientation, gp);
            if (want_grad) add_into(grad_out, composite_vjp(g, region));
            return v;
        }
        std::unique_ptr<typename DehazeModel<T>::Trace> tr;
        const Image<T> o = ctx.model.forward(composite(ctx.input, region, opt.fill), want_grad ? &tr : nullptr);
        const T v = clip_prompt_loss(o, prompts, ctx.encoder, temp, opt.orientation, gp);
        if (want_grad) ctx.model.backward(*tr, g, grad_params);
        return v;
    };

    if (do_sky) {
        b.sky = region_term(ctx.sky, ctx.sets.sky);
        b.sky_applied = true;
    }
    if (do_non_sky) {
        if (split) {
            b.non_sky = region_term(non_sky, ctx.sets.non_sky);
        } else {
            b.non_sky = clip_prompt_loss(out, ctx.sets.non_sky, ctx.encoder, temp, opt.orientation, gp);
            if (want_grad) add_into(grad_out, g);
        }
        b.non_sky_applied = true;
    }
    if (opt.enhance_set) {
        b.enhance = clip_prompt_loss(out, ctx.sets.enhance, ctx.encoder, temp, opt.orientation, gp);
        if (want_grad) add_into(grad_out, g, lambda1);
        b.enhance_applied = true;
    }
    b.guidance = b.sky + b.non_sky + opt.weights.lambda1 * b.enhance;

    if (with_fidelity) {
        b.fidelity = fidelity_loss(ctx.input, out, ctx.encoder, opt.weights.alpha, gp);
        if (want_grad) add_into(grad_out, g, lambda2);
    }
    b.total = b.guidance + opt.weights.lambda2 * b.fidelity;

    if (want_grad) ctx.model.backward(*trace, grad_out, grad_params);
    return b;
}

}  // namespace detail

// L_c = L_Ts(sky region) + L_Tn(non-sky region) + λ₁·L_Te(whole output).
template <typename T>
LossBreakdown guidance_loss(const Image<T>& input, const RegionMask& sky, const DehazeModel<T>& model,
                            const VisionLanguageEncoder<T>& encoder, const EnsembledSets<T>& sets,
                            const LossOptions& opt = {}) {
    return detail::evaluate_objective<T>({input, sky, model, encoder, sets, opt}, false, {});
}

// L = L_c + λ₂·L_f. The network runs once per call in mask-output mode;
// pass `grad_params` (sized to the model's parameters) to accumulate the
// gradient of the total with respect to every parameter.
template <typename T>
LossBreakdown total_loss(const Image<T>& input, const RegionMask& sky, const DehazeModel<T>& model,
                         const VisionLanguageEncoder<T>& encoder, const EnsembledSets<T>& sets,
                         const LossOptions& opt = {}, std::span<T> grad_params = {}) {
    if (!grad_params.empty() && grad_params.size() != model.parameter_count())
        throw DimensionError("total_loss: gradient buffer does not match model parameters");
    return detail::evaluate_objective<T>({input, sky, model, encoder, sets, opt}, true, grad_params);
}

}  // namespace hazeclip
