#pragma once

#include <algorithm>
#include <cmath>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "hazeclip/encoder.hpp"
#include "hazeclip/errors.hpp"

namespace hazeclip {

enum class PromptRole { sky, non_sky, enhance };

inline std::string_view role_name(PromptRole r) {
    switch (r) {
        case PromptRole::sky: return "sky";
        case PromptRole::non_sky: return "non_sky";
        case PromptRole::enhance: return "enhance";
    }
    return "?";
}

inline PromptRole parse_role(std::string_view s) {
    if (s == "sky") return PromptRole::sky;
    if (s == "non_sky" || s == "non-sky") return PromptRole::non_sky;
    if (s == "enhance") return PromptRole::enhance;
    throw ArgumentError("unknown prompt role: " + std::string(s));
}

inline constexpr std::string_view kEntityPlaceholder = "<entity>";

// Positive templates describe the desired (haze-free) result, negative
// templates the undesired (hazy) one.
struct PromptTemplates {
    std::vector<std::string> positive;
    std::vector<std::string> negative;
};

inline PromptTemplates default_templates() {
    return {{"a picture of <entity> without fog.", "a photo of a clear <entity>."},
            {"a picture of <entity> in the fog.", "a photo of a foggy <entity>."}};
}

inline std::vector<std::string> default_entities(PromptRole role) {
    switch (role) {
        case PromptRole::sky: return {"sky"};
        case PromptRole::non_sky: return {"building", "people", "scene"};
        case PromptRole::enhance: return {};
    }
    return {};
}

struct PromptSet {
    PromptRole role = PromptRole::non_sky;
    std::vector<std::string> positives;
    std::vector<std::string> negatives;

    // Number of distinct negative classes after ensembling.
    std::size_t k() const { return role == PromptRole::enhance ? negatives.size() : (negatives.empty() ? 0 : 1); }

    void validate() const {
        if (positives.empty() || negatives.empty())
            throw ArgumentError("prompt set '" + std::string(role_name(role)) +
                                "' needs at least one positive and one negative prompt");
    }
};

inline std::string expand_template(const std::string& tmpl, const std::string& entity) {
    const auto pos = tmpl.find(kEntityPlaceholder);
    if (pos == std::string::npos || tmpl.find(kEntityPlaceholder, pos + 1) != std::string::npos)
        throw FormatError("template must contain exactly one <entity> placeholder: \"" + tmpl + "\"");
    std::string out = tmpl;
    out.replace(pos, kEntityPlaceholder.size(), entity);
    return out;
}

// Cartesian expansion templates × entities, per polarity.
inline PromptSet build_prompt_set(PromptRole role, const std::vector<std::string>& entities,
                                  const PromptTemplates& templates) {
    if (entities.empty()) throw ArgumentError("build_prompt_set: entity list is empty");
    PromptSet set{role, {}, {}};
    for (const auto& t : templates.positive)
        for (const auto& e : entities) set.positives.push_back(expand_template(t, e));
    for (const auto& t : templates.negative)
        for (const auto& e : entities) set.negatives.push_back(expand_template(t, e));
    return set;
}

inline PromptSet literal_prompt_set(PromptRole role, std::vector<std::string> positives,
                                    std::vector<std::string> negatives) {
    PromptSet set{role, std::move(positives), std::move(negatives)};
    set.validate();
    return set;
}

inline PromptSet default_enhance_set() {
    return literal_prompt_set(PromptRole::enhance, {"a sharp, colorful, high-quality photo"},
                              {"a dull, dirty, low-quality photo", "a grey, low-contrast photo"});
}

struct PromptSets {
    PromptSet sky;
    PromptSet non_sky;
    PromptSet enhance;
};

inline PromptSets default_prompt_sets() {
    const auto t = default_templates();
    return {build_prompt_set(PromptRole::sky, default_entities(PromptRole::sky), t),
            build_prompt_set(PromptRole::non_sky, default_entities(PromptRole::non_sky), t), default_enhance_set()};
}

// Reads one role from a config object. Recognised keys: "templates"
// {"positive": [...], "negative": [...]}, "entities" [...], and literal
// "positives"/"negatives" lists appended after template expansion.
inline PromptSet prompt_set_from_json(PromptRole role, const nlohmann::json& j) {
    PromptSet set{role, {}, {}};
    if (j.contains("templates") || j.contains("entities")) {
        PromptTemplates t = default_templates();
        if (j.contains("templates")) {
            const auto& tj = j.at("templates");
            if (tj.contains("positive")) t.positive = tj.at("positive").get<std::vector<std::string>>();
            if (tj.contains("negative")) t.negative = tj.at("negative").get<std::vector<std::string>>();
        }
        const auto entities =
            j.contains("entities") ? j.at("entities").get<std::vector<std::string>>() : default_entities(role);
        set = build_prompt_set(role, entities, t);
    }
    if (j.contains("positives"))
        for (auto& s : j.at("positives").get<std::vector<std::string>>()) set.positives.push_back(s);
    if (j.contains("negatives"))
        for (auto& s : j.at("negatives").get<std::vector<std::string>>()) set.negatives.push_back(s);
    set.validate();
    return set;
}

inline PromptSets prompt_sets_from_json(const nlohmann::json& j) {
    PromptSets sets = default_prompt_sets();
    if (j.contains("sky")) sets.sky = prompt_set_from_json(PromptRole::sky, j.at("sky"));
    if (j.contains("non_sky")) sets.non_sky = prompt_set_from_json(PromptRole::non_sky, j.at("non_sky"));
    if (j.contains("enhance")) sets.enhance = prompt_set_from_json(PromptRole::enhance, j.at("enhance"));
    return sets;
}

inline nlohmann::json to_json(const PromptSet& s) {
    return {{"role", role_name(s.role)}, {"positives", s.positives}, {"negatives", s.negatives}, {"k", s.k()}};
}

template <typename T>
struct EnsembledPrompts {
    Embedding<T> positive;
    std::vector<Embedding<T>> negatives;

    std::size_t k() const noexcept { return negatives.size(); }
};

namespace detail {

// Mean of the members' embeddings, renormalised. Members are encoded in
// sorted order so the result does not depend on list order.
template <typename T>
Embedding<T> average_embeddings(std::vector<std::string> texts, const VisionLanguageEncoder<T>& encoder) {
    std::sort(texts.begin(), texts.end());
    std::vector<T> acc(encoder.dim(), T(0));
    for (const auto& t : texts) {
        const auto e = encoder.encode_text(t);
        for (std::size_t i = 0; i < acc.size(); ++i) acc[i] += e.values[i];
    }
    for (T& v : acc) v /= static_cast<T>(texts.size());
    return {linalg::normalized<T>(acc)};
}

}  // namespace detail

// Sky and non-sky sets collapse to one positive and one negative embedding.
// The enhancing set averages its positives but keeps every negative separate.
template <typename T>
EnsembledPrompts<T> ensemble_embedding(const PromptSet& set, const VisionLanguageEncoder<T>& encoder) {
    set.validate();
    EnsembledPrompts<T> out;
    out.positive = detail::average_embeddings(set.positives, encoder);
    if (set.role == PromptRole::enhance) {
        for (const auto& n : set.negatives) out.negatives.push_back(detail::average_embeddings<T>({n}, encoder));
    } else {
        out.negatives.push_back(detail::average_embeddings(set.negatives, encoder));
    }
    return out;
}

template <typename T>
struct EnsembledSets {
    EnsembledPrompts<T> sky;
    EnsembledPrompts<T> non_sky;
    EnsembledPrompts<T> enhance;
};

template <typename T>
EnsembledSets<T> ensemble_all(const PromptSets& sets, const VisionLanguageEncoder<T>& encoder) {
    return {ensemble_embedding(sets.sky, encoder), ensemble_embedding(sets.non_sky, encoder),
            ensemble_embedding(sets.enhance, encoder)};
}

// Softmax over cosine similarities to {positive, negatives...}; index 0 is
// the positive class. Embeddings are assumed unit-norm.
template <typename T>
std::vector<T> class_probabilities(const Embedding<T>& image_emb, const EnsembledPrompts<T>& prompts,
                                   T temperature = T(1)) {
    if (prompts.negatives.empty()) throw ArgumentError("prompt ensemble has no negatives");
    if (!(temperature > T(0))) throw ArgumentError("softmax temperature must be positive");
    std::vector<T> logits;
    logits.reserve(prompts.k() + 1);
    auto add = [&](const Embedding<T>& t) {
        if (t.dim() != image_emb.dim()) throw DimensionError("embedding dimension mismatch");
        logits.push_back(linalg::dot<T>(image_emb.values, t.values) / temperature);
    };
    add(prompts.positive);
    for (const auto& n : prompts.negatives) add(n);
    const T mx = *std::max_element(logits.begin(), logits.end());
    T z = 0;
    for (T& l : logits) {
        l = std::exp(l - mx);
        z += l;
    }
    for (T& l : logits) l /= z;
    return logits;
}

template <typename T>
T positive_probability(const Embedding<T>& image_emb, const EnsembledPrompts<T>& prompts, T temperature = T(1)) {
    return class_probabilities(image_emb, prompts, temperature).front();
}

}  // namespace hazeclip
