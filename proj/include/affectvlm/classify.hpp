#pragma once

// Zero-shot classification by prompt matching: the fused image embedding
// is compared with the mean text embedding of each class's prompt set.

#include <array>
#include <cmath>
#include <cstdint>
#include <span>
#include <vector>

#include "encoders.hpp"
#include "errors.hpp"
#include "prompts.hpp"
#include "types.hpp"

namespace avlm {

inline constexpr double kInferenceTemperature = 0.07;

// How class prompt sets are drawn at inference time.
struct PromptSetSpec {
    std::size_t per_class = 8;
    std::uint64_t seed = 0;
};

// d x 6 matrix; column c is the normalized mean embedding of class c's prompts.
inline Mat class_text_embeddings(const ModelParams& p, const PromptBank& bank, const PromptSetSpec& spec) {
    const int d = p.config.embed_dim;
    Mat out(d, static_cast<Eigen::Index>(kNumEmotions));
    TextEncoderPass pass;
    for (std::size_t c = 0; c < kNumEmotions; ++c) {
        std::vector<TokenSeq> tokens;
        for (const auto& cp : class_prompt_set(bank, kAllEmotions[c], spec.per_class, spec.seed))
            tokens.push_back(tokenize(cp.text));
        if (tokens.empty()) throw InvalidInput("class prompt set is empty");
        const Mat& e = pass.forward(p, tokens);
        Vec m = e.rowwise().mean();
        const double n = m.norm();
        if (n < enc_detail::kNormFloor) {
            m.setZero();
            m(0) = 1.0;
        } else {
            m /= n;
        }
        out.col(static_cast<Eigen::Index>(c)) = m;
    }
    return out;
}

inline Mat class_text_embeddings(const ModelParams& p, const PromptSetSpec& spec = {}) {
    return class_text_embeddings(p, default_prompt_bank(), spec);
}

// argmax with ties going to the lowest index.
template <class V>
std::size_t argmax_first(const V& v) {
    std::size_t best = 0;
    for (std::size_t i = 1; i < static_cast<std::size_t>(v.size()); ++i)
        if (v[i] > v[best]) best = i;
    return best;
}

inline std::array<double, kNumEmotions> softmax(const std::array<double, kNumEmotions>& scores, double temperature) {
    double mx = scores[0];
    for (double s : scores) mx = std::max(mx, s);
    std::array<double, kNumEmotions> out{};
    double z = 0;
    for (std::size_t c = 0; c < kNumEmotions; ++c) {
        out[c] = std::exp((scores[c] - mx) / temperature);
        z += out[c];
    }
    for (double& v : out) v /= z;
    return out;
}

struct Classification {
    std::array<double, kNumEmotions> scores{};
    std::array<double, kNumEmotions> probabilities{};
    Emotion predicted = Emotion::happy;
    std::vector<Emotion> per_view;
};

inline std::array<double, kNumEmotions> class_scores(const Mat& class_emb, const Vec& e) {
    std::array<double, kNumEmotions> s{};
    for (std::size_t c = 0; c < kNumEmotions; ++c) s[c] = class_emb.col(static_cast<Eigen::Index>(c)).dot(e);
    return s;
}

// Fuses the given views (mean, then renormalize) and scores every class.
inline Classification classify_views(const ModelParams& p, const Mat& class_emb, std::span<const Image* const> views) {
    if (views.empty()) throw InvalidInput("classify: no views");
    if (class_emb.rows() != p.config.embed_dim || class_emb.cols() != static_cast<Eigen::Index>(kNumEmotions))
        throw ShapeError("classify: class embedding matrix has the wrong shape");
    ImageEncoderPass pass;
    const Mat& e = pass.forward(p, views);
    Classification out;
    for (Eigen::Index v = 0; v < e.cols(); ++v)
        out.per_view.push_back(kAllEmotions[argmax_first(class_scores(class_emb, e.col(v)))]);
    Vec fused = e.rowwise().mean();
    const double n = fused.norm();
    if (n < enc_detail::kNormFloor) {
        fused.setZero();
        fused(0) = 1.0;
    } else {
        fused /= n;
    }
    out.scores = class_scores(class_emb, fused);
    out.probabilities = softmax(out.scores, kInferenceTemperature);
    out.predicted = kAllEmotions[argmax_first(out.scores)];
    return out;
}

inline Classification classify_sample(const ModelParams& p, const Mat& class_emb, const MultiviewSample& s,
                                      bool frontal_only = false) {
    std::vector<const Image*> views;
    for (std::size_t v = 0; v < (frontal_only ? 1 : kNumViews); ++v) views.push_back(&s[v].image);
    return classify_views(p, class_emb, views);
}

}  // namespace avlm
