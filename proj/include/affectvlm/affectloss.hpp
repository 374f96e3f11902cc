#pragma once

// Multiview contrastive + triplet loss with a shared learnable margin:
//
//   L = sum_{same emotion (i,j)} (1 - sim(i,j))
//     + sum_{different emotion (k,l)} max(0, sim(k,l) - alpha)
//     + sum_{triplets} max(0, |a - p|^2 - |a - n|^2 + alpha)
//
// Terms are summed, not averaged, over the pair and triplet sets.

#include <Eigen/Dense>

#include <array>
#include <cmath>
#include <cstdint>
#include <set>
#include <span>
#include <string_view>
#include <utility>
#include <vector>

#include "encoders.hpp"
#include "errors.hpp"
#include "rng.hpp"
#include "types.hpp"

namespace avlm {

enum class SimilarityKind : std::uint8_t { cosine = 0, negative_euclidean };

constexpr std::string_view to_string(SimilarityKind k) {
    return k == SimilarityKind::cosine ? "cosine" : "negative-euclidean";
}
inline SimilarityKind parse_similarity(std::string_view s) {
    if (s == "cosine") return SimilarityKind::cosine;
    if (s == "negative-euclidean") return SimilarityKind::negative_euclidean;
    throw InvalidInput("unknown similarity '" + std::string(s) + "'");
}

// Cosine assumes unit-norm inputs and reduces to the dot product.
template <class A, class B>
double similarity(const Eigen::MatrixBase<A>& a, const Eigen::MatrixBase<B>& b, SimilarityKind kind) {
    if (kind == SimilarityKind::cosine) return a.dot(b);
    return -(a - b).norm();
}

// Role of an embedding inside a training batch. Text embeddings carry the
// view `std::nullopt`.
struct BatchItem {
    Emotion emotion = Emotion::happy;
    std::optional<ViewName> view;  // nullopt: text prompt
    std::uint32_t sample_id = 0;

    bool is_text() const { return !view.has_value(); }
};

struct Triplet {
    std::size_t anchor, positive, negative;
    friend bool operator==(const Triplet&, const Triplet&) = default;
};

struct BatchPairs {
    std::vector<std::pair<std::size_t, std::size_t>> positives;
    std::vector<std::pair<std::size_t, std::size_t>> negatives;
    std::vector<Triplet> triplets;
};

// Pair policy:
//  positives: every unordered same-emotion pair of distinct embeddings
//             (image-image across views and samples, image-text);
//  negatives: every unordered different-emotion pair (image-image,
//             image-text); text-text pairs are never formed;
//  triplets:  one per sample with a frontal view. Anchor = that frontal
//             embedding; positive = seeded pick among same-emotion image
//             embeddings from another view (falling back to any other
//             same-emotion image); negative = seeded pick among images of a
//             different emotion.
inline BatchPairs mine_pairs(std::span<const BatchItem> batch, std::uint64_t seed) {
    std::set<Emotion> emotions;
    for (const auto& it : batch) emotions.insert(it.emotion);
    if (emotions.size() < 2)
        throw ProtocolError("mine_pairs: batch holds a single emotion; the batch sampler must rebalance so that "
                            "every batch has at least two emotions");

    BatchPairs out;
    const std::size_t n = batch.size();
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = i + 1; j < n; ++j) {
            if (batch[i].is_text() && batch[j].is_text()) continue;
            if (batch[i].emotion == batch[j].emotion) out.positives.emplace_back(i, j);
            else out.negatives.emplace_back(i, j);
        }

    std::vector<std::size_t> cand;
    for (std::size_t a = 0; a < n; ++a) {
        if (batch[a].view != ViewName::frontal) continue;
        Rng rng{seed, batch[a].sample_id, a, 0x7219ULL};
        cand.clear();
        for (std::size_t j = 0; j < n; ++j)
            if (j != a && !batch[j].is_text() && batch[j].emotion == batch[a].emotion && batch[j].view != batch[a].view)
                cand.push_back(j);
        if (cand.empty())
            for (std::size_t j = 0; j < n; ++j)
                if (j != a && !batch[j].is_text() && batch[j].emotion == batch[a].emotion) cand.push_back(j);
        if (cand.empty()) continue;
        const std::size_t pos = cand[rng.below(cand.size())];
        cand.clear();
        for (std::size_t j = 0; j < n; ++j)
            if (!batch[j].is_text() && batch[j].emotion != batch[a].emotion) cand.push_back(j);
        if (cand.empty()) continue;
        const std::size_t neg = cand[rng.below(cand.size())];
        out.triplets.push_back({a, pos, neg});
    }
    return out;
}

struct LossBreakdown {
    double l_mc_pos = 0;
    double l_mc_neg = 0;
    double l_mt = 0;
    double total = 0;
    std::size_t active_neg_pairs = 0;
    std::size_t active_triplets = 0;
};

struct LossOptions {
    SimilarityKind similarity = SimilarityKind::cosine;
    double temperature = 0.0;  // > 0 replaces max(0, x) by t*log(1 + exp(x/t))
};

struct LossResult {
    LossBreakdown breakdown;
    Mat d_embeddings;  // same shape as the embedding matrix
    double d_alpha = 0;
};

namespace loss_detail {

struct Hinge {
    double value;
    double slope;  // subgradient; 0 at the kink
};

inline Hinge hinge(double x, double temperature) {
    if (temperature <= 0) return x > 0 ? Hinge{x, 1.0} : Hinge{0.0, 0.0};
    const double u = x / temperature;
    const double value = temperature * (std::max(u, 0.0) + std::log1p(std::exp(-std::abs(u))));
    const double slope = u >= 0 ? 1.0 / (1.0 + std::exp(-u)) : std::exp(u) / (1.0 + std::exp(u));
    return {value, slope};
}

// Adds scale * d sim(a, b) / d a and d/d b into the gradient columns.
inline void add_similarity_grad(const Mat& E, std::size_t a, std::size_t b, double scale, SimilarityKind kind,
                                Mat& dE) {
    const auto ia = static_cast<Eigen::Index>(a), ib = static_cast<Eigen::Index>(b);
    if (kind == SimilarityKind::cosine) {
        dE.col(ia) += scale * E.col(ib);
        dE.col(ib) += scale * E.col(ia);
        return;
    }
    const Vec diff = E.col(ia) - E.col(ib);
    const double n = diff.norm();
    if (n == 0) return;
    dE.col(ia) -= scale * diff / n;
    dE.col(ib) += scale * diff / n;
}

}  // namespace loss_detail

// Forward and backward of the loss for embeddings stored as columns of E.
inline LossResult evaluate_loss(const Mat& E, const BatchPairs& pairs, double alpha, const LossOptions& opt = {}) {
    if (opt.temperature < 0) throw InvalidInput("loss temperature must be >= 0");
    using loss_detail::add_similarity_grad;
    using loss_detail::hinge;
    LossResult r;
    r.d_embeddings = Mat::Zero(E.rows(), E.cols());
    auto& b = r.breakdown;
    auto col = [&](std::size_t i) { return E.col(static_cast<Eigen::Index>(i)); };

    for (const auto& [i, j] : pairs.positives) {
        b.l_mc_pos += 1.0 - similarity(col(i), col(j), opt.similarity);
        add_similarity_grad(E, i, j, -1.0, opt.similarity, r.d_embeddings);
    }
    for (const auto& [k, l] : pairs.negatives) {
        const double x = similarity(col(k), col(l), opt.similarity) - alpha;
        const auto h = hinge(x, opt.temperature);
        b.l_mc_neg += h.value;
        if (x > 0) ++b.active_neg_pairs;
        if (h.slope != 0) {
            add_similarity_grad(E, k, l, h.slope, opt.similarity, r.d_embeddings);
            r.d_alpha -= h.slope;
        }
    }
    for (const auto& t : pairs.triplets) {
        const Vec ap = col(t.anchor) - col(t.positive);
        const Vec an = col(t.anchor) - col(t.negative);
        const double x = ap.squaredNorm() - an.squaredNorm() + alpha;
        const auto h = hinge(x, opt.temperature);
        b.l_mt += h.value;
        if (x > 0) ++b.active_triplets;
        if (h.slope != 0) {
            const auto ia = static_cast<Eigen::Index>(t.anchor);
            const auto ip = static_cast<Eigen::Index>(t.positive);
            const auto in = static_cast<Eigen::Index>(t.negative);
            r.d_embeddings.col(ia) += h.slope * 2.0 * (col(t.negative) - col(t.positive));
            r.d_embeddings.col(ip) -= h.slope * 2.0 * ap;
            r.d_embeddings.col(in) += h.slope * 2.0 * an;
            r.d_alpha += h.slope;
        }
    }
    b.total = b.l_mc_pos + b.l_mc_neg + b.l_mt;
    return r;
}

inline LossBreakdown loss_forward(const Mat& E, const BatchPairs& pairs, double alpha, SimilarityKind kind) {
    return evaluate_loss(E, pairs, alpha, {kind, 0.0}).breakdown;
}

inline LossBreakdown smooth_variant(const Mat& E, const BatchPairs& pairs, double alpha, double temperature,
                                    SimilarityKind kind = SimilarityKind::cosine) {
    if (!(temperature > 0)) throw InvalidInput("smooth_variant: temperature must be > 0");
    return evaluate_loss(E, pairs, alpha, {kind, temperature}).breakdown;
}

// Triplet term through cosine similarities, valid for unit vectors:
// |a-b|^2 = 2 - 2 cos(a, b).
inline double triplet_term_via_similarity(const Mat& E, const BatchPairs& pairs, double alpha) {
    double sum = 0;
    for (const auto& t : pairs.triplets) {
        const auto a = E.col(static_cast<Eigen::Index>(t.anchor));
        const double d_ap = 2.0 - 2.0 * a.dot(E.col(static_cast<Eigen::Index>(t.positive)));
        const double d_an = 2.0 - 2.0 * a.dot(E.col(static_cast<Eigen::Index>(t.negative)));
        sum += std::max(0.0, d_ap - d_an + alpha);
    }
    return sum;
}

}  // namespace avlm
