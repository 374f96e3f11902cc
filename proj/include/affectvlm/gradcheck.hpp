#pragma once

// Central finite-difference check of the full model gradient: every encoder
// parameter, every embedding and the margin.

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include "affectloss.hpp"
#include "encoders.hpp"
#include "prompts.hpp"
#include "types.hpp"

namespace avlm {

// A fixed batch: images and prompts with their roles and mined pairs.
struct FixedBatch {
    std::vector<Image> images;
    std::vector<TokenSeq> texts;
    std::vector<BatchItem> items;  // images first, then texts
    BatchPairs pairs;
    LossOptions options;
};

inline Mat embed_batch(const ModelParams& p, const FixedBatch& b, ImageEncoderPass& ip, TextEncoderPass& tp) {
    std::vector<const Image*> ptrs;
    for (const auto& im : b.images) ptrs.push_back(&im);
    const auto ni = static_cast<Eigen::Index>(b.images.size()), nt = static_cast<Eigen::Index>(b.texts.size());
    Mat E(p.config.embed_dim, ni + nt);
    if (ni > 0) E.leftCols(ni) = ip.forward(p, ptrs);
    if (nt > 0) E.rightCols(nt) = tp.forward(p, b.texts);
    return E;
}

inline double batch_loss(const ModelParams& p, const FixedBatch& b) {
    ImageEncoderPass ip;
    TextEncoderPass tp;
    return evaluate_loss(embed_batch(p, b, ip, tp), b.pairs, p.alpha, b.options).breakdown.total;
}

struct BatchGradient {
    Mat embeddings;
    LossResult loss;
    GradAccumulator grad;
};

inline BatchGradient batch_gradient(const ModelParams& p, const FixedBatch& b) {
    ImageEncoderPass ip;
    TextEncoderPass tp;
    BatchGradient out;
    out.embeddings = embed_batch(p, b, ip, tp);
    out.loss = evaluate_loss(out.embeddings, b.pairs, p.alpha, b.options);
    out.grad = GradAccumulator(p);
    const auto ni = static_cast<Eigen::Index>(b.images.size()), nt = static_cast<Eigen::Index>(b.texts.size());
    if (ni > 0) ip.backward(p, out.loss.d_embeddings.leftCols(ni), out.grad);
    if (nt > 0) tp.backward(p, out.loss.d_embeddings.rightCols(nt), out.grad);
    out.grad.alpha = out.loss.d_alpha;
    return out;
}

// |a - n| / max(|a|, |n|, floor).
inline double relative_error(double analytic, double numeric, double floor = 1e-6) {
    return std::abs(analytic - numeric) / std::max({std::abs(analytic), std::abs(numeric), floor});
}

struct GradCheckReport {
    std::size_t n_params = 0;
    std::size_t n_embeddings = 0;
    double max_rel_params = 0;
    double max_rel_embeddings = 0;
    double rel_alpha = 0;
    std::string worst_param;  // tensor name of the worst parameter entry
    double min_hinge_distance = 0;  // smallest |hinge argument|; must exceed h
    double max_rel() const { return std::max({max_rel_params, max_rel_embeddings, rel_alpha}); }
};

inline GradCheckReport check_gradients(const ModelParams& params, const FixedBatch& b, double h = 1e-5) {
    GradCheckReport rep;
    const auto g = batch_gradient(params, b);
    ModelParams p = params;

    for (const auto& entry : p.layout.entries())
        for (std::size_t k = 0; k < entry.size(); ++k) {
            const std::size_t i = entry.offset + k;
            const double v = p.values[i];
            p.values[i] = v + h;
            const double up = batch_loss(p, b);
            p.values[i] = v - h;
            const double down = batch_loss(p, b);
            p.values[i] = v;
            const double r = relative_error(g.grad.values[i], (up - down) / (2 * h));
            if (r > rep.max_rel_params) {
                rep.max_rel_params = r;
                rep.worst_param = entry.name;
            }
            ++rep.n_params;
        }

    const double a = p.alpha;
    p.alpha = a + h;
    const double up = batch_loss(p, b);
    p.alpha = a - h;
    const double down = batch_loss(p, b);
    p.alpha = a;
    rep.rel_alpha = relative_error(g.grad.alpha, (up - down) / (2 * h));

    Mat E = g.embeddings;
    for (Eigen::Index j = 0; j < E.cols(); ++j)
        for (Eigen::Index r = 0; r < E.rows(); ++r) {
            const double v = E(r, j);
            E(r, j) = v + h;
            const double lu = evaluate_loss(E, b.pairs, p.alpha, b.options).breakdown.total;
            E(r, j) = v - h;
            const double ld = evaluate_loss(E, b.pairs, p.alpha, b.options).breakdown.total;
            E(r, j) = v;
            rep.max_rel_embeddings =
                std::max(rep.max_rel_embeddings, relative_error(g.loss.d_embeddings(r, j), (lu - ld) / (2 * h)));
            ++rep.n_embeddings;
        }

    double dmin = 1e300;
    const auto& X = g.embeddings;
    for (const auto& [k, l] : b.pairs.negatives)
        dmin = std::min(dmin, std::abs(similarity(X.col(static_cast<Eigen::Index>(k)),
                                                  X.col(static_cast<Eigen::Index>(l)), b.options.similarity) -
                                       p.alpha));
    for (const auto& t : b.pairs.triplets) {
        const auto ca = X.col(static_cast<Eigen::Index>(t.anchor));
        const double x = (ca - X.col(static_cast<Eigen::Index>(t.positive))).squaredNorm() -
                         (ca - X.col(static_cast<Eigen::Index>(t.negative))).squaredNorm() + p.alpha;
        dmin = std::min(dmin, std::abs(x));
    }
    rep.min_hinge_distance = dmin;
    return rep;
}

}  // namespace avlm
