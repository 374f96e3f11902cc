#pragma once

// Rank pooling of a frame stack into a single "dynamic image".
//
// Frames are flattened and L2-normalized, smoothed into running means m_t,
// and a linear scorer u is fitted so that later frames score higher:
//
//   E(u) = (lambda/2)|u|^2 + 2/(T(T-1)) * sum_{q>t} max(0, 1 - u.(m_q - m_t))
//
// The exact method minimizes E by subgradient descent; the approximate
// method uses the closed form u = sum_t (2t - T - 1) m_t.

#include <algorithm>
#include <cmath>
#include <span>
#include <string>
#include <vector>

#include "errors.hpp"
#include "types.hpp"
#include "views.hpp"

namespace avlm {

enum class RankPoolMethod { exact, approximate };

struct RankPoolConfig {
    RankPoolMethod method = RankPoolMethod::approximate;
    double lambda = 1.0;
    int max_iters = 500;
    double step_size = 1e-2;
    double tol = 1e-8;

    void validate() const {
        if (!(lambda > 0)) throw InvalidInput("rank pooling: lambda must be > 0");
        if (max_iters < 1) throw InvalidInput("rank pooling: max_iters must be >= 1");
        if (!(step_size > 0)) throw InvalidInput("rank pooling: step_size must be > 0");
    }
};

using FeatureVec = std::vector<double>;

namespace dynimg_detail {

inline double dot(const FeatureVec& a, const FeatureVec& b) {
    double s = 0;
    for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
    return s;
}

inline void check_frames(std::span<const FeatureVec> frames, std::size_t min_t) {
    if (frames.size() < min_t)
        throw InvalidInput("rank pooling needs at least " + std::to_string(min_t) + " frames, got " +
                           std::to_string(frames.size()));
    for (const auto& f : frames)
        if (f.size() != frames.front().size()) throw ShapeError("rank pooling: frames differ in dimension");
}

}  // namespace dynimg_detail

// m_t = (1/t) sum_{s<=t} v_s / |v_s|. A zero frame stays zero. The running
// mean is updated incrementally so a constant sequence gives bitwise
// identical means.
inline std::vector<FeatureVec> running_means(std::span<const FeatureVec> frames) {
    dynimg_detail::check_frames(frames, 1);
    const std::size_t D = frames.front().size();
    std::vector<FeatureVec> means;
    means.reserve(frames.size());
    FeatureVec m(D, 0.0);
    for (std::size_t t = 0; t < frames.size(); ++t) {
        const double norm = std::sqrt(dynimg_detail::dot(frames[t], frames[t]));
        const double inv = norm > 0 ? 1.0 / norm : 0.0;
        const double k = static_cast<double>(t + 1);
        for (std::size_t i = 0; i < D; ++i) {
            const double v = frames[t][i] * inv;
            m[i] = t == 0 ? v : m[i] + (v - m[i]) / k;
        }
        means.push_back(m);
    }
    return means;
}

// Objective over precomputed running means.
inline double rank_pool_objective(std::span<const FeatureVec> means, const FeatureVec& u, double lambda) {
    const std::size_t T = means.size();
    std::vector<double> s(T);
    for (std::size_t t = 0; t < T; ++t) s[t] = dynimg_detail::dot(means[t], u);
    double hinge = 0;
    for (std::size_t t = 0; t < T; ++t)
        for (std::size_t q = t + 1; q < T; ++q) hinge += std::max(0.0, 1.0 - (s[q] - s[t]));
    const double pair_weight = T > 1 ? 2.0 / (static_cast<double>(T) * static_cast<double>(T - 1)) : 0.0;
    return 0.5 * lambda * dynimg_detail::dot(u, u) + pair_weight * hinge;
}

struct RankPoolResult {
    FeatureVec u;
    double objective = 0;
    int iterations = 0;
    std::vector<double> objective_history;  // E after each accepted step, starting with E(0)
};

// Full-batch subgradient descent from u = 0 with a fixed step. A step that
// would raise E is retried at half length, so the objective never increases.
// The hinge subgradient at the kink is 0.
inline RankPoolResult rank_pool_exact(std::span<const FeatureVec> frames, const RankPoolConfig& cfg = {}) {
    cfg.validate();
    dynimg_detail::check_frames(frames, 2);
    const auto means = running_means(frames);
    const std::size_t T = means.size(), D = means.front().size();
    const double pair_weight = 2.0 / (static_cast<double>(T) * static_cast<double>(T - 1));

    RankPoolResult res;
    res.u.assign(D, 0.0);
    res.objective = rank_pool_objective(means, res.u, cfg.lambda);
    res.objective_history.push_back(res.objective);

    std::vector<double> scores(T), weights(T);
    FeatureVec grad(D), trial(D);
    for (int it = 0; it < cfg.max_iters; ++it) {
        for (std::size_t t = 0; t < T; ++t) scores[t] = dynimg_detail::dot(means[t], res.u);
        std::fill(weights.begin(), weights.end(), 0.0);
        for (std::size_t t = 0; t < T; ++t)
            for (std::size_t q = t + 1; q < T; ++q)
                if (1.0 - (scores[q] - scores[t]) > 0) {
                    weights[q] += 1.0;
                    weights[t] -= 1.0;
                }
        // The weights sum to zero, so means are taken relative to m_1; equal
        // means then cancel exactly.
        for (std::size_t i = 0; i < D; ++i) grad[i] = cfg.lambda * res.u[i];
        for (std::size_t t = 1; t < T; ++t) {
            if (weights[t] == 0) continue;
            const double w = pair_weight * weights[t];
            for (std::size_t i = 0; i < D; ++i) grad[i] -= w * (means[t][i] - means[0][i]);
        }

        double step = cfg.step_size;
        double e_new = res.objective;
        bool accepted = false;
        for (int halving = 0; halving < 40; ++halving, step *= 0.5) {
            for (std::size_t i = 0; i < D; ++i) trial[i] = res.u[i] - step * grad[i];
            e_new = rank_pool_objective(means, trial, cfg.lambda);
            if (e_new <= res.objective) {
                accepted = true;
                break;
            }
        }
        if (!accepted) break;
        const double delta = res.objective - e_new;
        res.u.swap(trial);
        res.objective = e_new;
        res.objective_history.push_back(e_new);
        res.iterations = it + 1;
        if (std::abs(delta) < cfg.tol) break;
    }
    return res;
}

// alpha_t = 2t - T - 1 for t = 1..T.
inline std::vector<double> approx_coefficients(std::size_t T) {
    std::vector<double> a(T);
    for (std::size_t t = 1; t <= T; ++t) a[t - 1] = 2.0 * static_cast<double>(t) - static_cast<double>(T) - 1.0;
    return a;
}

// Closed-form pooling. Mirrored coefficient pairs are summed first, so a
// constant sequence pools to exactly zero. T = 1 returns m_1 by convention.
inline FeatureVec rank_pool_approx(std::span<const FeatureVec> frames) {
    const auto means = running_means(frames);
    const std::size_t T = means.size(), D = means.front().size();
    if (T == 1) return means.front();
    FeatureVec u(D, 0.0);
    for (std::size_t t = 0; t < T / 2; ++t) {
        const std::size_t q = T - 1 - t;
        const double a = 2.0 * static_cast<double>(q + 1) - static_cast<double>(T) - 1.0;
        for (std::size_t i = 0; i < D; ++i) u[i] += a * (means[q][i] - means[t][i]);
    }
    return u;
}

inline FeatureVec rank_pool(std::span<const FeatureVec> frames, const RankPoolConfig& cfg) {
    if (frames.size() == 1) return running_means(frames).front();
    if (cfg.method == RankPoolMethod::exact) return rank_pool_exact(frames, cfg).u;
    return rank_pool_approx(frames);
}

// Min-max normalize to [0, 1]. A flat vector (including zero) maps to all
// zeros; "flat" means a spread below 1e-12 of the largest magnitude.
inline Image to_dynamic_image(const FeatureVec& u, Resolution res) {
    if (u.size() != static_cast<std::size_t>(res.height) * res.width)
        throw ShapeError("dynamic image: vector of size " + std::to_string(u.size()) + " cannot be reshaped to " +
                         std::to_string(res.height) + "x" + std::to_string(res.width));
    Image img(res.height, res.width);
    if (u.empty()) return img;
    const auto [lo, hi] = std::minmax_element(u.begin(), u.end());
    const double scale = std::max(std::abs(*lo), std::abs(*hi));
    const double range = *hi - *lo;
    if (!(range > 1e-12 * scale) || scale == 0) return img;
    for (std::size_t i = 0; i < u.size(); ++i) img.pixels[i] = (u[i] - *lo) / range;
    return img;
}

// Renders every frame per view and rank-pools each view's stack.
inline MultiviewSample dynamic_multiview(const FaceSequence& seq, const RankPoolConfig& cfg,
                                         const ViewConfig& view_cfg = {}) {
    if (seq.num_frames() == 0) throw InvalidInput("dynamic_multiview: sequence has no frames");
    const auto angles = view_angles(view_cfg.side_yaw_degrees);
    MultiviewSample out;
    for (std::size_t v = 0; v < kNumViews; ++v) {
        std::vector<FeatureVec> stack;
        stack.reserve(seq.num_frames());
        for (const auto& frame : seq.frames) stack.push_back(project(frame, angles[v], view_cfg.resolution).image.pixels);
        out[v] = ViewImage{angles[v], to_dynamic_image(rank_pool(stack, cfg), view_cfg.resolution), ImageKind::dynamic};
    }
    return out;
}

}  // namespace avlm
