#pragma once

#include <algorithm>
#include <cmath>
#include <string_view>
#include <vector>

#include "encoders.hpp"
#include "errors.hpp"

namespace avlm {

enum class OptimizerKind { sgd, adam };

constexpr std::string_view to_string(OptimizerKind k) { return k == OptimizerKind::sgd ? "sgd" : "adam"; }
inline OptimizerKind parse_optimizer(std::string_view s) {
    if (s == "sgd") return OptimizerKind::sgd;
    if (s == "adam") return OptimizerKind::adam;
    throw InvalidInput("unknown optimizer '" + std::string(s) + "'");
}

// Updates every weight and the margin (stored as the last slot of the
// moment buffers), then clamps the margin into [kAlphaMin, kAlphaMax].
// The margin has its own learning rate.
class Optimizer {
public:
    Optimizer(OptimizerKind kind, double lr, double alpha_lr, double beta1 = 0.9, double beta2 = 0.999,
              double eps = 1e-8)
        : kind_(kind), lr_(lr), alpha_lr_(alpha_lr), beta1_(beta1), beta2_(beta2), eps_(eps) {}
    Optimizer(OptimizerKind kind, double lr) : Optimizer(kind, lr, lr) {}

    void step(ModelParams& p, const GradAccumulator& g) {
        if (g.values.size() != p.values.size()) throw ShapeError("optimizer: gradient/parameter size mismatch");
        const std::size_t n = p.values.size();
        if (kind_ == OptimizerKind::sgd) {
            for (std::size_t i = 0; i < n; ++i) p.values[i] -= lr_ * g.values[i];
            p.alpha -= alpha_lr_ * g.alpha;
        } else {
            if (m_.empty()) {
                m_.assign(n + 1, 0.0);
                v_.assign(n + 1, 0.0);
            }
            ++t_;
            const double c1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
            const double c2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
            auto update = [&](std::size_t i, double grad, double& value, double lr) {
                m_[i] = beta1_ * m_[i] + (1.0 - beta1_) * grad;
                v_[i] = beta2_ * v_[i] + (1.0 - beta2_) * grad * grad;
                value -= lr * (m_[i] / c1) / (std::sqrt(v_[i] / c2) + eps_);
            };
            for (std::size_t i = 0; i < n; ++i) update(i, g.values[i], p.values[i], lr_);
            update(n, g.alpha, p.alpha, alpha_lr_);
        }
        p.alpha = std::clamp(p.alpha, kAlphaMin, kAlphaMax);
    }

    long steps() const { return t_; }

private:
    OptimizerKind kind_;
    double lr_, alpha_lr_, beta1_, beta2_, eps_;
    std::vector<double> m_, v_;
    long t_ = 0;
};

}  // namespace avlm
