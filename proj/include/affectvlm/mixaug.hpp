#pragma once

// Mixed view augmentation: each view of a sample gets its own classical
// transform, drawn independently per (seed, epoch, sample, view).

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "errors.hpp"
#include "rng.hpp"
#include "types.hpp"
#include "views.hpp"

namespace avlm {

enum class AugKind : std::uint8_t { identity = 0, hflip, rotate, crop, scale };
inline constexpr std::size_t kNumAugKinds = 5;

constexpr std::string_view to_string(AugKind k) {
    constexpr std::array<std::string_view, kNumAugKinds> names{"identity", "hflip", "rotate", "crop", "scale"};
    return names[static_cast<std::size_t>(k)];
}

struct AugOp {
    AugKind kind = AugKind::identity;
    double angle_degrees = 0.0;  // rotate: [-15, 15]
    double crop_fraction = 1.0;  // crop: [0.8, 1.0]
    double crop_offset_x = 0.5;  // crop: position of the window within the slack, [0, 1]
    double crop_offset_y = 0.5;
    double scale_factor = 1.0;  // scale: [0.9, 1.1]

    static AugOp identity() { return {}; }
    static AugOp flip() { return {.kind = AugKind::hflip}; }
    static AugOp rotate(double deg) { return {.kind = AugKind::rotate, .angle_degrees = deg}; }
    static AugOp crop(double fraction, double ox = 0.5, double oy = 0.5) {
        return {.kind = AugKind::crop, .crop_fraction = fraction, .crop_offset_x = ox, .crop_offset_y = oy};
    }
    static AugOp scale(double factor) { return {.kind = AugKind::scale, .scale_factor = factor}; }

    void validate() const {
        auto in = [](double v, double lo, double hi) { return v >= lo && v <= hi; };
        if (!in(angle_degrees, -15.0, 15.0)) throw InvalidInput("rotate angle outside [-15, 15] degrees");
        if (!in(crop_fraction, 0.8, 1.0)) throw InvalidInput("crop fraction outside [0.8, 1.0]");
        if (!in(crop_offset_x, 0.0, 1.0) || !in(crop_offset_y, 0.0, 1.0))
            throw InvalidInput("crop offset outside [0, 1]");
        if (!in(scale_factor, 0.9, 1.1)) throw InvalidInput("scale factor outside [0.9, 1.1]");
    }

    friend bool operator==(const AugOp&, const AugOp&) = default;
};

struct MixedAugPlan {
    std::array<AugOp, kNumViews> ops;  // indexed like MultiviewSample
    friend bool operator==(const MixedAugPlan&, const MixedAugPlan&) = default;
};

namespace mixaug_detail {

// Bilinear sample at continuous pixel coordinates (pixel centers at
// integer + 0.5); zero outside the image support.
inline double sample_bilinear(const Image& img, double x, double y) {
    const double fx = x - 0.5, fy = y - 0.5;
    const int x0 = static_cast<int>(std::floor(fx)), y0 = static_cast<int>(std::floor(fy));
    const double ax = fx - x0, ay = fy - y0;
    auto px = [&](int r, int c) { return (r < 0 || c < 0 || r >= img.height || c >= img.width) ? 0.0 : img.at(r, c); };
    const double top = (1 - ax) * px(y0, x0) + ax * px(y0, x0 + 1);
    const double bottom = (1 - ax) * px(y0 + 1, x0) + ax * px(y0 + 1, x0 + 1);
    return (1 - ay) * top + ay * bottom;
}

// out(x, y) = in(map(x, y)) evaluated at output pixel centers.
template <class Map>
Image resample(const Image& img, Map&& map) {
    Image out(img.height, img.width);
    for (int r = 0; r < img.height; ++r)
        for (int c = 0; c < img.width; ++c) {
            const auto [sx, sy] = map(c + 0.5, r + 0.5);
            out.at(r, c) = std::clamp(sample_bilinear(img, sx, sy), 0.0, 1.0);
        }
    return out;
}

}  // namespace mixaug_detail

inline Image apply(const Image& img, const AugOp& op) {
    op.validate();
    using mixaug_detail::resample;
    const double cx = img.width / 2.0, cy = img.height / 2.0;
    switch (op.kind) {
        case AugKind::identity:
            return img;
        case AugKind::hflip:
            return hflip(img);
        case AugKind::rotate: {
            // Counter-clockwise by angle on screen; inverse map rotates back.
            const double a = op.angle_degrees * std::numbers::pi / 180.0;
            const double c = std::cos(a), s = std::sin(a);
            return resample(img, [&](double x, double y) {
                const double dx = x - cx, dy = y - cy;
                return std::pair{cx + c * dx - s * dy, cy + s * dx + c * dy};
            });
        }
        case AugKind::crop: {
            const double w = op.crop_fraction * img.width, h = op.crop_fraction * img.height;
            const double x0 = op.crop_offset_x * (img.width - w), y0 = op.crop_offset_y * (img.height - h);
            const double kx = w / img.width, ky = h / img.height;
            return resample(img, [&](double x, double y) { return std::pair{x0 + kx * x, y0 + ky * y}; });
        }
        case AugKind::scale: {
            const double inv = 1.0 / op.scale_factor;
            return resample(img, [&](double x, double y) { return std::pair{cx + (x - cx) * inv, cy + (y - cy) * inv}; });
        }
    }
    throw InvalidInput("unknown augmentation kind");
}

inline ViewImage apply(const ViewImage& img, const AugOp& op) { return {img.view, apply(img.image, op), img.kind}; }

inline MultiviewSample apply(const MultiviewSample& sample, const MixedAugPlan& plan) {
    MultiviewSample out;
    for (std::size_t v = 0; v < kNumViews; ++v) out[v] = apply(sample[v], plan.ops[v]);
    return out;
}

// Kind uniform over the five transforms, parameters uniform in range.
inline AugOp draw_op(Rng& rng) {
    AugOp op;
    op.kind = static_cast<AugKind>(rng.below(kNumAugKinds));
    switch (op.kind) {
        case AugKind::rotate:
            op.angle_degrees = rng.uniform(-15.0, 15.0);
            break;
        case AugKind::crop:
            op.crop_fraction = rng.uniform(0.8, 1.0);
            op.crop_offset_x = rng.uniform();
            op.crop_offset_y = rng.uniform();
            break;
        case AugKind::scale:
            op.scale_factor = rng.uniform(0.9, 1.1);
            break;
        default:
            break;
    }
    return op;
}

inline MixedAugPlan plan_sample(std::uint64_t seed, std::uint64_t epoch, std::uint64_t sample) {
    MixedAugPlan plan;
    for (std::size_t v = 0; v < kNumViews; ++v) {
        Rng rng{seed, epoch, sample, v, 0xA06ULL};
        plan.ops[v] = draw_op(rng);
    }
    return plan;
}

inline std::vector<MixedAugPlan> plan_epoch(std::size_t n_samples, std::uint64_t seed, std::uint64_t epoch) {
    if (n_samples < 1) throw InvalidInput("plan_epoch: n_samples must be >= 1");
    std::vector<MixedAugPlan> plans;
    plans.reserve(n_samples);
    for (std::size_t i = 0; i < n_samples; ++i) plans.push_back(plan_sample(seed, epoch, i));
    return plans;
}

}  // namespace avlm
