#pragma once

#include <cmath>
#include <limits>
#include <numbers>
#include <span>
#include <vector>

#include "errors.hpp"
#include "types.hpp"

namespace avlm {

// Occupied pixels are mapped into [kDepthFloor, 1] so that the nearest
// point is 1, the farthest is kDepthFloor, and background stays exactly 0.
inline constexpr double kDepthFloor = 0.1;

struct ViewConfig {
    double side_yaw_degrees = 30.0;
    Resolution resolution{};
};

inline std::array<ViewAngle, kNumViews> view_angles(double side_yaw_degrees = 30.0) {
    return {ViewAngle::frontal(), ViewAngle::left(side_yaw_degrees), ViewAngle::right(side_yaw_degrees)};
}

// Orthographic depth image of a point set seen from `view`.
inline ViewImage project(std::span<const Point3> points, const ViewAngle& view, Resolution res) {
    if (points.empty()) throw InvalidInput("project: empty point set");
    if (res.height < 8 || res.width < 8) throw InvalidInput("project: resolution must be at least 8x8");

    const double yaw = view.yaw_degrees * std::numbers::pi / 180.0;
    const double c = std::cos(yaw), s = std::sin(yaw);
    const double lowest = -std::numeric_limits<double>::infinity();
    std::vector<double> zbuf(static_cast<std::size_t>(res.height) * res.width, lowest);

    for (const auto& p : points) {
        const double x = p[0], y = p[1], z = p[2];
        const double xr = x * c + z * s;
        const double zr = -x * s + z * c;
        if (!(xr >= -1.0 && xr <= 1.0 && y >= -1.0 && y <= 1.0)) continue;
        int col = static_cast<int>(std::floor((xr + 1.0) * 0.5 * res.width));
        int row = static_cast<int>(std::floor((1.0 - y) * 0.5 * res.height));
        col = std::min(col, res.width - 1);
        row = std::min(row, res.height - 1);
        auto& cell = zbuf[static_cast<std::size_t>(row) * res.width + col];
        if (zr > cell) cell = zr;
    }

    double zmin = std::numeric_limits<double>::infinity(), zmax = lowest;
    for (double z : zbuf)
        if (z != lowest) {
            zmin = std::min(zmin, z);
            zmax = std::max(zmax, z);
        }

    ViewImage out{view, Image(res.height, res.width), ImageKind::depth};
    const double range = zmax - zmin;
    for (std::size_t i = 0; i < zbuf.size(); ++i) {
        if (zbuf[i] == lowest) continue;
        out.image.pixels[i] = range > 0 ? kDepthFloor + (1.0 - kDepthFloor) * (zbuf[i] - zmin) / range : 1.0;
    }
    return out;
}

inline MultiviewSample render_multiview(const FaceSequence& seq, std::size_t frame_index, const ViewConfig& cfg = {}) {
    if (frame_index >= seq.num_frames())
        throw InvalidInput("render_multiview: frame index " + std::to_string(frame_index) + " out of range (T=" +
                           std::to_string(seq.num_frames()) + ")");
    const auto angles = view_angles(cfg.side_yaw_degrees);
    MultiviewSample sample;
    for (std::size_t v = 0; v < kNumViews; ++v) sample[v] = project(seq.frames[frame_index], angles[v], cfg.resolution);
    return sample;
}

inline MultiviewSample render_apex(const FaceSequence& seq, const ViewConfig& cfg = {}) {
    return render_multiview(seq, seq.num_frames() - 1, cfg);
}

inline Image hflip(const Image& img) {
    Image out(img.height, img.width);
    for (int r = 0; r < img.height; ++r)
        for (int c = 0; c < img.width; ++c) out.at(r, c) = img.at(r, img.width - 1 - c);
    return out;
}

}  // namespace avlm
