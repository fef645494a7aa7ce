#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <vector>

#include "dope/errors.hpp"

namespace dope::geom {

using Vec3 = std::array<double, 3>;
using Mat3 = std::array<double, 9>; // row-major

inline Vec3 operator+(const Vec3& a, const Vec3& b) {
    return {a[0] + b[0], a[1] + b[1], a[2] + b[2]};
}
inline Vec3 operator-(const Vec3& a, const Vec3& b) {
    return {a[0] - b[0], a[1] - b[1], a[2] - b[2]};
}
inline Vec3 operator*(double s, const Vec3& v) { return {s * v[0], s * v[1], s * v[2]}; }
inline double dot(const Vec3& a, const Vec3& b) {
    return a[0] * b[0] + a[1] * b[1] + a[2] * b[2];
}
inline Vec3 cross(const Vec3& a, const Vec3& b) {
    return {a[1] * b[2] - a[2] * b[1], a[2] * b[0] - a[0] * b[2],
            a[0] * b[1] - a[1] * b[0]};
}
inline double norm(const Vec3& v) { return std::sqrt(dot(v, v)); }
inline Vec3 normalized(const Vec3& v) {
    const double n = norm(v);
    return {v[0] / n, v[1] / n, v[2] / n};
}
inline Vec3 mat_mul(const Mat3& m, const Vec3& v) {
    return {m[0] * v[0] + m[1] * v[1] + m[2] * v[2],
            m[3] * v[0] + m[4] * v[1] + m[5] * v[2],
            m[6] * v[0] + m[7] * v[1] + m[8] * v[2]};
}
inline Vec3 mat_tmul(const Mat3& m, const Vec3& v) { // transpose(m) * v
    return {m[0] * v[0] + m[3] * v[1] + m[6] * v[2],
            m[1] * v[0] + m[4] * v[1] + m[7] * v[2],
            m[2] * v[0] + m[5] * v[1] + m[8] * v[2]};
}

/// Pinhole calibration. Principal point and focals in pixels.
struct Intrinsics {
    double fx = 1, fy = 1, cx = 0, cy = 0;
    int width = 0, height = 0;

    void validate() const;
};

/// World-to-camera rigid transform: x_cam = R * x_world + t, +z forward.
struct Pose {
    Mat3 rotation{1, 0, 0, 0, 1, 0, 0, 0, 1};
    Vec3 translation{0, 0, 0};

    /// Max-abs residual of RᵀR - I.
    double orthonormality_residual() const;
    Vec3 camera_center() const; // -Rᵀ t
    void validate() const;
};

/// One calibrated observation: color, depth and mask rasters plus camera.
/// depth <= 0 or non-finite means "no surface at this pixel".
struct PosedView {
    std::vector<float> rgb;     // H*W*3, row-major, [0,1]
    std::vector<float> depth;   // H*W, camera-frame z in world units
    std::vector<std::uint8_t> mask; // H*W, nonzero = foreground
    Intrinsics intrinsics;
    Pose pose;

    int width() const { return intrinsics.width; }
    int height() const { return intrinsics.height; }
    std::size_t idx(int u, int v) const {
        return static_cast<std::size_t>(v) * intrinsics.width + u;
    }
    bool in_bounds(int u, int v) const {
        return u >= 0 && v >= 0 && u < intrinsics.width && v < intrinsics.height;
    }
    bool foreground(int u, int v) const { return mask[idx(u, v)] != 0; }
    float depth_at(int u, int v) const { return depth[idx(u, v)]; }

    void validate() const;
};

/// A pair of pixels in two views that image the same 3D surface point.
struct PixelCorrespondence {
    int ua = 0, va = 0;     // pixel in view A
    int ub = 0, vb = 0;     // pixel in view B
    int grid_ua = 0, grid_va = 0;
    int grid_ub = 0, grid_vb = 0;
    Vec3 world_point{0, 0, 0};
};

struct CorrespondenceSet {
    std::vector<PixelCorrespondence> pairs;
    int view_a_id = -1;
    int view_b_id = -1;
};

struct Projection {
    double u = 0, v = 0;  // continuous raster coordinates (pixel centers at i+0.5)
    double z_cam = 0;
    bool behind_camera = false;
};

struct GridSize {
    int width = 16;
    int height = 16;
};

/// Lifts a foreground pixel to its world-space surface point using the
/// stored depth. Pixel centers sit at half-integer coordinates.
Vec3 unproject(const PosedView& view, int u, int v);

/// Projects a world point into the view. Never throws: points at or behind
/// the camera plane come back with behind_camera set.
Projection project(const PosedView& view, const Vec3& world_point);

/// Greedy farthest point sampling over 2D points. The first pick is a seeded
/// uniform draw; every following pick maximizes the minimum distance to the
/// already chosen set, ties broken by lowest index. Returns
/// min(n, points.size()) indices.
std::vector<int> farthest_point_sample(const std::vector<std::array<double, 2>>& points,
                                       int n, std::uint64_t seed);

/// Maps a pixel to its feature-grid cell. Image dimensions must be integer
/// multiples of the grid dimensions.
std::array<int, 2> pixel_to_grid(int u, int v, int img_w, int img_h, GridSize grid);

/// Samples up to n foreground pixels of view_a by farthest point sampling,
/// lifts them to world space and keeps the ones that reproject onto the
/// visible foreground of view_b: in bounds, in front of the camera, on the
/// mask, and with |depth_b - z_cam_b| < occlusion_tol at the nearest pixel.
/// Duplicate grid_a cells (after quantization) are dropped, keeping the first.
CorrespondenceSet find_correspondences(const PosedView& view_a, const PosedView& view_b,
                                       int n, double occlusion_tol, std::uint64_t seed,
                                       GridSize grid = {});

} // namespace dope::geom
