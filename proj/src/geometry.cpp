#include "dope/geometry.hpp"

#include <algorithm>
#include <limits>

#include "dope/rng.hpp"

namespace dope::geom {

void Intrinsics::validate() const {
    if (fx <= 0 || fy <= 0) throw InvalidRange("Intrinsics: focal lengths must be positive");
    if (cx < 0 || cx >= width || cy < 0 || cy >= height)
        throw InvalidRange("Intrinsics: principal point outside raster");
    if (width <= 0 || height <= 0) throw InvalidRange("Intrinsics: empty raster");
}

double Pose::orthonormality_residual() const {
    double res = 0;
    for (int i = 0; i < 3; ++i) {
        for (int j = 0; j < 3; ++j) {
            double rtr = 0;
            for (int k = 0; k < 3; ++k) rtr += rotation[k * 3 + i] * rotation[k * 3 + j];
            res = std::max(res, std::abs(rtr - (i == j ? 1.0 : 0.0)));
        }
    }
    return res;
}

Vec3 Pose::camera_center() const {
    const Vec3 t = translation;
    const Vec3 c = mat_tmul(rotation, t);
    return {-c[0], -c[1], -c[2]};
}

void Pose::validate() const {
    if (orthonormality_residual() >= 1e-6)
        throw InvalidRange("Pose: rotation is not orthonormal");
    const Mat3& r = rotation;
    const double det = r[0] * (r[4] * r[8] - r[5] * r[7]) -
                       r[1] * (r[3] * r[8] - r[5] * r[6]) +
                       r[2] * (r[3] * r[7] - r[4] * r[6]);
    if (det <= 0) throw InvalidRange("Pose: rotation determinant is not +1");
}

void PosedView::validate() const {
    intrinsics.validate();
    pose.validate();
    const std::size_t px = static_cast<std::size_t>(intrinsics.width) * intrinsics.height;
    if (rgb.size() != px * 3 || depth.size() != px || mask.size() != px)
        throw ShapeMismatch("PosedView: raster sizes do not match intrinsics");
    for (std::size_t i = 0; i < px; ++i) {
        if (mask[i] && !(std::isfinite(depth[i]) && depth[i] > 0))
            throw InvalidDepth("PosedView: foreground pixel without valid depth");
    }
}

Vec3 unproject(const PosedView& view, int u, int v) {
    if (!view.in_bounds(u, v) || !view.foreground(u, v))
        throw BackgroundPixel("unproject: pixel is not on the foreground mask");
    const double d = view.depth_at(u, v);
    if (!std::isfinite(d) || d <= 0)
        throw InvalidDepth("unproject: depth is not finite and positive");
    const Intrinsics& k = view.intrinsics;
    const Vec3 ray{(u + 0.5 - k.cx) / k.fx, (v + 0.5 - k.cy) / k.fy, 1.0};
    const Vec3 cam = d * ray;
    return mat_tmul(view.pose.rotation, cam - view.pose.translation);
}

Projection project(const PosedView& view, const Vec3& world_point) {
    const Vec3 cam = mat_mul(view.pose.rotation, world_point) + view.pose.translation;
    Projection p;
    p.z_cam = cam[2];
    if (cam[2] <= 1e-9) {
        p.behind_camera = true;
        return p;
    }
    const Intrinsics& k = view.intrinsics;
    p.u = k.fx * cam[0] / cam[2] + k.cx;
    p.v = k.fy * cam[1] / cam[2] + k.cy;
    return p;
}

std::vector<int> farthest_point_sample(const std::vector<std::array<double, 2>>& points,
                                       int n, std::uint64_t seed) {
    if (points.empty()) throw EmptyInput("farthest_point_sample: no points");
    if (n < 1) throw InvalidRange("farthest_point_sample: n must be >= 1");
    const int count = static_cast<int>(points.size());
    const int want = std::min(n, count);

    Rng rng(seed);
    std::vector<int> picked;
    picked.reserve(want);
    picked.push_back(static_cast<int>(rng.uniform_u32(static_cast<std::uint32_t>(count))));

    std::vector<double> min_d2(points.size(), std::numeric_limits<double>::infinity());
    while (static_cast<int>(picked.size()) < want) {
        const auto& last = points[picked.back()];
        int best = -1;
        double best_d2 = -1;
        for (int i = 0; i < count; ++i) {
            const double dx = points[i][0] - last[0];
            const double dy = points[i][1] - last[1];
            min_d2[i] = std::min(min_d2[i], dx * dx + dy * dy);
            if (min_d2[i] > best_d2) { // strict: ties keep the lowest index
                best_d2 = min_d2[i];
                best = i;
            }
        }
        picked.push_back(best);
    }
    return picked;
}

std::array<int, 2> pixel_to_grid(int u, int v, int img_w, int img_h, GridSize grid) {
    if (u < 0 || v < 0 || u >= img_w || v >= img_h)
        throw OutOfBounds("pixel_to_grid: pixel outside image");
    if (grid.width <= 0 || grid.height <= 0 || img_w % grid.width != 0 ||
        img_h % grid.height != 0)
        throw NonIntegerStride("pixel_to_grid: image size not divisible by grid size");
    return {u * grid.width / img_w, v * grid.height / img_h};
}

CorrespondenceSet find_correspondences(const PosedView& view_a, const PosedView& view_b,
                                       int n, double occlusion_tol, std::uint64_t seed,
                                       GridSize grid) {
    if (n < 1) throw InvalidRange("find_correspondences: n must be >= 1");
    std::vector<std::array<double, 2>> fg;
    std::vector<std::array<int, 2>> fg_px;
    for (int v = 0; v < view_a.height(); ++v) {
        for (int u = 0; u < view_a.width(); ++u) {
            if (view_a.foreground(u, v)) {
                fg.push_back({static_cast<double>(u), static_cast<double>(v)});
                fg_px.push_back({u, v});
            }
        }
    }
    if (fg.empty()) throw EmptyForeground("find_correspondences: view_a has an empty mask");

    const std::vector<int> sampled = farthest_point_sample(fg, n, seed);

    CorrespondenceSet out;
    std::vector<std::uint8_t> grid_taken(
        static_cast<std::size_t>(grid.width) * grid.height, 0);
    for (int si : sampled) {
        const int ua = fg_px[si][0];
        const int va = fg_px[si][1];
        const Vec3 world = unproject(view_a, ua, va);
        const Projection pb = project(view_b, world);
        if (pb.behind_camera) continue;
        // Pixel centers are at half-integers, so the nearest pixel is floor().
        const int ub = static_cast<int>(std::floor(pb.u));
        const int vb = static_cast<int>(std::floor(pb.v));
        if (!view_b.in_bounds(ub, vb)) continue;
        if (!view_b.foreground(ub, vb)) continue;
        const double db = view_b.depth_at(ub, vb);
        if (!(std::abs(db - pb.z_cam) < occlusion_tol)) continue;

        PixelCorrespondence c;
        c.ua = ua;
        c.va = va;
        c.ub = ub;
        c.vb = vb;
        c.world_point = world;
        const auto ga = pixel_to_grid(ua, va, view_a.width(), view_a.height(), grid);
        const auto gb = pixel_to_grid(ub, vb, view_b.width(), view_b.height(), grid);
        c.grid_ua = ga[0];
        c.grid_va = ga[1];
        c.grid_ub = gb[0];
        c.grid_vb = gb[1];
        auto& taken = grid_taken[static_cast<std::size_t>(c.grid_va) * grid.width + c.grid_ua];
        if (taken) continue;
        taken = 1;
        out.pairs.push_back(c);
    }
    return out;
}

} // namespace dope::geom
