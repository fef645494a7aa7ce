#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <set>

#include "dope/geometry.hpp"
#include "dope/rng.hpp"
#include "dope/scenegen.hpp"
#include "oracles.hpp"

using namespace dope;
using namespace dope::geom;

namespace {

PosedView single_pixel_view(double fx, double fy, double cx, double cy, int w, int h,
                            const Pose& pose) {
    PosedView v;
    v.intrinsics = {fx, fy, cx, cy, w, h};
    v.pose = pose;
    v.rgb.assign(static_cast<std::size_t>(w) * h * 3, 0.0f);
    v.depth.assign(static_cast<std::size_t>(w) * h, 0.0f);
    v.mask.assign(static_cast<std::size_t>(w) * h, 0);
    return v;
}

scene::Mesh cube_mesh(double half = 0.55) {
    scene::Mesh m;
    scene::add_box(m, {0, 0, 0}, {half, half, half}, {0.8f, 0.4f, 0.2f});
    return m;
}

PosedView render_at(const scene::Mesh& mesh, double azimuth_deg, double elevation_deg,
                    double dist, int size = 32, double focal = 32) {
    scene::CameraRanges r;
    r.azimuth_lo_deg = r.azimuth_hi_deg = azimuth_deg;
    r.elevation_lo_deg = r.elevation_hi_deg = elevation_deg;
    r.distance_lo = r.distance_hi = dist;
    auto [k, pose] = scene::sample_camera(r, size, size, focal, 7);
    scene::Background bg;
    return scene::render(mesh, k, pose, bg, {0.4, 0.3, 0.9});
}

} // namespace

TEST_CASE("unproject: identity camera") {
    PosedView v = single_pixel_view(1, 1, 0, 0, 1, 1, {});
    v.mask[0] = 1;
    v.depth[0] = 2.0f;
    const Vec3 w = unproject(v, 0, 0);
    CHECK(w[0] == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(w[1] == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(w[2] == doctest::Approx(2.0).epsilon(1e-12));
}

TEST_CASE("unproject: translated camera matches formula") {
    Pose pose;
    pose.translation = {0, 0, -3};
    PosedView v = single_pixel_view(100, 100, 32, 32, 64, 64, pose);
    v.mask[v.idx(31, 31)] = 1;
    v.depth[v.idx(31, 31)] = 3.0f;
    const Vec3 w = unproject(v, 31, 31);
    CHECK(w[0] == doctest::Approx(-0.015).epsilon(1e-12));
    CHECK(w[1] == doctest::Approx(-0.015).epsilon(1e-12));
    CHECK(w[2] == doctest::Approx(6.0).epsilon(1e-12));
}

TEST_CASE("unproject: error paths") {
    PosedView v = single_pixel_view(1, 1, 0, 0, 2, 2, {});
    v.mask[0] = 0;
    CHECK_THROWS_AS(unproject(v, 0, 0), BackgroundPixel);
    v.mask[0] = 1;
    v.depth[0] = 0.0f;
    CHECK_THROWS_AS(unproject(v, 0, 0), InvalidDepth);
}

TEST_CASE("project: identity camera and behind-camera flag") {
    PosedView v = single_pixel_view(1, 1, 0, 0, 1, 1, {});
    const Projection p = project(v, {1, 1, 2});
    CHECK(p.u == doctest::Approx(0.5));
    CHECK(p.v == doctest::Approx(0.5));
    CHECK(p.z_cam == doctest::Approx(2.0));
    CHECK_FALSE(p.behind_camera);

    const Projection q = project(v, {1, 1, 0});
    CHECK(q.behind_camera);
}

TEST_CASE("project/unproject: random round trip under random poses") {
    scene::CameraRanges ranges;
    for (int i = 0; i < 1000; ++i) {
        auto [k, pose] = scene::sample_camera(ranges, 64, 64, 64, 1000 + i);
        PosedView v = single_pixel_view(k.fx, k.fy, k.cx, k.cy, k.width, k.height, pose);
        Rng rng(77 + i);
        const Vec3 p{rng.uniform(-1, 1), rng.uniform(-1, 1), rng.uniform(-1, 1)};
        const Projection pr = project(v, p);
        REQUIRE_FALSE(pr.behind_camera);
        // invert with the continuous coordinates
        const Vec3 ray{(pr.u - k.cx) / k.fx, (pr.v - k.cy) / k.fy, 1.0};
        const Vec3 cam = pr.z_cam * ray;
        const Vec3 back = mat_tmul(pose.rotation, cam - pose.translation);
        for (int d = 0; d < 3; ++d) CHECK(std::abs(back[d] - p[d]) < 1e-6);
    }
}

TEST_CASE("farthest_point_sample: diagonal corner follows the first pick") {
    const std::vector<std::array<double, 2>> corners = {{0, 0}, {1, 0}, {0, 1}, {1, 1}};
    // find a seed whose first draw is index 0
    std::uint64_t seed = 0;
    for (;; ++seed) {
        Rng probe(seed);
        if (probe.uniform_u32(4) == 0) break;
    }
    const auto picked = farthest_point_sample(corners, 2, seed);
    CHECK(picked[0] == 0);
    CHECK(picked[1] == 3);
}

TEST_CASE("farthest_point_sample: exhaustion covers all indices") {
    const std::vector<std::array<double, 2>> pts = {{0, 0}, {3, 1}, {-2, 4}, {1, 1}, {5, 5}};
    const auto picked = farthest_point_sample(pts, 99, 3);
    REQUIRE(picked.size() == pts.size());
    std::set<int> unique(picked.begin(), picked.end());
    CHECK(unique.size() == pts.size());
}

TEST_CASE("farthest_point_sample: equals the greedy reference on random sets") {
    for (int trial = 0; trial < 200; ++trial) {
        Rng rng(9000 + trial);
        const int count = 1 + static_cast<int>(rng.uniform_u32(64));
        std::vector<std::array<double, 2>> pts(count);
        for (auto& p : pts) p = {rng.uniform(-10, 10), rng.uniform(-10, 10)};
        const int n = 1 + static_cast<int>(rng.uniform_u32(64));
        const auto got = farthest_point_sample(pts, n, 555 + trial);
        const auto want = oracles::fps_reference(pts, n, 555 + trial);
        CHECK(got == want);
    }
}

TEST_CASE("farthest_point_sample: min pairwise distance non-increasing in k") {
    Rng rng(42);
    std::vector<std::array<double, 2>> pts(50);
    for (auto& p : pts) p = {rng.uniform(0, 1), rng.uniform(0, 1)};
    const auto picked = farthest_point_sample(pts, 50, 11);
    double prev = std::numeric_limits<double>::infinity();
    for (std::size_t k = 2; k <= picked.size(); ++k) {
        double min_d = std::numeric_limits<double>::infinity();
        for (std::size_t i = 0; i < k; ++i)
            for (std::size_t j = i + 1; j < k; ++j) {
                const double dx = pts[picked[i]][0] - pts[picked[j]][0];
                const double dy = pts[picked[i]][1] - pts[picked[j]][1];
                min_d = std::min(min_d, std::hypot(dx, dy));
            }
        CHECK(min_d <= prev + 1e-12);
        prev = min_d;
    }
    CHECK_THROWS_AS(farthest_point_sample({}, 1, 0), EmptyInput);
}

TEST_CASE("pixel_to_grid: corners and floor arithmetic") {
    CHECK(pixel_to_grid(0, 0, 64, 64, {16, 16}) == std::array<int, 2>{0, 0});
    CHECK(pixel_to_grid(63, 63, 64, 64, {16, 16}) == std::array<int, 2>{15, 15});
    CHECK(pixel_to_grid(4, 7, 64, 64, {16, 16}) == std::array<int, 2>{1, 1});
    CHECK_THROWS_AS(pixel_to_grid(64, 0, 64, 64, {16, 16}), OutOfBounds);
    CHECK_THROWS_AS(pixel_to_grid(0, 0, 60, 60, {16, 16}), NonIntegerStride);
}

TEST_CASE("find_correspondences: self-correspondence on an identical view") {
    const PosedView v = render_at(cube_mesh(), 30, 25, 2.8);
    const CorrespondenceSet set = find_correspondences(v, v, 16, 0.02, 5, {8, 8});
    REQUIRE(!set.pairs.empty());
    for (const auto& c : set.pairs) {
        CHECK(c.ua == c.ub);
        CHECK(c.va == c.vb);
    }
}

TEST_CASE("find_correspondences: equals the exhaustive visibility oracle") {
    for (int scene_i = 0; scene_i < 10; ++scene_i) {
        Rng rng(400 + scene_i);
        const scene::Mesh mesh = cube_mesh(0.4 + 0.2 * rng.uniform());
        const double az_a = rng.uniform(0, 360);
        const PosedView a = render_at(mesh, az_a, rng.uniform(10, 50), rng.uniform(2.4, 3.2));
        const PosedView b = render_at(mesh, az_a + rng.uniform(-70, 70), rng.uniform(10, 50),
                                      rng.uniform(2.4, 3.2));
        const double tol = 0.02;
        const std::uint64_t seed = 81 + scene_i;
        const CorrespondenceSet got = find_correspondences(a, b, 16, tol, seed, {8, 8});

        // reference: same sampling, independent visibility + dedup
        std::vector<std::array<double, 2>> fg;
        std::vector<std::array<int, 2>> fg_px;
        for (int y = 0; y < a.height(); ++y)
            for (int x = 0; x < a.width(); ++x)
                if (a.mask[a.idx(x, y)]) {
                    fg.push_back({static_cast<double>(x), static_cast<double>(y)});
                    fg_px.push_back({x, y});
                }
        const auto sampled = oracles::fps_reference(fg, 16, seed);
        std::vector<std::array<int, 4>> want; // ua va ub vb
        std::set<std::pair<int, int>> taken;
        for (int si : sampled) {
            const auto r =
                oracles::visibility_reference(a, b, fg_px[si][0], fg_px[si][1], tol);
            if (!r.accepted) continue;
            const std::pair<int, int> cell{fg_px[si][0] * 8 / a.width(),
                                           fg_px[si][1] * 8 / a.height()};
            if (taken.count(cell)) continue;
            taken.insert(cell);
            want.push_back({fg_px[si][0], fg_px[si][1], r.ub, r.vb});
        }
        REQUIRE(got.pairs.size() == want.size());
        for (std::size_t i = 0; i < want.size(); ++i) {
            CHECK(got.pairs[i].ua == want[i][0]);
            CHECK(got.pairs[i].va == want[i][1]);
            CHECK(got.pairs[i].ub == want[i][2]);
            CHECK(got.pairs[i].vb == want[i][3]);
        }
    }
}

TEST_CASE("find_correspondences: antipodal views of a convex object reject everything") {
    scene::Mesh sphere;
    scene::add_sphere(sphere, {0, 0, 0}, 0.8, 12, 16, {0.5f, 0.5f, 0.9f});

    // hand-built look-at poses from exactly opposite eye points, so the
    // visible caps are disjoint up to the grazing rim
    auto look_at = [](const Vec3& eye) {
        const Vec3 fwd = normalized({-eye[0], -eye[1], -eye[2]});
        const Vec3 right = normalized(cross(fwd, Vec3{0, 0, 1}));
        const Vec3 down = cross(fwd, right);
        Pose pose;
        pose.rotation = {right[0], right[1], right[2], down[0], down[1],
                         down[2],  fwd[0],   fwd[1],   fwd[2]};
        const Vec3 rt = mat_mul(pose.rotation, eye);
        pose.translation = {-rt[0], -rt[1], -rt[2]};
        return pose;
    };
    const double el = 20 * 3.14159265358979323846 / 180;
    const Vec3 eye{2.8 * std::cos(el), 0, 2.8 * std::sin(el)};
    const Intrinsics k{32, 32, 16, 16, 32, 32};
    const scene::Background bg;
    const PosedView a = scene::render(sphere, k, look_at(eye), bg, {0.3, 0.2, 0.9});
    const PosedView b = scene::render(sphere, k, look_at({-eye[0], -eye[1], -eye[2]}), bg,
                                      {0.3, 0.2, 0.9});
    const CorrespondenceSet set = find_correspondences(a, b, 32, 1e-3, 3, {8, 8});
    CHECK(set.pairs.empty());
}

TEST_CASE("find_correspondences: empty foreground throws") {
    PosedView empty = single_pixel_view(32, 32, 16, 16, 32, 32, {});
    CHECK_THROWS_AS(find_correspondences(empty, empty, 4, 0.02, 0, {8, 8}), EmptyForeground);
}

TEST_CASE("find_correspondences: accepted pairs satisfy the reprojection invariant") {
    const scene::Mesh mesh = cube_mesh();
    const PosedView a = render_at(mesh, 10, 30, 2.8);
    const PosedView b = render_at(mesh, 50, 35, 3.0);
    const CorrespondenceSet set = find_correspondences(a, b, 32, 0.02, 17, {8, 8});
    REQUIRE(!set.pairs.empty());
    for (const auto& c : set.pairs) {
        const Projection pa = project(a, c.world_point);
        const Projection pb = project(b, c.world_point);
        CHECK(std::abs(pa.u - (c.ua + 0.5)) < 0.5);
        CHECK(std::abs(pa.v - (c.va + 0.5)) < 0.5);
        CHECK(std::abs(pb.u - (c.ub + 0.5)) < 0.5);
        CHECK(std::abs(pb.v - (c.vb + 0.5)) < 0.5);
    }
}

TEST_CASE("occlusion tolerance slack on near-fronto-parallel slabs") {
    // Two parallel slabs, the far one partially occluded. Visible surfaces
    // stay nearly fronto-parallel so depth lookups are clean: doubling the
    // tolerance must not change the accepted set.
    scene::Mesh m;
    scene::add_box(m, {0.3, 0, 0}, {0.01, 0.4, 0.4}, {0.9f, 0.2f, 0.2f});
    scene::add_box(m, {-0.3, 0, 0}, {0.01, 0.55, 0.55}, {0.2f, 0.9f, 0.2f});
    const PosedView a = render_at(m, -5, 0, 2.8, 64, 64);
    const PosedView b = render_at(m, 5, 0, 2.8, 64, 64);
    const CorrespondenceSet s1 = find_correspondences(a, b, 64, 0.02, 23, {16, 16});
    const CorrespondenceSet s2 = find_correspondences(a, b, 64, 0.04, 23, {16, 16});
    REQUIRE(!s1.pairs.empty());
    REQUIRE(s1.pairs.size() == s2.pairs.size());
    for (std::size_t i = 0; i < s1.pairs.size(); ++i) {
        CHECK(s1.pairs[i].ua == s2.pairs[i].ua);
        CHECK(s1.pairs[i].ub == s2.pairs[i].ub);
    }
}

TEST_CASE("rendered foreground pixels round-trip through project(unproject)") {
    const scene::Mesh mesh = cube_mesh();
    const PosedView v = render_at(mesh, 75, 40, 3.1, 64, 64);
    int checked = 0;
    for (int y = 0; y < v.height(); ++y) {
        for (int x = 0; x < v.width(); ++x) {
            if (!v.mask[v.idx(x, y)]) continue;
            const Vec3 w = unproject(v, x, y);
            const Projection p = project(v, w);
            CHECK(std::abs(p.u - (x + 0.5)) < 0.5);
            CHECK(std::abs(p.v - (y + 0.5)) < 0.5);
            CHECK(std::abs(p.z_cam - v.depth_at(x, y)) < 1e-5);
            ++checked;
        }
    }
    CHECK(checked > 100);
}
