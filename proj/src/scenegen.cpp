#include "dope/scenegen.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "dope/dataset_io.hpp"
#include "dope/rng.hpp"

namespace dope::scene {

namespace {
constexpr double kPi = 3.14159265358979323846;

std::array<float, 3> hsv_to_rgb(double h, double s, double v) {
    h = h - std::floor(h);
    const double c = v * s;
    const double hp = h * 6.0;
    const double x = c * (1.0 - std::abs(std::fmod(hp, 2.0) - 1.0));
    double r = 0, g = 0, b = 0;
    if (hp < 1)      { r = c; g = x; }
    else if (hp < 2) { r = x; g = c; }
    else if (hp < 3) { g = c; b = x; }
    else if (hp < 4) { g = x; b = c; }
    else if (hp < 5) { r = x; b = c; }
    else             { r = c; b = x; }
    const double m = v - c;
    return {static_cast<float>(r + m), static_cast<float>(g + m), static_cast<float>(b + m)};
}
} // namespace

void Mesh::validate() const {
    const int nv = static_cast<int>(vertices.size());
    if (triangles.size() != face_colors.size())
        throw ShapeMismatch("Mesh: triangle/color count mismatch");
    for (const auto& t : triangles) {
        for (int k : t)
            if (k < 0 || k >= nv) throw OutOfBounds("Mesh: vertex index out of range");
        const Vec3 e1 = vertices[t[1]] - vertices[t[0]];
        const Vec3 e2 = vertices[t[2]] - vertices[t[0]];
        if (0.5 * geom::norm(geom::cross(e1, e2)) <= 1e-12)
            throw InvalidRange("Mesh: degenerate triangle");
    }
}

namespace {

int add_vertex(Mesh& m, const Vec3& v) {
    m.vertices.push_back(v);
    return static_cast<int>(m.vertices.size()) - 1;
}

void add_tri(Mesh& m, int a, int b, int c, const std::array<float, 3>& color) {
    m.triangles.push_back({a, b, c});
    m.face_colors.push_back(color);
}

} // namespace

void add_box(Mesh& m, const Vec3& c, const Vec3& h, const std::array<float, 3>& color) {
    const int base = static_cast<int>(m.vertices.size());
    for (int i = 0; i < 8; ++i) {
        add_vertex(m, {c[0] + ((i & 1) ? h[0] : -h[0]), c[1] + ((i & 2) ? h[1] : -h[1]),
                       c[2] + ((i & 4) ? h[2] : -h[2])});
    }
    static const int faces[6][4] = {
        {0, 4, 6, 2}, // -x
        {1, 3, 7, 5}, // +x
        {0, 1, 5, 4}, // -y
        {2, 6, 7, 3}, // +y
        {0, 2, 3, 1}, // -z
        {4, 5, 7, 6}, // +z
    };
    for (const auto& f : faces) {
        add_tri(m, base + f[0], base + f[1], base + f[2], color);
        add_tri(m, base + f[0], base + f[2], base + f[3], color);
    }
}

void add_box_grid(Mesh& m, const Vec3& c, const Vec3& h, const std::array<float, 3>& color,
                  int subdiv) {
    if (subdiv <= 1) {
        add_box(m, c, h, color);
        return;
    }
    // each face: axes (u, v) spanning the face at a fixed coordinate
    struct Face {
        int axis;   // fixed axis
        double dir; // +1 or -1
        int ua, va; // the two spanning axes
    };
    // (ua x va) must equal dir * axis so normals face outward
    static const Face faces[6] = {{0, -1, 2, 1}, {0, 1, 1, 2}, {1, -1, 0, 2},
                                  {1, 1, 2, 0},  {2, -1, 1, 0}, {2, 1, 0, 1}};
    for (const auto& f : faces) {
        for (int i = 0; i < subdiv; ++i) {
            for (int j = 0; j < subdiv; ++j) {
                auto corner = [&](int di, int dj) {
                    Vec3 p = c;
                    p[f.axis] += f.dir * h[f.axis];
                    p[f.ua] += (-1.0 + 2.0 * (i + di) / subdiv) * h[f.ua];
                    p[f.va] += (-1.0 + 2.0 * (j + dj) / subdiv) * h[f.va];
                    return p;
                };
                const int a = add_vertex(m, corner(0, 0));
                const int b = add_vertex(m, corner(1, 0));
                const int cc = add_vertex(m, corner(1, 1));
                const int d = add_vertex(m, corner(0, 1));
                add_tri(m, a, b, cc, color);
                add_tri(m, a, cc, d, color);
            }
        }
    }
}

void add_sphere(Mesh& m, const Vec3& c, double radius, int rings, int segments,
                const std::array<float, 3>& color) {
    const int base = static_cast<int>(m.vertices.size());
    // ring 0 = south pole, ring `rings` = north pole
    std::vector<std::vector<int>> ring_ids(rings + 1);
    for (int r = 0; r <= rings; ++r) {
        const double phi = kPi * r / rings - kPi / 2; // latitude
        if (r == 0 || r == rings) {
            ring_ids[r].push_back(add_vertex(m, {c[0], c[1], c[2] + radius * std::sin(phi)}));
            continue;
        }
        for (int s = 0; s < segments; ++s) {
            const double theta = 2 * kPi * s / segments;
            ring_ids[r].push_back(add_vertex(
                m, {c[0] + radius * std::cos(phi) * std::cos(theta),
                    c[1] + radius * std::cos(phi) * std::sin(theta),
                    c[2] + radius * std::sin(phi)}));
        }
    }
    (void)base;
    for (int s = 0; s < segments; ++s) {
        const int sn = (s + 1) % segments;
        add_tri(m, ring_ids[0][0], ring_ids[1][sn], ring_ids[1][s], color);
        add_tri(m, ring_ids[rings][0], ring_ids[rings - 1][s], ring_ids[rings - 1][sn], color);
    }
    for (int r = 1; r < rings - 1; ++r) {
        for (int s = 0; s < segments; ++s) {
            const int sn = (s + 1) % segments;
            add_tri(m, ring_ids[r][s], ring_ids[r][sn], ring_ids[r + 1][sn], color);
            add_tri(m, ring_ids[r][s], ring_ids[r + 1][sn], ring_ids[r + 1][s], color);
        }
    }
}

void add_cylinder(Mesh& m, const Vec3& c, double radius, double half_len, int segments,
                  int axis, const std::array<float, 3>& color) {
    // Build along z then swap coordinates into place.
    auto place = [&](double x, double y, double z) -> Vec3 {
        switch (axis) {
            case 0: return {c[0] + z, c[1] + x, c[2] + y};
            case 1: return {c[0] + y, c[1] + z, c[2] + x};
            default: return {c[0] + x, c[1] + y, c[2] + z};
        }
    };
    std::vector<int> lo(segments), hi(segments);
    for (int s = 0; s < segments; ++s) {
        const double th = 2 * kPi * s / segments;
        const double x = radius * std::cos(th), y = radius * std::sin(th);
        lo[s] = add_vertex(m, place(x, y, -half_len));
        hi[s] = add_vertex(m, place(x, y, half_len));
    }
    const int cl = add_vertex(m, place(0, 0, -half_len));
    const int ch = add_vertex(m, place(0, 0, half_len));
    for (int s = 0; s < segments; ++s) {
        const int sn = (s + 1) % segments;
        add_tri(m, lo[s], lo[sn], hi[sn], color);
        add_tri(m, lo[s], hi[sn], hi[s], color);
        add_tri(m, cl, lo[sn], lo[s], color);
        add_tri(m, ch, hi[s], hi[sn], color);
    }
}

void add_cone(Mesh& m, const Vec3& base, double radius, double height, int segments,
              const std::array<float, 3>& color) {
    std::vector<int> rim(segments);
    for (int s = 0; s < segments; ++s) {
        const double th = 2 * kPi * s / segments;
        rim[s] = add_vertex(m, {base[0] + radius * std::cos(th),
                                base[1] + radius * std::sin(th), base[2]});
    }
    const int apex = add_vertex(m, {base[0], base[1], base[2] + height});
    const int cb = add_vertex(m, base);
    for (int s = 0; s < segments; ++s) {
        const int sn = (s + 1) % segments;
        add_tri(m, rim[s], rim[sn], apex, color);
        add_tri(m, cb, rim[sn], rim[s], color);
    }
}

void add_wedge(Mesh& m, const Vec3& c, double hx, double hy, double hz,
               const std::array<float, 3>& color) {
    const int a0 = add_vertex(m, {c[0] - hx, c[1] - hy, c[2] - hz});
    const int a1 = add_vertex(m, {c[0] + hx, c[1] - hy, c[2] - hz});
    const int a2 = add_vertex(m, {c[0], c[1] - hy, c[2] + hz}); // front ridge
    const int b0 = add_vertex(m, {c[0] - hx, c[1] + hy, c[2] - hz});
    const int b1 = add_vertex(m, {c[0] + hx, c[1] + hy, c[2] - hz});
    const int b2 = add_vertex(m, {c[0], c[1] + hy, c[2] + hz}); // back ridge
    add_tri(m, a0, a1, a2, color);                               // front
    add_tri(m, b1, b0, b2, color);                               // back
    add_tri(m, a1, b1, b2, color);                               // +x slope
    add_tri(m, a1, b2, a2, color);
    add_tri(m, b0, a0, a2, color);                               // -x slope
    add_tri(m, b0, a2, b2, color);
    add_tri(m, a0, b0, b1, color);                               // bottom
    add_tri(m, a0, b1, a1, color);
}

void ParamRanges::validate() const {
    if (!(prop_lo <= prop_hi && prop_lo > 0) || !(sat_lo <= sat_hi) || !(val_lo <= val_hi))
        throw InvalidRange("ParamRanges: empty or invalid range");
}

const std::vector<std::string>& template_names() {
    static const std::vector<std::string> names = {
        "table", "chair", "mug",  "house", "snowman", "barbell",
        "tower", "arch",  "cross", "lamp",  "rocket",  "bench"};
    return names;
}

namespace {

struct Draw {
    Rng& rng;
    const ParamRanges& pr;
    double p() { return rng.uniform(pr.prop_lo, pr.prop_hi); }
    std::array<float, 3> color() {
        const double h = rng.uniform();
        const double s = rng.uniform(pr.sat_lo, pr.sat_hi);
        const double v = rng.uniform(pr.val_lo, pr.val_hi);
        return hsv_to_rgb(h, s, v);
    }
};

Mesh build_table(Draw& d) {
    Mesh m;
    const double tw = 0.55 * d.p(), td = 0.42 * d.p(), tt = 0.05 * d.p();
    const double lr = 0.06 * d.p(), lh = 0.45 * d.p();
    const auto top_c = d.color(), leg_c = d.color();
    add_box_grid(m, {0, 0, lh + tt}, {tw, td, tt}, top_c, 3);
    for (int sx : {-1, 1})
        for (int sy : {-1, 1})
            add_box_grid(m, {sx * (tw - lr), sy * (td - lr), lh / 2}, {lr, lr, lh / 2}, leg_c, 3);
    return m;
}

Mesh build_chair(Draw& d) {
    Mesh m;
    const double sw = 0.35 * d.p(), st = 0.05 * d.p();
    const double lr = 0.05 * d.p(), lh = 0.3 * d.p();
    const double bh = 0.3 * d.p(), bt = 0.04 * d.p();
    const auto seat_c = d.color(), leg_c = d.color(), back_c = d.color();
    add_box_grid(m, {0, 0, lh + st}, {sw, sw, st}, seat_c, 3);
    for (int sx : {-1, 1})
        for (int sy : {-1, 1})
            add_box_grid(m, {sx * (sw - lr), sy * (sw - lr), lh / 2}, {lr, lr, lh / 2}, leg_c, 3);
    add_box_grid(m, {0, sw - bt, lh + 2 * st + bh}, {sw, bt, bh}, back_c, 3);
    return m;
}

Mesh build_mug(Draw& d) {
    Mesh m;
    const double br = 0.4 * d.p(), bh = 0.45 * d.p();
    const double hr = 0.05 * d.p();
    const auto body_c = d.color(), handle_c = d.color();
    add_cylinder(m, {0, 0, 0}, br, bh, 14, 2, body_c);
    const double hx = br + 0.18 * d.p();
    add_box_grid(m, {hx, 0, 0}, {hr, hr, 0.55 * bh}, handle_c, 3);
    add_box_grid(m, {(br + hx) / 2, 0, 0.55 * bh}, {(hx - br) / 2 + hr, hr, hr}, handle_c, 3);
    add_box_grid(m, {(br + hx) / 2, 0, -0.55 * bh}, {(hx - br) / 2 + hr, hr, hr}, handle_c, 3);
    return m;
}

Mesh build_house(Draw& d) {
    Mesh m;
    const double wx = 0.45 * d.p(), wy = 0.35 * d.p(), wz = 0.3 * d.p();
    const double rz = 0.22 * d.p();
    const auto wall_c = d.color(), roof_c = d.color();
    add_box_grid(m, {0, 0, 0}, {wx, wy, wz}, wall_c, 3);
    add_wedge(m, {0, 0, wz + rz}, wx * 1.15, wy * 1.15, rz, roof_c);
    return m;
}

Mesh build_snowman(Draw& d) {
    Mesh m;
    const double r0 = 0.42 * d.p(), r1 = 0.3 * d.p(), r2 = 0.2 * d.p();
    const auto c0 = d.color(), c1 = d.color(), c2 = d.color();
    const double z0 = 0;
    const double z1 = z0 + 0.85 * (r0 + r1);
    const double z2 = z1 + 0.85 * (r1 + r2);
    add_sphere(m, {0, 0, z0}, r0, 8, 12, c0);
    add_sphere(m, {0, 0, z1}, r1, 8, 12, c1);
    add_sphere(m, {0, 0, z2}, r2, 8, 12, c2);
    return m;
}

Mesh build_barbell(Draw& d) {
    Mesh m;
    const double r = 0.3 * d.p(), ar = 0.09 * d.p(), sep = 0.55 * d.p();
    const auto ball_c = d.color(), axle_c = d.color();
    add_sphere(m, {-sep, 0, 0}, r, 8, 12, ball_c);
    add_sphere(m, {sep, 0, 0}, r, 8, 12, ball_c);
    add_cylinder(m, {0, 0, 0}, ar, sep, 10, 0, axle_c);
    return m;
}

Mesh build_tower(Draw& d) {
    Mesh m;
    double z = 0;
    double w = 0.45 * d.p();
    for (int level = 0; level < 4; ++level) {
        const double hz = 0.14 * d.p();
        add_box_grid(m, {0, 0, z + hz}, {w, w, hz}, d.color(), 3);
        z += 2 * hz;
        w *= 0.72;
    }
    return m;
}

Mesh build_arch(Draw& d) {
    Mesh m;
    const double px = 0.38 * d.p(), pw = 0.12 * d.p(), ph = 0.4 * d.p();
    const double st = 0.09 * d.p();
    const auto pillar_c = d.color(), slab_c = d.color();
    add_box_grid(m, {-px, 0, ph}, {pw, 0.14 * d.p(), ph}, pillar_c, 3);
    add_box_grid(m, {px, 0, ph}, {pw, 0.14 * d.p(), ph}, pillar_c, 3);
    add_box_grid(m, {0, 0, 2 * ph + st}, {px + 2 * pw, 0.16 * d.p(), st}, slab_c, 3);
    return m;
}

Mesh build_cross(Draw& d) {
    Mesh m;
    const double vr = 0.1 * d.p(), vh = 0.55 * d.p();
    const double hr = 0.1 * d.p(), hw = 0.45 * d.p();
    const auto vc = d.color(), hc = d.color();
    add_box_grid(m, {0, 0, 0}, {vr, vr, vh}, vc, 3);
    add_box_grid(m, {0, 0, 0.35 * vh}, {hw, hr, hr}, hc, 3);
    return m;
}

Mesh build_lamp(Draw& d) {
    Mesh m;
    const double br = 0.3 * d.p(), bt = 0.05 * d.p();
    const double pr = 0.05 * d.p(), ph = 0.42 * d.p();
    const double sr = 0.32 * d.p(), sh = 0.3 * d.p();
    const auto base_c = d.color(), pole_c = d.color(), shade_c = d.color();
    add_cylinder(m, {0, 0, bt}, br, bt, 12, 2, base_c);
    add_cylinder(m, {0, 0, 2 * bt + ph}, pr, ph, 8, 2, pole_c);
    add_cone(m, {0, 0, 2 * bt + 2 * ph}, sr, sh, 12, shade_c);
    return m;
}

Mesh build_rocket(Draw& d) {
    Mesh m;
    const double br = 0.2 * d.p(), bh = 0.42 * d.p();
    const double nh = 0.34 * d.p();
    const double fw = 0.12 * d.p(), fh = 0.14 * d.p();
    const auto body_c = d.color(), nose_c = d.color(), fin_c = d.color();
    add_cylinder(m, {0, 0, bh}, br, bh, 12, 2, body_c);
    add_cone(m, {0, 0, 2 * bh}, br, nh, 12, nose_c);
    add_box_grid(m, {br + fw / 2, 0, fh}, {fw, 0.03, fh}, fin_c, 3);
    add_box_grid(m, {-br - fw / 2, 0, fh}, {fw, 0.03, fh}, fin_c, 3);
    add_box_grid(m, {0, br + fw / 2, fh}, {0.03, fw, fh}, fin_c, 3);
    add_box_grid(m, {0, -br - fw / 2, fh}, {0.03, fw, fh}, fin_c, 3);
    return m;
}

Mesh build_bench(Draw& d) {
    Mesh m;
    const double sw = 0.55 * d.p(), sd = 0.2 * d.p(), st = 0.05 * d.p();
    const double pw = 0.05 * d.p(), ph = 0.25 * d.p();
    const auto seat_c = d.color(), panel_c = d.color();
    add_box_grid(m, {0, 0, 2 * ph + st}, {sw, sd, st}, seat_c, 3);
    add_box_grid(m, {-(sw - pw), 0, ph}, {pw, sd * 0.9, ph}, panel_c, 3);
    add_box_grid(m, {sw - pw, 0, ph}, {pw, sd * 0.9, ph}, panel_c, 3);
    return m;
}

// Each template carries a characteristic facet pattern (the desk-scale stand
// in for materials). Colors stay random per instance; only the *spatial
// arrangement* of light/dark facets is category-typical, so local patches
// carry category evidence the way real surface materials do.
void apply_surface_pattern(Mesh& m, const std::string& tmpl, Rng& rng) {
    const double freq = rng.uniform(0.8, 1.25);
    const double phase = rng.uniform(0.0, 6.28318);
    const double contrast = rng.uniform(0.35, 0.6);
    const double density = rng.uniform(0.8, 1.2);

    auto centroid = [&](std::size_t f) {
        const auto& t = m.triangles[f];
        Vec3 c{0, 0, 0};
        for (int k : t) c = c + m.vertices[k];
        return (1.0 / 3.0) * c;
    };
    auto stripes = [&](double coord, double f) {
        return std::sin(6.28318 * f * coord + phase) > 0 ? 1.0 : 0.0;
    };

    for (std::size_t f = 0; f < m.triangles.size(); ++f) {
        const Vec3 c = centroid(f);
        const double u = rng.uniform(); // per-facet draw, deterministic order
        double t = 0.5;
        if (tmpl == "table") t = stripes(c[0], 2.2 * freq);
        else if (tmpl == "chair") t = u < 0.5 ? 0.0 : 1.0;
        else if (tmpl == "mug") t = std::clamp(0.5 + c[2] * 1.2 * freq, 0.0, 1.0);
        else if (tmpl == "house") t = stripes(c[2], 3.0 * freq);
        else if (tmpl == "snowman") t = u < 0.18 * density ? 0.0 : 1.0;
        else if (tmpl == "barbell") t = stripes(c[0], 4.0 * freq);
        else if (tmpl == "tower") t = stripes(c[2], 1.5 * freq);
        else if (tmpl == "arch") t = stripes(c[2], 5.0 * freq);
        else if (tmpl == "cross") t = 0.5 + 0.12 * (u - 0.5); // nearly plain
        else if (tmpl == "lamp") t = stripes(std::atan2(c[1], c[0]) / 6.28318, 5.0 * freq);
        else if (tmpl == "rocket") t = std::clamp(0.5 - c[2] * 1.4 * freq, 0.0, 1.0);
        else if (tmpl == "bench")
            t = (static_cast<int>(std::floor(c[0] * 3 * density + phase)) +
                 static_cast<int>(std::floor(c[2] * 3 * density))) % 2 == 0
                    ? 0.0
                    : 1.0;
        const double scale = 1.0 - contrast * (1.0 - t);
        const double jitter = 1.0 + 0.08 * (u - 0.5);
        for (auto& ch : m.face_colors[f])
            ch = static_cast<float>(std::clamp(ch * scale * jitter + 0.04, 0.02, 1.0));
    }
}

void normalize_to_unit_ball(Mesh& m) {
    Vec3 lo{1e30, 1e30, 1e30}, hi{-1e30, -1e30, -1e30};
    for (const auto& v : m.vertices) {
        for (int k = 0; k < 3; ++k) {
            lo[k] = std::min(lo[k], v[k]);
            hi[k] = std::max(hi[k], v[k]);
        }
    }
    const Vec3 center{(lo[0] + hi[0]) / 2, (lo[1] + hi[1]) / 2, (lo[2] + hi[2]) / 2};
    double max_norm = 0;
    for (auto& v : m.vertices) {
        v = v - center;
        max_norm = std::max(max_norm, geom::norm(v));
    }
    const double scale = (1.0 - 1e-9) / max_norm;
    for (auto& v : m.vertices) v = scale * v;
}

} // namespace

Mesh make_instance(const CategorySpec& spec, std::uint64_t seed) {
    spec.ranges.validate();
    Rng rng(derive_seed(seed, 0x6d657368 /* mesh */, static_cast<std::uint64_t>(spec.category_id)));
    Draw d{rng, spec.ranges};

    Mesh m;
    if (spec.tmpl == "table") m = build_table(d);
    else if (spec.tmpl == "chair") m = build_chair(d);
    else if (spec.tmpl == "mug") m = build_mug(d);
    else if (spec.tmpl == "house") m = build_house(d);
    else if (spec.tmpl == "snowman") m = build_snowman(d);
    else if (spec.tmpl == "barbell") m = build_barbell(d);
    else if (spec.tmpl == "tower") m = build_tower(d);
    else if (spec.tmpl == "arch") m = build_arch(d);
    else if (spec.tmpl == "cross") m = build_cross(d);
    else if (spec.tmpl == "lamp") m = build_lamp(d);
    else if (spec.tmpl == "rocket") m = build_rocket(d);
    else if (spec.tmpl == "bench") m = build_bench(d);
    else throw UnknownTemplate("make_instance: unknown template '" + spec.tmpl + "'");

    apply_surface_pattern(m, spec.tmpl, rng);

    normalize_to_unit_ball(m);
    m.validate();
    return m;
}

void CameraRanges::validate() const {
    if (!(elevation_lo_deg >= 0 && elevation_hi_deg < 90 &&
          elevation_lo_deg <= elevation_hi_deg))
        throw InvalidRange("CameraRanges: elevation must lie in [0, 90)");
    if (!(distance_lo > 0 && distance_lo <= distance_hi))
        throw InvalidRange("CameraRanges: distance range must be positive");
    if (!(azimuth_lo_deg <= azimuth_hi_deg))
        throw InvalidRange("CameraRanges: empty azimuth range");
}

std::pair<Intrinsics, Pose> sample_camera(const CameraRanges& ranges, int width, int height,
                                          double focal, std::uint64_t seed) {
    ranges.validate();
    Rng rng(seed);
    const double az = rng.uniform(ranges.azimuth_lo_deg, ranges.azimuth_hi_deg) * kPi / 180;
    const double el = rng.uniform(ranges.elevation_lo_deg, ranges.elevation_hi_deg) * kPi / 180;
    const double dist = rng.uniform(ranges.distance_lo, ranges.distance_hi);

    const Vec3 eye{dist * std::cos(el) * std::cos(az), dist * std::cos(el) * std::sin(az),
                   dist * std::sin(el)};
    const Vec3 fwd = geom::normalized({-eye[0], -eye[1], -eye[2]});
    const Vec3 right = geom::normalized(geom::cross(fwd, Vec3{0, 0, 1}));
    const Vec3 down = geom::cross(fwd, right);

    Pose pose;
    pose.rotation = {right[0], right[1], right[2], down[0], down[1],
                     down[2],  fwd[0],   fwd[1],   fwd[2]};
    const Vec3 rt = geom::mat_mul(pose.rotation, eye);
    pose.translation = {-rt[0], -rt[1], -rt[2]};

    Intrinsics k;
    k.fx = k.fy = focal;
    k.cx = width / 2.0;
    k.cy = height / 2.0;
    k.width = width;
    k.height = height;
    return {k, pose};
}

PosedView render(const Mesh& mesh, const Intrinsics& intrinsics, const Pose& pose,
                 const Background& background, const Vec3& light_dir) {
    const int w = intrinsics.width, h = intrinsics.height;
    PosedView view;
    view.intrinsics = intrinsics;
    view.pose = pose;
    view.rgb.resize(static_cast<std::size_t>(w) * h * 3);
    view.depth.assign(static_cast<std::size_t>(w) * h, 0.0f);
    view.mask.assign(static_cast<std::size_t>(w) * h, 0);

    for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
            const bool alt = background.kind == Background::Kind::Checker &&
                             ((x / background.checker_px + y / background.checker_px) & 1);
            const auto& c = alt ? background.color_b : background.color_a;
            float* px = &view.rgb[(static_cast<std::size_t>(y) * w + x) * 3];
            px[0] = c[0];
            px[1] = c[1];
            px[2] = c[2];
        }
    }

    std::vector<double> zbuf(static_cast<std::size_t>(w) * h,
                             std::numeric_limits<double>::infinity());
    const Vec3 l = geom::normalized(light_dir);

    for (std::size_t ti = 0; ti < mesh.triangles.size(); ++ti) {
        const auto& tri = mesh.triangles[ti];
        const Vec3& w0 = mesh.vertices[tri[0]];
        const Vec3& w1 = mesh.vertices[tri[1]];
        const Vec3& w2 = mesh.vertices[tri[2]];

        const Vec3 c0 = geom::mat_mul(pose.rotation, w0) + pose.translation;
        const Vec3 c1 = geom::mat_mul(pose.rotation, w1) + pose.translation;
        const Vec3 c2 = geom::mat_mul(pose.rotation, w2) + pose.translation;
        if (c0[2] <= 0.05 || c1[2] <= 0.05 || c2[2] <= 0.05) continue;

        const double u0 = intrinsics.fx * c0[0] / c0[2] + intrinsics.cx;
        const double v0 = intrinsics.fy * c0[1] / c0[2] + intrinsics.cy;
        const double u1 = intrinsics.fx * c1[0] / c1[2] + intrinsics.cx;
        const double v1 = intrinsics.fy * c1[1] / c1[2] + intrinsics.cy;
        const double u2 = intrinsics.fx * c2[0] / c2[2] + intrinsics.cx;
        const double v2 = intrinsics.fy * c2[1] / c2[2] + intrinsics.cy;

        const double area = (u1 - u0) * (v2 - v0) - (v1 - v0) * (u2 - u0);
        if (std::abs(area) < 1e-12) continue;
        const double sign = area > 0 ? 1.0 : -1.0;

        const Vec3 n = geom::normalized(geom::cross(w1 - w0, w2 - w0));
        const double intensity = std::max(0.0, geom::dot(n, l)) * 0.8 + 0.2;
        const auto& fc = mesh.face_colors[ti];
        const float r = static_cast<float>(std::min(1.0, fc[0] * intensity));
        const float g = static_cast<float>(std::min(1.0, fc[1] * intensity));
        const float b = static_cast<float>(std::min(1.0, fc[2] * intensity));

        const double iz0 = 1.0 / c0[2], iz1 = 1.0 / c1[2], iz2 = 1.0 / c2[2];

        const int x_min = std::max(0, static_cast<int>(std::floor(std::min({u0, u1, u2}) - 0.5)));
        const int x_max = std::min(w - 1, static_cast<int>(std::ceil(std::max({u0, u1, u2}))));
        const int y_min = std::max(0, static_cast<int>(std::floor(std::min({v0, v1, v2}) - 0.5)));
        const int y_max = std::min(h - 1, static_cast<int>(std::ceil(std::max({v0, v1, v2}))));

        for (int y = y_min; y <= y_max; ++y) {
            const double py = y + 0.5;
            for (int x = x_min; x <= x_max; ++x) {
                const double px = x + 0.5;
                const double e0 = (u2 - u1) * (py - v1) - (v2 - v1) * (px - u1);
                const double e1 = (u0 - u2) * (py - v2) - (v0 - v2) * (px - u2);
                const double e2 = (u1 - u0) * (py - v0) - (v1 - v0) * (px - u0);
                if (sign * e0 < 0 || sign * e1 < 0 || sign * e2 < 0) continue;
                const double wsum = e0 + e1 + e2;
                const double inv_z = e0 * iz0 + e1 * iz1 + e2 * iz2;
                // signs of wsum and inv_z follow the projected winding
                if (sign * inv_z <= 0) continue;
                const double z = wsum / inv_z;
                const std::size_t i = static_cast<std::size_t>(y) * w + x;
                if (z < zbuf[i]) {
                    zbuf[i] = z;
                    view.depth[i] = static_cast<float>(z);
                    view.mask[i] = 1;
                    view.rgb[i * 3 + 0] = r;
                    view.rgb[i * 3 + 1] = g;
                    view.rgb[i * 3 + 2] = b;
                }
            }
        }
    }
    return view;
}

void DatasetSpec::validate() const {
    if (views_per_instance < 2) throw InvalidRange("DatasetSpec: need >= 2 views per instance");
    if (instances_per_category < 1) throw InvalidRange("DatasetSpec: need >= 1 instance");
    if (grid_size <= 0 || image_size % grid_size != 0)
        throw NonIntegerStride("DatasetSpec: image size not divisible by grid size");
    camera.validate();
    for (std::size_t i = 0; i < categories.size(); ++i) {
        categories[i].ranges.validate();
        for (std::size_t j = i + 1; j < categories.size(); ++j) {
            if (categories[i].category_id == categories[j].category_id)
                throw InvalidRange("DatasetSpec: duplicate category id");
            if (categories[i].tmpl == categories[j].tmpl)
                throw InvalidRange("DatasetSpec: categories must use distinct templates");
        }
    }
}

DatasetSpec default_dataset_spec(std::uint64_t seed) {
    DatasetSpec spec;
    spec.seed = seed;
    const auto& names = template_names();
    for (std::size_t i = 0; i < names.size(); ++i) {
        CategorySpec c;
        c.category_id = static_cast<int>(i);
        c.tmpl = names[i];
        spec.categories.push_back(c);
    }
    return spec;
}

PosedView render_dataset_view(const DatasetSpec& spec, int category_index, int instance,
                              int view) {
    const auto& cat = spec.categories.at(category_index);
    const std::uint64_t inst_seed =
        derive_seed(spec.seed, 0x696e7374 /* inst */, cat.category_id, instance);
    const Mesh mesh = make_instance(cat, inst_seed);

    const std::uint64_t view_seed =
        derive_seed(spec.seed, 0x76696577 /* view */,
                    static_cast<std::uint64_t>(cat.category_id) * 100003 + instance, view);
    auto [k, pose] = sample_camera(spec.camera, spec.image_size, spec.image_size, spec.focal,
                                   derive_seed(view_seed, 1));

    Rng rng(derive_seed(view_seed, 2));
    Background bg;
    switch (spec.background) {
        case BackgroundMode::Solid: bg.kind = Background::Kind::Solid; break;
        case BackgroundMode::Checker: bg.kind = Background::Kind::Checker; break;
        case BackgroundMode::Mixed:
            bg.kind = rng.coin() ? Background::Kind::Checker : Background::Kind::Solid;
            break;
    }
    for (int c = 0; c < 3; ++c) {
        bg.color_a[c] = rng.uniformf(0.05f, 0.95f);
        bg.color_b[c] = rng.uniformf(0.05f, 0.95f);
    }

    // Light roughly from the camera side with some wobble, so visible faces
    // stay lit but shading varies between views.
    const Vec3 eye = pose.camera_center();
    Vec3 light = geom::normalized(eye);
    light[0] += rng.uniform(-0.4, 0.4);
    light[1] += rng.uniform(-0.4, 0.4);
    light[2] += rng.uniform(0.0, 0.6);
    return render(mesh, k, pose, bg, geom::normalized(light));
}

void generate_dataset(const DatasetSpec& spec, const std::string& out_path) {
    spec.validate();
    io::write_dataset(spec, out_path);
}

} // namespace dope::scene
