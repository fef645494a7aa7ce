#pragma once

// Independent reference implementations used to cross-check the library.
// Everything here is deliberately written from the definitions (plain loops,
// no shared helpers with the code under test).

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <limits>
#include <vector>

#include "dope/geometry.hpp"
#include "dope/rng.hpp"

namespace oracles {

/// Greedy farthest point sampling, recomputing the full min-distance table at
/// every pick (O(n * m^2)).
inline std::vector<int> fps_reference(const std::vector<std::array<double, 2>>& pts, int n,
                                      std::uint64_t seed) {
    dope::Rng rng(seed);
    std::vector<int> picked;
    picked.push_back(static_cast<int>(rng.uniform_u32(static_cast<std::uint32_t>(pts.size()))));
    const int want = std::min<int>(n, static_cast<int>(pts.size()));
    while (static_cast<int>(picked.size()) < want) {
        int best = -1;
        double best_d = -1;
        for (int i = 0; i < static_cast<int>(pts.size()); ++i) {
            double d = std::numeric_limits<double>::infinity();
            for (int j : picked) {
                const double dx = pts[i][0] - pts[j][0];
                const double dy = pts[i][1] - pts[j][1];
                d = std::min(d, dx * dx + dy * dy);
            }
            if (d > best_d) {
                best_d = d;
                best = i;
            }
        }
        picked.push_back(best);
    }
    return picked;
}

/// Exhaustive visibility test for one candidate pixel of view A: lifts it by
/// straight-line camera algebra and checks the full acceptance predicate in
/// view B.
struct VisibilityOutcome {
    bool accepted = false;
    int ub = 0, vb = 0;
    std::array<double, 3> world{0, 0, 0};
};

inline VisibilityOutcome visibility_reference(const dope::geom::PosedView& a,
                                              const dope::geom::PosedView& b, int ua, int va,
                                              double tol) {
    VisibilityOutcome out;
    const auto& ka = a.intrinsics;
    const double d = a.depth[static_cast<std::size_t>(va) * ka.width + ua];
    // camera-frame ray through the pixel center, scaled by depth
    const double xc = (ua + 0.5 - ka.cx) / ka.fx * d;
    const double yc = (va + 0.5 - ka.cy) / ka.fy * d;
    const double zc = d;
    // world = R^T (cam - t)
    const auto& ra = a.pose.rotation;
    const auto& ta = a.pose.translation;
    const double px = xc - ta[0], py = yc - ta[1], pz = zc - ta[2];
    const double wx = ra[0] * px + ra[3] * py + ra[6] * pz;
    const double wy = ra[1] * px + ra[4] * py + ra[7] * pz;
    const double wz = ra[2] * px + ra[5] * py + ra[8] * pz;
    out.world = {wx, wy, wz};
    // into view B
    const auto& rb = b.pose.rotation;
    const auto& tb = b.pose.translation;
    const double cx = rb[0] * wx + rb[1] * wy + rb[2] * wz + tb[0];
    const double cy = rb[3] * wx + rb[4] * wy + rb[5] * wz + tb[1];
    const double cz = rb[6] * wx + rb[7] * wy + rb[8] * wz + tb[2];
    if (cz <= 1e-9) return out;
    const auto& kb = b.intrinsics;
    const double ub = kb.fx * cx / cz + kb.cx;
    const double vb = kb.fy * cy / cz + kb.cy;
    const int ubi = static_cast<int>(std::floor(ub));
    const int vbi = static_cast<int>(std::floor(vb));
    if (ubi < 0 || vbi < 0 || ubi >= kb.width || vbi >= kb.height) return out;
    if (!b.mask[static_cast<std::size_t>(vbi) * kb.width + ubi]) return out;
    const double db = b.depth[static_cast<std::size_t>(vbi) * kb.width + ubi];
    if (!(std::abs(db - cz) < tol)) return out;
    out.accepted = true;
    out.ub = ubi;
    out.vb = vbi;
    return out;
}

/// Term-by-term evaluation of the per-correspondence contrastive loss. All
/// feature vectors are given explicitly; the denominator holds the listed
/// negatives plus, optionally, the positive.
inline double nt_xent_reference(const std::vector<double>& z1, const std::vector<double>& z2,
                                const std::vector<std::vector<double>>& negatives, double tau,
                                bool include_positive) {
    auto dot = [](const std::vector<double>& x, const std::vector<double>& y) {
        double s = 0;
        for (std::size_t i = 0; i < x.size(); ++i) s += x[i] * y[i];
        return s;
    };
    const double pos = dot(z1, z2);
    double denom = include_positive ? std::exp(pos / tau) : 0.0;
    for (const auto& n : negatives) denom += std::exp(dot(z1, n) / tau);
    return -std::log(std::exp(pos / tau) / denom);
}

/// Direct-formula binary cross entropy with logits, averaged over cells.
inline double bce_reference(const std::vector<double>& logits,
                            const std::vector<double>& targets) {
    double sum = 0;
    for (std::size_t i = 0; i < logits.size(); ++i) {
        const double p = 1.0 / (1.0 + std::exp(-logits[i]));
        sum += -(targets[i] * std::log(p) + (1.0 - targets[i]) * std::log(1.0 - p));
    }
    return sum / static_cast<double>(logits.size());
}

/// Hand-evaluated AdamW single-tensor step (bias-corrected, decoupled decay).
inline void adamw_reference(std::vector<double>& param, const std::vector<double>& grad,
                            std::vector<double>& m, std::vector<double>& v, std::int64_t step,
                            double lr, double b1, double b2, double eps, double wd) {
    const double bc1 = 1.0 - std::pow(b1, static_cast<double>(step));
    const double bc2 = 1.0 - std::pow(b2, static_cast<double>(step));
    for (std::size_t i = 0; i < param.size(); ++i) {
        m[i] = b1 * m[i] + (1 - b1) * grad[i];
        v[i] = b2 * v[i] + (1 - b2) * grad[i] * grad[i];
        param[i] -= lr * (m[i] / bc1) / (std::sqrt(v[i] / bc2) + eps);
        param[i] -= lr * wd * param[i];
    }
}

/// Population-sigma 95% confidence half width.
inline double ci_reference(const std::vector<double>& accuracies) {
    const double n = static_cast<double>(accuracies.size());
    double mean = 0;
    for (const double a : accuracies) mean += a;
    mean /= n;
    double var = 0;
    for (const double a : accuracies) var += (a - mean) * (a - mean);
    var /= n;
    return 1.96 * std::sqrt(var) / std::sqrt(n);
}

} // namespace oracles
