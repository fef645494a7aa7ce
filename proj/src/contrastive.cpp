#include "dope/contrastive.hpp"

#include <algorithm>
#include <cmath>
#include <memory>
#include <ostream>

#include "dope/parallel.hpp"
#include "dope/rng.hpp"

namespace dope::contrastive {

std::string to_string(NegativeStrategy s) {
    switch (s) {
        case NegativeStrategy::SecondViewOnly: return "second_view_only";
        case NegativeStrategy::OtherObjectsOnly: return "other_objects_only";
        default: return "both";
    }
}

std::string to_string(PairMode m) {
    return m == PairMode::MultiView ? "multi_view" : "single_view_augmented";
}

NegativeStrategy strategy_from_string(const std::string& s) {
    if (s == "second_view_only") return NegativeStrategy::SecondViewOnly;
    if (s == "other_objects_only") return NegativeStrategy::OtherObjectsOnly;
    if (s == "both") return NegativeStrategy::Both;
    throw ConfigError("unknown negative strategy '" + s + "'");
}

PairMode pair_mode_from_string(const std::string& s) {
    if (s == "multi_view") return PairMode::MultiView;
    if (s == "single_view_augmented") return PairMode::SingleViewAugmented;
    throw ConfigError("unknown pair mode '" + s + "'");
}

void TrainConfig::validate() const {
    if (!(temperature > 0)) throw InvalidRange("TrainConfig: temperature must be > 0");
    if (n_correspondences < 1) throw InvalidRange("TrainConfig: n_correspondences must be >= 1");
    if (batch_size < 1) throw InvalidRange("TrainConfig: batch_size must be >= 1");
    if (strategy != NegativeStrategy::SecondViewOnly && batch_size < 2)
        throw InvalidRange("TrainConfig: other-object negatives need batch_size >= 2");
    if (epochs < 1 && steps < 1) throw InvalidRange("TrainConfig: epochs must be >= 1");
    if (!(ema_momentum >= 0 && ema_momentum <= 1))
        throw InvalidRange("TrainConfig: ema_momentum must lie in [0,1]");
    if (!(lr0 >= 0)) throw InvalidRange("TrainConfig: lr0 must be >= 0");
    if (!(occlusion_tol > 0)) throw InvalidRange("TrainConfig: occlusion_tol must be > 0");
    if (!(max_azimuth_gap_deg > 0)) throw InvalidRange("TrainConfig: azimuth gap must be > 0");
}

// ---------------------------------------------------------------------------
// augmentation
// ---------------------------------------------------------------------------

namespace {

struct Affine2 {
    // row-major 2x3: maps pixel-center coordinates
    double a = 1, b = 0, tx = 0;
    double c = 0, d = 1, ty = 0;

    std::array<double, 2> apply(double x, double y) const {
        return {a * x + b * y + tx, c * x + d * y + ty};
    }
    Affine2 inverse() const {
        const double det = a * d - b * c;
        Affine2 inv;
        inv.a = d / det;
        inv.b = -b / det;
        inv.c = -c / det;
        inv.d = a / det;
        inv.tx = -(inv.a * tx + inv.b * ty);
        inv.ty = -(inv.c * tx + inv.d * ty);
        return inv;
    }
};

std::array<float, 3> mean_background_color(const geom::PosedView& view) {
    double sum[3] = {0, 0, 0};
    std::size_t n = 0;
    for (std::size_t i = 0; i < view.mask.size(); ++i) {
        if (view.mask[i]) continue;
        for (int c = 0; c < 3; ++c) sum[c] += view.rgb[i * 3 + c];
        ++n;
    }
    if (n == 0) return {0.5f, 0.5f, 0.5f};
    return {static_cast<float>(sum[0] / n), static_cast<float>(sum[1] / n),
            static_cast<float>(sum[2] / n)};
}

} // namespace

Augmented augment(const geom::PosedView& view, const std::vector<std::array<int, 2>>& pixels,
                  std::uint64_t seed, const AugmentOptions& options) {
    const int w = view.width(), h = view.height();
    Rng rng(seed);

    Augmented out;
    out.rgb = view.rgb;
    out.mask = view.mask;
    out.pixels = pixels;
    out.alive.assign(pixels.size(), 1);

    auto stage_fires = [&rng](StageMode mode) {
        const bool coin = rng.coin(); // drawn regardless of mode to keep streams aligned
        if (mode == StageMode::Off) return false;
        if (mode == StageMode::On) return true;
        return coin;
    };

    // 1. background removal: replace background with a solid color or noise
    const bool do_background = stage_fires(options.background);
    bool bg_is_noise = false;
    std::array<float, 3> bg_fill{0, 0, 0};
    {
        const bool noise = rng.coin();
        std::array<float, 3> solid{rng.uniformf(0, 1), rng.uniformf(0, 1), rng.uniformf(0, 1)};
        if (do_background) {
            bg_is_noise = noise;
            bg_fill = solid;
            for (int y = 0; y < h; ++y) {
                for (int x = 0; x < w; ++x) {
                    const std::size_t i = static_cast<std::size_t>(y) * w + x;
                    if (out.mask[i]) continue;
                    for (int c = 0; c < 3; ++c)
                        out.rgb[i * 3 + c] = noise ? rng.uniformf(0, 1) : solid[c];
                }
            }
        }
    }

    // 2. horizontal flip
    const bool do_flip = stage_fires(options.flip);
    if (do_flip) {
        for (int y = 0; y < h; ++y) {
            for (int x = 0; x < w / 2; ++x) {
                const std::size_t i = static_cast<std::size_t>(y) * w + x;
                const std::size_t j = static_cast<std::size_t>(y) * w + (w - 1 - x);
                for (int c = 0; c < 3; ++c) std::swap(out.rgb[i * 3 + c], out.rgb[j * 3 + c]);
                std::swap(out.mask[i], out.mask[j]);
            }
        }
        for (std::size_t p = 0; p < out.pixels.size(); ++p)
            out.pixels[p][0] = w - 1 - out.pixels[p][0];
    }

    // 3. foreground rotation + translation
    const bool do_rt = stage_fires(options.rot_trans);
    {
        const double angle = rng.uniform(-15.0, 15.0) * 3.14159265358979323846 / 180.0;
        const double dx = rng.uniform(-8.0, 8.0);
        const double dy = rng.uniform(-8.0, 8.0);
        if (do_rt) {
            Affine2 fwd;
            const double cs = std::cos(angle), sn = std::sin(angle);
            const double cx = w / 2.0, cy = h / 2.0;
            fwd.a = cs;
            fwd.b = -sn;
            fwd.c = sn;
            fwd.d = cs;
            fwd.tx = cx - cs * cx + sn * cy + dx;
            fwd.ty = cy - sn * cx - cs * cy + dy;
            const Affine2 inv = fwd.inverse();

            const std::vector<float> src_rgb = out.rgb;
            const std::vector<std::uint8_t> src_mask = out.mask;
            const std::array<float, 3> hole =
                do_background ? bg_fill : mean_background_color(view);

            for (int y = 0; y < h; ++y) {
                for (int x = 0; x < w; ++x) {
                    const std::size_t i = static_cast<std::size_t>(y) * w + x;
                    const auto s = inv.apply(x + 0.5, y + 0.5);
                    const int sx = static_cast<int>(std::floor(s[0]));
                    const int sy = static_cast<int>(std::floor(s[1]));
                    const bool covered = sx >= 0 && sy >= 0 && sx < w && sy < h &&
                                         src_mask[static_cast<std::size_t>(sy) * w + sx];
                    if (covered) {
                        const std::size_t si = static_cast<std::size_t>(sy) * w + sx;
                        for (int c = 0; c < 3; ++c) out.rgb[i * 3 + c] = src_rgb[si * 3 + c];
                        out.mask[i] = 1;
                    } else {
                        out.mask[i] = 0;
                        if (src_mask[i]) { // vacated foreground pixel
                            for (int c = 0; c < 3; ++c)
                                out.rgb[i * 3 + c] =
                                    do_background && bg_is_noise ? rng.uniformf(0, 1) : hole[c];
                        }
                    }
                }
            }
            for (std::size_t p = 0; p < out.pixels.size(); ++p) {
                const auto q = fwd.apply(out.pixels[p][0] + 0.5, out.pixels[p][1] + 0.5);
                out.pixels[p][0] = static_cast<int>(std::floor(q[0]));
                out.pixels[p][1] = static_cast<int>(std::floor(q[1]));
            }
        }
    }

    // 4. color jitter: per-channel gain/offset plus a gamma curve. This has
    // to be strong, or matching falls back on raw part colors (a shortcut
    // that never transfers across instances).
    const bool do_color = stage_fires(options.color);
    {
        float gain[3], offset[3];
        for (int c = 0; c < 3; ++c) {
            gain[c] = rng.uniformf(0.55f, 1.45f);
            offset[c] = rng.uniformf(-0.22f, 0.22f);
        }
        const float gamma = rng.uniformf(0.7f, 1.45f);
        if (do_color) {
            for (std::size_t i = 0; i < out.rgb.size() / 3; ++i)
                for (int c = 0; c < 3; ++c) {
                    const float v =
                        std::clamp(out.rgb[i * 3 + c] * gain[c] + offset[c], 0.0f, 1.0f);
                    out.rgb[i * 3 + c] = std::pow(v, gamma);
                }
        }
    }

    for (std::size_t p = 0; p < out.pixels.size(); ++p) {
        const int x = out.pixels[p][0], y = out.pixels[p][1];
        const bool ok =
            x >= 0 && y >= 0 && x < w && y < h && out.mask[static_cast<std::size_t>(y) * w + x];
        out.alive[p] = ok ? 1 : 0;
    }
    return out;
}

std::vector<float> grid_mask_from_pixels(const std::vector<std::uint8_t>& mask, int img_size,
                                         int grid_size) {
    if (grid_size <= 0 || img_size % grid_size != 0)
        throw NonIntegerStride("grid_mask_from_pixels: image/grid size mismatch");
    const int s = img_size / grid_size;
    std::vector<float> out(static_cast<std::size_t>(grid_size) * grid_size, 0.0f);
    for (int gy = 0; gy < grid_size; ++gy) {
        for (int gx = 0; gx < grid_size; ++gx) {
            int count = 0;
            for (int y = gy * s; y < (gy + 1) * s; ++y)
                for (int x = gx * s; x < (gx + 1) * s; ++x)
                    count += mask[static_cast<std::size_t>(y) * img_size + x] ? 1 : 0;
            out[static_cast<std::size_t>(gy) * grid_size + gx] = 2 * count > s * s ? 1.0f : 0.0f;
        }
    }
    return out;
}

// ---------------------------------------------------------------------------
// batch construction
// ---------------------------------------------------------------------------

std::uint64_t step_seed(const TrainConfig& cfg, std::int64_t step) {
    return derive_seed(cfg.seed, 0x73746570 /* step */, static_cast<std::uint64_t>(step));
}

TrainBatch build_batch(const io::LoadedDataset& ds, const TrainConfig& cfg,
                       std::uint64_t step_seed, bool want_correspondences) {
    cfg.validate();
    const int b = cfg.batch_size;
    if (static_cast<int>(ds.instances.size()) < b)
        throw InsufficientData("build_batch: dataset has fewer instances than batch_size");
    for (const auto& inst : ds.instances)
        if (inst.views.size() < 2)
            throw InsufficientData("build_batch: every instance needs >= 2 views");

    Rng rng(derive_seed(step_seed, 0x62617463 /* batc */));

    // distinct instances via partial Fisher-Yates
    std::vector<int> order(ds.instances.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = static_cast<int>(i);
    for (int i = 0; i < b; ++i) {
        const int j = i + static_cast<int>(rng.uniform_u32(
                              static_cast<std::uint32_t>(order.size() - i)));
        std::swap(order[i], order[j]);
    }

    TrainBatch batch;
    batch.image_size = ds.image_size;
    batch.grid_size = ds.grid_size;
    batch.requested_correspondences = want_correspondences ? b * cfg.n_correspondences : 0;

    const geom::GridSize grid{ds.grid_size, ds.grid_size};
    const AugmentOptions aug_opt = AugmentOptions::from_config(cfg);

    for (int e = 0; e < b; ++e) {
        const auto& inst = ds.instances[order[e]];
        const int nviews = static_cast<int>(inst.views.size());

        BatchElement elem;
        elem.object_id = order[e];
        bool done = false;
        for (int attempt = 0; attempt < 10 && !done; ++attempt) {
            const std::uint64_t try_seed = derive_seed(step_seed, 0x70616972 /* pair */, e, attempt);
            Rng pick(try_seed);

            int via = 0, vib = 0;
            if (cfg.pair_mode == PairMode::MultiView) {
                std::vector<std::pair<int, int>> compatible;
                for (int i = 0; i < nviews; ++i)
                    for (int j = 0; j < nviews; ++j)
                        if (i != j && io::azimuth_difference_deg(inst.azimuth_deg[i],
                                                                 inst.azimuth_deg[j]) <=
                                          cfg.max_azimuth_gap_deg)
                            compatible.emplace_back(i, j);
                if (compatible.empty()) continue;
                const auto pr = compatible[pick.uniform_u32(
                    static_cast<std::uint32_t>(compatible.size()))];
                via = pr.first;
                vib = pr.second;
            } else {
                via = vib = static_cast<int>(pick.uniform_u32(static_cast<std::uint32_t>(nviews)));
            }
            const geom::PosedView& va = inst.views[via];
            const geom::PosedView& vb = inst.views[vib];

            std::vector<std::array<int, 2>> pix_a, pix_b;
            if (want_correspondences) {
                // Self-pairing in single-view mode: identity pixel pairs on the
                // foreground, via the same sampler.
                geom::CorrespondenceSet corr;
                try {
                    corr = geom::find_correspondences(va, vb, cfg.n_correspondences,
                                                      cfg.occlusion_tol,
                                                      derive_seed(try_seed, 3), grid);
                } catch (const EmptyForeground&) {
                    continue;
                }
                if (corr.pairs.empty()) continue;
                for (const auto& c : corr.pairs) {
                    pix_a.push_back({c.ua, c.va});
                    pix_b.push_back({c.ub, c.vb});
                }
            }

            const Augmented aug_a = augment(va, pix_a, derive_seed(try_seed, 1), aug_opt);
            const Augmented aug_b = augment(vb, pix_b, derive_seed(try_seed, 2), aug_opt);

            const std::vector<float> gmask_a =
                grid_mask_from_pixels(aug_a.mask, ds.image_size, ds.grid_size);
            const std::vector<float> gmask_b =
                grid_mask_from_pixels(aug_b.mask, ds.image_size, ds.grid_size);

            std::vector<std::array<int, 2>> cells_a, cells_b;
            std::vector<std::uint8_t> taken(
                static_cast<std::size_t>(ds.grid_size) * ds.grid_size, 0);
            for (std::size_t p = 0; p < pix_a.size(); ++p) {
                if (!aug_a.alive[p] || !aug_b.alive[p]) continue;
                const auto ga = geom::pixel_to_grid(aug_a.pixels[p][0], aug_a.pixels[p][1],
                                                    ds.image_size, ds.image_size, grid);
                const auto gb = geom::pixel_to_grid(aug_b.pixels[p][0], aug_b.pixels[p][1],
                                                    ds.image_size, ds.image_size, grid);
                // Boundary pixels often quantize to cells the grid mask calls
                // background; gating drives those features to zero, so such
                // pairs carry no usable positive signal. Keep solid cells.
                if (cfg.corr_on_mask_cells &&
                    (gmask_a[static_cast<std::size_t>(ga[1]) * ds.grid_size + ga[0]] < 0.5f ||
                     gmask_b[static_cast<std::size_t>(gb[1]) * ds.grid_size + gb[0]] < 0.5f))
                    continue;
                auto& slot = taken[static_cast<std::size_t>(ga[1]) * ds.grid_size + ga[0]];
                if (slot) continue;
                slot = 1;
                cells_a.push_back(ga);
                cells_b.push_back(gb);
            }
            if (want_correspondences && cells_a.empty()) continue;

            elem.img_a = aug_a.rgb;
            elem.img_b = aug_b.rgb;
            elem.mask_a = aug_a.mask;
            elem.mask_b = aug_b.mask;
            elem.grid_mask_a = gmask_a;
            elem.grid_mask_b = gmask_b;
            elem.cells_a = std::move(cells_a);
            elem.cells_b = std::move(cells_b);
            done = true;
        }
        if (!done)
            throw PairExhausted("build_batch: no usable view pair after 10 attempts (object " +
                                std::to_string(order[e]) + ")");
        batch.accepted_correspondences += static_cast<int>(elem.cells_a.size());
        batch.elements.push_back(std::move(elem));
    }
    return batch;
}

// ---------------------------------------------------------------------------
// losses
// ---------------------------------------------------------------------------

template <typename T>
int corr_nt_xent_node(ad::Tape<T>& tape, const std::vector<int>& feat_a,
                      const std::vector<int>& feat_b,
                      const std::vector<std::vector<std::array<int, 2>>>& cells_a,
                      const std::vector<std::vector<std::array<int, 2>>>& cells_b,
                      const std::vector<std::vector<float>>& grid_mask_b,
                      const CorrLossConfig& cfg) {
    const int nelem = static_cast<int>(feat_a.size());
    if (nelem == 0 || feat_b.size() != feat_a.size() || cells_a.size() != feat_a.size() ||
        cells_b.size() != feat_a.size())
        throw ShapeMismatch("corr_nt_xent: batch arity mismatch");
    const ad::Shape& fs = tape.shape(feat_a[0]);
    ad::require(fs.dims.size() == 3, "corr_nt_xent: features must be DxHxW");
    const int dim = fs.dims[0];
    const int gh = fs.dims[1], gw = fs.dims[2];
    const int cells = gh * gw;
    const T tau = static_cast<T>(cfg.temperature);

    int total_corr = 0;
    for (const auto& ca : cells_a) total_corr += static_cast<int>(ca.size());
    if (total_corr == 0) throw NoCorrespondences("corr_nt_xent: no correspondences in batch");

    const bool use_second =
        cfg.strategy == NegativeStrategy::SecondViewOnly || cfg.strategy == NegativeStrategy::Both;
    const bool use_others = cfg.strategy == NegativeStrategy::OtherObjectsOnly ||
                            cfg.strategy == NegativeStrategy::Both;

    auto cell_col = [](int gx, int gy, int w) { return gy * w + gx; };

    // cell-major transposes so every similarity is a contiguous dot product
    auto transpose = [&](int node) {
        const auto& v = tape.value(node);
        std::vector<T> t(v.size());
        for (int d = 0; d < dim; ++d)
            for (int c = 0; c < cells; ++c)
                t[static_cast<std::size_t>(c) * dim + d] = v[static_cast<std::size_t>(d) * cells + c];
        return t;
    };
    std::vector<std::vector<T>> at(nelem);
    auto bt = std::make_shared<std::vector<std::vector<T>>>(nelem);
    for (int k = 0; k < nelem; ++k) {
        at[k] = transpose(feat_a[k]);
        (*bt)[k] = transpose(feat_b[k]);
    }

    auto dot = [dim](const T* a, const T* b) {
        T s0 = 0, s1 = 0, s2 = 0, s3 = 0;
        int d = 0;
        for (; d + 4 <= dim; d += 4) {
            s0 += a[d] * b[d];
            s1 += a[d + 1] * b[d + 1];
            s2 += a[d + 2] * b[d + 2];
            s3 += a[d + 3] * b[d + 3];
        }
        for (; d < dim; ++d) s0 += a[d] * b[d];
        return (s0 + s1) + (s2 + s3);
    };

    // Per correspondence: softmax coefficients for the positive column and
    // every negative column, captured for the backward pass.
    struct CorrGrad {
        int elem;
        int col_a;                                  // column of z1 in feat_a[elem]
        std::vector<std::tuple<int, int, T>> terms; // (elem_b, col_b, dL/d sim * g)
    };
    auto grads = std::make_shared<std::vector<CorrGrad>>();

    T loss_sum = 0;
    for (int k = 0; k < nelem; ++k) {
        for (std::size_t c = 0; c < cells_a[k].size(); ++c) {
            const int col1 = cell_col(cells_a[k][c][0], cells_a[k][c][1], gw);
            const int col2 = cell_col(cells_b[k][c][0], cells_b[k][c][1], gw);
            const T* z1 = at[k].data() + static_cast<std::size_t>(col1) * dim;

            const T pos = dot(z1, (*bt)[k].data() + static_cast<std::size_t>(col2) * dim);

            std::vector<std::pair<int, int>> negs; // (elem, col)
            if (use_second) {
                for (int q = 0; q < cells; ++q) {
                    if (std::max(std::abs(q % gw - col2 % gw), std::abs(q / gw - col2 / gw)) <=
                        cfg.neighbor_exclusion)
                        continue;
                    if (grid_mask_b[k][q] > 0.5f) negs.emplace_back(k, q);
                }
            }
            if (use_others) {
                for (int j = 0; j < nelem; ++j) {
                    if (j == k) continue;
                    for (const auto& cb : cells_b[j]) negs.emplace_back(j, cell_col(cb[0], cb[1], gw));
                }
            }
            if (negs.empty())
                throw NoNegatives("corr_nt_xent: empty negative set (strategy " +
                                  to_string(cfg.strategy) + ")");

            std::vector<T> neg_sims(negs.size());
            T max_term = cfg.include_positive ? pos / tau : -std::numeric_limits<T>::infinity();
            for (std::size_t i = 0; i < negs.size(); ++i) {
                neg_sims[i] = dot(z1, (*bt)[negs[i].first].data() +
                                          static_cast<std::size_t>(negs[i].second) * dim);
                max_term = std::max(max_term, neg_sims[i] / tau);
            }
            T sum_exp = cfg.include_positive ? std::exp(pos / tau - max_term) : T(0);
            for (const T s : neg_sims) sum_exp += std::exp(s / tau - max_term);
            const T lse = max_term + std::log(sum_exp);
            loss_sum += -pos / tau + lse;

            CorrGrad cg;
            cg.elem = k;
            cg.col_a = col1;
            const T inv_n = T(1) / static_cast<T>(total_corr);
            T pos_coeff = -inv_n / tau;
            if (cfg.include_positive)
                pos_coeff += inv_n / tau * std::exp(pos / tau - lse);
            cg.terms.emplace_back(k, col2, pos_coeff);
            for (std::size_t i = 0; i < negs.size(); ++i) {
                const T p = std::exp(neg_sims[i] / tau - lse);
                cg.terms.emplace_back(negs[i].first, negs[i].second, inv_n / tau * p);
            }
            grads->push_back(std::move(cg));
        }
    }

    bool ng = false;
    for (int id : feat_a) ng = ng || tape.needs_grad(id);
    return tape.custom(
        "corr_nt_xent", ad::Shape{1}, {loss_sum / static_cast<T>(total_corr)}, ng,
        [feat_a, grads, bt, dim, cells](ad::Tape<T>& t, int self) {
            const T g = t.grad(self)[0];
            std::vector<T> tmp(dim);
            for (const auto& cg : *grads) {
                if (!t.needs_grad(feat_a[cg.elem])) continue;
                std::fill(tmp.begin(), tmp.end(), T(0));
                for (const auto& [eb, col_b, coeff] : cg.terms) {
                    const T* bv = (*bt)[eb].data() + static_cast<std::size_t>(col_b) * dim;
                    for (int d = 0; d < dim; ++d) tmp[d] += coeff * bv[d];
                }
                auto& ga = t.grad(feat_a[cg.elem]);
                for (int d = 0; d < dim; ++d)
                    ga[static_cast<std::size_t>(d) * cells + cg.col_a] += g * tmp[d];
            }
        });
}

template int corr_nt_xent_node<float>(ad::Tape<float>&, const std::vector<int>&,
                                      const std::vector<int>&,
                                      const std::vector<std::vector<std::array<int, 2>>>&,
                                      const std::vector<std::vector<std::array<int, 2>>>&,
                                      const std::vector<std::vector<float>>&,
                                      const CorrLossConfig&);
template int corr_nt_xent_node<double>(ad::Tape<double>&, const std::vector<int>&,
                                       const std::vector<int>&,
                                       const std::vector<std::vector<std::array<int, 2>>>&,
                                       const std::vector<std::vector<std::array<int, 2>>>&,
                                       const std::vector<std::vector<float>>&,
                                       const CorrLossConfig&);

template <typename T>
int mask_bce_node(ad::Tape<T>& tape, int logits, const std::vector<float>& targets) {
    const auto& x = tape.value(logits);
    if (x.size() != targets.size())
        throw ShapeMismatch("mask_bce: logits " + tape.shape(logits).str() + " vs " +
                            std::to_string(targets.size()) + " targets");
    T sum = 0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        const T v = x[i];
        const T t = static_cast<T>(targets[i]);
        sum += std::max(v, T(0)) - v * t + std::log1p(std::exp(-std::abs(v)));
    }
    const T n = static_cast<T>(x.size());
    auto tgt = std::make_shared<std::vector<float>>(targets);
    return tape.custom("mask_bce", ad::Shape{1}, {sum / n}, tape.needs_grad(logits),
                       [logits, tgt, n](ad::Tape<T>& t, int self) {
                           if (!t.needs_grad(logits)) return;
                           const T g = t.grad(self)[0] / n;
                           const auto& xv = t.value(logits);
                           auto& gx = t.grad(logits);
                           for (std::size_t i = 0; i < xv.size(); ++i) {
                               const T sig = T(1) / (T(1) + std::exp(-xv[i]));
                               gx[i] += g * (sig - static_cast<T>((*tgt)[i]));
                           }
                       });
}

template int mask_bce_node<float>(ad::Tape<float>&, int, const std::vector<float>&);
template int mask_bce_node<double>(ad::Tape<double>&, int, const std::vector<float>&);

// ---------------------------------------------------------------------------
// training loop
// ---------------------------------------------------------------------------

TrainResult train(const io::LoadedDataset& base_ds, const TrainConfig& cfg,
                  const model::EncoderConfig& encoder_cfg, Objective objective,
                  std::ostream* progress) {
    cfg.validate();
    encoder_cfg.validate();
    if (base_ds.image_size != encoder_cfg.input_size ||
        base_ds.grid_size != encoder_cfg.grid_size)
        throw ShapeMismatch("train: dataset raster/grid does not match encoder config");

    TrainResult result;
    result.params = model::init_params(encoder_cfg, derive_seed(cfg.seed, 0x696e6974));

    const int steps_per_epoch = std::max<int>(
        1, static_cast<int>((base_ds.instances.size() + cfg.batch_size - 1) / cfg.batch_size));
    result.total_steps = cfg.steps > 0 ? cfg.steps
                                       : static_cast<std::int64_t>(cfg.epochs) * steps_per_epoch;

    ad::AdamWState<float> opt_state;
    std::vector<ad::Tensor<float>*> param_ptrs;
    for (auto& [name, tensor] : result.params.online) param_ptrs.push_back(&tensor);

    const bool want_corr = objective == Objective::DenseCorrespondence;
    const int grid = encoder_cfg.grid_size;

    double epoch_corr = 0, epoch_mask = 0, epoch_rate = 0;
    int epoch_steps = 0;

    // One tape per batch element so the forward and backward passes stay
    // embarrassingly parallel; a small coupling tape ties the per-element
    // features into the batch loss. Gradients reduce in element order, so
    // results are identical for any thread count.
    struct ElemWork {
        ad::Tape<float> tape;
        model::BoundParams online;
        model::EncodeNodes a, b_mask, b_mom;
        int feat_a = -1; // grid (or pooled embedding) feeding the loss
        int feat_b = -1;
    };

    for (std::int64_t step = 0; step < result.total_steps; ++step) {
        const double lr = ad::cosine_lr(step, result.total_steps, cfg.lr0);
        const TrainBatch batch = build_batch(base_ds, cfg, step_seed(cfg, step), want_corr);
        const int b = static_cast<int>(batch.elements.size());

        std::vector<std::unique_ptr<ElemWork>> works(b);
        parallel_for(b, [&](std::int64_t i) {
            const BatchElement& elem = batch.elements[i];
            auto w = std::make_unique<ElemWork>();
            w->online = model::bind_params(w->tape, result.params.online, true);
            const model::BoundParams target =
                model::bind_params(w->tape, result.params.momentum, false);

            const model::GateMode gate =
                cfg.predict_mask ? model::GateMode::Predicted : model::GateMode::GroundTruth;
            w->a = model::encode_on_tape(w->tape, w->online, encoder_cfg, elem.img_a.data(),
                                         gate, elem.grid_mask_a.data());
            w->b_mom = model::encode_on_tape(w->tape, target, encoder_cfg, elem.img_b.data(),
                                             gate, elem.grid_mask_b.data());
            if (cfg.predict_mask)
                w->b_mask = model::encode_on_tape(w->tape, w->online, encoder_cfg,
                                                  elem.img_b.data(), model::GateMode::Predicted,
                                                  nullptr, true);
            if (objective == Objective::DenseCorrespondence) {
                w->feat_a = w->a.features;
                w->feat_b = w->b_mom.features;
            } else {
                // pooled instance embedding: mask-weighted GAP of the
                // pre-gating unit features, then renormalized
                auto& t = w->tape;
                const int wa = cfg.predict_mask
                                   ? w->a.mask_prob
                                   : t.leaf(ad::Shape{1, grid, grid}, elem.grid_mask_a.data(),
                                            false, "gt_mask_a");
                const int wb = cfg.predict_mask
                                   ? w->b_mom.mask_prob
                                   : t.leaf(ad::Shape{1, grid, grid}, elem.grid_mask_b.data(),
                                            false, "gt_mask_b");
                w->feat_a = t.l2norm_cells(t.masked_gap(w->a.pre_gate, wa, 1e-8f), 1e-8f);
                w->feat_b = t.l2norm_cells(t.masked_gap(w->b_mom.pre_gate, wb, 1e-8f), 1e-8f);
            }
            works[i] = std::move(w);
        });

        // coupling tape: loss over the per-element outputs
        ad::Tape<float> ctape;
        std::vector<int> fa, fb, bce_nodes, logit_leaves;
        std::vector<std::vector<std::array<int, 2>>> cells_a, cells_b;
        std::vector<std::vector<float>> gmask_b;
        for (int i = 0; i < b; ++i) {
            ElemWork& w = *works[i];
            fa.push_back(ctape.leaf(w.tape.shape(w.feat_a), w.tape.value(w.feat_a).data(), true,
                                    "feat_a"));
            fb.push_back(ctape.leaf(w.tape.shape(w.feat_b), w.tape.value(w.feat_b).data(), false,
                                    "feat_b"));
            if (objective == Objective::DenseCorrespondence) {
                cells_a.push_back(batch.elements[i].cells_a);
                cells_b.push_back(batch.elements[i].cells_b);
            } else {
                cells_a.push_back({{0, 0}});
                cells_b.push_back({{0, 0}});
            }
            gmask_b.push_back(batch.elements[i].grid_mask_b);
            if (cfg.predict_mask) {
                const int la = ctape.leaf(w.tape.shape(w.a.mask_logits),
                                          w.tape.value(w.a.mask_logits).data(), true, "logits_a");
                const int lb =
                    ctape.leaf(w.tape.shape(w.b_mask.mask_logits),
                               w.tape.value(w.b_mask.mask_logits).data(), true, "logits_b");
                logit_leaves.push_back(la);
                logit_leaves.push_back(lb);
                bce_nodes.push_back(mask_bce_node(ctape, la, batch.elements[i].grid_mask_a));
                bce_nodes.push_back(mask_bce_node(ctape, lb, batch.elements[i].grid_mask_b));
            }
        }

        CorrLossConfig loss_cfg;
        loss_cfg.temperature = cfg.temperature;
        loss_cfg.include_positive = cfg.include_positive_in_denominator;
        loss_cfg.strategy = objective == Objective::GlobalInstance
                                ? NegativeStrategy::OtherObjectsOnly
                                : cfg.strategy;
        loss_cfg.neighbor_exclusion = cfg.neighbor_exclusion;

        const int l_corr =
            corr_nt_xent_node(ctape, fa, fb, cells_a, cells_b, gmask_b, loss_cfg);
        int total = l_corr;
        double mask_loss_value = 0;
        if (!bce_nodes.empty()) {
            const std::vector<float> w(bce_nodes.size(),
                                       1.0f / static_cast<float>(bce_nodes.size()));
            const int l_mask = ctape.weighted_sum(bce_nodes, w);
            mask_loss_value = ctape.value(l_mask)[0];
            total = ctape.weighted_sum({l_corr, l_mask}, {1.0f, 1.0f});
        }

        const double corr_loss_value = ctape.value(l_corr)[0];
        if (!std::isfinite(corr_loss_value) || !std::isfinite(mask_loss_value))
            throw Error("train: non-finite loss at step " + std::to_string(step) +
                        " (l_corr=" + std::to_string(corr_loss_value) +
                        ", l_mask=" + std::to_string(mask_loss_value) + ", lr=" +
                        std::to_string(lr) + ")");

        ctape.backward(total);

        // push coupling gradients into the element tapes, run their backward
        parallel_for(b, [&](std::int64_t i) {
            ElemWork& w = *works[i];
            w.tape.grad(w.feat_a) = ctape.grad(fa[i]);
            if (cfg.predict_mask) {
                w.tape.grad(w.a.mask_logits) = ctape.grad(logit_leaves[2 * i]);
                w.tape.grad(w.b_mask.mask_logits) = ctape.grad(logit_leaves[2 * i + 1]);
            }
            w.tape.backward_seeded();
        });

        // deterministic reduction in element order
        std::vector<std::vector<float>> grad_sum(param_ptrs.size());
        for (std::size_t p = 0; p < param_ptrs.size(); ++p)
            grad_sum[p].assign(param_ptrs[p]->data.size(), 0.0f);
        for (int i = 0; i < b; ++i) {
            ElemWork& w = *works[i];
            for (std::size_t p = 0; p < w.online.ids.size(); ++p) {
                const auto& g = w.tape.grad_raw(w.online.ids[p].second);
                if (g.empty()) continue;
                float* acc = grad_sum[p].data();
                for (std::size_t j = 0; j < g.size(); ++j) acc[j] += g[j];
            }
        }
        std::vector<const std::vector<float>*> grads;
        for (const auto& g : grad_sum) grads.push_back(&g);

        ad::adamw_step(param_ptrs, grads, opt_state, static_cast<float>(lr),
                       static_cast<float>(cfg.adam_beta1), static_cast<float>(cfg.adam_beta2),
                       static_cast<float>(cfg.adam_eps), static_cast<float>(cfg.weight_decay));
        model::momentum_update(result.params.online, result.params.momentum,
                               static_cast<float>(cfg.ema_momentum));

        epoch_corr += corr_loss_value;
        epoch_mask += mask_loss_value;
        epoch_rate += batch.requested_correspondences > 0
                          ? static_cast<double>(batch.accepted_correspondences) /
                                batch.requested_correspondences
                          : 1.0;
        ++epoch_steps;

        if ((step + 1) % steps_per_epoch == 0 || step + 1 == result.total_steps) {
            EpochLog log;
            log.epoch = static_cast<int>(step / steps_per_epoch);
            log.l_corr = epoch_corr / epoch_steps;
            log.l_mask = epoch_mask / epoch_steps;
            log.lr = lr;
            log.accepted_rate = epoch_rate / epoch_steps;
            result.log.push_back(log);
            epoch_corr = epoch_mask = epoch_rate = 0;
            epoch_steps = 0;
            if (progress && (log.epoch % 50 == 0 || step + 1 == result.total_steps))
                (*progress) << "epoch " << log.epoch << " l_corr " << log.l_corr << " l_mask "
                            << log.l_mask << " lr " << log.lr << "\n";
        }
    }
    return result;
}

} // namespace dope::contrastive
