#include <algorithm>
#include <cmath>
#include <filesystem>

#include "dope/harness.hpp"
#include "dope/png_io.hpp"

namespace dope::harness {

namespace {

std::array<float, 3> hue_color(float hue) {
    const float h = (hue - std::floor(hue)) * 6.0f;
    const float x = 1.0f - std::abs(std::fmod(h, 2.0f) - 1.0f);
    if (h < 1) return {1, x, 0};
    if (h < 2) return {x, 1, 0};
    if (h < 3) return {0, 1, x};
    if (h < 4) return {0, x, 1};
    if (h < 5) return {x, 0, 1};
    return {1, 0, x};
}

std::array<float, 3> heat_color(float v) { // v in [0,1]: blue -> red
    return {v, 0.15f, 1.0f - v};
}

/// Per-cell hue derived from the cell's 2D grid position.
float position_hue(int gx, int gy, int w, int h) {
    return 0.5f * (static_cast<float>(gx) / std::max(1, w - 1) +
                   static_cast<float>(gy) / std::max(1, h - 1));
}

const io::InstanceViews* find_instance(const io::LoadedDataset& ds, int category, int instance) {
    for (const auto& iv : ds.instances)
        if (iv.category_id == category && iv.instance == instance) return &iv;
    throw InvalidRange("viz: dataset has no cat" + std::to_string(category) + "/inst" +
                       std::to_string(instance));
}

/// Upsampled view image with per-cell color patches blended over it.
void write_overlay(const std::string& path, const geom::PosedView& view, int grid,
                   const std::vector<std::array<float, 3>>& cell_color,
                   const std::vector<std::uint8_t>& cell_on, int upscale) {
    const int cell_px = view.width() * upscale / grid;
    const int size = view.width() * upscale;
    io::PngImage img;
    img.width = img.height = size;
    img.channels = 3;
    img.pixels.resize(static_cast<std::size_t>(size) * size * 3);
    for (int y = 0; y < size; ++y) {
        for (int x = 0; x < size; ++x) {
            const int sx = x / upscale, sy = y / upscale;
            const std::size_t src = (static_cast<std::size_t>(sy) * view.width() + sx) * 3;
            const int gx = x / cell_px, gy = y / cell_px;
            const std::size_t cell = static_cast<std::size_t>(gy) * grid + gx;
            for (int c = 0; c < 3; ++c) {
                float v = view.rgb[src + c];
                if (cell_on[cell]) v = 0.45f * v + 0.55f * cell_color[cell][c];
                img.pixels[(static_cast<std::size_t>(y) * size + x) * 3 + c] =
                    static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0f, 1.0f) * 255.0f));
            }
        }
    }
    io::write_png(path, img);
}

} // namespace

std::vector<std::string> viz_matches(const EncodeFn& encode, const io::LoadedDataset& ds,
                                     const VizSpec& spec, const std::string& out_dir) {
    if (spec.targets.empty()) throw InvalidRange("viz: need at least one target view");
    std::filesystem::create_directories(out_dir);

    const auto* src_inst = find_instance(ds, spec.source[0], spec.source[1]);
    const geom::PosedView& src_view = src_inst->views.at(spec.source[2]);
    const model::FeatureGrid src = encode(src_view);
    const int grid = src.w;
    const std::size_t cells = static_cast<std::size_t>(grid) * grid;

    std::vector<std::uint8_t> src_on(cells, 0);
    std::vector<std::array<float, 3>> src_color(cells, {0, 0, 0});
    std::vector<int> src_cells;
    for (int gy = 0; gy < grid; ++gy)
        for (int gx = 0; gx < grid; ++gx) {
            const std::size_t i = static_cast<std::size_t>(gy) * grid + gx;
            if (src.mask_prob[i] > 0.5f) {
                src_on[i] = 1;
                src_color[i] = hue_color(position_hue(gx, gy, grid, grid));
                src_cells.push_back(static_cast<int>(i));
            }
        }

    std::vector<std::string> written;
    const std::string src_path = out_dir + "/source.png";
    write_overlay(src_path, src_view, grid, src_color, src_on, spec.upscale);
    written.push_back(src_path);

    // heatmap query cell: explicit or the foreground centroid
    int qx = spec.query_cell[0], qy = spec.query_cell[1];
    if (qx < 0 || qy < 0) {
        double mx = 0, my = 0, mass = 0;
        for (int gy = 0; gy < grid; ++gy)
            for (int gx = 0; gx < grid; ++gx) {
                const float p = src.mask_prob[static_cast<std::size_t>(gy) * grid + gx];
                mx += p * gx;
                my += p * gy;
                mass += p;
            }
        qx = mass > 0 ? static_cast<int>(std::lround(mx / mass)) : grid / 2;
        qy = mass > 0 ? static_cast<int>(std::lround(my / mass)) : grid / 2;
    }
    const std::vector<float> qvec = src.cell_vector(qx, qy);

    for (std::size_t t = 0; t < spec.targets.size(); ++t) {
        const auto* tgt_inst = find_instance(ds, spec.targets[t][0], spec.targets[t][1]);
        const geom::PosedView& tgt_view = tgt_inst->views.at(spec.targets[t][2]);
        const model::FeatureGrid tgt = encode(tgt_view);

        std::vector<std::uint8_t> on(cells, 0);
        std::vector<std::array<float, 3>> color(cells, {0, 0, 0});
        for (int gy = 0; gy < grid; ++gy) {
            for (int gx = 0; gx < grid; ++gx) {
                const std::size_t i = static_cast<std::size_t>(gy) * grid + gx;
                if (tgt.mask_prob[i] <= 0.5f || src_cells.empty()) continue;
                int best = src_cells[0];
                float best_sim = -2;
                for (const int sc : src_cells) {
                    const float sim = tgt.cell_dot(gx, gy, src, sc % grid, sc / grid);
                    if (sim > best_sim) {
                        best_sim = sim;
                        best = sc;
                    }
                }
                on[i] = 1;
                color[i] = hue_color(position_hue(best % grid, best / grid, grid, grid));
            }
        }
        const std::string match_path = out_dir + "/target" + std::to_string(t) + "_match.png";
        write_overlay(match_path, tgt_view, grid, color, on, spec.upscale);
        written.push_back(match_path);

        // similarity heatmap for the query cell over this target
        std::vector<std::uint8_t> all_on(cells, 1);
        std::vector<std::array<float, 3>> heat(cells);
        const std::size_t tcells = cells;
        for (std::size_t i = 0; i < tcells; ++i) {
            float sim = 0;
            for (int d = 0; d < tgt.dim; ++d)
                sim += qvec[d] * tgt.features[static_cast<std::size_t>(d) * tcells + i];
            heat[i] = heat_color(std::clamp(0.5f * (sim + 1.0f), 0.0f, 1.0f));
        }
        const std::string heat_path = out_dir + "/target" + std::to_string(t) + "_heat.png";
        write_overlay(heat_path, tgt_view, grid, heat, all_on, spec.upscale);
        written.push_back(heat_path);
    }
    return written;
}

std::vector<std::string> viz_matches(const model::ParamDict<float>& params,
                                     const model::EncoderConfig& config,
                                     const io::LoadedDataset& ds, const VizSpec& spec,
                                     const std::string& out_dir) {
    return viz_matches(
        [&](const geom::PosedView& v) { return model::encode(params, config, v.rgb.data()); },
        ds, spec, out_dir);
}

} // namespace dope::harness
