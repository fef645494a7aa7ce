#include "dope/model.hpp"

#include <cmath>

#include "dope/rng.hpp"

namespace dope::model {

void EncoderConfig::validate() const {
    if (input_size <= 0 || grid_size <= 0 || input_size % grid_size != 0)
        throw InvalidRange("EncoderConfig: input size must be a multiple of grid size");
    if (input_size / grid_size != 4)
        throw InvalidRange("EncoderConfig: backbone stride is 4 (input/grid must be 4)");
    if (in_channels <= 0) throw InvalidRange("EncoderConfig: bad channel count");
    for (int c : stage_channels)
        if (c <= 0) throw InvalidRange("EncoderConfig: bad stage width");
    for (int c : proj_channels)
        if (c <= 0) throw InvalidRange("EncoderConfig: bad projection width");
    if (mask_hidden <= 0 || context_channels <= 0)
        throw InvalidRange("EncoderConfig: bad head/context width");
}

namespace {

struct LayerSpec {
    std::string name;
    int in_c, out_c, k;
};

std::vector<LayerSpec> layer_specs(const EncoderConfig& c) {
    return {
        {"stem", c.in_channels, c.stage_channels[0], 3},
        {"stage2", c.stage_channels[0], c.stage_channels[1], 3},
        {"stage3", c.stage_channels[1], c.stage_channels[2], 3},
        {"stage4", c.stage_channels[2], c.context_channels, 3},
        {"lateral4", c.context_channels, c.stage_channels[2], 1},
        {"lateral3", c.stage_channels[2], c.stage_channels[2], 1},
        {"lateral2", c.stage_channels[1], c.stage_channels[2], 1},
        {"proj1", c.stage_channels[2], c.proj_channels[0], 1},
        {"proj2", c.proj_channels[0], c.proj_channels[1], 1},
        {"proj3", c.proj_channels[1], c.proj_channels[2], 1},
        {"proj4", c.proj_channels[2], c.proj_channels[3], 1},
        // Two 1x1 layers: foreground-ness is not a linear function of the
        // decoder features here (solid and noise backgrounds bracket the
        // object's texture statistics), so the head needs one hidden layer.
        {"mask_hidden", c.stage_channels[2], c.mask_hidden, 1},
        {"mask_head", c.mask_hidden, 1, 1},
    };
}

} // namespace

EncoderParams init_params(const EncoderConfig& config, std::uint64_t seed) {
    config.validate();
    EncoderParams p;
    p.config = config;
    Rng rng(derive_seed(seed, 0x706172616d /* param */));
    for (const auto& spec : layer_specs(config)) {
        ad::Tensor<float> w(ad::Shape{spec.out_c, spec.in_c, spec.k, spec.k});
        const int fan_in = spec.in_c * spec.k * spec.k;
        const float bound = std::sqrt(6.0f / static_cast<float>(fan_in));
        for (auto& v : w.data) v = rng.uniformf(-bound, bound);
        ad::Tensor<float> b(ad::Shape{spec.out_c});
        p.online.emplace_back(spec.name + ".w", std::move(w));
        p.online.emplace_back(spec.name + ".b", std::move(b));
    }
    p.momentum = p.online;
    return p;
}

void momentum_update(const ParamDict<float>& online, ParamDict<float>& target, float m) {
    if (m < 0.0f || m > 1.0f) throw InvalidRange("momentum_update: m must lie in [0,1]");
    if (online.size() != target.size())
        throw NameMismatch("momentum_update: parameter count differs");
    for (std::size_t i = 0; i < online.size(); ++i) {
        if (online[i].first != target[i].first)
            throw NameMismatch("momentum_update: name mismatch at '" + online[i].first + "'");
        auto& t = target[i].second.data;
        const auto& o = online[i].second.data;
        if (t.size() != o.size())
            throw NameMismatch("momentum_update: shape mismatch at '" + online[i].first + "'");
        for (std::size_t j = 0; j < t.size(); ++j) t[j] = m * t[j] + (1.0f - m) * o[j];
    }
}

template <typename T>
EncodeNodes encode_on_tape(ad::Tape<T>& tape, const BoundParams& params,
                           const EncoderConfig& config, const float* image, GateMode gate,
                           const float* gt_grid_mask, bool mask_only) {
    const int s = config.input_size;
    const int g = config.grid_size;

    // interleaved H x W x C raster -> C x H x W planes
    std::vector<T> img(static_cast<std::size_t>(config.in_channels) * s * s);
    for (int c = 0; c < config.in_channels; ++c)
        for (int p = 0; p < s * s; ++p)
            img[static_cast<std::size_t>(c) * s * s + p] =
                static_cast<T>(image[static_cast<std::size_t>(p) * config.in_channels + c]);
    const int x = tape.leaf(ad::Shape{config.in_channels, s, s}, img.data(), false, "image");

    auto leaf = [&](const char* name) { return params.find(name); };

    // Per-cell standardization after each stage keeps activations dispersed;
    // without any normalization the contrastive features collapse into a
    // narrow cone. (Batch statistics are never used.)
    auto cn = [&](int node) { return tape.cell_standardize(node, static_cast<T>(1e-5)); };
    const int x1 = tape.relu(cn(tape.conv2d(x, leaf("stem.w"), leaf("stem.b"), 2, 1)));
    const int x2 = tape.relu(cn(tape.conv2d(x1, leaf("stage2.w"), leaf("stage2.b"), 2, 1)));
    const int x3 = tape.relu(cn(tape.conv2d(x2, leaf("stage3.w"), leaf("stage3.b"), 2, 1)));
    const int x4 = tape.relu(cn(tape.conv2d(x3, leaf("stage4.w"), leaf("stage4.b"), 2, 1)));
    // top-down pyramid: every grid cell sees near-global context
    const int d3 = tape.relu(
        cn(tape.add(tape.upsample2x(tape.conv1x1(x4, leaf("lateral4.w"), leaf("lateral4.b"))),
                    tape.conv1x1(x3, leaf("lateral3.w"), leaf("lateral3.b")))));
    const int dec = tape.relu(cn(
        tape.add(tape.upsample2x(d3), tape.conv1x1(x2, leaf("lateral2.w"), leaf("lateral2.b")))));

    EncodeNodes out;
    const int mh = tape.relu(tape.conv1x1(dec, leaf("mask_hidden.w"), leaf("mask_hidden.b")));
    out.mask_logits = tape.conv1x1(mh, leaf("mask_head.w"), leaf("mask_head.b"));
    out.mask_prob = tape.sigmoid(out.mask_logits);
    if (mask_only) return out;

    int h = tape.relu(tape.conv1x1(dec, leaf("proj1.w"), leaf("proj1.b")));
    h = tape.relu(tape.conv1x1(h, leaf("proj2.w"), leaf("proj2.b")));
    h = tape.relu(tape.conv1x1(h, leaf("proj3.w"), leaf("proj3.b")));
    h = tape.conv1x1(h, leaf("proj4.w"), leaf("proj4.b"));
    out.pre_gate = tape.l2norm_cells(h, static_cast<T>(1e-8));

    switch (gate) {
        case GateMode::Predicted:
            out.features = tape.channel_scale(out.pre_gate, out.mask_prob);
            break;
        case GateMode::PredictedBinary: {
            const auto& prob = tape.value(out.mask_prob);
            std::vector<T> hard(prob.size());
            for (std::size_t i = 0; i < hard.size(); ++i) hard[i] = prob[i] > T(0.5) ? 1 : 0;
            const int hnode =
                tape.custom("hard_mask", ad::Shape{1, g, g}, std::move(hard), false, {});
            out.features = tape.channel_scale(out.pre_gate, hnode);
            break;
        }
        case GateMode::GroundTruth: {
            if (!gt_grid_mask)
                throw ShapeMismatch("encode: GroundTruth gating needs a grid mask");
            std::vector<T> m(static_cast<std::size_t>(g) * g);
            for (std::size_t i = 0; i < m.size(); ++i) m[i] = static_cast<T>(gt_grid_mask[i]);
            const int mnode = tape.leaf(ad::Shape{1, g, g}, m.data(), false, "gt_mask");
            out.features = tape.channel_scale(out.pre_gate, mnode);
            break;
        }
        case GateMode::AllOnes:
            out.features = out.pre_gate;
            break;
    }
    return out;
}

template EncodeNodes encode_on_tape<float>(ad::Tape<float>&, const BoundParams&,
                                           const EncoderConfig&, const float*, GateMode,
                                           const float*, bool);
template EncodeNodes encode_on_tape<double>(ad::Tape<double>&, const BoundParams&,
                                            const EncoderConfig&, const float*, GateMode,
                                            const float*, bool);

std::vector<float> FeatureGrid::cell_vector(int gx, int gy) const {
    std::vector<float> v(dim);
    const std::size_t p = static_cast<std::size_t>(gy) * w + gx;
    for (int c = 0; c < dim; ++c) v[c] = features[static_cast<std::size_t>(c) * h * w + p];
    return v;
}

float FeatureGrid::cell_dot(int gx, int gy, const FeatureGrid& other, int ox, int oy) const {
    const std::size_t p = static_cast<std::size_t>(gy) * w + gx;
    const std::size_t q = static_cast<std::size_t>(oy) * other.w + ox;
    const std::size_t cells = static_cast<std::size_t>(h) * w;
    const std::size_t ocells = static_cast<std::size_t>(other.h) * other.w;
    float s = 0;
    for (int c = 0; c < dim; ++c) s += features[c * cells + p] * other.features[c * ocells + q];
    return s;
}

FeatureGrid encode(const ParamDict<float>& params, const EncoderConfig& config,
                   const float* image, GateMode gate, const float* gt_grid_mask) {
    ad::Tape<float> tape;
    const BoundParams bound = bind_params(tape, params, false);
    const EncodeNodes nodes =
        encode_on_tape(tape, bound, config, image, gate, gt_grid_mask, false);
    FeatureGrid grid;
    grid.dim = config.descriptor_dim();
    grid.h = grid.w = config.grid_size;
    grid.features = tape.value(nodes.features);
    grid.pre_gate = tape.value(nodes.pre_gate);
    grid.mask_prob = tape.value(nodes.mask_prob);
    if (gate == GateMode::AllOnes) // no usable predicted foreground in this mode
        grid.mask_prob.assign(grid.mask_prob.size(), 1.0f);
    return grid;
}

ParamDict<double> to_double(const ParamDict<float>& params) {
    ParamDict<double> out;
    for (const auto& [name, t] : params) {
        ad::Tensor<double> d(t.shape);
        for (std::size_t i = 0; i < t.data.size(); ++i) d.data[i] = t.data[i];
        out.emplace_back(name, std::move(d));
    }
    return out;
}

} // namespace dope::model
