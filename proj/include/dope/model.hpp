#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "dope/autodiff.hpp"

namespace dope::model {

struct EncoderConfig {
    int input_size = 64;
    int in_channels = 3;
    std::array<int, 3> stage_channels{16, 32, 64};
    int context_channels = 96; // fourth stage; its receptive field spans the image
    int grid_size = 16;
    std::array<int, 4> proj_channels{64, 128, 128, 64};
    int mask_hidden = 32; // hidden width of the mask head

    int descriptor_dim() const { return proj_channels[3]; }
    void validate() const;
    bool operator==(const EncoderConfig&) const = default;
};

template <typename T>
using ParamDict = std::vector<std::pair<std::string, ad::Tensor<T>>>;

/// Online encoder weights plus their momentum (EMA target) copy.
struct EncoderParams {
    EncoderConfig config;
    ParamDict<float> online;
    ParamDict<float> momentum;
};

/// Kaiming-uniform (fan-in) conv weights, zero biases; the momentum copy
/// starts equal to the online weights.
EncoderParams init_params(const EncoderConfig& config, std::uint64_t seed);

/// target <- m * target + (1 - m) * online, for every named tensor.
void momentum_update(const ParamDict<float>& online, ParamDict<float>& target, float m);

enum class GateMode {
    Predicted,       // gate with sigmoid(mask logits) (training: differentiable)
    PredictedBinary, // gate with (sigmoid(mask logits) > 0.5) (inference: unit
                     // foreground columns, zeroed background)
    GroundTruth,     // gate with a caller-provided grid mask
    AllOnes,         // no gating
};

/// Node ids of one encoder forward pass on a tape.
struct EncodeNodes {
    int pre_gate = -1;    // unit-normalized features, D x h x w
    int features = -1;    // gated features (equal to pre_gate under AllOnes)
    int mask_logits = -1; // 1 x h x w
    int mask_prob = -1;   // sigmoid(mask_logits)
};

/// Parameter leaves registered on a tape, shared between forward passes so
/// gradients from a whole batch accumulate on one set of leaves.
struct BoundParams {
    std::vector<std::pair<std::string, int>> ids;

    int find(const std::string& name) const {
        for (const auto& [n, id] : ids)
            if (n == name) return id;
        throw NameMismatch("BoundParams: missing parameter '" + name + "'");
    }
};

template <typename T>
BoundParams bind_params(ad::Tape<T>& tape, const ParamDict<T>& params, bool needs_grad) {
    BoundParams bound;
    for (const auto& [name, tensor] : params)
        bound.ids.emplace_back(name, tape.leaf(tensor, needs_grad, name.c_str()));
    return bound;
}

/// Builds the encoder graph: three stride-2 stages, upsample+add pyramid
/// merge, 1x1 projection head, per-cell L2 normalization, then mask gating.
/// With mask_only the projection head is skipped (features stay -1).
/// gt_grid_mask must be grid-sized when gate == GroundTruth.
template <typename T>
EncodeNodes encode_on_tape(ad::Tape<T>& tape, const BoundParams& params,
                           const EncoderConfig& config, const float* image, GateMode gate,
                           const float* gt_grid_mask = nullptr, bool mask_only = false);

/// Dense descriptor grid: gated features plus the predicted mask.
struct FeatureGrid {
    int dim = 0, h = 0, w = 0;
    std::vector<float> features;  // D x h x w, gated
    std::vector<float> pre_gate;  // D x h x w, unit per cell
    std::vector<float> mask_prob; // h x w

    std::vector<float> cell_vector(int gx, int gy) const;
    float cell_dot(int gx, int gy, const FeatureGrid& other, int ox, int oy) const;
};

/// Convenience inference entry point (no gradients).
FeatureGrid encode(const ParamDict<float>& params, const EncoderConfig& config,
                   const float* image, GateMode gate = GateMode::Predicted,
                   const float* gt_grid_mask = nullptr);

/// Converts a float param dict to double (for 64-bit gradient checks).
ParamDict<double> to_double(const ParamDict<float>& params);

extern template EncodeNodes encode_on_tape<float>(ad::Tape<float>&, const BoundParams&,
                                                  const EncoderConfig&, const float*, GateMode,
                                                  const float*, bool);
extern template EncodeNodes encode_on_tape<double>(ad::Tape<double>&, const BoundParams&,
                                                   const EncoderConfig&, const float*, GateMode,
                                                   const float*, bool);

} // namespace dope::model
