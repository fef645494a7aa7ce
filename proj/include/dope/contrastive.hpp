#pragma once

#include <array>
#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

#include "dope/dataset_io.hpp"
#include "dope/model.hpp"

namespace dope::contrastive {

enum class NegativeStrategy { SecondViewOnly, OtherObjectsOnly, Both };
enum class PairMode { MultiView, SingleViewAugmented };

std::string to_string(NegativeStrategy s);
std::string to_string(PairMode m);
NegativeStrategy strategy_from_string(const std::string& s);
PairMode pair_mode_from_string(const std::string& s);

struct TrainConfig {
    int batch_size = 16;
    int n_correspondences = 16;
    double temperature = 0.1;
    NegativeStrategy strategy = NegativeStrategy::Both;
    PairMode pair_mode = PairMode::MultiView;
    bool random_background_remove = true;
    bool predict_mask = true;
    bool include_positive_in_denominator = true;
    bool enable_augmentation = true; // master switch (off = raw views)
    bool corr_on_mask_cells = true;  // keep only correspondences on solid grid cells
    int epochs = 500;
    int steps = 0; // when > 0, trains exactly this many steps instead of epochs
    double lr0 = 1e-4;
    double weight_decay = 1e-2;
    double ema_momentum = 0.99;
    double adam_beta1 = 0.9;
    double adam_beta2 = 0.999;
    double adam_eps = 1e-8;
    double max_azimuth_gap_deg = 90.0;
    double occlusion_tol = 0.02;
    int neighbor_exclusion = 1; // grid radius around the positive kept out of negatives
    std::uint64_t seed = 0;

    void validate() const;
};

enum class StageMode { Off, Coin, On };

struct AugmentOptions {
    StageMode background = StageMode::Coin; // replace background with solid color/noise
    StageMode flip = StageMode::Coin;       // horizontal flip
    StageMode rot_trans = StageMode::Coin;  // foreground rotation <= 15 deg, shift <= 8 px
    StageMode color = StageMode::On;        // gain/offset/gamma jitter, every view

    static AugmentOptions all_off() {
        return {StageMode::Off, StageMode::Off, StageMode::Off, StageMode::Off};
    }
    static AugmentOptions from_config(const TrainConfig& cfg) {
        if (!cfg.enable_augmentation) return all_off();
        AugmentOptions o;
        if (!cfg.random_background_remove) o.background = StageMode::Off;
        return o;
    }
};

struct Augmented {
    std::vector<float> rgb;
    std::vector<std::uint8_t> mask;
    std::vector<std::array<int, 2>> pixels; // transformed coords, aligned with the input
    std::vector<std::uint8_t> alive;        // pixel survived all transforms and lies on the mask
};

/// Applies the seeded augmentation pipeline. Every geometric transform hits
/// the image, the mask, and the tracked pixels identically; pixels that leave
/// the frame or fall off the transformed mask are marked dead.
Augmented augment(const geom::PosedView& view, const std::vector<std::array<int, 2>>& pixels,
                  std::uint64_t seed, const AugmentOptions& options);

/// Majority-coverage downsample of a pixel mask to grid cells (1.0 where more
/// than half the cell's pixels are foreground).
std::vector<float> grid_mask_from_pixels(const std::vector<std::uint8_t>& mask, int img_size,
                                         int grid_size);

struct BatchElement {
    std::vector<float> img_a, img_b;
    std::vector<std::uint8_t> mask_a, mask_b;
    std::vector<float> grid_mask_a, grid_mask_b;
    std::vector<std::array<int, 2>> cells_a, cells_b; // correspondence grid cells, aligned
    int object_id = -1;
};

struct TrainBatch {
    std::vector<BatchElement> elements;
    int image_size = 0;
    int grid_size = 0;
    int requested_correspondences = 0; // batch_size * n
    int accepted_correspondences = 0;
};

/// Samples batch_size distinct instances and builds augmented view pairs with
/// correspondences in grid coordinates. MultiView pairs are restricted to
/// azimuth gaps <= max_azimuth_gap_deg; SingleViewAugmented duplicates one
/// view and pairs identity pixels.
TrainBatch build_batch(const io::LoadedDataset& ds, const TrainConfig& cfg,
                       std::uint64_t step_seed, bool want_correspondences = true);

/// Seed the training loop feeds build_batch at a given step.
std::uint64_t step_seed(const TrainConfig& cfg, std::int64_t step);

struct CorrLossConfig {
    double temperature = 0.1;
    bool include_positive = true;
    NegativeStrategy strategy = NegativeStrategy::Both;
    // Second-view cells within this Chebyshev radius of the positive cell are
    // not negatives: at coarse grids they show the same surface patch.
    int neighbor_exclusion = 1;
};

/// The correspondence-level contrastive loss. feat_a are online-encoder grids
/// (gradients flow), feat_b momentum-encoder grids (constants). For each
/// correspondence the positive is the matching cell of feat_b; negatives
/// follow the strategy: other on-mask cells of the same object's second view,
/// the target cells of the other objects in the batch, or both. Returns the
/// scalar node holding the mean of the per-correspondence losses.
template <typename T>
int corr_nt_xent_node(ad::Tape<T>& tape, const std::vector<int>& feat_a,
                      const std::vector<int>& feat_b,
                      const std::vector<std::vector<std::array<int, 2>>>& cells_a,
                      const std::vector<std::vector<std::array<int, 2>>>& cells_b,
                      const std::vector<std::vector<float>>& grid_mask_b,
                      const CorrLossConfig& cfg);

/// Mean binary cross entropy with logits against fixed {0,1} targets.
template <typename T>
int mask_bce_node(ad::Tape<T>& tape, int logits, const std::vector<float>& targets);

struct EpochLog {
    int epoch = 0;
    double l_corr = 0;
    double l_mask = 0;
    double lr = 0;
    double accepted_rate = 0;
};

struct TrainResult {
    model::EncoderParams params;
    std::vector<EpochLog> log;
    std::int64_t total_steps = 0;
};

enum class Objective {
    DenseCorrespondence, // per-correspondence loss on local features
    GlobalInstance,      // one pooled embedding per view, other objects as negatives
};

/// Full training loop: build batch, augment, encode (online view A, online
/// view B for mask supervision, momentum view B for targets), loss, AdamW
/// with cosine annealing, EMA update. Deterministic per cfg.seed.
TrainResult train(const io::LoadedDataset& base_ds, const TrainConfig& cfg,
                  const model::EncoderConfig& encoder_cfg,
                  Objective objective = Objective::DenseCorrespondence,
                  std::ostream* progress = nullptr);

} // namespace dope::contrastive
