#pragma once

#include <cstdint>
#include <functional>
#include <vector>

#include "dope/dataset_io.hpp"
#include "dope/model.hpp"

namespace dope::lowshot {

/// Disjoint category splits. Base trains the representation, val selects
/// checkpoints, test measures low-shot generalization.
struct SplitSpec {
    std::vector<int> base, val, test;
    int split_index = 0;

    void validate(const std::vector<int>& all_category_ids) const;
};

/// Deterministic split assignment: category ids are shuffled by the split
/// index and dealt into base/val/test.
SplitSpec make_split(std::vector<int> category_ids, int n_base, int n_val, int n_test,
                     int split_index);

struct EpisodeItem {
    int instance_index = 0; // index into LoadedDataset::instances
    int view_index = 0;
    int label = 0; // 0 .. n_way-1
};

struct Episode {
    int n_way = 0, k_shot = 0, q_queries = 0;
    std::vector<EpisodeItem> support;
    std::vector<EpisodeItem> queries;
};

/// Seeded episode sampling: n_way categories without replacement, then
/// k_shot + q_queries views per category without replacement (supports and
/// queries disjoint).
std::vector<Episode> sample_episodes(const io::LoadedDataset& ds,
                                     const std::vector<int>& categories, int n_way, int k_shot,
                                     int q_queries, int count, std::uint64_t seed);

/// Sum-of-max local matching: farthest-point-samples k cells from the query's
/// predicted foreground (mask_prob > 0.5; top-k fallback), then for each
/// sampled query vector takes the max dot product over all support cells and
/// sums. If the mask is flat and empty it falls back to uniform-grid sampling
/// and sets *degenerate.
double local_match_score(const model::FeatureGrid& query, const model::FeatureGrid& support,
                         int k, std::uint64_t seed, bool* degenerate = nullptr);

/// 1-NN over support images by local_match_score; ties keep the lowest
/// support index. Returns the winning support's position.
int classify_query(const model::FeatureGrid& query,
                   const std::vector<const model::FeatureGrid*>& supports, int k,
                   std::uint64_t seed, bool* degenerate = nullptr);

struct EvalResult {
    double mean_accuracy = 0;
    double ci95 = 0; // 1.96 * sigma / sqrt(episodes)
    std::vector<double> per_episode;
    int degenerate_episodes = 0;
};

/// Aggregates per-episode accuracies; classify returns the predicted label of
/// (episode, query index).
EvalResult evaluate(const std::vector<Episode>& episodes,
                    const std::function<int(const Episode&, int)>& classify);

/// Episode evaluation with the DOPE local classifier. Encodings are cached
/// per (instance, view).
EvalResult evaluate_local(const io::LoadedDataset& ds, const model::ParamDict<float>& params,
                          const model::EncoderConfig& config,
                          const std::vector<Episode>& episodes, int k_points,
                          std::uint64_t seed,
                          model::GateMode gate = model::GateMode::Predicted);

/// Unit-norm global embedding: mask-weighted average of the pre-gating unit
/// features, renormalized.
std::vector<float> global_baseline_embed(const model::ParamDict<float>& params,
                                         const model::EncoderConfig& config,
                                         const float* image);

/// Cosine 1-NN episode evaluation in the pooled embedding space.
EvalResult evaluate_global(const io::LoadedDataset& ds, const model::ParamDict<float>& params,
                           const model::EncoderConfig& config,
                           const std::vector<Episode>& episodes);

} // namespace dope::lowshot
