#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include <json.hpp>

#include "dope/contrastive.hpp"
#include "dope/lowshot.hpp"
#include "dope/model.hpp"
#include "dope/scenegen.hpp"

namespace dope::harness {

using ojson = nlohmann::ordered_json;

// config <-> json (missing fields keep defaults)
ojson to_json(const model::EncoderConfig&);
model::EncoderConfig encoder_config_from_json(const ojson&);
ojson to_json(const contrastive::TrainConfig&);
contrastive::TrainConfig train_config_from_json(const ojson&);
ojson to_json(const scene::DatasetSpec&);
scene::DatasetSpec dataset_spec_from_json(const ojson&);

struct EvalSettings {
    std::string split = "test";
    std::vector<std::pair<int, int>> settings = {{5, 1}}; // (n_way, k_shot)
    int q_queries = 5;
    int episodes = 500;
    int k_points = 8;
    std::string classifier = "local"; // local | global
    std::uint64_t seed = 1;
};
ojson to_json(const EvalSettings&);
EvalSettings eval_settings_from_json(const ojson&);

struct SplitSettings {
    int n_base = 4, n_val = 3, n_test = 5;
    int index = 0;
};
ojson to_json(const SplitSettings&);
SplitSettings split_settings_from_json(const ojson&);

struct RunPaths {
    std::string dataset = "data/toy";
    std::string checkpoint = "runs/ckpt";
    std::string report = "runs/report";
    std::string train_log = "runs/train_log.json";
    std::string viz_dir = "runs/viz";
};

struct VizSpec {
    std::array<int, 3> source{0, 0, 0}; // category, instance, view
    std::vector<std::array<int, 3>> targets;
    std::array<int, 2> query_cell{-1, -1}; // -1 = auto (foreground center)
    int upscale = 8;
};

struct RunConfig {
    std::uint64_t seed = 0;
    RunPaths paths;
    scene::DatasetSpec dataset;
    model::EncoderConfig encoder;
    contrastive::TrainConfig train;
    SplitSettings split;
    EvalSettings eval;
    std::vector<std::pair<std::string, ojson>> ablate_arms; // name -> train overrides
    VizSpec viz;
};

/// Parses a run config, seeding defaults and echoing back the resolved form.
RunConfig run_config_from_json(const ojson& j);
ojson to_json(const RunConfig&);

/// Default ablation arms: negative-sampling strategies, single-view pairing,
/// background removal off, mask prediction off.
std::vector<std::pair<std::string, ojson>> default_ablation_arms();

// ---- checkpoints ----

struct Checkpoint {
    model::EncoderParams params;
    contrastive::TrainConfig train_config;
    std::int64_t step = 0;
};

/// Writes <base>.json (manifest) and <base>.bin (raw little-endian buffers,
/// concatenated in manifest order).
void save_checkpoint(const std::string& base_path, const Checkpoint& ckpt);

/// Bit-exact inverse of save_checkpoint. Throws CorruptCheckpoint on length
/// mismatches and VersionMismatch when the stored encoder config differs from
/// *expected (naming the field).
Checkpoint load_checkpoint(const std::string& base_path,
                           const model::EncoderConfig* expected = nullptr);

// ---- metrics ----

struct MetricRow {
    std::string config_name;
    int n_way = 0, k_shot = 0;
    double accuracy = 0, ci = 0;
    int episodes = 0;
    double wall_seconds = 0;
};

/// JSON report plus flat CSV (one row per config x setting). Output bytes are
/// stable across reruns.
void write_metrics(const std::vector<MetricRow>& rows, const ojson& config_echo,
                   const std::string& json_path, const std::string& csv_path);

// ---- visualization ----

using EncodeFn = std::function<model::FeatureGrid(const geom::PosedView&)>;

/// Dense-correspondence visualization: position-hue source coloring, argmax
/// cosine matches in targets, plus a similarity heatmap for one query cell.
/// Returns the written file paths.
std::vector<std::string> viz_matches(const EncodeFn& encode, const io::LoadedDataset& ds,
                                     const VizSpec& spec, const std::string& out_dir);

std::vector<std::string> viz_matches(const model::ParamDict<float>& params,
                                     const model::EncoderConfig& config,
                                     const io::LoadedDataset& ds, const VizSpec& spec,
                                     const std::string& out_dir);

// ---- CLI ----

/// dope gen|train|eval|ablate|viz --config <file> [--dotted.key value ...]
/// Exit codes: 0 success, 2 usage/config error, 1 runtime failure.
int cli_main(int argc, const char* const* argv);

} // namespace dope::harness
