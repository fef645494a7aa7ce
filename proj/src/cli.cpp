#include <chrono>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>

#include "dope/harness.hpp"
#include "dope/rng.hpp"

namespace dope::harness {

namespace {

const char* kUsage =
    "usage: dope <gen|train|eval|ablate|viz> [--config <file>] [--key value ...]\n"
    "\n"
    "  gen     render the procedural dataset to paths.dataset\n"
    "  train   train on the base split, write checkpoint + training log\n"
    "  eval    episodic low-shot evaluation of a checkpoint\n"
    "  ablate  train + evaluate the configured ablation arms\n"
    "  viz     dense-correspondence visualizations from a checkpoint\n"
    "\n"
    "Overrides use dotted keys into the config JSON, e.g.\n"
    "  --train.temperature 0.07  --eval.episodes 100  --paths.dataset data/toy\n"
    "Environment: DOPE_SEED overrides the global seed, DOPE_THREADS caps workers.\n";

ojson parse_value(const std::string& text) {
    try {
        return ojson::parse(text);
    } catch (const std::exception&) {
        return ojson(text); // bare string
    }
}

void deep_merge(ojson& base, const ojson& overlay) {
    for (const auto& [k, v] : overlay.items()) {
        if (v.is_object() && base.contains(k) && base[k].is_object())
            deep_merge(base[k], v);
        else
            base[k] = v;
    }
}

void apply_override(ojson& config, const std::string& dotted, const std::string& text) {
    ojson* node = &config;
    std::size_t pos = 0;
    for (;;) {
        const std::size_t dot = dotted.find('.', pos);
        const std::string key = dotted.substr(pos, dot - pos);
        if (key.empty()) throw ConfigError("bad override key '--" + dotted + "'");
        if (dot == std::string::npos) {
            (*node)[key] = parse_value(text);
            return;
        }
        node = &(*node)[key];
        pos = dot + 1;
    }
}

void ensure_parent_dir(const std::string& path) {
    const auto parent = std::filesystem::path(path).parent_path();
    if (!parent.empty()) std::filesystem::create_directories(parent);
}

io::LoadedDataset load_split(const RunConfig& cfg, const std::vector<int>& categories) {
    return io::load_dataset(cfg.paths.dataset, &categories);
}

lowshot::SplitSpec resolve_split(const RunConfig& cfg) {
    std::ifstream mf(cfg.paths.dataset + "/manifest.json");
    if (!mf) throw IoError("cannot open " + cfg.paths.dataset + "/manifest.json (run gen first)");
    const ojson manifest = ojson::parse(mf);
    std::vector<int> ids;
    for (const auto& c : manifest.at("categories")) ids.push_back(c.at("id").get<int>());
    return lowshot::make_split(ids, cfg.split.n_base, cfg.split.n_val, cfg.split.n_test,
                               cfg.split.index);
}

void write_train_log(const std::string& path, const RunConfig& cfg,
                     const contrastive::TrainConfig& train_cfg,
                     const contrastive::TrainResult& result) {
    ensure_parent_dir(path);
    ojson j;
    j["config"] = to_json(cfg);
    j["train_config"] = to_json(train_cfg);
    j["total_steps"] = result.total_steps;
    ojson epochs = ojson::array();
    for (const auto& e : result.log)
        epochs.push_back({{"epoch", e.epoch},
                          {"l_corr", e.l_corr},
                          {"l_mask", e.l_mask},
                          {"lr", e.lr},
                          {"accepted_rate", e.accepted_rate}});
    j["epochs"] = epochs;
    std::ofstream f(path);
    if (!f) throw IoError("cannot open " + path);
    f << j.dump(2) << "\n";
}

int cmd_gen(const RunConfig& cfg) {
    scene::generate_dataset(cfg.dataset, cfg.paths.dataset);
    std::cout << "dataset written to " << cfg.paths.dataset << "\n";
    return 0;
}

int cmd_train(const RunConfig& cfg) {
    const lowshot::SplitSpec split = resolve_split(cfg);
    const io::LoadedDataset base = load_split(cfg, split.base);
    const contrastive::TrainResult result =
        contrastive::train(base, cfg.train, cfg.encoder,
                           contrastive::Objective::DenseCorrespondence, &std::cout);
    ensure_parent_dir(cfg.paths.checkpoint);
    save_checkpoint(cfg.paths.checkpoint, {result.params, cfg.train, result.total_steps});
    write_train_log(cfg.paths.train_log, cfg, cfg.train, result);
    std::cout << "checkpoint written to " << cfg.paths.checkpoint << ".{json,bin}\n";
    return 0;
}

std::vector<MetricRow> run_eval(const RunConfig& cfg, const Checkpoint& ckpt,
                                const std::string& name) {
    const lowshot::SplitSpec split = resolve_split(cfg);
    const auto& cats = cfg.eval.split == "val" ? split.val : split.test;
    const io::LoadedDataset ds = load_split(cfg, cats);

    std::vector<MetricRow> rows;
    for (const auto& [n_way, k_shot] : cfg.eval.settings) {
        const auto t0 = std::chrono::steady_clock::now();
        const auto episodes =
            lowshot::sample_episodes(ds, cats, n_way, k_shot, cfg.eval.q_queries,
                                     cfg.eval.episodes, cfg.eval.seed);
        lowshot::EvalResult r;
        if (cfg.eval.classifier == "global") {
            r = lowshot::evaluate_global(ds, ckpt.params.online, ckpt.params.config, episodes);
        } else {
            const model::GateMode gate = ckpt.train_config.predict_mask
                                             ? model::GateMode::Predicted
                                             : model::GateMode::AllOnes;
            r = lowshot::evaluate_local(ds, ckpt.params.online, ckpt.params.config, episodes,
                                        cfg.eval.k_points, cfg.eval.seed, gate);
        }
        const double secs =
            std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        rows.push_back({name, n_way, k_shot, r.mean_accuracy, r.ci95,
                        static_cast<int>(episodes.size()), secs});
        std::cout << name << " " << n_way << "-way " << k_shot << "-shot: "
                  << r.mean_accuracy * 100 << "% (ci " << r.ci95 * 100 << ")\n";
    }
    return rows;
}

int cmd_eval(const RunConfig& cfg) {
    const Checkpoint ckpt = load_checkpoint(cfg.paths.checkpoint, &cfg.encoder);
    const std::vector<MetricRow> rows = run_eval(cfg, ckpt, "checkpoint");
    ensure_parent_dir(cfg.paths.report);
    write_metrics(rows, to_json(cfg), cfg.paths.report + ".json", cfg.paths.report + ".csv");
    std::cout << "report written to " << cfg.paths.report << ".{json,csv}\n";
    return 0;
}

int cmd_ablate(const RunConfig& cfg) {
    const lowshot::SplitSpec split = resolve_split(cfg);
    const io::LoadedDataset base = load_split(cfg, split.base);

    std::vector<MetricRow> rows;
    for (const auto& [name, overrides] : cfg.ablate_arms) {
        ojson merged = to_json(cfg.train);
        for (const auto& [k, v] : overrides.items()) merged[k] = v;
        const contrastive::TrainConfig arm_cfg = train_config_from_json(merged);
        std::cout << "== ablation arm: " << name << "\n";
        const contrastive::TrainResult result = contrastive::train(
            base, arm_cfg, cfg.encoder, contrastive::Objective::DenseCorrespondence, &std::cout);
        ensure_parent_dir(cfg.paths.checkpoint);
        const std::string ckpt_path = cfg.paths.checkpoint + "." + name;
        save_checkpoint(ckpt_path, {result.params, arm_cfg, result.total_steps});
        RunConfig eval_cfg = cfg;
        eval_cfg.paths.checkpoint = ckpt_path;
        const Checkpoint ckpt = load_checkpoint(ckpt_path);
        for (auto row : run_eval(eval_cfg, ckpt, name)) rows.push_back(row);
    }
    ensure_parent_dir(cfg.paths.report);
    write_metrics(rows, to_json(cfg), cfg.paths.report + ".json", cfg.paths.report + ".csv");
    std::cout << "ablation report written to " << cfg.paths.report << ".{json,csv}\n";
    return 0;
}

int cmd_viz(const RunConfig& cfg) {
    const Checkpoint ckpt = load_checkpoint(cfg.paths.checkpoint, &cfg.encoder);
    VizSpec spec = cfg.viz;
    if (spec.targets.empty()) // default: two later views of the source instance
        spec.targets = {{spec.source[0], spec.source[1], spec.source[2] + 1},
                        {spec.source[0], spec.source[1], spec.source[2] + 2}};
    const io::LoadedDataset ds = io::load_dataset(cfg.paths.dataset);
    for (const auto& p :
         viz_matches(ckpt.params.online, ckpt.params.config, ds, spec, cfg.paths.viz_dir))
        std::cout << "wrote " << p << "\n";
    return 0;
}

} // namespace

int cli_main(int argc, const char* const* argv) {
    std::string command;
    RunConfig cfg;
    try {
        if (argc < 2) throw ConfigError("missing subcommand");
        command = argv[1];
        if (command != "gen" && command != "train" && command != "eval" &&
            command != "ablate" && command != "viz")
            throw ConfigError("unknown subcommand '" + command + "'");

        ojson config = ojson::object();
        for (int i = 2; i < argc; ++i) {
            const std::string arg = argv[i];
            if (arg.rfind("--", 0) != 0) throw ConfigError("expected --key, got '" + arg + "'");
            if (i + 1 >= argc) throw ConfigError("missing value for '" + arg + "'");
            const std::string value = argv[++i];
            if (arg == "--config") {
                std::ifstream f(value);
                if (!f) throw ConfigError("cannot open config file '" + value + "'");
                ojson merged = ojson::parse(f);
                deep_merge(merged, config); // command line wins over the file
                config = merged;
            } else {
                apply_override(config, arg.substr(2), value);
            }
        }
        if (const char* env_seed = std::getenv("DOPE_SEED"))
            config["seed"] = static_cast<std::uint64_t>(std::strtoull(env_seed, nullptr, 10));

        cfg = run_config_from_json(config);
        cfg.dataset.validate();
        cfg.encoder.validate();
        cfg.train.validate();
    } catch (const std::exception& e) {
        std::cerr << "config error: " << e.what() << "\n\n" << kUsage;
        return 2;
    }

    try {
        if (command == "gen") return cmd_gen(cfg);
        if (command == "train") return cmd_train(cfg);
        if (command == "eval") return cmd_eval(cfg);
        if (command == "ablate") return cmd_ablate(cfg);
        return cmd_viz(cfg);
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
}

} // namespace dope::harness
