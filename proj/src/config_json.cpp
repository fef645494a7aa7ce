#include "dope/harness.hpp"

namespace dope::harness {

namespace {

template <typename T>
void get_to(const ojson& j, const char* key, T& out) {
    if (j.contains(key)) j.at(key).get_to(out);
}

} // namespace

ojson to_json(const model::EncoderConfig& c) {
    ojson j;
    j["input_size"] = c.input_size;
    j["in_channels"] = c.in_channels;
    j["stage_channels"] = c.stage_channels;
    j["context_channels"] = c.context_channels;
    j["grid_size"] = c.grid_size;
    j["proj_channels"] = c.proj_channels;
    j["mask_hidden"] = c.mask_hidden;
    return j;
}

model::EncoderConfig encoder_config_from_json(const ojson& j) {
    model::EncoderConfig c;
    get_to(j, "input_size", c.input_size);
    get_to(j, "in_channels", c.in_channels);
    get_to(j, "stage_channels", c.stage_channels);
    get_to(j, "context_channels", c.context_channels);
    get_to(j, "grid_size", c.grid_size);
    get_to(j, "proj_channels", c.proj_channels);
    get_to(j, "mask_hidden", c.mask_hidden);
    return c;
}

ojson to_json(const contrastive::TrainConfig& c) {
    ojson j;
    j["batch_size"] = c.batch_size;
    j["n_correspondences"] = c.n_correspondences;
    j["temperature"] = c.temperature;
    j["strategy"] = contrastive::to_string(c.strategy);
    j["pair_mode"] = contrastive::to_string(c.pair_mode);
    j["random_background_remove"] = c.random_background_remove;
    j["predict_mask"] = c.predict_mask;
    j["include_positive_in_denominator"] = c.include_positive_in_denominator;
    j["enable_augmentation"] = c.enable_augmentation;
    j["corr_on_mask_cells"] = c.corr_on_mask_cells;
    j["epochs"] = c.epochs;
    j["steps"] = c.steps;
    j["lr0"] = c.lr0;
    j["weight_decay"] = c.weight_decay;
    j["ema_momentum"] = c.ema_momentum;
    j["adam_beta1"] = c.adam_beta1;
    j["adam_beta2"] = c.adam_beta2;
    j["adam_eps"] = c.adam_eps;
    j["max_azimuth_gap_deg"] = c.max_azimuth_gap_deg;
    j["occlusion_tol"] = c.occlusion_tol;
    j["neighbor_exclusion"] = c.neighbor_exclusion;
    j["seed"] = c.seed;
    return j;
}

contrastive::TrainConfig train_config_from_json(const ojson& j) {
    contrastive::TrainConfig c;
    get_to(j, "batch_size", c.batch_size);
    get_to(j, "n_correspondences", c.n_correspondences);
    get_to(j, "temperature", c.temperature);
    if (j.contains("strategy"))
        c.strategy = contrastive::strategy_from_string(j.at("strategy").get<std::string>());
    if (j.contains("pair_mode"))
        c.pair_mode = contrastive::pair_mode_from_string(j.at("pair_mode").get<std::string>());
    get_to(j, "random_background_remove", c.random_background_remove);
    get_to(j, "predict_mask", c.predict_mask);
    get_to(j, "include_positive_in_denominator", c.include_positive_in_denominator);
    get_to(j, "enable_augmentation", c.enable_augmentation);
    get_to(j, "corr_on_mask_cells", c.corr_on_mask_cells);
    get_to(j, "epochs", c.epochs);
    get_to(j, "steps", c.steps);
    get_to(j, "lr0", c.lr0);
    get_to(j, "weight_decay", c.weight_decay);
    get_to(j, "ema_momentum", c.ema_momentum);
    get_to(j, "adam_beta1", c.adam_beta1);
    get_to(j, "adam_beta2", c.adam_beta2);
    get_to(j, "adam_eps", c.adam_eps);
    get_to(j, "max_azimuth_gap_deg", c.max_azimuth_gap_deg);
    get_to(j, "occlusion_tol", c.occlusion_tol);
    get_to(j, "neighbor_exclusion", c.neighbor_exclusion);
    get_to(j, "seed", c.seed);
    return c;
}

ojson to_json(const scene::DatasetSpec& s) {
    ojson j;
    ojson cats = ojson::array();
    for (const auto& c : s.categories) {
        ojson cj;
        cj["id"] = c.category_id;
        cj["template"] = c.tmpl;
        cj["prop_lo"] = c.ranges.prop_lo;
        cj["prop_hi"] = c.ranges.prop_hi;
        cj["sat_lo"] = c.ranges.sat_lo;
        cj["sat_hi"] = c.ranges.sat_hi;
        cj["val_lo"] = c.ranges.val_lo;
        cj["val_hi"] = c.ranges.val_hi;
        cats.push_back(cj);
    }
    j["categories"] = cats;
    j["instances_per_category"] = s.instances_per_category;
    j["views_per_instance"] = s.views_per_instance;
    j["image_size"] = s.image_size;
    j["grid_size"] = s.grid_size;
    j["focal"] = s.focal;
    j["azimuth_range_deg"] = std::array<double, 2>{s.camera.azimuth_lo_deg, s.camera.azimuth_hi_deg};
    j["elevation_range_deg"] =
        std::array<double, 2>{s.camera.elevation_lo_deg, s.camera.elevation_hi_deg};
    j["distance_range"] = std::array<double, 2>{s.camera.distance_lo, s.camera.distance_hi};
    j["background"] = s.background == scene::BackgroundMode::Solid     ? "solid"
                      : s.background == scene::BackgroundMode::Checker ? "checker"
                                                                       : "mixed";
    j["seed"] = s.seed;
    return j;
}

scene::DatasetSpec dataset_spec_from_json(const ojson& j) {
    scene::DatasetSpec s = scene::default_dataset_spec();
    if (j.contains("categories")) {
        s.categories.clear();
        for (const auto& cj : j.at("categories")) {
            scene::CategorySpec c;
            c.category_id = cj.at("id").get<int>();
            c.tmpl = cj.at("template").get<std::string>();
            get_to(cj, "prop_lo", c.ranges.prop_lo);
            get_to(cj, "prop_hi", c.ranges.prop_hi);
            get_to(cj, "sat_lo", c.ranges.sat_lo);
            get_to(cj, "sat_hi", c.ranges.sat_hi);
            get_to(cj, "val_lo", c.ranges.val_lo);
            get_to(cj, "val_hi", c.ranges.val_hi);
            s.categories.push_back(c);
        }
    } else if (j.contains("num_categories")) {
        const int n = j.at("num_categories").get<int>();
        const auto& names = scene::template_names();
        if (n < 1 || n > static_cast<int>(names.size()))
            throw ConfigError("dataset.num_categories must lie in [1, " +
                              std::to_string(names.size()) + "]");
        s.categories.resize(n);
        for (int i = 0; i < n; ++i) {
            s.categories[i].category_id = i;
            s.categories[i].tmpl = names[i];
        }
    }
    get_to(j, "instances_per_category", s.instances_per_category);
    get_to(j, "views_per_instance", s.views_per_instance);
    get_to(j, "image_size", s.image_size);
    get_to(j, "grid_size", s.grid_size);
    get_to(j, "focal", s.focal);
    if (j.contains("azimuth_range_deg")) {
        auto r = j.at("azimuth_range_deg").get<std::array<double, 2>>();
        s.camera.azimuth_lo_deg = r[0];
        s.camera.azimuth_hi_deg = r[1];
    }
    if (j.contains("elevation_range_deg")) {
        auto r = j.at("elevation_range_deg").get<std::array<double, 2>>();
        s.camera.elevation_lo_deg = r[0];
        s.camera.elevation_hi_deg = r[1];
    }
    if (j.contains("distance_range")) {
        auto r = j.at("distance_range").get<std::array<double, 2>>();
        s.camera.distance_lo = r[0];
        s.camera.distance_hi = r[1];
    }
    if (j.contains("background")) {
        const std::string b = j.at("background").get<std::string>();
        if (b == "solid") s.background = scene::BackgroundMode::Solid;
        else if (b == "checker") s.background = scene::BackgroundMode::Checker;
        else if (b == "mixed") s.background = scene::BackgroundMode::Mixed;
        else throw ConfigError("dataset.background must be solid|checker|mixed");
    }
    get_to(j, "seed", s.seed);
    return s;
}

ojson to_json(const EvalSettings& e) {
    ojson j;
    j["split"] = e.split;
    ojson st = ojson::array();
    for (const auto& [w, k] : e.settings) st.push_back({{"n_way", w}, {"k_shot", k}});
    j["settings"] = st;
    j["q_queries"] = e.q_queries;
    j["episodes"] = e.episodes;
    j["k_points"] = e.k_points;
    j["classifier"] = e.classifier;
    j["seed"] = e.seed;
    return j;
}

EvalSettings eval_settings_from_json(const ojson& j) {
    EvalSettings e;
    get_to(j, "split", e.split);
    if (j.contains("settings")) {
        e.settings.clear();
        for (const auto& s : j.at("settings"))
            e.settings.emplace_back(s.at("n_way").get<int>(), s.at("k_shot").get<int>());
    }
    get_to(j, "q_queries", e.q_queries);
    get_to(j, "episodes", e.episodes);
    get_to(j, "k_points", e.k_points);
    get_to(j, "classifier", e.classifier);
    get_to(j, "seed", e.seed);
    if (e.split != "val" && e.split != "test")
        throw ConfigError("eval.split must be val|test");
    if (e.classifier != "local" && e.classifier != "global")
        throw ConfigError("eval.classifier must be local|global");
    return e;
}

ojson to_json(const SplitSettings& s) {
    ojson j;
    j["n_base"] = s.n_base;
    j["n_val"] = s.n_val;
    j["n_test"] = s.n_test;
    j["index"] = s.index;
    return j;
}

SplitSettings split_settings_from_json(const ojson& j) {
    SplitSettings s;
    get_to(j, "n_base", s.n_base);
    get_to(j, "n_val", s.n_val);
    get_to(j, "n_test", s.n_test);
    get_to(j, "index", s.index);
    return s;
}

std::vector<std::pair<std::string, ojson>> default_ablation_arms() {
    return {
        {"default", ojson::object()},
        {"other_objects_only", {{"strategy", "other_objects_only"}}},
        {"second_view_only", {{"strategy", "second_view_only"}}},
        {"single_view_augmented", {{"pair_mode", "single_view_augmented"}}},
        {"no_background_remove", {{"random_background_remove", false}}},
        {"no_mask_prediction", {{"predict_mask", false}}},
    };
}

RunConfig run_config_from_json(const ojson& j) {
    RunConfig c;
    get_to(j, "seed", c.seed);
    if (j.contains("paths")) {
        const auto& p = j.at("paths");
        get_to(p, "dataset", c.paths.dataset);
        get_to(p, "checkpoint", c.paths.checkpoint);
        get_to(p, "report", c.paths.report);
        get_to(p, "train_log", c.paths.train_log);
        get_to(p, "viz_dir", c.paths.viz_dir);
    }
    c.dataset = dataset_spec_from_json(j.contains("dataset") ? j.at("dataset") : ojson::object());
    if (!j.contains("dataset") || !j.at("dataset").contains("seed")) c.dataset.seed = c.seed;
    c.encoder = encoder_config_from_json(j.contains("encoder") ? j.at("encoder") : ojson::object());
    c.train = train_config_from_json(j.contains("train") ? j.at("train") : ojson::object());
    if (!j.contains("train") || !j.at("train").contains("seed")) c.train.seed = c.seed;
    c.split = split_settings_from_json(j.contains("split") ? j.at("split") : ojson::object());
    c.eval = eval_settings_from_json(j.contains("eval") ? j.at("eval") : ojson::object());
    if (j.contains("ablate") && j.at("ablate").contains("arms")) {
        for (const auto& arm : j.at("ablate").at("arms"))
            c.ablate_arms.emplace_back(arm.at("name").get<std::string>(),
                                       arm.contains("train") ? arm.at("train") : ojson::object());
    } else {
        c.ablate_arms = default_ablation_arms();
    }
    if (j.contains("viz")) {
        const auto& v = j.at("viz");
        get_to(v, "source", c.viz.source);
        if (v.contains("targets")) c.viz.targets = v.at("targets").get<std::vector<std::array<int, 3>>>();
        get_to(v, "query_cell", c.viz.query_cell);
        get_to(v, "upscale", c.viz.upscale);
    }
    return c;
}

ojson to_json(const RunConfig& c) {
    ojson j;
    j["seed"] = c.seed;
    ojson p;
    p["dataset"] = c.paths.dataset;
    p["checkpoint"] = c.paths.checkpoint;
    p["report"] = c.paths.report;
    p["train_log"] = c.paths.train_log;
    p["viz_dir"] = c.paths.viz_dir;
    j["paths"] = p;
    j["dataset"] = to_json(c.dataset);
    j["encoder"] = to_json(c.encoder);
    j["train"] = to_json(c.train);
    j["split"] = to_json(c.split);
    j["eval"] = to_json(c.eval);
    ojson arms = ojson::array();
    for (const auto& [name, overrides] : c.ablate_arms)
        arms.push_back({{"name", name}, {"train", overrides}});
    j["ablate"] = {{"arms", arms}};
    ojson v;
    v["source"] = c.viz.source;
    v["targets"] = c.viz.targets;
    v["query_cell"] = c.viz.query_cell;
    v["upscale"] = c.viz.upscale;
    j["viz"] = v;
    return j;
}

} // namespace dope::harness
