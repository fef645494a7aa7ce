#pragma once

// In-memory dataset fixtures for tests (no disk round trip needed).

#include "dope/dataset_io.hpp"
#include "dope/scenegen.hpp"

namespace fixtures {

inline dope::io::LoadedDataset memory_dataset(int categories, int instances, int views,
                                              std::uint64_t seed) {
    dope::scene::DatasetSpec spec = dope::scene::default_dataset_spec(seed);
    spec.categories.resize(categories);
    spec.instances_per_category = instances;
    spec.views_per_instance = views;
    spec.validate();

    dope::io::LoadedDataset ds;
    ds.image_size = spec.image_size;
    ds.grid_size = spec.grid_size;
    for (int c = 0; c < categories; ++c) {
        ds.category_ids.push_back(spec.categories[c].category_id);
        for (int i = 0; i < instances; ++i) {
            dope::io::InstanceViews iv;
            iv.category_id = spec.categories[c].category_id;
            iv.instance = i;
            for (int v = 0; v < views; ++v) {
                iv.views.push_back(dope::scene::render_dataset_view(spec, c, i, v));
                iv.azimuth_deg.push_back(dope::io::camera_azimuth_deg(iv.views.back().pose));
            }
            ds.instances.push_back(std::move(iv));
        }
    }
    return ds;
}

inline dope::model::EncoderConfig tiny_encoder() {
    dope::model::EncoderConfig cfg;
    cfg.input_size = 64;
    cfg.grid_size = 16;
    cfg.stage_channels = {8, 12, 16};
    cfg.proj_channels = {16, 16, 16, 16};
    return cfg;
}

} // namespace fixtures
