#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "dope/geometry.hpp"

namespace dope::scene {
struct DatasetSpec;
}

namespace dope::io {

/// Writes a single posed view as view<v>.{rgb.png, depth.bin, mask.png, cam.json}
/// inside dir. RGB is quantized to 8 bits; depth is stored exactly.
void write_view(const std::string& dir, int view_index, const geom::PosedView& view);

geom::PosedView read_view(const std::string& dir, int view_index);

/// Renders and writes every view of the dataset plus manifest.json.
void write_dataset(const scene::DatasetSpec& spec, const std::string& root);

struct InstanceViews {
    int category_id = 0;
    int instance = 0;
    std::vector<geom::PosedView> views;
    std::vector<double> azimuth_deg; // camera azimuth per view, derived from pose
};

struct LoadedDataset {
    int image_size = 0;
    int grid_size = 0;
    std::vector<int> category_ids;
    std::vector<InstanceViews> instances;

    std::vector<const InstanceViews*> of_category(int category_id) const;
};

/// Loads (a category subset of) a generated dataset back into memory.
LoadedDataset load_dataset(const std::string& root,
                           const std::vector<int>* categories = nullptr);

/// Camera azimuth in [0, 360) recovered from the pose.
double camera_azimuth_deg(const geom::Pose& pose);

/// Circular azimuth difference in [0, 180].
double azimuth_difference_deg(double a, double b);

} // namespace dope::io
