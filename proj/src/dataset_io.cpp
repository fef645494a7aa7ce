#include "dope/dataset_io.hpp"

#include <cmath>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>

#include <json.hpp>

#include "dope/png_io.hpp"
#include "dope/scenegen.hpp"

namespace dope::io {

namespace fs = std::filesystem;
using json = nlohmann::ordered_json;

namespace {

constexpr char kDepthMagic[6] = {'D', 'D', 'E', 'P', '1', '\0'};

void write_depth(const std::string& path, int w, int h, const std::vector<float>& depth) {
    std::FILE* f = std::fopen(path.c_str(), "wb");
    if (!f) throw IoError("write_depth: cannot open " + path);
    std::uint32_t dims[2] = {static_cast<std::uint32_t>(w), static_cast<std::uint32_t>(h)};
    bool ok = std::fwrite(kDepthMagic, 1, 6, f) == 6;
    ok = ok && std::fwrite(dims, 4, 2, f) == 2;
    ok = ok && std::fwrite(depth.data(), 4, depth.size(), f) == depth.size();
    std::fclose(f);
    if (!ok) throw IoError("write_depth: short write to " + path);
}

std::vector<float> read_depth(const std::string& path, int* w, int* h) {
    std::FILE* f = std::fopen(path.c_str(), "rb");
    if (!f) throw IoError("read_depth: cannot open " + path);
    char magic[6];
    std::uint32_t dims[2];
    if (std::fread(magic, 1, 6, f) != 6 || std::memcmp(magic, kDepthMagic, 6) != 0 ||
        std::fread(dims, 4, 2, f) != 2) {
        std::fclose(f);
        throw IoError("read_depth: bad header in " + path);
    }
    std::vector<float> depth(static_cast<std::size_t>(dims[0]) * dims[1]);
    const bool ok = std::fread(depth.data(), 4, depth.size(), f) == depth.size();
    std::fclose(f);
    if (!ok) throw IoError("read_depth: truncated " + path);
    *w = static_cast<int>(dims[0]);
    *h = static_cast<int>(dims[1]);
    return depth;
}

std::string view_base(const std::string& dir, int view_index) {
    return dir + "/view" + std::to_string(view_index);
}

json pose_to_json(const geom::Intrinsics& k, const geom::Pose& p) {
    json j;
    j["fx"] = k.fx;
    j["fy"] = k.fy;
    j["cx"] = k.cx;
    j["cy"] = k.cy;
    j["width"] = k.width;
    j["height"] = k.height;
    j["rotation"] = p.rotation;
    j["translation"] = p.translation;
    return j;
}

void pose_from_json(const json& j, geom::Intrinsics* k, geom::Pose* p) {
    k->fx = j.at("fx").get<double>();
    k->fy = j.at("fy").get<double>();
    k->cx = j.at("cx").get<double>();
    k->cy = j.at("cy").get<double>();
    k->width = j.at("width").get<int>();
    k->height = j.at("height").get<int>();
    auto rot = j.at("rotation").get<std::vector<double>>();
    auto tr = j.at("translation").get<std::vector<double>>();
    if (rot.size() != 9 || tr.size() != 3) throw IoError("cam.json: bad rotation/translation");
    std::copy(rot.begin(), rot.end(), p->rotation.begin());
    std::copy(tr.begin(), tr.end(), p->translation.begin());
}

} // namespace

void write_view(const std::string& dir, int view_index, const geom::PosedView& view) {
    const std::string base = view_base(dir, view_index);
    const int w = view.width(), h = view.height();

    PngImage rgb;
    rgb.width = w;
    rgb.height = h;
    rgb.channels = 3;
    rgb.pixels.resize(static_cast<std::size_t>(w) * h * 3);
    for (std::size_t i = 0; i < rgb.pixels.size(); ++i) {
        const float x = std::min(1.0f, std::max(0.0f, view.rgb[i]));
        rgb.pixels[i] = static_cast<std::uint8_t>(std::lround(x * 255.0f));
    }
    write_png(base + ".rgb.png", rgb);

    PngImage mask;
    mask.width = w;
    mask.height = h;
    mask.channels = 1;
    mask.pixels.resize(static_cast<std::size_t>(w) * h);
    for (std::size_t i = 0; i < mask.pixels.size(); ++i)
        mask.pixels[i] = view.mask[i] ? 255 : 0;
    write_png(base + ".mask.png", mask);

    write_depth(base + ".depth.bin", w, h, view.depth);

    std::ofstream cam(base + ".cam.json");
    if (!cam) throw IoError("write_view: cannot open " + base + ".cam.json");
    cam << pose_to_json(view.intrinsics, view.pose).dump(2) << "\n";
}

geom::PosedView read_view(const std::string& dir, int view_index) {
    const std::string base = view_base(dir, view_index);
    geom::PosedView view;

    std::ifstream cam(base + ".cam.json");
    if (!cam) throw IoError("read_view: cannot open " + base + ".cam.json");
    json j = json::parse(cam);
    pose_from_json(j, &view.intrinsics, &view.pose);

    const PngImage rgb = read_png(base + ".rgb.png");
    const PngImage mask = read_png(base + ".mask.png");
    int dw = 0, dh = 0;
    view.depth = read_depth(base + ".depth.bin", &dw, &dh);
    if (rgb.channels != 3 || mask.channels != 1 || rgb.width != view.intrinsics.width ||
        rgb.height != view.intrinsics.height || dw != rgb.width || dh != rgb.height ||
        mask.width != rgb.width || mask.height != rgb.height)
        throw IoError("read_view: inconsistent rasters for " + base);

    view.rgb.resize(rgb.pixels.size());
    for (std::size_t i = 0; i < rgb.pixels.size(); ++i)
        view.rgb[i] = static_cast<float>(rgb.pixels[i]) / 255.0f;
    view.mask.resize(mask.pixels.size());
    for (std::size_t i = 0; i < mask.pixels.size(); ++i)
        view.mask[i] = mask.pixels[i] >= 128 ? 1 : 0;
    return view;
}

void write_dataset(const scene::DatasetSpec& spec, const std::string& root) {
    std::error_code ec;
    fs::create_directories(root, ec);
    if (ec) throw IoError("write_dataset: cannot create " + root);

    json manifest;
    manifest["seed"] = spec.seed;
    manifest["image_size"] = spec.image_size;
    manifest["grid_size"] = spec.grid_size;
    manifest["instances_per_category"] = spec.instances_per_category;
    manifest["views_per_instance"] = spec.views_per_instance;
    json cats = json::array();
    for (const auto& c : spec.categories)
        cats.push_back({{"id", c.category_id}, {"template", c.tmpl}});
    manifest["categories"] = cats;

    json views = json::array();
    for (std::size_t ci = 0; ci < spec.categories.size(); ++ci) {
        const int cat_id = spec.categories[ci].category_id;
        for (int inst = 0; inst < spec.instances_per_category; ++inst) {
            const std::string dir =
                root + "/cat" + std::to_string(cat_id) + "/inst" + std::to_string(inst);
            fs::create_directories(dir, ec);
            if (ec) throw IoError("write_dataset: cannot create " + dir);
            for (int v = 0; v < spec.views_per_instance; ++v) {
                const geom::PosedView view =
                    scene::render_dataset_view(spec, static_cast<int>(ci), inst, v);
                write_view(dir, v, view);
                views.push_back({{"category", cat_id},
                                 {"instance", inst},
                                 {"view", v},
                                 {"path", "cat" + std::to_string(cat_id) + "/inst" +
                                              std::to_string(inst) + "/view" +
                                              std::to_string(v)}});
            }
        }
    }
    manifest["views"] = views;

    std::ofstream out(root + "/manifest.json");
    if (!out) throw IoError("write_dataset: cannot open manifest.json");
    out << manifest.dump(2) << "\n";
}

std::vector<const InstanceViews*> LoadedDataset::of_category(int category_id) const {
    std::vector<const InstanceViews*> out;
    for (const auto& inst : instances)
        if (inst.category_id == category_id) out.push_back(&inst);
    return out;
}

LoadedDataset load_dataset(const std::string& root, const std::vector<int>* categories) {
    std::ifstream in(root + "/manifest.json");
    if (!in) throw IoError("load_dataset: cannot open " + root + "/manifest.json");
    const json manifest = json::parse(in);

    LoadedDataset ds;
    ds.image_size = manifest.at("image_size").get<int>();
    ds.grid_size = manifest.at("grid_size").get<int>();
    const int instances = manifest.at("instances_per_category").get<int>();
    const int views = manifest.at("views_per_instance").get<int>();

    for (const auto& c : manifest.at("categories")) {
        const int cat_id = c.at("id").get<int>();
        if (categories &&
            std::find(categories->begin(), categories->end(), cat_id) == categories->end())
            continue;
        ds.category_ids.push_back(cat_id);
        for (int inst = 0; inst < instances; ++inst) {
            InstanceViews iv;
            iv.category_id = cat_id;
            iv.instance = inst;
            const std::string dir =
                root + "/cat" + std::to_string(cat_id) + "/inst" + std::to_string(inst);
            for (int v = 0; v < views; ++v) {
                iv.views.push_back(read_view(dir, v));
                iv.azimuth_deg.push_back(camera_azimuth_deg(iv.views.back().pose));
            }
            ds.instances.push_back(std::move(iv));
        }
    }
    return ds;
}

double camera_azimuth_deg(const geom::Pose& pose) {
    const geom::Vec3 eye = pose.camera_center();
    double az = std::atan2(eye[1], eye[0]) * 180.0 / 3.14159265358979323846;
    if (az < 0) az += 360.0;
    return az;
}

double azimuth_difference_deg(double a, double b) {
    double d = std::abs(a - b);
    d = std::fmod(d, 360.0);
    return d > 180.0 ? 360.0 - d : d;
}

} // namespace dope::io
