#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <set>

#include <json.hpp>

#include "dope/dataset_io.hpp"
#include "dope/png_io.hpp"
#include "dope/rng.hpp"
#include "dope/scenegen.hpp"

using namespace dope;
using namespace dope::scene;

namespace {

std::string scratch_dir(const char* name) {
    const auto dir = std::filesystem::temp_directory_path() / "dope_scenegen_tests" / name;
    std::filesystem::remove_all(dir);
    std::filesystem::create_directories(dir);
    return dir.string();
}

std::vector<std::uint8_t> file_bytes(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    REQUIRE(f.good());
    return std::vector<std::uint8_t>(std::istreambuf_iterator<char>(f), {});
}

DatasetSpec tiny_spec(int categories, int instances, int views, std::uint64_t seed) {
    DatasetSpec spec = default_dataset_spec(seed);
    spec.categories.resize(categories);
    spec.instances_per_category = instances;
    spec.views_per_instance = views;
    return spec;
}

} // namespace

TEST_CASE("make_instance: deterministic, distinct across seeds, inside the unit ball") {
    for (const auto& name : template_names()) {
        CategorySpec spec;
        spec.tmpl = name;
        const Mesh a = make_instance(spec, 123);
        const Mesh b = make_instance(spec, 123);
        REQUIRE(a.vertices.size() == b.vertices.size());
        for (std::size_t i = 0; i < a.vertices.size(); ++i) CHECK(a.vertices[i] == b.vertices[i]);
        double max_norm = 0;
        for (const auto& v : a.vertices) max_norm = std::max(max_norm, geom::norm(v));
        CHECK(max_norm <= 1.0);
    }

    CategorySpec spec;
    spec.tmpl = "table";
    std::set<std::size_t> hashes;
    for (int s = 0; s < 100; ++s) {
        const Mesh m = make_instance(spec, s);
        std::size_t h = 1469598103934665603ull;
        for (const auto& v : m.vertices)
            for (double d : v) {
                std::uint64_t bits;
                std::memcpy(&bits, &d, 8);
                h = (h ^ bits) * 1099511628211ull;
            }
        hashes.insert(h);
    }
    CHECK(hashes.size() >= 95);

    CategorySpec bad;
    bad.tmpl = "dodecahedron";
    CHECK_THROWS_AS(make_instance(bad, 0), UnknownTemplate);
}

TEST_CASE("sample_camera: look-at geometry and orthonormality") {
    CameraRanges fixed;
    fixed.azimuth_lo_deg = fixed.azimuth_hi_deg = 0;
    fixed.elevation_lo_deg = fixed.elevation_hi_deg = 0;
    fixed.distance_lo = fixed.distance_hi = 3;
    auto [k, pose] = sample_camera(fixed, 64, 64, 64, 9);
    const geom::Vec3 eye = pose.camera_center();
    CHECK(eye[0] == doctest::Approx(3.0));
    CHECK(eye[1] == doctest::Approx(0.0).epsilon(1e-9));
    CHECK(eye[2] == doctest::Approx(0.0).epsilon(1e-9));
    // forward (third row of R) points from the camera toward the origin
    CHECK(pose.rotation[6] == doctest::Approx(-1.0));
    CHECK(pose.rotation[7] == doctest::Approx(0.0).epsilon(1e-9));
    CHECK(pose.rotation[8] == doctest::Approx(0.0).epsilon(1e-9));

    CameraRanges ranges;
    for (int i = 0; i < 1000; ++i) {
        auto [ki, pi] = sample_camera(ranges, 64, 64, 64, 5000 + i);
        CHECK(pi.orthonormality_residual() < 1e-9);
        geom::PosedView v;
        v.intrinsics = ki;
        v.pose = pi;
        const geom::Projection origin = geom::project(v, {0, 0, 0});
        CHECK(std::abs(origin.u - ki.cx) < 1.0);
        CHECK(std::abs(origin.v - ki.cy) < 1.0);
    }

    CameraRanges bad;
    bad.elevation_hi_deg = 95;
    CHECK_THROWS_AS(sample_camera(bad, 64, 64, 64, 0), InvalidRange);
}

TEST_CASE("render: fronto-parallel quad has exact depth") {
    Mesh quad;
    quad.vertices = {{-0.5, -0.5, 2.0}, {0.5, -0.5, 2.0}, {0.5, 0.5, 2.0}, {-0.5, 0.5, 2.0}};
    quad.triangles = {{0, 1, 2}, {0, 2, 3}};
    quad.face_colors = {{1, 0, 0}, {1, 0, 0}};

    geom::Intrinsics k{64, 64, 32, 32, 64, 64};
    const PosedView v = render(quad, k, {}, {}, {0, 0, -1});
    int covered = 0;
    for (std::size_t i = 0; i < v.mask.size(); ++i) {
        if (!v.mask[i]) continue;
        CHECK(v.depth[i] == 2.0f);
        ++covered;
    }
    CHECK(covered > 200);
}

TEST_CASE("render: sphere silhouette area matches the projected disc") {
    Mesh sphere;
    add_sphere(sphere, {0, 0, 0}, 1.0, 24, 32, {1, 1, 1});
    geom::Pose pose; // identity rotation, camera 8 units down the -z axis
    pose.translation = {0, 0, 8};
    geom::Intrinsics k{128, 128, 64, 64, 128, 128};
    const PosedView v = render(sphere, k, pose, {}, {0, 0, -1});
    std::size_t count = 0;
    for (const auto m : v.mask) count += m;
    const double expected = 3.14159265358979323846 * (128.0 / 8.0) * (128.0 / 8.0);
    CHECK(std::abs(static_cast<double>(count) - expected) / expected < 0.05);
}

TEST_CASE("render: empty mesh yields an all-background view") {
    Mesh empty;
    geom::Intrinsics k{32, 32, 16, 16, 32, 32};
    Background bg;
    bg.kind = Background::Kind::Checker;
    const PosedView v = render(empty, k, {}, bg, {0, 0, -1});
    for (const auto m : v.mask) CHECK(m == 0);
    for (const auto d : v.depth) CHECK(d == 0.0f);
}

TEST_CASE("render: dataset views validate and satisfy mask=>depth") {
    const DatasetSpec spec = tiny_spec(3, 1, 2, 11);
    for (int c = 0; c < 3; ++c) {
        const PosedView v = render_dataset_view(spec, c, 0, 0);
        v.validate(); // checks mask => finite positive depth internally
    }
}

TEST_CASE("png: random image round trip") {
    const std::string dir = scratch_dir("png");
    Rng rng(3);
    io::PngImage img;
    img.width = 33;
    img.height = 17;
    img.channels = 3;
    img.pixels.resize(33 * 17 * 3);
    for (auto& p : img.pixels) p = static_cast<std::uint8_t>(rng.uniform_u32(256));
    io::write_png(dir + "/x.png", img);
    const io::PngImage back = io::read_png(dir + "/x.png");
    CHECK(back.width == img.width);
    CHECK(back.height == img.height);
    CHECK(back.channels == img.channels);
    CHECK(back.pixels == img.pixels);
}

TEST_CASE("generate_dataset: manifest counts, determinism, round trip") {
    const DatasetSpec spec = tiny_spec(2, 3, 4, 21);
    const std::string dir_a = scratch_dir("gen_a");
    const std::string dir_b = scratch_dir("gen_b");
    generate_dataset(spec, dir_a);
    generate_dataset(spec, dir_b);

    std::ifstream mf(dir_a + "/manifest.json");
    REQUIRE(mf.good());
    const auto manifest = nlohmann::json::parse(mf);
    CHECK(manifest.at("views").size() == 2 * 3 * 4);

    // byte-identical regeneration
    CHECK(file_bytes(dir_a + "/cat1/inst2/view3.depth.bin") ==
          file_bytes(dir_b + "/cat1/inst2/view3.depth.bin"));
    CHECK(file_bytes(dir_a + "/cat0/inst0/view0.rgb.png") ==
          file_bytes(dir_b + "/cat0/inst0/view0.rgb.png"));

    // loaded views match the in-memory renders
    const io::LoadedDataset ds = io::load_dataset(dir_a);
    CHECK(ds.image_size == spec.image_size);
    CHECK(ds.instances.size() == 2 * 3);
    const PosedView mem = render_dataset_view(spec, 1, 2, 3);
    const geom::PosedView* loaded = nullptr;
    for (const auto& inst : ds.instances)
        if (inst.category_id == 1 && inst.instance == 2) loaded = &inst.views[3];
    REQUIRE(loaded != nullptr);
    CHECK(loaded->depth == mem.depth);
    CHECK(loaded->mask == mem.mask);
    for (std::size_t i = 0; i < mem.rgb.size(); ++i)
        CHECK(std::abs(loaded->rgb[i] - mem.rgb[i]) <= 1.0f / 255.0f);
    CHECK(loaded->pose.rotation == mem.pose.rotation);
    CHECK(loaded->intrinsics.fx == mem.intrinsics.fx);
}

TEST_CASE("default dataset: nearby views always share correspondences") {
    // Every view pair within 60 degrees of azimuth must yield at least one
    // accepted correspondence at n=32, or training pairs could come up empty.
    const DatasetSpec spec = default_dataset_spec(17);
    for (std::size_t cat = 0; cat < spec.categories.size(); cat += 3) {
        std::vector<geom::PosedView> views;
        std::vector<double> az;
        for (int v = 0; v < 6; ++v) {
            views.push_back(render_dataset_view(spec, static_cast<int>(cat), 0, v));
            az.push_back(io::camera_azimuth_deg(views.back().pose));
        }
        for (std::size_t i = 0; i < views.size(); ++i) {
            for (std::size_t j = 0; j < views.size(); ++j) {
                if (i == j || io::azimuth_difference_deg(az[i], az[j]) > 60) continue;
                const auto set = geom::find_correspondences(views[i], views[j], 32, 0.02,
                                                            900 + i * 13 + j, {16, 16});
                CHECK(set.pairs.size() >= 1);
            }
        }
    }
}

TEST_CASE("dataset spec validation") {
    DatasetSpec spec = tiny_spec(2, 2, 2, 0);
    spec.views_per_instance = 1;
    CHECK_THROWS_AS(spec.validate(), InvalidRange);
    spec = tiny_spec(2, 2, 2, 0);
    spec.image_size = 60;
    CHECK_THROWS_AS(spec.validate(), NonIntegerStride);
    spec = tiny_spec(2, 2, 2, 0);
    spec.categories[1].tmpl = spec.categories[0].tmpl;
    CHECK_THROWS_AS(spec.validate(), InvalidRange);
}
