#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "dope/geometry.hpp"

namespace dope::scene {

using geom::Intrinsics;
using geom::Pose;
using geom::PosedView;
using geom::Vec3;
using geom::operator+;
using geom::operator-;
using geom::operator*;

/// Triangle mesh with flat per-face colors.
struct Mesh {
    std::vector<Vec3> vertices;
    std::vector<std::array<int, 3>> triangles;
    std::vector<std::array<float, 3>> face_colors;

    void validate() const;
};

// Primitive builders. All append outward-facing triangles.
void add_box(Mesh& m, const Vec3& center, const Vec3& half, const std::array<float, 3>& color);
/// Box with each face split into subdiv x subdiv quads (distinct facets give
/// flat-shaded surfaces local structure).
void add_box_grid(Mesh& m, const Vec3& center, const Vec3& half,
                  const std::array<float, 3>& color, int subdiv);
void add_sphere(Mesh& m, const Vec3& center, double radius, int rings, int segments,
                const std::array<float, 3>& color);
/// Cylinder along the given axis (0=x, 1=y, 2=z), with caps.
void add_cylinder(Mesh& m, const Vec3& center, double radius, double half_len, int segments,
                  int axis, const std::array<float, 3>& color);
/// Cone along +z with the base at center.z.
void add_cone(Mesh& m, const Vec3& base_center, double radius, double height, int segments,
              const std::array<float, 3>& color);
/// Triangular prism: ridge along y at x=0, base z = center.z - half z extent.
void add_wedge(Mesh& m, const Vec3& center, double half_x, double half_y, double half_z,
               const std::array<float, 3>& color);

/// Parameter ranges a template draws from.
struct ParamRanges {
    double prop_lo = 0.85, prop_hi = 1.18; // per-part proportion multipliers
    double sat_lo = 0.45, sat_hi = 1.0;    // HSV saturation of part colors
    double val_lo = 0.55, val_hi = 1.0;    // HSV value of part colors

    void validate() const;
};

/// One toy object category: a shape program plus its parameter ranges.
struct CategorySpec {
    int category_id = 0;
    std::string tmpl; // one of template_names()
    ParamRanges ranges;
};

const std::vector<std::string>& template_names();

/// Deterministic procedural instance for (spec, seed). The result is centered
/// and scaled to fit the unit ball.
Mesh make_instance(const CategorySpec& spec, std::uint64_t seed);

struct CameraRanges {
    double azimuth_lo_deg = 0, azimuth_hi_deg = 360;
    double elevation_lo_deg = 15, elevation_hi_deg = 55; // within [0, 90)
    double distance_lo = 2.5, distance_hi = 3.1;

    void validate() const;
};

/// Seeded look-at camera targeting the origin from spherical coordinates
/// drawn uniformly from the ranges. Principal point at the image center.
std::pair<Intrinsics, Pose> sample_camera(const CameraRanges& ranges, int width, int height,
                                          double focal, std::uint64_t seed);

struct Background {
    enum class Kind { Solid, Checker };
    Kind kind = Kind::Solid;
    std::array<float, 3> color_a{0.5f, 0.5f, 0.5f};
    std::array<float, 3> color_b{0.3f, 0.3f, 0.3f};
    int checker_px = 8;
};

/// Z-buffer rasterization with flat Lambertian shading
/// (max(0, n·l) * 0.8 + 0.2 ambient). Background pixels take the background
/// pattern and depth 0.
PosedView render(const Mesh& mesh, const Intrinsics& intrinsics, const Pose& pose,
                 const Background& background, const Vec3& light_dir);

enum class BackgroundMode { Solid, Checker, Mixed };

struct DatasetSpec {
    std::vector<CategorySpec> categories;
    int instances_per_category = 12;
    int views_per_instance = 12;
    int image_size = 64;
    int grid_size = 16;
    double focal = 76.0;
    CameraRanges camera;
    BackgroundMode background = BackgroundMode::Mixed;
    std::uint64_t seed = 0;

    void validate() const;
};

/// The stock 12-category toy dataset used throughout.
DatasetSpec default_dataset_spec(std::uint64_t seed = 0);

/// Renders one view of a dataset instance. Exposed so callers can reproduce
/// any dataset view in memory without touching disk.
PosedView render_dataset_view(const DatasetSpec& spec, int category_index, int instance,
                              int view);

/// Writes the full dataset tree (manifest.json plus per-view rgb.png,
/// depth.bin, mask.png, cam.json) under out_path. Deterministic per seed.
void generate_dataset(const DatasetSpec& spec, const std::string& out_path);

} // namespace dope::scene
