#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "moe_depth/grid.hpp"

namespace moe_depth {

struct Intrinsics {
    double fx = 1.0;
    double fy = 1.0;
    double cx = 0.0;
    double cy = 0.0;
};

enum class ShapeKind { Rectangle, Disk };

/// An occluder. Depth is planar in pixel units: depth0 + slope_x*(col-cx) + slope_y*(row-cy).
struct SceneObject {
    ShapeKind shape = ShapeKind::Disk;
    double center_row = 0.0;
    double center_col = 0.0;
    double radius = 0.0;       // disk
    double half_height = 0.0;  // rectangle
    double half_width = 0.0;   // rectangle
    double depth0 = 0.0;
    double slope_x = 0.0;
    double slope_y = 0.0;

    bool contains(double row, double col) const;
    double depth_at(double row, double col) const;
};

struct SceneSpec {
    int height = 64;
    int width = 64;
    int num_objects = -1;            // < 0: uniform in [1, 5]
    double near_depth = 1.0;
    double far_depth = 10.0;
    double noise_std = 0.05;         // input noise, as a fraction of the depth range
    double disc_floor = 0.25;        // metres; smaller jumps count as smooth
    double background_coeff = 0.03;  // polynomial coefficient bound, fraction of range
    int max_retries = 200;
    std::uint64_t seed = 0;
    /// When non-empty, these objects are placed verbatim (nearest last) and
    /// num_objects is ignored.
    std::vector<SceneObject> objects;

    void validate() const;
};

struct Scene {
    GridStack input;   // [noisy normalized depth, x in [-1,1], y in [-1,1]]
    Grid gt_depth;     // metres
    MaskGrid gt_edges; // near side of every silhouette
    LabelGrid labels;  // 0 = background, i = object i
    Intrinsics intrinsics;
    std::uint64_t seed = 0;
    int num_objects = 0;
    SceneSpec spec;
};

inline constexpr int kSceneInputChannels = 3;

/// Deterministic in spec.seed. Background is a bounded quadratic in normalized
/// coordinates; every object sits at least the discontinuity floor in front of
/// whatever it covers. Edge pixels are the pixels on the near side of a
/// silhouette, derived from the object labels.
Scene generate(const SceneSpec& spec);

/// Pixels p with a 4-neighbour q such that depth(q) - depth(p) >= floor.
MaskGrid jump_edges(const Grid& depth, double floor);

/// Scene i uses seed derive_seed(seed, "scene", i).
std::vector<Scene> make_dataset(const SceneSpec& templ, int count, std::uint64_t seed);

/// Split rule: even indices train, odd indices test.
inline bool is_test_index(std::size_t index) { return index % 2 == 1; }

std::vector<Scene> train_split(const std::vector<Scene>& scenes);
std::vector<Scene> test_split(const std::vector<Scene>& scenes);

/// Directory of MDG1 grids (input_<c>.mdg, gt_depth.mdg, gt_edges.mdg) plus scene.meta.
void save_scene(const Scene& scene, const std::string& dir);
Scene load_scene(const std::string& dir);

/// Writes scene_<NNNN>/ subdirectories and manifest.txt.
void save_dataset(const std::vector<Scene>& scenes, const SceneSpec& templ, std::uint64_t seed,
                  const std::string& dir);

struct DatasetIndex {
    std::vector<std::string> scene_dirs;  // absolute or dir-relative paths, manifest order
    std::vector<bool> is_test;
};
DatasetIndex read_manifest(const std::string& dir);
std::vector<Scene> load_dataset(const std::string& dir);

std::string scene_dir_name(std::size_t index);

}  // namespace moe_depth
