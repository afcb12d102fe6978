#include "moe_depth/synthscene.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <limits>
#include <random>

#include "moe_depth/detail/binary_io.hpp"
#include "moe_depth/error.hpp"
#include "moe_depth/gridio.hpp"
#include "moe_depth/keyvalue.hpp"
#include "moe_depth/seed.hpp"

namespace fs = std::filesystem;

namespace moe_depth {

bool SceneObject::contains(double row, double col) const {
    if (shape == ShapeKind::Disk) {
        const double dr = row - center_row, dc = col - center_col;
        return dr * dr + dc * dc <= radius * radius;
    }
    return std::abs(row - center_row) <= half_height && std::abs(col - center_col) <= half_width;
}

double SceneObject::depth_at(double row, double col) const {
    return depth0 + slope_x * (col - center_col) + slope_y * (row - center_row);
}

void SceneSpec::validate() const {
    require(height > 0 && width > 0, "SceneSpec: dimensions must be positive");
    require(near_depth > 0.0, "SceneSpec: near depth must be positive");
    require(far_depth > near_depth, "SceneSpec: far depth must exceed near depth");
    require(noise_std >= 0.0, "SceneSpec: noise_std must be nonnegative");
    require(disc_floor > 0.0, "SceneSpec: discontinuity floor must be positive");
    require(num_objects <= 64, "SceneSpec: at most 64 objects");
    require(max_retries >= 1, "SceneSpec: max_retries must be positive");
}

MaskGrid jump_edges(const Grid& depth, double floor) {
    const int h = depth.height(), w = depth.width();
    MaskGrid out(h, w);
    constexpr int dr[4] = {-1, 1, 0, 0};
    constexpr int dc[4] = {0, 0, -1, 1};
    for (int r = 0; r < h; ++r)
        for (int c = 0; c < w; ++c)
            for (int n = 0; n < 4; ++n) {
                const int rr = r + dr[n], cc = c + dc[n];
                if (rr < 0 || rr >= h || cc < 0 || cc >= w)
                    continue;
                if (depth.at(rr, cc) - depth.at(r, c) >= floor) {
                    out.set(r, c, true);
                    break;
                }
            }
    return out;
}

namespace {

struct Canvas {
    Grid depth;
    LabelGrid labels;
};

// Checks every 4-neighbour pair: across labels the jump must reach the floor,
// within a label it must stay below it.
bool consistent(const Canvas& cv, double floor) {
    const int h = cv.depth.height(), w = cv.depth.width();
    for (int r = 0; r < h; ++r) {
        for (int c = 0; c < w; ++c) {
            const double d = cv.depth.at(r, c);
            const int l = cv.labels.at(r, c);
            const int nbr[2][2] = {{r + 1, c}, {r, c + 1}};
            for (const auto& q : nbr) {
                if (q[0] >= h || q[1] >= w)
                    continue;
                const double jump = std::abs(cv.depth.at(q[0], q[1]) - d);
                const bool same = cv.labels.at(q[0], q[1]) == l;
                if (same ? jump >= floor : jump < floor)
                    return false;
            }
        }
    }
    return true;
}

bool paint(Canvas& cv, const SceneObject& obj, int label, double near_limit) {
    const int h = cv.depth.height(), w = cv.depth.width();
    int covered = 0;
    for (int r = 0; r < h; ++r)
        for (int c = 0; c < w; ++c)
            if (obj.contains(r, c)) {
                const double d = obj.depth_at(r, c);
                if (!(d >= near_limit) || !(d < cv.depth.at(r, c)))
                    return false;
                cv.depth.at(r, c) = d;
                cv.labels.data[cv.depth.index(r, c)] = label;
                ++covered;
            }
    return covered > 0;
}

SceneObject random_object(const SceneSpec& spec, const Canvas& cv, std::mt19937_64& rng) {
    std::uniform_real_distribution<double> u01(0.0, 1.0);
    const double h = spec.height, w = spec.width, m = std::min(h, w);
    const double range = spec.far_depth - spec.near_depth;
    SceneObject obj;
    obj.shape = u01(rng) < 0.5 ? ShapeKind::Disk : ShapeKind::Rectangle;
    obj.center_row = (0.1 + 0.8 * u01(rng)) * (h - 1);
    obj.center_col = (0.1 + 0.8 * u01(rng)) * (w - 1);
    obj.radius = (0.08 + 0.17 * u01(rng)) * m;
    obj.half_height = (0.08 + 0.22 * u01(rng)) * h;
    obj.half_width = (0.08 + 0.22 * u01(rng)) * w;
    const double max_slope = 0.1 * spec.disc_floor;
    obj.slope_x = max_slope * (2.0 * u01(rng) - 1.0);
    obj.slope_y = max_slope * (2.0 * u01(rng) - 1.0);
    const double gap = std::max(2.0 * spec.disc_floor, (0.12 + 0.18 * u01(rng)) * range);

    // Shift the plane so that it clears everything beneath it by `gap`.
    obj.depth0 = 0.0;
    double shift = std::numeric_limits<double>::infinity();
    for (int r = 0; r < spec.height; ++r)
        for (int c = 0; c < spec.width; ++c)
            if (obj.contains(r, c))
                shift = std::min(shift, cv.depth.at(r, c) - gap - obj.depth_at(r, c));
    obj.depth0 = std::isfinite(shift) ? shift : -1.0;
    return obj;
}

}  // namespace

Scene generate(const SceneSpec& spec) {
    spec.validate();
    const int h = spec.height, w = spec.width;
    const double range = spec.far_depth - spec.near_depth;
    std::mt19937_64 rng(derive_seed(spec.seed, "scene-geometry"));
    std::uniform_real_distribution<double> u01(0.0, 1.0);

    // Background: base + a1 u + a2 v + a3 u^2 + a4 uv + a5 v^2 with per-pixel
    // change kept below 0.4 of the floor.
    const double min_dim = std::max(1, std::min(h, w) - 1);
    const double bound = std::min(spec.background_coeff * range, 0.05 * spec.disc_floor * min_dim);
    const double base = spec.near_depth + (0.65 + 0.2 * u01(rng)) * range;
    double a[5];
    for (double& ai : a)
        ai = bound * (2.0 * u01(rng) - 1.0);

    Canvas cv{Grid(h, w), LabelGrid{h, w, std::vector<int>(static_cast<std::size_t>(h) * w, 0)}};
    for (int r = 0; r < h; ++r) {
        const double v = h > 1 ? -1.0 + 2.0 * r / (h - 1) : 0.0;
        for (int c = 0; c < w; ++c) {
            const double u = w > 1 ? -1.0 + 2.0 * c / (w - 1) : 0.0;
            const double d = base + a[0] * u + a[1] * v + a[2] * u * u + a[3] * u * v + a[4] * v * v;
            cv.depth.at(r, c) = std::clamp(d, spec.near_depth, spec.far_depth);
        }
    }
    if (!consistent(cv, spec.disc_floor))
        throw GenerationError("background is not smooth at the requested discontinuity floor");

    const double near_limit = spec.near_depth + 0.02 * range;
    int placed = 0;
    if (!spec.objects.empty()) {
        for (const auto& obj : spec.objects) {
            Canvas trial = cv;
            if (!paint(trial, obj, placed + 1, spec.near_depth) || !consistent(trial, spec.disc_floor))
                throw GenerationError("explicit object " + std::to_string(placed) +
                                      " is not strictly in front of the surface beneath it");
            cv = std::move(trial);
            ++placed;
        }
    } else {
        const int n = spec.num_objects >= 0 ? spec.num_objects : std::uniform_int_distribution<int>(1, 5)(rng);
        for (int i = 0; i < n; ++i) {
            bool ok = false;
            for (int attempt = 0; attempt < spec.max_retries && !ok; ++attempt) {
                const SceneObject obj = random_object(spec, cv, rng);
                Canvas trial = cv;
                if (paint(trial, obj, placed + 1, near_limit) && consistent(trial, spec.disc_floor)) {
                    cv = std::move(trial);
                    ok = true;
                }
            }
            if (!ok)
                throw GenerationError("could not place object " + std::to_string(i) + " after " +
                                      std::to_string(spec.max_retries) + " attempts (seed " +
                                      std::to_string(spec.seed) + ")");
            ++placed;
        }
    }

    Scene scene;
    scene.spec = spec;
    scene.seed = spec.seed;
    scene.num_objects = placed;
    scene.gt_depth = cv.depth;
    scene.labels = cv.labels;

    // Near side of a silhouette: a differently labelled 4-neighbour lies behind.
    scene.gt_edges = MaskGrid(h, w);
    constexpr int dr[4] = {-1, 1, 0, 0};
    constexpr int dc[4] = {0, 0, -1, 1};
    for (int r = 0; r < h; ++r)
        for (int c = 0; c < w; ++c)
            for (int n = 0; n < 4; ++n) {
                const int rr = r + dr[n], cc = c + dc[n];
                if (rr < 0 || rr >= h || cc < 0 || cc >= w)
                    continue;
                if (cv.labels.at(rr, cc) != cv.labels.at(r, c) && cv.depth.at(rr, cc) > cv.depth.at(r, c)) {
                    scene.gt_edges.set(r, c, true);
                    break;
                }
            }

    scene.input = GridStack(kSceneInputChannels, h, w);
    std::mt19937_64 noise_rng(derive_seed(spec.seed, "scene-noise"));
    std::normal_distribution<double> noise(0.0, 1.0);
    for (int r = 0; r < h; ++r) {
        for (int c = 0; c < w; ++c) {
            const std::size_t p = cv.depth.index(r, c);
            const double eps = spec.noise_std > 0.0 ? spec.noise_std * noise(noise_rng) : 0.0;
            scene.input.at(0, p) = (cv.depth[p] - spec.near_depth) / range + eps;
            scene.input.at(1, p) = w > 1 ? -1.0 + 2.0 * c / (w - 1) : 0.0;
            scene.input.at(2, p) = h > 1 ? -1.0 + 2.0 * r / (h - 1) : 0.0;
        }
    }
    scene.intrinsics = Intrinsics{0.6 * w, 0.6 * w, 0.5 * (w - 1), 0.5 * (h - 1)};
    return scene;
}

std::vector<Scene> make_dataset(const SceneSpec& templ, int count, std::uint64_t seed) {
    require(count >= 1, "make_dataset: count must be at least 1");
    std::vector<Scene> out;
    out.reserve(count);
    for (int i = 0; i < count; ++i) {
        SceneSpec spec = templ;
        spec.seed = derive_seed(seed, "scene", static_cast<std::uint64_t>(i));
        out.push_back(generate(spec));
    }
    return out;
}

std::vector<Scene> train_split(const std::vector<Scene>& scenes) {
    std::vector<Scene> out;
    for (std::size_t i = 0; i < scenes.size(); ++i)
        if (!is_test_index(i))
            out.push_back(scenes[i]);
    return out;
}

std::vector<Scene> test_split(const std::vector<Scene>& scenes) {
    std::vector<Scene> out;
    for (std::size_t i = 0; i < scenes.size(); ++i)
        if (is_test_index(i))
            out.push_back(scenes[i]);
    return out;
}

std::string scene_dir_name(std::size_t index) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "scene_%04zu", index);
    return buf;
}

namespace {

void ensure_dir(const std::string& dir) {
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec)
        throw IoError(dir, ec.message());
}

KeyValues spec_echo(const SceneSpec& s) {
    return {{"height", std::to_string(s.height)},
            {"width", std::to_string(s.width)},
            {"num_objects_spec", std::to_string(s.num_objects)},
            {"near", format_double(s.near_depth)},
            {"far", format_double(s.far_depth)},
            {"noise_std", format_double(s.noise_std)},
            {"disc_floor", format_double(s.disc_floor)},
            {"background_coeff", format_double(s.background_coeff)},
            {"max_retries", std::to_string(s.max_retries)}};
}

SceneSpec spec_from(const std::map<std::string, std::string>& m, const std::string& origin) {
    SceneSpec s;
    s.height = static_cast<int>(parse_int(lookup(m, "height", origin), "height"));
    s.width = static_cast<int>(parse_int(lookup(m, "width", origin), "width"));
    s.num_objects = static_cast<int>(parse_int(lookup(m, "num_objects_spec", origin), "num_objects_spec"));
    s.near_depth = parse_double(lookup(m, "near", origin), "near");
    s.far_depth = parse_double(lookup(m, "far", origin), "far");
    s.noise_std = parse_double(lookup(m, "noise_std", origin), "noise_std");
    s.disc_floor = parse_double(lookup(m, "disc_floor", origin), "disc_floor");
    s.background_coeff = parse_double(lookup(m, "background_coeff", origin), "background_coeff");
    s.max_retries = static_cast<int>(parse_int(lookup(m, "max_retries", origin), "max_retries"));
    return s;
}

}  // namespace

void save_scene(const Scene& scene, const std::string& dir) {
    ensure_dir(dir);
    for (int c = 0; c < scene.input.channels(); ++c)
        write_grid(scene.input.grid(c), (fs::path(dir) / ("input_" + std::to_string(c) + ".mdg")).string());
    write_grid(scene.gt_depth, (fs::path(dir) / "gt_depth.mdg").string());
    write_grid(mask_to_grid(scene.gt_edges), (fs::path(dir) / "gt_edges.mdg").string());
    Grid labels(scene.labels.height, scene.labels.width);
    for (std::size_t i = 0; i < scene.labels.data.size(); ++i)
        labels[i] = scene.labels.data[i];
    write_grid(labels, (fs::path(dir) / "labels.mdg").string());

    KeyValues kv = {{"seed", std::to_string(scene.seed)},
                    {"channels", std::to_string(scene.input.channels())},
                    {"num_objects", std::to_string(scene.num_objects)},
                    {"fx", format_double(scene.intrinsics.fx)},
                    {"fy", format_double(scene.intrinsics.fy)},
                    {"cx", format_double(scene.intrinsics.cx)},
                    {"cy", format_double(scene.intrinsics.cy)}};
    for (auto& e : spec_echo(scene.spec))
        kv.push_back(e);
    detail::write_file_text((fs::path(dir) / "scene.meta").string(), format_key_values(kv));
}

Scene load_scene(const std::string& dir) {
    const std::string meta_path = (fs::path(dir) / "scene.meta").string();
    const auto m = to_map(parse_key_values(detail::read_file_text(meta_path), meta_path));
    Scene s;
    s.spec = spec_from(m, meta_path);
    s.seed = std::stoull(lookup(m, "seed", meta_path));
    s.spec.seed = s.seed;
    s.num_objects = static_cast<int>(parse_int(lookup(m, "num_objects", meta_path), "num_objects"));
    s.intrinsics = Intrinsics{parse_double(lookup(m, "fx", meta_path), "fx"),
                              parse_double(lookup(m, "fy", meta_path), "fy"),
                              parse_double(lookup(m, "cx", meta_path), "cx"),
                              parse_double(lookup(m, "cy", meta_path), "cy")};
    const int channels = static_cast<int>(parse_int(lookup(m, "channels", meta_path), "channels"));
    std::vector<Grid> inputs;
    for (int c = 0; c < channels; ++c)
        inputs.push_back(read_grid((fs::path(dir) / ("input_" + std::to_string(c) + ".mdg")).string()));
    s.input = GridStack(inputs);
    s.gt_depth = read_grid((fs::path(dir) / "gt_depth.mdg").string());
    s.gt_edges = grid_to_mask(read_grid((fs::path(dir) / "gt_edges.mdg").string()));
    const Grid labels = read_grid((fs::path(dir) / "labels.mdg").string());
    s.labels = LabelGrid{labels.height(), labels.width(), std::vector<int>(labels.size())};
    for (std::size_t i = 0; i < labels.size(); ++i)
        s.labels.data[i] = static_cast<int>(labels[i]);
    if (!s.input.same_plane(s.gt_depth) || !s.gt_edges.same_shape(s.gt_depth))
        throw FormatError(dir + ": scene grids have inconsistent dimensions");
    return s;
}

void save_dataset(const std::vector<Scene>& scenes, const SceneSpec& templ, std::uint64_t seed,
                  const std::string& dir) {
    ensure_dir(dir);
    KeyValues kv = {{"count", std::to_string(scenes.size())}, {"seed", std::to_string(seed)}};
    for (auto& e : spec_echo(templ))
        kv.push_back(e);
    for (std::size_t i = 0; i < scenes.size(); ++i) {
        save_scene(scenes[i], (fs::path(dir) / scene_dir_name(i)).string());
        kv.emplace_back(scene_dir_name(i), is_test_index(i) ? "test" : "train");
    }
    detail::write_file_text((fs::path(dir) / "manifest.txt").string(), format_key_values(kv));
}

DatasetIndex read_manifest(const std::string& dir) {
    const std::string path = (fs::path(dir) / "manifest.txt").string();
    const auto kv = parse_key_values(detail::read_file_text(path), path);
    DatasetIndex idx;
    for (const auto& [k, v] : kv) {
        if (k.rfind("scene_", 0) != 0)
            continue;
        if (v != "train" && v != "test")
            throw FormatError(path + ": scene split must be train or test, got '" + v + "'");
        idx.scene_dirs.push_back((fs::path(dir) / k).string());
        idx.is_test.push_back(v == "test");
    }
    if (idx.scene_dirs.empty())
        throw FormatError(path + ": dataset lists no scenes");
    return idx;
}

std::vector<Scene> load_dataset(const std::string& dir) {
    const auto idx = read_manifest(dir);
    std::vector<Scene> out;
    for (const auto& d : idx.scene_dirs)
        out.push_back(load_scene(d));
    return out;
}

}  // namespace moe_depth
