#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <numbers>
#include <set>

#include "moe_depth/seed.hpp"
#include "moe_depth/synthscene.hpp"
#include "oracle.hpp"

using namespace moe_depth;

namespace {

SceneSpec disk_spec(double radius, std::uint64_t seed = 4) {
    SceneSpec s;
    s.seed = seed;
    SceneObject d;
    d.shape = ShapeKind::Disk;
    d.center_row = 31.5;
    d.center_col = 31.5;
    d.radius = radius;
    d.depth0 = 2.0;
    s.objects = {d};
    return s;
}

// Pixels inside the disk with at least one in-grid 4-neighbour outside it.
int disk_rim_pixels(double cr, double cc, double radius, int h, int w) {
    auto inside = [&](int r, int c) { return (r - cr) * (r - cr) + (c - cc) * (c - cc) <= radius * radius; };
    int n = 0;
    for (int r = 0; r < h; ++r)
        for (int c = 0; c < w; ++c) {
            if (!inside(r, c))
                continue;
            const int dr[4] = {-1, 1, 0, 0}, dc[4] = {0, 0, -1, 1};
            bool rim = false;
            for (int i = 0; i < 4; ++i) {
                const int rr = r + dr[i], cc2 = c + dc[i];
                if (rr >= 0 && rr < h && cc2 >= 0 && cc2 < w && !inside(rr, cc2))
                    rim = true;
            }
            n += rim;
        }
    return n;
}

}  // namespace

TEST_CASE("no objects means no edges") {
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
        SceneSpec s;
        s.num_objects = 0;
        s.seed = seed;
        const Scene sc = generate(s);
        CHECK(sc.gt_edges.count() == 0);
        CHECK(sc.num_objects == 0);
        for (int l : sc.labels.data)
            CHECK(l == 0);
    }
}

TEST_CASE("disk silhouettes") {
    // Rim counts for a disk centred between pixels of a 64x64 grid.
    const std::pair<double, int> frozen[] = {{6.0, 32}, {8.0, 44}, {10.0, 56}};
    for (const auto& [radius, expected] : frozen) {
        CHECK(disk_rim_pixels(31.5, 31.5, radius, 64, 64) == expected);
        for (std::uint64_t seed : {1, 2, 3}) {
            const Scene sc = generate(disk_spec(radius, seed));
            CHECK(static_cast<int>(sc.gt_edges.count()) == expected);
            CHECK(std::abs(static_cast<double>(sc.gt_edges.count()) - 2 * std::numbers::pi * radius) <= 8.0);
        }
    }
}

TEST_CASE("disk pixels carry the object depth and label") {
    const Scene sc = generate(disk_spec(8.0));
    for (int r = 0; r < 64; ++r)
        for (int c = 0; c < 64; ++c) {
            const bool in = (r - 31.5) * (r - 31.5) + (c - 31.5) * (c - 31.5) <= 64.0;
            CHECK(sc.labels.at(r, c) == (in ? 1 : 0));
            if (in)
                CHECK(sc.gt_depth.at(r, c) == 2.0);
            else
                CHECK(sc.gt_depth.at(r, c) > 2.0 + sc.spec.disc_floor);
        }
}

TEST_CASE("explicit objects behind the surface are rejected") {
    SceneSpec s = disk_spec(5.0);
    s.objects[0].depth0 = 50.0;
    CHECK_THROWS_AS(generate(s), GenerationError);
}

TEST_CASE("generation is deterministic in the seed") {
    SceneSpec s;
    s.seed = 1234;
    const Scene a = generate(s), b = generate(s);
    CHECK(a.gt_depth == b.gt_depth);
    CHECK(a.input == b.input);
    CHECK(a.gt_edges == b.gt_edges);
    CHECK(a.labels == b.labels);
    s.seed = 1235;
    CHECK_FALSE(generate(s).gt_depth == a.gt_depth);
}

TEST_CASE("random scenes are self-consistent") {
    SceneSpec templ;
    templ.height = 48;
    templ.width = 40;
    const auto scenes = make_dataset(templ, 40, 9);
    for (const Scene& sc : scenes) {
        const SceneSpec& s = sc.spec;
        const double range = s.far_depth - s.near_depth;
        CHECK(sc.gt_depth.all_finite());
        CHECK(sc.input.channels() == kSceneInputChannels);
        CHECK(sc.num_objects >= 1);
        CHECK(sc.num_objects <= 5);
        for (double d : sc.gt_depth.values()) {
            CHECK(d >= s.near_depth);
            CHECK(d <= s.far_depth);
        }
        // Every label boundary is a jump of at least the floor, and the edge
        // mask is exactly the near side of those jumps.
        for (int r = 0; r < sc.gt_depth.height(); ++r)
            for (int c = 0; c < sc.gt_depth.width(); ++c) {
                if (c + 1 < sc.gt_depth.width() && sc.labels.at(r, c) != sc.labels.at(r, c + 1))
                    CHECK(std::abs(sc.gt_depth.at(r, c) - sc.gt_depth.at(r, c + 1)) >= s.disc_floor);
                if (r + 1 < sc.gt_depth.height() && sc.labels.at(r, c) != sc.labels.at(r + 1, c))
                    CHECK(std::abs(sc.gt_depth.at(r, c) - sc.gt_depth.at(r + 1, c)) >= s.disc_floor);
            }
        CHECK(sc.gt_edges == jump_edges(sc.gt_depth, s.disc_floor));
        // Channel 0 is normalized depth plus noise; x and y span [-1, 1].
        double resid = 0.0;
        for (std::size_t p = 0; p < sc.gt_depth.size(); ++p)
            resid += std::abs(sc.input.at(0, p) - (sc.gt_depth[p] - s.near_depth) / range);
        CHECK(resid / static_cast<double>(sc.gt_depth.size()) < 3 * s.noise_std);
        CHECK(sc.input.at(1, 0) == -1.0);
        CHECK(sc.input.at(1, sc.gt_depth.width() - 1) == 1.0);
        CHECK(sc.input.at(2, 0) == -1.0);
        CHECK(sc.input.at(2, sc.gt_depth.size() - 1) == 1.0);
    }
}

TEST_CASE("noise-free input is the normalized depth") {
    SceneSpec s;
    s.noise_std = 0.0;
    s.seed = 8;
    const Scene sc = generate(s);
    for (std::size_t p = 0; p < sc.gt_depth.size(); ++p)
        CHECK(sc.input.at(0, p) == doctest::Approx((sc.gt_depth[p] - 1.0) / 9.0).epsilon(1e-15));
    CHECK(sc.intrinsics.fx == doctest::Approx(0.6 * 64));
    CHECK(sc.intrinsics.cx == 31.5);
    CHECK(sc.intrinsics.cy == 31.5);
}

TEST_CASE("jump edges") {
    Grid g(1, 4, 5.0);
    g[2] = 4.0;  // one metre nearer than both neighbours
    const MaskGrid e = jump_edges(g, 0.5);
    CHECK(e.count() == 1);
    CHECK(e[2]);
    CHECK(jump_edges(g, 1.5).count() == 0);
}

TEST_CASE("invalid specs") {
    SceneSpec s;
    s.far_depth = 0.5;
    CHECK_THROWS_AS(generate(s), ContractError);
    s = SceneSpec{};
    s.height = 0;
    CHECK_THROWS_AS(generate(s), ContractError);
    s = SceneSpec{};
    s.noise_std = -1.0;
    CHECK_THROWS_AS(generate(s), ContractError);
}

TEST_CASE("dataset seeds and split") {
    SceneSpec templ;
    templ.height = 16;
    templ.width = 16;
    const auto scenes = make_dataset(templ, 100, 1);
    REQUIRE(scenes.size() == 100);
    std::set<std::uint64_t> seeds;
    for (std::size_t i = 0; i < scenes.size(); ++i) {
        CHECK(scenes[i].seed == derive_seed(1, "scene", i));
        seeds.insert(scenes[i].seed);
    }
    CHECK(seeds.size() == 100);
    const auto tr = train_split(scenes), te = test_split(scenes);
    CHECK(tr.size() == 50);
    CHECK(te.size() == 50);
    CHECK(tr[1].seed == scenes[2].seed);
    CHECK(te[0].seed == scenes[1].seed);
}

TEST_CASE("dataset save and load") {
    const auto dir = oracle::scratch_dir("synthscene_io");
    SceneSpec templ;
    templ.height = 20;
    templ.width = 24;
    const auto scenes = make_dataset(templ, 5, 42);
    save_dataset(scenes, templ, 42, dir);
    CHECK(std::filesystem::exists(dir + "/manifest.txt"));
    CHECK(std::filesystem::exists(dir + "/" + scene_dir_name(3) + "/gt_depth.mdg"));
    CHECK(scene_dir_name(3) == "scene_0003");

    const auto idx = read_manifest(dir);
    REQUIRE(idx.scene_dirs.size() == 5);
    CHECK(idx.is_test == std::vector<bool>{false, true, false, true, false});

    const auto back = load_dataset(dir);
    REQUIRE(back.size() == scenes.size());
    for (std::size_t i = 0; i < scenes.size(); ++i) {
        CHECK(back[i].gt_depth == scenes[i].gt_depth);
        CHECK(back[i].input == scenes[i].input);
        CHECK(back[i].gt_edges == scenes[i].gt_edges);
        CHECK(back[i].labels == scenes[i].labels);
        CHECK(back[i].seed == scenes[i].seed);
        CHECK(back[i].num_objects == scenes[i].num_objects);
        CHECK(back[i].intrinsics.fx == scenes[i].intrinsics.fx);
        CHECK(back[i].intrinsics.cy == scenes[i].intrinsics.cy);
        CHECK(back[i].spec.disc_floor == scenes[i].spec.disc_floor);
    }
    CHECK_THROWS_AS(load_dataset(dir + "/nowhere"), IoError);
}
