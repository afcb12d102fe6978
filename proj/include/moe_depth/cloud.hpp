#pragma once

#include <array>
#include <cstddef>
#include <string>
#include <vector>

#include "moe_depth/grid.hpp"
#include "moe_depth/keyvalue.hpp"
#include "moe_depth/synthscene.hpp"

namespace moe_depth {

using Vec3 = std::array<double, 3>;

struct PointCloud {
    std::vector<Vec3> points;
    std::vector<Vec3> normals;         // empty or congruent with points
    std::vector<std::size_t> pixels;   // source pixel (row-major) per point; empty if unknown
    int grid_height = 0;               // 0 when the cloud has no grid structure
    int grid_width = 0;

    std::size_t size() const noexcept { return points.size(); }
    bool has_normals() const noexcept { return !normals.empty() && normals.size() == points.size(); }
    bool has_grid() const noexcept { return grid_height > 0 && pixels.size() == points.size(); }
};

/// Pinhole: x = (u - cx) d / fx, y = (v - cy) d / fy, z = d for column u, row v.
/// Non-finite or non-positive depths are skipped.
PointCloud unproject(const Grid& depth, const Intrinsics& k);

/// Cross product of central-difference tangents (forward/backward at borders),
/// oriented towards the camera (n_z < 0). Points whose tangents are missing
/// or degenerate take the normal of the nearest valid pixel in image space;
/// if no pixel is valid every normal is (0, 0, -1).
PointCloud estimate_normals(const PointCloud& cloud);

struct NearestResult {
    std::vector<std::size_t> index;
    std::vector<double> distance;
};

/// Exact nearest neighbour of every query in `ref`; ties go to the lowest index.
NearestResult nearest_brute(const std::vector<Vec3>& query, const std::vector<Vec3>& ref);
/// Same result as nearest_brute using a uniform grid of buckets.
NearestResult nearest_bucketed(const std::vector<Vec3>& query, const std::vector<Vec3>& ref);
/// Brute force below 1e5 reference points, buckets above.
NearestResult nearest(const std::vector<Vec3>& query, const std::vector<Vec3>& ref);

struct ReconReport {
    double acc_mean = 0.0;
    double acc_median = 0.0;
    double comp_mean = 0.0;
    double comp_median = 0.0;
    double nc_mean = 0.0;     // mean |cos| between matched normals, pred -> gt
    double nc_median = 0.0;
    bool nc_available = false;
    std::size_t pred_count = 0;
    std::size_t gt_count = 0;
};

ReconReport recon_metrics(const PointCloud& pred, const PointCloud& gt);

struct FlyingResult {
    std::vector<std::uint8_t> mask;  // per point
    std::size_t count = 0;
    std::vector<double> statistic;   // mean distance to the k image-space neighbours
    double median = 0.0;
};

/// A point flies when the mean 3-D distance to its k nearest image-space
/// neighbours exceeds ratio * the median of that statistic over the cloud.
/// Neighbours are the k pixel offsets closest to the point (Euclidean pixel
/// distance, then row-major); offsets that fall outside the grid or on pixels
/// without a point are left out of the mean. A point with none left is flying.
FlyingResult detect_flying_points(const PointCloud& cloud, int k = 8, double ratio = 3.0);

/// Ranks pixels by (confidence, index) ascending and sets the first
/// floor(percentile / 100 * n) of them to NaN. Non-finite depth or confidence
/// pixels are not ranked.
Grid confidence_mask(const Grid& depth, const Grid& confidence, double percentile);

std::string encode_ply(const PointCloud& cloud);
void export_ply(const PointCloud& cloud, const std::string& path);

KeyValues to_key_values(const ReconReport& r);
std::string tsv_header(const ReconReport&);
std::string tsv_row(const ReconReport& r);

}  // namespace moe_depth
