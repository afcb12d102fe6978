#include "moe_depth/cloud.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <deque>
#include <limits>
#include <numeric>

#include "moe_depth/detail/binary_io.hpp"
#include "moe_depth/error.hpp"
#include "moe_depth/evalkit.hpp"
#include "moe_depth/parallel.hpp"

namespace moe_depth {

namespace {

Vec3 sub(const Vec3& a, const Vec3& b) { return {a[0] - b[0], a[1] - b[1], a[2] - b[2]}; }

Vec3 cross(const Vec3& a, const Vec3& b) {
    return {a[1] * b[2] - a[2] * b[1], a[2] * b[0] - a[0] * b[2], a[0] * b[1] - a[1] * b[0]};
}

double dot(const Vec3& a, const Vec3& b) { return a[0] * b[0] + a[1] * b[1] + a[2] * b[2]; }

double dist(const Vec3& a, const Vec3& b) {
    const double dx = a[0] - b[0], dy = a[1] - b[1], dz = a[2] - b[2];
    return std::sqrt(dx * dx + dy * dy + dz * dz);
}

constexpr std::size_t kNone = std::numeric_limits<std::size_t>::max();

// pixel -> point index, kNone where the pixel produced no point
std::vector<std::size_t> pixel_lookup(const PointCloud& cloud) {
    std::vector<std::size_t> lut(static_cast<std::size_t>(cloud.grid_height) * cloud.grid_width, kNone);
    for (std::size_t i = 0; i < cloud.size(); ++i)
        lut[cloud.pixels[i]] = i;
    return lut;
}

}  // namespace

PointCloud unproject(const Grid& depth, const Intrinsics& k) {
    require(k.fx > 0.0 && k.fy > 0.0, "unproject: focal lengths must be positive");
    PointCloud cloud;
    cloud.grid_height = depth.height();
    cloud.grid_width = depth.width();
    for (int v = 0; v < depth.height(); ++v)
        for (int u = 0; u < depth.width(); ++u) {
            const double d = depth.at(v, u);
            if (!std::isfinite(d) || d <= 0.0)
                continue;
            cloud.points.push_back({(u - k.cx) * d / k.fx, (v - k.cy) * d / k.fy, d});
            cloud.pixels.push_back(depth.index(v, u));
        }
    require(!cloud.points.empty(), "unproject: depth has no valid pixel");
    return cloud;
}

PointCloud estimate_normals(const PointCloud& cloud) {
    require(cloud.has_grid(), "estimate_normals: cloud must keep its source pixel grid");
    const int h = cloud.grid_height, w = cloud.grid_width;
    const auto lut = pixel_lookup(cloud);
    auto at = [&](int r, int c) -> std::size_t {
        if (r < 0 || r >= h || c < 0 || c >= w)
            return kNone;
        return lut[static_cast<std::size_t>(r) * w + c];
    };
    // Tangent along one image axis: central where possible, one-sided otherwise.
    auto tangent = [&](int r, int c, int dr, int dc, Vec3& t) {
        const std::size_t self = at(r, c), fwd = at(r + dr, c + dc), back = at(r - dr, c - dc);
        if (fwd != kNone && back != kNone)
            t = sub(cloud.points[fwd], cloud.points[back]);
        else if (fwd != kNone)
            t = sub(cloud.points[fwd], cloud.points[self]);
        else if (back != kNone)
            t = sub(cloud.points[self], cloud.points[back]);
        else
            return false;
        return true;
    };

    const std::size_t n_pix = static_cast<std::size_t>(h) * w;
    std::vector<Vec3> pix_normal(n_pix, Vec3{0.0, 0.0, 0.0});
    std::vector<std::uint8_t> ok(n_pix, 0);
    std::deque<std::size_t> queue;
    for (std::size_t i = 0; i < cloud.size(); ++i) {
        const std::size_t p = cloud.pixels[i];
        const int r = static_cast<int>(p / w), c = static_cast<int>(p % w);
        Vec3 tx, ty;
        if (!tangent(r, c, 0, 1, tx) || !tangent(r, c, 1, 0, ty))
            continue;
        Vec3 n = cross(tx, ty);
        const double len = std::sqrt(dot(n, n));
        if (!(len > 1e-300) || !std::isfinite(len))
            continue;
        const double s = (n[2] > 0.0 ? -1.0 : 1.0) / len;
        pix_normal[p] = {n[0] * s, n[1] * s, n[2] * s};
        ok[p] = 1;
    }
    for (std::size_t p = 0; p < n_pix; ++p)
        if (ok[p])
            queue.push_back(p);

    // Multi-source breadth-first fill over the pixel grid.
    if (queue.empty()) {
        for (auto& n : pix_normal)
            n = {0.0, 0.0, -1.0};
    } else {
        while (!queue.empty()) {
            const std::size_t p = queue.front();
            queue.pop_front();
            const int r = static_cast<int>(p / w), c = static_cast<int>(p % w);
            const int nb[4][2] = {{r - 1, c}, {r, c - 1}, {r, c + 1}, {r + 1, c}};
            for (const auto& q : nb) {
                if (q[0] < 0 || q[0] >= h || q[1] < 0 || q[1] >= w)
                    continue;
                const std::size_t qi = static_cast<std::size_t>(q[0]) * w + q[1];
                if (ok[qi])
                    continue;
                ok[qi] = 1;
                pix_normal[qi] = pix_normal[p];
                queue.push_back(qi);
            }
        }
    }

    PointCloud out = cloud;
    out.normals.resize(cloud.size());
    for (std::size_t i = 0; i < cloud.size(); ++i)
        out.normals[i] = pix_normal[cloud.pixels[i]];
    return out;
}

NearestResult nearest_brute(const std::vector<Vec3>& query, const std::vector<Vec3>& ref) {
    require(!ref.empty(), "nearest: reference set is empty");
    NearestResult res;
    res.index.resize(query.size());
    res.distance.resize(query.size());
    parallel_for(query.size(), [&](std::size_t i) {
        std::size_t best = 0;
        double bd = dist(query[i], ref[0]);
        for (std::size_t j = 1; j < ref.size(); ++j) {
            const double d = dist(query[i], ref[j]);
            if (d < bd) {
                bd = d;
                best = j;
            }
        }
        res.index[i] = best;
        res.distance[i] = bd;
    });
    return res;
}

NearestResult nearest_bucketed(const std::vector<Vec3>& query, const std::vector<Vec3>& ref) {
    require(!ref.empty(), "nearest: reference set is empty");
    Vec3 lo = ref[0], hi = ref[0];
    for (const auto& p : ref)
        for (int a = 0; a < 3; ++a) {
            lo[a] = std::min(lo[a], p[a]);
            hi[a] = std::max(hi[a], p[a]);
        }
    // Roughly two reference points per occupied cell.
    double extent = 0.0;
    for (int a = 0; a < 3; ++a)
        extent = std::max(extent, hi[a] - lo[a]);
    const double target_cells = std::max(1.0, static_cast<double>(ref.size()) / 2.0);
    double cell = extent > 0.0 ? extent / std::cbrt(target_cells) : 1.0;
    if (!(cell > 0.0))
        cell = 1.0;
    std::array<long long, 3> dims{};
    for (int a = 0; a < 3; ++a)
        dims[a] = std::max<long long>(1, static_cast<long long>(std::floor((hi[a] - lo[a]) / cell)) + 1);
    auto cell_of = [&](const Vec3& p, int a) {
        const long long c = static_cast<long long>(std::floor((p[a] - lo[a]) / cell));
        return std::clamp<long long>(c, 0, dims[a] - 1);
    };
    const std::size_t total = static_cast<std::size_t>(dims[0] * dims[1] * dims[2]);
    std::vector<std::size_t> start(total + 1, 0), order(ref.size());
    std::vector<std::size_t> cell_id(ref.size());
    for (std::size_t j = 0; j < ref.size(); ++j) {
        cell_id[j] = static_cast<std::size_t>((cell_of(ref[j], 0) * dims[1] + cell_of(ref[j], 1)) * dims[2] +
                                              cell_of(ref[j], 2));
        ++start[cell_id[j] + 1];
    }
    std::partial_sum(start.begin(), start.end(), start.begin());
    {
        std::vector<std::size_t> fill(start.begin(), start.end() - 1);
        for (std::size_t j = 0; j < ref.size(); ++j)
            order[fill[cell_id[j]]++] = j;  // ascending j inside each cell
    }

    NearestResult res;
    res.index.resize(query.size());
    res.distance.resize(query.size());
    parallel_for(query.size(), [&](std::size_t i) {
        const Vec3& q = query[i];
        long long qc[3];
        for (int a = 0; a < 3; ++a)
            qc[a] = static_cast<long long>(std::floor((q[a] - lo[a]) / cell));
        std::size_t best = kNone;
        double bd = std::numeric_limits<double>::infinity();
        const long long max_ring =
            std::max({dims[0], dims[1], dims[2]}) + std::max({std::llabs(qc[0]), std::llabs(qc[1]), std::llabs(qc[2])});
        for (long long ring = 0; ring <= max_ring; ++ring) {
            // Any point in this ring or beyond lies at least (ring-1)*cell away.
            if (best != kNone && (ring - 1) * cell > bd)
                break;
            for (long long x = qc[0] - ring; x <= qc[0] + ring; ++x) {
                if (x < 0 || x >= dims[0])
                    continue;
                for (long long y = qc[1] - ring; y <= qc[1] + ring; ++y) {
                    if (y < 0 || y >= dims[1])
                        continue;
                    const bool shell_xy = std::llabs(x - qc[0]) == ring || std::llabs(y - qc[1]) == ring;
                    for (long long z = qc[2] - ring; z <= qc[2] + ring; ++z) {
                        if (z < 0 || z >= dims[2])
                            continue;
                        if (!shell_xy && std::llabs(z - qc[2]) != ring)
                            continue;
                        const std::size_t id = static_cast<std::size_t>((x * dims[1] + y) * dims[2] + z);
                        for (std::size_t s = start[id]; s < start[id + 1]; ++s) {
                            const std::size_t j = order[s];
                            const double d = dist(q, ref[j]);
                            if (d < bd || (d == bd && j < best)) {
                                bd = d;
                                best = j;
                            }
                        }
                    }
                }
            }
        }
        res.index[i] = best;
        res.distance[i] = bd;
    });
    return res;
}

NearestResult nearest(const std::vector<Vec3>& query, const std::vector<Vec3>& ref) {
    return ref.size() < 100000 ? nearest_brute(query, ref) : nearest_bucketed(query, ref);
}

ReconReport recon_metrics(const PointCloud& pred, const PointCloud& gt) {
    require(pred.size() > 0 && gt.size() > 0, "recon_metrics: both clouds must be non-empty");
    ReconReport r;
    r.pred_count = pred.size();
    r.gt_count = gt.size();
    const auto acc = nearest(pred.points, gt.points);
    const auto comp = nearest(gt.points, pred.points);
    auto mean = [](const std::vector<double>& v) {
        return std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
    };
    r.acc_mean = mean(acc.distance);
    r.acc_median = median_of(acc.distance);
    r.comp_mean = mean(comp.distance);
    r.comp_median = median_of(comp.distance);
    if (pred.has_normals() && gt.has_normals()) {
        std::vector<double> nc(pred.size());
        for (std::size_t i = 0; i < pred.size(); ++i)
            nc[i] = std::min(1.0, std::abs(dot(pred.normals[i], gt.normals[acc.index[i]])));
        r.nc_mean = mean(nc);
        r.nc_median = median_of(nc);
        r.nc_available = true;
    }
    return r;
}

FlyingResult detect_flying_points(const PointCloud& cloud, int k, double ratio) {
    require(cloud.has_grid(), "detect_flying_points: cloud must keep its source pixel grid");
    require(k >= 1, "detect_flying_points: k must be positive");
    require(cloud.size() > static_cast<std::size_t>(k),
            "detect_flying_points: cloud has too few points for k neighbours");
    const int h = cloud.grid_height, w = cloud.grid_width;
    const auto lut = pixel_lookup(cloud);

    // The k pixel offsets closest to the origin, by Euclidean pixel distance
    // then row-major order. For k = 8 this is the 3x3 ring.
    std::vector<std::array<int, 2>> offsets;
    const int reach = static_cast<int>(std::ceil(std::sqrt(static_cast<double>(k)))) + 1;
    for (int dr = -reach; dr <= reach; ++dr)
        for (int dc = -reach; dc <= reach; ++dc)
            if (dr != 0 || dc != 0)
                offsets.push_back({dr, dc});
    std::stable_sort(offsets.begin(), offsets.end(), [](const auto& a, const auto& b) {
        return a[0] * a[0] + a[1] * a[1] < b[0] * b[0] + b[1] * b[1];
    });
    offsets.resize(static_cast<std::size_t>(k));

    FlyingResult res;
    res.statistic.resize(cloud.size());
    parallel_for(cloud.size(), [&](std::size_t i) {
        const int r0 = static_cast<int>(cloud.pixels[i] / w), c0 = static_cast<int>(cloud.pixels[i] % w);
        int found = 0;
        double sum = 0.0;
        for (const auto& o : offsets) {
            const int r = r0 + o[0], c = c0 + o[1];
            if (r < 0 || r >= h || c < 0 || c >= w)
                continue;
            const std::size_t j = lut[static_cast<std::size_t>(r) * w + c];
            if (j == kNone)
                continue;
            sum += dist(cloud.points[i], cloud.points[j]);
            ++found;
        }
        // A point with no valid neighbour at all is as isolated as it gets.
        res.statistic[i] = found > 0 ? sum / found : std::numeric_limits<double>::infinity();
    });
    {
        std::vector<double> finite;
        finite.reserve(res.statistic.size());
        for (double v : res.statistic)
            if (std::isfinite(v))
                finite.push_back(v);
        res.median = finite.empty() ? 0.0 : median_of(std::move(finite));
    }
    res.mask.assign(cloud.size(), 0);
    for (std::size_t i = 0; i < cloud.size(); ++i)
        if (res.statistic[i] > ratio * res.median) {
            res.mask[i] = 1;
            ++res.count;
        }
    return res;
}

Grid confidence_mask(const Grid& depth, const Grid& confidence, double percentile) {
    require(depth.same_shape(confidence), "confidence_mask: grid shapes differ");
    require(percentile >= 0.0 && percentile < 100.0, "confidence_mask: percentile must be in [0, 100)");
    std::vector<std::size_t> idx;
    for (std::size_t i = 0; i < depth.size(); ++i)
        if (std::isfinite(depth[i]) && std::isfinite(confidence[i]))
            idx.push_back(i);
    const auto n_mask = static_cast<std::size_t>(std::floor(percentile * idx.size() / 100.0 + 1e-9));
    std::stable_sort(idx.begin(), idx.end(),
                     [&](std::size_t a, std::size_t b) { return confidence[a] < confidence[b]; });
    Grid out = depth;
    for (std::size_t i = 0; i < n_mask; ++i)
        out[idx[i]] = std::numeric_limits<double>::quiet_NaN();
    return out;
}

std::string encode_ply(const PointCloud& cloud) {
    const bool normals = cloud.has_normals();
    std::string s = "ply\nformat ascii 1.0\nelement vertex " + std::to_string(cloud.size()) +
                    "\nproperty double x\nproperty double y\nproperty double z\n";
    if (normals)
        s += "property double nx\nproperty double ny\nproperty double nz\n";
    s += "end_header\n";
    char buf[160];
    for (std::size_t i = 0; i < cloud.size(); ++i) {
        const auto& p = cloud.points[i];
        // + 0.0 folds negative zero, which would otherwise print as "-0"
        int n = std::snprintf(buf, sizeof buf, "%.9g %.9g %.9g", p[0] + 0.0, p[1] + 0.0, p[2] + 0.0);
        s.append(buf, n);
        if (normals) {
            const auto& q = cloud.normals[i];
            n = std::snprintf(buf, sizeof buf, " %.9g %.9g %.9g", q[0] + 0.0, q[1] + 0.0, q[2] + 0.0);
            s.append(buf, n);
        }
        s += '\n';
    }
    return s;
}

void export_ply(const PointCloud& cloud, const std::string& path) {
    detail::write_file_text(path, encode_ply(cloud));
}

KeyValues to_key_values(const ReconReport& r) {
    return {{"recon.acc_mean", format_double(r.acc_mean)},
            {"recon.acc_median", format_double(r.acc_median)},
            {"recon.comp_mean", format_double(r.comp_mean)},
            {"recon.comp_median", format_double(r.comp_median)},
            {"recon.nc_available", r.nc_available ? "1" : "0"},
            {"recon.nc_mean", format_double(r.nc_mean)},
            {"recon.nc_median", format_double(r.nc_median)},
            {"recon.pred_count", std::to_string(r.pred_count)},
            {"recon.gt_count", std::to_string(r.gt_count)}};
}

std::string tsv_header(const ReconReport&) { return "acc_mean\tacc_median\tcomp_mean\tcomp_median\tnc_mean\tnc_median"; }

std::string tsv_row(const ReconReport& r) {
    return format_double(r.acc_mean) + "\t" + format_double(r.acc_median) + "\t" + format_double(r.comp_mean) +
           "\t" + format_double(r.comp_median) + "\t" + format_double(r.nc_mean) + "\t" + format_double(r.nc_median);
}

}  // namespace moe_depth
