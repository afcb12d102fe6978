#include "moe_depth/evalkit.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <vector>

#include "moe_depth/error.hpp"

namespace moe_depth {

Grid sobel_magnitude(const Grid& depth, const EdgeConfig& cfg) {
    const int h = depth.height(), w = depth.width();
    double lo = std::numeric_limits<double>::infinity(), hi = -lo;
    for (double v : depth.values())
        if (std::isfinite(v)) {
            lo = std::min(lo, v);
            hi = std::max(hi, v);
        }
    require(std::isfinite(lo), "sobel_magnitude: grid has no finite pixel");

    Grid src = depth;
    if (cfg.scale_to_255) {
        const double span = hi - lo;
        for (double& v : src.values())
            if (std::isfinite(v))
                v = span > 0.0 ? 255.0 * (v - lo) / span : 0.0;
    }

    Grid out(h, w);
    auto px = [&](int r, int c) {
        r = std::clamp(r, 0, h - 1);
        c = std::clamp(c, 0, w - 1);
        return src.at(r, c);
    };
    for (int r = 0; r < h; ++r) {
        for (int c = 0; c < w; ++c) {
            if (!std::isfinite(src.at(r, c))) {
                out.at(r, c) = std::numeric_limits<double>::quiet_NaN();
                continue;
            }
            const double gx = (px(r - 1, c + 1) + 2.0 * px(r, c + 1) + px(r + 1, c + 1)) -
                              (px(r - 1, c - 1) + 2.0 * px(r, c - 1) + px(r + 1, c - 1));
            const double gy = (px(r + 1, c - 1) + 2.0 * px(r + 1, c) + px(r + 1, c + 1)) -
                              (px(r - 1, c - 1) + 2.0 * px(r - 1, c) + px(r - 1, c + 1));
            out.at(r, c) = std::sqrt(gx * gx + gy * gy);
        }
    }
    return out;
}

MaskGrid extract_edges(const Grid& depth, const EdgeConfig& cfg) {
    require(cfg.threshold > 0.0, "extract_edges: threshold must be positive");
    const Grid mag = sobel_magnitude(depth, cfg);
    MaskGrid out(depth.height(), depth.width());
    for (std::size_t i = 0; i < mag.size(); ++i)
        out.set(i, mag[i] > cfg.threshold);  // NaN compares false
    return out;
}

BoundaryReport boundary_metrics(const MaskGrid& pred, const MaskGrid& gt) {
    require(pred.same_shape(gt), "boundary_metrics: mask shapes differ");
    BoundaryReport r;
    for (std::size_t i = 0; i < pred.size(); ++i) {
        const bool p = pred[i], g = gt[i];
        r.pred_count += p;
        r.gt_count += g;
        r.intersection += p && g;
        r.union_count += p || g;
    }
    if (r.union_count == 0) {
        r.miou = r.precision = r.recall = r.f1 = 1.0;
        return r;
    }
    const double inter = static_cast<double>(r.intersection);
    r.miou = inter / static_cast<double>(r.union_count);
    r.precision = r.pred_count > 0 ? inter / static_cast<double>(r.pred_count) : 0.0;
    r.recall = r.gt_count > 0 ? inter / static_cast<double>(r.gt_count) : 0.0;
    const double s = r.precision + r.recall;
    r.f1 = s > 0.0 ? 2.0 * r.precision * r.recall / s : 0.0;
    return r;
}

double median_of(std::vector<double> v) {
    std::erase_if(v, [](double x) { return !std::isfinite(x); });
    require(!v.empty(), "median: no finite values");
    const std::size_t n = v.size(), mid = n / 2;
    std::nth_element(v.begin(), v.begin() + mid, v.end());
    const double upper = v[mid];
    if (n % 2 == 1)
        return upper;
    const double lower = *std::max_element(v.begin(), v.begin() + mid);
    return 0.5 * (lower + upper);
}

DepthReport depth_metrics(const Grid& pred, const Grid& gt, bool median_scaling) {
    require(pred.same_shape(gt), "depth_metrics: grid shapes differ");
    std::vector<std::size_t> valid;
    for (std::size_t i = 0; i < gt.size(); ++i)
        if (std::isfinite(gt[i]) && gt[i] > 0.0 && std::isfinite(pred[i]))
            valid.push_back(i);
    require(!valid.empty(), "depth_metrics: no valid pixel with positive ground truth");

    DepthReport r;
    r.valid_count = valid.size();
    if (median_scaling) {
        std::vector<double> pv, gv;
        pv.reserve(valid.size());
        gv.reserve(valid.size());
        for (auto i : valid) {
            pv.push_back(pred[i]);
            gv.push_back(gt[i]);
        }
        const double mp = median_of(std::move(pv));
        require(mp > 0.0, "depth_metrics: median of prediction must be positive for median scaling");
        r.scale = median_of(std::move(gv)) / mp;
    }
    const double t1 = 1.25, t2 = t1 * t1, t3 = t2 * t1;
    double abs_rel = 0.0;
    std::size_t d1 = 0, d2 = 0, d3 = 0;
    for (auto i : valid) {
        const double p = r.scale * pred[i], g = gt[i];
        abs_rel += std::abs(p - g) / g;
        if (p > 0.0) {
            const double ratio = std::max(p / g, g / p);
            d1 += ratio < t1;
            d2 += ratio < t2;
            d3 += ratio < t3;
        }
    }
    const double n = static_cast<double>(valid.size());
    r.abs_rel = abs_rel / n;
    r.delta1 = d1 / n;
    r.delta2 = d2 / n;
    r.delta3 = d3 / n;
    return r;
}

KeyValues to_key_values(const BoundaryReport& r) {
    return {{"boundary.miou", format_double(r.miou)},
            {"boundary.precision", format_double(r.precision)},
            {"boundary.recall", format_double(r.recall)},
            {"boundary.f1", format_double(r.f1)},
            {"boundary.pred_count", std::to_string(r.pred_count)},
            {"boundary.gt_count", std::to_string(r.gt_count)},
            {"boundary.intersection", std::to_string(r.intersection)},
            {"boundary.union", std::to_string(r.union_count)}};
}

KeyValues to_key_values(const DepthReport& r) {
    return {{"depth.abs_rel", format_double(r.abs_rel)},
            {"depth.delta1", format_double(r.delta1)},
            {"depth.delta2", format_double(r.delta2)},
            {"depth.delta3", format_double(r.delta3)},
            {"depth.scale", format_double(r.scale)},
            {"depth.valid_count", std::to_string(r.valid_count)}};
}

std::string tsv_header(const BoundaryReport&) { return "miou\tprecision\trecall\tf1"; }

std::string tsv_row(const BoundaryReport& r) {
    return format_double(r.miou) + "\t" + format_double(r.precision) + "\t" + format_double(r.recall) + "\t" +
           format_double(r.f1);
}

std::string tsv_header(const DepthReport&) { return "abs_rel\tdelta1\tdelta2\tdelta3"; }

std::string tsv_row(const DepthReport& r) {
    return format_double(r.abs_rel) + "\t" + format_double(r.delta1) + "\t" + format_double(r.delta2) + "\t" +
           format_double(r.delta3);
}

}  // namespace moe_depth
