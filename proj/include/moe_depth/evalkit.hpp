#pragma once

#include <cstddef>
#include <string>

#include "moe_depth/grid.hpp"
#include "moe_depth/keyvalue.hpp"

namespace moe_depth {

struct EdgeConfig {
    double threshold = 50.0;
    bool scale_to_255 = true;  // map valid [min, max] to [0, 255] before filtering
};

struct BoundaryReport {
    double miou = 0.0;
    double precision = 0.0;
    double recall = 0.0;
    double f1 = 0.0;
    std::size_t pred_count = 0;
    std::size_t gt_count = 0;
    std::size_t intersection = 0;
    std::size_t union_count = 0;
};

struct DepthReport {
    double abs_rel = 0.0;
    double delta1 = 0.0;
    double delta2 = 0.0;
    double delta3 = 0.0;
    double scale = 1.0;
    std::size_t valid_count = 0;
};

/// 3x3 Sobel magnitude sqrt(Gx^2 + Gy^2) with replicated borders.
/// NaN pixels stay NaN; a neighbourhood touching NaN yields NaN.
Grid sobel_magnitude(const Grid& depth, const EdgeConfig& cfg = {});

/// magnitude > threshold; NaN is never an edge.
MaskGrid extract_edges(const Grid& depth, const EdgeConfig& cfg = {});

/// Set-based edge agreement. Conventions:
///   both empty            -> all four metrics 1
///   |pred| = 0, |gt| > 0  -> P = 0 (and R = 0)
///   |gt| = 0, |pred| > 0  -> R = 0 (and P = 0)
///   P + R = 0             -> F1 = 0
BoundaryReport boundary_metrics(const MaskGrid& pred_edges, const MaskGrid& gt_edges);

/// Valid = finite pred, finite gt, gt > 0. With median_scaling, pred is
/// multiplied by median(gt)/median(pred) (mean of the two middle values for
/// even counts). A ratio test against a non-positive prediction fails.
DepthReport depth_metrics(const Grid& pred, const Grid& gt, bool median_scaling);

/// Median of the finite values; even counts average the two middle values.
double median_of(std::vector<double> values);

KeyValues to_key_values(const BoundaryReport& r);
KeyValues to_key_values(const DepthReport& r);
std::string tsv_header(const BoundaryReport&);
std::string tsv_row(const BoundaryReport& r);
std::string tsv_header(const DepthReport&);
std::string tsv_row(const DepthReport& r);

}  // namespace moe_depth
