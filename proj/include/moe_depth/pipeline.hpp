#pragma once

#include <string>
#include <vector>

#include "moe_depth/cloud.hpp"
#include "moe_depth/evalkit.hpp"
#include "moe_depth/network.hpp"
#include "moe_depth/synthscene.hpp"

namespace moe_depth {

struct EvalOptions {
    EdgeConfig edges;
    bool median_scaling = true;
    int flying_k = 8;
    double flying_ratio = 3.0;
    double confidence_percentile = 1.0;
};

/// Inference output used by eval and render: hard-argmax depth, the soft
/// gate at the checkpoint temperature and the per-pixel confidence
/// (maximum soft gate weight).
struct Prediction {
    Grid depth;
    GateField gate;
    Grid confidence;
};

Prediction predict_scene(const Checkpoint& ckpt, const Scene& scene);

/// Ground truth posing as a prediction; confidence is 1 everywhere.
Prediction oracle_prediction(const Scene& scene);

struct SceneEvaluation {
    BoundaryReport boundary;
    DepthReport depth;
    ReconReport recon;
    std::size_t flying = 0;
    std::size_t flying_masked = 0;
};

/// Edges come from the same Sobel rule on prediction and ground truth.
SceneEvaluation evaluate_scene(const Prediction& pred, const Scene& scene, const EvalOptions& opt);

/// Per-scene `key=value` record.
std::string format_scene_record(const std::string& scene_name, const SceneEvaluation& e);

/// Tab-separated row: name, then the columns listed by summary_columns().
std::string summary_row(const std::string& name, const SceneEvaluation& e);
std::string summary_mean_row(const std::vector<SceneEvaluation>& all);
const std::vector<std::string>& summary_columns();

}  // namespace moe_depth
