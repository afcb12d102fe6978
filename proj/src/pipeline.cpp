#include "moe_depth/pipeline.hpp"

#include <algorithm>

#include "moe_depth/error.hpp"
#include "moe_depth/keyvalue.hpp"
#include "moe_depth/mixture.hpp"

namespace moe_depth {

Prediction predict_scene(const Checkpoint& ckpt, const Scene& scene) {
    const ForwardTrace trace = forward(ckpt.config, ckpt.params, scene.input, ckpt.temperature);
    const MixtureOutput& out = trace.output;
    Prediction p;
    p.depth = combine(out.expert_depths, out.gate, true);
    p.gate = out.gate;
    p.confidence = Grid(p.depth.height(), p.depth.width());
    for (std::size_t i = 0; i < p.confidence.size(); ++i) {
        double m = 0.0;
        for (int k = 0; k < out.gate.num_experts(); ++k)
            m = std::max(m, out.gate.weights.at(k, i));
        p.confidence[i] = m;
    }
    return p;
}

Prediction oracle_prediction(const Scene& scene) {
    Prediction p;
    p.depth = scene.gt_depth;
    const int h = scene.gt_depth.height(), w = scene.gt_depth.width();
    p.gate.weights = GridStack(1, h, w, 1.0);
    p.confidence = Grid(h, w, 1.0);
    return p;
}

SceneEvaluation evaluate_scene(const Prediction& pred, const Scene& scene, const EvalOptions& opt) {
    SceneEvaluation e;
    e.boundary = boundary_metrics(extract_edges(pred.depth, opt.edges), extract_edges(scene.gt_depth, opt.edges));
    e.depth = depth_metrics(pred.depth, scene.gt_depth, opt.median_scaling);
    const PointCloud pc = estimate_normals(unproject(pred.depth, scene.intrinsics));
    const PointCloud gc = estimate_normals(unproject(scene.gt_depth, scene.intrinsics));
    e.recon = recon_metrics(pc, gc);
    e.flying = detect_flying_points(pc, opt.flying_k, opt.flying_ratio).count;
    const Grid masked = confidence_mask(pred.depth, pred.confidence, opt.confidence_percentile);
    e.flying_masked = detect_flying_points(unproject(masked, scene.intrinsics), opt.flying_k, opt.flying_ratio).count;
    return e;
}

std::string format_scene_record(const std::string& scene_name, const SceneEvaluation& e) {
    KeyValues kv = {{"scene", scene_name}};
    for (const auto& part : {to_key_values(e.boundary), to_key_values(e.depth), to_key_values(e.recon)})
        kv.insert(kv.end(), part.begin(), part.end());
    kv.emplace_back("flying.count", std::to_string(e.flying));
    kv.emplace_back("flying.count_masked", std::to_string(e.flying_masked));
    return format_key_values(kv);
}

const std::vector<std::string>& summary_columns() {
    static const std::vector<std::string> cols = {
        "scene",     "miou",        "precision", "recall",      "f1",      "abs_rel",  "delta1",
        "delta2",    "delta3",      "acc_mean",  "acc_median",  "comp_mean", "comp_median", "nc_mean",
        "nc_median", "flying",      "flying_masked"};
    return cols;
}

namespace {

std::vector<double> columns_of(const SceneEvaluation& e) {
    return {e.boundary.miou,       e.boundary.precision, e.boundary.recall,     e.boundary.f1,
            e.depth.abs_rel,       e.depth.delta1,       e.depth.delta2,        e.depth.delta3,
            e.recon.acc_mean,      e.recon.acc_median,   e.recon.comp_mean,     e.recon.comp_median,
            e.recon.nc_mean,       e.recon.nc_median,    static_cast<double>(e.flying),
            static_cast<double>(e.flying_masked)};
}

std::string join_row(const std::string& name, const std::vector<double>& values) {
    std::string row = name;
    for (double v : values)
        row += "\t" + format_double(v);
    return row + "\n";
}

}  // namespace

std::string summary_row(const std::string& name, const SceneEvaluation& e) { return join_row(name, columns_of(e)); }

std::string summary_mean_row(const std::vector<SceneEvaluation>& all) {
    require(!all.empty(), "summary_mean_row: no evaluations");
    std::vector<double> sum(columns_of(all.front()).size(), 0.0);
    for (const auto& e : all) {
        const auto c = columns_of(e);
        for (std::size_t i = 0; i < c.size(); ++i)
            sum[i] += c[i];
    }
    for (double& v : sum)
        v /= static_cast<double>(all.size());
    return join_row("mean", sum);
}

}  // namespace moe_depth
