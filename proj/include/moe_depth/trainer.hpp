#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "moe_depth/mixture.hpp"
#include "moe_depth/network.hpp"
#include "moe_depth/synthscene.hpp"

namespace moe_depth {

struct OptimConfig {
    double lr = 1e-3;  // 1e-5 is the fine-tuning value; from-scratch runs need more
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double weight_decay = 0.05;
};

struct OptimState {
    OptimConfig cfg;
    std::vector<double> m;
    std::vector<double> v;
    std::int64_t t = 0;

    OptimState() = default;
    OptimState(std::size_t n, const OptimConfig& c) : cfg(c), m(n, 0.0), v(n, 0.0) {}
};

/// AdamW with decoupled decay (p *= 1 - lr*wd where decay_mask is set), bias
/// corrected moments, then zeroed gradients. Frozen segments are left alone.
/// Throws TrainingError naming the segment of the first non-finite gradient.
void opt_step(ParamStore& params, OptimState& state);

struct TrainConfig {
    int steps = 2000;
    std::uint64_t seed = 0;  // dataset order
    double tau0 = 1.0;
    double tau_decay = 0.995;
    double tau_floor = 0.1;
    OptimConfig optim;
    LossConfig loss;
    bool freeze_encoder = false;
};

struct StepRecord {
    int step = 0;
    double total = 0.0;
    double nll = 0.0;
    double entropy = 0.0;            // weighted term lambda_e * H
    double tau = 0.0;                // temperature used by this step's forward pass
    double mean_gate_entropy = 0.0;  // unweighted H
};

struct TrainResult {
    Checkpoint checkpoint;  // temperature = value after the last decay tick
    std::vector<StepRecord> log;
};

/// One scene per step, visiting a fresh seeded permutation each epoch.
/// No augmentation, no clipping. A non-finite loss aborts with the step and tau.
TrainResult train(const NetConfig& net, const TrainConfig& cfg, const std::vector<Scene>& data);

/// "step\ttotal\tnll\tentropy\ttau\tmean_gate_entropy" rows, 17 significant digits.
std::string format_log(const std::vector<StepRecord>& log);

struct GateStats {
    double loss = 0.0;                // mean total loss over the scenes
    double nll = 0.0;
    double mean_entropy = 0.0;        // mean per-pixel gate entropy over all pixels
    double effective_experts = 0.0;   // exp(mean_entropy)
    double frac_le2 = 0.0;            // fraction of pixels with exp(H_p) <= 2
    std::size_t pixels = 0;
};

/// Forward at the checkpoint temperature over `scenes`.
GateStats gate_stats(const Checkpoint& ckpt, const LossConfig& loss, const std::vector<Scene>& scenes);

struct AblationRow {
    double lambda = 0.0;
    GateStats heldout;
    GateField gate;  // gate of the first held-out scene
    Checkpoint checkpoint;
};

inline const std::vector<double> kDefaultLambdas = {1e-2, 1e-3, 1e-4, 0.0};

/// One training run per lambda with identical seeds and data.
std::vector<AblationRow> ablate_entropy(const NetConfig& net, const TrainConfig& base,
                                        const std::vector<Scene>& train_set, const std::vector<Scene>& heldout,
                                        const std::vector<double>& lambdas = kDefaultLambdas);

/// "lambda\tfinal_loss\tmean_gate_entropy\teffective_experts\tfrac_le2" table.
std::string format_ablation(const std::vector<AblationRow>& rows);

/// Network prediction for one input at the checkpoint temperature.
MixtureOutput predict(const Checkpoint& ckpt, const GridStack& input);

}  // namespace moe_depth
