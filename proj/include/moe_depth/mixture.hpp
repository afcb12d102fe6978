#pragma once

#include <optional>

#include "moe_depth/grid.hpp"

namespace moe_depth {

/// Per-pixel routing distribution over K experts.
///
/// `weights` is always populated. `logits` is empty (zero channels) for gates
/// built directly from weights, e.g. hard one-hot assignments.
struct GateField {
    GridStack logits;
    double temperature = 1.0;
    GridStack weights;

    int num_experts() const noexcept { return weights.channels(); }
    bool has_logits() const noexcept { return logits.channels() == weights.channels(); }
};

struct MixtureOutput {
    GridStack expert_depths;
    GateField gate;
    Grid fused_depth;
};

struct LossConfig {
    double sigma = 1.0;
    double lambda_d = 1.0;
    double lambda_e = 1e-4;
    std::optional<MaskGrid> valid_mask;
};

struct NllResult {
    double loss = 0.0;
    GridStack grad_mu;
    GridStack grad_logits;
    std::size_t valid_count = 0;
};

struct EntropyResult {
    double loss = 0.0;
    GridStack grad_logits;
};

struct TotalLossResult {
    double loss = 0.0;
    double nll = 0.0;
    double entropy = 0.0;  // unweighted mean gate entropy
    GridStack grad_mu;
    GridStack grad_logits;
};

struct HardLimitResult {
    double nll = 0.0;
    double scaled_sq_err = 0.0;
};

/// w_k = exp((G_k - max_j G_j) / tau) / sum_k' exp((G_k' - max_j G_j) / tau)
GateField gate_softmax(const GridStack& logits, double temperature);

/// One-hot gate from per-pixel expert indices.
GateField hard_gate(const LabelGrid& assignment, int num_experts);

/// Index of the maximal weight per pixel; ties go to the lowest index.
LabelGrid gate_argmax(const GateField& gate);

Grid combine(const GridStack& expert_depths, const GateField& gate, bool hard);

/// Natural-log weights, computed from logits when available.
GridStack log_weights(const GateField& gate);

/// Per-pixel Shannon entropy -sum_k w log w with 0 log 0 = 0.
Grid gate_entropy_map(const GateField& gate);

/// Mean over valid pixels of -log sum_k w_k N(d*; mu_k, sigma^2).
/// Valid = finite ground truth and, if present, cfg.valid_mask set.
NllResult mixture_nll(const MixtureOutput& output, const Grid& gt_depth, const LossConfig& cfg);

EntropyResult gating_entropy(const GateField& gate, const std::optional<MaskGrid>& valid_mask = std::nullopt);

/// lambda_d * NLL + lambda_e * entropy.
TotalLossResult total_loss(const MixtureOutput& output, const Grid& gt_depth, const LossConfig& cfg);

/// Under one-hot gating the mixture NLL collapses to a scaled squared error
/// of the selected expert: NLL = MSE / (2 sigma^2) + 0.5 log(2 pi sigma^2).
HardLimitResult hard_limit_check(const MixtureOutput& output, const Grid& gt_depth, double sigma);

/// Assemble a MixtureOutput (soft fused depth) from expert maps and a gate.
MixtureOutput make_mixture_output(GridStack expert_depths, GateField gate);

}  // namespace moe_depth
