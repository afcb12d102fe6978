#include "moe_depth/mixture.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <vector>

#include "moe_depth/error.hpp"

namespace moe_depth {

namespace {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();

bool pixel_valid(const Grid& gt, const std::optional<MaskGrid>& mask, std::size_t p) {
    return std::isfinite(gt[p]) && (!mask || (*mask)[p]);
}

void check_mask(const std::optional<MaskGrid>& mask, int h, int w) {
    if (mask)
        require(mask->height() == h && mask->width() == w, "valid_mask dimensions do not match");
}

}  // namespace

GateField gate_softmax(const GridStack& logits, double temperature) {
    require(temperature > 0.0, "gate_softmax: temperature must be positive");
    const int k_count = logits.channels();
    GateField gate{logits, temperature, GridStack(k_count, logits.height(), logits.width())};
    const std::size_t n = logits.plane_size();
    std::vector<double> e(k_count);
    for (std::size_t p = 0; p < n; ++p) {
        double mx = logits.at(0, p);
        for (int k = 1; k < k_count; ++k)
            mx = std::max(mx, logits.at(k, p));
        require(std::isfinite(mx), "gate_softmax: logits must be finite");
        double sum = 0.0;
        for (int k = 0; k < k_count; ++k) {
            e[k] = std::exp((logits.at(k, p) - mx) / temperature);
            sum += e[k];
        }
        for (int k = 0; k < k_count; ++k)
            gate.weights.at(k, p) = e[k] / sum;
    }
    return gate;
}

GateField hard_gate(const LabelGrid& assignment, int num_experts) {
    GateField gate;
    gate.weights = GridStack(num_experts, assignment.height, assignment.width);
    for (std::size_t p = 0; p < assignment.data.size(); ++p) {
        const int k = assignment.data[p];
        require(k >= 0 && k < num_experts, "hard_gate: expert index out of range");
        gate.weights.at(k, p) = 1.0;
    }
    return gate;
}

LabelGrid gate_argmax(const GateField& gate) {
    const auto& w = gate.weights;
    LabelGrid out{w.height(), w.width(), std::vector<int>(w.plane_size(), 0)};
    for (std::size_t p = 0; p < w.plane_size(); ++p) {
        int best = 0;
        for (int k = 1; k < w.channels(); ++k)
            if (w.at(k, p) > w.at(best, p))
                best = k;
        out.data[p] = best;
    }
    return out;
}

Grid combine(const GridStack& expert_depths, const GateField& gate, bool hard) {
    const auto& w = gate.weights;
    require(expert_depths.same_shape(w), "combine: expert depths and gate shapes differ");
    Grid out(w.height(), w.width());
    if (hard) {
        const LabelGrid idx = gate_argmax(gate);
        for (std::size_t p = 0; p < out.size(); ++p)
            out[p] = expert_depths.at(idx.data[p], p);
        return out;
    }
    for (std::size_t p = 0; p < out.size(); ++p) {
        double acc = 0.0;
        for (int k = 0; k < w.channels(); ++k)
            acc += w.at(k, p) * expert_depths.at(k, p);
        out[p] = acc;
    }
    return out;
}

GridStack log_weights(const GateField& gate) {
    const auto& w = gate.weights;
    GridStack out(w.channels(), w.height(), w.width());
    if (gate.has_logits()) {
        const auto& g = gate.logits;
        for (std::size_t p = 0; p < w.plane_size(); ++p) {
            double mx = g.at(0, p);
            for (int k = 1; k < w.channels(); ++k)
                mx = std::max(mx, g.at(k, p));
            double sum = 0.0;
            for (int k = 0; k < w.channels(); ++k)
                sum += std::exp((g.at(k, p) - mx) / gate.temperature);
            const double lse = std::log(sum);
            for (int k = 0; k < w.channels(); ++k)
                out.at(k, p) = (g.at(k, p) - mx) / gate.temperature - lse;
        }
    } else {
        for (std::size_t i = 0; i < w.values().size(); ++i)
            out.values()[i] = w.values()[i] > 0.0 ? std::log(w.values()[i]) : kNegInf;
    }
    return out;
}

Grid gate_entropy_map(const GateField& gate) {
    const auto& w = gate.weights;
    const GridStack lw = log_weights(gate);
    Grid out(w.height(), w.width());
    for (std::size_t p = 0; p < w.plane_size(); ++p) {
        double h = 0.0;
        for (int k = 0; k < w.channels(); ++k)
            if (w.at(k, p) > 0.0)
                h -= w.at(k, p) * lw.at(k, p);
        out[p] = h;
    }
    return out;
}

NllResult mixture_nll(const MixtureOutput& output, const Grid& gt_depth, const LossConfig& cfg) {
    const auto& mu = output.expert_depths;
    const auto& w = output.gate.weights;
    const int k_count = w.channels();
    require(cfg.sigma > 0.0, "mixture_nll: sigma must be positive");
    require(mu.same_shape(w), "mixture_nll: expert depths and gate shapes differ");
    require(mu.same_plane(gt_depth), "mixture_nll: ground truth dimensions do not match");
    check_mask(cfg.valid_mask, gt_depth.height(), gt_depth.width());

    const double inv_var = 1.0 / (cfg.sigma * cfg.sigma);
    const double log_norm = -std::log(cfg.sigma) - 0.5 * std::log(2.0 * std::numbers::pi);
    const double inv_tau = 1.0 / output.gate.temperature;
    const GridStack lw = log_weights(output.gate);

    NllResult res{0.0, GridStack(k_count, w.height(), w.width()), GridStack(k_count, w.height(), w.width()), 0};
    std::vector<double> joint(k_count);
    std::vector<std::size_t> valid;
    valid.reserve(gt_depth.size());
    double total = 0.0;
    for (std::size_t p = 0; p < gt_depth.size(); ++p) {
        if (!pixel_valid(gt_depth, cfg.valid_mask, p))
            continue;
        valid.push_back(p);
        // log(w_k N(d*; mu_k, sigma^2)), combined via log-sum-exp
        double mx = kNegInf;
        for (int k = 0; k < k_count; ++k) {
            const double r = gt_depth[p] - mu.at(k, p);
            joint[k] = lw.at(k, p) + log_norm - 0.5 * r * r * inv_var;
            mx = std::max(mx, joint[k]);
        }
        require(std::isfinite(mx), "mixture_nll: mixture density is zero at a valid pixel");
        double sum = 0.0;
        for (int k = 0; k < k_count; ++k)
            sum += std::exp(joint[k] - mx);
        const double log_p = mx + std::log(sum);
        total -= log_p;
        for (int k = 0; k < k_count; ++k) {
            const double resp = std::exp(joint[k] - log_p);
            res.grad_mu.at(k, p) = -resp * (gt_depth[p] - mu.at(k, p)) * inv_var;
            res.grad_logits.at(k, p) = (w.at(k, p) - resp) * inv_tau;
        }
    }
    require(!valid.empty(), "mixture_nll: no valid pixels");
    const double scale = 1.0 / static_cast<double>(valid.size());
    res.loss = total * scale;
    res.valid_count = valid.size();
    for (double& g : res.grad_mu.values())
        g *= scale;
    for (double& g : res.grad_logits.values())
        g *= scale;
    return res;
}

EntropyResult gating_entropy(const GateField& gate, const std::optional<MaskGrid>& valid_mask) {
    const auto& w = gate.weights;
    check_mask(valid_mask, w.height(), w.width());
    const GridStack lw = log_weights(gate);
    EntropyResult res{0.0, GridStack(w.channels(), w.height(), w.width())};
    std::size_t count = 0;
    const double inv_tau = 1.0 / gate.temperature;
    for (std::size_t p = 0; p < w.plane_size(); ++p) {
        if (valid_mask && !(*valid_mask)[p])
            continue;
        ++count;
        double h = 0.0;
        for (int k = 0; k < w.channels(); ++k)
            if (w.at(k, p) > 0.0)
                h -= w.at(k, p) * lw.at(k, p);
        res.loss += h;
        // dH/dG_k = -(1/tau) w_k (log w_k + H)
        for (int k = 0; k < w.channels(); ++k)
            if (w.at(k, p) > 0.0)
                res.grad_logits.at(k, p) = -inv_tau * w.at(k, p) * (lw.at(k, p) + h);
    }
    if (count == 0)
        return res;
    const double scale = 1.0 / static_cast<double>(count);
    res.loss *= scale;
    for (double& g : res.grad_logits.values())
        g *= scale;
    return res;
}

TotalLossResult total_loss(const MixtureOutput& output, const Grid& gt_depth, const LossConfig& cfg) {
    require(cfg.lambda_d >= 0.0 && cfg.lambda_e >= 0.0, "total_loss: loss weights must be nonnegative");
    NllResult nll = mixture_nll(output, gt_depth, cfg);
    EntropyResult ent = gating_entropy(output.gate, cfg.valid_mask);

    TotalLossResult res;
    res.nll = nll.loss;
    res.entropy = ent.loss;
    res.loss = cfg.lambda_d * nll.loss + cfg.lambda_e * ent.loss;
    res.grad_mu = std::move(nll.grad_mu);
    res.grad_logits = std::move(nll.grad_logits);
    for (double& g : res.grad_mu.values())
        g *= cfg.lambda_d;
    auto gl = res.grad_logits.values();
    auto ge = ent.grad_logits.values();
    for (std::size_t i = 0; i < gl.size(); ++i)
        gl[i] = cfg.lambda_d * gl[i] + cfg.lambda_e * ge[i];
    return res;
}

HardLimitResult hard_limit_check(const MixtureOutput& output, const Grid& gt_depth, double sigma) {
    const auto& w = output.gate.weights;
    for (std::size_t p = 0; p < w.plane_size(); ++p) {
        int ones = 0;
        for (int k = 0; k < w.channels(); ++k) {
            const double v = w.at(k, p);
            if (std::abs(v - 1.0) <= 1e-12)
                ++ones;
            else
                require(std::abs(v) <= 1e-12, "hard_limit_check: gate is not one-hot");
        }
        require(ones == 1, "hard_limit_check: gate is not one-hot");
    }
    LossConfig cfg;
    cfg.sigma = sigma;
    HardLimitResult res;
    res.nll = mixture_nll(output, gt_depth, cfg).loss;

    const LabelGrid sel = gate_argmax(output.gate);
    double sq = 0.0;
    std::size_t n = 0;
    for (std::size_t p = 0; p < gt_depth.size(); ++p) {
        if (!std::isfinite(gt_depth[p]))
            continue;
        const double r = gt_depth[p] - output.expert_depths.at(sel.data[p], p);
        sq += r * r;
        ++n;
    }
    res.scaled_sq_err = (sq / static_cast<double>(n)) / (2.0 * sigma * sigma) +
                        0.5 * std::log(2.0 * std::numbers::pi * sigma * sigma);
    return res;
}

MixtureOutput make_mixture_output(GridStack expert_depths, GateField gate) {
    Grid fused = combine(expert_depths, gate, false);
    return MixtureOutput{std::move(expert_depths), std::move(gate), std::move(fused)};
}

}  // namespace moe_depth
