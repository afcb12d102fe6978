#include "moe_depth/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "moe_depth/error.hpp"
#include "moe_depth/keyvalue.hpp"
#include "moe_depth/parallel.hpp"
#include "moe_depth/seed.hpp"

namespace moe_depth {

void opt_step(ParamStore& params, OptimState& st) {
    require(st.m.size() == params.size() && st.v.size() == params.size(),
            "opt_step: moment arrays do not match the parameter count");
    const auto grads = params.grads();
    for (const auto& seg : params.segments()) {
        if (seg.frozen)
            continue;
        for (std::size_t i = seg.offset; i < seg.offset + seg.size; ++i)
            if (!std::isfinite(grads[i]))
                throw TrainingError("non-finite gradient in segment '" + seg.name + "'");
    }

    ++st.t;
    const auto& c = st.cfg;
    const double bc1 = 1.0 - std::pow(c.beta1, static_cast<double>(st.t));
    const double bc2 = 1.0 - std::pow(c.beta2, static_cast<double>(st.t));
    const double shrink = 1.0 - c.lr * c.weight_decay;
    auto p = params.mutable_values();
    const auto& mask = params.decay_mask();
    for (const auto& seg : params.segments()) {
        if (seg.frozen)
            continue;
        for (std::size_t i = seg.offset; i < seg.offset + seg.size; ++i) {
            const double g = grads[i];
            if (mask[i])
                p[i] *= shrink;
            st.m[i] = c.beta1 * st.m[i] + (1.0 - c.beta1) * g;
            st.v[i] = c.beta2 * st.v[i] + (1.0 - c.beta2) * g * g;
            const double mh = st.m[i] / bc1, vh = st.v[i] / bc2;
            p[i] -= c.lr * mh / (std::sqrt(vh) + c.eps);
        }
    }
    params.zero_grads();
}

TrainResult train(const NetConfig& net, const TrainConfig& cfg, const std::vector<Scene>& data) {
    net.validate();
    require(!data.empty(), "train: dataset is empty");
    require(cfg.steps >= 0, "train: steps must be nonnegative");
    for (const auto& s : data)
        require(s.input.channels() == net.input_channels, "train: scene input channels do not match the network");

    TrainResult res;
    ParamStore params = init_params(net);
    if (cfg.freeze_encoder)
        params.set_frozen("encoder.", true);
    OptimState opt(params.size(), cfg.optim);
    TemperatureSchedule sched{cfg.tau0, cfg.tau_decay, cfg.tau_floor};

    std::vector<std::size_t> order(data.size());
    ForwardTrace trace;
    res.log.reserve(cfg.steps);
    for (int step = 0; step < cfg.steps; ++step) {
        const std::size_t pos = static_cast<std::size_t>(step) % data.size();
        if (pos == 0) {
            std::iota(order.begin(), order.end(), std::size_t{0});
            std::mt19937_64 rng(derive_seed(cfg.seed, "epoch-order", static_cast<std::uint64_t>(step) / data.size()));
            std::shuffle(order.begin(), order.end(), rng);
        }
        const Scene& scene = data[order[pos]];
        const double tau = sched.tau;
        TotalLossResult loss;
        try {
            forward(net, params, scene.input, tau, trace);
            loss = total_loss(trace.output, scene.gt_depth, cfg.loss);
        } catch (const ContractError& e) {
            // Shapes were checked up front, so this is overflow in the activations.
            throw TrainingError(std::string(e.what()) + " at step " + std::to_string(step) + " (tau " +
                                format_double(tau) + ")");
        }
        if (!std::isfinite(loss.loss))
            throw TrainingError("non-finite loss at step " + std::to_string(step) + " (tau " + format_double(tau) +
                                ")");
        HeadGradients up{std::move(loss.grad_mu), std::move(loss.grad_logits), std::nullopt};
        backward(net, trace, up, params);
        try {
            opt_step(params, opt);
        } catch (const TrainingError& e) {
            throw TrainingError(std::string(e.what()) + " at step " + std::to_string(step) + " (tau " +
                                format_double(tau) + ")");
        }
        sched.step();
        res.log.push_back({step, loss.loss, loss.nll, cfg.loss.lambda_e * loss.entropy, tau, loss.entropy});
    }
    res.checkpoint = Checkpoint{net, sched.tau, std::move(params)};
    return res;
}

std::string format_log(const std::vector<StepRecord>& log) {
    std::string out;
    for (const auto& r : log)
        out += std::to_string(r.step) + "\t" + format_double(r.total) + "\t" + format_double(r.nll) + "\t" +
               format_double(r.entropy) + "\t" + format_double(r.tau) + "\t" + format_double(r.mean_gate_entropy) +
               "\n";
    return out;
}

MixtureOutput predict(const Checkpoint& ckpt, const GridStack& input) {
    return forward(ckpt.config, ckpt.params, input, ckpt.temperature).output;
}

GateStats gate_stats(const Checkpoint& ckpt, const LossConfig& loss, const std::vector<Scene>& scenes) {
    require(!scenes.empty(), "gate_stats: no scenes");
    GateStats st;
    double ent_sum = 0.0;
    std::size_t le2 = 0;
    const double log2 = std::log(2.0);
    for (const auto& s : scenes) {
        const MixtureOutput out = predict(ckpt, s.input);
        const TotalLossResult tl = total_loss(out, s.gt_depth, loss);
        st.loss += tl.loss;
        st.nll += tl.nll;
        const Grid h = gate_entropy_map(out.gate);
        for (double v : h.values()) {
            ent_sum += v;
            le2 += v <= log2 + 1e-12;
        }
        st.pixels += h.size();
    }
    st.loss /= static_cast<double>(scenes.size());
    st.nll /= static_cast<double>(scenes.size());
    st.mean_entropy = ent_sum / static_cast<double>(st.pixels);
    st.effective_experts = std::exp(st.mean_entropy);
    st.frac_le2 = static_cast<double>(le2) / static_cast<double>(st.pixels);
    return st;
}

std::vector<AblationRow> ablate_entropy(const NetConfig& net, const TrainConfig& base,
                                        const std::vector<Scene>& train_set, const std::vector<Scene>& heldout,
                                        const std::vector<double>& lambdas) {
    require(!lambdas.empty(), "ablate_entropy: lambda list is empty");
    require(!heldout.empty(), "ablate_entropy: held-out set is empty");
    for (double l : lambdas)
        require(l >= 0.0 && std::isfinite(l), "ablate_entropy: lambdas must be finite and nonnegative");
    std::vector<AblationRow> rows(lambdas.size());
    parallel_for(lambdas.size(), [&](std::size_t i) {
        TrainConfig cfg = base;
        cfg.loss.lambda_e = lambdas[i];
        TrainResult tr = train(net, cfg, train_set);
        rows[i].lambda = lambdas[i];
        rows[i].heldout = gate_stats(tr.checkpoint, cfg.loss, heldout);
        rows[i].gate = predict(tr.checkpoint, heldout.front().input).gate;
        rows[i].checkpoint = std::move(tr.checkpoint);
    });
    return rows;
}

std::string format_ablation(const std::vector<AblationRow>& rows) {
    std::string out = "lambda\tfinal_loss\tmean_gate_entropy\teffective_experts\tfrac_le2\n";
    for (const auto& r : rows)
        out += format_double(r.lambda) + "\t" + format_double(r.heldout.loss) + "\t" +
               format_double(r.heldout.mean_entropy) + "\t" + format_double(r.heldout.effective_experts) + "\t" +
               format_double(r.heldout.frac_le2) + "\n";
    return out;
}

}  // namespace moe_depth
