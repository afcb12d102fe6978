#include <doctest.h>

#include <cmath>
#include <random>

#include "moe_depth/detail/binary_io.hpp"
#include "moe_depth/network.hpp"
#include "oracle.hpp"

using namespace moe_depth;

namespace {

NetConfig small_config(int experts, int features = 4) {
    NetConfig c;
    c.feature_channels = features;
    c.num_experts = experts;
    c.seed = 99;
    c.sigma_init = 0.05;
    c.output_bias = 0.3;
    return c;
}

double dot(std::span<const double> a, std::span<const double> b) {
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i)
        s += a[i] * b[i];
    return s;
}

struct Probe {
    GridStack a;  // weights on expert depths
    GridStack b;  // weights on logits
    Grid c;       // weights on the fused depth
};

double probe_loss(const NetConfig& cfg, const ParamStore& p, const GridStack& input, double tau, const Probe& pr) {
    const ForwardTrace t = forward(cfg, p, input, tau);
    return dot(pr.a.values(), t.output.expert_depths.values()) + dot(pr.b.values(), t.output.gate.logits.values()) +
           dot(pr.c.values(), t.output.fused_depth.values());
}

}  // namespace

TEST_CASE("head variant names") {
    CHECK(head_variant_from_string("pixel") == HeadVariant::PixelMoE);
    CHECK(to_string(HeadVariant::PixelMoE) == "pixel");
    CHECK_THROWS_AS(head_variant_from_string("bogus"), ContractError);
    NetConfig c;
    c.variant = HeadVariant::FullHeadMoE;
    CHECK_THROWS_AS(c.validate(), ContractError);
}

TEST_CASE("parameter count") {
    for (int cin : {1, 3})
        for (int cf : {2, 5, 16})
            for (int k : {1, 3, 5})
                for (int layers : {1, 2, 3})
                    for (int experts : {1, 4, 7}) {
                        NetConfig c;
                        c.input_channels = cin;
                        c.feature_channels = cf;
                        c.kernel_size = k;
                        c.encoder_layers = layers;
                        c.num_experts = experts;
                        const std::size_t k2 = k * k;
                        const std::size_t expected = cin * cf * k2 + cf + (layers - 1) * (cf * cf * k2 + cf) +
                                                     experts * (cf * cf * k2 + cf + cf * k2 + 1) +
                                                     experts * cf * k2 + experts;
                        CHECK(parameter_count(c) == expected);
                        CHECK(init_params(c).size() == expected);
                    }
    // Defaults: 3 input channels, 16 features, 3x3, two encoder layers, four experts.
    CHECK(parameter_count(NetConfig{}) == 448 + 2320 + 4 * (2304 + 16 + 144 + 1) + 4 * 144 + 4);
}

TEST_CASE("expert perturbation") {
    ParamStore base = make_expert_segments(6, 3);
    std::mt19937_64 rng(7);
    for (double& v : base.mutable_values())
        v = std::uniform_real_distribution<double>(-1, 1)(rng);

    const ParamStore same = init_experts_perturbed(base, 3, 0.0, 5);
    for (int k = 0; k < 3; ++k)
        for (const auto& seg : base.segments()) {
            const auto a = same.values("expert." + std::to_string(k) + "." + seg.name);
            const auto b = base.values(seg.name);
            CHECK(std::equal(a.begin(), a.end(), b.begin()));
        }

    const ParamStore noisy = init_experts_perturbed(base, 4, 0.001, 5);
    double sum = 0.0, sq = 0.0;
    std::size_t n = 0;
    for (int k = 0; k < 4; ++k)
        for (const auto& seg : base.segments()) {
            const auto a = noisy.values("expert." + std::to_string(k) + "." + seg.name);
            const auto b = base.values(seg.name);
            for (std::size_t i = 0; i < a.size(); ++i) {
                const double d = a[i] - b[i];
                sum += d;
                sq += d * d;
                ++n;
            }
        }
    const double mean = sum / n, sd = std::sqrt(sq / n - mean * mean);
    CHECK(std::abs(sd - 0.001) < 0.2 * 0.001);

    // Same seed, same noise; experts differ from each other.
    const ParamStore again = init_experts_perturbed(base, 4, 0.001, 5);
    CHECK(std::equal(again.values().begin(), again.values().end(), noisy.values().begin()));
    const auto e0 = noisy.values("expert.0.conv1.weight"), e1 = noisy.values("expert.1.conv1.weight");
    CHECK_FALSE(std::equal(e0.begin(), e0.end(), e1.begin()));
    CHECK_THROWS_AS(init_experts_perturbed(base, 2, -1.0, 0), ContractError);
}

TEST_CASE("forward shapes and determinism") {
    const NetConfig cfg = small_config(3);
    const ParamStore p = init_params(cfg);
    std::mt19937_64 rng(3);
    const GridStack input = oracle::random_stack(3, 7, 5, rng);
    const ForwardTrace a = forward(cfg, p, input, 0.7);
    const ForwardTrace b = forward(cfg, p, input, 0.7);
    CHECK(a.output.expert_depths.channels() == 3);
    CHECK(a.output.expert_depths.height() == 7);
    CHECK(a.output.expert_depths.width() == 5);
    CHECK(a.output.gate.weights.channels() == 3);
    CHECK(a.output.gate.temperature == 0.7);
    CHECK(a.output.expert_depths == b.output.expert_depths);
    CHECK(a.output.gate.weights == b.output.gate.weights);
    CHECK(a.output.fused_depth == b.output.fused_depth);
    CHECK(init_params(cfg).values().size() == p.size());
    const auto p2 = init_params(cfg);
    CHECK(std::equal(p2.values().begin(), p2.values().end(), p.values().begin()));

    // Reusing a trace gives the same numbers.
    ForwardTrace reuse = forward(cfg, p, oracle::random_stack(3, 7, 5, rng), 0.3);
    forward(cfg, p, input, 0.7, reuse);
    CHECK(reuse.output.fused_depth == a.output.fused_depth);

    CHECK_THROWS_AS(forward(cfg, p, GridStack(2, 7, 5), 1.0), ContractError);
}

TEST_CASE("zero input and a single expert") {
    NetConfig cfg = small_config(1);
    cfg.sigma_init = 0.0;
    const ParamStore p = init_params(cfg);
    const ForwardTrace t = forward(cfg, p, GridStack(3, 4, 4), 1.0);
    // With all-zero input and zero biases in the encoder, every activation is zero
    // and the expert emits its output bias.
    for (double v : t.output.expert_depths.values())
        CHECK(v == doctest::Approx(cfg.output_bias).epsilon(1e-12));
    for (double w : t.output.gate.weights.values())
        CHECK(w == 1.0);
    CHECK(t.output.fused_depth == t.output.expert_depths.grid(0));
}

TEST_CASE("backward matches finite differences end to end") {
    const NetConfig cfg = small_config(3);
    ParamStore p = init_params(cfg);
    std::mt19937_64 rng(13);
    // Nudge the gate away from zero so logits carry signal.
    for (double& v : p.mutable_values("gate.bias"))
        v = std::uniform_real_distribution<double>(-0.5, 0.5)(rng);
    const GridStack input = oracle::random_stack(3, 6, 6, rng);
    const double tau = 0.8;
    const Probe pr{oracle::random_stack(3, 6, 6, rng), oracle::random_stack(3, 6, 6, rng),
                   oracle::random_grid(6, 6, rng)};

    const ForwardTrace t = forward(cfg, p, input, tau);
    p.zero_grads();
    backward(cfg, t, HeadGradients{pr.a, pr.b, pr.c}, p);
    const std::vector<double> analytic(p.grads().begin(), p.grads().end());

    const double h = 1e-6;
    double worst = 0.0;
    for (const auto& seg : p.segments()) {
        std::uniform_int_distribution<std::size_t> pick(0, seg.size - 1);
        const std::size_t probes = std::min<std::size_t>(seg.size, 24);
        for (std::size_t n = 0; n < probes; ++n) {
            const std::size_t i = seg.offset + (seg.size <= 24 ? n : pick(rng));
            const double v0 = p.values()[i];
            p.mutable_values()[i] = v0 + h;
            const double up = probe_loss(cfg, p, input, tau, pr);
            p.mutable_values()[i] = v0 - h;
            const double dn = probe_loss(cfg, p, input, tau, pr);
            p.mutable_values()[i] = v0;
            const double err = oracle::rel_err(analytic[i], (up - dn) / (2 * h), 1e-4);
            if (err > worst) {
                worst = err;
                INFO("segment ", seg.name);
            }
            CHECK_MESSAGE(err < 1e-4, seg.name, " index ", i - seg.offset);
        }
    }
    CHECK(worst < 1e-4);
}

TEST_CASE("backward is linear in the upstream gradient") {
    const NetConfig cfg = small_config(2);
    ParamStore p = init_params(cfg);
    std::mt19937_64 rng(19);
    const GridStack input = oracle::random_stack(3, 5, 5, rng);
    const ForwardTrace t = forward(cfg, p, input, 1.0);

    p.zero_grads();
    backward(cfg, t, HeadGradients{GridStack(2, 5, 5), GridStack(2, 5, 5), std::nullopt}, p);
    for (double g : p.grads())
        CHECK(g == 0.0);

    const HeadGradients up{oracle::random_stack(2, 5, 5, rng), oracle::random_stack(2, 5, 5, rng), std::nullopt};
    p.zero_grads();
    backward(cfg, t, up, p);
    const std::vector<double> once(p.grads().begin(), p.grads().end());
    HeadGradients twice = up;
    for (double& v : twice.expert_depths.values())
        v *= 2;
    for (double& v : twice.logits.values())
        v *= 2;
    p.zero_grads();
    backward(cfg, t, twice, p);
    for (std::size_t i = 0; i < once.size(); ++i)
        CHECK(std::abs(p.grads()[i] - 2 * once[i]) <= 1e-12 * std::max(1.0, std::abs(once[i])));

    // Gradients accumulate across calls.
    backward(cfg, t, up, p);
    for (std::size_t i = 0; i < once.size(); ++i)
        CHECK(std::abs(p.grads()[i] - 3 * once[i]) <= 1e-12 * std::max(1.0, std::abs(once[i])));
}

TEST_CASE("frozen segments receive no gradient") {
    const NetConfig cfg = small_config(2);
    ParamStore p = init_params(cfg);
    p.set_frozen("encoder.", true);
    std::mt19937_64 rng(21);
    const ForwardTrace t = forward(cfg, p, oracle::random_stack(3, 4, 4, rng), 1.0);
    p.zero_grads();
    backward(cfg, t, HeadGradients{oracle::random_stack(2, 4, 4, rng), oracle::random_stack(2, 4, 4, rng), {}}, p);
    for (const auto& seg : p.segments()) {
        if (seg.name.rfind("encoder.", 0) != 0)
            continue;
        CHECK(seg.frozen);
        for (std::size_t i = 0; i < seg.size; ++i)
            CHECK(p.grads()[seg.offset + i] == 0.0);
    }
}

TEST_CASE("stale trace is rejected") {
    const NetConfig cfg = small_config(2);
    ParamStore p = init_params(cfg);
    const ForwardTrace t = forward(cfg, p, GridStack(3, 3, 3), 1.0);
    p.mutable_values()[0] += 1.0;
    CHECK_THROWS_AS(backward(cfg, t, HeadGradients{GridStack(2, 3, 3), GridStack(2, 3, 3), {}}, p), ContractError);
}

TEST_CASE("temperature schedule") {
    TemperatureSchedule s;
    CHECK(s.tau == 1.0);
    CHECK(s.step() == 0.995);
    TemperatureSchedule t;
    int first_floor = 0;
    for (int n = 1; n <= 2000; ++n) {
        const double before = t.tau;
        const double after = t.step();
        CHECK(after <= before);
        CHECK(after >= 0.1);
        if (after == 0.1 && first_floor == 0)
            first_floor = n;
    }
    // 0.995^459 = 0.10018..., 0.995^460 = 0.09968...
    CHECK(first_floor == 460);
}

TEST_CASE("checkpoint round trip") {
    const auto dir = oracle::scratch_dir("network_ckpt");
    Checkpoint c{small_config(3, 5), 0.4321, {}};
    c.params = init_params(c.config);
    write_checkpoint(c, dir + "/m.mdc");
    const Checkpoint back = read_checkpoint(dir + "/m.mdc");
    CHECK(back.temperature == 0.4321);
    CHECK(back.config.num_experts == 3);
    CHECK(back.config.feature_channels == 5);
    CHECK(back.config.output_bias == 0.3);
    CHECK(back.config.sigma_init == 0.05);
    CHECK(std::equal(back.params.values().begin(), back.params.values().end(), c.params.values().begin()));
    CHECK(encode_checkpoint(back) == encode_checkpoint(c));

    auto bytes = encode_checkpoint(c);
    bytes.pop_back();
    CHECK_THROWS_AS(decode_checkpoint(bytes), FormatError);
    bytes = encode_checkpoint(c);
    bytes[0] = 'X';
    CHECK_THROWS_AS(decode_checkpoint(bytes), FormatError);
    CHECK_THROWS_AS(read_checkpoint(dir + "/absent.mdc"), IoError);
}
