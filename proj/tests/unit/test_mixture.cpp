#include <doctest.h>

#include <cmath>
#include <random>

#include "moe_depth/mixture.hpp"
#include "oracle.hpp"

using namespace moe_depth;

namespace {

// Frozen from a 40-digit evaluation of the closed forms.
constexpr double kHalfLog2Pi = 0.91893853320467274178;
constexpr double kLn4 = 1.3862943611198906188;

GridStack pixel_logits(std::initializer_list<double> v) {
    GridStack s(static_cast<int>(v.size()), 1, 1);
    int k = 0;
    for (double x : v)
        s.at(k++, 0) = x;
    return s;
}

double weight_sum_error(const GateField& g) {
    double worst = 0.0;
    for (std::size_t p = 0; p < g.weights.plane_size(); ++p) {
        double s = 0.0;
        for (int k = 0; k < g.num_experts(); ++k)
            s += g.weights.at(k, p);
        worst = std::max(worst, std::abs(s - 1.0));
    }
    return worst;
}

LabelGrid random_labels(int h, int w, int k, std::mt19937_64& rng) {
    std::uniform_int_distribution<int> u(0, k - 1);
    LabelGrid l{h, w, std::vector<int>(static_cast<std::size_t>(h) * w)};
    for (int& v : l.data)
        v = u(rng);
    return l;
}

}  // namespace

TEST_CASE("softmax examples") {
    auto g = gate_softmax(pixel_logits({0.0, 0.0}), 1.0);
    CHECK(g.weights.at(0, 0) == doctest::Approx(0.5).epsilon(1e-15));
    CHECK(g.weights.at(1, 0) == doctest::Approx(0.5).epsilon(1e-15));

    g = gate_softmax(pixel_logits({1.0, 0.0}), 0.5);
    CHECK(std::abs(g.weights.at(0, 0) - 0.88079707797788244406) < 1e-15);
    CHECK(std::abs(g.weights.at(1, 0) - 0.11920292202211755594) < 1e-15);

    g = gate_softmax(pixel_logits({5.0, 1.0, 1.0}), 0.01);
    CHECK(std::abs(g.weights.at(0, 0) - 1.0) < 1e-8);
    CHECK(g.weights.at(1, 0) < 1e-8);

    CHECK_THROWS_AS(gate_softmax(pixel_logits({1.0}), 0.0), ContractError);
    CHECK_THROWS_AS(gate_softmax(pixel_logits({1.0}), -1.0), ContractError);
}

TEST_CASE("softmax properties on random fields") {
    std::mt19937_64 rng(101);
    std::uniform_real_distribution<double> tau_d(0.05, 3.0), shift_d(-50.0, 50.0);
    for (int trial = 0; trial < 200; ++trial) {
        const int k = 1 + trial % 6;
        const GridStack logits = oracle::random_stack(k, 5, 4, rng, -20.0, 20.0);
        const double tau = tau_d(rng);
        const GateField g = gate_softmax(logits, tau);
        CHECK(weight_sum_error(g) < 1e-12);
        for (double w : g.weights.values()) {
            CHECK(w >= 0.0);
            CHECK(w <= 1.0);
        }
        // Agreement with the long double oracle.
        for (std::size_t p = 0; p < logits.plane_size(); ++p) {
            std::vector<double> l(k);
            for (int j = 0; j < k; ++j)
                l[j] = logits.at(j, p);
            const auto ref = oracle::softmax(l, tau);
            for (int j = 0; j < k; ++j)
                CHECK(std::abs(g.weights.at(j, p) - static_cast<double>(ref[j])) < 1e-12);
        }
        // Shift invariance.
        GridStack shifted = logits;
        for (std::size_t p = 0; p < logits.plane_size(); ++p) {
            const double c = shift_d(rng);
            for (int j = 0; j < k; ++j)
                shifted.at(j, p) += c;
        }
        const GateField gs = gate_softmax(shifted, tau);
        for (std::size_t i = 0; i < g.weights.values().size(); ++i)
            CHECK(std::abs(gs.weights.values()[i] - g.weights.values()[i]) < 1e-12);
    }
}

TEST_CASE("argmax and tie rule") {
    GateField g;
    g.weights = GridStack(2, 1, 3);
    g.weights.at(0, 0) = 0.2, g.weights.at(1, 0) = 0.8;
    g.weights.at(0, 1) = 0.5, g.weights.at(1, 1) = 0.5;
    g.weights.at(0, 2) = 0.9, g.weights.at(1, 2) = 0.1;
    const LabelGrid a = gate_argmax(g);
    CHECK(a.data == std::vector<int>{1, 0, 0});

    const GateField h = hard_gate(LabelGrid{1, 1, {2}}, 4);
    CHECK(gate_argmax(h).data[0] == 2);
}

TEST_CASE("combine") {
    GateField g;
    g.weights = GridStack(2, 1, 1);
    g.weights.at(0, 0) = 0.25, g.weights.at(1, 0) = 0.75;
    GridStack d(2, 1, 1);
    d.at(0, 0) = 4.0, d.at(1, 0) = 8.0;
    CHECK(combine(d, g, false)[0] == 7.0);
    CHECK(combine(d, g, true)[0] == 8.0);

    std::mt19937_64 rng(5);
    for (int trial = 0; trial < 50; ++trial) {
        const int k = 1 + trial % 5;
        const GridStack depths = oracle::random_stack(k, 6, 6, rng, 0.5, 9.0);
        const GateField soft = gate_softmax(oracle::random_stack(k, 6, 6, rng, -3, 3), 0.7);
        const Grid fused = combine(depths, soft, false);
        const Grid hard = combine(depths, soft, true);
        const LabelGrid am = gate_argmax(soft);
        const GateField onehot = hard_gate(am, k);
        CHECK(combine(depths, onehot, false) == hard);
        for (std::size_t p = 0; p < fused.size(); ++p) {
            double lo = depths.at(0, p), hi = lo, ref = 0.0, spread = 0.0;
            for (int j = 0; j < k; ++j) {
                lo = std::min(lo, depths.at(j, p));
                hi = std::max(hi, depths.at(j, p));
                ref += soft.weights.at(j, p) * depths.at(j, p);
                spread = std::max(spread, std::abs(depths.at(j, p) - hard[p]));
            }
            CHECK(std::abs(fused[p] - ref) < 1e-12);
            CHECK(fused[p] >= lo - 1e-12);
            CHECK(fused[p] <= hi + 1e-12);
            CHECK(std::abs(fused[p] - hard[p]) <= spread + 1e-12);
        }
    }
    CHECK_THROWS_AS(combine(GridStack(3, 2, 2), gate_softmax(GridStack(2, 2, 2), 1.0), false), ContractError);
}

TEST_CASE("mixture NLL examples") {
    // K = 1, mean at the target: the Gaussian mode.
    {
        GridStack mu(1, 3, 3, 2.5);
        const Grid gt(3, 3, 2.5);
        const auto out = make_mixture_output(mu, gate_softmax(GridStack(1, 3, 3), 1.0));
        CHECK(std::abs(mixture_nll(out, gt, {}).loss - kHalfLog2Pi) < 1e-15);
    }
    // K = 2, equal weights, means 0 and 2, target 0.
    {
        GridStack mu(2, 1, 1);
        mu.at(1, 0) = 2.0;
        const auto out = make_mixture_output(mu, gate_softmax(GridStack(2, 1, 1), 1.0));
        CHECK(std::abs(mixture_nll(out, Grid(1, 1, 0.0), {}).loss - 1.4851577027216455548) < 1e-14);
    }
}

TEST_CASE("mixture NLL matches the direct density oracle, far tails included") {
    std::mt19937_64 rng(17);
    for (int trial = 0; trial < 60; ++trial) {
        const int k = 1 + trial % 6;
        const double sigma = 0.3 + 0.1 * (trial % 7);
        const GridStack logits = oracle::random_stack(k, 4, 3, rng, -2, 2);
        const GridStack mu = oracle::random_stack(k, 4, 3, rng, -5, 5);
        const Grid gt = oracle::random_grid(4, 3, rng, -5, 5);
        const double tau = 0.4 + 0.2 * (trial % 4);
        const auto out = make_mixture_output(mu, gate_softmax(logits, tau));
        LossConfig cfg;
        cfg.sigma = sigma;
        const double ref = static_cast<double>(oracle::mixture_nll(logits, tau, mu, gt, sigma));
        CHECK(oracle::rel_err(mixture_nll(out, gt, cfg).loss, ref) < 1e-12);
    }
    // Residual of 60 sigma: direct densities underflow in double, log-sum-exp does not.
    GridStack mu(2, 1, 1);
    mu.at(0, 0) = 60.0, mu.at(1, 0) = 70.0;
    const auto out = make_mixture_output(mu, gate_softmax(GridStack(2, 1, 1), 1.0));
    const double loss = mixture_nll(out, Grid(1, 1, 0.0), {}).loss;
    CHECK(std::isfinite(loss));
    CHECK(std::abs(loss - (1800.0 + kHalfLog2Pi + std::log(2.0))) < 1e-9);
}

TEST_CASE("mixture NLL gradients against finite differences of the oracle") {
    std::mt19937_64 rng(23);
    const double h = 1e-6;
    double worst = 0.0;
    for (int trial = 0; trial < 100; ++trial) {
        const int k = 1 + trial % 6;
        const int rows = 1 + trial % 8, cols = 1 + (trial / 8) % 8;
        const double tau = 0.5 + 0.25 * (trial % 3);
        const double sigma = 0.7 + 0.2 * (trial % 4);
        GridStack logits = oracle::random_stack(k, rows, cols, rng, -2, 2);
        GridStack mu = oracle::random_stack(k, rows, cols, rng, -2, 2);
        const Grid gt = oracle::random_grid(rows, cols, rng, -2, 2);
        LossConfig cfg;
        cfg.sigma = sigma;
        const NllResult r = mixture_nll(make_mixture_output(mu, gate_softmax(logits, tau)), gt, cfg);
        for (std::size_t i = 0; i < mu.values().size(); ++i) {
            const double m0 = mu.values()[i];
            mu.values()[i] = m0 + h;
            const long double up = oracle::mixture_nll(logits, tau, mu, gt, sigma);
            mu.values()[i] = m0 - h;
            const long double dn = oracle::mixture_nll(logits, tau, mu, gt, sigma);
            mu.values()[i] = m0;
            worst = std::max(worst, oracle::rel_err(r.grad_mu.values()[i], static_cast<double>((up - dn) / (2 * h))));

            const double g0 = logits.values()[i];
            logits.values()[i] = g0 + h;
            const long double lu = oracle::mixture_nll(logits, tau, mu, gt, sigma);
            logits.values()[i] = g0 - h;
            const long double ld = oracle::mixture_nll(logits, tau, mu, gt, sigma);
            logits.values()[i] = g0;
            worst = std::max(worst,
                             oracle::rel_err(r.grad_logits.values()[i], static_cast<double>((lu - ld) / (2 * h))));
        }
    }
    CHECK(worst < 1e-5);
}

TEST_CASE("single expert reduces to the Gaussian NLL") {
    std::mt19937_64 rng(29);
    for (int trial = 0; trial < 20; ++trial) {
        const GridStack mu = oracle::random_stack(1, 5, 5, rng, 0, 10);
        const Grid gt = oracle::random_grid(5, 5, rng, 0, 10);
        LossConfig cfg;
        cfg.sigma = 0.5 + trial * 0.1;
        double plain = 0.0;
        for (std::size_t p = 0; p < gt.size(); ++p) {
            const double d = (gt[p] - mu.at(0, p)) / cfg.sigma;
            plain += 0.5 * d * d + std::log(cfg.sigma) + kHalfLog2Pi;
        }
        plain /= static_cast<double>(gt.size());
        const auto out = make_mixture_output(mu, gate_softmax(oracle::random_stack(1, 5, 5, rng), 1.0));
        CHECK(std::abs(mixture_nll(out, gt, cfg).loss - plain) < 1e-12);
    }
}

TEST_CASE("invalid pixels are excluded") {
    GridStack mu(1, 1, 3, 1.0);
    Grid gt(1, 3, 1.0);
    gt[1] = std::numeric_limits<double>::quiet_NaN();
    gt[2] = 100.0;
    LossConfig cfg;
    cfg.valid_mask = MaskGrid(1, 3, true);
    cfg.valid_mask->set(std::size_t{2}, false);
    const auto out = make_mixture_output(mu, gate_softmax(GridStack(1, 1, 3), 1.0));
    const auto r = mixture_nll(out, gt, cfg);
    CHECK(r.valid_count == 1);
    CHECK(std::abs(r.loss - kHalfLog2Pi) < 1e-15);
    CHECK(r.grad_mu.at(0, 1) == 0.0);
    CHECK(r.grad_mu.at(0, 2) == 0.0);

    cfg.valid_mask = MaskGrid(1, 3, false);
    CHECK_THROWS_AS(mixture_nll(out, gt, cfg), ContractError);
}

TEST_CASE("gating entropy") {
    CHECK(std::abs(gating_entropy(gate_softmax(GridStack(4, 3, 3), 1.0)).loss - kLn4) < 1e-12);
    CHECK(gating_entropy(hard_gate(LabelGrid{1, 2, {1, 3}}, 4)).loss == 0.0);

    std::mt19937_64 rng(31);
    const double h = 1e-6;
    double worst = 0.0;
    for (int trial = 0; trial < 100; ++trial) {
        const int k = 1 + trial % 6;
        const double tau = 0.3 + 0.3 * (trial % 4);
        GridStack logits = oracle::random_stack(k, 1 + trial % 8, 1 + (trial / 8) % 8, rng, -2, 2);
        const EntropyResult r = gating_entropy(gate_softmax(logits, tau));
        CHECK(std::abs(r.loss - static_cast<double>(oracle::mean_entropy(logits, tau))) < 1e-12);
        for (std::size_t i = 0; i < logits.values().size(); ++i) {
            const double g0 = logits.values()[i];
            logits.values()[i] = g0 + h;
            const long double up = oracle::mean_entropy(logits, tau);
            logits.values()[i] = g0 - h;
            const long double dn = oracle::mean_entropy(logits, tau);
            logits.values()[i] = g0;
            worst = std::max(worst, oracle::rel_err(r.grad_logits.values()[i], static_cast<double>((up - dn) / (2 * h))));
        }
    }
    CHECK(worst < 1e-5);
}

TEST_CASE("entropy bounds") {
    std::mt19937_64 rng(37);
    for (int trial = 0; trial < 300; ++trial) {
        const int k = 1 + trial % 6;
        const double tau = 0.05 + 0.01 * (trial % 50);
        const double e = gating_entropy(gate_softmax(oracle::random_stack(k, 4, 4, rng, -10, 10), tau)).loss;
        CHECK(e >= 0.0);
        CHECK(e <= std::log(static_cast<double>(k)) + 1e-12);
    }
    // Masked-out pixels do not count; no valid pixel at all gives zero.
    GateField g = gate_softmax(GridStack(3, 1, 2), 1.0);
    CHECK(gating_entropy(g, MaskGrid(1, 2, false)).loss == 0.0);
}

TEST_CASE("total loss composition") {
    std::mt19937_64 rng(41);
    const GridStack mu = oracle::random_stack(4, 5, 5, rng, 0, 5);
    const Grid gt = oracle::random_grid(5, 5, rng, 0, 5);
    const auto out = make_mixture_output(mu, gate_softmax(oracle::random_stack(4, 5, 5, rng), 0.8));

    LossConfig defaults;
    CHECK(defaults.lambda_d == 1.0);
    CHECK(defaults.lambda_e == 1e-4);
    CHECK(defaults.sigma == 1.0);

    LossConfig no_ent;
    no_ent.lambda_e = 0.0;
    const auto t0 = total_loss(out, gt, no_ent);
    const auto n0 = mixture_nll(out, gt, no_ent);
    CHECK(t0.loss == n0.loss);
    CHECK(t0.grad_mu == n0.grad_mu);
    CHECK(t0.grad_logits == n0.grad_logits);

    LossConfig ent_only;
    ent_only.lambda_d = 0.0;
    ent_only.lambda_e = 0.3;
    const auto uni = make_mixture_output(mu, gate_softmax(GridStack(4, 5, 5), 1.0));
    CHECK(std::abs(total_loss(uni, gt, ent_only).loss - 0.3 * kLn4) < 1e-12);

    LossConfig mix;
    mix.lambda_d = 0.7;
    mix.lambda_e = 0.2;
    const auto t = total_loss(out, gt, mix);
    const auto e = gating_entropy(out.gate);
    CHECK(std::abs(t.loss - (0.7 * n0.loss + 0.2 * e.loss)) < 1e-12);
    for (std::size_t i = 0; i < t.grad_logits.values().size(); ++i)
        CHECK(std::abs(t.grad_logits.values()[i] -
                       (0.7 * n0.grad_logits.values()[i] + 0.2 * e.grad_logits.values()[i])) < 1e-14);
}

TEST_CASE("hard assignment collapses to scaled squared error") {
    std::mt19937_64 rng(43);
    for (int trial = 0; trial < 100; ++trial) {
        const int k = 1 + trial % 5;
        const double sigma = 0.2 + 0.05 * (trial % 30);
        const GridStack mu = oracle::random_stack(k, 6, 5, rng, 0, 10);
        const Grid gt = oracle::random_grid(6, 5, rng, 0, 10);
        const auto out = make_mixture_output(mu, hard_gate(random_labels(6, 5, k, rng), k));
        const auto r = hard_limit_check(out, gt, sigma);
        CHECK(std::abs(r.nll - r.scaled_sq_err) < 1e-9);
    }
    // Selected expert exact: the constant alone.
    {
        GridStack mu(2, 2, 2, 9.0);
        const Grid gt(2, 2, 3.0);
        for (std::size_t p = 0; p < 4; ++p)
            mu.at(1, p) = 3.0;
        const auto out = make_mixture_output(mu, hard_gate(LabelGrid{2, 2, {1, 1, 1, 1}}, 2));
        const double sigma = 0.4;
        const auto r = hard_limit_check(out, gt, sigma);
        CHECK(std::abs(r.nll - (kHalfLog2Pi + std::log(sigma))) < 1e-12);
    }
    // Error of one at a single pixel with unit sigma.
    {
        GridStack mu(1, 1, 1, 1.0);
        const auto out = make_mixture_output(mu, hard_gate(LabelGrid{1, 1, {0}}, 1));
        const auto r = hard_limit_check(out, Grid(1, 1, 0.0), 1.0);
        CHECK(std::abs(r.nll - 1.4189385332046727418) < 1e-14);
    }
    const auto soft = make_mixture_output(GridStack(2, 1, 1), gate_softmax(GridStack(2, 1, 1), 1.0));
    CHECK_THROWS_AS(hard_limit_check(soft, Grid(1, 1, 0.0), 1.0), ContractError);
}

TEST_CASE("soft combination approaches hard selection as temperature falls") {
    std::mt19937_64 rng(47);
    GridStack logits(3, 4, 4);
    // Distinct logits per pixel, gaps at least 0.1.
    for (std::size_t p = 0; p < logits.plane_size(); ++p) {
        std::vector<double> v = {0.0, 0.1 + 0.01 * (p % 5), 0.3 + 0.02 * (p % 3)};
        std::shuffle(v.begin(), v.end(), rng);
        for (int k = 0; k < 3; ++k)
            logits.at(k, p) = v[k];
    }
    const GridStack depths = oracle::random_stack(3, 4, 4, rng, 1, 9);
    double prev = std::numeric_limits<double>::infinity();
    for (double tau = 1.0; tau > 1e-3; tau *= 0.7) {
        const GateField g = gate_softmax(logits, tau);
        const Grid soft = combine(depths, g, false), hard = combine(depths, g, true);
        double sup = 0.0;
        for (std::size_t p = 0; p < soft.size(); ++p)
            sup = std::max(sup, std::abs(soft[p] - hard[p]));
        CHECK(sup <= prev);
        prev = sup;
    }
    CHECK(prev < 1e-12);
}
