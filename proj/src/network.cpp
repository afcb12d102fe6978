#include "moe_depth/network.hpp"

#include <Eigen/Core>

#include <cmath>
#include <cstring>
#include <random>

#include "moe_depth/detail/binary_io.hpp"
#include "moe_depth/error.hpp"
#include "moe_depth/seed.hpp"

namespace moe_depth {

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatMap = Eigen::Map<RowMatrix>;
using ConstMatMap = Eigen::Map<const RowMatrix>;

std::string to_string(HeadVariant v) {
    switch (v) {
    case HeadVariant::PixelMoE: return "pixel";
    case HeadVariant::FullHeadMoE: return "full-head";
    case HeadVariant::PreFusionMoE: return "pre-fusion";
    }
    return "pixel";
}

HeadVariant head_variant_from_string(const std::string& name) {
    if (name == "pixel")
        return HeadVariant::PixelMoE;
    if (name == "full-head")
        return HeadVariant::FullHeadMoE;
    if (name == "pre-fusion")
        return HeadVariant::PreFusionMoE;
    throw ContractError("unknown head variant '" + name + "' (expected pixel, full-head or pre-fusion)");
}

void NetConfig::validate() const {
    require(input_channels > 0, "NetConfig: input_channels must be positive");
    require(feature_channels > 0, "NetConfig: feature_channels must be positive");
    require(num_experts >= 1, "NetConfig: num_experts must be at least 1");
    require(kernel_size > 0 && kernel_size % 2 == 1, "NetConfig: kernel_size must be odd and positive");
    require(encoder_layers >= 1, "NetConfig: encoder_layers must be positive");
    require(sigma_init >= 0.0, "NetConfig: sigma_init must be nonnegative");
    require(variant == HeadVariant::PixelMoE,
            "NetConfig: head variant '" + to_string(variant) + "' is reserved but not implemented");
}

std::size_t parameter_count(const NetConfig& cfg) {
    const std::size_t cin = cfg.input_channels, cf = cfg.feature_channels, k = cfg.num_experts;
    const std::size_t k2 = static_cast<std::size_t>(cfg.kernel_size) * cfg.kernel_size;
    const std::size_t encoder = cin * cf * k2 + cf + (cfg.encoder_layers - 1) * (cf * cf * k2 + cf);
    const std::size_t experts = k * (cf * cf * k2 + cf + cf * k2 + 1);
    const std::size_t gate = k * cf * k2 + k;
    return encoder + experts + gate;
}

// --- ParamStore -------------------------------------------------------------

std::size_t ParamStore::add_segment(const std::string& name, std::vector<int> shape, bool decay) {
    require(!has_segment(name), "ParamStore: duplicate segment " + name);
    std::size_t n = 1;
    for (int d : shape)
        n *= static_cast<std::size_t>(d);
    ParamSegment seg{name, values_.size(), n, std::move(shape), decay, false};
    values_.resize(values_.size() + n, 0.0);
    grads_.resize(values_.size(), 0.0);
    decay_mask_.resize(values_.size(), decay ? 1 : 0);
    segments_.push_back(std::move(seg));
    ++version_;
    return segments_.back().offset;
}

void ParamStore::append(const std::string& prefix, const ParamStore& other) {
    for (const auto& seg : other.segments_) {
        const std::size_t off = add_segment(prefix + seg.name, seg.shape, seg.decay);
        std::copy_n(other.values_.begin() + seg.offset, seg.size, values_.begin() + off);
    }
}

const ParamSegment& ParamStore::segment(const std::string& name) const {
    for (const auto& s : segments_)
        if (s.name == name)
            return s;
    throw ContractError("ParamStore: no segment named " + name);
}

bool ParamStore::has_segment(const std::string& name) const {
    for (const auto& s : segments_)
        if (s.name == name)
            return true;
    return false;
}

std::span<const double> ParamStore::values(const std::string& name) const {
    const auto& s = segment(name);
    return {values_.data() + s.offset, s.size};
}

std::span<double> ParamStore::mutable_values() {
    ++version_;
    return values_;
}

std::span<double> ParamStore::mutable_values(const std::string& name) {
    const auto& s = segment(name);
    ++version_;
    return {values_.data() + s.offset, s.size};
}

std::span<double> ParamStore::mutable_grads(const std::string& name) {
    const auto& s = segment(name);
    return {grads_.data() + s.offset, s.size};
}

void ParamStore::zero_grads() { std::fill(grads_.begin(), grads_.end(), 0.0); }

void ParamStore::set_frozen(const std::string& name_prefix, bool frozen) {
    for (auto& s : segments_)
        if (s.name.rfind(name_prefix, 0) == 0)
            s.frozen = frozen;
}

// --- initialization ---------------------------------------------------------

ParamStore make_expert_segments(int feature_channels, int kernel_size) {
    ParamStore s;
    s.add_segment("conv1.weight", {feature_channels, feature_channels, kernel_size, kernel_size}, true);
    s.add_segment("conv1.bias", {feature_channels}, false);
    s.add_segment("conv2.weight", {1, feature_channels, kernel_size, kernel_size}, true);
    s.add_segment("conv2.bias", {1}, false);
    return s;
}

ParamStore init_experts_perturbed(const ParamStore& base, int num_experts, double sigma_init, std::uint64_t seed) {
    require(sigma_init >= 0.0, "init_experts_perturbed: sigma_init must be nonnegative");
    require(num_experts >= 1, "init_experts_perturbed: need at least one expert");
    ParamStore out;
    for (int k = 0; k < num_experts; ++k) {
        const std::string prefix = "expert." + std::to_string(k) + ".";
        out.append(prefix, base);
        if (sigma_init == 0.0)
            continue;
        std::mt19937_64 rng(derive_seed(seed, "expert-perturbation", static_cast<std::uint64_t>(k)));
        std::normal_distribution<double> noise(0.0, sigma_init);
        for (const auto& seg : base.segments())
            for (double& v : out.mutable_values(prefix + seg.name))
                v += noise(rng);
    }
    return out;
}

namespace {

void fill_uniform(std::span<double> dst, double bound, std::mt19937_64& rng) {
    std::uniform_real_distribution<double> u(-bound, bound);
    for (double& v : dst)
        v = u(rng);
}

}  // namespace

ParamStore init_params(const NetConfig& cfg) {
    cfg.validate();
    const int cf = cfg.feature_channels, k = cfg.kernel_size, k2 = k * k;
    ParamStore store;

    std::mt19937_64 enc_rng(derive_seed(cfg.seed, "encoder-init"));
    for (int l = 0; l < cfg.encoder_layers; ++l) {
        const int cin = l == 0 ? cfg.input_channels : cf;
        const std::string name = "encoder." + std::to_string(l);
        store.add_segment(name + ".weight", {cf, cin, k, k}, true);
        store.add_segment(name + ".bias", {cf}, false);
        fill_uniform(store.mutable_values(name + ".weight"), std::sqrt(6.0 / (cin * k2)), enc_rng);
    }

    ParamStore base = make_expert_segments(cf, k);
    std::mt19937_64 base_rng(derive_seed(cfg.seed, "expert-base-init"));
    fill_uniform(base.mutable_values("conv1.weight"), std::sqrt(6.0 / (cf * k2)), base_rng);
    fill_uniform(base.mutable_values("conv2.weight"), std::sqrt(3.0 / (cf * k2)), base_rng);
    base.mutable_values("conv2.bias")[0] = cfg.output_bias;
    store.append("", init_experts_perturbed(base, cfg.num_experts, cfg.sigma_init,
                                            derive_seed(cfg.seed, "expert-noise")));

    std::mt19937_64 gate_rng(derive_seed(cfg.seed, "gate-init"));
    store.add_segment("gate.weight", {cfg.num_experts, cf, k, k}, true);
    store.add_segment("gate.bias", {cfg.num_experts}, false);
    fill_uniform(store.mutable_values("gate.weight"), std::sqrt(3.0 / (cf * k2)), gate_rng);
    return store;
}

// --- convolution kernels ----------------------------------------------------

namespace {

// col is (cin*k*k) x (h*w), row-major; zero padding of k/2 keeps spatial size.
void im2col(const double* in, int cin, int h, int w, int k, double* col) {
    const int pad = k / 2;
    const std::size_t hw = static_cast<std::size_t>(h) * w;
    for (int c = 0; c < cin; ++c) {
        const double* plane = in + c * hw;
        for (int ky = 0; ky < k; ++ky) {
            for (int kx = 0; kx < k; ++kx) {
                double* row = col + ((static_cast<std::size_t>(c) * k + ky) * k + kx) * hw;
                const int dx = kx - pad;
                const int x0 = std::max(0, -dx), x1 = std::min(w, w - dx);
                for (int y = 0; y < h; ++y) {
                    double* dst = row + static_cast<std::size_t>(y) * w;
                    const int sy = y + ky - pad;
                    if (sy < 0 || sy >= h) {
                        std::fill(dst, dst + w, 0.0);
                        continue;
                    }
                    const double* src = plane + static_cast<std::size_t>(sy) * w;
                    std::fill(dst, dst + x0, 0.0);
                    std::copy(src + x0 + dx, src + x1 + dx, dst + x0);
                    std::fill(dst + x1, dst + w, 0.0);
                }
            }
        }
    }
}

void col2im_add(const double* col, int cin, int h, int w, int k, double* in_grad) {
    const int pad = k / 2;
    const std::size_t hw = static_cast<std::size_t>(h) * w;
    for (int c = 0; c < cin; ++c) {
        double* plane = in_grad + c * hw;
        for (int ky = 0; ky < k; ++ky) {
            for (int kx = 0; kx < k; ++kx) {
                const double* row = col + ((static_cast<std::size_t>(c) * k + ky) * k + kx) * hw;
                const int dx = kx - pad;
                const int x0 = std::max(0, -dx), x1 = std::min(w, w - dx);
                for (int y = 0; y < h; ++y) {
                    const int sy = y + ky - pad;
                    if (sy < 0 || sy >= h)
                        continue;
                    const double* src = row + static_cast<std::size_t>(y) * w;
                    double* dst = plane + static_cast<std::size_t>(sy) * w;
                    for (int x = x0; x < x1; ++x)
                        dst[x + dx] += src[x];
                }
            }
        }
    }
}

// out (cout x hw) = W (cout x cin k^2) * col + bias
void conv_apply(const double* weight, const double* bias, const std::vector<double>& col, int cout, int rows,
                std::size_t hw, double* out) {
    ConstMatMap wm(weight, cout, rows);
    ConstMatMap cm(col.data(), rows, static_cast<Eigen::Index>(hw));
    MatMap om(out, cout, static_cast<Eigen::Index>(hw));
    om.noalias() = wm * cm;
    for (int o = 0; o < cout; ++o)
        om.row(o).array() += bias[o];
}

// dW += dOut * col^T, db += rowsum(dOut), optionally dCol = W^T dOut.
void conv_backward(const double* weight, const std::vector<double>& col, const double* d_out, int cout, int rows,
                   std::size_t hw, double* d_weight, double* d_bias, std::vector<double>* d_col) {
    ConstMatMap dom(d_out, cout, static_cast<Eigen::Index>(hw));
    ConstMatMap cm(col.data(), rows, static_cast<Eigen::Index>(hw));
    if (d_weight) {
        MatMap dw(d_weight, cout, rows);
        dw.noalias() += dom * cm.transpose();
        for (int o = 0; o < cout; ++o)
            d_bias[o] += dom.row(o).sum();
    }
    if (d_col) {
        d_col->resize(static_cast<std::size_t>(rows) * hw);
        ConstMatMap wm(weight, cout, rows);
        MatMap dc(d_col->data(), rows, static_cast<Eigen::Index>(hw));
        dc.noalias() = wm.transpose() * dom;
    }
}

void leaky(std::span<const double> pre, std::span<double> out, double slope) {
    for (std::size_t i = 0; i < pre.size(); ++i)
        out[i] = pre[i] > 0.0 ? pre[i] : slope * pre[i];
}

void leaky_backward(std::span<const double> pre, std::span<double> grad, double slope) {
    for (std::size_t i = 0; i < pre.size(); ++i)
        if (pre[i] <= 0.0)
            grad[i] *= slope;
}

std::string expert_name(int k, const char* leaf) { return "expert." + std::to_string(k) + "." + leaf; }

}  // namespace

// --- forward / backward -----------------------------------------------------

namespace {

// Single-output-channel same-padded conv evaluated directly: out = sum_c w_c * in_c + b.
void conv_to_scalar(const double* in, int cin, int h, int w, int k, const double* weight, double bias, double* out) {
    const int pad = k / 2;
    const std::size_t hw = static_cast<std::size_t>(h) * w;
    std::fill(out, out + hw, bias);
    for (int c = 0; c < cin; ++c) {
        const double* plane = in + c * hw;
        for (int ky = 0; ky < k; ++ky) {
            for (int kx = 0; kx < k; ++kx) {
                const double wv = weight[(c * k + ky) * k + kx];
                const int dx = kx - pad, dy = ky - pad;
                const int x0 = std::max(0, -dx), x1 = std::min(w, w - dx);
                const int y0 = std::max(0, -dy), y1 = std::min(h, h - dy);
                for (int y = y0; y < y1; ++y) {
                    const double* src = plane + static_cast<std::size_t>(y + dy) * w + dx;
                    double* dst = out + static_cast<std::size_t>(y) * w;
                    for (int x = x0; x < x1; ++x)
                        dst[x] += wv * src[x];
                }
            }
        }
    }
}

// Gradients of conv_to_scalar: d_weight/d_bias accumulate (if non-null), d_in accumulates.
void conv_to_scalar_backward(const double* in, int cin, int h, int w, int k, const double* weight,
                             const double* d_out, double* d_weight, double* d_bias, double* d_in) {
    const int pad = k / 2;
    const std::size_t hw = static_cast<std::size_t>(h) * w;
    if (d_bias) {
        double s = 0.0;
        for (std::size_t p = 0; p < hw; ++p)
            s += d_out[p];
        *d_bias += s;
    }
    for (int c = 0; c < cin; ++c) {
        const double* plane = in + c * hw;
        double* d_plane = d_in + c * hw;
        for (int ky = 0; ky < k; ++ky) {
            for (int kx = 0; kx < k; ++kx) {
                const int idx = (c * k + ky) * k + kx;
                const double wv = weight[idx];
                const int dx = kx - pad, dy = ky - pad;
                const int x0 = std::max(0, -dx), x1 = std::min(w, w - dx);
                const int y0 = std::max(0, -dy), y1 = std::min(h, h - dy);
                double acc = 0.0;
                for (int y = y0; y < y1; ++y) {
                    const std::size_t src_off = static_cast<std::size_t>(y + dy) * w + dx;
                    const double* g = d_out + static_cast<std::size_t>(y) * w;
                    const double* src = plane + src_off;
                    double* dsrc = d_plane + src_off;
                    for (int x = x0; x < x1; ++x)
                        dsrc[x] += wv * g[x];
                    acc += Eigen::Map<const Eigen::VectorXd>(g + x0, x1 - x0)
                               .dot(Eigen::Map<const Eigen::VectorXd>(src + x0, x1 - x0));
                }
                if (d_weight)
                    d_weight[idx] += acc;
            }
        }
    }
}

// Rows of the fused head matrix: K*Cf expert hidden units followed by K gate logits.
RowMatrix stacked_head_weights(const NetConfig& cfg, const ParamStore& params, std::vector<double>& bias) {
    const int cf = cfg.feature_channels, n_exp = cfg.num_experts;
    const int cols = cf * cfg.kernel_size * cfg.kernel_size;
    RowMatrix wm(n_exp * cf + n_exp, cols);
    bias.assign(static_cast<std::size_t>(n_exp) * cf + n_exp, 0.0);
    for (int e = 0; e < n_exp; ++e) {
        auto wv = params.values(expert_name(e, "conv1.weight"));
        std::copy(wv.begin(), wv.end(), wm.data() + static_cast<std::size_t>(e) * cf * cols);
        auto bv = params.values(expert_name(e, "conv1.bias"));
        std::copy(bv.begin(), bv.end(), bias.begin() + static_cast<std::size_t>(e) * cf);
    }
    auto gw = params.values("gate.weight");
    std::copy(gw.begin(), gw.end(), wm.data() + static_cast<std::size_t>(n_exp) * cf * cols);
    auto gb = params.values("gate.bias");
    std::copy(gb.begin(), gb.end(), bias.begin() + static_cast<std::size_t>(n_exp) * cf);
    return wm;
}

}  // namespace

ForwardTrace forward(const NetConfig& cfg, const ParamStore& params, const GridStack& input, double temperature) {
    ForwardTrace tr;
    forward(cfg, params, input, temperature, tr);
    return tr;
}

void forward(const NetConfig& cfg, const ParamStore& params, const GridStack& input, double temperature,
             ForwardTrace& tr) {
    cfg.validate();
    require(input.channels() == cfg.input_channels, "forward: input has " + std::to_string(input.channels()) +
                                                        " channels, config expects " +
                                                        std::to_string(cfg.input_channels));
    require(params.size() == parameter_count(cfg), "forward: parameter store does not match config");
    const int h = input.height(), w = input.width(), k = cfg.kernel_size, cf = cfg.feature_channels;
    const int k2 = k * k, n_exp = cfg.num_experts;
    const std::size_t hw = input.plane_size();

    tr.params_version = params.version();
    tr.height = h;
    tr.width = w;
    tr.encoder_cols.resize(cfg.encoder_layers);
    tr.encoder_pre.resize(cfg.encoder_layers);
    tr.hidden_pre.resize(n_exp);
    tr.hidden.resize(n_exp);

    thread_local std::vector<double> act;
    thread_local std::vector<double> head_out;
    act.assign(input.values().begin(), input.values().end());
    for (int l = 0; l < cfg.encoder_layers; ++l) {
        const int cin = l == 0 ? cfg.input_channels : cf;
        const std::string name = "encoder." + std::to_string(l);
        auto& col = tr.encoder_cols[l];
        auto& pre = tr.encoder_pre[l];
        col.resize(static_cast<std::size_t>(cin) * k2 * hw);
        im2col(act.data(), cin, h, w, k, col.data());
        pre.resize(static_cast<std::size_t>(cf) * hw);
        conv_apply(params.values(name + ".weight").data(), params.values(name + ".bias").data(), col, cf, cin * k2,
                   hw, pre.data());
        act.resize(pre.size());
        leaky(pre, act, cfg.leaky_slope);
    }

    tr.feature_col.resize(static_cast<std::size_t>(cf) * k2 * hw);
    im2col(act.data(), cf, h, w, k, tr.feature_col.data());

    // All expert first layers and the gate read F: one GEMM.
    std::vector<double> head_bias;
    const RowMatrix head_w = stacked_head_weights(cfg, params, head_bias);
    const int head_rows = static_cast<int>(head_w.rows());
    head_out.resize(static_cast<std::size_t>(head_rows) * hw);
    conv_apply(head_w.data(), head_bias.data(), tr.feature_col, head_rows, cf * k2, hw, head_out.data());

    GridStack experts(n_exp, h, w);
    for (int e = 0; e < n_exp; ++e) {
        const double* pre_begin = head_out.data() + static_cast<std::size_t>(e) * cf * hw;
        auto& pre = tr.hidden_pre[e];
        auto& hidden = tr.hidden[e];
        pre.assign(pre_begin, pre_begin + static_cast<std::size_t>(cf) * hw);
        hidden.resize(pre.size());
        leaky(pre, hidden, cfg.leaky_slope);
        conv_to_scalar(hidden.data(), cf, h, w, k, params.values(expert_name(e, "conv2.weight")).data(),
                       params.values(expert_name(e, "conv2.bias"))[0], experts.channel(e).data());
    }

    GridStack logits(n_exp, h, w);
    const double* logit_begin = head_out.data() + static_cast<std::size_t>(n_exp) * cf * hw;
    std::copy(logit_begin, logit_begin + static_cast<std::size_t>(n_exp) * hw, logits.values().begin());

    tr.output = make_mixture_output(std::move(experts), gate_softmax(logits, temperature));
}

void backward(const NetConfig& cfg, const ForwardTrace& trace, const HeadGradients& upstream, ParamStore& params) {
    require(trace.params_version == params.version(), "backward: stale forward trace (parameters changed)");
    const int h = trace.height, w = trace.width, k = cfg.kernel_size, cf = cfg.feature_channels;
    const int k2 = k * k, n_exp = cfg.num_experts;
    const std::size_t hw = static_cast<std::size_t>(h) * w;
    const auto& out = trace.output;
    require(upstream.expert_depths.channels() == n_exp && upstream.logits.channels() == n_exp,
            "backward: upstream gradient channel count mismatch");
    require(upstream.expert_depths.plane_size() == hw && upstream.logits.plane_size() == hw,
            "backward: upstream gradient dimensions mismatch");

    GridStack d_mu = upstream.expert_depths;
    GridStack d_logits = upstream.logits;
    if (upstream.fused) {
        // fused = sum_k w_k mu_k; dG_k = (g / tau) w_k (mu_k - fused)
        const auto& g = *upstream.fused;
        require(g.size() == hw, "backward: fused gradient dimensions mismatch");
        const auto& wts = out.gate.weights;
        const double inv_tau = 1.0 / out.gate.temperature;
        for (int e = 0; e < n_exp; ++e) {
            for (std::size_t p = 0; p < hw; ++p) {
                d_mu.at(e, p) += wts.at(e, p) * g[p];
                d_logits.at(e, p) +=
                    g[p] * inv_tau * wts.at(e, p) * (out.expert_depths.at(e, p) - out.fused_depth[p]);
            }
        }
    }

    auto grad_ptr = [&](const std::string& name) -> double* {
        const auto& seg = params.segment(name);
        return seg.frozen ? nullptr : params.mutable_grads().data() + seg.offset;
    };

    // Gradient w.r.t. the fused head pre-activations (expert hidden rows, then gate rows).
    const int head_rows = n_exp * cf + n_exp;
    thread_local std::vector<double> d_head;
    d_head.assign(static_cast<std::size_t>(head_rows) * hw, 0.0);
    for (int e = 0; e < n_exp; ++e) {
        double* d_hidden = d_head.data() + static_cast<std::size_t>(e) * cf * hw;
        conv_to_scalar_backward(trace.hidden[e].data(), cf, h, w, k,
                                params.values(expert_name(e, "conv2.weight")).data(), d_mu.channel(e).data(),
                                grad_ptr(expert_name(e, "conv2.weight")), grad_ptr(expert_name(e, "conv2.bias")),
                                d_hidden);
        leaky_backward(trace.hidden_pre[e], {d_hidden, static_cast<std::size_t>(cf) * hw}, cfg.leaky_slope);
    }
    std::copy(d_logits.values().begin(), d_logits.values().end(),
              d_head.begin() + static_cast<std::ptrdiff_t>(n_exp) * cf * hw);

    std::vector<double> head_bias;
    const RowMatrix head_w = stacked_head_weights(cfg, params, head_bias);
    const int cols = cf * k2;
    RowMatrix d_head_w = RowMatrix::Zero(head_rows, cols);
    std::vector<double> d_head_b(head_rows, 0.0);
    thread_local std::vector<double> d_feature_col;
    conv_backward(head_w.data(), trace.feature_col, d_head.data(), head_rows, cols, hw, d_head_w.data(),
                  d_head_b.data(), &d_feature_col);

    auto scatter = [&](const std::string& name, std::size_t row0, int rows) {
        double* gw = grad_ptr(name + ".weight");
        double* gb = grad_ptr(name + ".bias");
        if (!gw)
            return;
        const double* src = d_head_w.data() + row0 * cols;
        for (std::size_t i = 0; i < static_cast<std::size_t>(rows) * cols; ++i)
            gw[i] += src[i];
        for (int r = 0; r < rows; ++r)
            gb[r] += d_head_b[row0 + r];
    };
    for (int e = 0; e < n_exp; ++e)
        scatter("expert." + std::to_string(e) + ".conv1", static_cast<std::size_t>(e) * cf, cf);
    scatter("gate", static_cast<std::size_t>(n_exp) * cf, n_exp);

    thread_local std::vector<double> d_act;
    d_act.assign(static_cast<std::size_t>(cf) * hw, 0.0);
    col2im_add(d_feature_col.data(), cf, h, w, k, d_act.data());

    thread_local std::vector<double> d_col;
    for (int l = cfg.encoder_layers - 1; l >= 0; --l) {
        const std::string name = "encoder." + std::to_string(l);
        double* gw = grad_ptr(name + ".weight");
        if (!gw)
            break;  // frozen encoder: nothing below needs gradients
        const int cin = l == 0 ? cfg.input_channels : cf;
        leaky_backward(trace.encoder_pre[l], d_act, cfg.leaky_slope);
        conv_backward(params.values(name + ".weight").data(), trace.encoder_cols[l], d_act.data(), cf, cin * k2, hw,
                      gw, grad_ptr(name + ".bias"), l > 0 ? &d_col : nullptr);
        if (l > 0) {
            std::fill(d_act.begin(), d_act.end(), 0.0);
            col2im_add(d_col.data(), cf, h, w, k, d_act.data());
        }
    }
}

// --- checkpoint -------------------------------------------------------------

namespace {

constexpr char kCheckpointMagic[4] = {'M', 'D', 'C', '1'};

std::int64_t bits(double v) { return std::bit_cast<std::int64_t>(v); }

}  // namespace

std::vector<std::uint8_t> encode_checkpoint(const Checkpoint& ckpt) {
    const auto& c = ckpt.config;
    const std::vector<std::pair<std::string, std::int64_t>> fields = {
        {"input_channels", c.input_channels},
        {"feature_channels", c.feature_channels},
        {"num_experts", c.num_experts},
        {"kernel_size", c.kernel_size},
        {"encoder_layers", c.encoder_layers},
        {"seed", static_cast<std::int64_t>(c.seed)},
        {"head_variant", static_cast<std::int64_t>(c.variant)},
        {"sigma_init_bits", bits(c.sigma_init)},
        {"leaky_slope_bits", bits(c.leaky_slope)},
        {"output_bias_bits", bits(c.output_bias)},
        {"temperature_bits", bits(ckpt.temperature)},
    };
    std::vector<std::uint8_t> out(std::begin(kCheckpointMagic), std::end(kCheckpointMagic));
    detail::put_u32(out, static_cast<std::uint32_t>(fields.size()));
    for (const auto& [name, value] : fields) {
        detail::put_u32(out, static_cast<std::uint32_t>(name.size()));
        out.insert(out.end(), name.begin(), name.end());
        detail::put_u64(out, static_cast<std::uint64_t>(value));
    }
    detail::put_u64(out, ckpt.params.size());
    for (double v : ckpt.params.values())
        detail::put_f64(out, v);
    return out;
}

Checkpoint decode_checkpoint(const std::vector<std::uint8_t>& bytes, const std::string& origin) {
    std::size_t pos = 0;
    auto need = [&](std::size_t n) {
        if (bytes.size() - pos < n)
            throw FormatError(origin + ": truncated MDC1 checkpoint at byte " + std::to_string(pos));
    };
    need(8);
    if (!std::equal(std::begin(kCheckpointMagic), std::end(kCheckpointMagic), bytes.begin()))
        throw FormatError(origin + ": bad magic, expected MDC1");
    pos = 4;
    const std::uint32_t n_fields = detail::get_u32(bytes.data() + pos);
    pos += 4;
    Checkpoint ckpt;
    auto& c = ckpt.config;
    for (std::uint32_t i = 0; i < n_fields; ++i) {
        need(4);
        const std::uint32_t len = detail::get_u32(bytes.data() + pos);
        pos += 4;
        need(len + 8);
        const std::string name(bytes.begin() + pos, bytes.begin() + pos + len);
        pos += len;
        const auto v = static_cast<std::int64_t>(detail::get_u64(bytes.data() + pos));
        pos += 8;
        const auto as_double = std::bit_cast<double>(v);
        if (name == "input_channels") c.input_channels = static_cast<int>(v);
        else if (name == "feature_channels") c.feature_channels = static_cast<int>(v);
        else if (name == "num_experts") c.num_experts = static_cast<int>(v);
        else if (name == "kernel_size") c.kernel_size = static_cast<int>(v);
        else if (name == "encoder_layers") c.encoder_layers = static_cast<int>(v);
        else if (name == "seed") c.seed = static_cast<std::uint64_t>(v);
        else if (name == "head_variant") c.variant = static_cast<HeadVariant>(v);
        else if (name == "sigma_init_bits") c.sigma_init = as_double;
        else if (name == "leaky_slope_bits") c.leaky_slope = as_double;
        else if (name == "output_bias_bits") c.output_bias = as_double;
        else if (name == "temperature_bits") ckpt.temperature = as_double;
        else throw FormatError(origin + ": unknown checkpoint field '" + name + "'");
    }
    try {
        c.validate();
    } catch (const ContractError& e) {
        throw FormatError(origin + ": invalid config block: " + e.what());
    }
    need(8);
    const std::uint64_t n_params = detail::get_u64(bytes.data() + pos);
    pos += 8;
    if (n_params != parameter_count(c))
        throw FormatError(origin + ": parameter count " + std::to_string(n_params) + " does not match config (" +
                          std::to_string(parameter_count(c)) + ")");
    if (bytes.size() - pos != n_params * 8)
        throw FormatError(origin + ": payload size mismatch, expected " + std::to_string(pos + n_params * 8) +
                          " bytes, got " + std::to_string(bytes.size()));
    NetConfig layout = c;
    ckpt.params = init_params(layout);
    auto vals = ckpt.params.mutable_values();
    for (std::size_t i = 0; i < n_params; ++i)
        vals[i] = detail::get_f64(bytes.data() + pos + 8 * i);
    return ckpt;
}

void write_checkpoint(const Checkpoint& ckpt, const std::string& path) {
    detail::write_file_bytes(path, encode_checkpoint(ckpt));
}

Checkpoint read_checkpoint(const std::string& path) {
    return decode_checkpoint(detail::read_file_bytes(path), path);
}

}  // namespace moe_depth
