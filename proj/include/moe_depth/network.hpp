#pragma once

#include <algorithm>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "moe_depth/grid.hpp"
#include "moe_depth/mixture.hpp"

namespace moe_depth {

/// Where the experts branch off. Only the pixel-space head is implemented;
/// the other two names are reserved so configs naming them fail loudly.
enum class HeadVariant { PixelMoE, FullHeadMoE, PreFusionMoE };

std::string to_string(HeadVariant v);
HeadVariant head_variant_from_string(const std::string& name);

struct NetConfig {
    int input_channels = 3;
    int feature_channels = 16;
    int num_experts = 4;
    int kernel_size = 3;
    int encoder_layers = 2;
    std::uint64_t seed = 0;
    double sigma_init = 0.001;
    double leaky_slope = 0.01;
    double output_bias = 5.5;  // initial expert output bias, in depth units
    HeadVariant variant = HeadVariant::PixelMoE;

    void validate() const;
};

/// Exact parameter count:
///   encoder: Cin*Cf*k^2 + Cf + (L-1)*(Cf^2*k^2 + Cf)
///   experts: K*(Cf^2*k^2 + Cf + Cf*k^2 + 1)
///   gate:    K*Cf*k^2 + K
std::size_t parameter_count(const NetConfig& cfg);

struct ParamSegment {
    std::string name;
    std::size_t offset = 0;
    std::size_t size = 0;
    std::vector<int> shape;
    bool decay = true;   // false for biases
    bool frozen = false;
};

/// Flat parameter vector with a parallel gradient vector and named segments.
///
/// Every mutation of the values goes through mutable_values(), which bumps
/// the version counter so stale forward traces are detected in backward().
class ParamStore {
public:
    std::size_t size() const noexcept { return values_.size(); }

    std::size_t add_segment(const std::string& name, std::vector<int> shape, bool decay);
    /// Copy every segment of `other` under `prefix + name`.
    void append(const std::string& prefix, const ParamStore& other);

    const std::vector<ParamSegment>& segments() const noexcept { return segments_; }
    const ParamSegment& segment(const std::string& name) const;
    bool has_segment(const std::string& name) const;

    std::span<const double> values() const noexcept { return values_; }
    std::span<const double> values(const std::string& name) const;
    std::span<double> mutable_values();
    std::span<double> mutable_values(const std::string& name);

    std::span<const double> grads() const noexcept { return grads_; }
    std::span<double> mutable_grads() noexcept { return grads_; }
    std::span<double> mutable_grads(const std::string& name);
    void zero_grads();

    const std::vector<std::uint8_t>& decay_mask() const noexcept { return decay_mask_; }
    void set_frozen(const std::string& name_prefix, bool frozen);

    std::uint64_t version() const noexcept { return version_; }

private:
    std::vector<double> values_;
    std::vector<double> grads_;
    std::vector<std::uint8_t> decay_mask_;
    std::vector<ParamSegment> segments_;
    std::uint64_t version_ = 0;
};

/// Base expert layout: conv1.weight, conv1.bias, conv2.weight, conv2.bias.
ParamStore make_expert_segments(int feature_channels, int kernel_size);

/// Expert k = base + iid N(0, sigma_init^2) noise from the stream keyed by (seed, k).
/// Segments of the result are named "expert.<k>.<base segment name>".
ParamStore init_experts_perturbed(const ParamStore& base, int num_experts, double sigma_init, std::uint64_t seed);

/// Full network initialization: fan-in scaled uniform encoder and gate, one
/// shared base expert, per-expert perturbation.
ParamStore init_params(const NetConfig& cfg);

/// Cached activations of one forward pass.
struct ForwardTrace {
    std::uint64_t params_version = 0;
    int height = 0;
    int width = 0;
    std::vector<std::vector<double>> encoder_cols;   // im2col of each encoder layer input
    std::vector<std::vector<double>> encoder_pre;    // pre-activation of each encoder layer
    std::vector<double> feature_col;                 // im2col of the fused features F
    std::vector<std::vector<double>> hidden_pre;     // per expert, pre-activation of conv1
    std::vector<std::vector<double>> hidden;         // per expert, activated conv1 output
    MixtureOutput output;
};

ForwardTrace forward(const NetConfig& cfg, const ParamStore& params, const GridStack& input, double temperature);

/// Same as above, reusing the buffers of an existing trace.
void forward(const NetConfig& cfg, const ParamStore& params, const GridStack& input, double temperature,
             ForwardTrace& trace);

/// Upstream gradients w.r.t. the head outputs. `fused` is optional and is
/// routed through the soft combination into experts and logits.
struct HeadGradients {
    GridStack expert_depths;
    GridStack logits;
    std::optional<Grid> fused;
};

/// Accumulates parameter gradients into params.grads. Frozen segments are skipped.
void backward(const NetConfig& cfg, const ForwardTrace& trace, const HeadGradients& upstream, ParamStore& params);

/// Exponential temperature decay with a floor, one tick per optimizer step.
struct TemperatureSchedule {
    double tau = 1.0;
    double decay = 0.995;
    double floor = 0.1;

    double step() {
        tau = std::max(tau * decay, floor);
        return tau;
    }
};

/// MDC1 checkpoint: "MDC1" | u32 field count | fields (u32 name length, name
/// bytes, i64 value) | u64 parameter count | f64 values in layout order.
struct Checkpoint {
    NetConfig config;
    double temperature = 1.0;
    ParamStore params;
};

std::vector<std::uint8_t> encode_checkpoint(const Checkpoint& ckpt);
Checkpoint decode_checkpoint(const std::vector<std::uint8_t>& bytes, const std::string& origin = "<memory>");
void write_checkpoint(const Checkpoint& ckpt, const std::string& path);
Checkpoint read_checkpoint(const std::string& path);

}  // namespace moe_depth
