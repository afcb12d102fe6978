#include "moe_depth/config.hpp"

#include <charconv>
#include <cmath>
#include <functional>
#include <limits>

#include "moe_depth/detail/binary_io.hpp"
#include "moe_depth/error.hpp"
#include "moe_depth/keyvalue.hpp"

namespace moe_depth {

const std::vector<ConfigKey>& config_schema() {
    static const std::vector<ConfigKey> schema = {
        {"seed", KeyType::Int, "0", "run seed; every random stream derives from it"},
        // scenes
        {"count", KeyType::Int, "32", "number of scenes to generate"},
        {"height", KeyType::Int, "64", "scene height in pixels"},
        {"width", KeyType::Int, "64", "scene width in pixels"},
        {"objects", KeyType::Int, "-1", "objects per scene; -1 draws uniformly from 1..5"},
        {"near", KeyType::Real, "1", "near end of the depth range (m)"},
        {"far", KeyType::Real, "10", "far end of the depth range (m)"},
        {"noise", KeyType::Real, "0.05", "input noise std as a fraction of the depth range"},
        {"disc-floor", KeyType::Real, "0.25", "smallest jump counted as a discontinuity (m)"},
        {"background-coeff", KeyType::Real, "0.03", "background polynomial coefficient bound"},
        {"max-retries", KeyType::Int, "200", "placement attempts per object"},
        // network
        {"experts", KeyType::Int, "4", "number of experts K"},
        {"features", KeyType::Int, "16", "feature channels"},
        {"kernel", KeyType::Int, "3", "convolution kernel size (odd)"},
        {"encoder-layers", KeyType::Int, "2", "encoder conv layers"},
        {"sigma-init", KeyType::Real, "0.001", "std of the per-expert weight perturbation"},
        {"leaky-slope", KeyType::Real, "0.01", "negative slope of the activation"},
        {"output-bias", KeyType::Real, "5.5", "initial expert output bias (m)"},
        {"head", KeyType::Text, "pixel", "expert placement: pixel (full-head, pre-fusion reserved)"},
        // loss
        {"sigma", KeyType::Real, "1", "mixture component std"},
        {"lambda-d", KeyType::Real, "1", "weight of the mixture likelihood"},
        {"lambda-e", KeyType::Real, "0.0001", "weight of the gate entropy"},
        // optimisation
        {"steps", KeyType::Int, "2000", "optimizer steps"},
        {"lr", KeyType::Real, "0.001", "learning rate"},
        {"beta1", KeyType::Real, "0.9", "first-moment decay"},
        {"beta2", KeyType::Real, "0.999", "second-moment decay"},
        {"eps", KeyType::Real, "1e-08", "denominator epsilon"},
        {"weight-decay", KeyType::Real, "0.05", "decoupled weight decay (weights only)"},
        {"tau0", KeyType::Real, "1", "initial gate temperature"},
        {"tau-decay", KeyType::Real, "0.995", "temperature decay per step"},
        {"tau-floor", KeyType::Real, "0.1", "temperature floor"},
        {"freeze-encoder", KeyType::Bool, "0", "keep encoder weights at initialization"},
        // evaluation
        {"edge-threshold", KeyType::Real, "50", "Sobel magnitude threshold"},
        {"edge-scale", KeyType::Bool, "1", "scale depth to [0,255] before Sobel"},
        {"median-scaling", KeyType::Bool, "1", "median-scale predictions for depth metrics"},
        {"flying-k", KeyType::Int, "8", "image-space neighbours of the flying-point statistic"},
        {"flying-ratio", KeyType::Real, "3", "flying-point threshold as a multiple of the median"},
        {"confidence-mask", KeyType::Real, "1", "percentile of lowest-confidence pixels dropped"},
    };
    return schema;
}

std::string format_shortest(double v) {
    // Plain notation for everyday magnitudes, exponent form outside them.
    char buf[400];
    const double a = std::abs(v);
    const auto fmt = (a == 0.0 || (a >= 1e-5 && a < 1e16)) ? std::chars_format::fixed : std::chars_format::general;
    auto [end, ec] = std::to_chars(buf, buf + sizeof buf, v, fmt);
    return std::string(buf, end);
}

namespace {

const ConfigKey* find_key(const std::string& name) {
    for (const auto& k : config_schema())
        if (k.name == name)
            return &k;
    return nullptr;
}

struct Range {
    double lo;
    bool lo_open;
    double hi;
};

// Value ranges; keys not listed accept any value of their type.
const std::map<std::string, Range>& ranges() {
    constexpr double inf = std::numeric_limits<double>::infinity();
    static const std::map<std::string, Range> r = {
        {"seed", {0, false, inf}},
        {"count", {1, false, 100000}},       {"height", {1, false, 4096}},
        {"width", {1, false, 4096}},         {"objects", {-1, false, 64}},
        {"near", {0, true, inf}},            {"far", {0, true, inf}},
        {"noise", {0, false, inf}},          {"disc-floor", {0, true, inf}},
        {"background-coeff", {0, false, inf}}, {"max-retries", {1, false, inf}},
        {"experts", {1, false, 64}},         {"features", {1, false, 1024}},
        {"kernel", {1, false, 15}},          {"encoder-layers", {1, false, 16}},
        {"sigma-init", {0, false, inf}},     {"leaky-slope", {0, false, 1}},
        {"sigma", {0, true, inf}},           {"lambda-d", {0, false, inf}},
        {"lambda-e", {0, false, inf}},       {"steps", {0, false, inf}},
        {"lr", {0, false, inf}},             {"beta1", {0, false, 1}},
        {"beta2", {0, false, 1}},            {"eps", {0, true, inf}},
        {"weight-decay", {0, false, inf}},   {"tau0", {0, true, inf}},
        {"tau-decay", {0, true, 1}},         {"tau-floor", {0, true, inf}},
        {"edge-threshold", {0, true, inf}},  {"flying-k", {1, false, 1000}},
        {"flying-ratio", {0, true, inf}},    {"confidence-mask", {0, false, 99.999999}},
    };
    return r;
}

std::string canonical(const ConfigKey& key, const std::string& text) {
    auto bad = [&](const std::string& what) {
        return UsageError("--" + key.name + ": " + what + ", got '" + text + "'");
    };
    double numeric = 0.0;
    std::string out;
    switch (key.type) {
    case KeyType::Int: {
        long long v = 0;
        const auto* end = text.data() + text.size();
        auto [p, ec] = std::from_chars(text.data(), end, v);
        if (text.empty() || ec != std::errc() || p != end)
            throw bad("expected an integer");
        numeric = static_cast<double>(v);
        out = std::to_string(v);
        break;
    }
    case KeyType::Real: {
        double v = 0.0;
        const auto* end = text.data() + text.size();
        auto [p, ec] = std::from_chars(text.data(), end, v);
        if (text.empty() || ec != std::errc() || p != end || !std::isfinite(v))
            throw bad("expected a finite number");
        numeric = v;
        out = format_shortest(v);
        break;
    }
    case KeyType::Bool:
        if (text == "1" || text == "true" || text == "yes" || text == "on")
            return "1";
        if (text == "0" || text == "false" || text == "no" || text == "off")
            return "0";
        throw bad("expected a boolean");
    case KeyType::Text:
        if (text.find('\n') != std::string::npos)
            throw bad("value must be a single line");
        if (key.name == "head") {
            try {
                head_variant_from_string(text);
            } catch (const ContractError& e) {
                throw UsageError(std::string("--head: ") + e.what());
            }
        }
        return text;
    }
    if (auto it = ranges().find(key.name); it != ranges().end()) {
        const Range& r = it->second;
        const bool low_ok = r.lo_open ? numeric > r.lo : numeric >= r.lo;
        if (!low_ok || numeric > r.hi)
            throw bad("out of range");
    }
    if (key.name == "kernel" && static_cast<long long>(numeric) % 2 == 0)
        throw bad("kernel size must be odd");
    return out;
}

}  // namespace

RunConfig::RunConfig() {
    for (const auto& k : config_schema())
        values_[k.name] = k.default_value;
}

void RunConfig::set(const std::string& key, const std::string& value) {
    const ConfigKey* k = find_key(key);
    if (!k)
        throw UsageError("unknown configuration key '" + key + "'");
    values_[key] = canonical(*k, value);
}

const std::string& RunConfig::get(const std::string& key) const {
    auto it = values_.find(key);
    if (it == values_.end())
        throw ContractError("RunConfig: unknown key '" + key + "'");
    return it->second;
}

long long RunConfig::get_int(const std::string& key) const { return parse_int(get(key), key); }
double RunConfig::get_real(const std::string& key) const { return parse_double(get(key), key); }
bool RunConfig::get_bool(const std::string& key) const { return get(key) == "1"; }

NetConfig RunConfig::net() const {
    NetConfig n;
    n.input_channels = kSceneInputChannels;
    n.feature_channels = static_cast<int>(get_int("features"));
    n.num_experts = static_cast<int>(get_int("experts"));
    n.kernel_size = static_cast<int>(get_int("kernel"));
    n.encoder_layers = static_cast<int>(get_int("encoder-layers"));
    n.seed = static_cast<std::uint64_t>(get_int("seed"));
    n.sigma_init = get_real("sigma-init");
    n.leaky_slope = get_real("leaky-slope");
    n.output_bias = get_real("output-bias");
    n.variant = head_variant_from_string(get("head"));
    return n;
}

TrainConfig RunConfig::train() const {
    TrainConfig t;
    t.steps = static_cast<int>(get_int("steps"));
    t.seed = static_cast<std::uint64_t>(get_int("seed"));
    t.tau0 = get_real("tau0");
    t.tau_decay = get_real("tau-decay");
    t.tau_floor = get_real("tau-floor");
    t.optim.lr = get_real("lr");
    t.optim.beta1 = get_real("beta1");
    t.optim.beta2 = get_real("beta2");
    t.optim.eps = get_real("eps");
    t.optim.weight_decay = get_real("weight-decay");
    t.loss.sigma = get_real("sigma");
    t.loss.lambda_d = get_real("lambda-d");
    t.loss.lambda_e = get_real("lambda-e");
    t.freeze_encoder = get_bool("freeze-encoder");
    return t;
}

SceneSpec RunConfig::scene() const {
    SceneSpec s;
    s.height = static_cast<int>(get_int("height"));
    s.width = static_cast<int>(get_int("width"));
    s.num_objects = static_cast<int>(get_int("objects"));
    s.near_depth = get_real("near");
    s.far_depth = get_real("far");
    s.noise_std = get_real("noise");
    s.disc_floor = get_real("disc-floor");
    s.background_coeff = get_real("background-coeff");
    s.max_retries = static_cast<int>(get_int("max-retries"));
    s.seed = static_cast<std::uint64_t>(get_int("seed"));
    return s;
}

EdgeConfig RunConfig::edges() const { return EdgeConfig{get_real("edge-threshold"), get_bool("edge-scale")}; }

RunConfig parse_config(const std::string& text, const std::string& origin) {
    RunConfig cfg;
    KeyValues kv;
    try {
        kv = parse_key_values(text, origin);
    } catch (const FormatError& e) {
        throw UsageError(e.what());
    }
    for (const auto& [k, v] : kv) {
        try {
            cfg.set(k, v);
        } catch (const UsageError& e) {
            throw UsageError(origin + ": " + e.what());
        }
    }
    return cfg;
}

RunConfig read_config(const std::string& path) { return parse_config(detail::read_file_text(path), path); }

std::string print_config(const RunConfig& cfg) {
    KeyValues kv;
    for (const auto& k : config_schema())
        kv.emplace_back(k.name, cfg.get(k.name));
    return format_key_values(kv);
}

}  // namespace moe_depth
