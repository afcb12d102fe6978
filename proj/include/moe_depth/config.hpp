#pragma once

#include <cstdint>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include "moe_depth/evalkit.hpp"
#include "moe_depth/network.hpp"
#include "moe_depth/synthscene.hpp"
#include "moe_depth/trainer.hpp"

namespace moe_depth {

/// Bad user input: unknown key, malformed or out-of-range value. Maps to exit code 2.
class UsageError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

enum class KeyType { Int, Real, Bool, Text };

struct ConfigKey {
    std::string name;
    KeyType type;
    std::string default_value;
    std::string help;
};

/// Every recognised key, in print order.
const std::vector<ConfigKey>& config_schema();

/// Flat `key=value` run configuration. Values are stored in canonical text
/// form (shortest round-trip decimals, 0/1 booleans), so print(parse(print(c)))
/// reproduces print(c) byte for byte.
class RunConfig {
public:
    RunConfig();  // all defaults

    /// Validates and canonicalizes; throws UsageError.
    void set(const std::string& key, const std::string& value);
    const std::string& get(const std::string& key) const;

    long long get_int(const std::string& key) const;
    double get_real(const std::string& key) const;
    bool get_bool(const std::string& key) const;

    NetConfig net() const;
    TrainConfig train() const;
    SceneSpec scene() const;
    EdgeConfig edges() const;

    friend bool operator==(const RunConfig&, const RunConfig&) = default;

private:
    std::map<std::string, std::string> values_;
};

RunConfig parse_config(const std::string& text, const std::string& origin = "<config>");
RunConfig read_config(const std::string& path);
std::string print_config(const RunConfig& cfg);

/// Shortest decimal text that parses back to the same double.
std::string format_shortest(double v);

}  // namespace moe_depth
