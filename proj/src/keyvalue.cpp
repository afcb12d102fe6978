#include "moe_depth/keyvalue.hpp"

#include <charconv>
#include <cstdio>
#include <sstream>

#include "moe_depth/error.hpp"

namespace moe_depth {

namespace {

std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos)
        return {};
    return s.substr(b, s.find_last_not_of(" \t\r") - b + 1);
}

}  // namespace

std::string format_double(double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

double parse_double(const std::string& text, const std::string& what) {
    try {
        std::size_t used = 0;
        const double v = std::stod(text, &used);
        if (used == text.size())
            return v;
    } catch (const std::exception&) {
    }
    throw FormatError(what + ": expected a number, got '" + text + "'");
}

long long parse_int(const std::string& text, const std::string& what) {
    long long v = 0;
    const auto* end = text.data() + text.size();
    auto [ptr, ec] = std::from_chars(text.data(), end, v);
    if (ec != std::errc() || ptr != end || text.empty())
        throw FormatError(what + ": expected an integer, got '" + text + "'");
    return v;
}

KeyValues parse_key_values(const std::string& text, const std::string& origin) {
    KeyValues out;
    std::istringstream in(text);
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        line = trim(line);
        if (line.empty() || line[0] == '#')
            continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos || eq == 0)
            throw FormatError(origin + ":" + std::to_string(lineno) + ": expected key=value");
        out.emplace_back(trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
    }
    return out;
}

std::string format_key_values(const KeyValues& kv) {
    std::string out;
    for (const auto& [k, v] : kv)
        out += k + "=" + v + "\n";
    return out;
}

std::map<std::string, std::string> to_map(const KeyValues& kv) { return {kv.begin(), kv.end()}; }

const std::string& lookup(const std::map<std::string, std::string>& m, const std::string& key,
                          const std::string& origin) {
    auto it = m.find(key);
    if (it == m.end())
        throw FormatError(origin + ": missing key '" + key + "'");
    return it->second;
}

}  // namespace moe_depth
