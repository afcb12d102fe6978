#pragma once

#include <map>
#include <string>
#include <utility>
#include <vector>

namespace moe_depth {

/// Shortest decimal text that round-trips a double exactly (17 significant digits).
std::string format_double(double v);

double parse_double(const std::string& text, const std::string& what);
long long parse_int(const std::string& text, const std::string& what);

using KeyValues = std::vector<std::pair<std::string, std::string>>;

/// `key=value` lines; blank lines and lines starting with '#' are skipped.
KeyValues parse_key_values(const std::string& text, const std::string& origin);
std::string format_key_values(const KeyValues& kv);

std::map<std::string, std::string> to_map(const KeyValues& kv);
const std::string& lookup(const std::map<std::string, std::string>& m, const std::string& key,
                          const std::string& origin);

}  // namespace moe_depth
