#pragma once

#include <filesystem>
#include <istream>
#include <map>
#include <ostream>
#include <string>
#include <vector>

namespace dmwa {

// Flat `key = value` text. Blank lines and lines starting with '#' are
// ignored; later duplicates override earlier ones.
using KeyValues = std::map<std::string, std::string>;

KeyValues parse_key_values(std::istream& in, const std::string& source);
KeyValues read_key_values(const std::filesystem::path& path);
void write_key_values(std::ostream& out, const KeyValues& entries);

std::string trim(const std::string& s);
std::vector<std::string> split(const std::string& s, char sep);

// Typed lookups; throw ConfigError naming the key on malformed values.
int get_int(const KeyValues& kv, const std::string& key, int fallback);
long long get_int64(const KeyValues& kv, const std::string& key, long long fallback);
double get_double(const KeyValues& kv, const std::string& key, double fallback);
bool get_bool(const KeyValues& kv, const std::string& key, bool fallback);
std::string get_string(const KeyValues& kv, const std::string& key, const std::string& fallback);
const std::string& require(const KeyValues& kv, const std::string& key);

std::string format_double(double v);

}  // namespace dmwa
