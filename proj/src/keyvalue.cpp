#include "dmwa/keyvalue.hpp"

#include <charconv>
#include <fstream>
#include <sstream>

#include "dmwa/error.hpp"

namespace dmwa {

std::string trim(const std::string& s) {
  const auto first = s.find_first_not_of(" \t\r\n");
  if (first == std::string::npos) return {};
  const auto last = s.find_last_not_of(" \t\r\n");
  return s.substr(first, last - first + 1);
}

std::vector<std::string> split(const std::string& s, char sep) {
  std::vector<std::string> out;
  std::string item;
  std::istringstream in(s);
  while (std::getline(in, item, sep)) out.push_back(trim(item));
  return out;
}

KeyValues parse_key_values(std::istream& in, const std::string& source) {
  KeyValues kv;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const std::string t = trim(line);
    if (t.empty() || t.front() == '#') continue;
    const auto eq = t.find('=');
    if (eq == std::string::npos) {
      throw ConfigError(source + ":" + std::to_string(line_no) + ": expected `key = value`, got `" + t +
                        "`");
    }
    const std::string key = trim(t.substr(0, eq));
    if (key.empty()) throw ConfigError(source + ":" + std::to_string(line_no) + ": empty key");
    kv[key] = trim(t.substr(eq + 1));
  }
  return kv;
}

KeyValues read_key_values(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open " + path.string());
  return parse_key_values(in, path.string());
}

void write_key_values(std::ostream& out, const KeyValues& entries) {
  for (const auto& [k, v] : entries) out << k << " = " << v << '\n';
}

const std::string& require(const KeyValues& kv, const std::string& key) {
  const auto it = kv.find(key);
  if (it == kv.end()) throw ConfigError("missing key `" + key + "`");
  return it->second;
}

namespace {

template <typename T>
T parse_number(const KeyValues& kv, const std::string& key, T fallback) {
  const auto it = kv.find(key);
  if (it == kv.end()) return fallback;
  const std::string& s = it->second;
  T value{};
  const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), value);
  if (ec != std::errc() || ptr != s.data() + s.size()) {
    throw ConfigError("key `" + key + "`: cannot parse `" + s + "`");
  }
  return value;
}

}  // namespace

int get_int(const KeyValues& kv, const std::string& key, int fallback) {
  return parse_number<int>(kv, key, fallback);
}

long long get_int64(const KeyValues& kv, const std::string& key, long long fallback) {
  return parse_number<long long>(kv, key, fallback);
}

double get_double(const KeyValues& kv, const std::string& key, double fallback) {
  return parse_number<double>(kv, key, fallback);
}

bool get_bool(const KeyValues& kv, const std::string& key, bool fallback) {
  const auto it = kv.find(key);
  if (it == kv.end()) return fallback;
  const std::string& s = it->second;
  if (s == "true" || s == "1" || s == "yes" || s == "on") return true;
  if (s == "false" || s == "0" || s == "no" || s == "off") return false;
  throw ConfigError("key `" + key + "`: expected a boolean, got `" + s + "`");
}

std::string get_string(const KeyValues& kv, const std::string& key, const std::string& fallback) {
  const auto it = kv.find(key);
  return it == kv.end() ? fallback : it->second;
}

std::string format_double(double v) {
  char buf[64];
  const auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, ptr);
}

}  // namespace dmwa
