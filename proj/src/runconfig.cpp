#include "gaze3d/runconfig.hpp"

#include <charconv>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "gaze3d/error.hpp"
#include "gaze3d/rng.hpp"

namespace gaze3d {

std::string format_double(double v) {
  // shortest decimal form that round-trips
  for (int prec = 1; prec <= 17; ++prec) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.*g", prec, v);
    double back = 0.0;
    std::sscanf(buf, "%lf", &back);
    if (back == v) return buf;
  }
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

void KeyValueConfig::set_int(const std::string& key, long long v) { set(key, std::to_string(v)); }
void KeyValueConfig::set_uint(const std::string& key, unsigned long long v) {
  set(key, std::to_string(v));
}
void KeyValueConfig::set_double(const std::string& key, double v) { set(key, format_double(v)); }
void KeyValueConfig::set_bool(const std::string& key, bool v) { set(key, v ? "true" : "false"); }

std::optional<std::string> KeyValueConfig::get(const std::string& key) const {
  auto it = values_.find(key);
  if (it == values_.end()) return std::nullopt;
  return it->second;
}

std::string KeyValueConfig::get_or(const std::string& key, const std::string& fallback) const {
  auto v = get(key);
  return v ? *v : fallback;
}

long long KeyValueConfig::get_int(const std::string& key) const {
  const auto v = get(key);
  if (!v) throw domain_error("config: missing key '" + key + "'");
  long long out = 0;
  const auto res = std::from_chars(v->data(), v->data() + v->size(), out);
  if (res.ec != std::errc() || res.ptr != v->data() + v->size())
    throw domain_error("config: key '" + key + "' is not an integer: '" + *v + "'");
  return out;
}

unsigned long long KeyValueConfig::get_uint(const std::string& key) const {
  const auto v = get(key);
  if (!v) throw domain_error("config: missing key '" + key + "'");
  unsigned long long out = 0;
  const auto res = std::from_chars(v->data(), v->data() + v->size(), out);
  if (res.ec != std::errc() || res.ptr != v->data() + v->size())
    throw domain_error("config: key '" + key + "' is not an unsigned integer: '" + *v + "'");
  return out;
}

double KeyValueConfig::get_double(const std::string& key) const {
  const auto v = get(key);
  if (!v) throw domain_error("config: missing key '" + key + "'");
  char* end = nullptr;
  const double out = std::strtod(v->c_str(), &end);
  if (end != v->c_str() + v->size())
    throw domain_error("config: key '" + key + "' is not a number: '" + *v + "'");
  return out;
}

bool KeyValueConfig::get_bool(const std::string& key) const {
  const auto v = get(key);
  if (!v) throw domain_error("config: missing key '" + key + "'");
  if (*v == "true" || *v == "1") return true;
  if (*v == "false" || *v == "0") return false;
  throw domain_error("config: key '" + key + "' is not a boolean: '" + *v + "'");
}

std::string KeyValueConfig::canonical_text() const {
  std::string out;
  for (const auto& [k, v] : values_) {
    out += k;
    out += " = ";
    out += v;
    out += '\n';
  }
  return out;
}

std::uint64_t KeyValueConfig::hash() const {
  const std::string text = canonical_text();
  return fnv1a64(text.data(), text.size());
}

std::string KeyValueConfig::hash_hex() const {
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(hash()));
  return buf;
}

namespace {
std::string trim(const std::string& s) {
  std::size_t b = s.find_first_not_of(" \t\r");
  std::size_t e = s.find_last_not_of(" \t\r");
  if (b == std::string::npos) return "";
  return s.substr(b, e - b + 1);
}
}  // namespace

KeyValueConfig KeyValueConfig::parse(const std::string& text) {
  KeyValueConfig cfg;
  std::istringstream in(text);
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const std::string t = trim(line);
    if (t.empty() || t[0] == '#') continue;
    const std::size_t eq = t.find('=');
    if (eq == std::string::npos)
      throw domain_error("config: line " + std::to_string(line_no) + ": expected 'key = value'");
    const std::string key = trim(t.substr(0, eq));
    const std::string value = trim(t.substr(eq + 1));
    if (key.empty())
      throw domain_error("config: line " + std::to_string(line_no) + ": empty key");
    cfg.set(key, value);
  }
  return cfg;
}

KeyValueConfig KeyValueConfig::load_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw io_error("config: cannot open '" + path + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse(ss.str());
}

void KeyValueConfig::merge_from(const KeyValueConfig& other) {
  for (const auto& [k, v] : other.values_) values_[k] = v;
}

}  // namespace gaze3d
