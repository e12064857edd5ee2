#pragma once

// Key-value run configuration: parsing, canonical text form (sorted keys, one
// `key = value` per line) and the FNV-1a hash over that form. The hash is
// what makes runs addressable: reports print it, sweeps resume by it.

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

namespace gaze3d {

inline constexpr const char* kVersionString = "0.1.0";

class KeyValueConfig {
 public:
  void set(const std::string& key, const std::string& value) { values_[key] = value; }
  void set_int(const std::string& key, long long v);
  void set_uint(const std::string& key, unsigned long long v);
  void set_double(const std::string& key, double v);
  void set_bool(const std::string& key, bool v);

  bool has(const std::string& key) const { return values_.count(key) != 0; }
  std::optional<std::string> get(const std::string& key) const;
  std::string get_or(const std::string& key, const std::string& fallback) const;
  long long get_int(const std::string& key) const;
  unsigned long long get_uint(const std::string& key) const;
  double get_double(const std::string& key) const;
  bool get_bool(const std::string& key) const;

  // canonical form: keys sorted lexicographically, "key = value\n" each
  std::string canonical_text() const;
  std::uint64_t hash() const;
  std::string hash_hex() const;

  // "key = value" lines; '#' comments and blank lines ignored. Throws
  // domain_error with the line number on malformed input.
  static KeyValueConfig parse(const std::string& text);
  static KeyValueConfig load_file(const std::string& path);

  const std::map<std::string, std::string>& entries() const { return values_; }
  void merge_from(const KeyValueConfig& other);  // other wins on conflicts

 private:
  std::map<std::string, std::string> values_;
};

// canonical float formatting used everywhere a double lands in a config or
// report (shortest round-trip form)
std::string format_double(double v);

}  // namespace gaze3d
