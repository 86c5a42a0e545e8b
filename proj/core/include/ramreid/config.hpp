#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <string_view>
#include <vector>

namespace ramreid {

// Flat `section.key = value` configuration. Lines starting with '#' and blank
// lines are ignored; later assignments override earlier ones.
class KeyValueConfig {
 public:
  static KeyValueConfig parse(std::string_view text, const std::string& source = "<string>");
  static KeyValueConfig load(const std::filesystem::path& path);

  void set(const std::string& key, const std::string& value);
  bool contains(const std::string& key) const { return values_.count(key) != 0; }
  const std::map<std::string, std::string>& entries() const { return values_; }

  // Typed getters throw ConfigError when the key is missing or malformed.
  const std::string& get_string(const std::string& key) const;
  std::int64_t get_int(const std::string& key) const;
  std::size_t get_size(const std::string& key) const;
  double get_double(const std::string& key) const;
  bool get_bool(const std::string& key) const;
  std::vector<std::string> get_list(const std::string& key, char separator = ',') const;

  // Copies every entry of `other` over this one.
  void merge(const KeyValueConfig& other);

  // Sorted `key = value` lines.
  std::string to_string() const;
  void save(const std::filesystem::path& path) const;

 private:
  std::map<std::string, std::string> values_;
};

// Every key a run accepts, with its default value.
KeyValueConfig default_run_config();

// defaults <- file <- overrides, rejecting keys absent from the defaults.
KeyValueConfig resolve_run_config(const KeyValueConfig& file, const KeyValueConfig& overrides);

std::vector<std::string> split(std::string_view text, char separator);
std::string trim(std::string_view text);

}  // namespace ramreid
