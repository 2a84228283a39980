#pragma once

#include <filesystem>
#include <map>
#include <string>
#include <vector>

namespace wss::cli {

/// Flat `key = value` configuration. Every key has a built-in default; unknown keys are rejected.
class RunConfig {
 public:
  RunConfig();

  static RunConfig parse(const std::string& text, const std::string& origin = "config");
  static RunConfig load(const std::filesystem::path& path);

  void set(const std::string& key, const std::string& value);
  const std::string& get(const std::string& key) const;

  std::string str(const std::string& key) const { return get(key); }
  long long integer(const std::string& key) const;
  double real(const std::string& key) const;
  bool flag(const std::string& key) const;
  std::vector<long long> integers(const std::string& key) const;

  /// Sorted `key = value` lines for keys starting with any of `prefixes` (all keys when empty).
  std::string canonical(const std::vector<std::string>& prefixes = {}) const;

  /// Every known key with its default and description, as a commented config file.
  static std::string documented_defaults();

 private:
  std::map<std::string, std::string> values_;
};

}  // namespace wss::cli
