#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <set>
#include <span>
#include <string>
#include <vector>

namespace poseforge {

struct ConfigKey {
  const char* key;
  const char* default_value;
  const char* help;
};

/// Every recognised key with its default, in display order.
[[nodiscard]] std::span<const ConfigKey> config_keys();

/// Flat key=value run configuration. Unknown keys are rejected.
class RunConfig {
 public:
  RunConfig();

  /// Reads `key = value` lines; '#' starts a comment. Errors carry the line number.
  static RunConfig from_file(const std::filesystem::path& path);
  static RunConfig from_text(const std::string& text, const std::string& origin = "<text>");

  void set(const std::string& key, const std::string& value);
  /// True when the key was assigned explicitly rather than left at its default.
  [[nodiscard]] bool is_set(const std::string& key) const { return explicit_.contains(key); }

  [[nodiscard]] const std::string& text(const std::string& key) const;
  [[nodiscard]] double real(const std::string& key) const;
  [[nodiscard]] std::int64_t integer(const std::string& key) const;
  /// Nonnegative integer.
  [[nodiscard]] std::size_t count(const std::string& key) const;
  [[nodiscard]] bool flag(const std::string& key) const;
  /// Comma-separated nonnegative integers.
  [[nodiscard]] std::vector<std::size_t> counts(const std::string& key) const;

  /// Every key, one `key = value` line each, in display order.
  [[nodiscard]] std::string serialize() const;

  /// Key listing with defaults and descriptions for --help.
  [[nodiscard]] static std::string describe();

 private:
  std::map<std::string, std::string> values_;
  std::set<std::string> explicit_;
};

}  // namespace poseforge
