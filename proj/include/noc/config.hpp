#pragma once

#include <filesystem>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include <boost/property_tree/ptree.hpp>

namespace noc {

class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Flat key-value configuration grouped in sections:
///
///     # comment
///     [section]
///     key = value
///
/// Keys are addressed as "section.key". Lists are comma separated.
class Config {
 public:
  Config() = default;

  static Config parse(const std::string& text);
  static Config load(const std::filesystem::path& path);

  bool has(const std::string& key) const;
  std::string get_string(const std::string& key, const std::string& fallback) const;
  std::string require_string(const std::string& key) const;
  double get_double(const std::string& key, double fallback) const;
  long long get_int(const std::string& key, long long fallback) const;
  std::size_t get_size(const std::string& key, std::size_t fallback) const;
  bool get_bool(const std::string& key, bool fallback) const;
  std::vector<double> get_doubles(const std::string& key, const std::vector<double>& fallback) const;
  std::vector<std::size_t> get_sizes(const std::string& key, const std::vector<std::size_t>& fallback) const;

  /// Section names in file order.
  std::vector<std::string> sections() const;

  void set(const std::string& key, const std::string& value);
  /// Applies a "section.key=value" override.
  void apply_override(const std::string& assignment);
  /// Copies every key of `other`, replacing existing values.
  void merge(const Config& other);

 private:
  std::optional<std::string> raw(const std::string& key) const;
  boost::property_tree::ptree tree_;
};

}  // namespace noc
