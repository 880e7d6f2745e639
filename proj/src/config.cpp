#include "noc/config.hpp"

#include <algorithm>
#include <charconv>
#include <fstream>
#include <sstream>

#include <boost/algorithm/string/trim.hpp>
#include <boost/property_tree/ini_parser.hpp>

namespace noc {

namespace {

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) {
    boost::algorithm::trim(item);
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

double to_double(const std::string& key, const std::string& v) {
  try {
    std::size_t used = 0;
    const double d = std::stod(v, &used);
    if (used != v.size()) throw std::invalid_argument("trailing characters");
    return d;
  } catch (const std::exception&) {
    throw ConfigError("config key '" + key + "': '" + v + "' is not a number");
  }
}

long long to_int(const std::string& key, const std::string& v) {
  long long out = 0;
  const auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || ptr != v.data() + v.size())
    throw ConfigError("config key '" + key + "': '" + v + "' is not an integer");
  return out;
}

}  // namespace

Config Config::parse(const std::string& text) {
  Config c;
  std::istringstream in(text);
  try {
    boost::property_tree::ini_parser::read_ini(in, c.tree_);
  } catch (const boost::property_tree::ini_parser_error& e) {
    throw ConfigError(std::string("malformed config: ") + e.what());
  }
  return c;
}

Config Config::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  try {
    return parse(ss.str());
  } catch (const ConfigError& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
}

std::optional<std::string> Config::raw(const std::string& key) const {
  const auto v = tree_.get_optional<std::string>(boost::property_tree::ptree::path_type(key, '.'));
  if (!v) return std::nullopt;
  std::string s = *v;
  boost::algorithm::trim(s);
  return s;
}

bool Config::has(const std::string& key) const { return raw(key).has_value(); }

std::string Config::get_string(const std::string& key, const std::string& fallback) const {
  return raw(key).value_or(fallback);
}

std::string Config::require_string(const std::string& key) const {
  auto v = raw(key);
  if (!v) throw ConfigError("missing required config key '" + key + "'");
  return *v;
}

double Config::get_double(const std::string& key, double fallback) const {
  const auto v = raw(key);
  return v ? to_double(key, *v) : fallback;
}

long long Config::get_int(const std::string& key, long long fallback) const {
  const auto v = raw(key);
  return v ? to_int(key, *v) : fallback;
}

std::size_t Config::get_size(const std::string& key, std::size_t fallback) const {
  const auto v = raw(key);
  if (!v) return fallback;
  const long long n = to_int(key, *v);
  if (n < 0) throw ConfigError("config key '" + key + "' must be non-negative");
  return static_cast<std::size_t>(n);
}

bool Config::get_bool(const std::string& key, bool fallback) const {
  const auto v = raw(key);
  if (!v) return fallback;
  if (*v == "true" || *v == "1" || *v == "yes" || *v == "on") return true;
  if (*v == "false" || *v == "0" || *v == "no" || *v == "off") return false;
  throw ConfigError("config key '" + key + "': '" + *v + "' is not a boolean");
}

std::vector<double> Config::get_doubles(const std::string& key, const std::vector<double>& fallback) const {
  const auto v = raw(key);
  if (!v) return fallback;
  std::vector<double> out;
  for (const auto& item : split_list(*v)) out.push_back(to_double(key, item));
  return out;
}

std::vector<std::size_t> Config::get_sizes(const std::string& key, const std::vector<std::size_t>& fallback) const {
  const auto v = raw(key);
  if (!v) return fallback;
  std::vector<std::size_t> out;
  for (const auto& item : split_list(*v)) {
    const long long n = to_int(key, item);
    if (n < 0) throw ConfigError("config key '" + key + "' must list non-negative integers");
    out.push_back(static_cast<std::size_t>(n));
  }
  return out;
}

std::vector<std::string> Config::sections() const {
  std::vector<std::string> out;
  for (const auto& [name, child] : tree_)
    if (!child.empty()) out.push_back(name);
  return out;
}

void Config::set(const std::string& key, const std::string& value) {
  if (std::count(key.begin(), key.end(), '.') != 1)
    throw ConfigError("config override key '" + key + "' must have the form section.key");
  tree_.put(boost::property_tree::ptree::path_type(key, '.'), value);
}

void Config::apply_override(const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos) throw ConfigError("override '" + assignment + "' must be section.key=value");
  std::string key = assignment.substr(0, eq), value = assignment.substr(eq + 1);
  boost::algorithm::trim(key);
  boost::algorithm::trim(value);
  set(key, value);
}

void Config::merge(const Config& other) {
  for (const auto& [section, child] : other.tree_) {
    if (child.empty()) {
      tree_.put_child(boost::property_tree::ptree::path_type(section, '.'), child);
      continue;
    }
    for (const auto& [key, value] : child)
      tree_.put_child(boost::property_tree::ptree::path_type(section + "." + key, '.'), value);
  }
}

}  // namespace noc
