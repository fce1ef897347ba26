#pragma once

#include <sodium.h>

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>

#include <cstdio>
#include <fstream>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "spacetime.hpp"

namespace finicode {

struct ConfigError : Error {
  using Error::Error;
};

/**
 * INI experiment configuration addressed as "section.key".
 *
 * The hash covers the file text only, so the seed can be overridden on the command line
 * without changing it.
 */
class Config {
 public:
  static Config parse(const std::string& text, const std::string& origin = "<string>") {
    Config c;
    c.text_ = text;
    c.origin_ = origin;
    std::istringstream in(text);
    try {
      boost::property_tree::ini_parser::read_ini(in, c.tree_);
    } catch (const boost::property_tree::ini_parser_error& e) {
      throw ConfigError(origin + ": " + e.message() + " (line " + std::to_string(e.line()) + ")");
    }
    return c;
  }

  static Config load(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ConfigError("cannot open config " + path);
    std::ostringstream ss;
    ss << in.rdbuf();
    return parse(ss.str(), path);
  }

  const std::string& origin() const { return origin_; }

  std::string hash() const {
    if (sodium_init() < 0) throw Error("libsodium initialisation failed");
    unsigned char out[16];
    crypto_generichash(out, sizeof out, reinterpret_cast<const unsigned char*>(text_.data()), text_.size(), nullptr, 0);
    char hex[33];
    for (int k = 0; k < 16; ++k) std::snprintf(hex + 2 * k, 3, "%02x", out[k]);
    return std::string(hex, 16);
  }

  bool has(const std::string& key) const { return static_cast<bool>(tree_.get_optional<std::string>(key)); }

  std::string str(const std::string& key, const std::string& def) const {
    return tree_.get<std::string>(key, def);
  }

  template <class T>
  T get(const std::string& key, T def) const {
    auto raw = tree_.get_optional<std::string>(key);
    if (!raw) return def;
    return convert<T>(key, *raw);
  }

  template <class T>
  T require(const std::string& key) const {
    auto raw = tree_.get_optional<std::string>(key);
    if (!raw) throw ConfigError(origin_ + ": missing required key " + key);
    return convert<T>(key, *raw);
  }

  /// Comma-separated numbers.
  template <class T = double>
  std::vector<T> list(const std::string& key, std::vector<T> def) const {
    auto raw = tree_.get_optional<std::string>(key);
    if (!raw) return def;
    std::vector<T> out;
    std::stringstream ss(*raw);
    std::string item;
    while (std::getline(ss, item, ',')) out.push_back(convert<T>(key, item));
    if (out.empty()) throw ConfigError(origin_ + ": empty list for " + key);
    return out;
  }

  void set(const std::string& key, const std::string& value) { tree_.put(key, value); }

  std::uint64_t seed() const { return get<std::uint64_t>("run.seed", 1); }

  /// Rejects keys no experiment reads, so a typo cannot silently fall back to a default.
  void check_known(const std::set<std::string>& allowed) const {
    for (const auto& [section, body] : tree_) {
      if (body.empty()) throw ConfigError(origin_ + ": key outside a section: " + section);
      for (const auto& [key, _] : body) {
        const std::string full = section + "." + key;
        if (!allowed.count(full)) throw ConfigError(origin_ + ": unknown key " + full);
      }
    }
  }

 private:
  template <class T>
  T convert(const std::string& key, std::string raw) const {
    const auto b = raw.find_first_not_of(" \t");
    const auto e = raw.find_last_not_of(" \t");
    raw = b == std::string::npos ? "" : raw.substr(b, e - b + 1);
    if constexpr (std::is_same_v<T, std::string>) {
      return raw;
    } else if constexpr (std::is_same_v<T, bool>) {
      if (raw == "true" || raw == "1" || raw == "yes") return true;
      if (raw == "false" || raw == "0" || raw == "no") return false;
      throw ConfigError(origin_ + ": " + key + " expects a boolean, got '" + raw + "'");
    } else {
      std::istringstream in(raw);
      T v{};
      in >> v;
      if (in.fail() || !in.eof()) throw ConfigError(origin_ + ": " + key + " has malformed value '" + raw + "'");
      return v;
    }
  }

  boost::property_tree::ptree tree_;
  std::string text_;
  std::string origin_;
};

}  // namespace finicode
