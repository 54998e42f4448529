#pragma once

#include <set>
#include <string>
#include <vector>

#include "json.hpp"

#include "vstab/error.hpp"

namespace vstab::detail {

// Strict object reader: every key must be declared, every read is typed, and
// errors carry the JSON-pointer path of the offending field.
class ObjectReader {
 public:
  ObjectReader(const nlohmann::json& obj, std::string path,
               std::set<std::string> allowed)
      : obj_(obj), path_(std::move(path)) {
    if (!obj_.is_object()) fail(path_, "expected an object");
    for (auto it = obj_.begin(); it != obj_.end(); ++it) {
      if (!allowed.count(it.key())) {
        fail(path_ + "/" + it.key(), "unknown field");
      }
    }
  }

  [[noreturn]] static void fail(const std::string& path,
                                const std::string& why) {
    throw SchemaError(path + ": " + why);
  }

  bool has(const std::string& key) const { return obj_.contains(key); }

  const nlohmann::json& at(const std::string& key) const {
    if (!obj_.contains(key)) fail(path_ + "/" + key, "missing required field");
    return obj_.at(key);
  }

  double number(const std::string& key) const {
    const nlohmann::json& v = at(key);
    if (!v.is_number()) fail(path_ + "/" + key, "expected a number");
    return v.get<double>();
  }
  double number_or(const std::string& key, double fallback) const {
    return has(key) ? number(key) : fallback;
  }
  int integer(const std::string& key) const {
    const nlohmann::json& v = at(key);
    if (!v.is_number_integer()) fail(path_ + "/" + key, "expected an integer");
    return v.get<int>();
  }
  std::string string(const std::string& key) const {
    const nlohmann::json& v = at(key);
    if (!v.is_string()) fail(path_ + "/" + key, "expected a string");
    return v.get<std::string>();
  }
  const nlohmann::json& array(const std::string& key) const {
    const nlohmann::json& v = at(key);
    if (!v.is_array()) fail(path_ + "/" + key, "expected an array");
    return v;
  }
  std::vector<int> integers(const std::string& key) const {
    std::vector<int> out;
    for (const nlohmann::json& v : array(key)) {
      if (!v.is_number_integer()) fail(path_ + "/" + key, "expected integers");
      out.push_back(v.get<int>());
    }
    return out;
  }
  bool boolean(const std::string& key) const {
    const nlohmann::json& v = at(key);
    if (!v.is_boolean()) fail(path_ + "/" + key, "expected true or false");
    return v.get<bool>();
  }
  std::string child(const std::string& key) const { return path_ + "/" + key; }

 private:
  const nlohmann::json& obj_;
  std::string path_;
};

}  // namespace vstab::detail
