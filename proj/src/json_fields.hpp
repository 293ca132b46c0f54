#pragma once

#include <set>
#include <string>

#include "json.hpp"
#include "smcpose/error.hpp"

namespace smcpose::detail {

// Reads known keys of a JSON object into fields, leaving absent ones at their
// current value; finish() rejects keys that were never read.
class FieldReader {
 public:
  FieldReader(const nlohmann::json& obj, std::string context)
      : obj_(obj), context_(std::move(context)) {
    if (!obj_.is_object()) throw FormatError(context_ + ": expected a JSON object");
  }

  template <typename T>
  FieldReader& operator()(const char* key, T& field) {
    seen_.insert(key);
    auto it = obj_.find(key);
    if (it == obj_.end()) return *this;
    try {
      field = it->template get<T>();
    } catch (const nlohmann::json::exception& e) {
      throw FormatError(context_ + "." + key + ": " + e.what());
    }
    return *this;
  }

  const nlohmann::json* child(const char* key) {
    seen_.insert(key);
    auto it = obj_.find(key);
    return it == obj_.end() ? nullptr : &*it;
  }

  void finish() const {
    for (auto it = obj_.begin(); it != obj_.end(); ++it) {
      if (!seen_.count(it.key())) throw FormatError(context_ + ": unknown key '" + it.key() + "'");
    }
  }

 private:
  const nlohmann::json& obj_;
  std::string context_;
  std::set<std::string> seen_;
};

}  // namespace smcpose::detail
