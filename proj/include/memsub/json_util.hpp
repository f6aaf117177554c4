#pragma once

#include <set>
#include <string>

#include <nlohmann/json.hpp>

#include "memsub/errors.hpp"

namespace memsub {

/// Reads optional fields from a JSON object and rejects keys nobody asked for.
class StrictObject {
 public:
  StrictObject(const nlohmann::json& j, std::string context) : j_(j), ctx_(std::move(context)) {
    if (!j_.is_object()) throw ArgumentError(ctx_ + ": expected a JSON object");
  }

  template <class T>
  StrictObject& opt(const char* key, T& out) {
    seen_.insert(key);
    if (j_.contains(key)) {
      try {
        out = j_.at(key).get<T>();
      } catch (const nlohmann::json::exception& e) {
        throw ArgumentError(ctx_ + "." + key + ": " + e.what());
      }
    }
    return *this;
  }

  const nlohmann::json* sub(const char* key) {
    seen_.insert(key);
    return j_.contains(key) ? &j_.at(key) : nullptr;
  }

  void finish() const {
    for (const auto& [k, v] : j_.items()) {
      if (!seen_.count(k)) throw ArgumentError(ctx_ + ": unknown key '" + k + "'");
    }
  }

 private:
  const nlohmann::json& j_;
  std::string ctx_;
  std::set<std::string> seen_;
};

}  // namespace memsub
