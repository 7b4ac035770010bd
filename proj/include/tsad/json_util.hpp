#pragma once

#include "tsad/error.hpp"

#include <json.hpp>

#include <initializer_list>
#include <string>
#include <string_view>

namespace tsad::json_util {

/// Rejects keys outside `allowed` so that typos in configs fail loudly.
inline void check_keys(const nlohmann::json& j, std::initializer_list<std::string_view> allowed, std::string_view context)
{
    if (!j.is_object()) {
        throw ConfigError(std::string(context) + ": expected a JSON object");
    }
    for (const auto& item : j.items()) {
        bool known = false;
        for (auto key : allowed) {
            known = known || item.key() == key;
        }
        if (!known) {
            throw ConfigError(std::string(context) + ": unknown key '" + item.key() + "'");
        }
    }
}

template <class T>
T get_or(const nlohmann::json& j, const char* key, T fallback, std::string_view context)
{
    if (!j.contains(key) || j.at(key).is_null()) {
        return fallback;
    }
    try {
        return j.at(key).get<T>();
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(std::string(context) + "." + key + ": " + e.what());
    }
}

template <class T>
T get_required(const nlohmann::json& j, const char* key, std::string_view context)
{
    if (!j.contains(key)) {
        throw ConfigError(std::string(context) + ": missing required key '" + key + "'");
    }
    try {
        return j.at(key).get<T>();
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(std::string(context) + "." + key + ": " + e.what());
    }
}

} // namespace tsad::json_util
