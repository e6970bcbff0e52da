#pragma once

#include <filesystem>
#include <string>

#include <nlohmann/json.hpp>

namespace ndoflow::config {

/// Recursively merges `patch` into `base`: objects merge key by key, any
/// other value (arrays included) replaces the base value.
void merge(nlohmann::json& base, const nlohmann::json& patch);

/// Reads a JSON document. A top-level "extends" names a base file (relative
/// to the including file) or a list of them, merged in order before the
/// document itself. Cycles are rejected.
nlohmann::json load(const std::filesystem::path& path);

/// Applies `profiles.<name>` when present and drops the "profiles" key.
/// Unknown profile names are an error only when the document declares profiles.
nlohmann::json apply_profile(nlohmann::json doc, const std::string& name);

/// Stable 64-bit FNV-1a hash of the compact serialisation, as 16 hex digits.
std::string fingerprint(const nlohmann::json& j);

}  // namespace ndoflow::config
