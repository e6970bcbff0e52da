#include "ndoflow/config.hpp"

#include <fstream>
#include <vector>

#include <fmt/format.h>

#include "ndoflow/tensor.hpp"

namespace ndoflow::config {

namespace fs = std::filesystem;

void merge(nlohmann::json& base, const nlohmann::json& patch) {
  if (!base.is_object() || !patch.is_object()) {
    base = patch;
    return;
  }
  for (const auto& [key, value] : patch.items()) {
    if (base.contains(key) && base[key].is_object() && value.is_object()) {
      merge(base[key], value);
    } else {
      base[key] = value;
    }
  }
}

namespace {

nlohmann::json load_impl(const fs::path& path, std::vector<fs::path>& stack) {
  const fs::path canonical = fs::weakly_canonical(path);
  for (const auto& p : stack) {
    if (p == canonical) throw Error("config inheritance cycle through " + path.string());
  }
  std::ifstream in(path);
  if (!in) throw Error("cannot open config " + path.string());
  nlohmann::json doc;
  try {
    doc = nlohmann::json::parse(in, nullptr, true, true);
  } catch (const nlohmann::json::parse_error& e) {
    throw Error("invalid JSON in " + path.string() + ": " + e.what());
  }
  if (!doc.is_object()) throw Error("config " + path.string() + " must be a JSON object");
  if (!doc.contains("extends")) return doc;

  stack.push_back(canonical);
  nlohmann::json parents = doc.at("extends");
  if (parents.is_string()) parents = nlohmann::json::array({parents});
  if (!parents.is_array()) throw Error("'extends' must be a string or a list of strings in " + path.string());
  nlohmann::json merged = nlohmann::json::object();
  for (const auto& parent : parents) {
    if (!parent.is_string()) throw Error("'extends' entries must be strings in " + path.string());
    merge(merged, load_impl(path.parent_path() / parent.get<std::string>(), stack));
  }
  stack.pop_back();
  doc.erase("extends");
  merge(merged, doc);
  return merged;
}

}  // namespace

nlohmann::json load(const fs::path& path) {
  std::vector<fs::path> stack;
  return load_impl(path, stack);
}

nlohmann::json apply_profile(nlohmann::json doc, const std::string& name) {
  if (!doc.contains("profiles")) return doc;
  nlohmann::json profiles = doc.at("profiles");
  doc.erase("profiles");
  if (!profiles.contains(name)) throw Error("config has no profile '" + name + "'");
  merge(doc, profiles.at(name));
  return doc;
}

std::string fingerprint(const nlohmann::json& j) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : j.dump()) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return fmt::format("{:016x}", h);
}

}  // namespace ndoflow::config
