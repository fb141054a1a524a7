#pragma once

// JSON forms of the configuration structs and small file helpers.
//
// Decoding starts from the target's current values, so a partial JSON object
// overrides only the keys it names. Unknown keys are rejected with ConfigError.

#include <filesystem>
#include <initializer_list>
#include <string>
#include <string_view>

#include "json.hpp"

#include "powerpost/denoiser.hpp"
#include "powerpost/forward.hpp"
#include "powerpost/sampler.hpp"

namespace powerpost {

/// Throws ConfigError unless `j` is an object whose keys are all in `keys`.
void check_keys(const nlohmann::json& j, std::string_view section, std::initializer_list<std::string_view> keys);

/// Overwrites `out` with j[key] when present.
template <typename T>
void read_key(const nlohmann::json& j, const char* key, T& out) {
  if (!j.contains(key)) return;
  try {
    out = j.at(key).get<T>();
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("bad value for '") + key + "': " + e.what());
  }
}

void to_json(nlohmann::json& j, const ToyWorldConfig& c);
void from_json(const nlohmann::json& j, ToyWorldConfig& c);

void to_json(nlohmann::json& j, const TrainConfig& c);
void from_json(const nlohmann::json& j, TrainConfig& c);

/// The schedule is stored by its parameters (sigma_min, sigma_max, num_steps, rho).
void to_json(nlohmann::json& j, const SamplerConfig& c);
void from_json(const nlohmann::json& j, SamplerConfig& c);

/// Writes to a sibling temporary file and renames it over `path`.
void write_text_atomic(const std::filesystem::path& path, const std::string& contents);

/// Whole file as bytes. Throws std::runtime_error if it cannot be opened.
std::string read_binary_file(const std::filesystem::path& path);

}  // namespace powerpost
