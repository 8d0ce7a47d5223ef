#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "tndvga/params.hpp"

namespace tndvga {

std::string base64_encode(std::span<const std::uint8_t> bytes);
/// Throws InputError on characters outside the standard alphabet or bad padding.
std::vector<std::uint8_t> base64_decode(std::string_view text);

/// {"shape": [...], "data": base64 of little-endian IEEE-754 doubles}
nlohmann::json tensor_to_json(const Tensor& t);
Tensor tensor_from_json(const nlohmann::json& j);

struct Checkpoint {
  ParamStore params;
  std::optional<AdamState> optimizer;
  /// Free-form metadata stored alongside (model config, epoch, ...).
  nlohmann::json meta = nlohmann::json::object();
};

/// Layout: {"params": {name: tensor}, "optimizer": {...} | null, "meta": {...}}
nlohmann::json checkpoint_to_json(const Checkpoint& ckpt);
Checkpoint checkpoint_from_json(const nlohmann::json& j);

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace tndvga
