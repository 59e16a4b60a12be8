#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "ar3d/nn.hpp"
#include "ar3d/train_eval.hpp"
#include "ar3d/vision.hpp"
#include "json.hpp"

namespace ar3d {

// Archive layout, little-endian:
//   "AR3D" | u32 header length | UTF-8 JSON header | tensor records in ParamSet order
//   record: u8 ndim | u32 dim[ndim] | f32 payload[prod(dim)]
inline constexpr std::uint32_t kArchiveVersion = 1;

struct WeightArchive {
  ModelSpec spec;
  ParamSet params;
  PreprocessConfig preprocess;
  std::vector<std::string> classes;
  std::optional<nlohmann::json> training;  // informational copy of the TrainConfig
  std::string fingerprint;                 // FNV-1a 64 of the header bytes, hex
};

nlohmann::json to_json(const ModelSpec& spec);
ModelSpec model_spec_from_json(const nlohmann::json& j);
nlohmann::json to_json(const PreprocessConfig& cfg);
/// Missing keys keep the values already in `base`.
PreprocessConfig preprocess_from_json(const nlohmann::json& j, PreprocessConfig base = {});
nlohmann::json to_json(const TrainConfig& cfg);
TrainConfig train_config_from_json(const nlohmann::json& j, TrainConfig base = {});

std::vector<std::uint8_t> encode_archive(const ModelSpec& spec, const ParamSet& params,
                                         const PreprocessConfig& preprocess,
                                         const std::vector<std::string>& classes,
                                         const std::optional<nlohmann::json>& training = std::nullopt);
WeightArchive decode_archive(std::span<const std::uint8_t> bytes);

void save_archive(const std::filesystem::path& path, const ModelSpec& spec, const ParamSet& params,
                  const PreprocessConfig& preprocess, const std::vector<std::string>& classes,
                  const std::optional<nlohmann::json>& training = std::nullopt);
WeightArchive load_archive(const std::filesystem::path& path);

std::string fnv1a_hex(std::span<const std::uint8_t> bytes);

}  // namespace ar3d
