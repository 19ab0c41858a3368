#pragma once

#include <filesystem>
#include <utility>

#include <nlohmann/json.hpp>

#include "hetseg/domain.hpp"

namespace hetseg {

/// On-disk layout of one sample:
///   <name>.bin       float32 LE, C*H*W values, channel-major then row then column
///   <name>.json      {"shape": [C,H,W], "patient_id", "domain", "mask": "<name>.mask.bin" | null,
///                     "mask_shape": [K,H,W], "pseudo": bool, "threshold", "coverage"}
///   <name>.mask.bin  float32 LE, K*H*W values, exactly 0.0 or 1.0
///
/// A dataset root is a flat directory of such pairs plus `manifest.json`.
inline constexpr int kDatasetFormatVersion = 1;

nlohmann::json to_json(const DomainSpec& spec);
DomainSpec domain_spec_from_json(const nlohmann::json& j);

/// Returns the paths of the image binary and its sidecar.
std::pair<std::filesystem::path, std::filesystem::path> save_sample(const Sample& sample,
                                                                    const std::filesystem::path& root);

Sample load_sample(const std::filesystem::path& sidecar);

/// Writes every sample plus `manifest.json`. Creates `root` if needed.
void save_dataset(const Dataset& dataset, const std::filesystem::path& root);

/// Loads every sidecar in `root`, ordered by filename. The DomainSpec comes from
/// `manifest.json` when present, otherwise it is inferred from the first sample.
Dataset load_dataset(const std::filesystem::path& root);

}  // namespace hetseg
