#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "hetseg/baseline.hpp"
#include "hetseg/objectives.hpp"
#include "hetseg/pseudo_label.hpp"
#include "hetseg/segmentation.hpp"
#include "hetseg/synthetic.hpp"
#include "hetseg/training.hpp"
#include "hetseg/translation.hpp"

namespace hetseg {

enum class ThresholdPolicy {
  fixed,     ///< use `threshold`
  validate,  ///< pick from `grid` on held-back labeled source images
};

struct PseudoLabelConfig {
  ThresholdPolicy policy = ThresholdPolicy::validate;
  double threshold = 0.8;
  std::vector<double> grid = {0.6, 0.7, 0.8, 0.9};
  StylePolicy style_policy = StylePolicy::prior_mean;
  int average_draws = 4;
};

struct ExperimentSettings {
  Baseline baseline = Baseline::viii;
  int folds = 5;
  std::vector<std::uint64_t> seeds = {0, 1, 2};
  std::vector<double> fractions = {0.0, 0.25, 0.5, 0.75, 1.0};
  /// Seed of the patient-to-fold assignment, shared by every baseline.
  std::uint64_t fold_seed = 0;
  /// Lets baseline iii project raw source channels onto the target channel count.
  bool channel_adapter = false;
};

struct RunConfig {
  std::string preset = "desk";
  std::uint64_t seed = 0;
  bool deterministic = true;
  int jobs = 1;
  std::filesystem::path output_root = "runs";
  /// Directory written by `gen-data`; when unset the synthetic task is generated in memory.
  std::optional<std::filesystem::path> data_dir;
  SyntheticTaskConfig task;
  SegmenterConfig segmenter;
  NetConfig translation_net;
  LossWeights loss_weights;
  TrainConfig source_training;
  TrainConfig translation_training;
  TrainConfig target_training;
  PseudoLabelConfig pseudo_label;
  ExperimentSettings experiment;
};

RunConfig desk_preset();
RunConfig paper_preset();
/// Throws ConfigError for names other than "desk" and "paper".
RunConfig preset(std::string_view name);

nlohmann::json to_json(const RunConfig& cfg);

/// Parses a JSON config layered over its preset (the "preset" key, default "desk").
/// Every unknown key, type mismatch and out-of-range value is reported with its key path;
/// throws one ConfigError carrying all of them. Empty text yields the desk preset.
RunConfig validate_config(std::string_view text);
RunConfig validate_config(const nlohmann::json& j);
inline RunConfig validate_config(const char* text) { return validate_config(std::string_view(text)); }
inline RunConfig validate_config(const std::string& text) { return validate_config(std::string_view(text)); }

/// `HETSEG_RUN_ROOT` when set, otherwise `cfg.output_root`.
std::filesystem::path resolve_output_root(const RunConfig& cfg);

}  // namespace hetseg
