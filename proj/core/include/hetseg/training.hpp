#pragma once

#include <torch/torch.h>

#include <cstdint>
#include <filesystem>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "hetseg/domain.hpp"
#include "hetseg/objectives.hpp"
#include "hetseg/segmentation.hpp"
#include "hetseg/translation.hpp"

namespace hetseg {

enum class OptimizerKind { adam, sgd };

struct OptimizerConfig {
  OptimizerKind kind = OptimizerKind::sgd;
  double lr = 0.01;
  double momentum = 0.9;
  double beta1 = 0.5;
  double beta2 = 0.999;
  double weight_decay = 0.0;
};

/// Hyperparameters of one training stage. Fields a stage does not use are ignored.
struct TrainConfig {
  OptimizerConfig optimizer;
  std::int64_t batch_size = 8;
  std::int64_t iterations = 500;
  /// Validation cadence of the source segmenter.
  std::int64_t eval_every = 50;
  double validation_fraction = 0.2;
  GeneratorGanForm gan_form = GeneratorGanForm::saturating;
  GanMode gan_mode = GanMode::log_likelihood;
  DiceOptions dice;
  EntropyReduction entropy_reduction = EntropyReduction::mean;
  /// Weight-initialization and data-order seed.
  std::uint64_t seed = 0;

  /// Throws ConfigError; `prefix` is the config key path, e.g. "train.translation".
  void validate(const std::string& prefix) const;
};

nlohmann::json to_json(const TrainConfig& cfg);

/// Append-only record of (iteration, term, value) triples.
class LossLog {
 public:
  struct Entry {
    std::int64_t iteration;
    std::string term;
    double value;
  };

  void add(std::int64_t iteration, std::string term, double value);
  const std::vector<Entry>& entries() const noexcept { return entries_; }
  std::set<std::string> terms() const;
  /// CSV with header `iteration,term,value`.
  void write_csv(const std::filesystem::path& path) const;

 private:
  std::vector<Entry> entries_;
};

/// Names of every sample that contributed to a gradient step.
using GradientAudit = std::set<std::string>;

struct SourceTrainingResult {
  Segmenter model{nullptr};
  double best_validation_dsc = 0.0;
  std::int64_t best_iteration = 0;
  std::vector<std::pair<std::int64_t, double>> validation_curve;
  std::set<std::string> train_patients;
  std::set<std::string> validation_patients;
  GradientAudit audit;
  LossLog log;
};

/// Minimizes the soft dice loss on labeled source slices with a patient-level
/// train/validation split; returns the best-validation model.
SourceTrainingResult train_source_segmenter(const Dataset& source_labeled, const SegmenterConfig& seg_cfg,
                                            const TrainConfig& cfg);

struct TranslationTrainingResult {
  Translator model{nullptr};
  LossLog log;
};

/// Alternating discriminator / generator updates of the full translation objective, with the
/// semantic term evaluated by the frozen source segmenter on cycle-reconstructed source images.
TranslationTrainingResult train_translation(const Dataset& source_labeled, const Dataset& target_unlabeled,
                                            Segmenter& seg_s, const NetConfig& net_cfg, const TrainConfig& cfg,
                                            const LossWeights& weights);

/// Which data streams supervise the target segmenter.
struct TargetTrainingOptions {
  /// Source images translated to the target domain with a fresh style draw per batch.
  bool use_synthetic = true;
  bool use_entmin = false;
  bool use_pslab = false;
  /// Raw source images through a learnable channel projection (no translation).
  bool use_raw_source = false;
  bool channel_adapter = true;
};

/// Inputs of target training; datasets left null are unused.
struct TargetTrainingData {
  const Dataset* source_labeled = nullptr;
  /// Real target slices with ground-truth masks.
  const Dataset* target_labeled = nullptr;
  /// Real target slices with pseudo masks.
  const Dataset* target_pseudo = nullptr;
  /// Real target slices for the entropy term.
  const Dataset* target_unlabeled = nullptr;
};

struct TargetTrainingResult {
  Segmenter model{nullptr};
  ChannelAdapter adapter{nullptr};
  GradientAudit audit;
  LossLog log;
};

/// Minimizes dice on the supervised streams plus the entropy term on unlabeled target slices.
/// The translator is only evaluated, never updated.
TargetTrainingResult train_target_segmenter(const TargetTrainingData& data, Translator* translator,
                                            const SegmenterConfig& seg_cfg, const TrainConfig& cfg,
                                            const TargetTrainingOptions& options);

/// Picks the threshold from `grid` whose pseudo masks best match the ground truth (class-1 DSC)
/// on labeled source images sent through the target domain and back. Ties go to the larger value.
double select_threshold(Translator& translator, Segmenter& seg_s, const Dataset& source_validation,
                        const std::vector<double>& grid, std::uint64_t seed);

}  // namespace hetseg
