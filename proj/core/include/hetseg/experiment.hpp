#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <future>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "hetseg/baseline.hpp"
#include "hetseg/config.hpp"
#include "hetseg/metrics.hpp"
#include "hetseg/training.hpp"

namespace hetseg {

/// The three cohorts of a task. Evaluation folds are drawn from `target_heldout`;
/// `target_unlabeled` only ever feeds the translator.
struct TaskData {
  Dataset source_labeled;
  Dataset target_unlabeled;
  Dataset target_heldout;
};

/// Loads `cfg.data_dir` when set, otherwise generates the synthetic task in memory.
TaskData load_task(const RunConfig& cfg);
/// Writes each cohort into its own subdirectory of `dir`.
void save_task(const TaskData& data, const std::filesystem::path& dir);

struct ExperimentPlan {
  Baseline baseline = Baseline::viii;
  int num_folds = 5;
  std::vector<std::uint64_t> seeds = {0, 1, 2};
  std::uint64_t fold_seed = 0;

  void validate() const;
};

ExperimentPlan plan_from_config(const RunConfig& cfg);

/// Run-directory name of a baseline experiment, e.g. "baseline-viii".
std::string experiment_name(Baseline b);

/// The first round(fraction * n) patients of a seeded shuffle; larger fractions reveal supersets.
std::set<std::string> reveal_patients(const std::vector<std::string>& patients, double fraction, std::uint64_t seed);

namespace stage_paths {
std::filesystem::path stage_dir(const std::filesystem::path& root, std::uint64_t seed);
std::filesystem::path source_segmenter(const std::filesystem::path& root, std::uint64_t seed);
std::filesystem::path translator(const std::filesystem::path& root, std::uint64_t seed, double lambda_sem);
std::filesystem::path pseudo_labels(const std::filesystem::path& root, std::uint64_t seed, int fold);
std::filesystem::path run_dir(const std::filesystem::path& root, const std::string& experiment, int fold,
                              std::uint64_t seed);
}  // namespace stage_paths

struct SourceStage {
  Segmenter model{nullptr};
  std::set<std::string> validation_patients;
  double best_validation_dsc = 0.0;
  GradientAudit audit;
};

struct FoldRun {
  FoldRecord record;
  Evaluation evaluation;
  Segmenter model{nullptr};
  GradientAudit audit;
  std::set<std::string> test_patients;
  std::filesystem::path dir;
};

/// Orchestrates stages per seed and fold. Seed-level stages (source segmenter, translators,
/// pseudo-labels) are computed once, cached in memory and written below `<root>/stages`, and
/// reloaded from disk when a matching checkpoint exists.
class ExperimentRunner {
 public:
  /// Outputs go below `root` when given, otherwise below resolve_output_root(cfg).
  ExperimentRunner(RunConfig cfg, TaskData data, std::optional<std::filesystem::path> root = std::nullopt);

  const RunConfig& config() const noexcept { return cfg_; }
  const TaskData& data() const noexcept { return data_; }
  const std::filesystem::path& root() const noexcept { return root_; }
  FoldPlan folds(int num_folds, std::uint64_t fold_seed) const;

  /// When off, a stage without a checkpoint raises MissingStageError instead of being trained.
  void set_train_missing_stages(bool on) { train_missing_ = on; }

  std::shared_ptr<const SourceStage> source_stage(std::uint64_t seed);
  /// `semantic` false trains with the semantic weight forced to zero.
  Translator translation_stage(std::uint64_t seed, bool semantic);
  /// Pseudo-labeled copy of every patient outside `fold`'s test set.
  std::shared_ptr<const Dataset> pseudo_stage(std::uint64_t seed, const FoldPlan& folds, int fold);
  double selected_threshold(std::uint64_t seed);

  /// Trains and evaluates one target segmenter; `fraction` of the fold's training patients
  /// keep their labels. Writes `<root>/<experiment>/<fold>/<seed>/`.
  FoldRun run_fold(const BaselineRecipe& recipe, const std::string& experiment, const FoldPlan& folds, int fold,
                   std::uint64_t seed, double fraction, const std::string& method);

  /// Every (fold, seed) of the plan; writes the aggregated report into `<root>/<experiment>/`.
  MetricsReport run_experiment(const ExperimentPlan& plan);

  /// Full method with a growing share of revealed target labels, plus target-only at each
  /// fraction > 0. Writes `<root>/sweep/sweep.csv` and one plot per metric.
  std::vector<SweepPoint> sweep_supervision(const std::vector<double>& fractions, const ExperimentPlan& plan);

 private:
  template <class T>
  struct Cache {
    std::mutex mutex;
    std::map<std::string, std::shared_future<T>> entries;
  };
  template <class T>
  T cached(Cache<T>& cache, const std::string& key, const std::function<T()>& make);

  void for_each_parallel(std::size_t n, const std::function<void(std::size_t)>& fn) const;
  double effective_lambda(bool semantic) const;
  Translator clone_translator(const Translator& tm) const;
  Segmenter clone_segmenter(const Segmenter& seg) const;

  RunConfig cfg_;
  TaskData data_;
  std::filesystem::path root_;
  bool train_missing_ = true;
  Cache<std::shared_ptr<const SourceStage>> source_cache_;
  Cache<Translator> translator_cache_;
  Cache<std::shared_ptr<const Dataset>> pseudo_cache_;
  Cache<double> threshold_cache_;
};

}  // namespace hetseg
