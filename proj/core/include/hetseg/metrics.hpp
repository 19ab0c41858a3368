#pragma once

#include <torch/torch.h>

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "hetseg/domain.hpp"
#include "hetseg/segmentation.hpp"
#include "hetseg/translation.hpp"

namespace hetseg {

/// Lesion-class (index 1) confusion counts.
struct PixelCounts {
  std::int64_t tp = 0;
  std::int64_t fp = 0;
  std::int64_t fn = 0;

  PixelCounts& operator+=(const PixelCounts& o) {
    tp += o.tp;
    fp += o.fp;
    fn += o.fn;
    return *this;
  }
};

struct PixelMetrics {
  double recall = 0.0;
  double precision = 0.0;
  double dsc = 0.0;
};

/// Counts on class 1 of one-hot tensors of equal shape ([K,H,W] or [N,K,H,W]).
PixelCounts count_pixels(const torch::Tensor& pred_hard, const torch::Tensor& truth);

/// recall = TP/(TP+FN), precision = TP/(TP+FP), DSC = 2TP/(2TP+FP+FN).
/// A 0/0 ratio is 1 when the other error count is also 0 (nothing to find, nothing claimed)
/// and 0 otherwise. Empty truth with empty prediction therefore scores (1,1,1).
PixelMetrics metrics_from_counts(const PixelCounts& c);
PixelMetrics pixel_metrics(const torch::Tensor& pred_hard, const torch::Tensor& truth);

/// Mean over positive pixels of the precision at that pixel's rank, ranking by descending score.
/// Equal scores form one group whose positives all receive the precision at the group's end.
/// Returns nullopt when `truth` has no positives.
std::optional<double> average_precision(std::span<const float> scores, std::span<const std::uint8_t> truth);
std::optional<double> average_precision(const torch::Tensor& scores, const torch::Tensor& truth);

/// Metrics of one (fold, seed) evaluation. `method` and `fraction` label sweep records.
struct FoldRecord {
  int fold = 0;
  std::uint64_t seed = 0;
  double recall = 0.0;
  double precision = 0.0;
  double dsc = 0.0;
  double ap = 0.0;
  std::string method;
  double fraction = 0.0;

  bool operator==(const FoldRecord&) const = default;
};

struct MetricSummary {
  double mean = 0.0;
  double std = 0.0;

  bool operator==(const MetricSummary&) const = default;
};

struct MetricsReport {
  std::vector<FoldRecord> records;
  MetricSummary recall, precision, dsc, ap;

  bool operator==(const MetricsReport&) const = default;
};

/// Mean and population standard deviation of each metric. Throws ConfigError when empty.
MetricsReport aggregate(std::vector<FoldRecord> records);

nlohmann::json to_json(const MetricsReport& report);

inline constexpr const char* kMetricsCsvHeader = "fold,seed,recall,precision,dsc,ap";
inline constexpr int kMetricsCsvVersion = 1;

/// Writes `metrics.json` and `metrics.csv` into `dir`.
void emit_report(const MetricsReport& report, const std::filesystem::path& dir);
std::vector<FoldRecord> read_metrics_csv(const std::filesystem::path& path);

/// Per-patient evaluation of a segmenter on labeled images, pooling each patient's slices.
struct Evaluation {
  PixelMetrics pixel;     ///< mean over patients
  double ap = 0.0;        ///< mean over patients with at least one positive pixel
  int patients = 0;
  int ap_excluded = 0;    ///< patients without positives
  double mean_entropy = 0.0;
};

/// `preprocess`, when set, maps the dataset's images before the segmenter (e.g. a channel adapter).
Evaluation evaluate_segmenter(Segmenter& seg, const Dataset& labeled,
                              const std::function<torch::Tensor(const torch::Tensor&)>& preprocess = {});

/// Mean normalized prediction entropy over a dataset.
double mean_prediction_entropy(Segmenter& seg, const Dataset& images);

/// Soft dice of the source segmenter on cycle-reconstructed source images against their masks,
/// pooled over the set. `cycle_fn` maps a [N,C,H,W] source batch to its reconstruction.
double lesion_preservation_score(const std::function<torch::Tensor(const torch::Tensor&)>& cycle_fn,
                                 Segmenter& seg_s, const Dataset& source_labeled);
double lesion_preservation_score(Translator& translator, Segmenter& seg_s, const Dataset& source_labeled,
                                 std::uint64_t seed = 0);

/// One point of a supervision sweep.
struct SweepPoint {
  double fraction = 0.0;
  std::string method;
  int fold = 0;
  std::uint64_t seed = 0;
  std::string metric;
  double value = 0.0;
};

void emit_sweep_csv(const std::vector<SweepPoint>& series, const std::filesystem::path& path);
/// One SVG line plot per metric: x = labeled fraction, y = metric mean over folds and seeds,
/// one line per method. Returns the written files.
std::vector<std::filesystem::path> emit_plots(const std::vector<SweepPoint>& series,
                                              const std::filesystem::path& dir);

}  // namespace hetseg
