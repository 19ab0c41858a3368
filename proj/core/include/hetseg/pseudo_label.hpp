#pragma once

#include <torch/torch.h>

#include <cstdint>
#include <string>
#include <vector>

#include "hetseg/domain.hpp"
#include "hetseg/segmentation.hpp"
#include "hetseg/translation.hpp"

namespace hetseg {

/// Per-pixel columns are one-hot (confident) or all zero (no label).
struct PseudoMask {
  torch::Tensor mask;
  double coverage = 0.0;
  double threshold = 0.0;
};

/// Pixel (h,w) gets class c iff c is the strict argmax of P(h,w,:) and P(h,w,c) > threshold.
/// Accepts [K,H,W]; coverage is the fraction of labeled pixels. Threshold must lie in (1/K, 1).
PseudoMask pseudo_label(const torch::Tensor& p, double threshold);

/// Style code used when decoding target content into the source domain.
enum class StylePolicy {
  prior_mean,  ///< s = 0, deterministic
  random,      ///< one draw from the prior per image
  average,     ///< mean of soft predictions over several draws
};

StylePolicy style_policy_from_string(const std::string& name);
std::string to_string(StylePolicy policy);

struct PseudoLabelOptions {
  double threshold = 0.8;
  StylePolicy style_policy = StylePolicy::prior_mean;
  int average_draws = 4;
  std::uint64_t seed = 0;
  std::int64_t batch_size = 32;
};

/// Translates target images into the source domain, predicts them with the source segmenter,
/// and thresholds the soft prediction. Soft predictions are [N,K,H,W], aligned with `targets`.
torch::Tensor soft_predictions_via_source(const Dataset& targets, Translator& translator, Segmenter& seg_s,
                                          const PseudoLabelOptions& opts);

/// Returns the target images paired with pseudo masks (pseudo provenance recorded per sample).
Dataset generate_pseudolabels(const Dataset& targets, Translator& translator, Segmenter& seg_s,
                              const PseudoLabelOptions& opts);

/// Same, reusing already computed soft predictions.
Dataset pseudolabels_from_soft(const Dataset& targets, const torch::Tensor& soft, double threshold);

}  // namespace hetseg
