#pragma once

#include <torch/torch.h>

#include <cstdint>
#include <map>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <vector>

namespace hetseg {

/// Names an imaging domain and fixes the tensor geometry of its samples.
struct DomainSpec {
  std::string name;
  std::int64_t channels = 1;
  std::int64_t height = 32;
  std::int64_t width = 32;
  std::int64_t num_classes = 2;

  /// Throws ConfigError listing every violated field.
  void validate() const;
  std::vector<std::int64_t> image_shape() const { return {channels, height, width}; }
  std::vector<std::int64_t> mask_shape() const { return {num_classes, height, width}; }

  bool operator==(const DomainSpec&) const = default;
};

/// Provenance attached to masks produced by confidence thresholding.
struct PseudoLabelInfo {
  double threshold = 0.0;
  double coverage = 0.0;
};

/// One 2D slice. `image` is float32 [C,H,W]; `mask`, when present, is float32 [K,H,W].
struct Sample {
  std::string name;
  torch::Tensor image;
  std::optional<torch::Tensor> mask;
  std::string patient_id;
  std::string domain;
  std::optional<PseudoLabelInfo> pseudo;

  bool labeled() const noexcept { return mask.has_value(); }
};

/// Checks shape against the spec and mask validity: one-hot for ground truth, one-hot or
/// all-zero per pixel for pseudo masks. Throws DataError naming the sample.
void validate_sample(const Sample& sample, const DomainSpec& spec);

/// Immutable ordered collection of samples from one domain.
class Dataset {
 public:
  Dataset() = default;
  Dataset(DomainSpec spec, std::vector<Sample> samples);

  const DomainSpec& spec() const noexcept { return spec_; }
  std::size_t size() const noexcept { return samples_.size(); }
  bool empty() const noexcept { return samples_.empty(); }
  const Sample& operator[](std::size_t i) const { return samples_.at(i); }
  std::span<const Sample> samples() const noexcept { return samples_; }
  auto begin() const noexcept { return samples_.begin(); }
  auto end() const noexcept { return samples_.end(); }

  bool all_labeled() const;
  /// Distinct patient ids in order of first appearance.
  std::vector<std::string> patient_ids() const;

  Dataset select_patients(const std::set<std::string>& patients) const;
  Dataset exclude_patients(const std::set<std::string>& patients) const;
  Dataset without_masks() const;

  /// Stacks the selected images into [N,C,H,W].
  torch::Tensor images(std::span<const std::size_t> indices) const;
  torch::Tensor images() const;
  /// Stacks the selected masks into [N,K,H,W]; throws if any is missing.
  torch::Tensor masks(std::span<const std::size_t> indices) const;
  torch::Tensor masks() const;

 private:
  DomainSpec spec_;
  std::vector<Sample> samples_;
};

/// Patient-level partition into folds.
struct FoldPlan {
  int num_folds = 5;
  std::map<std::string, int> assignment;

  int fold_of(const std::string& patient_id) const;
  std::vector<std::vector<std::string>> folds() const;
  std::set<std::string> patients_in(int fold) const;
  std::set<std::string> patients_not_in(int fold) const;
};

/// Shuffles deterministically by seed, then assigns round-robin.
FoldPlan make_folds(const std::vector<std::string>& patient_ids, int k, std::uint64_t seed);

}  // namespace hetseg
