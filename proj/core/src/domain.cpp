#include "hetseg/domain.hpp"

#include <algorithm>
#include <random>
#include <sstream>

#include "hetseg/error.hpp"

namespace hetseg {

namespace {

std::string shape_string(c10::IntArrayRef shape) {
  std::ostringstream out;
  out << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i != 0) out << ',';
    out << shape[i];
  }
  out << ']';
  return out.str();
}

}  // namespace

void DomainSpec::validate() const {
  std::vector<std::string> problems;
  if (name.empty()) problems.emplace_back("domain.name: must not be empty");
  if (channels < 1) problems.emplace_back("domain.channels: must be >= 1");
  if (height < 1) problems.emplace_back("domain.height: must be >= 1");
  if (width < 1) problems.emplace_back("domain.width: must be >= 1");
  if (num_classes < 2) problems.emplace_back("domain.num_classes: must be >= 2");
  if (!problems.empty()) throw ConfigError(std::move(problems));
}

void validate_sample(const Sample& sample, const DomainSpec& spec) {
  const auto where = "sample '" + sample.name + "'";
  if (!sample.image.defined()) throw DataError(where + ": image tensor missing");
  if (sample.image.sizes() != c10::IntArrayRef(spec.image_shape())) {
    throw DataError(where + ": image shape " + shape_string(sample.image.sizes()) +
                    " does not match domain '" + spec.name + "' shape " +
                    shape_string(spec.image_shape()));
  }
  if (!sample.mask) return;
  const auto& mask = *sample.mask;
  if (mask.sizes() != c10::IntArrayRef(spec.mask_shape())) {
    throw DataError(where + ": mask shape " + shape_string(mask.sizes()) + " expected " +
                    shape_string(spec.mask_shape()));
  }
  const bool binary = ((mask == 0) | (mask == 1)).all().item<bool>();
  if (!binary) throw DataError(where + ": mask values must be exactly 0 or 1");
  const auto column_sums = mask.sum(0);
  const bool valid = sample.pseudo ? ((column_sums == 0) | (column_sums == 1)).all().item<bool>()
                                   : (column_sums == 1).all().item<bool>();
  if (!valid) {
    throw DataError(where + (sample.pseudo ? ": pseudo mask columns must sum to 0 or 1"
                                           : ": mask is not one-hot at every pixel"));
  }
}

Dataset::Dataset(DomainSpec spec, std::vector<Sample> samples)
    : spec_(std::move(spec)), samples_(std::move(samples)) {
  spec_.validate();
  for (const auto& sample : samples_) validate_sample(sample, spec_);
}

bool Dataset::all_labeled() const {
  return std::all_of(samples_.begin(), samples_.end(), [](const Sample& s) { return s.labeled(); });
}

std::vector<std::string> Dataset::patient_ids() const {
  std::vector<std::string> ids;
  std::set<std::string> seen;
  for (const auto& sample : samples_) {
    if (seen.insert(sample.patient_id).second) ids.push_back(sample.patient_id);
  }
  return ids;
}

Dataset Dataset::select_patients(const std::set<std::string>& patients) const {
  std::vector<Sample> kept;
  for (const auto& sample : samples_) {
    if (patients.contains(sample.patient_id)) kept.push_back(sample);
  }
  Dataset out;
  out.spec_ = spec_;
  out.samples_ = std::move(kept);
  return out;
}

Dataset Dataset::exclude_patients(const std::set<std::string>& patients) const {
  std::vector<Sample> kept;
  for (const auto& sample : samples_) {
    if (!patients.contains(sample.patient_id)) kept.push_back(sample);
  }
  Dataset out;
  out.spec_ = spec_;
  out.samples_ = std::move(kept);
  return out;
}

Dataset Dataset::without_masks() const {
  Dataset out;
  out.spec_ = spec_;
  out.samples_ = samples_;
  for (auto& sample : out.samples_) {
    sample.mask.reset();
    sample.pseudo.reset();
  }
  return out;
}

torch::Tensor Dataset::images(std::span<const std::size_t> indices) const {
  std::vector<torch::Tensor> parts;
  parts.reserve(indices.size());
  for (auto i : indices) parts.push_back(samples_.at(i).image);
  return torch::stack(parts);
}

torch::Tensor Dataset::images() const {
  std::vector<torch::Tensor> parts;
  parts.reserve(samples_.size());
  for (const auto& sample : samples_) parts.push_back(sample.image);
  return torch::stack(parts);
}

torch::Tensor Dataset::masks(std::span<const std::size_t> indices) const {
  std::vector<torch::Tensor> parts;
  parts.reserve(indices.size());
  for (auto i : indices) {
    const auto& sample = samples_.at(i);
    if (!sample.mask) throw DataError("sample '" + sample.name + "' has no mask");
    parts.push_back(*sample.mask);
  }
  return torch::stack(parts);
}

torch::Tensor Dataset::masks() const {
  std::vector<std::size_t> all(samples_.size());
  for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;
  return masks(all);
}

int FoldPlan::fold_of(const std::string& patient_id) const {
  auto it = assignment.find(patient_id);
  if (it == assignment.end()) throw DataError("patient '" + patient_id + "' is not in the fold plan");
  return it->second;
}

std::vector<std::vector<std::string>> FoldPlan::folds() const {
  std::vector<std::vector<std::string>> out(static_cast<std::size_t>(num_folds));
  for (const auto& [patient, fold] : assignment) out.at(static_cast<std::size_t>(fold)).push_back(patient);
  return out;
}

std::set<std::string> FoldPlan::patients_in(int fold) const {
  std::set<std::string> out;
  for (const auto& [patient, f] : assignment) {
    if (f == fold) out.insert(patient);
  }
  return out;
}

std::set<std::string> FoldPlan::patients_not_in(int fold) const {
  std::set<std::string> out;
  for (const auto& [patient, f] : assignment) {
    if (f != fold) out.insert(patient);
  }
  return out;
}

FoldPlan make_folds(const std::vector<std::string>& patient_ids, int k, std::uint64_t seed) {
  if (k < 2) throw ConfigError("folds: k must be >= 2, got " + std::to_string(k));
  std::set<std::string> distinct(patient_ids.begin(), patient_ids.end());
  if (distinct.size() != patient_ids.size()) throw ConfigError("folds: duplicate patient ids");
  if (patient_ids.size() < static_cast<std::size_t>(k)) {
    throw ConfigError("folds: " + std::to_string(patient_ids.size()) + " patients cannot fill " +
                      std::to_string(k) + " folds");
  }
  // Sorting first makes the plan independent of the caller's ordering.
  std::vector<std::string> order(distinct.begin(), distinct.end());
  std::mt19937_64 rng(seed);
  std::shuffle(order.begin(), order.end(), rng);

  FoldPlan plan;
  plan.num_folds = k;
  for (std::size_t i = 0; i < order.size(); ++i) plan.assignment[order[i]] = static_cast<int>(i % k);
  return plan;
}

}  // namespace hetseg
