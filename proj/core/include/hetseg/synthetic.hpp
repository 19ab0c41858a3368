#pragma once

#include <cstdint>

#include "hetseg/domain.hpp"

namespace hetseg {

/// Parameters of the synthetic heterogeneous-domain lesion task.
///
/// Both domains render one latent tissue map per slice: a smooth background plus elliptical
/// lesions of raised intensity. Each source channel is a fixed monotone nonlinearity of the
/// latent map; each target channel is a different fixed nonlinearity, further modulated by a
/// per-patient gain/offset "style". Channel nonlinearities come from `channel_mixing_seed`,
/// anatomy and noise from `seed`.
struct SyntheticTaskConfig {
  DomainSpec source_spec{"source", 5, 32, 32, 2};
  DomainSpec target_spec{"target", 15, 32, 32, 2};
  int lesion_count_min = 0;
  int lesion_count_max = 2;
  double lesion_radius_min = 2.5;
  double lesion_radius_max = 5.0;
  std::uint64_t channel_mixing_seed = 7;
  std::uint64_t seed = 1234;
  double noise_std = 0.05;
  int num_patients_source = 16;
  int num_patients_target = 12;
  int num_patients_heldout = 12;
  int slices_per_patient = 6;

  /// Throws ConfigError with every violated constraint.
  void validate() const;
};

struct SyntheticTask {
  Dataset source_labeled;
  Dataset target_unlabeled;
  Dataset target_heldout;
};

/// Pure function of the config: identical configs give bit-identical datasets.
SyntheticTask generate_synthetic_task(const SyntheticTaskConfig& cfg);

}  // namespace hetseg
