#include "hetseg/synthetic.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <numbers>
#include <random>

#include "hetseg/error.hpp"

namespace hetseg {

namespace {

constexpr std::int64_t kMinSpatial = 16;

/// Monotone response of one imaging channel to the latent tissue value.
struct ChannelResponse {
  double slope;
  double midpoint;
  double scale;

  double operator()(double tissue) const { return scale * std::tanh(slope * (tissue - midpoint)); }
};

std::vector<ChannelResponse> draw_responses(std::int64_t channels, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> slope(2.0, 4.5);
  std::uniform_real_distribution<double> midpoint(0.3, 0.7);
  std::uniform_real_distribution<double> scale(0.6, 0.95);
  std::bernoulli_distribution inverted(0.4);
  std::vector<ChannelResponse> out;
  out.reserve(static_cast<std::size_t>(channels));
  for (std::int64_t c = 0; c < channels; ++c) {
    double s = slope(rng);
    if (inverted(rng)) s = -s;
    out.push_back({s, midpoint(rng), scale(rng)});
  }
  return out;
}

struct DomainStyle {
  std::vector<double> gain_direction;
  std::vector<double> offset_direction;
  double gain_strength = 0.0;
  double offset_strength = 0.0;
};

struct Lesion {
  double cy, cx, ry, rx, angle;
};

struct SliceAnatomy {
  std::vector<double> tissue;  // H*W
  std::vector<std::uint8_t> lesion;
};

SliceAnatomy draw_anatomy(const SyntheticTaskConfig& cfg, std::int64_t height, std::int64_t width,
                          double base, double contrast, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::uniform_real_distribution<double> freq(0.5, 2.0);
  std::uniform_real_distribution<double> amplitude(0.03, 0.07);
  std::uniform_real_distribution<double> phase(0.0, 2.0 * std::numbers::pi);
  std::uniform_int_distribution<int> count(cfg.lesion_count_min, cfg.lesion_count_max);
  std::uniform_real_distribution<double> radius(cfg.lesion_radius_min, cfg.lesion_radius_max);

  struct Wave {
    double fy, fx, amp, phi;
  };
  std::array<Wave, 3> waves{};
  for (auto& w : waves) w = {freq(rng), freq(rng), amplitude(rng), phase(rng)};

  std::vector<Lesion> lesions(static_cast<std::size_t>(count(rng)));
  const double margin = cfg.lesion_radius_max;
  for (auto& l : lesions) {
    l.cy = margin + unit(rng) * (static_cast<double>(height) - 2.0 * margin);
    l.cx = margin + unit(rng) * (static_cast<double>(width) - 2.0 * margin);
    l.ry = radius(rng);
    l.rx = radius(rng);
    l.angle = unit(rng) * std::numbers::pi;
  }

  SliceAnatomy out;
  out.tissue.resize(static_cast<std::size_t>(height * width));
  out.lesion.resize(out.tissue.size());
  for (std::int64_t h = 0; h < height; ++h) {
    for (std::int64_t w = 0; w < width; ++w) {
      const double y = (static_cast<double>(h) + 0.5) / static_cast<double>(height);
      const double x = (static_cast<double>(w) + 0.5) / static_cast<double>(width);
      double t = base;
      for (const auto& wave : waves) {
        t += wave.amp * std::cos(2.0 * std::numbers::pi * (wave.fy * y + wave.fx * x) + wave.phi);
      }
      bool inside = false;
      for (const auto& l : lesions) {
        const double dy = static_cast<double>(h) + 0.5 - l.cy;
        const double dx = static_cast<double>(w) + 0.5 - l.cx;
        const double u = (dy * std::cos(l.angle) + dx * std::sin(l.angle)) / l.ry;
        const double v = (-dy * std::sin(l.angle) + dx * std::cos(l.angle)) / l.rx;
        if (u * u + v * v <= 1.0) inside = true;
      }
      const auto idx = static_cast<std::size_t>(h * width + w);
      out.tissue[idx] = inside ? t + contrast : t;
      out.lesion[idx] = inside ? 1 : 0;
    }
  }
  return out;
}

torch::Tensor render(const SliceAnatomy& anatomy, const DomainSpec& spec,
                     const std::vector<ChannelResponse>& responses, const std::vector<double>& gain,
                     const std::vector<double>& offset, double noise_std, std::mt19937_64& rng) {
  std::normal_distribution<double> noise(0.0, 1.0);
  auto image = torch::empty({spec.channels, spec.height, spec.width}, torch::kFloat32);
  auto acc = image.accessor<float, 3>();
  for (std::int64_t c = 0; c < spec.channels; ++c) {
    const auto ci = static_cast<std::size_t>(c);
    for (std::int64_t h = 0; h < spec.height; ++h) {
      for (std::int64_t w = 0; w < spec.width; ++w) {
        const double t = anatomy.tissue[static_cast<std::size_t>(h * spec.width + w)];
        double value = gain[ci] * responses[ci](t) + offset[ci] + noise_std * noise(rng);
        acc[c][h][w] = static_cast<float>(std::clamp(value, -1.0, 1.0));
      }
    }
  }
  return image;
}

torch::Tensor lesion_mask(const SliceAnatomy& anatomy, const DomainSpec& spec) {
  auto mask = torch::zeros({spec.num_classes, spec.height, spec.width}, torch::kFloat32);
  auto acc = mask.accessor<float, 3>();
  for (std::int64_t h = 0; h < spec.height; ++h) {
    for (std::int64_t w = 0; w < spec.width; ++w) {
      const auto cls = anatomy.lesion[static_cast<std::size_t>(h * spec.width + w)];
      acc[cls][h][w] = 1.0F;
    }
  }
  return mask;
}

std::string patient_name(const char* prefix, int index) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%s-p%03d", prefix, index);
  return buf;
}

std::string slice_name(const std::string& patient, int slice) {
  char buf[16];
  std::snprintf(buf, sizeof(buf), "-s%02d", slice);
  return patient + buf;
}

/// Renders one cohort. `style` is null for the source domain.
Dataset render_cohort(const SyntheticTaskConfig& cfg, const DomainSpec& spec, const char* prefix,
                      int num_patients, const std::vector<ChannelResponse>& responses,
                      const DomainStyle* style, bool with_masks, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> base(0.2, 0.35);
  std::uniform_real_distribution<double> contrast(0.35, 0.5);
  std::normal_distribution<double> normal(0.0, 1.0);

  std::vector<Sample> samples;
  for (int p = 0; p < num_patients; ++p) {
    const auto patient = patient_name(prefix, p);
    const double patient_base = base(rng);
    const double patient_contrast = contrast(rng);
    std::vector<double> gain(static_cast<std::size_t>(spec.channels), 1.0);
    std::vector<double> offset(static_cast<std::size_t>(spec.channels), 0.0);
    if (style != nullptr) {
      const double z_gain = normal(rng);
      const double z_offset = normal(rng);
      for (std::size_t c = 0; c < gain.size(); ++c) {
        gain[c] = 1.0 + style->gain_strength * z_gain * style->gain_direction[c];
        offset[c] = style->offset_strength * z_offset * style->offset_direction[c];
      }
    }
    for (int s = 0; s < cfg.slices_per_patient; ++s) {
      auto anatomy = draw_anatomy(cfg, spec.height, spec.width, patient_base, patient_contrast, rng);
      Sample sample;
      sample.name = slice_name(patient, s);
      sample.patient_id = patient;
      sample.domain = spec.name;
      sample.image = render(anatomy, spec, responses, gain, offset, cfg.noise_std, rng);
      if (with_masks) sample.mask = lesion_mask(anatomy, spec);
      samples.push_back(std::move(sample));
    }
  }
  return Dataset(spec, std::move(samples));
}

}  // namespace

void SyntheticTaskConfig::validate() const {
  std::vector<std::string> problems;
  for (const auto& [key, spec] : {std::pair{"task.source", &source_spec}, std::pair{"task.target", &target_spec}}) {
    try {
      spec->validate();
    } catch (const ConfigError& e) {
      for (const auto& p : e.problems()) {
        problems.push_back(p.starts_with("domain.") ? std::string(key) + p.substr(6) : p);
      }
    }
    if (spec->height < kMinSpatial || spec->width < kMinSpatial) {
      problems.push_back(std::string(key) + ": height and width must be >= 16");
    }
    if (spec->num_classes != 2) problems.push_back(std::string(key) + ": num_classes must be 2");
  }
  if (source_spec.height != target_spec.height || source_spec.width != target_spec.width) {
    problems.emplace_back("task: source and target must share height and width");
  }
  if (source_spec.name == target_spec.name) problems.emplace_back("task: domain names must differ");
  if (lesion_count_min < 0 || lesion_count_max < lesion_count_min) {
    problems.emplace_back("task.lesion_count_max: need 0 <= lesion_count_min <= lesion_count_max");
  }
  if (!(lesion_radius_min > 0.0) || lesion_radius_max < lesion_radius_min) {
    problems.emplace_back("task.lesion_radius_max: need 0 < lesion_radius_min <= lesion_radius_max");
  }
  if (2.0 * lesion_radius_max >= static_cast<double>(std::min(source_spec.height, source_spec.width))) {
    problems.emplace_back("task.lesion_radius_max: lesions do not fit inside the image");
  }
  if (!(noise_std >= 0.0)) problems.emplace_back("task.noise_std: must be >= 0");
  if (num_patients_source < 1) problems.emplace_back("task.num_patients_source: must be >= 1");
  if (num_patients_target < 1) problems.emplace_back("task.num_patients_target: must be >= 1");
  if (num_patients_heldout < 1) problems.emplace_back("task.num_patients_heldout: must be >= 1");
  if (slices_per_patient < 1) problems.emplace_back("task.slices_per_patient: must be >= 1");
  if (!problems.empty()) throw ConfigError(std::move(problems));
}

SyntheticTask generate_synthetic_task(const SyntheticTaskConfig& cfg) {
  cfg.validate();

  std::mt19937_64 mixing(cfg.channel_mixing_seed);
  const auto source_responses = draw_responses(cfg.source_spec.channels, mixing);
  const auto target_responses = draw_responses(cfg.target_spec.channels, mixing);
  DomainStyle target_style;
  std::uniform_real_distribution<double> gain_dir(0.5, 1.0);
  std::uniform_real_distribution<double> offset_dir(-1.0, 1.0);
  for (std::int64_t c = 0; c < cfg.target_spec.channels; ++c) {
    target_style.gain_direction.push_back(gain_dir(mixing));
    target_style.offset_direction.push_back(offset_dir(mixing));
  }
  target_style.gain_strength = 0.15;
  target_style.offset_strength = 0.12;

  // Separate streams per cohort so changing one cohort size leaves the others untouched.
  std::mt19937_64 source_rng(cfg.seed);
  std::mt19937_64 target_rng(cfg.seed ^ 0x9e3779b97f4a7c15ULL);
  std::mt19937_64 heldout_rng(cfg.seed ^ 0xc2b2ae3d27d4eb4fULL);

  SyntheticTask task;
  task.source_labeled = render_cohort(cfg, cfg.source_spec, "src", cfg.num_patients_source,
                                      source_responses, nullptr, true, source_rng);
  task.target_unlabeled = render_cohort(cfg, cfg.target_spec, "tgt", cfg.num_patients_target,
                                        target_responses, &target_style, false, target_rng);
  task.target_heldout = render_cohort(cfg, cfg.target_spec, "hld", cfg.num_patients_heldout,
                                      target_responses, &target_style, true, heldout_rng);
  return task;
}

}  // namespace hetseg
