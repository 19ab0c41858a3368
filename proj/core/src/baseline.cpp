#include "hetseg/baseline.hpp"

#include <array>

#include "hetseg/error.hpp"

namespace hetseg {

namespace {

constexpr std::array<std::string_view, 8> kIds = {"i", "ii", "iii", "iv", "v", "vi", "vii", "viii"};

}  // namespace

Baseline baseline_from_string(std::string_view id) {
  for (std::size_t k = 0; k < kIds.size(); ++k) {
    if (kIds[k] == id) return static_cast<Baseline>(k);
  }
  throw ConfigError("experiment.baseline: unknown baseline '" + std::string(id) +
                    "' (expected one of i, ii, iii, iv, v, vi, vii, viii)");
}

std::string to_string(Baseline b) { return std::string(kIds.at(static_cast<std::size_t>(b))); }

std::string describe(Baseline b) {
  switch (b) {
    case Baseline::i: return "target labels only (oracle)";
    case Baseline::ii: return "target labels + synthetic";
    case Baseline::iii: return "source via channel adapter + entropy minimization";
    case Baseline::iv: return "synthetic, translator without semantic term";
    case Baseline::v: return "synthetic, translator with semantic term";
    case Baseline::vi: return "synthetic + entropy minimization";
    case Baseline::vii: return "synthetic + pseudo-labels";
    case Baseline::viii: return "synthetic + entropy minimization + pseudo-labels";
  }
  return {};
}

const std::vector<Baseline>& all_baselines() {
  static const std::vector<Baseline> all = {Baseline::i,  Baseline::ii,  Baseline::iii, Baseline::iv,
                                            Baseline::v,  Baseline::vi,  Baseline::vii, Baseline::viii};
  return all;
}

BaselineRecipe recipe(Baseline b) {
  BaselineRecipe r;
  switch (b) {
    case Baseline::i:
      r.real_labels = true;
      break;
    case Baseline::ii:
      r.real_labels = true;
      r.synthetic = true;
      break;
    case Baseline::iii:
      r.raw_source = true;
      r.entmin = true;
      break;
    case Baseline::iv:
      r.synthetic = true;
      r.semantic_translator = false;
      break;
    case Baseline::v:
      r.synthetic = true;
      break;
    case Baseline::vi:
      r.synthetic = true;
      r.entmin = true;
      break;
    case Baseline::vii:
      r.synthetic = true;
      r.pslab = true;
      break;
    case Baseline::viii:
      r.synthetic = true;
      r.entmin = true;
      r.pslab = true;
      break;
  }
  return r;
}

}  // namespace hetseg
