#pragma once

#include <string>
#include <string_view>
#include <vector>

namespace hetseg {

/// The compared training recipes for the target segmenter.
enum class Baseline {
  i,     ///< real target labels only (oracle)
  ii,    ///< real target labels + synthetic target images
  iii,   ///< raw source through a channel adapter + entropy minimization, no translation
  iv,    ///< synthetic only, translator trained without the semantic term
  v,     ///< synthetic only, translator trained with the semantic term
  vi,    ///< v + entropy minimization
  vii,   ///< v + pseudo-labels
  viii,  ///< v + entropy minimization + pseudo-labels
};

/// Accepts the lower-case roman numerals. Throws ConfigError listing the valid ids.
Baseline baseline_from_string(std::string_view id);
std::string to_string(Baseline b);
std::string describe(Baseline b);
const std::vector<Baseline>& all_baselines();

/// Data streams and translator a baseline trains with.
struct BaselineRecipe {
  bool synthetic = false;
  bool raw_source = false;
  bool real_labels = false;
  bool entmin = false;
  bool pslab = false;
  /// Whether the translator's semantic term is switched on (weight from the config) or zeroed.
  bool semantic_translator = true;

  bool needs_translator() const { return synthetic || pslab; }
};

BaselineRecipe recipe(Baseline b);

}  // namespace hetseg
