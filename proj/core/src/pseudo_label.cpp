#include "hetseg/pseudo_label.hpp"

#include <numeric>

#include "hetseg/error.hpp"
#include "hetseg/objectives.hpp"

namespace hetseg {

PseudoMask pseudo_label(const torch::Tensor& p, double threshold) {
  if (p.dim() != 3) throw ShapeError("pseudo_label expects a [K,H,W] soft prediction");
  validate_soft_prediction(p);
  const auto classes = p.size(0);
  if (!(threshold > 1.0 / static_cast<double>(classes) && threshold < 1.0)) {
    throw ConfigError("pseudo_label.threshold: must lie in (1/" + std::to_string(classes) + ", 1), got " +
                      std::to_string(threshold));
  }
  auto mask = torch::zeros_like(p);
  for (std::int64_t c = 0; c < classes; ++c) {
    auto pc = p.select(0, c);
    auto strict_max = torch::ones_like(pc, torch::kBool);
    for (std::int64_t o = 0; o < classes; ++o) {
      if (o != c) strict_max = strict_max & (pc > p.select(0, o));
    }
    mask.select(0, c).copy_((strict_max & (pc > threshold)).to(p.dtype()));
  }
  PseudoMask out;
  out.coverage = mask.sum(0).mean().item<double>();
  out.mask = std::move(mask);
  out.threshold = threshold;
  return out;
}

StylePolicy style_policy_from_string(const std::string& name) {
  if (name == "prior_mean") return StylePolicy::prior_mean;
  if (name == "random") return StylePolicy::random;
  if (name == "average") return StylePolicy::average;
  throw ConfigError("pseudo_label.style_policy: unknown policy '" + name + "'");
}

std::string to_string(StylePolicy policy) {
  switch (policy) {
    case StylePolicy::prior_mean:
      return "prior_mean";
    case StylePolicy::random:
      return "random";
    case StylePolicy::average:
      return "average";
  }
  return "prior_mean";
}

torch::Tensor soft_predictions_via_source(const Dataset& targets, Translator& translator, Segmenter& seg_s,
                                          const PseudoLabelOptions& opts) {
  if (targets.empty()) throw DataError("pseudo-labeling: target dataset is empty");
  const auto& src = translator->spec(Domain::source);
  const auto& tgt = translator->spec(Domain::target);
  if (targets.spec().channels != tgt.channels) {
    throw ShapeError("pseudo-labeling: targets have " + std::to_string(targets.spec().channels) +
                     " channels, translator expects " + std::to_string(tgt.channels));
  }
  if (seg_s->config().in_channels != src.channels) {
    throw ShapeError("pseudo-labeling: source segmenter takes " + std::to_string(seg_s->config().in_channels) +
                     " channels, source domain has " + std::to_string(src.channels));
  }
  EvalModeGuard translator_eval(*translator);
  EvalModeGuard seg_eval(*seg_s);
  torch::NoGradGuard no_grad;
  auto gen = at::detail::createCPUGenerator(opts.seed);
  const auto style_dim = translator->config().style_dim;
  const int draws = opts.style_policy == StylePolicy::average ? std::max(opts.average_draws, 1) : 1;

  std::vector<torch::Tensor> chunks;
  std::vector<std::size_t> idx(targets.size());
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  for (std::size_t start = 0; start < idx.size(); start += static_cast<std::size_t>(opts.batch_size)) {
    const auto stop = std::min(idx.size(), start + static_cast<std::size_t>(opts.batch_size));
    auto x = targets.images(std::span<const std::size_t>(idx).subspan(start, stop - start));
    const auto n = x.size(0);
    auto content = translator->encode_content(x, Domain::target);
    torch::Tensor acc;
    for (int d = 0; d < draws; ++d) {
      StyleCode s = opts.style_policy == StylePolicy::prior_mean ? StyleCode{torch::zeros({n, style_dim})}
                                                                 : sample_style_prior(gen, n, style_dim);
      auto p = seg_s->forward(translator->decode(content, s, Domain::source));
      acc = acc.defined() ? acc + p : p;
    }
    chunks.push_back(acc / static_cast<double>(draws));
  }
  return torch::cat(chunks, 0);
}

Dataset pseudolabels_from_soft(const Dataset& targets, const torch::Tensor& soft, double threshold) {
  if (soft.size(0) != static_cast<std::int64_t>(targets.size())) {
    throw ShapeError("pseudo-labeling: one soft prediction per target sample is required");
  }
  std::vector<Sample> out;
  out.reserve(targets.size());
  for (std::size_t i = 0; i < targets.size(); ++i) {
    auto pm = pseudo_label(soft[static_cast<std::int64_t>(i)], threshold);
    Sample s = targets[i];
    s.mask = pm.mask;
    s.pseudo = PseudoLabelInfo{pm.threshold, pm.coverage};
    out.push_back(std::move(s));
  }
  return Dataset(targets.spec(), std::move(out));
}

Dataset generate_pseudolabels(const Dataset& targets, Translator& translator, Segmenter& seg_s,
                              const PseudoLabelOptions& opts) {
  return pseudolabels_from_soft(targets, soft_predictions_via_source(targets, translator, seg_s, opts),
                                opts.threshold);
}

}  // namespace hetseg
