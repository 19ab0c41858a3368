#include "hetseg/objectives.hpp"

#include <cmath>
#include <sstream>

#include "hetseg/error.hpp"

namespace hetseg {

namespace {

torch::Tensor batched(const torch::Tensor& t) { return t.dim() == 3 ? t.unsqueeze(0) : t; }

void require_same_shape(const torch::Tensor& a, const torch::Tensor& b, const char* what) {
  if (a.sizes() != b.sizes()) {
    std::ostringstream out;
    out << what << ": shape mismatch " << a.sizes() << " vs " << b.sizes();
    throw ShapeError(out.str());
  }
}

void require_open_unit(const torch::Tensor& scores, const char* what) {
  const bool ok = ((scores > 0) & (scores < 1)).all().item<bool>();
  if (!ok) throw ConfigError(std::string(what) + ": discriminator scores must lie strictly inside (0,1)");
}

}  // namespace

void LossWeights::validate() const {
  std::vector<std::string> problems;
  const std::pair<const char*, double> fields[] = {{"gan", gan}, {"x", x},     {"c", c},
                                                   {"s", s},     {"cyc", cyc}, {"sem", sem}};
  for (const auto& [name, value] : fields) {
    if (!std::isfinite(value) || value < 0.0) {
      problems.push_back(std::string("loss_weights.") + name + ": must be a finite value >= 0");
    }
  }
  if (!problems.empty()) throw ConfigError(std::move(problems));
}

void validate_soft_prediction(const torch::Tensor& p, double tol) {
  auto b = batched(p);
  if (b.dim() != 4 || b.size(1) < 2) throw ShapeError("soft prediction must be [N,K,H,W] with K >= 2");
  const bool in_range = ((b >= 0) & (b <= 1)).all().item<bool>();
  const double worst = (b.sum(1) - 1.0).abs().max().item<double>();
  if (!in_range || worst > tol) {
    throw ShapeError("soft prediction is not a per-pixel probability simplex (max column error " +
                     std::to_string(worst) + ")");
  }
}

namespace loss {

torch::Tensor gan_objective(const torch::Tensor& real_scores, const torch::Tensor& fake_scores) {
  require_open_unit(real_scores, "gan_objective(real)");
  require_open_unit(fake_scores, "gan_objective(fake)");
  return torch::log(real_scores).mean() + torch::log1p(-fake_scores).mean();
}

torch::Tensor gan_loss_d(const torch::Tensor& real_scores, const torch::Tensor& fake_scores) {
  return -gan_objective(real_scores, fake_scores);
}

torch::Tensor gan_loss_g(const torch::Tensor& fake_scores, GeneratorGanForm form) {
  require_open_unit(fake_scores, "gan_loss_g");
  if (form == GeneratorGanForm::saturating) return torch::log1p(-fake_scores).mean();
  return -torch::log(fake_scores).mean();
}

torch::Tensor gan_loss_d_logits(const torch::Tensor& real_logits, const torch::Tensor& fake_logits) {
  // log D = logsigmoid(z), log(1 - D) = logsigmoid(-z)
  return -(torch::log_sigmoid(real_logits).mean() + torch::log_sigmoid(-fake_logits).mean());
}

torch::Tensor gan_loss_g_logits(const torch::Tensor& fake_logits, GeneratorGanForm form) {
  if (form == GeneratorGanForm::saturating) return torch::log_sigmoid(-fake_logits).mean();
  return -torch::log_sigmoid(fake_logits).mean();
}

torch::Tensor lsgan_loss_d(const torch::Tensor& real_scores, const torch::Tensor& fake_scores) {
  return (real_scores - 1.0).pow(2).mean() + fake_scores.pow(2).mean();
}

torch::Tensor lsgan_loss_g(const torch::Tensor& fake_scores) { return (fake_scores - 1.0).pow(2).mean(); }

torch::Tensor recon_l1(const torch::Tensor& a, const torch::Tensor& b) {
  require_same_shape(a, b, "recon_l1");
  return (a - b).abs().mean();
}

torch::Tensor soft_dice_loss(const torch::Tensor& p, const torch::Tensor& y, const DiceOptions& opts) {
  require_same_shape(p, y, "soft_dice_loss");
  auto pb = batched(p);
  auto yb = batched(y);
  if (pb.dim() != 4 || pb.size(1) < 2) throw ShapeError("soft_dice_loss: expected [N,K,H,W] with K >= 2");
  auto p1 = pb.select(1, 1);
  auto y1 = yb.select(1, 1).to(p1.dtype());
  if (opts.ignore_unlabeled) p1 = p1 * yb.sum(1).to(p1.dtype());
  const std::vector<std::int64_t> dims =
      opts.reduction == DiceReduction::pooled ? std::vector<std::int64_t>{0, 1, 2} : std::vector<std::int64_t>{1, 2};
  auto intersection = (p1 * y1).sum(dims);
  auto total = (p1 + y1).sum(dims);
  auto dice = (2.0 * intersection + opts.smoothing) / (total + opts.smoothing);
  return -dice.mean();
}

torch::Tensor semantic_cycle_loss(const torch::Tensor& p, const torch::Tensor& y, const DiceOptions& opts) {
  return soft_dice_loss(p, y, opts);
}

torch::Tensor dice_seg_loss(const torch::Tensor& p, const torch::Tensor& y, const DiceOptions& opts) {
  return soft_dice_loss(p, y, opts);
}

torch::Tensor entropy_loss(const torch::Tensor& p, EntropyReduction reduction) {
  auto pb = batched(p);
  if (pb.dim() != 4 || pb.size(1) < 2) throw ShapeError("entropy_loss: expected [N,K,H,W] with K >= 2");
  const double log_k = std::log(static_cast<double>(pb.size(1)));
  // clamp only guards the log; at p = 0 the product is exactly 0.
  auto plogp = pb * torch::log(pb.clamp_min(1e-12));
  auto per_pixel = -plogp.sum(1) / log_k;
  if (reduction == EntropyReduction::mean) return per_pixel.mean();
  return per_pixel.sum({1, 2}).mean();
}

torch::Tensor translation_total(const TranslationTerms& t, const LossWeights& w) {
  w.validate();
  return w.gan * (t.gan_s + t.gan_t) + w.x * (t.recon_x_s + t.recon_x_t) + w.c * (t.recon_c_s + t.recon_c_t) +
         w.s * (t.recon_s_s + t.recon_s_t) + w.cyc * (t.cyc_s + t.cyc_t) + w.sem * t.sem;
}

torch::Tensor segmentation_total(const torch::Tensor& seg, const torch::Tensor& ent) { return seg + ent; }

}  // namespace loss
}  // namespace hetseg
