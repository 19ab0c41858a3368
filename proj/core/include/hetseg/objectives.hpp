#pragma once

#include <torch/torch.h>

#include <array>
#include <string_view>

namespace hetseg {

/// Weights of the translation objective. `cyc` defaults to the image-space reconstruction weight.
struct LossWeights {
  double gan = 1.0;
  double x = 10.0;
  double c = 1.0;
  double s = 1.0;
  double cyc = 10.0;
  double sem = 10.0;

  /// Throws ConfigError naming `loss_weights.<field>` for every negative or non-finite weight.
  void validate() const;
};

enum class GeneratorGanForm { saturating, non_saturating };
enum class GanMode { log_likelihood, least_squares };
enum class EntropyReduction { mean, sum };
/// How per-pixel dice sums combine over a batch.
enum class DiceReduction { pooled, per_image };

inline constexpr double kDiceSmoothing = 1e-6;

struct DiceOptions {
  double smoothing = kDiceSmoothing;
  DiceReduction reduction = DiceReduction::pooled;
  /// Drop pixels whose target column is all zero (unlabeled pseudo-mask pixels) from both sums.
  bool ignore_unlabeled = false;
};

/// Throws ShapeError unless `p` is [N,K,H,W] or [K,H,W] with values in [0,1] whose class columns
/// sum to 1 within `tol`.
void validate_soft_prediction(const torch::Tensor& p, double tol = 1e-5);

namespace loss {

/// mean log D(real) + mean log(1 - D(fake)): the value the discriminator maximizes.
/// Scores must lie strictly inside (0,1).
torch::Tensor gan_objective(const torch::Tensor& real_scores, const torch::Tensor& fake_scores);
/// Negated gan_objective, for minimization by the discriminator.
torch::Tensor gan_loss_d(const torch::Tensor& real_scores, const torch::Tensor& fake_scores);
/// Saturating: mean log(1 - D(fake)). Non-saturating: -mean log D(fake). Both are minimized.
torch::Tensor gan_loss_g(const torch::Tensor& fake_scores, GeneratorGanForm form = GeneratorGanForm::saturating);

/// The same losses evaluated from discriminator logits through log-sigmoid, which stays finite
/// where float32 sigmoid saturates to exactly 0 or 1.
torch::Tensor gan_loss_d_logits(const torch::Tensor& real_logits, const torch::Tensor& fake_logits);
torch::Tensor gan_loss_g_logits(const torch::Tensor& fake_logits,
                                GeneratorGanForm form = GeneratorGanForm::saturating);

/// Least-squares alternatives on probabilities.
torch::Tensor lsgan_loss_d(const torch::Tensor& real_scores, const torch::Tensor& fake_scores);
torch::Tensor lsgan_loss_g(const torch::Tensor& fake_scores);

/// Mean absolute difference.
torch::Tensor recon_l1(const torch::Tensor& a, const torch::Tensor& b);

/// -(2 sum P1*Y1 + eps) / (sum (P1 + Y1) + eps) on the lesion class (index 1).
torch::Tensor soft_dice_loss(const torch::Tensor& p, const torch::Tensor& y, const DiceOptions& opts = {});
/// Soft dice of a frozen source segmenter's prediction on cycle-reconstructed source images.
torch::Tensor semantic_cycle_loss(const torch::Tensor& p, const torch::Tensor& y, const DiceOptions& opts = {});
/// Soft dice against a ground-truth or pseudo mask.
torch::Tensor dice_seg_loss(const torch::Tensor& p, const torch::Tensor& y, const DiceOptions& opts = {});

/// Per-pixel entropy normalized by log K, with 0 log 0 = 0. `mean` averages over pixels and batch;
/// `sum` sums over pixels of each image and averages over the batch.
torch::Tensor entropy_loss(const torch::Tensor& p, EntropyReduction reduction = EntropyReduction::mean);

/// The eleven terms of the translation objective, already signed for the generator step.
struct TranslationTerms {
  torch::Tensor gan_s, gan_t;
  torch::Tensor recon_x_s, recon_x_t;
  torch::Tensor recon_c_s, recon_c_t;
  torch::Tensor recon_s_s, recon_s_t;
  torch::Tensor cyc_s, cyc_t;
  torch::Tensor sem;

  static constexpr std::array<std::string_view, 11> kNames{
      "gan_s", "gan_t", "recon_x_s", "recon_x_t", "recon_c_s", "recon_c_t",
      "recon_s_s", "recon_s_t", "cyc_s", "cyc_t", "sem"};
  std::array<const torch::Tensor*, 11> all() const {
    return {&gan_s, &gan_t, &recon_x_s, &recon_x_t, &recon_c_s, &recon_c_t,
            &recon_s_s, &recon_s_t, &cyc_s, &cyc_t, &sem};
  }
};

/// gan*(gan_s+gan_t) + x*(recon_x) + c*(recon_c) + s*(recon_s) + cyc*(cyc) + sem*sem.
torch::Tensor translation_total(const TranslationTerms& terms, const LossWeights& w);

torch::Tensor segmentation_total(const torch::Tensor& seg, const torch::Tensor& ent);

}  // namespace loss
}  // namespace hetseg
