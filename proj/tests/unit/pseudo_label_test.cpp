#include <gtest/gtest.h>

#include "fixtures.hpp"
#include "hetseg/error.hpp"
#include "hetseg/pseudo_label.hpp"
#include "hetseg/runtime.hpp"
#include "hetseg/synthetic.hpp"
#include "oracles.hpp"

using namespace hetseg;

namespace {

torch::Tensor column(double p0, double p1) { return torch::tensor({p0, p1}, torch::kFloat64).reshape({2, 1, 1}); }

std::vector<double> mask_column(const PseudoMask& m) {
  return {m.mask[0][0][0].item<double>(), m.mask[1][0][0].item<double>()};
}

}  // namespace

TEST(PseudoLabel, Examples) {
  EXPECT_EQ(mask_column(pseudo_label(column(0.1, 0.9), 0.8)), (std::vector<double>{0, 1}));
  EXPECT_EQ(mask_column(pseudo_label(column(0.3, 0.7), 0.8)), (std::vector<double>{0, 0}));
  EXPECT_EQ(mask_column(pseudo_label(column(0.85, 0.15), 0.8)), (std::vector<double>{1, 0}));
}

TEST(PseudoLabel, ExactTieGivesNoLabel) {
  auto p = torch::tensor({0.45, 0.45, 0.1}, torch::kFloat64).reshape({3, 1, 1});
  const auto m = pseudo_label(p, 0.4);
  EXPECT_EQ(m.mask.sum().item<double>(), 0.0);
  EXPECT_EQ(m.coverage, 0.0);
}

TEST(PseudoLabel, ThresholdIsStrict) {
  const auto m = pseudo_label(column(0.2, 0.8), 0.8);
  EXPECT_EQ(mask_column(m), (std::vector<double>{0, 0}));
  EXPECT_EQ(m.coverage, 0.0);
}

TEST(PseudoLabel, ThresholdOutsideValidRangeIsRejected) {
  auto p = column(0.1, 0.9);
  EXPECT_THROW(pseudo_label(p, 0.5), ConfigError);
  EXPECT_THROW(pseudo_label(p, 1.0), ConfigError);
  EXPECT_NO_THROW(pseudo_label(p, 0.51));
  torch::Generator gen = at::detail::createCPUGenerator(1);
  EXPECT_THROW(pseudo_label(fixtures::random_soft(4, 2, 2, gen), 0.25), ConfigError);
  EXPECT_NO_THROW(pseudo_label(fixtures::random_soft(4, 2, 2, gen), 0.3));
}

TEST(PseudoLabel, MatchesPerPixelOracleExactly) {
  torch::Generator gen = at::detail::createCPUGenerator(2);
  for (std::int64_t k : {2, 3}) {
    auto p = fixtures::random_soft(k, 100, 120, gen, 2.5);
    // Plant exact ties so the tie rule is exercised.
    p.index_put_({torch::indexing::Slice(), 0, torch::indexing::Slice(0, 10)}, 1.0 / static_cast<double>(k));
    for (double t : {0.55, 0.7, 0.9}) {
      const auto m = pseudo_label(p, t);
      const auto cols = oracle::columns(p);
      const auto got = oracle::columns(m.mask);
      std::size_t labeled = 0;
      for (std::size_t i = 0; i < cols.size(); ++i) {
        const int expected = oracle::pseudo_label_pixel(cols[i], t);
        for (std::int64_t c = 0; c < k; ++c) {
          ASSERT_EQ(got[i][static_cast<std::size_t>(c)], expected == c ? 1.0 : 0.0) << "pixel " << i;
        }
        if (expected >= 0) ++labeled;
      }
      EXPECT_DOUBLE_EQ(m.coverage, static_cast<double>(labeled) / static_cast<double>(cols.size()));
      EXPECT_EQ(m.threshold, t);
    }
  }
}

TEST(PseudoLabel, CoverageIsNonIncreasingInThreshold) {
  torch::Generator gen = at::detail::createCPUGenerator(3);
  auto p = fixtures::random_soft(2, 64, 64, gen, 4.0);
  double previous = 1.0;
  for (double t = 0.51; t < 1.0; t += 0.02) {
    const auto m = pseudo_label(p, t);
    EXPECT_LE(m.coverage, previous);
    previous = m.coverage;
    const auto sums = m.mask.sum(0);
    EXPECT_TRUE(((sums == 0) | (sums == 1)).all().item<bool>());
  }
  EXPECT_LT(pseudo_label(p, 0.999999).coverage, 0.05);
}

TEST(PseudoLabel, StylePolicyNames) {
  for (auto p : {StylePolicy::prior_mean, StylePolicy::random, StylePolicy::average}) {
    EXPECT_EQ(style_policy_from_string(to_string(p)), p);
  }
  EXPECT_THROW(style_policy_from_string("median"), ConfigError);
}

TEST(PseudoLabel, GeneratesOneMaskedSamplePerTarget) {
  auto cfg = fixtures::tiny_config();
  const auto task = generate_synthetic_task(cfg.task);
  auto tm = seeded_init(1, [&] {
    return Translator(task.source_labeled.spec(), task.target_unlabeled.spec(), cfg.translation_net);
  });
  auto seg_cfg = cfg.segmenter;
  seg_cfg.in_channels = 5;
  auto seg = seeded_init(2, [&] { return build_segmenter(seg_cfg); });
  for (auto policy : {StylePolicy::prior_mean, StylePolicy::random, StylePolicy::average}) {
    PseudoLabelOptions opts;
    opts.threshold = 0.55;
    opts.style_policy = policy;
    opts.seed = 9;
    const auto a = generate_pseudolabels(task.target_unlabeled, tm, seg, opts);
    const auto b = generate_pseudolabels(task.target_unlabeled, tm, seg, opts);
    ASSERT_EQ(a.size(), task.target_unlabeled.size());
    for (std::size_t i = 0; i < a.size(); ++i) {
      EXPECT_EQ(a[i].name, task.target_unlabeled[i].name);
      EXPECT_TRUE(torch::equal(a[i].image, task.target_unlabeled[i].image));
      ASSERT_TRUE(a[i].pseudo.has_value());
      EXPECT_EQ(a[i].pseudo->threshold, 0.55);
      EXPECT_DOUBLE_EQ(a[i].pseudo->coverage, (a[i].mask->sum(0) > 0).to(torch::kFloat64).mean().item<double>());
      EXPECT_TRUE(torch::equal(*a[i].mask, *b[i].mask)) << to_string(policy);
    }
  }
}
