#include <gtest/gtest.h>

#include <fstream>

#include "fixtures.hpp"
#include "hetseg/checkpoint.hpp"
#include "hetseg/error.hpp"
#include "hetseg/pseudo_label.hpp"
#include "hetseg/runtime.hpp"
#include "hetseg/synthetic.hpp"
#include "hetseg/training.hpp"

using namespace hetseg;

namespace {

class TrainingTest : public ::testing::Test {
 protected:
  void SetUp() override {
    cfg = fixtures::tiny_config();
    task = generate_synthetic_task(cfg.task);
  }

  SourceTrainingResult source(std::int64_t iterations = 4) {
    auto c = cfg.source_training;
    c.iterations = iterations;
    return train_source_segmenter(task.source_labeled, cfg.segmenter, c);
  }

  RunConfig cfg;
  SyntheticTask task;
};

std::map<std::int64_t, std::set<std::string>> terms_by_iteration(const LossLog& log) {
  std::map<std::int64_t, std::set<std::string>> out;
  for (const auto& e : log.entries()) out[e.iteration].insert(e.term);
  return out;
}

}  // namespace

TEST_F(TrainingTest, ZeroIterationsReturnsInitialModelWithValidation) {
  const auto r = source(0);
  ASSERT_TRUE(r.model);
  EXPECT_EQ(r.best_iteration, 0);
  ASSERT_EQ(r.validation_curve.size(), 1u);
  EXPECT_GE(r.best_validation_dsc, 0.0);
  EXPECT_TRUE(r.audit.empty());
}

TEST_F(TrainingTest, SourceSplitIsPatientLevelAndNeverTrainsOnValidation) {
  const auto r = source();
  EXPECT_EQ(r.validation_patients.size(), 1u);  // round(0.2 * 5)
  EXPECT_EQ(r.train_patients.size() + r.validation_patients.size(), 5u);
  for (const auto& name : r.audit) {
    for (const auto& s : task.source_labeled) {
      if (s.name == name) {
        EXPECT_EQ(r.validation_patients.count(s.patient_id), 0u) << name;
      }
    }
  }
  EXPECT_FALSE(r.audit.empty());
}

TEST_F(TrainingTest, SourceTrainingIsDeterministicPerSeed) {
  const auto a = source();
  const auto b = source();
  EXPECT_EQ(parameter_checksum(*a.model), parameter_checksum(*b.model));
  cfg.source_training.seed = 99;
  const auto c = source();
  EXPECT_NE(parameter_checksum(*a.model), parameter_checksum(*c.model));
}

TEST_F(TrainingTest, SourceTrainingRejectsUnlabeledSamples) {
  EXPECT_THROW(train_source_segmenter(task.target_unlabeled, cfg.segmenter, cfg.source_training), DataError);
}

TEST_F(TrainingTest, NonFiniteLossNamesTheTerm) {
  std::vector<Sample> broken(task.source_labeled.begin(), task.source_labeled.end());
  for (auto& s : broken) s.image = torch::full_like(s.image, std::nanf(""));
  try {
    train_source_segmenter(Dataset(task.source_labeled.spec(), broken), cfg.segmenter, cfg.source_training);
    FAIL() << "expected DivergenceError";
  } catch (const DivergenceError& e) {
    EXPECT_EQ(e.term(), "seg_dice");
    EXPECT_EQ(e.iteration(), 1);
    EXPECT_EQ(e.exit_code(), 4);
  }
}

TEST_F(TrainingTest, TranslationLogsAllTermsAndLeavesSourceSegmenterUntouched) {
  auto seg_s = source().model;
  const auto before = parameter_checksum(*seg_s);
  const auto r = train_translation(task.source_labeled, task.target_unlabeled, seg_s, cfg.translation_net,
                                   cfg.translation_training, cfg.loss_weights);
  EXPECT_EQ(parameter_checksum(*seg_s), before);
  for (auto& p : seg_s->parameters()) EXPECT_TRUE(p.requires_grad());
  const auto by_it = terms_by_iteration(r.log);
  ASSERT_EQ(by_it.size(), static_cast<std::size_t>(cfg.translation_training.iterations));
  for (const auto& [it, terms] : by_it) {
    for (auto name : loss::TranslationTerms::kNames) EXPECT_EQ(terms.count(std::string(name)), 1u) << name;
    EXPECT_EQ(terms.count("dis"), 1u);
    EXPECT_EQ(terms.count("total"), 1u);
  }
}

TEST_F(TrainingTest, PureGanTrainingRuns) {
  auto seg_s = source(0).model;
  LossWeights gan_only{1, 0, 0, 0, 0, 0};
  EXPECT_NO_THROW(train_translation(task.source_labeled, task.target_unlabeled, seg_s, cfg.translation_net,
                                    cfg.translation_training, gan_only));
}

TEST_F(TrainingTest, TranslationIsDeterministicPerSeed) {
  auto seg_s = source(0).model;
  const auto a = train_translation(task.source_labeled, task.target_unlabeled, seg_s, cfg.translation_net,
                                   cfg.translation_training, cfg.loss_weights);
  const auto b = train_translation(task.source_labeled, task.target_unlabeled, seg_s, cfg.translation_net,
                                   cfg.translation_training, cfg.loss_weights);
  EXPECT_EQ(parameter_checksum(*a.model), parameter_checksum(*b.model));
}

TEST_F(TrainingTest, LossLogCsv) {
  fixtures::TempDir dir("losslog");
  LossLog log;
  log.add(1, "seg_dice", -0.5);
  log.add(1, "entropy", 0.25);
  log.write_csv(dir.path() / "loss.csv");
  std::ifstream in(dir.path() / "loss.csv");
  std::string header, row;
  std::getline(in, header);
  std::getline(in, row);
  EXPECT_EQ(header, "iteration,term,value");
  EXPECT_EQ(row.rfind("1,seg_dice,", 0), 0u);
  EXPECT_EQ(log.terms(), (std::set<std::string>{"entropy", "seg_dice"}));
}

class TargetTrainingTest : public TrainingTest {
 protected:
  void SetUp() override {
    TrainingTest::SetUp();
    seg_s = source(0).model;
    tm = train_translation(task.source_labeled, task.target_unlabeled, seg_s, cfg.translation_net,
                           cfg.translation_training, cfg.loss_weights)
             .model;
  }
  Segmenter seg_s{nullptr};
  Translator tm{nullptr};
};

TEST_F(TargetTrainingTest, SynthOnlyLogsNoEntropyAndFreezesTranslator) {
  const auto before = parameter_checksum(*tm);
  TargetTrainingData data;
  data.source_labeled = &task.source_labeled;
  data.target_unlabeled = &task.target_unlabeled;
  const auto r = train_target_segmenter(data, &tm, cfg.segmenter, cfg.target_training, {true, false, false});
  EXPECT_EQ(parameter_checksum(*tm), before);
  EXPECT_EQ(r.log.terms().count("entropy"), 0u);
  EXPECT_EQ(r.model->config().in_channels, 15);
  for (const auto& s : task.target_unlabeled) EXPECT_EQ(r.audit.count(s.name), 0u);
}

TEST_F(TargetTrainingTest, FullMethodUsesEveryStream) {
  PseudoLabelOptions opts;
  opts.threshold = 0.55;
  const auto pseudo = generate_pseudolabels(task.target_unlabeled, tm, seg_s, opts);
  TargetTrainingData data;
  data.source_labeled = &task.source_labeled;
  data.target_pseudo = &pseudo;
  data.target_unlabeled = &task.target_unlabeled;
  const auto before = parameter_checksum(*tm);
  const auto r = train_target_segmenter(data, &tm, cfg.segmenter, cfg.target_training, {true, true, true});
  EXPECT_EQ(parameter_checksum(*tm), before);
  EXPECT_EQ(r.log.terms(), (std::set<std::string>{"entropy", "seg_dice", "total"}));
}

TEST_F(TargetTrainingTest, PseudoLabelsRequiredWhenEnabled) {
  TargetTrainingData data;
  data.source_labeled = &task.source_labeled;
  data.target_unlabeled = &task.target_unlabeled;
  try {
    train_target_segmenter(data, &tm, cfg.segmenter, cfg.target_training, {true, false, true});
    FAIL() << "expected MissingStageError";
  } catch (const MissingStageError& e) {
    EXPECT_NE(std::string(e.what()).find("pseudo-label"), std::string::npos);
  }
}

TEST_F(TargetTrainingTest, SyntheticStreamNeedsTranslator) {
  TargetTrainingData data;
  data.source_labeled = &task.source_labeled;
  EXPECT_THROW(train_target_segmenter(data, nullptr, cfg.segmenter, cfg.target_training, {true}), MissingStageError);
}

TEST_F(TargetTrainingTest, RawSourceNeedsAdapterWhenChannelsDiffer) {
  TargetTrainingData data;
  data.source_labeled = &task.source_labeled;
  data.target_unlabeled = &task.target_unlabeled;
  TargetTrainingOptions opts{false, true, false, true, false};
  EXPECT_THROW(train_target_segmenter(data, nullptr, cfg.segmenter, cfg.target_training, opts), ConfigError);
  opts.channel_adapter = true;
  const auto r = train_target_segmenter(data, nullptr, cfg.segmenter, cfg.target_training, opts);
  ASSERT_TRUE(r.adapter);
}

TEST_F(TargetTrainingTest, FreshStyleMakesConsecutiveSyntheticBatchesDiffer) {
  torch::NoGradGuard no_grad;
  EvalModeGuard eval(*tm);
  auto gen = at::detail::createCPUGenerator(5);
  auto x = task.source_labeled.images().slice(0, 0, 2);
  const auto dim = tm->config().style_dim;
  auto a = tm->translate(x, Direction::source_to_target, sample_style_prior(gen, 2, dim));
  auto b = tm->translate(x, Direction::source_to_target, sample_style_prior(gen, 2, dim));
  EXPECT_FALSE(torch::equal(a, b));
}

TEST_F(TargetTrainingTest, ThresholdSelectionReturnsGridValue) {
  const std::vector<double> grid{0.9, 0.6, 0.7};
  const double t = select_threshold(tm, seg_s, task.source_labeled, grid, 1);
  EXPECT_NE(std::find(grid.begin(), grid.end(), t), grid.end());
  EXPECT_EQ(t, select_threshold(tm, seg_s, task.source_labeled, grid, 1));
}

TEST(TrainConfig, ValidationNamesKeyPaths) {
  TrainConfig c;
  c.optimizer.lr = 0.0;
  c.batch_size = 0;
  c.validation_fraction = 1.5;
  try {
    c.validate("train.source");
    FAIL() << "expected ConfigError";
  } catch (const ConfigError& e) {
    ASSERT_GE(e.problems().size(), 3u);
    for (const auto& p : e.problems()) EXPECT_EQ(p.rfind("train.source.", 0), 0u) << p;
  }
}
