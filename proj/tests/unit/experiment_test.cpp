#include <gtest/gtest.h>

#include <fstream>

#include "fixtures.hpp"
#include "hetseg/checkpoint.hpp"
#include "hetseg/error.hpp"
#include "hetseg/experiment.hpp"

using namespace hetseg;
namespace fs = std::filesystem;

namespace {

nlohmann::json read_json(const fs::path& p) {
  std::ifstream in(p);
  return nlohmann::json::parse(in);
}

class ExperimentTest : public ::testing::Test {
 protected:
  void SetUp() override {
    cfg = fixtures::tiny_config();
    data = load_task(cfg);
  }
  ExperimentPlan plan(Baseline b) const {
    auto p = plan_from_config(cfg);
    p.baseline = b;
    return p;
  }
  RunConfig cfg;
  TaskData data;
  fixtures::TempDir dir{"experiment"};
};

}  // namespace

TEST(Reveal, NestedAndSized) {
  std::vector<std::string> ids;
  for (int i = 0; i < 10; ++i) ids.push_back("p" + std::to_string(i));
  std::set<std::string> previous;
  for (double f : {0.0, 0.2, 0.5, 0.8, 1.0}) {
    const auto r = reveal_patients(ids, f, 4);
    EXPECT_EQ(r.size(), static_cast<std::size_t>(std::lround(f * 10)));
    for (const auto& p : previous) EXPECT_EQ(r.count(p), 1u);
    previous = r;
  }
  auto shuffled = ids;
  std::reverse(shuffled.begin(), shuffled.end());
  EXPECT_EQ(reveal_patients(ids, 0.5, 4), reveal_patients(shuffled, 0.5, 4));
}

TEST(Plan, ValidationAndNames) {
  ExperimentPlan p;
  p.num_folds = 1;
  EXPECT_THROW(p.validate(), ConfigError);
  p.num_folds = 3;
  p.seeds.clear();
  EXPECT_THROW(p.validate(), ConfigError);
  EXPECT_EQ(experiment_name(Baseline::viii), "baseline-viii");
}

TEST_F(ExperimentTest, TaskRoundTripsThroughDisk) {
  save_task(data, dir.path() / "data");
  auto c = cfg;
  c.data_dir = dir.path() / "data";
  const auto loaded = load_task(c);
  EXPECT_TRUE(torch::equal(loaded.source_labeled.images(), data.source_labeled.images()));
  EXPECT_TRUE(torch::equal(loaded.target_heldout.masks(), data.target_heldout.masks()));
  EXPECT_FALSE(loaded.target_unlabeled.all_labeled());
}

TEST_F(ExperimentTest, ReportShapeAndRunLayout) {
  ExperimentRunner runner(cfg, data, dir.path());
  const auto report = runner.run_experiment(plan(Baseline::viii));
  EXPECT_EQ(report.records.size(), static_cast<std::size_t>(cfg.experiment.folds) * cfg.experiment.seeds.size());
  const auto root = dir.path() / "baseline-viii";
  for (const char* f : {"metrics.json", "metrics.csv", "config.json"}) EXPECT_TRUE(fs::exists(root / f)) << f;
  for (int fold = 0; fold < cfg.experiment.folds; ++fold) {
    const auto run = stage_paths::run_dir(dir.path(), "baseline-viii", fold, 3);
    for (const char* f : {"config.json", "run.json", "seg_t.ckpt", "loss.csv", "metrics.json"}) {
      EXPECT_TRUE(fs::exists(run / f)) << run / f;
    }
    EXPECT_NO_THROW(validate_config(read_json(run / "config.json")));
    EXPECT_TRUE(read_json(run / "run.json").at("pslab").get<bool>());
  }
  EXPECT_TRUE(fs::exists(stage_paths::source_segmenter(dir.path(), 3)));
  EXPECT_TRUE(fs::exists(stage_paths::translator(dir.path(), 3, cfg.loss_weights.sem)));
}

TEST_F(ExperimentTest, FoldTestPatientsNeverReachGradients) {
  ExperimentRunner runner(cfg, data, dir.path());
  const auto folds = runner.folds(cfg.experiment.folds, 0);
  for (auto b : {Baseline::i, Baseline::viii}) {
    const auto run = runner.run_fold(recipe(b), experiment_name(b), folds, 0, 3, 1.0, to_string(b));
    for (const auto& s : data.target_heldout) {
      if (run.test_patients.count(s.patient_id)) {
        EXPECT_EQ(run.audit.count(s.name), 0u) << s.name;
      }
    }
  }
}

TEST_F(ExperimentTest, RerunReusesStagesAndReproducesMetrics) {
  MetricsReport first;
  {
    ExperimentRunner runner(cfg, data, dir.path());
    first = runner.run_experiment(plan(Baseline::vii));
  }
  const auto ckpt = stage_paths::source_segmenter(dir.path(), 3);
  const auto stamp = fs::last_write_time(ckpt);
  ExperimentRunner again(cfg, data, dir.path());
  again.set_train_missing_stages(false);
  const auto second = again.run_experiment(plan(Baseline::vii));
  EXPECT_EQ(fs::last_write_time(ckpt), stamp);
  EXPECT_EQ(first, second);
}

TEST_F(ExperimentTest, MissingStagesAreReportedWhenNotTraining) {
  ExperimentRunner runner(cfg, data, dir.path());
  runner.set_train_missing_stages(false);
  try {
    runner.translation_stage(3, true);
    FAIL() << "expected MissingStageError";
  } catch (const MissingStageError& e) {
    EXPECT_NE(std::string(e.what()).find("train-source"), std::string::npos) << e.what();
  }
  EXPECT_THROW(runner.pseudo_stage(3, runner.folds(2, 0), 0), MissingStageError);
}

TEST_F(ExperimentTest, RawSourceBaselineNeedsAdapter) {
  ExperimentRunner runner(cfg, data, dir.path());
  try {
    runner.run_experiment(plan(Baseline::iii));
    FAIL() << "expected ConfigError";
  } catch (const ConfigError& e) {
    EXPECT_NE(std::string(e.what()).find("channel_adapter"), std::string::npos);
  }
  cfg.experiment.channel_adapter = true;
  ExperimentRunner with_adapter(cfg, data, dir.path());
  EXPECT_EQ(with_adapter.run_experiment(plan(Baseline::iii)).records.size(), 2u);
}

TEST_F(ExperimentTest, SweepEndpointsMatchBaselines) {
  ExperimentRunner runner(cfg, data, dir.path());
  const auto series = runner.sweep_supervision({0.0, 0.5, 1.0}, plan(Baseline::viii));
  // 2 folds x 1 seed x (1 + 2 + 2 methods) x 4 metrics
  EXPECT_EQ(series.size(), 2u * 5u * 4u);
  EXPECT_TRUE(fs::exists(dir.path() / "sweep" / "sweep.csv"));
  const auto viii = runner.run_experiment(plan(Baseline::viii));
  const auto ii = runner.run_experiment(plan(Baseline::ii));
  auto value = [&](double f, const std::string& method, int fold) {
    for (const auto& p : series) {
      if (p.fraction == f && p.method == method && p.fold == fold && p.metric == "dsc") return p.value;
    }
    ADD_FAILURE() << "no point " << f << " " << method;
    return -1.0;
  };
  for (const auto& r : viii.records) EXPECT_EQ(value(0.0, "ours", r.fold), r.dsc);
  for (const auto& r : ii.records) EXPECT_EQ(value(1.0, "ours", r.fold), r.dsc);
}

TEST_F(ExperimentTest, ParallelJobsGiveSameReport) {
  cfg.experiment.seeds = {3, 4};
  ExperimentRunner serial(cfg, data, dir.path() / "serial");
  const auto a = serial.run_experiment(plan(Baseline::v));
  cfg.jobs = 2;
  ExperimentRunner parallel(cfg, data, dir.path() / "parallel");
  const auto b = parallel.run_experiment(plan(Baseline::v));
  EXPECT_EQ(a, b);
}
