#include "hetseg/experiment.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <sstream>
#include <thread>

#include "hetseg/checkpoint.hpp"
#include "hetseg/dataset_io.hpp"
#include "hetseg/error.hpp"
#include "hetseg/log.hpp"
#include "hetseg/runtime.hpp"
#include "hetseg/tensor_io.hpp"

namespace hetseg {

namespace fs = std::filesystem;
using json = nlohmann::json;

namespace {

enum Salt : std::uint64_t {
  kSourceStage = 101,
  kTranslationStage,
  kThreshold,
  kPseudo,
  kReveal,
  kTargetStage,
};

std::string format_number(double v) {
  std::ostringstream out;
  out << v;
  return out.str();
}

std::string fraction_label(double f) {
  std::ostringstream out;
  out << 'f' << std::fixed << std::setprecision(2) << f;
  return out.str();
}

std::string fingerprint(const Dataset& d) {
  std::uint64_t h = tensor_hash(d.images());
  if (d.all_labeled()) h = tensor_hash(d.masks(), h);
  std::ostringstream out;
  out << std::hex << std::setw(16) << std::setfill('0') << h << '-' << std::dec << d.size();
  return out.str();
}

json weights_json(const LossWeights& w) {
  return {{"gan", w.gan}, {"x", w.x}, {"c", w.c}, {"s", w.s}, {"cyc", w.cyc}, {"sem", w.sem}};
}

void write_json(const fs::path& path, const json& j) {
  fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw DataError("cannot write '" + path.string() + "'");
  out << j.dump(2) << '\n';
}

json read_json(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot read '" + path.string() + "'");
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    throw DataError("'" + path.string() + "' is not valid JSON: " + e.what());
  }
}

json sorted_ids(const std::vector<std::string>& ids) {
  auto copy = ids;
  std::sort(copy.begin(), copy.end());
  return copy;
}

}  // namespace

TaskData load_task(const RunConfig& cfg) {
  if (cfg.data_dir) {
    const auto& dir = *cfg.data_dir;
    for (const char* cohort : {"source_labeled", "target_unlabeled", "target_heldout"}) {
      if (!fs::is_directory(dir / cohort)) {
        throw DataError("data directory '" + dir.string() + "' has no '" + cohort + "' cohort (run gen-data)");
      }
    }
    return {load_dataset(dir / "source_labeled"), load_dataset(dir / "target_unlabeled"),
            load_dataset(dir / "target_heldout")};
  }
  auto task = generate_synthetic_task(cfg.task);
  return {std::move(task.source_labeled), std::move(task.target_unlabeled), std::move(task.target_heldout)};
}

void save_task(const TaskData& data, const fs::path& dir) {
  save_dataset(data.source_labeled, dir / "source_labeled");
  save_dataset(data.target_unlabeled, dir / "target_unlabeled");
  save_dataset(data.target_heldout, dir / "target_heldout");
}

void ExperimentPlan::validate() const {
  std::vector<std::string> problems;
  if (num_folds < 2) problems.emplace_back("experiment.folds: must be >= 2");
  if (seeds.empty()) problems.emplace_back("experiment.seeds: must not be empty");
  if (!problems.empty()) throw ConfigError(std::move(problems));
}

ExperimentPlan plan_from_config(const RunConfig& cfg) {
  return {cfg.experiment.baseline, cfg.experiment.folds, cfg.experiment.seeds, cfg.experiment.fold_seed};
}

std::string experiment_name(Baseline b) { return "baseline-" + to_string(b); }

std::set<std::string> reveal_patients(const std::vector<std::string>& patients, double fraction, std::uint64_t seed) {
  auto order = patients;
  std::sort(order.begin(), order.end());
  std::mt19937_64 rng(seed);
  std::shuffle(order.begin(), order.end(), rng);
  const auto n = static_cast<std::size_t>(std::lround(std::clamp(fraction, 0.0, 1.0) * static_cast<double>(order.size())));
  return {order.begin(), order.begin() + static_cast<std::ptrdiff_t>(n)};
}

namespace stage_paths {

fs::path stage_dir(const fs::path& root, std::uint64_t seed) { return root / "stages" / std::to_string(seed); }

fs::path source_segmenter(const fs::path& root, std::uint64_t seed) { return stage_dir(root, seed) / "seg_s.ckpt"; }

fs::path translator(const fs::path& root, std::uint64_t seed, double lambda_sem) {
  return stage_dir(root, seed) / ("translator-lsem" + format_number(lambda_sem) + ".ckpt");
}

fs::path pseudo_labels(const fs::path& root, std::uint64_t seed, int fold) {
  return stage_dir(root, seed) / ("pseudo-fold" + std::to_string(fold));
}

fs::path run_dir(const fs::path& root, const std::string& experiment, int fold, std::uint64_t seed) {
  return root / experiment / std::to_string(fold) / std::to_string(seed);
}

}  // namespace stage_paths

ExperimentRunner::ExperimentRunner(RunConfig cfg, TaskData data, std::optional<fs::path> root)
    : cfg_(std::move(cfg)), data_(std::move(data)), root_(root ? *root : resolve_output_root(cfg_)) {
  if (data_.source_labeled.empty() || data_.target_heldout.empty()) throw DataError("task has an empty cohort");
  if (!data_.source_labeled.all_labeled()) throw DataError("source cohort must be fully labeled");
  if (!data_.target_heldout.all_labeled()) throw DataError("held-out target cohort must be fully labeled");
}

FoldPlan ExperimentRunner::folds(int num_folds, std::uint64_t fold_seed) const {
  return make_folds(data_.target_heldout.patient_ids(), num_folds, fold_seed);
}

template <class T>
T ExperimentRunner::cached(Cache<T>& cache, const std::string& key, const std::function<T()>& make) {
  std::promise<T> promise;
  std::shared_future<T> future;
  bool owner = false;
  {
    std::lock_guard<std::mutex> lock(cache.mutex);
    auto it = cache.entries.find(key);
    if (it == cache.entries.end()) {
      future = promise.get_future().share();
      cache.entries.emplace(key, future);
      owner = true;
    } else {
      future = it->second;
    }
  }
  if (owner) {
    try {
      promise.set_value(make());
    } catch (...) {
      promise.set_exception(std::current_exception());
      std::lock_guard<std::mutex> lock(cache.mutex);
      cache.entries.erase(key);
    }
  }
  return future.get();
}

void ExperimentRunner::for_each_parallel(std::size_t n, const std::function<void(std::size_t)>& fn) const {
  const auto workers = std::min<std::size_t>(static_cast<std::size_t>(std::max(cfg_.jobs, 1)), n);
  if (workers <= 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::mutex error_mutex;
  std::exception_ptr first_error;
  std::vector<std::thread> threads;
  for (std::size_t w = 0; w < workers; ++w) {
    threads.emplace_back([&] {
      for (std::size_t i = next++; i < n; i = next++) {
        try {
          fn(i);
        } catch (...) {
          std::lock_guard<std::mutex> lock(error_mutex);
          if (!first_error) first_error = std::current_exception();
        }
      }
    });
  }
  for (auto& t : threads) t.join();
  if (first_error) std::rethrow_exception(first_error);
}

double ExperimentRunner::effective_lambda(bool semantic) const { return semantic ? cfg_.loss_weights.sem : 0.0; }

Translator ExperimentRunner::clone_translator(const Translator& tm) const {
  auto copy = seeded_init(0, [&] {
    return Translator(tm->spec(Domain::source), tm->spec(Domain::target), tm->config());
  });
  copy_state(*tm, *copy);
  copy->eval();
  return copy;
}

Segmenter ExperimentRunner::clone_segmenter(const Segmenter& seg) const {
  auto copy = seeded_init(0, [&] { return build_segmenter(seg->config()); });
  copy_state(*seg, *copy);
  copy->eval();
  return copy;
}

std::shared_ptr<const SourceStage> ExperimentRunner::source_stage(std::uint64_t seed) {
  return cached<std::shared_ptr<const SourceStage>>(source_cache_, std::to_string(seed), [&] {
    const auto& source = data_.source_labeled;
    auto seg_cfg = cfg_.segmenter;
    seg_cfg.in_channels = source.spec().channels;
    seg_cfg.num_classes = source.spec().num_classes;
    auto train_cfg = cfg_.source_training;
    train_cfg.seed = derive_seed(seed, {kSourceStage});
    const json identity = {{"segmenter", to_json(seg_cfg)}, {"train", to_json(train_cfg)}, {"data", fingerprint(source)}};
    const auto path = stage_paths::source_segmenter(root_, seed);

    auto stage = std::make_shared<SourceStage>();
    if (fs::exists(path)) {
      const auto header = read_checkpoint_header(path);
      if (header.config.value("identity", json()) == identity) {
        stage->model = seeded_init(0, [&] { return build_segmenter(seg_cfg); });
        load_checkpoint(path, *stage->model);
        stage->model->eval();
        stage->validation_patients = header.config.at("validation_patients").get<std::set<std::string>>();
        stage->best_validation_dsc = header.config.at("best_validation_dsc").get<double>();
        return std::shared_ptr<const SourceStage>(stage);
      }
      if (!train_missing_) {
        throw MissingStageError("source segmenter checkpoint '" + path.string() +
                                "' was trained under a different config; rerun train-source");
      }
      log::warn("source segmenter checkpoint '", path.string(), "' is stale; retraining");
    } else if (!train_missing_) {
      throw MissingStageError("source segmenter checkpoint missing: run train-source first");
    }

    auto result = train_source_segmenter(source, seg_cfg, train_cfg);
    save_checkpoint(path, *result.model,
                    {"source_segmenter", result.best_iteration,
                     {{"identity", identity},
                      {"validation_patients", result.validation_patients},
                      {"best_validation_dsc", result.best_validation_dsc}}});
    result.log.write_csv(path.parent_path() / "seg_s.loss.csv");
    write_json(path.parent_path() / "config.json", to_json(cfg_));
    stage->model = result.model;
    stage->validation_patients = result.validation_patients;
    stage->best_validation_dsc = result.best_validation_dsc;
    stage->audit = std::move(result.audit);
    return std::shared_ptr<const SourceStage>(stage);
  });
}

Translator ExperimentRunner::translation_stage(std::uint64_t seed, bool semantic) {
  const double lambda = effective_lambda(semantic);
  return cached<Translator>(translator_cache_, std::to_string(seed) + ":" + format_number(lambda), [&] {
    auto source = source_stage(seed);
    auto weights = cfg_.loss_weights;
    weights.sem = lambda;
    auto train_cfg = cfg_.translation_training;
    train_cfg.seed = derive_seed(seed, {kTranslationStage});
    const json identity = {{"net", to_json(cfg_.translation_net)},
                           {"train", to_json(train_cfg)},
                           {"loss_weights", weights_json(weights)},
                           {"source_segmenter", parameter_checksum(*source->model)},
                           {"source", fingerprint(data_.source_labeled)},
                           {"target", fingerprint(data_.target_unlabeled)}};
    const auto path = stage_paths::translator(root_, seed, lambda);
    if (fs::exists(path)) {
      const auto header = read_checkpoint_header(path);
      if (header.config.value("identity", json()) == identity) {
        auto tm = seeded_init(0, [&] {
          return Translator(data_.source_labeled.spec(), data_.target_unlabeled.spec(), cfg_.translation_net);
        });
        load_checkpoint(path, *tm);
        tm->eval();
        return tm;
      }
      if (!train_missing_) {
        throw MissingStageError("translation checkpoint '" + path.string() +
                                "' was trained under a different config; rerun train-translation");
      }
      log::warn("translation checkpoint '", path.string(), "' is stale; retraining");
    } else if (!train_missing_) {
      throw MissingStageError("translation checkpoint missing: run train-translation first");
    }
    auto seg_s = clone_segmenter(source->model);
    auto result = train_translation(data_.source_labeled, data_.target_unlabeled, seg_s, cfg_.translation_net,
                                    train_cfg, weights);
    save_checkpoint(path, *result.model, {"translator", train_cfg.iterations, {{"identity", identity}}});
    result.log.write_csv(path.parent_path() / (path.stem().string() + ".loss.csv"));
    write_json(path.parent_path() / "config.json", to_json(cfg_));
    return result.model;
  });
}

double ExperimentRunner::selected_threshold(std::uint64_t seed) {
  if (cfg_.pseudo_label.policy == ThresholdPolicy::fixed) return cfg_.pseudo_label.threshold;
  return cached<double>(threshold_cache_, std::to_string(seed), [&] {
    auto source = source_stage(seed);
    auto tm = clone_translator(translation_stage(seed, true));
    auto seg_s = clone_segmenter(source->model);
    const auto validation = data_.source_labeled.select_patients(source->validation_patients);
    return select_threshold(tm, seg_s, validation, cfg_.pseudo_label.grid, derive_seed(seed, {kThreshold}));
  });
}

std::shared_ptr<const Dataset> ExperimentRunner::pseudo_stage(std::uint64_t seed, const FoldPlan& folds, int fold) {
  const auto pool = data_.target_heldout.exclude_patients(folds.patients_in(fold)).without_masks();
  const auto pool_ids = sorted_ids(pool.patient_ids());
  const std::string key = std::to_string(seed) + ":" + std::to_string(fold) + ":" + pool_ids.dump();
  return cached<std::shared_ptr<const Dataset>>(pseudo_cache_, key, [&] {
    const auto dir = stage_paths::pseudo_labels(root_, seed, fold);
    const bool can_compute = train_missing_;
    auto source = source_stage(seed);
    auto tm = clone_translator(translation_stage(seed, true));
    const double threshold = selected_threshold(seed);
    const json identity = {{"patients", pool_ids},
                           {"threshold", threshold},
                           {"style_policy", to_string(cfg_.pseudo_label.style_policy)},
                           {"average_draws", cfg_.pseudo_label.average_draws},
                           {"translator", parameter_checksum(*tm)},
                           {"source_segmenter", parameter_checksum(*source->model)}};
    const auto identity_path = dir / "pseudo.json";
    const auto samples_dir = dir / "samples";
    if (fs::exists(identity_path)) {
      if (read_json(identity_path) == identity) return std::make_shared<const Dataset>(load_dataset(samples_dir));
      if (!can_compute) {
        throw MissingStageError("pseudo-labels in '" + dir.string() +
                                "' were generated under a different config; rerun pseudo-label");
      }
      log::warn("pseudo-labels in '", dir.string(), "' are stale; regenerating");
    } else if (!can_compute) {
      throw MissingStageError("pseudo-labels missing: run pseudo-label for fold " + std::to_string(fold) + " first");
    }
    PseudoLabelOptions opts;
    opts.threshold = threshold;
    opts.style_policy = cfg_.pseudo_label.style_policy;
    opts.average_draws = cfg_.pseudo_label.average_draws;
    opts.seed = derive_seed(seed, {kPseudo, static_cast<std::uint64_t>(fold)});
    auto seg_s = clone_segmenter(source->model);
    auto labeled = generate_pseudolabels(pool, tm, seg_s, opts);
    fs::remove_all(dir);
    save_dataset(labeled, samples_dir);
    write_json(identity_path, identity);
    double coverage = 0.0;
    for (const auto& s : labeled) coverage += s.pseudo ? s.pseudo->coverage : 0.0;
    log::info("pseudo-label: seed ", seed, " fold ", fold, " threshold ", threshold, " mean coverage ",
              labeled.empty() ? 0.0 : coverage / static_cast<double>(labeled.size()));
    return std::make_shared<const Dataset>(std::move(labeled));
  });
}

FoldRun ExperimentRunner::run_fold(const BaselineRecipe& recipe, const std::string& experiment, const FoldPlan& folds,
                                   int fold, std::uint64_t seed, double fraction, const std::string& method) {
  FoldRun run;
  run.test_patients = folds.patients_in(fold);
  const auto test = data_.target_heldout.select_patients(run.test_patients);
  if (test.empty()) throw DataError("fold " + std::to_string(fold) + " has no test patients");
  const auto pool = data_.target_heldout.exclude_patients(run.test_patients);
  const auto revealed_ids =
      recipe.real_labels
          ? reveal_patients(pool.patient_ids(), fraction, derive_seed(seed, {kReveal, static_cast<std::uint64_t>(fold)}))
          : std::set<std::string>{};
  const auto revealed = pool.select_patients(revealed_ids);
  const auto remainder = pool.exclude_patients(revealed_ids).without_masks();

  if (recipe.raw_source && data_.source_labeled.spec().channels != data_.target_heldout.spec().channels &&
      !cfg_.experiment.channel_adapter) {
    throw ConfigError("experiment.baseline: baseline iii trains on raw source images, which have " +
                      std::to_string(data_.source_labeled.spec().channels) + " channels against the target's " +
                      std::to_string(data_.target_heldout.spec().channels) +
                      "; set experiment.channel_adapter to add a learned channel projection");
  }

  Translator tm{nullptr};
  if (recipe.synthetic) tm = clone_translator(translation_stage(seed, recipe.semantic_translator));
  const bool unlabeled_left = !remainder.empty();

  TargetTrainingData inputs;
  inputs.source_labeled = &data_.source_labeled;
  if (!revealed.empty()) inputs.target_labeled = &revealed;
  TargetTrainingOptions options;
  options.use_synthetic = recipe.synthetic;
  options.use_raw_source = recipe.raw_source;
  options.channel_adapter = cfg_.experiment.channel_adapter;
  options.use_pslab = recipe.pslab && unlabeled_left;
  options.use_entmin = recipe.entmin && unlabeled_left;
  Dataset pseudo;
  if (options.use_pslab) {
    pseudo = pseudo_stage(seed, folds, fold)->exclude_patients(revealed_ids);
    inputs.target_pseudo = &pseudo;
  }
  // With pseudo-labels on, the entropy term reuses the pseudo-labeled batch.
  if (options.use_entmin && !options.use_pslab) inputs.target_unlabeled = &remainder;

  auto train_cfg = cfg_.target_training;
  train_cfg.seed = derive_seed(seed, {kTargetStage, static_cast<std::uint64_t>(fold)});
  auto result = train_target_segmenter(inputs, tm ? &tm : nullptr, cfg_.segmenter, train_cfg, options);
  run.evaluation = evaluate_segmenter(result.model, test);
  run.model = result.model;
  run.audit = std::move(result.audit);
  run.record = {fold,
                seed,
                run.evaluation.pixel.recall,
                run.evaluation.pixel.precision,
                run.evaluation.pixel.dsc,
                run.evaluation.ap,
                method,
                fraction};

  run.dir = stage_paths::run_dir(root_, experiment, fold, seed);
  fs::create_directories(run.dir);
  write_json(run.dir / "config.json", to_json(cfg_));
  write_json(run.dir / "run.json",
             {{"experiment", experiment},
              {"method", method},
              {"fold", fold},
              {"seed", seed},
              {"fraction", fraction},
              {"test_patients", run.test_patients},
              {"revealed_patients", revealed_ids},
              {"synthetic", options.use_synthetic},
              {"raw_source", options.use_raw_source},
              {"entmin", options.use_entmin},
              {"pslab", options.use_pslab},
              {"threshold", options.use_pslab ? json(selected_threshold(seed)) : json(nullptr)}});
  save_checkpoint(run.dir / "seg_t.ckpt", *result.model,
                  {"target_segmenter", train_cfg.iterations, {{"segmenter", to_json(result.model->config())}}});
  result.log.write_csv(run.dir / "loss.csv");
  write_json(run.dir / "metrics.json",
             {{"fold", fold},
              {"seed", seed},
              {"recall", run.record.recall},
              {"precision", run.record.precision},
              {"dsc", run.record.dsc},
              {"ap", run.record.ap},
              {"patients", run.evaluation.patients},
              {"ap_excluded", run.evaluation.ap_excluded},
              {"mean_entropy", run.evaluation.mean_entropy}});
  log::info(experiment, " fold ", fold, " seed ", seed, ": DSC ", run.record.dsc, " AP ", run.record.ap);
  return run;
}

MetricsReport ExperimentRunner::run_experiment(const ExperimentPlan& plan) {
  plan.validate();
  const auto fold_plan = folds(plan.num_folds, plan.fold_seed);
  const auto r = recipe(plan.baseline);
  const auto name = experiment_name(plan.baseline);
  const double fraction = r.real_labels ? 1.0 : 0.0;
  std::vector<std::pair<int, std::uint64_t>> jobs;
  for (int fold = 0; fold < plan.num_folds; ++fold) {
    for (auto seed : plan.seeds) jobs.emplace_back(fold, seed);
  }
  std::vector<FoldRecord> records(jobs.size());
  for_each_parallel(jobs.size(), [&](std::size_t i) {
    records[i] = run_fold(r, name, fold_plan, jobs[i].first, jobs[i].second, fraction, to_string(plan.baseline)).record;
  });
  auto report = aggregate(std::move(records));
  emit_report(report, root_ / name);
  auto echoed = cfg_;
  echoed.experiment.baseline = plan.baseline;
  echoed.experiment.folds = plan.num_folds;
  echoed.experiment.seeds = plan.seeds;
  echoed.experiment.fold_seed = plan.fold_seed;
  write_json(root_ / name / "config.json", to_json(echoed));
  return report;
}

std::vector<SweepPoint> ExperimentRunner::sweep_supervision(const std::vector<double>& fractions,
                                                            const ExperimentPlan& plan) {
  plan.validate();
  if (fractions.empty()) throw ConfigError("fractions: must not be empty");
  for (double f : fractions) {
    if (!(f >= 0.0 && f <= 1.0)) throw ConfigError("fractions: " + format_number(f) + " is outside [0,1]");
  }
  if (!std::is_sorted(fractions.begin(), fractions.end())) throw ConfigError("fractions: must be sorted ascending");

  const auto fold_plan = folds(plan.num_folds, plan.fold_seed);
  struct Job {
    double fraction;
    int fold;
    std::uint64_t seed;
    std::string method;
  };
  std::vector<Job> jobs;
  for (double f : fractions) {
    if (f == 0.0) log::warn("sweep: target-only has no labels at fraction 0; skipped");
    for (int fold = 0; fold < plan.num_folds; ++fold) {
      const auto pool = data_.target_heldout.exclude_patients(fold_plan.patients_in(fold)).patient_ids();
      const auto revealed = std::lround(f * static_cast<double>(pool.size()));
      if (f > 0.0 && revealed < 1) {
        log::warn("sweep: fraction ", f, " reveals no patient in fold ", fold, "; point skipped");
        continue;
      }
      for (auto seed : plan.seeds) {
        jobs.push_back({f, fold, seed, "ours"});
        if (f > 0.0) jobs.push_back({f, fold, seed, "target-only"});
      }
    }
  }

  auto ours = recipe(Baseline::viii);
  ours.real_labels = true;
  const auto target_only = recipe(Baseline::i);
  std::vector<FoldRecord> records(jobs.size());
  for_each_parallel(jobs.size(), [&](std::size_t i) {
    const auto& job = jobs[i];
    const auto& r = job.method == "ours" ? ours : target_only;
    const auto experiment = "sweep/" + fraction_label(job.fraction) + "/" + job.method;
    records[i] = run_fold(r, experiment, fold_plan, job.fold, job.seed, job.fraction, job.method).record;
  });

  std::vector<SweepPoint> series;
  for (const auto& rec : records) {
    for (const auto& [metric, value] : {std::pair{"recall", rec.recall}, std::pair{"precision", rec.precision},
                                        std::pair{"dsc", rec.dsc}, std::pair{"ap", rec.ap}}) {
      series.push_back({rec.fraction, rec.method, rec.fold, rec.seed, metric, value});
    }
  }
  if (!series.empty()) {
    emit_sweep_csv(series, root_ / "sweep" / "sweep.csv");
    emit_plots(series, root_ / "sweep");
  }
  return series;
}

}  // namespace hetseg
