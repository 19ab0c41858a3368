// hetseg: command-line front end for data generation, stage training, experiments and sweeps.
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <sstream>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "hetseg/checkpoint.hpp"
#include "hetseg/config.hpp"
#include "hetseg/error.hpp"
#include "hetseg/experiment.hpp"
#include "hetseg/log.hpp"
#include "hetseg/runtime.hpp"

namespace fs = std::filesystem;
using json = nlohmann::json;
using namespace hetseg;

namespace {

struct CommonOptions {
  std::string config_path;
  std::string preset;
  std::optional<std::uint64_t> seed;
  std::string run_dir;
  std::optional<int> jobs;
  std::optional<bool> deterministic;
  std::string log_level = "info";
};

struct CommandOptions {
  std::string baseline;
  std::optional<int> fold;
  std::vector<double> fractions;
  std::string out;
};

void add_common(CLI::App* cmd, CommonOptions& o) {
  cmd->add_option("--config", o.config_path, "JSON config file layered over its preset")->check(CLI::ExistingFile);
  cmd->add_option("--preset", o.preset, "Base preset: desk or paper (overrides the file's preset)");
  cmd->add_option("--seed", o.seed, "Run seed; for experiment and sweep, runs this single seed");
  cmd->add_option("--run-dir", o.run_dir, "Output root (overrides output_root and HETSEG_RUN_ROOT)");
  cmd->add_option("--jobs", o.jobs, "Parallel (fold, seed) workers for experiment and sweep")->check(CLI::PositiveNumber);
  cmd->add_flag("--deterministic,!--no-deterministic", o.deterministic,
                "Single-threaded deterministic kernels (bit-reproducible runs)");
  cmd->add_option("--log-level", o.log_level, "debug, info, warn, error or off")
      ->check(CLI::IsMember({"debug", "info", "warn", "error", "off"}));
}

json read_config_file(const std::string& path) {
  if (path.empty()) return json::object();
  std::ifstream in(path);
  if (!in) throw ConfigError("--config: cannot read '" + path + "'");
  std::stringstream text;
  text << in.rdbuf();
  const auto s = text.str();
  if (s.find_first_not_of(" \t\r\n") == std::string::npos) return json::object();
  try {
    auto j = json::parse(s);
    if (!j.is_object()) throw ConfigError("config: top level must be a JSON object");
    return j;
  } catch (const json::parse_error& e) {
    throw ConfigError("config: '" + path + "' is not valid JSON (" + e.what() + ")");
  }
}

RunConfig resolve(const CommonOptions& o, const CommandOptions& c, bool seed_is_experiment) {
  auto j = read_config_file(o.config_path);
  if (!o.preset.empty()) j["preset"] = o.preset;
  if (o.seed) {
    j["seed"] = *o.seed;
    if (seed_is_experiment) j["experiment"]["seeds"] = json::array({*o.seed});
  }
  if (o.jobs) j["jobs"] = *o.jobs;
  if (o.deterministic) j["deterministic"] = *o.deterministic;
  if (!c.baseline.empty()) j["experiment"]["baseline"] = c.baseline;
  if (!c.fractions.empty()) j["experiment"]["fractions"] = c.fractions;
  return validate_config(j);
}

log::Level level_from(const std::string& name) {
  if (name == "debug") return log::Level::debug;
  if (name == "warn") return log::Level::warn;
  if (name == "error") return log::Level::error;
  if (name == "off") return log::Level::off;
  return log::Level::info;
}

std::vector<int> selected_folds(const RunConfig& cfg, const CommandOptions& c) {
  if (c.fold) {
    if (*c.fold < 0 || *c.fold >= cfg.experiment.folds) {
      throw ConfigError("--fold: must lie in [0," + std::to_string(cfg.experiment.folds - 1) + "]");
    }
    return {*c.fold};
  }
  std::vector<int> all(static_cast<std::size_t>(cfg.experiment.folds));
  for (int k = 0; k < cfg.experiment.folds; ++k) all[static_cast<std::size_t>(k)] = k;
  return all;
}

void print_report(const std::string& name, const MetricsReport& r) {
  std::cout << name << ": " << r.records.size() << " record(s)\n"
            << "  recall    " << r.recall.mean << " +- " << r.recall.std << '\n'
            << "  precision " << r.precision.mean << " +- " << r.precision.std << '\n'
            << "  dsc       " << r.dsc.mean << " +- " << r.dsc.std << '\n'
            << "  ap        " << r.ap.mean << " +- " << r.ap.std << '\n';
}

int run_command(const std::string& command, const CommonOptions& o, const CommandOptions& c) {
  const bool experiment_seeds = command == "experiment" || command == "sweep";
  const auto cfg = resolve(o, c, experiment_seeds);
  configure_determinism(cfg.deterministic);
  const std::optional<fs::path> root = o.run_dir.empty() ? std::nullopt : std::optional<fs::path>(o.run_dir);
  const fs::path out_root = root ? *root : resolve_output_root(cfg);

  if (command == "gen-data") {
    if (cfg.data_dir) throw ConfigError("data_dir: gen-data generates data; unset data_dir");
    const auto data = load_task(cfg);
    const fs::path dir = c.out.empty() ? out_root / "data" : fs::path(c.out);
    save_task(data, dir);
    std::ofstream(dir / "config.json") << to_json(cfg).dump(2) << '\n';
    for (const auto& [name, d] : {std::pair{"source_labeled", &data.source_labeled},
                                  std::pair{"target_unlabeled", &data.target_unlabeled},
                                  std::pair{"target_heldout", &data.target_heldout}}) {
      const auto& s = d->spec();
      std::cout << name << ": " << d->size() << " slices, " << d->patient_ids().size() << " patients, " << s.channels
                << "x" << s.height << "x" << s.width << '\n';
    }
    std::cout << "wrote " << dir.string() << '\n';
    return 0;
  }

  ExperimentRunner runner(cfg, load_task(cfg), root);
  const auto seed = cfg.seed;
  const auto fold_plan = runner.folds(cfg.experiment.folds, cfg.experiment.fold_seed);

  if (command == "train-source") {
    const auto stage = runner.source_stage(seed);
    std::cout << "source segmenter: best validation DSC " << stage->best_validation_dsc << "\nwrote "
              << stage_paths::source_segmenter(runner.root(), seed).string() << '\n';
    return 0;
  }
  if (command == "train-translation") {
    const bool semantic = cfg.experiment.baseline != Baseline::iv;
    runner.set_train_missing_stages(false);
    runner.source_stage(seed);
    runner.set_train_missing_stages(true);
    runner.translation_stage(seed, semantic);
    std::cout << "wrote " << stage_paths::translator(runner.root(), seed, semantic ? cfg.loss_weights.sem : 0.0).string()
              << '\n';
    return 0;
  }
  if (command == "pseudo-label") {
    if (!fs::exists(stage_paths::translator(runner.root(), seed, cfg.loss_weights.sem))) {
      throw MissingStageError("translation checkpoint missing: run train-translation first");
    }
    runner.set_train_missing_stages(false);
    runner.translation_stage(seed, true);
    runner.set_train_missing_stages(true);
    for (int fold : selected_folds(cfg, c)) {
      const auto labeled = runner.pseudo_stage(seed, fold_plan, fold);
      std::cout << "fold " << fold << ": " << labeled->size() << " pseudo-labeled slices, threshold "
                << runner.selected_threshold(seed) << "\nwrote "
                << stage_paths::pseudo_labels(runner.root(), seed, fold).string() << '\n';
    }
    return 0;
  }
  if (command == "train-target") {
    runner.set_train_missing_stages(false);
    const auto b = cfg.experiment.baseline;
    const double fraction = recipe(b).real_labels ? 1.0 : 0.0;
    for (int fold : selected_folds(cfg, c)) {
      const auto run = runner.run_fold(recipe(b), experiment_name(b), fold_plan, fold, seed, fraction, to_string(b));
      std::cout << "fold " << fold << ": DSC " << run.record.dsc << "\nwrote " << run.dir.string() << '\n';
    }
    return 0;
  }
  if (command == "evaluate") {
    const auto b = cfg.experiment.baseline;
    const auto name = experiment_name(b);
    std::vector<FoldRecord> records;
    for (int fold : selected_folds(cfg, c)) {
      const auto dir = runner.root() / name / std::to_string(fold);
      if (!fs::is_directory(dir)) continue;
      std::vector<fs::path> seed_dirs;
      for (const auto& entry : fs::directory_iterator(dir)) {
        if (fs::exists(entry.path() / "seg_t.ckpt")) seed_dirs.push_back(entry.path());
      }
      std::sort(seed_dirs.begin(), seed_dirs.end());
      const auto test = runner.data().target_heldout.select_patients(fold_plan.patients_in(fold));
      for (const auto& sd : seed_dirs) {
        const auto header = read_checkpoint_header(sd / "seg_t.ckpt");
        auto seg = seeded_init(0, [&] { return build_segmenter(segmenter_config_from_json(header.config.at("segmenter"))); });
        load_checkpoint(sd / "seg_t.ckpt", *seg);
        const auto ev = evaluate_segmenter(seg, test);
        records.push_back({fold, std::stoull(sd.filename().string()), ev.pixel.recall, ev.pixel.precision, ev.pixel.dsc,
                           ev.ap, to_string(b), recipe(b).real_labels ? 1.0 : 0.0});
      }
    }
    if (records.empty()) {
      throw MissingStageError("no trained target segmenter under '" + (runner.root() / name).string() +
                              "': run train-target first");
    }
    const auto report = aggregate(std::move(records));
    emit_report(report, runner.root() / name);
    print_report(name, report);
    return 0;
  }
  if (command == "experiment") {
    const auto report = runner.run_experiment(plan_from_config(cfg));
    print_report(experiment_name(cfg.experiment.baseline), report);
    std::cout << "wrote " << (runner.root() / experiment_name(cfg.experiment.baseline)).string() << '\n';
    return 0;
  }
  if (command == "sweep") {
    const auto series = runner.sweep_supervision(cfg.experiment.fractions, plan_from_config(cfg));
    std::cout << "sweep: " << series.size() << " point(s)\nwrote " << (runner.root() / "sweep").string() << '\n';
    return 0;
  }
  throw ConfigError("unknown subcommand '" + command + "'");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Heterogeneous-domain adaptation for lesion segmentation"};
  app.require_subcommand(1);
  CommonOptions common;
  CommandOptions cmd;

  auto* gen = app.add_subcommand("gen-data", "Generate the synthetic source and target cohorts");
  gen->add_option("--out", cmd.out, "Output directory (default <run root>/data)");
  auto* src = app.add_subcommand("train-source", "Train the source-domain segmenter");
  auto* trans = app.add_subcommand("train-translation", "Train the source/target translation model");
  trans->add_option("--baseline", cmd.baseline, "iv trains without the semantic term");
  auto* pseudo = app.add_subcommand("pseudo-label", "Pseudo-label the target training patients of each fold");
  pseudo->add_option("--fold", cmd.fold, "Single fold (default: all)");
  auto* target = app.add_subcommand("train-target", "Train the target segmenter for one baseline");
  target->add_option("--baseline", cmd.baseline, "Baseline id i..viii (default from config)");
  target->add_option("--fold", cmd.fold, "Single fold (default: all)");
  auto* eval = app.add_subcommand("evaluate", "Evaluate trained target segmenters and write the report");
  eval->add_option("--baseline", cmd.baseline, "Baseline id i..viii (default from config)");
  eval->add_option("--fold", cmd.fold, "Single fold (default: all)");
  auto* exp = app.add_subcommand("experiment", "Run every stage of one baseline over all folds and seeds");
  exp->add_option("--baseline", cmd.baseline, "Baseline id i..viii (default from config)");
  auto* sweep = app.add_subcommand("sweep", "Vary the share of labeled target patients");
  sweep->add_option("--fractions", cmd.fractions, "Ascending fractions in [0,1], e.g. 0,0.5,1")->delimiter(',');
  for (auto* sub : {gen, src, trans, pseudo, target, eval, exp, sweep}) add_common(sub, common);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << "error: config: " << e.what() << '\n';
    return static_cast<int>(ErrorKind::config);
  }

  log::set_level(level_from(common.log_level));
  const std::string command = app.get_subcommands().front()->get_name();
  try {
    return run_command(command, common, cmd);
  } catch (const Error& e) {
    std::string message = e.what();
    std::replace(message.begin(), message.end(), '\n', ' ');
    std::cerr << "error: " << to_string(e.kind()) << ": " << message << '\n';
    return e.exit_code();
  } catch (const std::exception& e) {
    std::string message = e.what();
    std::replace(message.begin(), message.end(), '\n', ' ');
    std::cerr << "error: internal: " << message << '\n';
    return 1;
  }
}
