#include "hetseg/config.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <functional>

#include "hetseg/dataset_io.hpp"
#include "hetseg/error.hpp"

namespace hetseg {

using json = nlohmann::json;

namespace {

TrainConfig sgd_stage(double lr, std::int64_t batch, std::int64_t iterations) {
  TrainConfig t;
  t.optimizer.kind = OptimizerKind::sgd;
  t.optimizer.lr = lr;
  t.optimizer.momentum = 0.9;
  t.batch_size = batch;
  t.iterations = iterations;
  return t;
}

TrainConfig adam_stage(double lr, std::int64_t batch, std::int64_t iterations) {
  TrainConfig t;
  t.optimizer.kind = OptimizerKind::adam;
  t.optimizer.lr = lr;
  t.optimizer.beta1 = 0.5;
  t.optimizer.beta2 = 0.999;
  t.batch_size = batch;
  t.iterations = iterations;
  return t;
}

json task_to_json(const SyntheticTaskConfig& t) {
  return {{"source", to_json(t.source_spec)},
          {"target", to_json(t.target_spec)},
          {"lesion_count_min", t.lesion_count_min},
          {"lesion_count_max", t.lesion_count_max},
          {"lesion_radius_min", t.lesion_radius_min},
          {"lesion_radius_max", t.lesion_radius_max},
          {"channel_mixing_seed", t.channel_mixing_seed},
          {"seed", t.seed},
          {"noise_std", t.noise_std},
          {"num_patients_source", t.num_patients_source},
          {"num_patients_target", t.num_patients_target},
          {"num_patients_heldout", t.num_patients_heldout},
          {"slices_per_patient", t.slices_per_patient}};
}

json train_to_json(const TrainConfig& t) {
  auto j = to_json(t);
  j.erase("seed");  // stage seeds derive from the run seed
  return j;
}

json segmenter_to_json(const SegmenterConfig& s) {
  auto j = to_json(s);
  j.erase("in_channels");  // fixed by the domain the segmenter is trained on
  j.erase("num_classes");
  return j;
}

std::string json_kind(const json& v) {
  if (v.is_object()) return "an object";
  if (v.is_array()) return "an array";
  if (v.is_string()) return "a string";
  if (v.is_boolean()) return "a boolean";
  if (v.is_number_integer()) return "an integer";
  if (v.is_number()) return "a number";
  return "null";
}

bool compatible(const json& def, const json& v, const std::string& path, std::vector<std::string>& problems) {
  auto mismatch = [&] {
    problems.push_back(path + ": expected " + json_kind(def) + ", got " + json_kind(v));
    return false;
  };
  if (def.is_null()) {
    if (v.is_null() || v.is_string()) return true;
    problems.push_back(path + ": expected a string or null, got " + json_kind(v));
    return false;
  }
  if (def.is_boolean()) return v.is_boolean() ? true : mismatch();
  if (def.is_string()) return v.is_string() ? true : mismatch();
  if (def.is_number_unsigned()) {
    if (v.is_number_unsigned()) return true;
    if (v.is_number_integer()) {
      problems.push_back(path + ": must be a non-negative integer");
      return false;
    }
    return mismatch();
  }
  if (def.is_number_integer()) return v.is_number_integer() ? true : mismatch();
  if (def.is_number()) return v.is_number() ? true : mismatch();
  if (def.is_array()) {
    if (!v.is_array()) return mismatch();
    if (def.empty()) return true;
    bool ok = true;
    for (std::size_t i = 0; i < v.size(); ++i) {
      ok = compatible(def.front(), v[i], path + "[" + std::to_string(i) + "]", problems) && ok;
    }
    return ok;
  }
  return mismatch();
}

void merge_checked(json& base, const json& user, const std::string& path, std::vector<std::string>& problems) {
  for (const auto& [key, value] : user.items()) {
    const std::string p = path.empty() ? key : path + "." + key;
    if (!base.contains(key)) {
      problems.push_back(p + ": unknown key");
      continue;
    }
    auto& def = base[key];
    if (def.is_object()) {
      if (!value.is_object()) {
        problems.push_back(p + ": expected an object, got " + json_kind(value));
      } else {
        merge_checked(def, value, p, problems);
      }
      continue;
    }
    if (compatible(def, value, p, problems)) def = value;
  }
}

void collect(std::vector<std::string>& problems, const std::function<void()>& check) {
  try {
    check();
  } catch (const ConfigError& e) {
    problems.insert(problems.end(), e.problems().begin(), e.problems().end());
  }
}

template <class Enum>
Enum parse_enum(const json& j, const std::string& path, std::initializer_list<std::pair<const char*, Enum>> names,
                std::vector<std::string>& problems) {
  const auto text = j.get<std::string>();
  std::string valid;
  for (const auto& [name, value] : names) {
    if (text == name) return value;
    valid += valid.empty() ? name : std::string(", ") + name;
  }
  problems.push_back(path + ": unknown value '" + text + "' (expected one of " + valid + ")");
  return names.begin()->second;
}

SyntheticTaskConfig task_from_json(const json& j) {
  SyntheticTaskConfig t;
  t.source_spec = domain_spec_from_json(j.at("source"));
  t.target_spec = domain_spec_from_json(j.at("target"));
  t.lesion_count_min = j.at("lesion_count_min").get<int>();
  t.lesion_count_max = j.at("lesion_count_max").get<int>();
  t.lesion_radius_min = j.at("lesion_radius_min").get<double>();
  t.lesion_radius_max = j.at("lesion_radius_max").get<double>();
  t.channel_mixing_seed = j.at("channel_mixing_seed").get<std::uint64_t>();
  t.seed = j.at("seed").get<std::uint64_t>();
  t.noise_std = j.at("noise_std").get<double>();
  t.num_patients_source = j.at("num_patients_source").get<int>();
  t.num_patients_target = j.at("num_patients_target").get<int>();
  t.num_patients_heldout = j.at("num_patients_heldout").get<int>();
  t.slices_per_patient = j.at("slices_per_patient").get<int>();
  return t;
}

TrainConfig train_from_json(const json& j, const std::string& path, std::vector<std::string>& problems) {
  TrainConfig t;
  t.optimizer.kind = parse_enum<OptimizerKind>(j.at("optimizer"), path + ".optimizer",
                                {{"sgd", OptimizerKind::sgd}, {"adam", OptimizerKind::adam}}, problems);
  t.optimizer.lr = j.at("lr").get<double>();
  t.optimizer.momentum = j.at("momentum").get<double>();
  t.optimizer.beta1 = j.at("beta1").get<double>();
  t.optimizer.beta2 = j.at("beta2").get<double>();
  t.optimizer.weight_decay = j.at("weight_decay").get<double>();
  t.batch_size = j.at("batch_size").get<std::int64_t>();
  t.iterations = j.at("iterations").get<std::int64_t>();
  t.eval_every = j.at("eval_every").get<std::int64_t>();
  t.validation_fraction = j.at("validation_fraction").get<double>();
  t.gan_form = parse_enum<GeneratorGanForm>(j.at("gan_form"), path + ".gan_form",
                          {{"saturating", GeneratorGanForm::saturating},
                           {"non_saturating", GeneratorGanForm::non_saturating}},
                          problems);
  t.gan_mode = parse_enum<GanMode>(j.at("gan_mode"), path + ".gan_mode",
                          {{"log", GanMode::log_likelihood}, {"least_squares", GanMode::least_squares}}, problems);
  t.dice.smoothing = j.at("dice_smoothing").get<double>();
  t.dice.reduction = parse_enum<DiceReduction>(j.at("dice_reduction"), path + ".dice_reduction",
                                {{"pooled", DiceReduction::pooled}, {"per_image", DiceReduction::per_image}}, problems);
  t.dice.ignore_unlabeled = j.at("dice_ignore_unlabeled").get<bool>();
  t.entropy_reduction = parse_enum<EntropyReduction>(j.at("entropy_reduction"), path + ".entropy_reduction",
                                   {{"mean", EntropyReduction::mean}, {"sum", EntropyReduction::sum}}, problems);
  return t;
}

RunConfig from_merged(const json& j, std::vector<std::string>& problems) {
  RunConfig c;
  c.preset = j.at("preset").get<std::string>();
  c.seed = j.at("seed").get<std::uint64_t>();
  c.deterministic = j.at("deterministic").get<bool>();
  c.jobs = j.at("jobs").get<int>();
  c.output_root = j.at("output_root").get<std::string>();
  if (!j.at("data_dir").is_null()) c.data_dir = j.at("data_dir").get<std::string>();
  c.task = task_from_json(j.at("task"));
  auto seg = j.at("segmenter");
  seg["in_channels"] = c.task.target_spec.channels;
  seg["num_classes"] = c.task.target_spec.num_classes;
  c.segmenter = segmenter_config_from_json(seg);
  c.translation_net = net_config_from_json(j.at("translation_net"));
  const auto& w = j.at("loss_weights");
  c.loss_weights = {w.at("gan").get<double>(), w.at("x").get<double>(),   w.at("c").get<double>(),
                    w.at("s").get<double>(),   w.at("cyc").get<double>(), w.at("sem").get<double>()};
  c.source_training = train_from_json(j.at("train").at("source"), "train.source", problems);
  c.translation_training = train_from_json(j.at("train").at("translation"), "train.translation", problems);
  c.target_training = train_from_json(j.at("train").at("target"), "train.target", problems);

  const auto& pl = j.at("pseudo_label");
  c.pseudo_label.policy = parse_enum<ThresholdPolicy>(pl.at("policy"), "pseudo_label.policy",
                                     {{"validate", ThresholdPolicy::validate}, {"fixed", ThresholdPolicy::fixed}},
                                     problems);
  c.pseudo_label.threshold = pl.at("threshold").get<double>();
  c.pseudo_label.grid = pl.at("grid").get<std::vector<double>>();
  try {
    c.pseudo_label.style_policy = style_policy_from_string(pl.at("style_policy").get<std::string>());
  } catch (const ConfigError&) {
    problems.push_back("pseudo_label.style_policy: unknown value '" + pl.at("style_policy").get<std::string>() +
                       "' (expected one of prior_mean, random, average)");
  }
  c.pseudo_label.average_draws = pl.at("average_draws").get<int>();

  const auto& ex = j.at("experiment");
  collect(problems, [&] { c.experiment.baseline = baseline_from_string(ex.at("baseline").get<std::string>()); });
  c.experiment.folds = ex.at("folds").get<int>();
  c.experiment.seeds = ex.at("seeds").get<std::vector<std::uint64_t>>();
  c.experiment.fractions = ex.at("fractions").get<std::vector<double>>();
  c.experiment.fold_seed = ex.at("fold_seed").get<std::uint64_t>();
  c.experiment.channel_adapter = ex.at("channel_adapter").get<bool>();
  return c;
}

void check_values(const RunConfig& c, std::vector<std::string>& problems) {
  if (c.jobs < 1) problems.emplace_back("jobs: must be >= 1");
  if (c.output_root.empty()) problems.emplace_back("output_root: must not be empty");
  if (c.data_dir && !std::filesystem::is_directory(*c.data_dir)) {
    problems.push_back("data_dir: directory '" + c.data_dir->string() + "' does not exist");
  }
  collect(problems, [&] { c.task.validate(); });
  collect(problems, [&] { c.segmenter.validate(); });
  collect(problems, [&] { c.translation_net.validate(); });
  collect(problems, [&] { c.loss_weights.validate(); });
  collect(problems, [&] { c.source_training.validate("train.source"); });
  collect(problems, [&] { c.translation_training.validate("train.translation"); });
  collect(problems, [&] { c.target_training.validate("train.target"); });

  const auto h = c.task.source_spec.height;
  const auto w = c.task.source_spec.width;
  const auto seg_stride = c.segmenter.total_stride();
  if (c.segmenter.stages >= 1 && (h % seg_stride != 0 || w % seg_stride != 0)) {
    problems.push_back("segmenter.stages: image size " + std::to_string(h) + "x" + std::to_string(w) +
                       " is not divisible by the segmenter stride " + std::to_string(seg_stride));
  }
  if (c.translation_net.downsamplings >= 1 && c.translation_net.disc_downsamplings >= 1) {
    const auto f = std::max(c.translation_net.downsampling_factor(), c.translation_net.patch_factor());
    if (h % f != 0 || w % f != 0) {
      problems.push_back("translation_net: image size " + std::to_string(h) + "x" + std::to_string(w) +
                         " is not divisible by " + std::to_string(f));
    }
  }

  const double min_threshold = 1.0 / static_cast<double>(c.task.target_spec.num_classes);
  auto threshold_ok = [&](double t) { return t > min_threshold && t < 1.0; };
  if (!threshold_ok(c.pseudo_label.threshold)) problems.emplace_back("pseudo_label.threshold: must lie in (1/K, 1)");
  if (c.pseudo_label.grid.empty()) problems.emplace_back("pseudo_label.grid: must not be empty");
  for (std::size_t i = 0; i < c.pseudo_label.grid.size(); ++i) {
    if (!threshold_ok(c.pseudo_label.grid[i])) {
      problems.push_back("pseudo_label.grid[" + std::to_string(i) + "]: must lie in (1/K, 1)");
    }
  }
  if (c.pseudo_label.average_draws < 1) problems.emplace_back("pseudo_label.average_draws: must be >= 1");

  if (c.experiment.folds < 2) problems.emplace_back("experiment.folds: must be >= 2");
  if (c.experiment.folds > c.task.num_patients_heldout && !c.data_dir) {
    problems.emplace_back("experiment.folds: more folds than held-out target patients");
  }
  if (c.experiment.seeds.empty()) problems.emplace_back("experiment.seeds: must not be empty");
  const auto& f = c.experiment.fractions;
  for (std::size_t i = 0; i < f.size(); ++i) {
    if (!(f[i] >= 0.0 && f[i] <= 1.0)) problems.push_back("experiment.fractions[" + std::to_string(i) + "]: must lie in [0,1]");
  }
  if (!std::is_sorted(f.begin(), f.end())) problems.emplace_back("experiment.fractions: must be sorted ascending");
}

}  // namespace

RunConfig desk_preset() {
  RunConfig c;
  c.preset = "desk";
  c.deterministic = true;
  c.task = SyntheticTaskConfig{};
  c.segmenter = SegmenterConfig{};
  c.segmenter.in_channels = c.task.target_spec.channels;
  c.translation_net = NetConfig{};
  c.source_training = sgd_stage(0.05, 8, 500);
  c.source_training.eval_every = 50;
  c.translation_training = adam_stage(5e-4, 8, 2000);
  c.target_training = sgd_stage(0.05, 8, 500);
  return c;
}

RunConfig paper_preset() {
  RunConfig c;
  c.preset = "paper";
  c.deterministic = false;
  c.task.source_spec = {"source", 5, 64, 64, 2};
  c.task.target_spec = {"target", 15, 64, 64, 2};
  c.task.lesion_radius_min = 3.0;
  c.task.lesion_radius_max = 9.0;
  c.task.num_patients_source = 80;
  c.task.num_patients_target = 60;
  c.task.num_patients_heldout = 60;
  c.task.slices_per_patient = 14;
  c.segmenter.base_width = 32;
  c.segmenter.stages = 4;
  c.segmenter.in_channels = c.task.target_spec.channels;
  c.translation_net = {32, 2, 4, 8, 128, 64, 4};
  c.source_training = sgd_stage(0.01, 32, 5000);
  c.source_training.eval_every = 250;
  c.translation_training = adam_stage(1e-4, 32, 50000);
  c.target_training = sgd_stage(0.01, 32, 5000);
  return c;
}

RunConfig preset(std::string_view name) {
  if (name == "desk") return desk_preset();
  if (name == "paper") return paper_preset();
  throw ConfigError("preset: unknown preset '" + std::string(name) + "' (expected desk or paper)");
}

json to_json(const RunConfig& c) {
  json grid = c.pseudo_label.grid;
  return {{"preset", c.preset},
          {"seed", c.seed},
          {"deterministic", c.deterministic},
          {"jobs", c.jobs},
          {"output_root", c.output_root.string()},
          {"data_dir", c.data_dir ? json(c.data_dir->string()) : json(nullptr)},
          {"task", task_to_json(c.task)},
          {"segmenter", segmenter_to_json(c.segmenter)},
          {"translation_net", to_json(c.translation_net)},
          {"loss_weights",
           {{"gan", c.loss_weights.gan},
            {"x", c.loss_weights.x},
            {"c", c.loss_weights.c},
            {"s", c.loss_weights.s},
            {"cyc", c.loss_weights.cyc},
            {"sem", c.loss_weights.sem}}},
          {"train",
           {{"source", train_to_json(c.source_training)},
            {"translation", train_to_json(c.translation_training)},
            {"target", train_to_json(c.target_training)}}},
          {"pseudo_label",
           {{"policy", c.pseudo_label.policy == ThresholdPolicy::fixed ? "fixed" : "validate"},
            {"threshold", c.pseudo_label.threshold},
            {"grid", grid},
            {"style_policy", to_string(c.pseudo_label.style_policy)},
            {"average_draws", c.pseudo_label.average_draws}}},
          {"experiment",
           {{"baseline", to_string(c.experiment.baseline)},
            {"folds", c.experiment.folds},
            {"seeds", c.experiment.seeds},
            {"fractions", c.experiment.fractions},
            {"fold_seed", c.experiment.fold_seed},
            {"channel_adapter", c.experiment.channel_adapter}}}};
}

RunConfig validate_config(const json& user) {
  if (!user.is_null() && !user.is_object()) throw ConfigError("config: top level must be a JSON object");
  std::vector<std::string> problems;
  std::string base_name = "desk";
  if (user.is_object() && user.contains("preset")) {
    if (user.at("preset").is_string()) {
      base_name = user.at("preset").get<std::string>();
    } else {
      problems.push_back("preset: expected a string, got " + json_kind(user.at("preset")));
    }
  }
  RunConfig base;
  try {
    base = preset(base_name);
  } catch (const ConfigError& e) {
    problems.insert(problems.end(), e.problems().begin(), e.problems().end());
    base = desk_preset();
  }
  auto merged = to_json(base);
  if (user.is_object()) {
    auto rest = user;
    rest.erase("preset");
    merge_checked(merged, rest, "", problems);
  }
  // Rejected values were never merged, so `merged` stays well-typed and the value checks
  // below still report their own problems.
  auto cfg = from_merged(merged, problems);
  check_values(cfg, problems);
  if (!problems.empty()) throw ConfigError(std::move(problems));
  return cfg;
}

RunConfig validate_config(std::string_view text) {
  const bool blank = std::all_of(text.begin(), text.end(), [](unsigned char ch) { return std::isspace(ch); });
  if (blank) return validate_config(json(nullptr));
  json j;
  try {
    j = json::parse(text.begin(), text.end());
  } catch (const json::parse_error& e) {
    throw ConfigError(std::string("config: not valid JSON (") + e.what() + ")");
  }
  return validate_config(j);
}

std::filesystem::path resolve_output_root(const RunConfig& cfg) {
  if (const char* env = std::getenv("HETSEG_RUN_ROOT"); env != nullptr && *env != '\0') return env;
  return cfg.output_root;
}

}  // namespace hetseg
