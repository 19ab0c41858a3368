#include "hetseg/training.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>

#include "hetseg/log.hpp"

#include "hetseg/checkpoint.hpp"
#include "hetseg/error.hpp"
#include "hetseg/metrics.hpp"
#include "hetseg/pseudo_label.hpp"
#include "hetseg/runtime.hpp"

namespace hetseg {

namespace {

// Salts for derive_seed; one per independent random stream.
enum Stream : std::uint64_t {
  kSplit = 1,
  kSourceInit,
  kTranslatorInit,
  kTranslationSource,
  kTranslationTarget,
  kTranslationStyle,
  kTargetInit,
  kAdapterInit,
  kSyntheticBatches,
  kLabeledBatches,
  kPseudoBatches,
  kUnlabeledBatches,
  kRawSourceBatches,
  kTargetStyle,
  kSourceBatches,
};

std::unique_ptr<torch::optim::Optimizer> make_optimizer(std::vector<torch::Tensor> params, const OptimizerConfig& cfg) {
  if (cfg.kind == OptimizerKind::adam) {
    return std::make_unique<torch::optim::Adam>(
        std::move(params), torch::optim::AdamOptions(cfg.lr).betas({cfg.beta1, cfg.beta2}).weight_decay(cfg.weight_decay));
  }
  return std::make_unique<torch::optim::SGD>(
      std::move(params), torch::optim::SGDOptions(cfg.lr).momentum(cfg.momentum).weight_decay(cfg.weight_decay));
}

void set_requires_grad(const std::vector<torch::Tensor>& params, bool on) {
  for (auto p : params) p.requires_grad_(on);
}

double checked_value(const torch::Tensor& t, const std::string& term, std::int64_t iteration) {
  const double v = t.item<double>();
  if (!std::isfinite(v)) throw DivergenceError(term, iteration);
  return v;
}

void audit_names(GradientAudit& audit, const Dataset& data, const std::vector<std::size_t>& idx) {
  for (auto i : idx) audit.insert(data[i].name);
}

/// Restores parameters' requires_grad flags on scope exit.
class FreezeGuard {
 public:
  explicit FreezeGuard(torch::nn::Module& m) : params_(m.parameters()) {
    for (const auto& p : params_) flags_.push_back(p.requires_grad());
    set_requires_grad(params_, false);
  }
  ~FreezeGuard() {
    for (std::size_t i = 0; i < params_.size(); ++i) params_[i].requires_grad_(flags_[i]);
  }
  FreezeGuard(const FreezeGuard&) = delete;
  FreezeGuard& operator=(const FreezeGuard&) = delete;

 private:
  std::vector<torch::Tensor> params_;
  std::vector<bool> flags_;
};

torch::Tensor disc_loss(Translator& tm, Domain d, const torch::Tensor& real, const torch::Tensor& fake,
                        GanMode mode) {
  if (mode == GanMode::least_squares) {
    return loss::lsgan_loss_d(tm->discriminate(real, d), tm->discriminate(fake, d));
  }
  return loss::gan_loss_d_logits(tm->discriminate_logits(real, d), tm->discriminate_logits(fake, d));
}

torch::Tensor gen_adv_loss(Translator& tm, Domain d, const torch::Tensor& fake, const TrainConfig& cfg) {
  if (cfg.gan_mode == GanMode::least_squares) return loss::lsgan_loss_g(tm->discriminate(fake, d));
  return loss::gan_loss_g_logits(tm->discriminate_logits(fake, d), cfg.gan_form);
}

}  // namespace

void TrainConfig::validate(const std::string& prefix) const {
  std::vector<std::string> problems;
  if (!(optimizer.lr > 0.0) || !std::isfinite(optimizer.lr)) problems.push_back(prefix + ".lr: must be > 0");
  if (optimizer.momentum < 0.0 || optimizer.momentum >= 1.0) problems.push_back(prefix + ".momentum: must be in [0,1)");
  if (optimizer.beta1 < 0.0 || optimizer.beta1 >= 1.0) problems.push_back(prefix + ".beta1: must be in [0,1)");
  if (optimizer.beta2 < 0.0 || optimizer.beta2 >= 1.0) problems.push_back(prefix + ".beta2: must be in [0,1)");
  if (optimizer.weight_decay < 0.0) problems.push_back(prefix + ".weight_decay: must be >= 0");
  if (batch_size < 1) problems.push_back(prefix + ".batch_size: must be >= 1");
  if (iterations < 0) problems.push_back(prefix + ".iterations: must be >= 0");
  if (eval_every < 1) problems.push_back(prefix + ".eval_every: must be >= 1");
  if (!(validation_fraction >= 0.0 && validation_fraction < 1.0)) {
    problems.push_back(prefix + ".validation_fraction: must be in [0,1)");
  }
  if (!(dice.smoothing >= 0.0)) problems.push_back(prefix + ".dice_smoothing: must be >= 0");
  if (!problems.empty()) throw ConfigError(std::move(problems));
}

nlohmann::json to_json(const TrainConfig& cfg) {
  return {{"optimizer", cfg.optimizer.kind == OptimizerKind::adam ? "adam" : "sgd"},
          {"lr", cfg.optimizer.lr},
          {"momentum", cfg.optimizer.momentum},
          {"beta1", cfg.optimizer.beta1},
          {"beta2", cfg.optimizer.beta2},
          {"weight_decay", cfg.optimizer.weight_decay},
          {"batch_size", cfg.batch_size},
          {"iterations", cfg.iterations},
          {"eval_every", cfg.eval_every},
          {"validation_fraction", cfg.validation_fraction},
          {"gan_form", cfg.gan_form == GeneratorGanForm::saturating ? "saturating" : "non_saturating"},
          {"gan_mode", cfg.gan_mode == GanMode::log_likelihood ? "log" : "least_squares"},
          {"dice_smoothing", cfg.dice.smoothing},
          {"dice_reduction", cfg.dice.reduction == DiceReduction::pooled ? "pooled" : "per_image"},
          {"dice_ignore_unlabeled", cfg.dice.ignore_unlabeled},
          {"entropy_reduction", cfg.entropy_reduction == EntropyReduction::mean ? "mean" : "sum"},
          {"seed", cfg.seed}};
}

void LossLog::add(std::int64_t iteration, std::string term, double value) {
  entries_.push_back({iteration, std::move(term), value});
}

std::set<std::string> LossLog::terms() const {
  std::set<std::string> out;
  for (const auto& e : entries_) out.insert(e.term);
  return out;
}

void LossLog::write_csv(const std::filesystem::path& path) const {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw DataError("cannot write '" + path.string() + "'");
  out << "iteration,term,value\n" << std::setprecision(9);
  for (const auto& e : entries_) out << e.iteration << ',' << e.term << ',' << e.value << '\n';
}

SourceTrainingResult train_source_segmenter(const Dataset& source_labeled, const SegmenterConfig& seg_cfg,
                                            const TrainConfig& cfg) {
  cfg.validate("train.source");
  if (source_labeled.empty()) throw DataError("train-source: source dataset is empty");
  for (const auto& s : source_labeled) {
    if (!s.labeled()) throw DataError("train-source: sample '" + s.name + "' has no mask");
  }
  auto model_cfg = seg_cfg;
  model_cfg.in_channels = source_labeled.spec().channels;
  model_cfg.num_classes = source_labeled.spec().num_classes;

  SourceTrainingResult result;
  auto patients = source_labeled.patient_ids();
  std::mt19937_64 split_rng(derive_seed(cfg.seed, {kSplit}));
  std::shuffle(patients.begin(), patients.end(), split_rng);
  std::size_t n_val = 0;
  if (patients.size() >= 2 && cfg.validation_fraction > 0.0) {
    n_val = static_cast<std::size_t>(std::lround(cfg.validation_fraction * static_cast<double>(patients.size())));
    n_val = std::clamp<std::size_t>(n_val, 1, patients.size() - 1);
  }
  result.validation_patients.insert(patients.begin(), patients.begin() + static_cast<std::ptrdiff_t>(n_val));
  result.train_patients.insert(patients.begin() + static_cast<std::ptrdiff_t>(n_val), patients.end());
  const auto train = source_labeled.select_patients(result.train_patients);
  const auto validation = n_val > 0 ? source_labeled.select_patients(result.validation_patients) : train;

  auto model = seeded_init(derive_seed(cfg.seed, {kSourceInit}), [&] { return build_segmenter(model_cfg); });
  auto best = seeded_init(0, [&] { return build_segmenter(model_cfg); });
  copy_state(*model, *best);
  auto optimizer = make_optimizer(model->parameters(), cfg.optimizer);
  BatchSampler sampler(train.size(), derive_seed(cfg.seed, {kSourceBatches}));

  auto validate = [&](std::int64_t it) {
    const double dsc = evaluate_segmenter(model, validation).pixel.dsc;
    result.validation_curve.emplace_back(it, dsc);
    result.log.add(it, "val_dsc", dsc);
    if (it == 0 || dsc > result.best_validation_dsc) {
      result.best_validation_dsc = dsc;
      result.best_iteration = it;
      copy_state(*model, *best);
    }
  };
  validate(0);

  model->train();
  for (std::int64_t it = 1; it <= cfg.iterations; ++it) {
    const auto idx = sampler.next(static_cast<std::size_t>(cfg.batch_size));
    auto x = train.images(idx);
    auto y = train.masks(idx);
    auto loss = loss::dice_seg_loss(model->forward(x), y, cfg.dice);
    const double value = checked_value(loss, "seg_dice", it);
    optimizer->zero_grad();
    loss.backward();
    optimizer->step();
    audit_names(result.audit, train, idx);
    result.log.add(it, "seg_dice", value);
    if (it % cfg.eval_every == 0 || it == cfg.iterations) validate(it);
  }
  log::info("train-source: best validation DSC ", result.best_validation_dsc, " at iteration ",
            result.best_iteration);
  best->eval();
  result.model = best;
  return result;
}

TranslationTrainingResult train_translation(const Dataset& source_labeled, const Dataset& target_unlabeled,
                                            Segmenter& seg_s, const NetConfig& net_cfg, const TrainConfig& cfg,
                                            const LossWeights& weights) {
  cfg.validate("train.translation");
  weights.validate();
  if (source_labeled.empty() || target_unlabeled.empty()) throw DataError("train-translation: empty dataset");
  if (!source_labeled.all_labeled()) throw DataError("train-translation: source samples need masks");
  if (seg_s->config().in_channels != source_labeled.spec().channels) {
    throw ShapeError("train-translation: source segmenter takes " + std::to_string(seg_s->config().in_channels) +
                     " channels, source domain has " + std::to_string(source_labeled.spec().channels));
  }

  TranslationTrainingResult result;
  auto tm = seeded_init(derive_seed(cfg.seed, {kTranslatorInit}), [&] {
    return Translator(source_labeled.spec(), target_unlabeled.spec(), net_cfg);
  });
  tm->train();
  const auto gen_params = tm->generator_parameters();
  const auto dis_params = tm->discriminator_parameters();
  auto gen_opt = make_optimizer(gen_params, cfg.optimizer);
  auto dis_opt = make_optimizer(dis_params, cfg.optimizer);

  FreezeGuard frozen(*seg_s);
  EvalModeGuard seg_eval(*seg_s);

  BatchSampler source_batches(source_labeled.size(), derive_seed(cfg.seed, {kTranslationSource}));
  BatchSampler target_batches(target_unlabeled.size(), derive_seed(cfg.seed, {kTranslationTarget}));
  auto style_rng = at::detail::createCPUGenerator(derive_seed(cfg.seed, {kTranslationStyle}));
  const auto b = static_cast<std::size_t>(cfg.batch_size);
  const auto dim = net_cfg.style_dim;

  for (std::int64_t it = 1; it <= cfg.iterations; ++it) {
    const auto si = source_batches.next(b);
    const auto ti = target_batches.next(b);
    auto xs = source_labeled.images(si);
    auto ys = source_labeled.masks(si);
    auto xt = target_unlabeled.images(ti);
    auto s_s_prior = sample_style_prior(style_rng, xs.size(0), dim);
    auto s_t_prior = sample_style_prior(style_rng, xt.size(0), dim);

    auto c_s = tm->encode_content(xs, Domain::source);
    auto s_s = tm->encode_style(xs, Domain::source);
    auto c_t = tm->encode_content(xt, Domain::target);
    auto s_t = tm->encode_style(xt, Domain::target);
    auto xs_rec = tm->decode(c_s, s_s, Domain::source);
    auto xt_rec = tm->decode(c_t, s_t, Domain::target);
    auto x_st = tm->decode(c_s, s_t_prior, Domain::target);
    auto x_ts = tm->decode(c_t, s_s_prior, Domain::source);

    // Discriminator ascent on the adversarial terms.
    set_requires_grad(dis_params, true);
    dis_opt->zero_grad();
    auto d_loss = weights.gan * (disc_loss(tm, Domain::source, xs, x_ts.detach(), cfg.gan_mode) +
                                 disc_loss(tm, Domain::target, xt, x_st.detach(), cfg.gan_mode));
    const double d_value = checked_value(d_loss, "dis", it);
    d_loss.backward();
    dis_opt->step();
    set_requires_grad(dis_params, false);

    // Generator descent on the full objective.
    auto c_s_rec = tm->encode_content(x_st, Domain::target);
    auto s_t_rec = tm->encode_style(x_st, Domain::target);
    auto c_t_rec = tm->encode_content(x_ts, Domain::source);
    auto s_s_rec = tm->encode_style(x_ts, Domain::source);
    auto x_sts = tm->decode(c_s_rec, s_s, Domain::source);
    auto x_tst = tm->decode(c_t_rec, s_t, Domain::target);

    loss::TranslationTerms terms;
    terms.gan_s = gen_adv_loss(tm, Domain::source, x_ts, cfg);
    terms.gan_t = gen_adv_loss(tm, Domain::target, x_st, cfg);
    terms.recon_x_s = loss::recon_l1(xs_rec, xs);
    terms.recon_x_t = loss::recon_l1(xt_rec, xt);
    terms.recon_c_s = loss::recon_l1(c_s_rec.value, c_s.value);
    terms.recon_c_t = loss::recon_l1(c_t_rec.value, c_t.value);
    terms.recon_s_s = loss::recon_l1(s_s_rec.value, s_s_prior.value);
    terms.recon_s_t = loss::recon_l1(s_t_rec.value, s_t_prior.value);
    terms.cyc_s = loss::recon_l1(x_sts, xs);
    terms.cyc_t = loss::recon_l1(x_tst, xt);
    if (weights.sem > 0.0) {
      terms.sem = loss::semantic_cycle_loss(seg_s->forward(x_sts), ys, cfg.dice);
    } else {
      torch::NoGradGuard no_grad;
      terms.sem = loss::semantic_cycle_loss(seg_s->forward(x_sts), ys, cfg.dice);
    }
    auto total = loss::translation_total(terms, weights);

    const auto all = terms.all();
    for (std::size_t k = 0; k < all.size(); ++k) {
      const std::string name(loss::TranslationTerms::kNames[k]);
      result.log.add(it, name, checked_value(*all[k], name, it));
    }
    result.log.add(it, "dis", d_value);
    result.log.add(it, "total", checked_value(total, "total", it));

    gen_opt->zero_grad();
    total.backward();
    gen_opt->step();
    if (it % 500 == 0) {
      log::info("train-translation: iteration ", it, " total ", total.item<double>(), " sem ",
                terms.sem.item<double>());
    }
  }
  set_requires_grad(dis_params, true);
  tm->eval();
  result.model = tm;
  return result;
}

TargetTrainingResult train_target_segmenter(const TargetTrainingData& data, Translator* translator,
                                            const SegmenterConfig& seg_cfg, const TrainConfig& cfg,
                                            const TargetTrainingOptions& options) {
  cfg.validate("train.target");
  const bool has_labeled = data.target_labeled != nullptr && !data.target_labeled->empty();
  if (options.use_pslab && (data.target_pseudo == nullptr || data.target_pseudo->empty())) {
    throw MissingStageError("pseudo-labels missing: run the pseudo-label stage before training with pseudo-labels");
  }
  if (options.use_synthetic && (translator == nullptr || !*translator)) {
    throw MissingStageError("translation checkpoint missing: synthetic target images need a trained translator");
  }
  if ((options.use_synthetic || options.use_raw_source) &&
      (data.source_labeled == nullptr || data.source_labeled->empty())) {
    throw DataError("train-target: labeled source data required");
  }
  const Dataset* entropy_data = data.target_unlabeled != nullptr ? data.target_unlabeled : data.target_pseudo;
  if (options.use_entmin && (entropy_data == nullptr || entropy_data->empty())) {
    throw DataError("train-target: entropy minimization needs unlabeled target data");
  }
  const Dataset* any_target = has_labeled             ? data.target_labeled
                              : data.target_pseudo     ? data.target_pseudo
                              : data.target_unlabeled  ? data.target_unlabeled
                                                       : nullptr;
  DomainSpec target_spec;
  if (any_target != nullptr) {
    target_spec = any_target->spec();
  } else if (translator != nullptr && *translator) {
    target_spec = (*translator)->spec(Domain::target);
  } else {
    throw DataError("train-target: no target-domain data or translator to fix the target geometry");
  }
  if (!options.use_synthetic && !options.use_raw_source && !has_labeled && !options.use_pslab && cfg.iterations > 0) {
    throw ConfigError("train-target: no supervised data stream enabled");
  }

  auto model_cfg = seg_cfg;
  model_cfg.in_channels = target_spec.channels;
  model_cfg.num_classes = target_spec.num_classes;

  TargetTrainingResult result;
  result.model = seeded_init(derive_seed(cfg.seed, {kTargetInit}), [&] { return build_segmenter(model_cfg); });
  auto params = result.model->parameters();
  if (options.use_raw_source) {
    const auto source_channels = data.source_labeled->spec().channels;
    if (source_channels != target_spec.channels) {
      if (!options.channel_adapter) {
        throw ConfigError("train-target: raw source images have " + std::to_string(source_channels) +
                          " channels but the target segmenter takes " + std::to_string(target_spec.channels) +
                          "; heterogeneous domains need a translator or an explicit channel adapter");
      }
      result.adapter = seeded_init(derive_seed(cfg.seed, {kAdapterInit}),
                                   [&] { return ChannelAdapter(source_channels, target_spec.channels); });
      auto ap = result.adapter->parameters();
      params.insert(params.end(), ap.begin(), ap.end());
    }
  }
  if (cfg.iterations == 0) {
    result.model->eval();
    return result;
  }
  auto optimizer = make_optimizer(params, cfg.optimizer);

  std::optional<EvalModeGuard> translator_eval;
  if (options.use_synthetic) translator_eval.emplace(**translator);

  const auto b = static_cast<std::size_t>(cfg.batch_size);
  const auto n_source = data.source_labeled ? data.source_labeled->size() : 0;
  BatchSampler synthetic_batches(n_source, derive_seed(cfg.seed, {kSyntheticBatches}));
  BatchSampler raw_batches(n_source, derive_seed(cfg.seed, {kRawSourceBatches}));
  BatchSampler labeled_batches(has_labeled ? data.target_labeled->size() : 0, derive_seed(cfg.seed, {kLabeledBatches}));
  BatchSampler pseudo_batches(data.target_pseudo ? data.target_pseudo->size() : 0,
                              derive_seed(cfg.seed, {kPseudoBatches}));
  BatchSampler unlabeled_batches(data.target_unlabeled ? data.target_unlabeled->size() : 0,
                                 derive_seed(cfg.seed, {kUnlabeledBatches}));
  auto style_rng = at::detail::createCPUGenerator(derive_seed(cfg.seed, {kTargetStyle}));
  const bool entropy_from_pseudo = options.use_entmin && options.use_pslab && data.target_unlabeled == nullptr;

  result.model->train();
  if (result.adapter) result.adapter->train();
  for (std::int64_t it = 1; it <= cfg.iterations; ++it) {
    std::vector<torch::Tensor> inputs;
    std::vector<torch::Tensor> targets;
    if (options.use_synthetic) {
      const auto idx = synthetic_batches.next(b);
      auto xs = data.source_labeled->images(idx);
      torch::Tensor x_st;
      {
        torch::NoGradGuard no_grad;
        auto style = sample_style_prior(style_rng, xs.size(0), (*translator)->config().style_dim);
        x_st = (*translator)->translate(xs, Direction::source_to_target, style);
      }
      inputs.push_back(x_st);
      targets.push_back(data.source_labeled->masks(idx));
      audit_names(result.audit, *data.source_labeled, idx);
    }
    if (options.use_raw_source) {
      const auto idx = raw_batches.next(b);
      auto xs = data.source_labeled->images(idx);
      inputs.push_back(result.adapter ? result.adapter->forward(xs) : xs);
      targets.push_back(data.source_labeled->masks(idx));
      audit_names(result.audit, *data.source_labeled, idx);
    }
    if (has_labeled) {
      const auto idx = labeled_batches.next(b);
      inputs.push_back(data.target_labeled->images(idx));
      targets.push_back(data.target_labeled->masks(idx));
      audit_names(result.audit, *data.target_labeled, idx);
    }
    if (options.use_pslab) {
      const auto idx = pseudo_batches.next(b);
      inputs.push_back(data.target_pseudo->images(idx));
      targets.push_back(data.target_pseudo->masks(idx));
      audit_names(result.audit, *data.target_pseudo, idx);
    }
    std::int64_t supervised = 0;
    for (const auto& t : inputs) supervised += t.size(0);
    std::int64_t entropy_begin = supervised;
    std::int64_t entropy_count = 0;
    if (options.use_entmin) {
      if (entropy_from_pseudo) {
        entropy_count = inputs.back().size(0);
        entropy_begin = supervised - entropy_count;
      } else {
        const auto idx = unlabeled_batches.next(b);
        inputs.push_back(data.target_unlabeled->images(idx));
        entropy_count = static_cast<std::int64_t>(idx.size());
        audit_names(result.audit, *data.target_unlabeled, idx);
      }
    }

    auto p = result.model->forward(torch::cat(inputs, 0));
    torch::Tensor total;
    if (supervised > 0) {
      auto seg = loss::dice_seg_loss(p.narrow(0, 0, supervised), torch::cat(targets, 0), cfg.dice);
      result.log.add(it, "seg_dice", checked_value(seg, "seg_dice", it));
      total = seg;
    }
    if (options.use_entmin) {
      auto ent = loss::entropy_loss(p.narrow(0, entropy_begin, entropy_count), cfg.entropy_reduction);
      result.log.add(it, "entropy", checked_value(ent, "entropy", it));
      total = total.defined() ? loss::segmentation_total(total, ent) : ent;
    }
    result.log.add(it, "total", checked_value(total, "total", it));
    optimizer->zero_grad();
    total.backward();
    optimizer->step();
  }
  result.model->eval();
  if (result.adapter) result.adapter->eval();
  return result;
}

double select_threshold(Translator& translator, Segmenter& seg_s, const Dataset& source_validation,
                        const std::vector<double>& grid, std::uint64_t seed) {
  if (grid.empty()) throw ConfigError("pseudo_label.grid: must not be empty");
  if (source_validation.empty()) return grid.back();
  EvalModeGuard tm_eval(*translator);
  EvalModeGuard seg_eval(*seg_s);
  torch::NoGradGuard no_grad;
  auto gen = at::detail::createCPUGenerator(seed);
  auto xs = source_validation.images();
  auto truth = source_validation.masks();
  const auto n = xs.size(0);
  const auto dim = translator->config().style_dim;
  auto x_st = translator->translate(xs, Direction::source_to_target, sample_style_prior(gen, n, dim));
  auto back = translator->translate(x_st, Direction::target_to_source, StyleCode{torch::zeros({n, dim})});
  auto p = seg_s->forward(back);

  auto sorted = grid;
  std::sort(sorted.begin(), sorted.end());
  double best_threshold = sorted.front();
  double best_dsc = -1.0;
  for (double t : sorted) {
    PixelCounts counts;
    for (std::int64_t i = 0; i < n; ++i) {
      auto pm = pseudo_label(p[i], t);
      counts += count_pixels(pm.mask, truth[i]);
    }
    const double dsc = metrics_from_counts(counts).dsc;
    if (dsc >= best_dsc) {
      best_dsc = dsc;
      best_threshold = t;
    }
  }
  log::info("pseudo-label threshold ", best_threshold, " selected (source round-trip DSC ", best_dsc, ")");
  return best_threshold;
}

}  // namespace hetseg
