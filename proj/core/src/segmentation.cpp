#include "hetseg/segmentation.hpp"

#include <sstream>

#include "hetseg/error.hpp"
#include "hetseg/layers.hpp"

namespace hetseg {

namespace F = torch::nn::functional;

void SegmenterConfig::validate() const {
  std::vector<std::string> problems;
  if (in_channels < 1) problems.emplace_back("segmenter.in_channels: must be >= 1");
  if (num_classes < 2) problems.emplace_back("segmenter.num_classes: must be >= 2");
  if (base_width < 1) problems.emplace_back("segmenter.base_width: must be >= 1");
  if (stages < 1 || stages > 6) problems.emplace_back("segmenter.stages: must be in [1,6]");
  if (blocks_per_stage < 1) problems.emplace_back("segmenter.blocks_per_stage: must be >= 1");
  if (!(norm_eps > 0.0)) problems.emplace_back("segmenter.norm_eps: must be > 0");
  if (!problems.empty()) throw ConfigError(std::move(problems));
}

nlohmann::json to_json(const SegmenterConfig& cfg) {
  return {{"in_channels", cfg.in_channels}, {"num_classes", cfg.num_classes},
          {"base_width", cfg.base_width},   {"stages", cfg.stages},
          {"blocks_per_stage", cfg.blocks_per_stage}, {"batch_norm", cfg.batch_norm},
          {"norm_eps", cfg.norm_eps}};
}

SegmenterConfig segmenter_config_from_json(const nlohmann::json& j) {
  SegmenterConfig cfg;
  cfg.in_channels = j.value("in_channels", cfg.in_channels);
  cfg.num_classes = j.value("num_classes", cfg.num_classes);
  cfg.base_width = j.value("base_width", cfg.base_width);
  cfg.stages = j.value("stages", cfg.stages);
  cfg.blocks_per_stage = j.value("blocks_per_stage", cfg.blocks_per_stage);
  cfg.batch_norm = j.value("batch_norm", cfg.batch_norm);
  cfg.norm_eps = j.value("norm_eps", cfg.norm_eps);
  return cfg;
}

namespace {

void push_norm(torch::nn::Sequential& seq, std::int64_t channels, const SegmenterConfig& cfg) {
  if (cfg.batch_norm) seq->push_back(torch::nn::BatchNorm2d(torch::nn::BatchNorm2dOptions(channels).eps(cfg.norm_eps)));
}

std::int64_t stage_width(const SegmenterConfig& cfg, std::int64_t stage) { return cfg.base_width << stage; }

}  // namespace

BasicBlockImpl::BasicBlockImpl(std::int64_t in, std::int64_t out, std::int64_t stride, const SegmenterConfig& cfg) {
  body_ = torch::nn::Sequential();
  body_->push_back(conv2d(in, out, 3, stride, 1));
  push_norm(body_, out, cfg);
  body_->push_back(torch::nn::ReLU());
  body_->push_back(conv2d(out, out, 3));
  push_norm(body_, out, cfg);
  register_module("body", body_);
  shortcut_ = torch::nn::Sequential();
  if (in != out || stride != 1) {
    shortcut_->push_back(conv2d(in, out, 1, stride, 0));
    push_norm(shortcut_, out, cfg);
  }
  register_module("shortcut", shortcut_);
}

torch::Tensor BasicBlockImpl::forward(const torch::Tensor& x) {
  auto skip = shortcut_->is_empty() ? x : shortcut_->forward(x);
  return torch::relu(body_->forward(x) + skip);
}

SegmenterImpl::SegmenterImpl(SegmenterConfig cfg) : cfg_(std::move(cfg)) {
  cfg_.validate();
  stem_ = torch::nn::Sequential();
  stem_->push_back(conv2d(cfg_.in_channels, cfg_.base_width, 3));
  push_norm(stem_, cfg_.base_width, cfg_);
  stem_->push_back(torch::nn::ReLU());
  register_module("stem", stem_);

  encoder_ = register_module("encoder", torch::nn::ModuleList());
  for (std::int64_t s = 0; s < cfg_.stages; ++s) {
    torch::nn::Sequential stage;
    const auto in = s == 0 ? cfg_.base_width : stage_width(cfg_, s - 1);
    const auto out = stage_width(cfg_, s);
    stage->push_back(BasicBlock(in, out, s == 0 ? 1 : 2, cfg_));
    for (std::int64_t b = 1; b < cfg_.blocks_per_stage; ++b) stage->push_back(BasicBlock(out, out, 1, cfg_));
    encoder_->push_back(stage);
  }

  decoder_ = register_module("decoder", torch::nn::ModuleList());
  for (std::int64_t s = cfg_.stages - 1; s >= 1; --s) {
    torch::nn::Sequential up;
    const auto out = stage_width(cfg_, s - 1);
    up->push_back(conv2d(stage_width(cfg_, s) + out, out, 3));
    push_norm(up, out, cfg_);
    up->push_back(torch::nn::ReLU());
    decoder_->push_back(up);
  }
  head_ = register_module("head", conv2d(cfg_.base_width, cfg_.num_classes, 1, 1, 0));
}

torch::Tensor SegmenterImpl::checked(const torch::Tensor& x) const {
  auto b = x.dim() == 3 ? x.unsqueeze(0) : x;
  if (b.dim() != 4 || b.size(1) != cfg_.in_channels) {
    std::ostringstream out;
    out << "segmenter expects " << cfg_.in_channels << " input channels, got shape " << x.sizes();
    throw ShapeError(out.str());
  }
  const auto stride = cfg_.total_stride();
  if (b.size(2) % stride != 0 || b.size(3) % stride != 0) {
    throw ConfigError("segmenter: height and width must be divisible by " + std::to_string(stride) + ", got " +
                      std::to_string(b.size(2)) + "x" + std::to_string(b.size(3)));
  }
  return b;
}

torch::Tensor SegmenterImpl::logits(const torch::Tensor& x) {
  auto h = stem_->forward(checked(x));
  std::vector<torch::Tensor> skips;
  for (const auto& stage : *encoder_) {
    h = stage->as<torch::nn::Sequential>()->forward(h);
    skips.push_back(h);
  }
  std::size_t level = skips.size() - 1;
  for (const auto& up : *decoder_) {
    --level;
    h = F::interpolate(h, F::InterpolateFuncOptions().scale_factor(std::vector<double>{2.0, 2.0}).mode(torch::kNearest));
    h = up->as<torch::nn::Sequential>()->forward(torch::cat({h, skips[level]}, 1));
  }
  return head_->forward(h);
}

Segmenter build_segmenter(const SegmenterConfig& cfg) { return Segmenter(cfg); }

torch::Tensor predict_soft(Segmenter& seg, const torch::Tensor& image) {
  EvalModeGuard eval(*seg);
  torch::NoGradGuard no_grad;
  auto p = seg->forward(image);
  return image.dim() == 3 ? p.squeeze(0) : p;
}

torch::Tensor hard_from_soft(const torch::Tensor& p) {
  auto b = p.dim() == 3 ? p.unsqueeze(0) : p;
  const auto classes = b.size(1);
  auto best = torch::zeros({b.size(0), b.size(2), b.size(3)}, torch::kLong);
  auto best_value = b.select(1, 0).clone();
  for (std::int64_t c = 1; c < classes; ++c) {
    auto candidate = b.select(1, c);
    auto better = candidate > best_value;  // strict: ties stay with the lower index
    best = torch::where(better, torch::full_like(best, c), best);
    best_value = torch::where(better, candidate, best_value);
  }
  auto hard = F::one_hot(best, classes).permute({0, 3, 1, 2}).to(p.dtype());
  return p.dim() == 3 ? hard.squeeze(0) : hard;
}

torch::Tensor predict_hard(Segmenter& seg, const torch::Tensor& image) {
  return hard_from_soft(predict_soft(seg, image));
}

ChannelAdapterImpl::ChannelAdapterImpl(std::int64_t in_channels, std::int64_t out_channels)
    : proj_(register_module("proj", conv2d(in_channels, out_channels, 1, 1, 0))) {}

}  // namespace hetseg
