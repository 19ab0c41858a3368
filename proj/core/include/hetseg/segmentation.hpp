#pragma once

#include <torch/torch.h>

#include <nlohmann/json.hpp>

namespace hetseg {

struct SegmenterConfig {
  std::int64_t in_channels = 5;
  std::int64_t num_classes = 2;
  std::int64_t base_width = 16;
  /// Resolution stages of the residual encoder; each stage after the first halves H and W.
  std::int64_t stages = 3;
  std::int64_t blocks_per_stage = 1;
  bool batch_norm = true;
  double norm_eps = 1e-5;

  std::int64_t total_stride() const { return std::int64_t{1} << (stages - 1); }
  void validate() const;
};

nlohmann::json to_json(const SegmenterConfig& cfg);
SegmenterConfig segmenter_config_from_json(const nlohmann::json& j);

class BasicBlockImpl : public torch::nn::Module {
 public:
  BasicBlockImpl(std::int64_t in, std::int64_t out, std::int64_t stride, const SegmenterConfig& cfg);
  torch::Tensor forward(const torch::Tensor& x);

 private:
  torch::nn::Sequential body_{nullptr};
  torch::nn::Sequential shortcut_{nullptr};
};
TORCH_MODULE(BasicBlock);

/// Residual encoder with a skip-connected upsampling decoder. Maps [N,C,H,W] images onto
/// per-pixel class probabilities [N,K,H,W].
class SegmenterImpl : public torch::nn::Module {
 public:
  explicit SegmenterImpl(SegmenterConfig cfg);

  const SegmenterConfig& config() const noexcept { return cfg_; }
  torch::Tensor logits(const torch::Tensor& x);
  /// Softmax over classes.
  torch::Tensor forward(const torch::Tensor& x) { return torch::softmax(logits(x), 1); }

 private:
  torch::Tensor checked(const torch::Tensor& x) const;

  SegmenterConfig cfg_;
  torch::nn::Sequential stem_{nullptr};
  torch::nn::ModuleList encoder_{nullptr};
  torch::nn::ModuleList decoder_{nullptr};
  torch::nn::Conv2d head_{nullptr};
};
TORCH_MODULE(Segmenter);

Segmenter build_segmenter(const SegmenterConfig& cfg);

/// Inference-mode prediction; restores the module's previous train/eval mode.
torch::Tensor predict_soft(Segmenter& seg, const torch::Tensor& image);
/// Per-pixel argmax as a one-hot mask; exact ties go to the lower class index.
torch::Tensor predict_hard(Segmenter& seg, const torch::Tensor& image);
torch::Tensor hard_from_soft(const torch::Tensor& p);

/// Learnable 1x1 channel projection, used where one network must consume two channel counts.
class ChannelAdapterImpl : public torch::nn::Module {
 public:
  ChannelAdapterImpl(std::int64_t in_channels, std::int64_t out_channels);
  torch::Tensor forward(const torch::Tensor& x) { return proj_->forward(x); }

 private:
  torch::nn::Conv2d proj_{nullptr};
};
TORCH_MODULE(ChannelAdapter);

/// Switches a module to eval mode for the guard's lifetime.
class EvalModeGuard {
 public:
  explicit EvalModeGuard(torch::nn::Module& m) : module_(m), was_training_(m.is_training()) { module_.eval(); }
  ~EvalModeGuard() { module_.train(was_training_); }
  EvalModeGuard(const EvalModeGuard&) = delete;
  EvalModeGuard& operator=(const EvalModeGuard&) = delete;

 private:
  torch::nn::Module& module_;
  bool was_training_;
};

}  // namespace hetseg
