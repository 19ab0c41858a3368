#pragma once

#include <torch/torch.h>

namespace hetseg {

inline constexpr double kInstanceNormEps = 1e-5;

/// Per-sample, per-channel normalization over the spatial axes of [N,C,H,W]. No affine part.
torch::Tensor instance_norm(const torch::Tensor& x, double eps = kInstanceNormEps);

/// gamma * instance_norm(x) + beta, with gamma and beta of shape [N,C].
torch::Tensor adain(const torch::Tensor& x, const torch::Tensor& gamma, const torch::Tensor& beta,
                    double eps = kInstanceNormEps);

torch::nn::Conv2d conv2d(std::int64_t in, std::int64_t out, std::int64_t kernel, std::int64_t stride = 1,
                         std::int64_t padding = -1);

/// conv-IN-ReLU-conv-IN with identity skip.
class ResidualBlockImpl : public torch::nn::Module {
 public:
  explicit ResidualBlockImpl(std::int64_t channels);
  torch::Tensor forward(const torch::Tensor& x);

 private:
  torch::nn::Conv2d conv1_{nullptr}, conv2_{nullptr};
};
TORCH_MODULE(ResidualBlock);

/// Residual block whose two normalizations are AdaIN layers driven by external parameters.
class AdaInResidualBlockImpl : public torch::nn::Module {
 public:
  explicit AdaInResidualBlockImpl(std::int64_t channels);
  /// `params` is [N, 4*C]: gamma1, beta1, gamma2, beta2.
  torch::Tensor forward(const torch::Tensor& x, const torch::Tensor& params);
  static constexpr std::int64_t kParamsPerChannel = 4;

 private:
  std::int64_t channels_;
  torch::nn::Conv2d conv1_{nullptr}, conv2_{nullptr};
};
TORCH_MODULE(AdaInResidualBlock);

}  // namespace hetseg
