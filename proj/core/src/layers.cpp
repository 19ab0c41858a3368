#include "hetseg/layers.hpp"

namespace hetseg {

torch::Tensor instance_norm(const torch::Tensor& x, double eps) {
  TORCH_CHECK(x.dim() == 4, "instance_norm expects [N,C,H,W], got ", x.sizes());
  auto mean = x.mean({2, 3}, /*keepdim=*/true);
  auto var = (x - mean).pow(2).mean({2, 3}, /*keepdim=*/true);
  return (x - mean) / torch::sqrt(var + eps);
}

torch::Tensor adain(const torch::Tensor& x, const torch::Tensor& gamma, const torch::Tensor& beta, double eps) {
  TORCH_CHECK(gamma.sizes() == beta.sizes() && gamma.dim() == 2 && gamma.size(0) == x.size(0) &&
                  gamma.size(1) == x.size(1),
              "adain: gamma/beta must be [N,C] matching x, got ", gamma.sizes(), " for x ", x.sizes());
  return gamma.unsqueeze(-1).unsqueeze(-1) * instance_norm(x, eps) + beta.unsqueeze(-1).unsqueeze(-1);
}

torch::nn::Conv2d conv2d(std::int64_t in, std::int64_t out, std::int64_t kernel, std::int64_t stride,
                         std::int64_t padding) {
  if (padding < 0) padding = kernel / 2;
  return torch::nn::Conv2d(torch::nn::Conv2dOptions(in, out, kernel).stride(stride).padding(padding));
}

ResidualBlockImpl::ResidualBlockImpl(std::int64_t channels)
    : conv1_(register_module("conv1", conv2d(channels, channels, 3))),
      conv2_(register_module("conv2", conv2d(channels, channels, 3))) {}

torch::Tensor ResidualBlockImpl::forward(const torch::Tensor& x) {
  auto h = torch::relu(instance_norm(conv1_->forward(x)));
  h = instance_norm(conv2_->forward(h));
  return x + h;
}

AdaInResidualBlockImpl::AdaInResidualBlockImpl(std::int64_t channels)
    : channels_(channels),
      conv1_(register_module("conv1", conv2d(channels, channels, 3))),
      conv2_(register_module("conv2", conv2d(channels, channels, 3))) {}

torch::Tensor AdaInResidualBlockImpl::forward(const torch::Tensor& x, const torch::Tensor& params) {
  auto p = params.split(channels_, 1);
  auto h = torch::relu(adain(conv1_->forward(x), p[0], p[1]));
  h = adain(conv2_->forward(h), p[2], p[3]);
  return x + h;
}

}  // namespace hetseg
