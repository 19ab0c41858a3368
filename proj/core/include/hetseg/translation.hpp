#pragma once

#include <torch/torch.h>

#include <nlohmann/json.hpp>

#include "hetseg/domain.hpp"
#include "hetseg/layers.hpp"

namespace hetseg {

enum class Domain { source, target };
enum class Direction { source_to_target, target_to_source };

constexpr Domain other(Domain d) { return d == Domain::source ? Domain::target : Domain::source; }
constexpr Domain input_domain(Direction d) {
  return d == Direction::source_to_target ? Domain::source : Domain::target;
}
constexpr Domain output_domain(Direction d) { return other(input_domain(d)); }

/// Architecture of the translation networks. Widths are presets, not fixed facts.
struct NetConfig {
  std::int64_t base_width = 8;
  std::int64_t downsamplings = 2;
  std::int64_t residual_blocks = 2;
  std::int64_t style_dim = 8;
  std::int64_t mlp_hidden = 32;
  std::int64_t disc_width = 16;
  std::int64_t disc_downsamplings = 3;

  std::int64_t content_channels() const { return base_width << downsamplings; }
  std::int64_t downsampling_factor() const { return std::int64_t{1} << downsamplings; }
  std::int64_t patch_factor() const { return std::int64_t{1} << disc_downsamplings; }
  void validate() const;
};

nlohmann::json to_json(const NetConfig& cfg);
NetConfig net_config_from_json(const nlohmann::json& j);

/// Domain-invariant spatial latent, [N, C_c, H/f, W/f].
struct ContentCode {
  torch::Tensor value;
};

/// Domain-specific low-dimensional latent, [N, d_s].
struct StyleCode {
  torch::Tensor value;
};

/// i.i.d. standard normal style codes, [n, dim].
StyleCode sample_style_prior(torch::Generator& rng, std::int64_t n, std::int64_t dim,
                             torch::Dtype dtype = torch::kFloat32);

/// Convolutions, downsampling and residual blocks, each followed by instance normalization.
class ContentEncoderImpl : public torch::nn::Module {
 public:
  ContentEncoderImpl(std::int64_t in_channels, const NetConfig& cfg);
  torch::Tensor forward(const torch::Tensor& x);

 private:
  torch::nn::Conv2d stem_{nullptr};
  torch::nn::ModuleList down_{nullptr};
  torch::nn::ModuleList res_{nullptr};
};
TORCH_MODULE(ContentEncoder);

/// Strided convolutions, global average pooling and a fully connected head.
class StyleEncoderImpl : public torch::nn::Module {
 public:
  StyleEncoderImpl(std::int64_t in_channels, const NetConfig& cfg);
  torch::Tensor forward(const torch::Tensor& x);

 private:
  torch::nn::Sequential convs_{nullptr};
  torch::nn::Linear head_{nullptr};
};
TORCH_MODULE(StyleEncoder);

/// AdaIN residual blocks, then nearest upsampling + convolution stages, then a tanh output.
/// A one-hidden-layer MLP maps the style code onto every AdaIN scale and shift.
class DecoderImpl : public torch::nn::Module {
 public:
  DecoderImpl(std::int64_t out_channels, const NetConfig& cfg);
  torch::Tensor forward(const torch::Tensor& content, const torch::Tensor& style);

 private:
  std::int64_t content_channels_;
  torch::nn::Sequential mapper_{nullptr};
  torch::nn::ModuleList res_{nullptr};
  torch::nn::ModuleList up_{nullptr};
  torch::nn::Conv2d out_{nullptr};
  torch::Tensor gamma_offset_;
};
TORCH_MODULE(Decoder);

/// Patch discriminator. `logits` is pre-squashing; `forward` returns probabilities in (0,1).
class DiscriminatorImpl : public torch::nn::Module {
 public:
  DiscriminatorImpl(std::int64_t in_channels, const NetConfig& cfg);
  torch::Tensor logits(const torch::Tensor& x);
  torch::Tensor forward(const torch::Tensor& x) { return torch::sigmoid(logits(x)); }

 private:
  torch::nn::Sequential body_{nullptr};
};
TORCH_MODULE(Discriminator);

/// The full stochastic translation model: per-domain content encoder, style encoder, decoder
/// and discriminator. Both content encoders emit the same content shape.
///
/// All entry points take batched [N,C,H,W] input; a single [C,H,W] image is promoted.
class TranslatorImpl : public torch::nn::Module {
 public:
  TranslatorImpl(DomainSpec source, DomainSpec target, NetConfig cfg);

  const NetConfig& config() const noexcept { return cfg_; }
  const DomainSpec& spec(Domain d) const noexcept { return d == Domain::source ? source_ : target_; }

  ContentCode encode_content(const torch::Tensor& x, Domain d);
  StyleCode encode_style(const torch::Tensor& x, Domain d);
  torch::Tensor decode(const ContentCode& c, const StyleCode& s, Domain d);
  /// decode(encode_content(x), s) into the other domain.
  torch::Tensor translate(const torch::Tensor& x, Direction dir, const StyleCode& s);
  /// x -> other domain (style `s_other`) -> back, decoded with the input's own style code.
  torch::Tensor cycle(const torch::Tensor& x, Domain d, const StyleCode& s_other);
  torch::Tensor discriminate(const torch::Tensor& x, Domain d);
  torch::Tensor discriminate_logits(const torch::Tensor& x, Domain d);

  std::vector<torch::Tensor> generator_parameters() const;
  std::vector<torch::Tensor> discriminator_parameters() const;

  ContentEncoder content_encoder(Domain d) const { return d == Domain::source ? enc_c_s_ : enc_c_t_; }
  StyleEncoder style_encoder(Domain d) const { return d == Domain::source ? enc_s_s_ : enc_s_t_; }
  Decoder decoder(Domain d) const { return d == Domain::source ? dec_s_ : dec_t_; }
  Discriminator discriminator(Domain d) const { return d == Domain::source ? dis_s_ : dis_t_; }

 private:
  torch::Tensor checked_image(const torch::Tensor& x, Domain d) const;
  void check_content(const ContentCode& c) const;
  void check_style(const StyleCode& s, std::int64_t batch) const;

  DomainSpec source_, target_;
  NetConfig cfg_;
  ContentEncoder enc_c_s_{nullptr}, enc_c_t_{nullptr};
  StyleEncoder enc_s_s_{nullptr}, enc_s_t_{nullptr};
  Decoder dec_s_{nullptr}, dec_t_{nullptr};
  Discriminator dis_s_{nullptr}, dis_t_{nullptr};
};
TORCH_MODULE(Translator);

}  // namespace hetseg
