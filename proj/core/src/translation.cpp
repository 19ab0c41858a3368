#include "hetseg/translation.hpp"

#include <sstream>

#include "hetseg/error.hpp"

namespace hetseg {

namespace {

std::string describe(c10::IntArrayRef shape) {
  std::ostringstream out;
  out << shape;
  return out.str();
}

const char* domain_name(Domain d) { return d == Domain::source ? "source" : "target"; }

}  // namespace

void NetConfig::validate() const {
  std::vector<std::string> problems;
  if (base_width < 1) problems.emplace_back("translation_net.base_width: must be >= 1");
  if (downsamplings < 1) problems.emplace_back("translation_net.downsamplings: must be >= 1");
  if (residual_blocks < 0) problems.emplace_back("translation_net.residual_blocks: must be >= 0");
  if (style_dim < 1) problems.emplace_back("translation_net.style_dim: must be >= 1");
  if (mlp_hidden < 1) problems.emplace_back("translation_net.mlp_hidden: must be >= 1");
  if (disc_width < 1) problems.emplace_back("translation_net.disc_width: must be >= 1");
  if (disc_downsamplings < 1) problems.emplace_back("translation_net.disc_downsamplings: must be >= 1");
  if (!problems.empty()) throw ConfigError(std::move(problems));
}

nlohmann::json to_json(const NetConfig& cfg) {
  return {{"base_width", cfg.base_width},
          {"downsamplings", cfg.downsamplings},
          {"residual_blocks", cfg.residual_blocks},
          {"style_dim", cfg.style_dim},
          {"mlp_hidden", cfg.mlp_hidden},
          {"disc_width", cfg.disc_width},
          {"disc_downsamplings", cfg.disc_downsamplings}};
}

NetConfig net_config_from_json(const nlohmann::json& j) {
  NetConfig cfg;
  cfg.base_width = j.value("base_width", cfg.base_width);
  cfg.downsamplings = j.value("downsamplings", cfg.downsamplings);
  cfg.residual_blocks = j.value("residual_blocks", cfg.residual_blocks);
  cfg.style_dim = j.value("style_dim", cfg.style_dim);
  cfg.mlp_hidden = j.value("mlp_hidden", cfg.mlp_hidden);
  cfg.disc_width = j.value("disc_width", cfg.disc_width);
  cfg.disc_downsamplings = j.value("disc_downsamplings", cfg.disc_downsamplings);
  return cfg;
}

StyleCode sample_style_prior(torch::Generator& rng, std::int64_t n, std::int64_t dim, torch::Dtype dtype) {
  return {torch::randn({n, dim}, rng, torch::TensorOptions().dtype(dtype))};
}

ContentEncoderImpl::ContentEncoderImpl(std::int64_t in_channels, const NetConfig& cfg) {
  stem_ = register_module("stem", conv2d(in_channels, cfg.base_width, 5));
  down_ = register_module("down", torch::nn::ModuleList());
  std::int64_t width = cfg.base_width;
  for (std::int64_t i = 0; i < cfg.downsamplings; ++i) {
    down_->push_back(conv2d(width, width * 2, 4, 2, 1));
    width *= 2;
  }
  res_ = register_module("res", torch::nn::ModuleList());
  for (std::int64_t i = 0; i < cfg.residual_blocks; ++i) res_->push_back(ResidualBlock(width));
}

torch::Tensor ContentEncoderImpl::forward(const torch::Tensor& x) {
  auto h = torch::relu(instance_norm(stem_->forward(x)));
  for (const auto& m : *down_) h = torch::relu(instance_norm(m->as<torch::nn::Conv2d>()->forward(h)));
  for (const auto& m : *res_) h = m->as<ResidualBlock>()->forward(h);
  return h;
}

StyleEncoderImpl::StyleEncoderImpl(std::int64_t in_channels, const NetConfig& cfg) {
  convs_ = torch::nn::Sequential();
  convs_->push_back(conv2d(in_channels, cfg.base_width, 5));
  convs_->push_back(torch::nn::ReLU());
  std::int64_t width = cfg.base_width;
  for (std::int64_t i = 0; i < cfg.downsamplings; ++i) {
    convs_->push_back(conv2d(width, width * 2, 4, 2, 1));
    convs_->push_back(torch::nn::ReLU());
    width *= 2;
  }
  register_module("convs", convs_);
  head_ = register_module("head", torch::nn::Linear(width, cfg.style_dim));
}

torch::Tensor StyleEncoderImpl::forward(const torch::Tensor& x) {
  auto h = convs_->forward(x).mean({2, 3});
  return head_->forward(h);
}

DecoderImpl::DecoderImpl(std::int64_t out_channels, const NetConfig& cfg)
    : content_channels_(cfg.content_channels()) {
  const auto per_block = AdaInResidualBlockImpl::kParamsPerChannel * content_channels_;
  const auto total = per_block * cfg.residual_blocks;
  mapper_ = torch::nn::Sequential(torch::nn::Linear(cfg.style_dim, cfg.mlp_hidden), torch::nn::ReLU(),
                                  torch::nn::Linear(cfg.mlp_hidden, std::max<std::int64_t>(total, 1)));
  register_module("mapper", mapper_);
  res_ = register_module("res", torch::nn::ModuleList());
  for (std::int64_t i = 0; i < cfg.residual_blocks; ++i) res_->push_back(AdaInResidualBlock(content_channels_));
  up_ = register_module("up", torch::nn::ModuleList());
  std::int64_t width = content_channels_;
  for (std::int64_t i = 0; i < cfg.downsamplings; ++i) {
    up_->push_back(conv2d(width, width / 2, 3));
    width /= 2;
  }
  out_ = register_module("out", conv2d(width, out_channels, 5));

  // The mapper predicts deviations of the AdaIN scale from 1; shifts are predicted directly.
  auto offset = torch::zeros({std::max<std::int64_t>(total, 1)});
  for (std::int64_t b = 0; b < cfg.residual_blocks; ++b) {
    offset.slice(0, b * per_block, b * per_block + content_channels_).fill_(1.0);
    offset.slice(0, b * per_block + 2 * content_channels_, b * per_block + 3 * content_channels_).fill_(1.0);
  }
  gamma_offset_ = register_buffer("gamma_offset", offset);
}

torch::Tensor DecoderImpl::forward(const torch::Tensor& content, const torch::Tensor& style) {
  auto params = mapper_->forward(style) + gamma_offset_;
  const auto per_block = AdaInResidualBlockImpl::kParamsPerChannel * content_channels_;
  auto h = content;
  std::int64_t b = 0;
  for (const auto& m : *res_) {
    h = m->as<AdaInResidualBlock>()->forward(h, params.slice(1, b * per_block, (b + 1) * per_block));
    ++b;
  }
  for (const auto& m : *up_) {
    h = torch::nn::functional::interpolate(
        h, torch::nn::functional::InterpolateFuncOptions().scale_factor(std::vector<double>{2.0, 2.0}).mode(
               torch::kNearest));
    h = torch::relu(m->as<torch::nn::Conv2d>()->forward(h));
  }
  return torch::tanh(out_->forward(h));
}

DiscriminatorImpl::DiscriminatorImpl(std::int64_t in_channels, const NetConfig& cfg) {
  body_ = torch::nn::Sequential();
  std::int64_t in = in_channels;
  std::int64_t width = cfg.disc_width;
  for (std::int64_t i = 0; i < cfg.disc_downsamplings; ++i) {
    body_->push_back(conv2d(in, width, 4, 2, 1));
    body_->push_back(torch::nn::LeakyReLU(torch::nn::LeakyReLUOptions().negative_slope(0.2)));
    in = width;
    width *= 2;
  }
  body_->push_back(conv2d(in, 1, 1, 1, 0));
  register_module("body", body_);
}

torch::Tensor DiscriminatorImpl::logits(const torch::Tensor& x) { return body_->forward(x); }

TranslatorImpl::TranslatorImpl(DomainSpec source, DomainSpec target, NetConfig cfg)
    : source_(std::move(source)), target_(std::move(target)), cfg_(cfg) {
  source_.validate();
  target_.validate();
  cfg_.validate();
  if (source_.height != target_.height || source_.width != target_.width) {
    throw ConfigError("translator: source and target must share height and width");
  }
  const auto f = std::max(cfg_.downsampling_factor(), cfg_.patch_factor());
  if (source_.height % f != 0 || source_.width % f != 0) {
    throw ConfigError("translator: height and width must be divisible by " + std::to_string(f));
  }
  enc_c_s_ = register_module("enc_c_s", ContentEncoder(source_.channels, cfg_));
  enc_c_t_ = register_module("enc_c_t", ContentEncoder(target_.channels, cfg_));
  enc_s_s_ = register_module("enc_s_s", StyleEncoder(source_.channels, cfg_));
  enc_s_t_ = register_module("enc_s_t", StyleEncoder(target_.channels, cfg_));
  dec_s_ = register_module("dec_s", Decoder(source_.channels, cfg_));
  dec_t_ = register_module("dec_t", Decoder(target_.channels, cfg_));
  dis_s_ = register_module("dis_s", Discriminator(source_.channels, cfg_));
  dis_t_ = register_module("dis_t", Discriminator(target_.channels, cfg_));
}

torch::Tensor TranslatorImpl::checked_image(const torch::Tensor& x, Domain d) const {
  const auto& s = spec(d);
  auto batched = x.dim() == 3 ? x.unsqueeze(0) : x;
  if (batched.dim() != 4 || batched.size(1) != s.channels || batched.size(2) != s.height ||
      batched.size(3) != s.width) {
    throw ShapeError(std::string(domain_name(d)) + " image of shape " + describe(x.sizes()) + " does not match [" +
                     std::to_string(s.channels) + "," + std::to_string(s.height) + "," + std::to_string(s.width) +
                     "]");
  }
  return batched;
}

void TranslatorImpl::check_content(const ContentCode& c) const {
  const auto f = cfg_.downsampling_factor();
  const auto& v = c.value;
  if (v.dim() != 4 || v.size(1) != cfg_.content_channels() || v.size(2) != source_.height / f ||
      v.size(3) != source_.width / f) {
    throw ShapeError("content code of shape " + describe(v.sizes()) + " does not match the network");
  }
}

void TranslatorImpl::check_style(const StyleCode& s, std::int64_t batch) const {
  const auto& v = s.value;
  if (v.dim() != 2 || v.size(1) != cfg_.style_dim || (v.size(0) != batch && v.size(0) != 1)) {
    throw ShapeError("style code of shape " + describe(v.sizes()) + " does not match batch " + std::to_string(batch) +
                     " and style dimension " + std::to_string(cfg_.style_dim));
  }
}

ContentCode TranslatorImpl::encode_content(const torch::Tensor& x, Domain d) {
  return {content_encoder(d)->forward(checked_image(x, d))};
}

StyleCode TranslatorImpl::encode_style(const torch::Tensor& x, Domain d) {
  return {style_encoder(d)->forward(checked_image(x, d))};
}

torch::Tensor TranslatorImpl::decode(const ContentCode& c, const StyleCode& s, Domain d) {
  check_content(c);
  const auto batch = c.value.size(0);
  check_style(s, batch);
  auto style = s.value.size(0) == batch ? s.value : s.value.expand({batch, s.value.size(1)});
  return decoder(d)->forward(c.value, style);
}

torch::Tensor TranslatorImpl::translate(const torch::Tensor& x, Direction dir, const StyleCode& s) {
  return decode(encode_content(x, input_domain(dir)), s, output_domain(dir));
}

torch::Tensor TranslatorImpl::cycle(const torch::Tensor& x, Domain d, const StyleCode& s_other) {
  auto batched = checked_image(x, d);
  auto own_style = encode_style(batched, d);
  auto across = decode(encode_content(batched, d), s_other, other(d));
  return decode(encode_content(across, other(d)), own_style, d);
}

torch::Tensor TranslatorImpl::discriminate_logits(const torch::Tensor& x, Domain d) {
  return discriminator(d)->logits(checked_image(x, d));
}

torch::Tensor TranslatorImpl::discriminate(const torch::Tensor& x, Domain d) {
  return torch::sigmoid(discriminate_logits(x, d));
}

std::vector<torch::Tensor> TranslatorImpl::generator_parameters() const {
  std::vector<torch::Tensor> out;
  for (const auto* m : std::initializer_list<const torch::nn::Module*>{
           enc_c_s_.get(), enc_c_t_.get(), enc_s_s_.get(), enc_s_t_.get(), dec_s_.get(), dec_t_.get()}) {
    auto p = m->parameters();
    out.insert(out.end(), p.begin(), p.end());
  }
  return out;
}

std::vector<torch::Tensor> TranslatorImpl::discriminator_parameters() const {
  auto out = dis_s_->parameters();
  auto t = dis_t_->parameters();
  out.insert(out.end(), t.begin(), t.end());
  return out;
}

}  // namespace hetseg
