#include "featxlate/networks.hpp"

#include <algorithm>

#include <numeric>

#include "featxlate/archive.hpp"
#include "featxlate/error.hpp"

namespace featxlate {

namespace nn = torch::nn;

namespace {

std::string shape_str(torch::IntArrayRef sizes) {
  std::string s = "(";
  for (std::size_t i = 0; i < sizes.size(); ++i) s += (i ? "," : "") + std::to_string(sizes[i]);
  return s + ")";
}

void check_input(const torch::Tensor& x, std::int64_t channels, std::int64_t side, const std::string& what) {
  if (x.dim() != 4 || x.size(1) != channels || x.size(2) != side || x.size(3) != side) {
    throw ShapeError(what + ": expected (N," + std::to_string(channels) + "," + std::to_string(side) + "," +
                     std::to_string(side) + "), got " + shape_str(x.sizes()));
  }
}

std::int64_t strided_side(std::int64_t side, std::int64_t kernel, std::int64_t stride, std::int64_t pad) {
  return (side + 2 * pad - kernel) / stride + 1;
}

nn::Conv2d conv(std::int64_t in, std::int64_t out, std::int64_t k, std::int64_t stride, std::int64_t pad) {
  return nn::Conv2d(nn::Conv2dOptions(in, out, k).stride(stride).padding(pad));
}

nn::LeakyReLU lrelu() { return nn::LeakyReLU(nn::LeakyReLUOptions().negative_slope(kLeakySlope)); }

nn::GroupNorm gn(std::int64_t channels) { return nn::GroupNorm(nn::GroupNormOptions(group_count(channels), channels)); }

}  // namespace

std::int64_t group_count(std::int64_t channels) {
  for (std::int64_t g = std::min<std::int64_t>(32, channels); g > 1; --g) {
    if (channels % g == 0) return g;
  }
  return 1;
}

void init_weights(nn::Module& module) {
  torch::NoGradGuard no_grad;
  for (auto& m : module.modules(/*include_self=*/false)) {
    if (auto* c = m->as<nn::Conv2d>()) {
      c->weight.normal_(0.0, 0.02);
      if (c->bias.defined()) c->bias.zero_();
    } else if (auto* t = m->as<nn::ConvTranspose2d>()) {
      t->weight.normal_(0.0, 0.02);
      if (t->bias.defined()) t->bias.zero_();
    }
  }
}

torch::Tensor adain_modulate(const torch::Tensor& activations, const torch::Tensor& scale, const torch::Tensor& shift,
                             double eps) {
  if (activations.dim() != 4) throw ShapeError("adain_modulate expects (N,C,H,W) activations");
  const auto n = activations.size(0), c = activations.size(1);
  auto expand = [&](const torch::Tensor& p, const char* name) {
    if (p.dim() == 1 && p.size(0) == c) return p.view({1, c, 1, 1});
    if (p.dim() == 2 && p.size(0) == n && p.size(1) == c) return p.view({n, c, 1, 1});
    throw ShapeError(std::string("adain_modulate: ") + name + " must have length " + std::to_string(c) + ", got " +
                     shape_str(p.sizes()));
  };
  auto s = expand(scale, "scale");
  auto b = expand(shift, "shift");
  auto mean = activations.mean({2, 3}, /*keepdim=*/true);
  auto var = activations.var({2, 3}, /*unbiased=*/false, /*keepdim=*/true);
  return (activations - mean) / torch::sqrt(var + eps) * s + b;
}

// ---------------------------------------------------------------------------

DeepTranslatorImpl::DeepTranslatorImpl(std::int64_t channels, std::int64_t side) : channels_(channels), side_(side) {
  if (channels < 2 || channels % 2 != 0) throw ShapeError("deep translator needs an even channel count");
  const auto half = channels / 2;
  const auto s1 = strided_side(side, 3, 2, 1);
  const auto s2 = strided_side(s1, 3, 2, 1);
  // Output padding restores the exact encoder sides on the way back up.
  const auto op1 = s1 - (2 * s2 - 1);
  const auto op2 = side - (2 * s1 - 1);
  auto convT = [](std::int64_t in, std::int64_t out, std::int64_t op) {
    return nn::ConvTranspose2d(nn::ConvTranspose2dOptions(in, out, 3).stride(2).padding(1).output_padding(op));
  };
  body_ = register_module("body", nn::Sequential(
      conv(channels, channels, 3, 1, 1),
      conv(channels, half, 3, 2, 1), gn(half), nn::ReLU(),
      conv(half, channels, 3, 2, 1), gn(channels), nn::ReLU(),
      convT(channels, half, op1), gn(half), nn::ReLU(),
      convT(half, half, op2), gn(half), nn::ReLU(),
      conv(half, channels, 3, 1, 1), gn(channels), nn::ReLU(),
      conv(channels, channels, 3, 1, 1), nn::Tanh()));
  init_weights(*this);
}

torch::Tensor DeepTranslatorImpl::forward(const torch::Tensor& x) {
  check_input(x, channels_, side_, "deep translator input");
  return body_->forward(x);
}

// ---------------------------------------------------------------------------

AdaINControllerImpl::AdaINControllerImpl(std::int64_t in_channels, std::int64_t side, std::int64_t width,
                                         std::int64_t n_params, std::int64_t hidden)
    : n_params_(n_params) {
  convs_ = register_module("convs", nn::Sequential());
  std::int64_t ch = in_channels;
  std::int64_t s = side;
  while (s > 4) {
    convs_->push_back(conv(ch, width, 3, 2, 1));
    convs_->push_back(lrelu());
    ch = width;
    s = strided_side(s, 3, 2, 1);
    ++num_convs_;
  }
  fc1_ = register_module("fc1", nn::Linear(ch * s * s, hidden));
  fc2_ = register_module("fc2", nn::Linear(hidden, n_params));
  init_weights(*this);
}

torch::Tensor AdaINControllerImpl::forward(const torch::Tensor& x) {
  auto h = num_convs_ > 0 ? convs_->forward(x) : x;
  h = torch::leaky_relu(fc1_->forward(h.flatten(1)), kLeakySlope);
  return fc2_->forward(h);
}

// ---------------------------------------------------------------------------

ConditionalTranslatorImpl::ConditionalTranslatorImpl(const ConditionalTranslatorOptions& options)
    : options_(options) {
  const auto x = options.content_channels;
  if (x < 2 || x % 2 != 0) throw ShapeError("conditional translator needs an even content channel count");
  site_channels_ = {x, x, x / 2};
  n_adain_params_ = 2 * (x + x + x / 2);
  conv1_ = register_module("conv1", conv(x, x, 3, 1, 1));
  conv2_ = register_module("conv2", conv(x, x, 3, 1, 1));
  up_ = register_module("up", nn::ConvTranspose2d(nn::ConvTranspose2dOptions(x, x / 2, 4).stride(2).padding(1)));
  out_ = register_module("out", conv(x / 2, options.source_channels, 3, 1, 1));
  controller_ = register_module(
      "controller", AdaINController(options.source_channels, 2 * options.content_side, options.controller_width,
                                    n_adain_params_, options.controller_hidden));
  init_weights(*this);
}

torch::Tensor ConditionalTranslatorImpl::forward_content(const torch::Tensor& content, const torch::Tensor& params) {
  check_input(content, options_.content_channels, options_.content_side, "conditional translator content input");
  if (params.dim() != 2 || params.size(0) != content.size(0) || params.size(1) != n_adain_params_) {
    throw ShapeError("AdaIN parameters must be (N," + std::to_string(n_adain_params_) + "), got " +
                     shape_str(params.sizes()));
  }
  std::int64_t offset = 0;
  auto next = [&](std::int64_t c) {
    auto scale = params.narrow(1, offset, c);
    auto shift = params.narrow(1, offset + c, c);
    offset += 2 * c;
    return std::make_pair(scale, shift);
  };
  auto h = content;
  auto [s1, b1] = next(site_channels_[0]);
  h = torch::leaky_relu(adain_modulate(conv1_->forward(h), s1, b1), kLeakySlope);
  auto [s2, b2] = next(site_channels_[1]);
  h = torch::leaky_relu(adain_modulate(conv2_->forward(h), s2, b2), kLeakySlope);
  auto [s3, b3] = next(site_channels_[2]);
  h = torch::leaky_relu(adain_modulate(up_->forward(h), s3, b3), kLeakySlope);
  return torch::tanh(out_->forward(h));
}

torch::Tensor ConditionalTranslatorImpl::forward(const torch::Tensor& source, const torch::Tensor& content) {
  check_input(source, options_.source_channels, 2 * options_.content_side, "conditional translator source input");
  check_input(content, options_.content_channels, options_.content_side, "conditional translator content input");
  if (source.size(0) != content.size(0)) throw ShapeError("source and content batch sizes differ");
  return forward_content(content, controller_->forward(source));
}

// ---------------------------------------------------------------------------

CriticImpl::CriticImpl(std::int64_t in_channels, std::int64_t side, std::int64_t width_cap)
    : in_channels_(in_channels), side_(side) {
  convs_ = register_module("convs", nn::Sequential());
  std::int64_t ch = in_channels;
  std::int64_t s = side;
  for (int i = 0; i < 4; ++i) {
    const auto out = std::min(2 * ch, width_cap);
    // padding 2 keeps every side >= 2 after four halvings (14 -> 8 -> 5 -> 3 -> 2)
    convs_->push_back(conv(ch, out, 4, 2, 2));
    convs_->push_back(lrelu());
    ch = out;
    s = strided_side(s, 4, 2, 2);
  }
  head_ = register_module("head", nn::Linear(ch * s * s, 1));
  init_weights(*this);
}

torch::Tensor CriticImpl::forward(const torch::Tensor& x) {
  check_input(x, in_channels_, side_, "critic input");
  return head_->forward(convs_->forward(x).flatten(1)).squeeze(1);
}

// ---------------------------------------------------------------------------

InverterImpl::InverterImpl(std::int64_t in_channels, std::int64_t side, std::int64_t image_side)
    : in_channels_(in_channels), side_(side), image_side_(image_side) {
  body_ = register_module("body", nn::Sequential());
  for (int i = 0; i < 3; ++i) {
    body_->push_back(conv(in_channels, in_channels, 3, 1, 1));
    body_->push_back(lrelu());
  }
  std::int64_t ch = in_channels;
  std::int64_t s = side;
  while (s < image_side) {
    const auto out = std::max<std::int64_t>(ch / 2, 1);
    body_->push_back(nn::ConvTranspose2d(nn::ConvTranspose2dOptions(ch, out, 4).stride(2).padding(1)));
    body_->push_back(lrelu());
    ch = out;
    s *= 2;
    ++num_up_;
  }
  if (s != image_side) {
    throw ShapeError("inverter: feature side " + std::to_string(side) + " does not reach image side " +
                     std::to_string(image_side) + " by doubling");
  }
  body_->push_back(conv(ch, 3, 3, 1, 1));
  body_->push_back(nn::Tanh());
  init_weights(*this);
}

torch::Tensor InverterImpl::forward(const torch::Tensor& features) {
  check_input(features, in_channels_, side_, "inverter input");
  return body_->forward(features);
}

// ---------------------------------------------------------------------------

PatchDiscriminatorImpl::PatchDiscriminatorImpl(std::int64_t base_width) {
  body_ = register_module("body", nn::Sequential());
  std::int64_t ch = 3;
  for (int i = 0; i < 4; ++i) {
    const auto out = base_width << i;
    body_->push_back(nn::Conv2d(nn::Conv2dOptions(ch, out, 4).stride(2).padding(1).bias(i == 0)));
    if (i > 0) body_->push_back(nn::BatchNorm2d(out));
    body_->push_back(lrelu());
    ch = out;
  }
  body_->push_back(conv(ch, 1, 3, 1, 1));
  init_weights(*this);
}

torch::Tensor PatchDiscriminatorImpl::forward(const torch::Tensor& image) {
  if (image.dim() != 4 || image.size(1) != 3) {
    throw ShapeError("patch discriminator expects (N,3,H,W), got " + shape_str(image.sizes()));
  }
  return body_->forward(image);
}

// ---------------------------------------------------------------------------

bool has_normalization(const nn::Module& module) {
  for (const auto& m : module.modules(/*include_self=*/false)) {
    if (m->as<nn::BatchNorm2d>() || m->as<nn::GroupNorm>() || m->as<nn::InstanceNorm2d>() ||
        m->as<nn::LayerNorm>()) {
      return true;
    }
  }
  return false;
}

std::int64_t parameter_count(const nn::Module& module) {
  std::int64_t n = 0;
  for (const auto& p : module.parameters()) n += p.numel();
  return n;
}

std::string parameter_key(const std::string& prefix, const std::string& dotted_name) {
  const auto dot = dotted_name.rfind('.');
  std::string layer = dot == std::string::npos ? "_" : dotted_name.substr(0, dot);
  std::replace(layer.begin(), layer.end(), '.', '/');
  const std::string param = dot == std::string::npos ? dotted_name : dotted_name.substr(dot + 1);
  return prefix + "/" + layer + "/" + param;
}

void export_parameters(const nn::Module& module, const std::string& prefix, TensorArchive& archive) {
  for (const auto& item : module.named_parameters()) {
    archive.tensors[parameter_key(prefix, item.key())] = item.value().detach().clone();
  }
  for (const auto& item : module.named_buffers()) {
    archive.tensors[parameter_key(prefix, item.key())] = item.value().detach().clone();
  }
}

void import_parameters(nn::Module& module, const std::string& prefix, const TensorArchive& archive) {
  torch::NoGradGuard no_grad;
  auto copy = [&](const std::string& name, torch::Tensor& target) {
    const auto key = parameter_key(prefix, name);
    auto it = archive.tensors.find(key);
    if (it == archive.tensors.end()) throw IntegrityError("checkpoint is missing '" + key + "'");
    if (it->second.sizes() != target.sizes()) {
      throw IntegrityError("checkpoint entry '" + key + "' has shape " + shape_str(it->second.sizes()) +
                           ", network expects " + shape_str(target.sizes()));
    }
    target.copy_(it->second);
  };
  for (auto& item : module.named_parameters()) copy(item.key(), item.value());
  for (auto& item : module.named_buffers()) copy(item.key(), item.value());
}

void set_requires_grad(nn::Module& module, bool requires_grad) {
  for (auto& p : module.parameters()) p.set_requires_grad(requires_grad);
}

}  // namespace featxlate

#include "featxlate/encoder.hpp"

namespace featxlate {

NetworkFactory::NetworkFactory(const EncoderProfile& profile) {
  profile.validate();
  for (const auto& t : profile.taps) {
    channels.push_back(t.channels);
    sides.push_back(t.spatial);
  }
  image_side = profile.input_side;
  controller_width = channels[kNumLevels - 1];
  critic_width_cap = *std::max_element(channels.begin(), channels.end());
  patch_base_width = channels[0];
}

DeepTranslator NetworkFactory::deep_translator() const {
  return DeepTranslator(channels[kNumLevels - 1], sides[kNumLevels - 1]);
}

ConditionalTranslator NetworkFactory::conditional_translator(int level) const {
  if (level < 1 || level >= kNumLevels) throw ShapeError("conditional translators exist for levels 1..4");
  ConditionalTranslatorOptions o;
  o.content_channels = channels[level];
  o.content_side = sides[level];
  o.source_channels = channels[level - 1];
  o.controller_width = controller_width;
  return ConditionalTranslator(o);
}

Critic NetworkFactory::critic(int level) const {
  return Critic(channels[level - 1], sides[level - 1], critic_width_cap);
}

Inverter NetworkFactory::inverter(int level) const {
  return Inverter(channels[level - 1], sides[level - 1], image_side);
}

PatchDiscriminator NetworkFactory::patch_discriminator() const { return PatchDiscriminator(patch_base_width); }

}  // namespace featxlate
