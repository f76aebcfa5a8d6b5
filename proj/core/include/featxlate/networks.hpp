#pragma once

#include <torch/torch.h>

#include <cstdint>
#include <functional>
#include <string>

namespace featxlate {

struct TensorArchive;

inline constexpr double kAdaINEpsilon = 1e-5;
inline constexpr double kLeakySlope = 0.2;

// Largest divisor of `channels` not above 32 (min(32, channels) whenever that divides).
std::int64_t group_count(std::int64_t channels);

// Conv / transposed conv weights ~ N(0, 0.02), biases zero. Linear layers keep
// libtorch's fan-in uniform initialisation.
void init_weights(torch::nn::Module& module);

// Instance-normalise each (sample, channel) plane over its spatial positions,
// then scale and shift per channel. scale/shift are (C) or (N, C).
torch::Tensor adain_modulate(const torch::Tensor& activations, const torch::Tensor& scale, const torch::Tensor& shift,
                             double eps = kAdaINEpsilon);

// Unconditional translator for the deepest level: a small strided
// encoder-decoder with group norm and a tanh output. Width C is the tap's
// channel count (512 for VGG); the bottleneck uses C/2.
class DeepTranslatorImpl : public torch::nn::Module {
 public:
  DeepTranslatorImpl(std::int64_t channels, std::int64_t side);
  torch::Tensor forward(const torch::Tensor& x);

  std::int64_t channels() const { return channels_; }
  std::int64_t side() const { return side_; }

 private:
  std::int64_t channels_;
  std::int64_t side_;
  torch::nn::Sequential body_{nullptr};
};
TORCH_MODULE(DeepTranslator);

// Maps current-level source features to AdaIN parameters: stride-2 convs
// until the spatial side is at most 4, then two linear layers.
class AdaINControllerImpl : public torch::nn::Module {
 public:
  AdaINControllerImpl(std::int64_t in_channels, std::int64_t side, std::int64_t width, std::int64_t n_params,
                      std::int64_t hidden = 1000);
  torch::Tensor forward(const torch::Tensor& x);

  std::int64_t num_convs() const { return num_convs_; }
  std::int64_t n_params() const { return n_params_; }

 private:
  std::int64_t num_convs_ = 0;
  std::int64_t n_params_;
  torch::nn::Sequential convs_{nullptr};
  torch::nn::Linear fc1_{nullptr};
  torch::nn::Linear fc2_{nullptr};
};
TORCH_MODULE(AdaINController);

struct ConditionalTranslatorOptions {
  std::int64_t content_channels = 512;  // channels of the deeper (translated) level
  std::int64_t content_side = 14;
  std::int64_t source_channels = 512;   // channels of the current level
  std::int64_t controller_width = 512;
  std::int64_t controller_hidden = 1000;
};

// Level-i translator. The content path upsamples the translated deeper level
// (three AdaIN-modulated convs, the last a 2x transposed conv); the controller
// predicts the AdaIN parameters from the current-level source features.
// Output channels follow the level-i tap.
class ConditionalTranslatorImpl : public torch::nn::Module {
 public:
  explicit ConditionalTranslatorImpl(const ConditionalTranslatorOptions& options);

  // source: (N, C_i, 2s, 2s), content: (N, C_{i+1}, s, s) -> (N, C_i, 2s, 2s)
  torch::Tensor forward(const torch::Tensor& source, const torch::Tensor& content);
  // Content path with explicit AdaIN parameters, laid out per site as [scale(c), shift(c)].
  torch::Tensor forward_content(const torch::Tensor& content, const torch::Tensor& adain_params);

  std::int64_t n_adain_params() const { return n_adain_params_; }
  std::vector<std::int64_t> adain_site_channels() const { return site_channels_; }
  const ConditionalTranslatorOptions& options() const { return options_; }
  AdaINController& controller() { return controller_; }

 private:
  ConditionalTranslatorOptions options_;
  std::vector<std::int64_t> site_channels_;
  std::int64_t n_adain_params_ = 0;
  torch::nn::Conv2d conv1_{nullptr};
  torch::nn::Conv2d conv2_{nullptr};
  torch::nn::ConvTranspose2d up_{nullptr};
  torch::nn::Conv2d out_{nullptr};
  AdaINController controller_{nullptr};
};
TORCH_MODULE(ConditionalTranslator);

// WGAN-GP critic on feature maps: four k4/s2 convs with LeakyReLU(0.2), no
// normalisation, then a linear map to one scalar per sample.
class CriticImpl : public torch::nn::Module {
 public:
  CriticImpl(std::int64_t in_channels, std::int64_t side, std::int64_t width_cap = 512);
  torch::Tensor forward(const torch::Tensor& x);  // (N)

  torch::nn::Linear& head() { return head_; }

 private:
  std::int64_t in_channels_;
  std::int64_t side_;
  torch::nn::Sequential convs_{nullptr};
  torch::nn::Linear head_{nullptr};
};
TORCH_MODULE(Critic);

// Feature-inversion decoder: three non-strided convs at the input width,
// transposed convs doubling resolution (halving channels) up to the image
// side, then conv to RGB and tanh. LeakyReLU(0.2), no normalisation.
class InverterImpl : public torch::nn::Module {
 public:
  InverterImpl(std::int64_t in_channels, std::int64_t side, std::int64_t image_side);
  torch::Tensor forward(const torch::Tensor& features);

  std::int64_t num_upsampling() const { return num_up_; }
  std::int64_t in_channels() const { return in_channels_; }
  std::int64_t side() const { return side_; }

 private:
  std::int64_t in_channels_;
  std::int64_t side_;
  std::int64_t image_side_;
  std::int64_t num_up_ = 0;
  torch::nn::Sequential body_{nullptr};
};
TORCH_MODULE(Inverter);

// Patch discriminator for inverter training: four stride-2 convs with batch
// norm on all but the first, LeakyReLU(0.2), and a 1-channel patch head.
class PatchDiscriminatorImpl : public torch::nn::Module {
 public:
  explicit PatchDiscriminatorImpl(std::int64_t base_width = 64);
  torch::Tensor forward(const torch::Tensor& image);

  const torch::nn::Sequential& body() const { return body_; }

 private:
  torch::nn::Sequential body_{nullptr};
};
TORCH_MODULE(PatchDiscriminator);

// True when any submodule is a batch/group/instance/layer norm.
bool has_normalization(const torch::nn::Module& module);
std::int64_t parameter_count(const torch::nn::Module& module);

// Checkpoint keys: "<prefix>/<module path>/<param name>", prefix being
// "<stage>/<network>". Buffers (batch-norm running stats) are included.
std::string parameter_key(const std::string& prefix, const std::string& dotted_name);
void export_parameters(const torch::nn::Module& module, const std::string& prefix, TensorArchive& archive);
// Strict: every parameter and buffer must be present with a matching shape.
void import_parameters(torch::nn::Module& module, const std::string& prefix, const TensorArchive& archive);

void set_requires_grad(torch::nn::Module& module, bool requires_grad);

}  // namespace featxlate

namespace featxlate {

struct EncoderProfile;

// Builds every network family with the widths implied by an encoder profile.
// For the VGG profile: controller width 512, critic width cap 512, patch
// discriminator base width 64.
struct NetworkFactory {
  explicit NetworkFactory(const EncoderProfile& profile);

  DeepTranslator deep_translator() const;
  ConditionalTranslator conditional_translator(int level) const;  // level 1..4
  Critic critic(int level) const;
  Inverter inverter(int level) const;
  PatchDiscriminator patch_discriminator() const;

  std::vector<std::int64_t> channels;  // index level-1
  std::vector<std::int64_t> sides;
  std::int64_t image_side = 0;
  std::int64_t controller_width = 0;
  std::int64_t critic_width_cap = 0;
  std::int64_t patch_base_width = 0;
};

}  // namespace featxlate
