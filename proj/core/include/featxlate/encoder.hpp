#pragma once

#include <torch/torch.h>

#include <array>
#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <string>
#include <vector>

namespace featxlate {

inline constexpr int kNumLevels = 5;

// One exported activation of the encoder (the post-ReLU output of conv_i_1).
struct LayerTap {
  int level = 0;
  std::int64_t channels = 0;
  std::int64_t spatial = 0;
  std::string name;

  bool operator==(const LayerTap&) const = default;
};

enum class ProfileKind { vgg19, toy };

struct EncoderProfile {
  ProfileKind kind = ProfileKind::toy;
  std::vector<LayerTap> taps;  // ascending by level, levels 1..5
  std::int64_t input_side = 0;
  std::string weight_source;   // weight file path, or "seed:<n>" for generated weights
  std::int64_t embedding_dim = 0;  // 0 when the profile carries no classifier head

  const LayerTap& tap(int level) const;
  std::vector<std::int64_t> channel_list() const;
  // Throws ShapeError when taps are unsorted, not halving, or the side is not a multiple of 16.
  void validate() const;
  std::string name() const { return kind == ProfileKind::vgg19 ? "vgg19" : "toy"; }
};

// Taps computed from an input side: channels per level, spatial = side / 2^(level-1).
std::vector<LayerTap> make_taps(const std::array<std::int64_t, kNumLevels>& channels, std::int64_t input_side,
                                const std::array<std::string, kNumLevels>& names);

EncoderProfile vgg19_profile(std::string weight_source = {}, bool with_head = true);

struct FeaturePyramid {
  std::map<int, torch::Tensor> levels;  // level -> (channels, spatial, spatial)
  std::string source_id;

  const torch::Tensor& at(int level) const;
};

// Per-channel mean/std applied to [0,1] RGB input before the first convolution.
inline constexpr std::array<float, 3> kImageMean = {0.485f, 0.456f, 0.406f};
inline constexpr std::array<float, 3> kImageStd = {0.229f, 0.224f, 0.225f};

// Frozen convolutional feature extractor with five taps. Immutable after
// construction; copies share the same weights.
class Encoder {
 public:
  // Weights in the layout written by tools/export_vgg19_weights.py
  // (torchvision names: features.<i>.weight/bias, classifier.{0,3}.weight/bias).
  static Encoder load_vgg19(const std::filesystem::path& weights, bool with_head = true);
  // Same topology with He-initialised weights; for shape tests and benchmarks.
  static Encoder random_vgg19(std::uint64_t seed, bool with_head = true);
  // One conv(3x3)+ReLU per level with a 2x2 max-pool between levels. When
  // embedding_dim > 0 a fixed linear head over the pooled level-5 map is added.
  static Encoder make_toy(std::uint64_t seed, const std::array<std::int64_t, kNumLevels>& channels,
                          std::int64_t input_side, std::int64_t embedding_dim = 0);

  const EncoderProfile& profile() const;
  bool has_head() const;

  // image: (3, side, side) RGB in [0, 1]. Raw (un-normalised) activations.
  FeaturePyramid extract_pyramid(const torch::Tensor& image, std::string source_id = {}) const;
  // images: (N, 3, side, side). Returns level -> (N, C, s, s) for the requested levels.
  std::map<int, torch::Tensor> extract_levels(const torch::Tensor& images, const std::vector<int>& levels) const;

  torch::Tensor extract_embedding(const torch::Tensor& image) const;
  // (N, 3, side, side) -> (N, embedding_dim)
  torch::Tensor extract_embeddings(const torch::Tensor& images) const;

  // Named weights, e.g. for hand-unrolled reference computations in tests.
  const std::map<std::string, torch::Tensor>& weights() const;

  struct Impl;  // opaque

 private:
  explicit Encoder(std::shared_ptr<const Impl> impl);
  std::shared_ptr<const Impl> impl_;
};

// Standardises [0,1] RGB with kImageMean/kImageStd; accepts (3,H,W) or (N,3,H,W).
torch::Tensor standardize_image(const torch::Tensor& image);

}  // namespace featxlate
