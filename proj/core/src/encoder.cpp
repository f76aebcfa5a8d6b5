#include "featxlate/encoder.hpp"

#include <algorithm>
#include <sstream>

#include "featxlate/archive.hpp"
#include "featxlate/error.hpp"

namespace featxlate {

namespace F = torch::nn::functional;

namespace {

struct ConvRef {
  std::string weight;
  std::string bias;
  std::int64_t in = 0;
  std::int64_t out = 0;
};

struct LinearRef {
  std::string weight;
  std::string bias;
  std::int64_t in = 0;
  std::int64_t out = 0;
  bool relu = true;
};

// VGG-19 "features" indices of each conv, grouped by pooling stage.
const std::array<std::vector<int>, kNumLevels> kVggConvIndex = {{
    {0, 2},
    {5, 7},
    {10, 12, 14, 16},
    {19, 21, 23, 25},
    {28, 30, 32, 34},
}};
constexpr std::array<std::int64_t, kNumLevels> kVggChannels = {64, 128, 256, 512, 512};
constexpr std::int64_t kVggSide = 224;
constexpr std::int64_t kVggEmbedding = 4096;

std::string shape_str(torch::IntArrayRef sizes) {
  std::ostringstream os;
  os << "(";
  for (std::size_t i = 0; i < sizes.size(); ++i) os << (i ? "," : "") << sizes[i];
  os << ")";
  return os.str();
}

}  // namespace

struct Encoder::Impl {
  EncoderProfile profile;
  std::array<std::vector<ConvRef>, kNumLevels> blocks;
  std::vector<LinearRef> head;
  bool pooled_head = false;  // toy head: global average pool instead of flatten
  std::map<std::string, torch::Tensor> weights;

  torch::Tensor conv(const torch::Tensor& x, const ConvRef& c) const {
    return torch::relu(F::conv2d(x, weights.at(c.weight), F::Conv2dFuncOptions().bias(weights.at(c.bias)).padding(1)));
  }

  void check_images(const torch::Tensor& images) const {
    const auto side = profile.input_side;
    if (images.dim() != 4 || images.size(1) != 3) {
      throw ShapeError("encoder expects RGB images shaped (N,3," + std::to_string(side) + "," +
                       std::to_string(side) + "), got " + shape_str(images.sizes()));
    }
    if (images.size(2) != side || images.size(3) != side) {
      throw ShapeError("encoder input side mismatch: expected " + std::to_string(side) + "x" + std::to_string(side) +
                       ", got " + std::to_string(images.size(2)) + "x" + std::to_string(images.size(3)));
    }
  }

  // Runs the convolutional trunk. Taps for `wanted` levels are stored in
  // `taps`; when `full` is set every conv of the last block runs and the
  // final pooled map is returned.
  torch::Tensor trunk(const torch::Tensor& images, const std::vector<int>& wanted, bool full,
                      std::map<int, torch::Tensor>* taps) const {
    torch::NoGradGuard no_grad;
    check_images(images);
    int deepest = full ? kNumLevels : 0;
    for (int l : wanted) deepest = std::max(deepest, l);
    auto x = standardize_image(images.to(torch::kFloat32));
    for (int level = 1; level <= deepest; ++level) {
      if (level > 1) x = F::max_pool2d(x, F::MaxPool2dFuncOptions(2).stride(2));
      const auto& block = blocks[level - 1];
      for (std::size_t k = 0; k < block.size(); ++k) {
        x = conv(x, block[k]);
        if (k == 0 && taps && std::find(wanted.begin(), wanted.end(), level) != wanted.end()) {
          (*taps)[level] = x;
        }
        if (k == 0 && !full && level == deepest) return x;
      }
    }
    return x;
  }

  torch::Tensor embed(const torch::Tensor& images) const {
    if (head.empty()) {
      throw UnsupportedError("encoder profile '" + profile.name() + "' has no classifier head; embeddings unavailable");
    }
    torch::NoGradGuard no_grad;
    torch::Tensor x;
    if (pooled_head) {
      std::map<int, torch::Tensor> taps;
      trunk(images, {kNumLevels}, false, &taps);
      x = taps.at(kNumLevels).mean({2, 3});
    } else {
      x = trunk(images, {}, true, nullptr);
      x = F::max_pool2d(x, F::MaxPool2dFuncOptions(2).stride(2)).flatten(1);
    }
    for (const auto& fc : head) {
      x = F::linear(x, weights.at(fc.weight), weights.at(fc.bias));
      if (fc.relu) x = torch::relu(x);
    }
    return x;
  }

  void check_weights() const {
    auto expect = [&](const std::string& name, std::vector<std::int64_t> shape) {
      auto it = weights.find(name);
      if (it == weights.end()) {
        throw IntegrityError("encoder weights missing '" + name + "' (source: " + profile.weight_source + ")");
      }
      if (it->second.sizes() != torch::IntArrayRef(shape)) {
        throw IntegrityError("encoder weight '" + name + "' has shape " + shape_str(it->second.sizes()) +
                             ", expected " + shape_str(shape));
      }
    };
    for (const auto& block : blocks) {
      for (const auto& c : block) {
        expect(c.weight, {c.out, c.in, 3, 3});
        expect(c.bias, {c.out});
      }
    }
    for (const auto& fc : head) {
      expect(fc.weight, {fc.out, fc.in});
      expect(fc.bias, {fc.out});
    }
  }
};

const LayerTap& EncoderProfile::tap(int level) const {
  for (const auto& t : taps) {
    if (t.level == level) return t;
  }
  throw ShapeError("encoder profile has no tap for level " + std::to_string(level));
}

std::vector<std::int64_t> EncoderProfile::channel_list() const {
  std::vector<std::int64_t> out;
  for (const auto& t : taps) out.push_back(t.channels);
  return out;
}

void EncoderProfile::validate() const {
  if (input_side <= 0 || input_side % 16 != 0) {
    throw ShapeError("encoder input side must be a positive multiple of 16, got " + std::to_string(input_side));
  }
  if (taps.size() != kNumLevels) {
    throw ShapeError("encoder profile needs exactly 5 taps");
  }
  for (std::size_t i = 0; i < taps.size(); ++i) {
    if (taps[i].level != static_cast<int>(i) + 1) throw ShapeError("encoder taps must be sorted by level 1..5");
    if (taps[i].channels <= 0) throw ShapeError("tap channels must be positive");
    if (i + 1 < taps.size() && taps[i].spatial != 2 * taps[i + 1].spatial) {
      throw ShapeError("tap spatial sides must halve between consecutive levels");
    }
  }
  if (taps[0].spatial != input_side) throw ShapeError("level-1 tap must be at input resolution");
}

std::vector<LayerTap> make_taps(const std::array<std::int64_t, kNumLevels>& channels, std::int64_t input_side,
                                const std::array<std::string, kNumLevels>& names) {
  std::vector<LayerTap> taps;
  for (int level = 1; level <= kNumLevels; ++level) {
    taps.push_back({level, channels[level - 1], input_side >> (level - 1), names[level - 1]});
  }
  return taps;
}

EncoderProfile vgg19_profile(std::string weight_source, bool with_head) {
  EncoderProfile p;
  p.kind = ProfileKind::vgg19;
  p.input_side = kVggSide;
  p.taps = make_taps(kVggChannels, kVggSide, {"conv1_1", "conv2_1", "conv3_1", "conv4_1", "conv5_1"});
  p.weight_source = std::move(weight_source);
  p.embedding_dim = with_head ? kVggEmbedding : 0;
  return p;
}

const torch::Tensor& FeaturePyramid::at(int level) const {
  auto it = levels.find(level);
  if (it == levels.end()) {
    throw ShapeError("pyramid '" + source_id + "' has no level " + std::to_string(level));
  }
  return it->second;
}

torch::Tensor standardize_image(const torch::Tensor& image) {
  auto opts = torch::TensorOptions().dtype(image.scalar_type());
  auto mean = torch::tensor({kImageMean[0], kImageMean[1], kImageMean[2]}, opts);
  auto stdv = torch::tensor({kImageStd[0], kImageStd[1], kImageStd[2]}, opts);
  std::vector<std::int64_t> shape(image.dim(), 1);
  shape[image.dim() - 3] = 3;
  return (image - mean.view(shape)) / stdv.view(shape);
}

namespace {

std::shared_ptr<Encoder::Impl> vgg_skeleton(bool with_head) {
  auto impl = std::make_shared<Encoder::Impl>();
  std::int64_t in = 3;
  for (int level = 0; level < kNumLevels; ++level) {
    for (int idx : kVggConvIndex[level]) {
      auto base = "features." + std::to_string(idx);
      impl->blocks[level].push_back({base + ".weight", base + ".bias", in, kVggChannels[level]});
      in = kVggChannels[level];
    }
  }
  if (with_head) {
    impl->head.push_back({"classifier.0.weight", "classifier.0.bias", 512 * 7 * 7, kVggEmbedding, true});
    impl->head.push_back({"classifier.3.weight", "classifier.3.bias", kVggEmbedding, kVggEmbedding, true});
  }
  return impl;
}

}  // namespace

Encoder::Encoder(std::shared_ptr<const Impl> impl) : impl_(std::move(impl)) {}

Encoder Encoder::load_vgg19(const std::filesystem::path& weights, bool with_head) {
  if (!std::filesystem::exists(weights)) {
    throw NotFoundError("VGG-19 weight file not found: " + weights.string());
  }
  auto impl = vgg_skeleton(with_head);
  impl->profile = vgg19_profile(weights.string(), with_head);
  auto archive = TensorArchive::load(weights);
  for (auto& [name, t] : archive.tensors) impl->weights[name] = t.to(torch::kFloat32);
  impl->check_weights();
  return Encoder(std::move(impl));
}

Encoder Encoder::random_vgg19(std::uint64_t seed, bool with_head) {
  auto impl = vgg_skeleton(with_head);
  impl->profile = vgg19_profile("seed:" + std::to_string(seed), with_head);
  auto gen = at::make_generator<at::CPUGeneratorImpl>(seed);
  for (const auto& block : impl->blocks) {
    for (const auto& c : block) {
      const double stdv = std::sqrt(2.0 / static_cast<double>(c.in * 9));
      impl->weights[c.weight] = at::normal(0.0, stdv, {c.out, c.in, 3, 3}, gen);
      impl->weights[c.bias] = torch::zeros({c.out});
    }
  }
  for (const auto& fc : impl->head) {
    impl->weights[fc.weight] = at::normal(0.0, 0.01, {fc.out, fc.in}, gen);
    impl->weights[fc.bias] = torch::zeros({fc.out});
  }
  return Encoder(std::move(impl));
}

Encoder Encoder::make_toy(std::uint64_t seed, const std::array<std::int64_t, kNumLevels>& channels,
                          std::int64_t input_side, std::int64_t embedding_dim) {
  if (input_side <= 0 || input_side % 16 != 0) {
    throw ShapeError("toy encoder input side must be divisible by 16, got " + std::to_string(input_side));
  }
  if (embedding_dim < 0) throw ShapeError("embedding_dim must be non-negative");
  auto impl = std::make_shared<Encoder::Impl>();
  impl->profile.kind = ProfileKind::toy;
  impl->profile.input_side = input_side;
  impl->profile.taps = make_taps(channels, input_side, {"toy1", "toy2", "toy3", "toy4", "toy5"});
  impl->profile.weight_source = "seed:" + std::to_string(seed);
  impl->profile.embedding_dim = embedding_dim;
  impl->profile.validate();

  auto gen = at::make_generator<at::CPUGeneratorImpl>(seed);
  std::int64_t in = 3;
  for (int level = 0; level < kNumLevels; ++level) {
    auto base = "toy.L" + std::to_string(level + 1);
    ConvRef c{base + ".weight", base + ".bias", in, channels[level]};
    const double stdv = std::sqrt(2.0 / static_cast<double>(in * 9));
    impl->weights[c.weight] = at::normal(0.0, stdv, {c.out, c.in, 3, 3}, gen);
    impl->weights[c.bias] = at::normal(0.0, 0.1, {c.out}, gen);
    impl->blocks[level].push_back(c);
    in = channels[level];
  }
  if (embedding_dim > 0) {
    impl->pooled_head = true;
    LinearRef fc{"toy.head.weight", "toy.head.bias", channels[kNumLevels - 1], embedding_dim, false};
    impl->weights[fc.weight] = at::normal(0.0, 1.0 / std::sqrt(static_cast<double>(fc.in)), {fc.out, fc.in}, gen);
    impl->weights[fc.bias] = torch::zeros({fc.out});
    impl->head.push_back(fc);
  }
  return Encoder(std::move(impl));
}

const EncoderProfile& Encoder::profile() const { return impl_->profile; }

bool Encoder::has_head() const { return !impl_->head.empty(); }

const std::map<std::string, torch::Tensor>& Encoder::weights() const { return impl_->weights; }

FeaturePyramid Encoder::extract_pyramid(const torch::Tensor& image, std::string source_id) const {
  if (image.dim() != 3) {
    throw ShapeError("extract_pyramid expects a single (3,H,W) image, got " + shape_str(image.sizes()));
  }
  FeaturePyramid pyramid;
  pyramid.source_id = std::move(source_id);
  auto batched = extract_levels(image.unsqueeze(0), {1, 2, 3, 4, 5});
  for (auto& [level, t] : batched) pyramid.levels[level] = t.squeeze(0);
  return pyramid;
}

std::map<int, torch::Tensor> Encoder::extract_levels(const torch::Tensor& images, const std::vector<int>& levels) const {
  for (int l : levels) {
    if (l < 1 || l > kNumLevels) throw ShapeError("tap level out of range: " + std::to_string(l));
  }
  std::map<int, torch::Tensor> taps;
  impl_->trunk(images, levels, false, &taps);
  return taps;
}

torch::Tensor Encoder::extract_embedding(const torch::Tensor& image) const {
  if (image.dim() != 3) {
    throw ShapeError("extract_embedding expects a single (3,H,W) image, got " + shape_str(image.sizes()));
  }
  return impl_->embed(image.unsqueeze(0)).squeeze(0);
}

torch::Tensor Encoder::extract_embeddings(const torch::Tensor& images) const { return impl_->embed(images); }

}  // namespace featxlate
