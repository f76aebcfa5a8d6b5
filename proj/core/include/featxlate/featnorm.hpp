#pragma once

#include <torch/torch.h>

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

namespace featxlate {

class Encoder;
struct DomainDataset;

inline constexpr double kStdFloor = 1e-6;

// Per-domain, per-level channel statistics pooled over images and spatial positions.
struct ChannelStats {
  std::string domain_id;
  int level = 0;
  std::vector<double> mean;
  std::vector<double> std;
  std::int64_t count = 0;  // images aggregated
  std::string config_hash;

  std::int64_t channels() const { return static_cast<std::int64_t>(mean.size()); }
  bool operator==(const ChannelStats&) const = default;
};

// Streaming per-channel mean/variance (Chan et al. pairwise merge of
// per-tensor moments, accumulated in double).
class StatsAccumulator {
 public:
  explicit StatsAccumulator(std::int64_t channels);

  // features: (C, H, W) or (N, C, H, W). Throws NumericError on non-finite
  // values, naming `item_id`.
  void add(const torch::Tensor& features, const std::string& item_id = {});

  std::int64_t images() const { return images_; }
  ChannelStats finalize(std::string domain_id, int level, double std_floor = kStdFloor) const;

 private:
  std::int64_t channels_;
  std::int64_t images_ = 0;
  std::vector<double> n_;
  std::vector<double> mean_;
  std::vector<double> m2_;
};

// Eval-policy pass over the domain; mean/std pooled over images and spatial
// positions. Throws on an empty dataset or a non-finite activation.
ChannelStats compute_stats(const DomainDataset& dataset, const Encoder& encoder, int level);
std::map<int, ChannelStats> compute_stats(const DomainDataset& dataset, const Encoder& encoder,
                                          const std::vector<int>& levels);

// clamp((x - mean_c) / std_c, -1, 1). Accepts (C,H,W) or (N,C,H,W).
torch::Tensor normalize(const torch::Tensor& features, const ChannelStats& stats);
// Same affine map without the clamp; used to check the pre-clamp moments.
torch::Tensor standardize(const torch::Tensor& features, const ChannelStats& stats);
// x * std_c + mean_c. Clamped values do not come back.
torch::Tensor denormalize(const torch::Tensor& features, const ChannelStats& stats);

// Text format, one key per line:
//   featxlate-stats 1
//   domain_id <id>
//   level <n>
//   channels <c>
//   count <n>
//   config_hash <hex or ->
//   mean <c values, %.17g>
//   std <c values, %.17g>
//   end
void save_stats(const ChannelStats& stats, const std::filesystem::path& path);
ChannelStats load_stats(const std::filesystem::path& path);

// Conventional file name inside a stats directory.
std::filesystem::path stats_path(const std::filesystem::path& dir, const std::string& domain_id, int level);

}  // namespace featxlate
