#pragma once

#include <torch/torch.h>

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>

#include "featxlate/encoder.hpp"

namespace fxtest {

// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& tag = "fx");
  ~TempDir();
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& rel) const { return path_ / rel; }

 private:
  std::filesystem::path path_;
};

inline constexpr std::array<std::int64_t, 5> kToyChannels = {8, 16, 32, 64, 64};
inline constexpr std::int64_t kToySide = 64;

featxlate::Encoder toy_encoder(std::uint64_t seed = 0, std::int64_t embedding_dim = 16);

enum class Pattern { stripes_h, stripes_v };

// Synthetic RGB image in [0,1], (3, side, side). Domain A uses horizontal
// warm stripes, domain B vertical cool stripes; `index` varies phase and frequency.
torch::Tensor synthetic_image(Pattern pattern, int index, std::int64_t side);

// Writes n PNG files img_000.png ... into dir.
void write_domain(const std::filesystem::path& dir, Pattern pattern, int n, std::int64_t side);

// Bitwise tensor equality (same shape, dtype and bytes).
bool bitwise_equal(const torch::Tensor& a, const torch::Tensor& b);

}  // namespace fxtest
