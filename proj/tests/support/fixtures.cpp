#include "fixtures.hpp"

#include <atomic>
#include <cstring>
#include <random>

#include "featxlate/data.hpp"

namespace fxtest {

namespace fs = std::filesystem;

TempDir::TempDir(const std::string& tag) {
  static std::atomic<int> counter{0};
  std::random_device rd;
  path_ = fs::temp_directory_path() /
          (tag + "_" + std::to_string(rd()) + "_" + std::to_string(counter.fetch_add(1)));
  fs::create_directories(path_);
}

TempDir::~TempDir() {
  std::error_code ec;
  fs::remove_all(path_, ec);
}

featxlate::Encoder toy_encoder(std::uint64_t seed, std::int64_t embedding_dim) {
  return featxlate::Encoder::make_toy(seed, kToyChannels, kToySide, embedding_dim);
}

torch::Tensor synthetic_image(Pattern pattern, int index, std::int64_t side) {
  auto coord = torch::arange(side, torch::kFloat32) / static_cast<float>(side);
  const double freq = 3.0 + (index % 5);
  const double phase = 0.7 * index;
  auto wave = torch::sin(coord * (2.0 * M_PI * freq) + phase) * 0.5 + 0.5;  // (side)
  torch::Tensor plane = pattern == Pattern::stripes_h ? wave.view({side, 1}).expand({side, side})
                                                      : wave.view({1, side}).expand({side, side});
  std::array<double, 3> tint = pattern == Pattern::stripes_h ? std::array<double, 3>{0.9, 0.5, 0.2}
                                                             : std::array<double, 3>{0.2, 0.5, 0.9};
  auto img = torch::stack({plane * tint[0], plane * tint[1], plane * tint[2]}) + 0.05 * (index % 3);
  return img.clamp(0.0, 1.0).contiguous();
}

void write_domain(const fs::path& dir, Pattern pattern, int n, std::int64_t side) {
  fs::create_directories(dir);
  for (int i = 0; i < n; ++i) {
    char name[32];
    std::snprintf(name, sizeof(name), "img_%03d.png", i);
    auto img = synthetic_image(pattern, i, side);
    featxlate::write_image(dir / name, featxlate::to_uint8_image(img * 2.0 - 1.0));
  }
}

bool bitwise_equal(const torch::Tensor& a, const torch::Tensor& b) {
  if (a.sizes() != b.sizes() || a.scalar_type() != b.scalar_type()) return false;
  auto ca = a.contiguous().cpu();
  auto cb = b.contiguous().cpu();
  return std::memcmp(ca.data_ptr(), cb.data_ptr(), ca.nbytes()) == 0;
}

}  // namespace fxtest
