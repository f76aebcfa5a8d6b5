#pragma once

#include <torch/torch.h>

#include <filesystem>
#include <map>
#include <string>

namespace featxlate {

// Named tensor archive used for encoder weights, checkpoints and feature
// cache records. Layout (little endian):
//
//   "FXAR"  u32 version
//   u32 meta_len, meta bytes (UTF-8 JSON object)
//   u32 entry_count
//   per entry: u32 name_len, name, u8 dtype, u32 ndim, i64 dims[ndim],
//              u64 nbytes, raw contiguous data
//   u32 crc32 over every preceding byte
//
// dtype tags: 0 = float32, 1 = float64, 2 = int64, 3 = uint8.
struct TensorArchive {
  static constexpr std::uint32_t kVersion = 1;

  std::string meta = "{}";
  std::map<std::string, torch::Tensor> tensors;

  bool contains(const std::string& name) const { return tensors.count(name) != 0; }
  const torch::Tensor& at(const std::string& name) const;

  // Written to a temporary sibling and renamed into place.
  void save(const std::filesystem::path& path) const;
  static TensorArchive load(const std::filesystem::path& path);
};

std::uint8_t dtype_tag(torch::ScalarType type);
torch::ScalarType dtype_from_tag(std::uint8_t tag);

// Atomic whole-file replace for text artifacts.
void write_file_atomic(const std::filesystem::path& path, const std::string& bytes);

}  // namespace featxlate
