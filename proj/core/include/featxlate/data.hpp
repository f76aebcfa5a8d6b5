#pragma once

#include <torch/torch.h>

#include <cstdint>
#include <filesystem>
#include <optional>
#include <random>
#include <string>
#include <vector>

namespace featxlate {

struct DomainItem {
  std::string id;  // unique within the domain
  std::filesystem::path path;
};

enum class AugmentPolicy { train, eval };

// An unpaired image domain. Items are in a stable order.
struct DomainDataset {
  std::string domain_id;
  std::vector<DomainItem> items;
  std::size_t ignored_files = 0;  // non-image files seen while listing

  std::size_t size() const { return items.size(); }
};

// Recursively lists .png/.jpg/.jpeg/.bmp files (case-insensitive) sorted by
// relative path. Item ids are the relative paths.
DomainDataset build_folder_domain(const std::filesystem::path& root, const std::string& domain_id);

struct CocoFilter {
  std::filesystem::path annotation_file;
  std::string category;
  double min_area_fraction = 0.0;  // instance area / image area
};

// Images whose annotations include at least one instance of `filter.category`
// covering at least min_area_fraction of the image. Uses the annotation file
// only; pixels are never inspected.
DomainDataset build_coco_domain(const CocoFilter& filter, const std::filesystem::path& images_root,
                                const std::string& domain_id);

// Decodes any supported image to (3, H, W) float RGB in [0, 1]. Grayscale is
// replicated to three channels. Throws IoError when the file cannot be decoded.
torch::Tensor load_image(const std::filesystem::path& path);

// Side of the resize before the random crop in the train policy (256 for 224).
std::int64_t train_resize_side(std::int64_t crop_side);

// Train: shorter side -> train_resize_side(side), random side x side crop,
// horizontal mirror with probability 0.5. Eval: shorter side -> side, center crop.
torch::Tensor augment(const torch::Tensor& image, AugmentPolicy policy, std::mt19937_64& rng, std::int64_t side);
torch::Tensor load_and_augment(const DomainItem& item, AugmentPolicy policy, std::mt19937_64& rng,
                               std::int64_t side = 224);

// Per-item RNG seed derived from the stage seed and item id.
std::uint64_t item_seed(std::uint64_t stage_seed, const std::string& item_id);

// (x + 1) * 127.5 with round-half-to-even, for tensors in [-1, 1]. Returns uint8 (3, H, W).
torch::Tensor to_uint8_image(const torch::Tensor& image);
// Writes a (3, H, W) uint8 RGB tensor; format chosen from the extension.
void write_image(const std::filesystem::path& path, const torch::Tensor& rgb_u8);

bool is_image_path(const std::filesystem::path& path);

}  // namespace featxlate
