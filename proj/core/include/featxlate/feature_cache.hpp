#pragma once

#include <torch/torch.h>

#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "featxlate/featnorm.hpp"

namespace featxlate {

class Encoder;
struct DomainDataset;

enum class CacheKind { raw, normalized, image };

std::string to_string(CacheKind kind);

// On-disk feature cache. One archive per (image, level) record:
//
//   <root>/<domain>/<kind>/L<level>/<index:06>.fxar
//   <root>/<domain>/index.tsv   kind  level  index  source_id  shape  dtype  file
//
// kind is raw | norm | image; image records use level 0 and hold the
// eval-policy crop as float RGB in [-1, 1].
struct CacheRecord {
  CacheKind kind = CacheKind::raw;
  int level = 0;
  std::size_t index = 0;
  std::string source_id;
  std::vector<std::int64_t> shape;
  std::string dtype;
  std::filesystem::path file;  // relative to the domain directory
};

class FeatureCache {
 public:
  explicit FeatureCache(std::filesystem::path root);

  const std::filesystem::path& root() const { return root_; }
  std::filesystem::path domain_dir(const std::string& domain_id) const { return root_ / domain_id; }

  CacheRecord put(const std::string& domain_id, CacheKind kind, int level, std::size_t index,
                  const std::string& source_id, const torch::Tensor& tensor, const std::string& config_hash) const;
  torch::Tensor get(const std::string& domain_id, const CacheRecord& record) const;

  void write_index(const std::string& domain_id, const std::vector<CacheRecord>& records) const;
  std::vector<CacheRecord> read_index(const std::string& domain_id) const;
  bool has_domain(const std::string& domain_id) const;

 private:
  std::filesystem::path root_;
};

// Extracts every item once (eval policy), writes raw/normalised/image
// records and the index, and returns the per-level statistics it computed.
// Statistics are accumulated in the first pass; normalisation reads back the
// raw records in the second.
std::map<int, ChannelStats> build_domain_cache(const DomainDataset& dataset, const Encoder& encoder,
                                               const std::vector<int>& levels, const FeatureCache& cache,
                                               const std::string& config_hash);

// Normalised features of one domain at one level, backed by the cache.
class NormalizedDomain {
 public:
  // Throws NotFoundError when the cache has no normalised records for the level.
  static NormalizedDomain open(const FeatureCache& cache, const std::string& domain_id, int level,
                               CacheKind kind = CacheKind::normalized);
  // Wraps an in-memory (N, C, H, W) tensor; used by tests and toy runs.
  static NormalizedDomain from_tensor(std::string domain_id, int level, torch::Tensor features,
                                      std::vector<std::string> item_ids = {});

  const std::string& domain_id() const { return domain_id_; }
  int level() const { return level_; }
  std::size_t size() const { return item_ids_.size(); }
  const std::vector<std::string>& item_ids() const { return item_ids_; }

  // (B, C, H, W) stacked in the order given.
  torch::Tensor batch(const std::vector<std::size_t>& indices) const;
  torch::Tensor all() const;

 private:
  std::string domain_id_;
  int level_ = 0;
  std::vector<std::string> item_ids_;
  torch::Tensor resident_;  // (N, C, H, W)
};

}  // namespace featxlate
