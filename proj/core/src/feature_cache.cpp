#include "featxlate/feature_cache.hpp"

#include <cstdio>
#include <fstream>
#include <json.hpp>
#include <random>
#include <sstream>

#include "featxlate/archive.hpp"
#include "featxlate/data.hpp"
#include "featxlate/encoder.hpp"
#include "featxlate/error.hpp"

namespace featxlate {

namespace fs = std::filesystem;

namespace {

CacheKind kind_from_string(const std::string& s) {
  if (s == "raw") return CacheKind::raw;
  if (s == "norm") return CacheKind::normalized;
  if (s == "image") return CacheKind::image;
  throw IntegrityError("unknown cache record kind '" + s + "'");
}

std::string shape_field(const std::vector<std::int64_t>& shape) {
  std::string out;
  for (std::size_t i = 0; i < shape.size(); ++i) out += (i ? "x" : "") + std::to_string(shape[i]);
  return out;
}

std::vector<std::int64_t> parse_shape(const std::string& s) {
  std::vector<std::int64_t> out;
  std::stringstream ss(s);
  std::string part;
  while (std::getline(ss, part, 'x')) out.push_back(std::stoll(part));
  return out;
}

}  // namespace

std::string to_string(CacheKind kind) {
  switch (kind) {
    case CacheKind::raw: return "raw";
    case CacheKind::normalized: return "norm";
    case CacheKind::image: return "image";
  }
  return "?";
}

FeatureCache::FeatureCache(fs::path root) : root_(std::move(root)) {}

CacheRecord FeatureCache::put(const std::string& domain_id, CacheKind kind, int level, std::size_t index,
                              const std::string& source_id, const torch::Tensor& tensor,
                              const std::string& config_hash) const {
  char name[32];
  std::snprintf(name, sizeof(name), "%06zu.fxar", index);
  CacheRecord rec;
  rec.kind = kind;
  rec.level = level;
  rec.index = index;
  rec.source_id = source_id;
  rec.shape = tensor.sizes().vec();
  rec.dtype = c10::toString(tensor.scalar_type());
  rec.file = fs::path(to_string(kind)) / ("L" + std::to_string(level)) / name;

  TensorArchive ar;
  nlohmann::json meta = {{"source_id", source_id}, {"level", level}, {"kind", to_string(kind)},
                         {"config_hash", config_hash}};
  ar.meta = meta.dump();
  ar.tensors["features"] = tensor.detach().contiguous();
  ar.save(domain_dir(domain_id) / rec.file);
  return rec;
}

torch::Tensor FeatureCache::get(const std::string& domain_id, const CacheRecord& record) const {
  auto ar = TensorArchive::load(domain_dir(domain_id) / record.file);
  auto t = ar.at("features");
  if (t.sizes().vec() != record.shape) {
    throw IntegrityError("cache record " + record.file.string() + " shape disagrees with index");
  }
  return t;
}

void FeatureCache::write_index(const std::string& domain_id, const std::vector<CacheRecord>& records) const {
  std::ostringstream os;
  os << "kind\tlevel\tindex\tsource_id\tshape\tdtype\tfile\n";
  for (const auto& r : records) {
    os << to_string(r.kind) << '\t' << r.level << '\t' << r.index << '\t' << r.source_id << '\t'
       << shape_field(r.shape) << '\t' << r.dtype << '\t' << r.file.generic_string() << '\n';
  }
  write_file_atomic(domain_dir(domain_id) / "index.tsv", os.str());
}

std::vector<CacheRecord> FeatureCache::read_index(const std::string& domain_id) const {
  auto path = domain_dir(domain_id) / "index.tsv";
  std::ifstream in(path);
  if (!in) throw NotFoundError("no feature cache for domain '" + domain_id + "' (missing " + path.string() + ")");
  std::vector<CacheRecord> out;
  std::string line;
  std::getline(in, line);  // header
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::vector<std::string> f;
    std::stringstream ss(line);
    std::string field;
    while (std::getline(ss, field, '\t')) f.push_back(field);
    if (f.size() != 7) throw IntegrityError("malformed cache index line in " + path.string());
    CacheRecord r;
    r.kind = kind_from_string(f[0]);
    r.level = std::stoi(f[1]);
    r.index = std::stoull(f[2]);
    r.source_id = f[3];
    r.shape = parse_shape(f[4]);
    r.dtype = f[5];
    r.file = f[6];
    out.push_back(std::move(r));
  }
  return out;
}

bool FeatureCache::has_domain(const std::string& domain_id) const {
  return fs::exists(domain_dir(domain_id) / "index.tsv");
}

std::map<int, ChannelStats> build_domain_cache(const DomainDataset& dataset, const Encoder& encoder,
                                               const std::vector<int>& levels, const FeatureCache& cache,
                                               const std::string& config_hash) {
  if (dataset.items.empty()) {
    throw Error("cannot cache domain '" + dataset.domain_id + "': dataset is empty");
  }
  const auto& profile = encoder.profile();
  std::map<int, StatsAccumulator> acc;
  for (int level : levels) acc.emplace(level, StatsAccumulator(profile.tap(level).channels));

  std::vector<CacheRecord> records;
  std::vector<CacheRecord> raw;
  std::mt19937_64 unused_rng(0);
  for (std::size_t i = 0; i < dataset.items.size(); ++i) {
    const auto& item = dataset.items[i];
    auto image = load_and_augment(item, AugmentPolicy::eval, unused_rng, profile.input_side);
    records.push_back(cache.put(dataset.domain_id, CacheKind::image, 0, i, item.id, image * 2.0 - 1.0, config_hash));
    auto taps = encoder.extract_levels(image.unsqueeze(0), levels);
    for (int level : levels) {
      auto t = taps.at(level).squeeze(0);
      acc.at(level).add(t, item.id);
      raw.push_back(cache.put(dataset.domain_id, CacheKind::raw, level, i, item.id, t, config_hash));
    }
  }

  std::map<int, ChannelStats> stats;
  for (auto& [level, a] : acc) {
    auto s = a.finalize(dataset.domain_id, level);
    s.config_hash = config_hash;
    stats.emplace(level, std::move(s));
  }
  for (const auto& r : raw) {
    auto normalized = normalize(cache.get(dataset.domain_id, r), stats.at(r.level));
    records.push_back(r);
    records.push_back(
        cache.put(dataset.domain_id, CacheKind::normalized, r.level, r.index, r.source_id, normalized, config_hash));
  }
  cache.write_index(dataset.domain_id, records);
  return stats;
}

NormalizedDomain NormalizedDomain::open(const FeatureCache& cache, const std::string& domain_id, int level,
                                        CacheKind kind) {
  auto records = cache.read_index(domain_id);
  std::vector<CacheRecord> chosen;
  for (auto& r : records) {
    if (r.kind == kind && r.level == level) chosen.push_back(std::move(r));
  }
  if (chosen.empty()) {
    throw NotFoundError("feature cache for domain '" + domain_id + "' has no " + to_string(kind) +
                        " records at level " + std::to_string(level));
  }
  std::sort(chosen.begin(), chosen.end(), [](const auto& a, const auto& b) { return a.index < b.index; });
  NormalizedDomain d;
  d.domain_id_ = domain_id;
  d.level_ = level;
  std::vector<torch::Tensor> tensors;
  for (const auto& r : chosen) {
    d.item_ids_.push_back(r.source_id);
    tensors.push_back(cache.get(domain_id, r));
  }
  d.resident_ = torch::stack(tensors);
  return d;
}

NormalizedDomain NormalizedDomain::from_tensor(std::string domain_id, int level, torch::Tensor features,
                                               std::vector<std::string> item_ids) {
  if (features.dim() != 4) throw ShapeError("NormalizedDomain expects (N,C,H,W) features");
  if (item_ids.empty()) {
    for (std::int64_t i = 0; i < features.size(0); ++i) item_ids.push_back(std::to_string(i));
  }
  if (static_cast<std::int64_t>(item_ids.size()) != features.size(0)) {
    throw ShapeError("item id count does not match feature batch");
  }
  NormalizedDomain d;
  d.domain_id_ = std::move(domain_id);
  d.level_ = level;
  d.item_ids_ = std::move(item_ids);
  d.resident_ = std::move(features);
  return d;
}

torch::Tensor NormalizedDomain::batch(const std::vector<std::size_t>& indices) const {
  std::vector<std::int64_t> idx(indices.begin(), indices.end());
  return resident_.index_select(0, torch::tensor(idx, torch::kInt64));
}

torch::Tensor NormalizedDomain::all() const { return resident_; }

}  // namespace featxlate
