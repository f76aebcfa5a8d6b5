#include "featxlate/featnorm.hpp"

#include <cmath>
#include <fstream>
#include <iomanip>
#include <sstream>

#include "featxlate/archive.hpp"
#include "featxlate/data.hpp"
#include "featxlate/encoder.hpp"
#include "featxlate/error.hpp"

namespace featxlate {

namespace {

constexpr int kStatsVersion = 1;

torch::Tensor as_batch(const torch::Tensor& features) {
  if (features.dim() == 3) return features.unsqueeze(0);
  if (features.dim() == 4) return features;
  throw ShapeError("feature tensor must be (C,H,W) or (N,C,H,W)");
}

void check_channels(const torch::Tensor& batch, const ChannelStats& stats) {
  if (batch.size(1) != stats.channels()) {
    throw ShapeError("channel mismatch: features have " + std::to_string(batch.size(1)) + " channels, stats for '" +
                     stats.domain_id + "' level " + std::to_string(stats.level) + " have " +
                     std::to_string(stats.channels()));
  }
}

std::pair<torch::Tensor, torch::Tensor> stat_tensors(const ChannelStats& stats, torch::ScalarType type) {
  auto opts = torch::TensorOptions().dtype(torch::kFloat64);
  auto mean = torch::tensor(stats.mean, opts).to(type).view({1, -1, 1, 1});
  auto stdv = torch::tensor(stats.std, opts).to(type).view({1, -1, 1, 1});
  return {mean, stdv};
}

torch::Tensor restore_rank(const torch::Tensor& out, const torch::Tensor& like) {
  return like.dim() == 3 ? out.squeeze(0) : out;
}

}  // namespace

StatsAccumulator::StatsAccumulator(std::int64_t channels)
    : channels_(channels), n_(channels, 0.0), mean_(channels, 0.0), m2_(channels, 0.0) {
  if (channels <= 0) throw ShapeError("StatsAccumulator needs a positive channel count");
}

void StatsAccumulator::add(const torch::Tensor& features, const std::string& item_id) {
  auto batch = as_batch(features).to(torch::kFloat64);
  if (batch.size(1) != channels_) {
    throw ShapeError("accumulator expects " + std::to_string(channels_) + " channels, got " +
                     std::to_string(batch.size(1)) + (item_id.empty() ? "" : " (item " + item_id + ")"));
  }
  if (!torch::isfinite(batch).all().item<bool>()) {
    throw NumericError("non-finite activation in item '" + item_id + "'");
  }
  // Per-channel moments of this chunk, then a pairwise merge.
  auto per_channel = batch.transpose(0, 1).reshape({channels_, -1});
  const double nb = static_cast<double>(per_channel.size(1));
  auto chunk_mean = per_channel.mean(1);
  auto chunk_m2 = (per_channel - chunk_mean.unsqueeze(1)).pow(2).sum(1);
  auto mean_a = chunk_mean.accessor<double, 1>();
  auto m2_a = chunk_m2.accessor<double, 1>();
  for (std::int64_t c = 0; c < channels_; ++c) {
    const double na = n_[c];
    const double n = na + nb;
    const double delta = mean_a[c] - mean_[c];
    mean_[c] += delta * nb / n;
    m2_[c] += m2_a[c] + delta * delta * na * nb / n;
    n_[c] = n;
  }
  images_ += batch.size(0);
}

ChannelStats StatsAccumulator::finalize(std::string domain_id, int level, double std_floor) const {
  if (images_ == 0) {
    throw Error("cannot compute statistics for domain '" + domain_id + "': no images");
  }
  ChannelStats s;
  s.domain_id = std::move(domain_id);
  s.level = level;
  s.count = images_;
  s.mean = mean_;
  s.std.resize(channels_);
  for (std::int64_t c = 0; c < channels_; ++c) {
    s.std[c] = std::max(std::sqrt(m2_[c] / n_[c]), std_floor);
  }
  return s;
}

std::map<int, ChannelStats> compute_stats(const DomainDataset& dataset, const Encoder& encoder,
                                          const std::vector<int>& levels) {
  if (dataset.items.empty()) {
    throw Error("cannot compute statistics for domain '" + dataset.domain_id + "': dataset is empty");
  }
  const auto& profile = encoder.profile();
  std::map<int, StatsAccumulator> acc;
  for (int level : levels) acc.emplace(level, StatsAccumulator(profile.tap(level).channels));
  std::mt19937_64 unused_rng(0);
  for (const auto& item : dataset.items) {
    auto image = load_and_augment(item, AugmentPolicy::eval, unused_rng, profile.input_side);
    auto taps = encoder.extract_levels(image.unsqueeze(0), levels);
    for (int level : levels) acc.at(level).add(taps.at(level), item.id);
  }
  std::map<int, ChannelStats> out;
  for (auto& [level, a] : acc) out.emplace(level, a.finalize(dataset.domain_id, level));
  return out;
}

ChannelStats compute_stats(const DomainDataset& dataset, const Encoder& encoder, int level) {
  return compute_stats(dataset, encoder, std::vector<int>{level}).at(level);
}

torch::Tensor standardize(const torch::Tensor& features, const ChannelStats& stats) {
  auto batch = as_batch(features);
  check_channels(batch, stats);
  auto [mean, stdv] = stat_tensors(stats, batch.scalar_type());
  return restore_rank((batch - mean) / stdv, features);
}

torch::Tensor normalize(const torch::Tensor& features, const ChannelStats& stats) {
  return standardize(features, stats).clamp(-1.0, 1.0);
}

torch::Tensor denormalize(const torch::Tensor& features, const ChannelStats& stats) {
  auto batch = as_batch(features);
  check_channels(batch, stats);
  auto [mean, stdv] = stat_tensors(stats, batch.scalar_type());
  return restore_rank(batch * stdv + mean, features);
}

void save_stats(const ChannelStats& stats, const std::filesystem::path& path) {
  if (stats.mean.size() != stats.std.size()) throw ShapeError("stats mean/std length mismatch");
  if (stats.domain_id.empty() || stats.domain_id.find_first_of(" \t\n") != std::string::npos) {
    throw ConfigError("domain id must be non-empty and free of whitespace: '" + stats.domain_id + "'");
  }
  std::ostringstream os;
  os << std::setprecision(17);
  os << "featxlate-stats " << kStatsVersion << "\n";
  os << "domain_id " << stats.domain_id << "\n";
  os << "level " << stats.level << "\n";
  os << "channels " << stats.channels() << "\n";
  os << "count " << stats.count << "\n";
  os << "config_hash " << (stats.config_hash.empty() ? "-" : stats.config_hash) << "\n";
  os << "mean";
  for (double v : stats.mean) os << ' ' << v;
  os << "\nstd";
  for (double v : stats.std) os << ' ' << v;
  os << "\nend\n";
  write_file_atomic(path, os.str());
}

ChannelStats load_stats(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw NotFoundError("stats file not found: " + path.string());
  auto fail = [&](const std::string& why) -> IntegrityError {
    return IntegrityError("invalid stats file " + path.string() + ": " + why);
  };
  auto expect_key = [&](std::istringstream& line, const std::string& key) {
    std::string k;
    line >> k;
    if (k != key) throw fail("expected '" + key + "', found '" + k + "'");
  };
  auto next_line = [&]() {
    std::string line;
    if (!std::getline(in, line)) throw fail("truncated");
    return std::istringstream(line);
  };

  ChannelStats s;
  std::int64_t channels = 0;
  {
    auto line = next_line();
    std::string magic;
    int version = 0;
    line >> magic >> version;
    if (magic != "featxlate-stats") throw fail("bad header");
    if (version != kStatsVersion) throw fail("unsupported version " + std::to_string(version));
  }
  {
    auto line = next_line();
    expect_key(line, "domain_id");
    line >> s.domain_id;
  }
  {
    auto line = next_line();
    expect_key(line, "level");
    line >> s.level;
  }
  {
    auto line = next_line();
    expect_key(line, "channels");
    line >> channels;
  }
  {
    auto line = next_line();
    expect_key(line, "count");
    line >> s.count;
  }
  {
    auto line = next_line();
    expect_key(line, "config_hash");
    line >> s.config_hash;
    if (s.config_hash == "-") s.config_hash.clear();
  }
  auto read_vector = [&](const std::string& key) {
    auto line = next_line();
    expect_key(line, key);
    std::vector<double> v;
    double x;
    while (line >> x) v.push_back(x);
    if (static_cast<std::int64_t>(v.size()) != channels) {
      throw fail(key + " has " + std::to_string(v.size()) + " values, expected " + std::to_string(channels));
    }
    return v;
  };
  s.mean = read_vector("mean");
  s.std = read_vector("std");
  {
    auto line = next_line();
    expect_key(line, "end");
  }
  for (double v : s.std) {
    if (!(v > 0.0)) throw fail("non-positive std");
  }
  return s;
}

std::filesystem::path stats_path(const std::filesystem::path& dir, const std::string& domain_id, int level) {
  return dir / (domain_id + "_L" + std::to_string(level) + ".stats");
}

}  // namespace featxlate
