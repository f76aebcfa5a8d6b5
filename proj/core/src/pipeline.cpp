#include "featxlate/pipeline.hpp"

#include <algorithm>
#include <json.hpp>
#include <random>

#include "featxlate/archive.hpp"
#include "featxlate/data.hpp"
#include "featxlate/error.hpp"

namespace featxlate {

namespace fs = std::filesystem;

std::string to_string(Direction d) { return d == Direction::a_to_b ? "AtoB" : "BtoA"; }

Direction parse_direction(const std::string& s) {
  if (s == "AtoB") return Direction::a_to_b;
  if (s == "BtoA") return Direction::b_to_a;
  throw ConfigError("direction must be AtoB or BtoA, got '" + s + "'");
}

void CascadeSpec::validate() const {
  if (levels.empty() || levels.front() != kNumLevels) throw ConfigError("cascade levels must start at 5");
  for (std::size_t i = 1; i < levels.size(); ++i) {
    if (levels[i] != levels[i - 1] - 1) throw ConfigError("cascade levels must be contiguous and descending");
  }
  if (levels.back() < 1) throw ConfigError("cascade levels must be >= 1");
  if (inverter_level != levels.back()) {
    throw ConfigError("inverter level " + std::to_string(inverter_level) + " must equal the shallowest trained level " +
                      std::to_string(levels.back()));
  }
}

Cascade::Cascade(Encoder encoder, CascadeSpec spec, std::map<int, ChannelStats> source_stats, TranslatorStack stack,
                 Inverter inverter)
    : encoder_(std::move(encoder)),
      spec_(std::move(spec)),
      source_stats_(std::move(source_stats)),
      stack_(std::move(stack)),
      inverter_(std::move(inverter)) {
  spec_.validate();
  for (int level : spec_.levels) {
    auto it = source_stats_.find(level);
    if (it == source_stats_.end()) throw NotFoundError("no source statistics for level " + std::to_string(level));
    if (it->second.channels() != encoder_.profile().tap(level).channels) {
      throw ShapeError("statistics for level " + std::to_string(level) + " have " +
                       std::to_string(it->second.channels()) + " channels but the encoder tap has " +
                       std::to_string(encoder_.profile().tap(level).channels));
    }
  }
}

Cascade Cascade::load(const Encoder& encoder, const CascadeSpec& spec) {
  spec.validate();
  std::map<int, ChannelStats> stats;
  for (int level : spec.levels) {
    auto s = load_stats(stats_path(spec.stats_dir, spec.source_domain(), level));
    if (!spec.lineage_hash.empty() && !s.config_hash.empty() && s.config_hash != spec.lineage_hash) {
      throw StageOrderError("statistics for " + spec.source_domain() + " level " + std::to_string(level) +
                            " were computed under a different encoder/domain configuration; rerun `featxlate stats`");
    }
    stats.emplace(level, std::move(s));
  }
  NetworkFactory factory(encoder.profile());
  const std::string network = spec.direction == Direction::a_to_b ? "G_B" : "G_A";
  auto stack = load_translator_stack(spec.checkpoint_root, factory, network, spec.levels.back(), spec.lineage_hash);
  auto inverter = load_inverter(spec.checkpoint_root, factory, spec.target_domain(), spec.inverter_level,
                                spec.lineage_hash);
  return Cascade(encoder, spec, std::move(stats), std::move(stack), std::move(inverter));
}

std::map<int, torch::Tensor> Cascade::encode(const torch::Tensor& image) const {
  auto raw = encoder_.extract_levels(image.unsqueeze(0), spec_.levels);
  std::map<int, torch::Tensor> out;
  for (auto& [level, t] : raw) out[level] = normalize(t, source_stats_.at(level));
  return out;
}

std::map<int, torch::Tensor> Cascade::translate_levels(const torch::Tensor& image) const {
  auto translated = stack_.cascade(encode(image), spec_.levels.back());
  for (auto& [level, t] : translated) t = t.squeeze(0);
  return translated;
}

torch::Tensor Cascade::translate_to_level(const torch::Tensor& image, int stop_level) const {
  if (std::find(spec_.levels.begin(), spec_.levels.end(), stop_level) == spec_.levels.end()) {
    throw Error("level " + std::to_string(stop_level) + " is outside the trained cascade (5.." +
                std::to_string(spec_.levels.back()) + ")");
  }
  return stack_.cascade(encode(image), stop_level).at(stop_level).squeeze(0);
}

torch::Tensor Cascade::invert(const torch::Tensor& features) const {
  torch::NoGradGuard no_grad;
  auto batched = features.dim() == 3 ? features.unsqueeze(0) : features;
  auto inverter = inverter_;
  auto out = inverter->forward(batched);
  return features.dim() == 3 ? out.squeeze(0) : out;
}

torch::Tensor Cascade::translate_image(const torch::Tensor& image) const {
  return invert(translate_to_level(image, spec_.levels.back()));
}

torch::Tensor translate_file(const Cascade& cascade, const fs::path& input) {
  std::mt19937_64 unused(0);
  auto image = augment(load_image(input), AugmentPolicy::eval, unused, cascade.encoder().profile().input_side);
  return to_uint8_image(cascade.translate_image(image));
}

std::vector<ManifestEntry> batch_translate(const Cascade& cascade, const fs::path& input_dir, const fs::path& output_dir) {
  if (!fs::is_directory(input_dir)) throw NotFoundError("input folder not found: " + input_dir.string());
  std::vector<fs::path> inputs;
  for (const auto& e : fs::recursive_directory_iterator(input_dir)) {
    if (e.is_regular_file() && is_image_path(e.path())) inputs.push_back(e.path());
  }
  std::sort(inputs.begin(), inputs.end());
  fs::create_directories(output_dir);

  std::vector<ManifestEntry> manifest;
  std::string lines;
  for (const auto& in : inputs) {
    ManifestEntry entry;
    entry.input = in.string();
    entry.direction = to_string(cascade.spec().direction);
    entry.config_hash = cascade.spec().config_hash;
    try {
      auto rgb = translate_file(cascade, in);
      auto out = output_dir / fs::relative(in, input_dir);
      out.replace_extension(".png");
      write_image(out, rgb);
      entry.output = out.string();
      entry.status = "ok";
    } catch (const IoError& e) {
      entry.status = "skipped";
      entry.reason = e.what();
    }
    nlohmann::json j = {{"input", entry.input},   {"output", entry.output}, {"direction", entry.direction},
                        {"config_hash", entry.config_hash}, {"status", entry.status}, {"reason", entry.reason}};
    lines += j.dump() + "\n";
    manifest.push_back(std::move(entry));
  }
  write_file_atomic(output_dir / "manifest.jsonl", lines);
  return manifest;
}

}  // namespace featxlate
