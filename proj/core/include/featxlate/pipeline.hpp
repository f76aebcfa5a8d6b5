#pragma once

#include <torch/torch.h>

#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "featxlate/encoder.hpp"
#include "featxlate/featnorm.hpp"
#include "featxlate/networks.hpp"
#include "featxlate/training.hpp"

namespace featxlate {

enum class Direction { a_to_b, b_to_a };

std::string to_string(Direction d);
Direction parse_direction(const std::string& s);  // "AtoB" | "BtoA"

struct CascadeSpec {
  Direction direction = Direction::a_to_b;
  std::vector<int> levels = {5, 4, 3};  // contiguous, descending from 5
  int inverter_level = 3;               // must equal levels.back()
  std::string domain_a;
  std::string domain_b;
  std::filesystem::path stats_dir;
  std::filesystem::path checkpoint_root;
  std::string lineage_hash;
  std::string config_hash;

  // Throws ConfigError when levels are not contiguous from 5 or the inverter level differs.
  void validate() const;
  const std::string& source_domain() const { return direction == Direction::a_to_b ? domain_a : domain_b; }
  const std::string& target_domain() const { return direction == Direction::a_to_b ? domain_b : domain_a; }
};

// A loaded, frozen translation cascade for one direction: encoder, source
// statistics, translators for every listed level and the target-domain inverter.
class Cascade {
 public:
  // Every checkpoint and stats file is loaded (and checked) here, before any translation.
  static Cascade load(const Encoder& encoder, const CascadeSpec& spec);
  // Assembles a cascade from in-memory parts (tests, benchmarks).
  Cascade(Encoder encoder, CascadeSpec spec, std::map<int, ChannelStats> source_stats, TranslatorStack stack,
          Inverter inverter);

  const CascadeSpec& spec() const { return spec_; }
  const Encoder& encoder() const { return encoder_; }

  // Normalised source features for the cascade's levels; image (3,S,S) in [0,1].
  std::map<int, torch::Tensor> encode(const torch::Tensor& image) const;
  // Translated features b~_{stop_level}, (C, s, s). stop_level must be within the trained levels.
  torch::Tensor translate_to_level(const torch::Tensor& image, int stop_level) const;
  // Every intermediate translated level, keyed by level, each (C, s, s).
  std::map<int, torch::Tensor> translate_levels(const torch::Tensor& image) const;
  // (3, S, S) float in (-1, 1).
  torch::Tensor translate_image(const torch::Tensor& image) const;
  // Renders translated features of the inverter level.
  torch::Tensor invert(const torch::Tensor& features) const;

 private:
  Encoder encoder_;
  CascadeSpec spec_;
  std::map<int, ChannelStats> source_stats_;
  TranslatorStack stack_;
  Inverter inverter_{nullptr};
};

struct ManifestEntry {
  std::string input;
  std::string output;  // empty when skipped
  std::string direction;
  std::string config_hash;
  std::string status;  // "ok" | "skipped"
  std::string reason;
};

// Translates every image under `input_dir` (recursively, sorted) into
// `output_dir` as PNG, mirroring relative paths. Undecodable inputs are
// skipped and recorded. Writes <output_dir>/manifest.jsonl.
std::vector<ManifestEntry> batch_translate(const Cascade& cascade, const std::filesystem::path& input_dir,
                                           const std::filesystem::path& output_dir);

// Loads, eval-crops to the encoder side and translates one file; returns uint8 (3,S,S).
torch::Tensor translate_file(const Cascade& cascade, const std::filesystem::path& input);

}  // namespace featxlate
