#pragma once

#include <filesystem>
#include <json.hpp>
#include <string>
#include <vector>

#include "featxlate/encoder.hpp"
#include "featxlate/losses.hpp"
#include "featxlate/training.hpp"

namespace featxlate {

// Run configuration (JSON). Every key, with its default:
//
// {
//   "encoder":  {"profile": "vgg19" | "toy", "weights": "", "random_weights": false, "seed": 0,
//                "channels": [8,16,32,64,64], "input_side": 64, "embedding_dim": 32},
//   "domains":  {"A": {"id": "A", "folder": "", "coco": {"annotations": "", "category": "",
//                                                        "images_root": "", "min_area_fraction": 0.0}},
//                "B": { same as A }},
//   "levels":   [5, 4, 3],
//   "stage":    {"kind": "deepest" | "conditional" | "inverter", "level": 5, "domain": "A" | "B"},
//   "schedule": {"epochs": 400, "lr": 1e-4, "beta1": 0.5, "beta2": 0.999, "batch_size": 10,
//                "critic_steps": 4, "seed": 0, "max_generator_steps": 0},
//   "inverter_schedule": { same keys; batch_size 25 },
//   "loss_weights": {"gp": 10, "cyc": 100, "idty": 100,
//                    "inverter_reconstruction": 100, "inverter_adversarial": 1},
//   "translate": {"direction": "AtoB"},
//   "evaluate":  {"method": "tsne" | "pca", "perplexity": 30, "iterations": 1000, "seed": 0, "dataset": ""},
//   "paths":    {"cache": "", "stats": "", "checkpoints": "", "logs": "", "results": ""}
// }
//
// Unknown keys are rejected with their key path. "channels", "input_side" and
// "embedding_dim" only apply to the toy profile. An empty paths.cache falls back
// to $FEATXLATE_CACHE_ROOT, then to "featxlate_cache"; other empty paths
// default to "runs/<name>".
struct DomainSource {
  std::string id;
  std::filesystem::path folder;
  std::filesystem::path coco_annotations;
  std::string coco_category;
  std::filesystem::path coco_images_root;
  double coco_min_area_fraction = 0.0;

  bool is_coco() const { return !coco_category.empty(); }
};

struct RunConfig {
  nlohmann::json effective;  // defaults merged with file and overrides

  std::string encoder_profile = "vgg19";
  std::filesystem::path encoder_weights;
  bool encoder_random_weights = false;
  std::uint64_t encoder_seed = 0;
  std::array<std::int64_t, kNumLevels> toy_channels = {8, 16, 32, 64, 64};
  std::int64_t toy_input_side = 64;
  std::int64_t toy_embedding_dim = 32;

  DomainSource domain_a, domain_b;
  std::vector<int> levels = {5, 4, 3};
  StageId stage;
  StageSchedule schedule;
  StageSchedule inverter_schedule = StageSchedule::inverter_defaults();
  LossWeights weights;
  InverterWeights inverter_weights;
  std::string direction = "AtoB";

  std::string eval_method = "tsne";
  double eval_perplexity = 30.0;
  int eval_iterations = 1000;
  std::uint64_t eval_seed = 0;
  std::string eval_dataset;

  std::filesystem::path cache_dir, stats_dir, checkpoint_dir, log_dir, results_dir;

  // Hash of everything except "paths"; stamped into checkpoints, manifests and ledger rows.
  std::string config_hash() const;
  // Hash of encoder, domains and levels; shared by every stage of one experiment.
  std::string lineage_hash() const;

  const DomainSource& domain(const std::string& which) const;  // "A" | "B"
};

nlohmann::json default_config();

// Throws ConfigError naming the offending key path.
void validate_keys(const nlohmann::json& user, const nlohmann::json& schema, const std::string& path = "");

// key.path=value, value parsed as JSON when possible, else taken as a string.
void apply_override(nlohmann::json& config, const std::string& assignment);

RunConfig parse_config(const nlohmann::json& user, const std::vector<std::string>& overrides = {});
RunConfig load_config(const std::filesystem::path& path, const std::vector<std::string>& overrides = {});

std::string hash_hex(const std::string& bytes);  // FNV-1a 64

Encoder make_encoder(const RunConfig& config);

}  // namespace featxlate
