#include "featxlate/config.hpp"

#include <cstdlib>
#include <fstream>
#include <iomanip>
#include <sstream>

#include "featxlate/error.hpp"

namespace featxlate {

namespace fs = std::filesystem;
using json = nlohmann::json;

namespace {

json schedule_json(const StageSchedule& s) {
  return {{"epochs", s.epochs},         {"lr", s.lr},
          {"beta1", s.beta1},           {"beta2", s.beta2},
          {"batch_size", s.batch_size}, {"critic_steps", s.critic_steps},
          {"seed", s.seed},             {"max_generator_steps", s.max_generator_steps}};
}

json domain_json(const std::string& id) {
  return {{"id", id},
          {"folder", ""},
          {"coco", {{"annotations", ""}, {"category", ""}, {"images_root", ""}, {"min_area_fraction", 0.0}}}};
}

void merge(json& base, const json& patch) {
  for (auto it = patch.begin(); it != patch.end(); ++it) {
    if (it.value().is_object() && base.contains(it.key()) && base[it.key()].is_object()) {
      merge(base[it.key()], it.value());
    } else {
      base[it.key()] = it.value();
    }
  }
}

template <typename T>
T get(const json& j, const std::string& path) {
  try {
    return j.get<T>();
  } catch (const json::exception& e) {
    throw ConfigError("config key '" + path + "' has the wrong type: " + e.what());
  }
}

StageSchedule parse_schedule(const json& j, const std::string& path) {
  StageSchedule s;
  s.epochs = get<std::int64_t>(j.at("epochs"), path + ".epochs");
  s.lr = get<double>(j.at("lr"), path + ".lr");
  s.beta1 = get<double>(j.at("beta1"), path + ".beta1");
  s.beta2 = get<double>(j.at("beta2"), path + ".beta2");
  s.batch_size = get<std::int64_t>(j.at("batch_size"), path + ".batch_size");
  s.critic_steps = get<std::int64_t>(j.at("critic_steps"), path + ".critic_steps");
  s.seed = get<std::uint64_t>(j.at("seed"), path + ".seed");
  s.max_generator_steps = get<std::int64_t>(j.at("max_generator_steps"), path + ".max_generator_steps");
  try {
    s.validate();
  } catch (const ConfigError& e) {
    throw ConfigError(path + ": " + e.what());
  }
  return s;
}

DomainSource parse_domain(const json& j, const std::string& path) {
  DomainSource d;
  d.id = get<std::string>(j.at("id"), path + ".id");
  if (d.id.empty() || d.id.find_first_of(" \t\n/\\") != std::string::npos) {
    throw ConfigError("config key '" + path + ".id' must be a non-empty name without spaces or slashes");
  }
  d.folder = get<std::string>(j.at("folder"), path + ".folder");
  const auto& coco = j.at("coco");
  d.coco_annotations = get<std::string>(coco.at("annotations"), path + ".coco.annotations");
  d.coco_category = get<std::string>(coco.at("category"), path + ".coco.category");
  d.coco_images_root = get<std::string>(coco.at("images_root"), path + ".coco.images_root");
  d.coco_min_area_fraction = get<double>(coco.at("min_area_fraction"), path + ".coco.min_area_fraction");
  return d;
}

fs::path path_or(const json& j, const std::string& key, const fs::path& fallback) {
  auto v = get<std::string>(j.at(key), "paths." + key);
  return v.empty() ? fallback : fs::path(v);
}

}  // namespace

json default_config() {
  return {
      {"encoder",
       {{"profile", "vgg19"},
        {"weights", ""},
        {"random_weights", false},
        {"seed", 0},
        {"channels", {8, 16, 32, 64, 64}},
        {"input_side", 64},
        {"embedding_dim", 32}}},
      {"domains", {{"A", domain_json("A")}, {"B", domain_json("B")}}},
      {"levels", {5, 4, 3}},
      {"stage", {{"kind", "deepest"}, {"level", 5}, {"domain", "A"}}},
      {"schedule", schedule_json(StageSchedule{})},
      {"inverter_schedule", schedule_json(StageSchedule::inverter_defaults())},
      {"loss_weights",
       {{"gp", 10.0}, {"cyc", 100.0}, {"idty", 100.0}, {"inverter_reconstruction", 100.0},
        {"inverter_adversarial", 1.0}}},
      {"translate", {{"direction", "AtoB"}}},
      {"evaluate", {{"method", "tsne"}, {"perplexity", 30.0}, {"iterations", 1000}, {"seed", 0}, {"dataset", ""}}},
      {"paths", {{"cache", ""}, {"stats", ""}, {"checkpoints", ""}, {"logs", ""}, {"results", ""}}},
  };
}

void validate_keys(const json& user, const json& schema, const std::string& path) {
  if (!user.is_object()) {
    if (schema.is_object()) throw ConfigError("config key '" + (path.empty() ? "<root>" : path) + "' must be an object");
    return;
  }
  if (!schema.is_object()) throw ConfigError("config key '" + path + "' must not be an object");
  for (auto it = user.begin(); it != user.end(); ++it) {
    const auto key_path = path.empty() ? it.key() : path + "." + it.key();
    if (!schema.contains(it.key())) throw ConfigError("unknown config key '" + key_path + "'");
    validate_keys(it.value(), schema.at(it.key()), key_path);
  }
}

void apply_override(json& config, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0) throw ConfigError("override must look like key.path=value: " + assignment);
  const auto key = assignment.substr(0, eq);
  const auto raw = assignment.substr(eq + 1);
  json value;
  try {
    value = json::parse(raw);
  } catch (const json::exception&) {
    value = raw;
  }
  json patch = value;
  std::vector<std::string> parts;
  std::stringstream ss(key);
  std::string part;
  while (std::getline(ss, part, '.')) parts.push_back(part);
  for (auto it = parts.rbegin(); it != parts.rend(); ++it) patch = json{{*it, patch}};
  validate_keys(patch, default_config());
  merge(config, patch);
}

std::string hash_hex(const std::string& bytes) {
  std::uint64_t h = 1469598103934665603ull;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 1099511628211ull;
  }
  std::ostringstream os;
  os << std::hex << std::setw(16) << std::setfill('0') << h;
  return os.str();
}

std::string RunConfig::config_hash() const {
  auto j = effective;
  j.erase("paths");
  return hash_hex(j.dump());
}

std::string RunConfig::lineage_hash() const {
  json j = {{"encoder", effective.at("encoder")}, {"domains", effective.at("domains")}, {"levels", effective.at("levels")}};
  return hash_hex(j.dump());
}

const DomainSource& RunConfig::domain(const std::string& which) const {
  if (which == "A") return domain_a;
  if (which == "B") return domain_b;
  throw ConfigError("domain selector must be 'A' or 'B', got '" + which + "'");
}

RunConfig parse_config(const json& user, const std::vector<std::string>& overrides) {
  validate_keys(user, default_config());
  json eff = default_config();
  merge(eff, user);
  for (const auto& o : overrides) apply_override(eff, o);

  RunConfig c;
  c.effective = eff;
  const auto& enc = eff.at("encoder");
  c.encoder_profile = get<std::string>(enc.at("profile"), "encoder.profile");
  if (c.encoder_profile != "vgg19" && c.encoder_profile != "toy") {
    throw ConfigError("config key 'encoder.profile' must be 'vgg19' or 'toy'");
  }
  c.encoder_weights = get<std::string>(enc.at("weights"), "encoder.weights");
  c.encoder_random_weights = get<bool>(enc.at("random_weights"), "encoder.random_weights");
  c.encoder_seed = get<std::uint64_t>(enc.at("seed"), "encoder.seed");
  auto channels = get<std::vector<std::int64_t>>(enc.at("channels"), "encoder.channels");
  if (channels.size() != kNumLevels) throw ConfigError("config key 'encoder.channels' needs exactly 5 entries");
  std::copy(channels.begin(), channels.end(), c.toy_channels.begin());
  c.toy_input_side = get<std::int64_t>(enc.at("input_side"), "encoder.input_side");
  c.toy_embedding_dim = get<std::int64_t>(enc.at("embedding_dim"), "encoder.embedding_dim");

  c.domain_a = parse_domain(eff.at("domains").at("A"), "domains.A");
  c.domain_b = parse_domain(eff.at("domains").at("B"), "domains.B");
  if (c.domain_a.id == c.domain_b.id) throw ConfigError("domains.A.id and domains.B.id must differ");

  c.levels = get<std::vector<int>>(eff.at("levels"), "levels");
  if (c.levels.empty() || c.levels.front() != kNumLevels) throw ConfigError("config key 'levels' must start at 5");
  for (std::size_t i = 1; i < c.levels.size(); ++i) {
    if (c.levels[i] != c.levels[i - 1] - 1 || c.levels[i] < 1) {
      throw ConfigError("config key 'levels' must be contiguous and descending from 5");
    }
  }

  const auto& st = eff.at("stage");
  const auto kind = get<std::string>(st.at("kind"), "stage.kind");
  const auto level = get<int>(st.at("level"), "stage.level");
  const auto domain = get<std::string>(st.at("domain"), "stage.domain");
  if (kind == "deepest") {
    c.stage = StageId::deepest();
  } else if (kind == "conditional") {
    if (level < 1 || level > 4) throw ConfigError("config key 'stage.level' must be 1..4 for conditional stages");
    c.stage = StageId::conditional(level);
  } else if (kind == "inverter") {
    if (level < 1 || level > 5) throw ConfigError("config key 'stage.level' must be 1..5 for inverter stages");
    if (domain != "A" && domain != "B") throw ConfigError("config key 'stage.domain' must be 'A' or 'B'");
    c.stage = StageId::inverter(domain == "A" ? c.domain_a.id : c.domain_b.id, level);
  } else {
    throw ConfigError("config key 'stage.kind' must be deepest, conditional or inverter");
  }

  c.schedule = parse_schedule(eff.at("schedule"), "schedule");
  c.inverter_schedule = parse_schedule(eff.at("inverter_schedule"), "inverter_schedule");
  const auto& lw = eff.at("loss_weights");
  c.weights.gp = get<double>(lw.at("gp"), "loss_weights.gp");
  c.weights.cyc = get<double>(lw.at("cyc"), "loss_weights.cyc");
  c.weights.idty = get<double>(lw.at("idty"), "loss_weights.idty");
  c.inverter_weights.reconstruction = get<double>(lw.at("inverter_reconstruction"), "loss_weights.inverter_reconstruction");
  c.inverter_weights.adversarial = get<double>(lw.at("inverter_adversarial"), "loss_weights.inverter_adversarial");
  try {
    c.weights.validate();
  } catch (const ConfigError& e) {
    throw ConfigError(std::string("loss_weights: ") + e.what());
  }
  if (c.inverter_weights.reconstruction < 0 || c.inverter_weights.adversarial < 0) {
    throw ConfigError("loss_weights: inverter weights must be non-negative");
  }

  c.direction = get<std::string>(eff.at("translate").at("direction"), "translate.direction");
  if (c.direction != "AtoB" && c.direction != "BtoA") throw ConfigError("config key 'translate.direction' must be AtoB or BtoA");

  const auto& ev = eff.at("evaluate");
  c.eval_method = get<std::string>(ev.at("method"), "evaluate.method");
  if (c.eval_method != "tsne" && c.eval_method != "pca") throw ConfigError("config key 'evaluate.method' must be tsne or pca");
  c.eval_perplexity = get<double>(ev.at("perplexity"), "evaluate.perplexity");
  c.eval_iterations = get<int>(ev.at("iterations"), "evaluate.iterations");
  c.eval_seed = get<std::uint64_t>(ev.at("seed"), "evaluate.seed");
  c.eval_dataset = get<std::string>(ev.at("dataset"), "evaluate.dataset");
  if (c.eval_dataset.empty()) c.eval_dataset = c.domain_a.id + "_" + c.domain_b.id;

  const auto& p = eff.at("paths");
  fs::path cache_default = "featxlate_cache";
  if (const char* env = std::getenv("FEATXLATE_CACHE_ROOT"); env && *env) cache_default = env;
  c.cache_dir = path_or(p, "cache", cache_default);
  c.stats_dir = path_or(p, "stats", "runs/stats");
  c.checkpoint_dir = path_or(p, "checkpoints", "runs/checkpoints");
  c.log_dir = path_or(p, "logs", "runs/logs");
  c.results_dir = path_or(p, "results", "runs/results");
  return c;
}

RunConfig load_config(const fs::path& path, const std::vector<std::string>& overrides) {
  std::ifstream in(path);
  if (!in) throw NotFoundError("config file not found: " + path.string());
  json user;
  try {
    user = json::parse(in);
  } catch (const json::exception& e) {
    throw ConfigError("cannot parse config " + path.string() + ": " + e.what());
  }
  return parse_config(user, overrides);
}

Encoder make_encoder(const RunConfig& c) {
  if (c.encoder_profile == "toy") {
    return Encoder::make_toy(c.encoder_seed, c.toy_channels, c.toy_input_side, c.toy_embedding_dim);
  }
  if (!c.encoder_weights.empty()) return Encoder::load_vgg19(c.encoder_weights);
  if (c.encoder_random_weights) return Encoder::random_vgg19(c.encoder_seed);
  throw ConfigError("config key 'encoder.weights' is required for the vgg19 profile (or set encoder.random_weights)");
}

}  // namespace featxlate
