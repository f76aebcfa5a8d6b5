#pragma once

#include <torch/torch.h>

#include <chrono>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "featxlate/feature_cache.hpp"
#include "featxlate/losses.hpp"
#include "featxlate/networks.hpp"

namespace featxlate {

struct EncoderProfile;
struct TensorArchive;

struct StageSchedule {
  std::int64_t epochs = 400;
  double lr = 1e-4;
  double beta1 = 0.5;
  double beta2 = 0.999;
  std::int64_t batch_size = 10;
  std::int64_t critic_steps = 4;  // critic updates per generator update
  std::uint64_t seed = 0;
  // Stop after this many generator updates (0: run all epochs).
  std::int64_t max_generator_steps = 0;

  void validate() const;
  static StageSchedule inverter_defaults();  // batch size 25
};

struct InverterWeights {
  double reconstruction = 100.0;
  double adversarial = 1.0;
};

enum class StageKind { deepest, conditional, inverter };

struct StageId {
  StageKind kind = StageKind::deepest;
  int level = 5;
  std::string domain;  // inverter stages only

  // "deepest", "conditional_L4", "inverter_<domain>_L3"
  std::string name() const;
  static StageId deepest() { return {StageKind::deepest, 5, {}}; }
  static StageId conditional(int level) { return {StageKind::conditional, level, {}}; }
  static StageId inverter(std::string domain, int level) { return {StageKind::inverter, level, std::move(domain)}; }
};

std::filesystem::path checkpoint_file(const std::filesystem::path& checkpoint_root, const StageId& stage);

// Receives (stage, step, term, value) for every logged loss term.
using MetricsSink = std::function<void(const std::string& stage, std::int64_t step, const std::string& term,
                                       double value)>;

// Appends "step,term,value,wall_time" CSV lines (stage in the first column).
class CsvMetricsLog {
 public:
  explicit CsvMetricsLog(const std::filesystem::path& path);
  MetricsSink sink();

 private:
  std::shared_ptr<std::ofstream> out_;
  std::chrono::steady_clock::time_point start_;
};

// Infinite shuffled index stream over one domain; reshuffles from its own
// RNG after each pass.
class DomainSampler {
 public:
  DomainSampler(std::size_t size, std::size_t batch, std::uint64_t seed);
  std::vector<std::size_t> next();
  std::uint64_t passes() const { return passes_; }

  std::string serialize() const;
  void restore(const std::string& state);

 private:
  void reshuffle();
  std::size_t size_;
  std::size_t batch_;
  std::mt19937_64 rng_;
  std::vector<std::size_t> perm_;
  std::size_t pos_ = 0;
  std::uint64_t passes_ = 0;
};

struct TrainerOptions {
  StageSchedule schedule;
  LossWeights weights;
  InverterWeights inverter_weights;
  std::string config_hash;   // refuses resume on mismatch
  std::string lineage_hash;  // encoder + domains; prerequisites must agree
  std::filesystem::path checkpoint_root;  // empty: no checkpoints written
  MetricsSink metrics;
  double explosion_limit = 1e6;
};

struct StepRecord {
  std::int64_t step = 0;  // optimizer updates so far, critic and generator alike
  bool generator = false;
  std::map<std::string, double> terms;
};

// Optimizer state for one stage: counters, samplers, RNG, networks, Adam moments.
class StageTrainer {
 public:
  virtual ~StageTrainer() = default;

  // One optimisation cycle. Translator stages: critic_steps critic updates,
  // then one joint generator update. Inverter: one discriminator update, one
  // decoder update.
  virtual void run_cycle() = 0;
  // Runs to schedule.epochs (or max_generator_steps), checkpointing after each epoch.
  void train();

  const StageId& stage() const { return stage_; }
  std::int64_t step() const { return step_; }
  std::int64_t critic_updates() const { return critic_updates_; }
  std::int64_t generator_updates() const { return generator_updates_; }
  std::int64_t epoch() const { return epoch_; }
  std::int64_t cycles_per_epoch() const { return cycles_per_epoch_; }
  const std::vector<StepRecord>& trace() const { return trace_; }
  // Values of `term` at generator updates, in order.
  std::vector<double> generator_trace(const std::string& term) const;

  TensorArchive snapshot(bool complete) const;
  void save_checkpoint(const std::filesystem::path& path, bool complete = false) const;
  // Refuses (ConfigError) when the stored config hash or stage differs.
  void resume(const std::filesystem::path& path);

 protected:
  StageTrainer(StageId stage, TrainerOptions options, std::size_t size_a, std::size_t size_b);

  void record(bool generator, std::map<std::string, double> terms);
  virtual void export_networks(TensorArchive& archive) const = 0;
  virtual void import_networks(const TensorArchive& archive) = 0;
  virtual std::vector<std::pair<std::string, torch::optim::Adam*>> optimizers() const = 0;

  StageId stage_;
  TrainerOptions options_;
  std::int64_t batch_ = 0;
  std::int64_t cycles_per_epoch_ = 0;
  std::int64_t step_ = 0;
  std::int64_t critic_updates_ = 0;
  std::int64_t generator_updates_ = 0;
  std::int64_t epoch_ = 0;
  std::int64_t cycle_in_epoch_ = 0;
  DomainSampler sampler_a_;
  DomainSampler sampler_b_;
  at::Generator gen_;
  std::vector<StepRecord> trace_;
};

// The frozen translators of one direction: G^5 plus conditional levels.
struct TranslatorStack {
  DeepTranslator deepest{nullptr};
  std::map<int, ConditionalTranslator> conditional;

  // source: level -> normalised (N, C, s, s) source features. Applies G^5 and
  // then conditional levels down to `stop_level`, returning every translated level.
  std::map<int, torch::Tensor> cascade(const std::map<int, torch::Tensor>& source, int stop_level) const;
  int shallowest_level() const;
};

// Loads the trained translators for one direction ("G_A" or "G_B") for levels
// 5 down to `shallowest`. Throws StageOrderError naming the first missing or
// incomplete prerequisite.
TranslatorStack load_translator_stack(const std::filesystem::path& checkpoint_root, const NetworkFactory& factory,
                                      const std::string& network, int shallowest, const std::string& lineage_hash);

// Deepest-level (unconditional) translator pair with WGAN-GP critics.
class DeepestTrainer : public StageTrainer {
 public:
  DeepestTrainer(const NetworkFactory& factory, NormalizedDomain a5, NormalizedDomain b5, TrainerOptions options);

  void run_cycle() override;

  DeepTranslator g_a{nullptr}, g_b{nullptr};  // g_b: A -> B
  Critic d_a{nullptr}, d_b{nullptr};

 protected:
  void export_networks(TensorArchive& archive) const override;
  void import_networks(const TensorArchive& archive) override;
  std::vector<std::pair<std::string, torch::optim::Adam*>> optimizers() const override;

 private:
  NormalizedDomain a_, b_;
  std::unique_ptr<torch::optim::Adam> opt_g_, opt_d_;
};

// Level-i conditional translator pair. The frozen stacks produce the
// translated level-(i+1) conditioning once per item at construction.
class ConditionalTrainer : public StageTrainer {
 public:
  // a_levels/b_levels: normalised domains for levels i..5 keyed by level.
  ConditionalTrainer(const NetworkFactory& factory, int level, std::map<int, NormalizedDomain> a_levels,
                     std::map<int, NormalizedDomain> b_levels, TranslatorStack frozen_a, TranslatorStack frozen_b,
                     TrainerOptions options);

  void run_cycle() override;

  ConditionalTranslator g_a{nullptr}, g_b{nullptr};
  Critic d_a{nullptr}, d_b{nullptr};
  TranslatorStack frozen_a, frozen_b;  // frozen_b: A -> B translators for levels > i

 protected:
  void export_networks(TensorArchive& archive) const override;
  void import_networks(const TensorArchive& archive) override;
  std::vector<std::pair<std::string, torch::optim::Adam*>> optimizers() const override;

 private:
  int level_;
  torch::Tensor a_i_, a_next_, b_i_, b_next_;
  torch::Tensor b_tilde_next_;  // frozen A -> B translation of level i+1, per A item
  torch::Tensor a_tilde_next_;
  std::unique_ptr<torch::optim::Adam> opt_g_, opt_d_;
};

// Feature-inversion decoder for one (domain, level) with an LSGAN patch discriminator.
class InverterTrainer : public StageTrainer {
 public:
  // features: normalised (N, C, s, s); images: (N, 3, S, S) in [-1, 1], same item order.
  InverterTrainer(const NetworkFactory& factory, std::string domain, int level, torch::Tensor features,
                  torch::Tensor images, TrainerOptions options);

  void run_cycle() override;

  Inverter decoder{nullptr};
  PatchDiscriminator discriminator{nullptr};

 protected:
  void export_networks(TensorArchive& archive) const override;
  void import_networks(const TensorArchive& archive) override;
  std::vector<std::pair<std::string, torch::optim::Adam*>> optimizers() const override;

 private:
  torch::Tensor features_, images_;
  std::unique_ptr<torch::optim::Adam> opt_g_, opt_d_;
};

// Loads a completed inverter checkpoint.
Inverter load_inverter(const std::filesystem::path& checkpoint_root, const NetworkFactory& factory,
                       const std::string& domain, int level, const std::string& lineage_hash);

// Reads the metadata of a checkpoint and checks it is complete and from the
// same lineage; throws StageOrderError otherwise.
TensorArchive load_prerequisite(const std::filesystem::path& checkpoint_root, const StageId& stage,
                                const std::string& lineage_hash);

}  // namespace featxlate
