#include "featxlate/training.hpp"

#include <ATen/CPUGeneratorImpl.h>

#include <cmath>
#include <cstring>
#include <numeric>
#include <fstream>
#include <json.hpp>
#include <sstream>

#include "featxlate/archive.hpp"
#include "featxlate/encoder.hpp"
#include "featxlate/error.hpp"

namespace featxlate {

namespace fs = std::filesystem;
using json = nlohmann::json;

// ---------------------------------------------------------------------------
// Schedule, stage ids, metrics

void StageSchedule::validate() const {
  if (epochs <= 0) throw ConfigError("schedule.epochs must be positive");
  if (!(lr > 0)) throw ConfigError("schedule.lr must be positive");
  if (!(beta1 >= 0 && beta1 < 1) || !(beta2 >= 0 && beta2 < 1)) throw ConfigError("Adam betas must lie in [0, 1)");
  if (batch_size <= 0) throw ConfigError("schedule.batch_size must be positive");
  if (critic_steps < 1) throw ConfigError("schedule.critic_steps must be >= 1");
  if (max_generator_steps < 0) throw ConfigError("schedule.max_generator_steps must be >= 0");
}

StageSchedule StageSchedule::inverter_defaults() {
  StageSchedule s;
  s.batch_size = 25;
  return s;
}

std::string StageId::name() const {
  switch (kind) {
    case StageKind::deepest: return "deepest";
    case StageKind::conditional: return "conditional_L" + std::to_string(level);
    case StageKind::inverter: return "inverter_" + domain + "_L" + std::to_string(level);
  }
  return "?";
}

fs::path checkpoint_file(const fs::path& checkpoint_root, const StageId& stage) {
  return checkpoint_root / stage.name() / "latest.fxar";
}

CsvMetricsLog::CsvMetricsLog(const fs::path& path) : start_(std::chrono::steady_clock::now()) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  const bool fresh = !fs::exists(path) || fs::file_size(path) == 0;
  out_ = std::make_shared<std::ofstream>(path, std::ios::app);
  if (!*out_) throw IoError("cannot open metrics log " + path.string());
  if (fresh) *out_ << "stage,step,term,value,wall_time\n";
}

MetricsSink CsvMetricsLog::sink() {
  auto out = out_;
  auto start = start_;
  return [out, start](const std::string& stage, std::int64_t step, const std::string& term, double value) {
    const double wall = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    std::ostringstream line;
    line.precision(9);
    line << stage << ',' << step << ',' << term << ',' << value << ',' << wall << '\n';
    *out << line.str();
    out->flush();
  };
}

// ---------------------------------------------------------------------------
// DomainSampler

DomainSampler::DomainSampler(std::size_t size, std::size_t batch, std::uint64_t seed)
    : size_(size), batch_(batch), rng_(seed) {
  if (size == 0) throw Error("cannot sample from an empty domain");
  perm_.resize(size_);
  reshuffle();
}

void DomainSampler::reshuffle() {
  std::iota(perm_.begin(), perm_.end(), 0);
  // Fisher-Yates with the raw engine output so the order is library-independent.
  for (std::size_t i = size_ - 1; i > 0; --i) {
    std::size_t j = static_cast<std::size_t>(rng_() % (i + 1));
    std::swap(perm_[i], perm_[j]);
  }
  pos_ = 0;
}

std::vector<std::size_t> DomainSampler::next() {
  std::vector<std::size_t> out;
  out.reserve(batch_);
  while (out.size() < batch_) {
    if (pos_ == size_) {
      ++passes_;
      reshuffle();
    }
    out.push_back(perm_[pos_++]);
  }
  return out;
}

std::string DomainSampler::serialize() const {
  std::ostringstream os;
  os << size_ << ' ' << batch_ << ' ' << pos_ << ' ' << passes_;
  for (auto p : perm_) os << ' ' << p;
  os << ' ' << rng_;
  return os.str();
}

void DomainSampler::restore(const std::string& state) {
  std::istringstream is(state);
  std::size_t size = 0, batch = 0;
  is >> size >> batch >> pos_ >> passes_;
  if (size != size_ || batch != batch_) throw ConfigError("sampler state was saved for a different domain size/batch");
  for (auto& p : perm_) is >> p;
  is >> rng_;
  if (!is) throw IntegrityError("corrupt sampler state");
}

// ---------------------------------------------------------------------------
// StageTrainer

namespace {

void export_adam(const torch::optim::Adam& opt, const std::string& prefix, TensorArchive& ar) {
  const auto& params = opt.param_groups().at(0).params();
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto it = opt.state().find(params[i].unsafeGetTensorImpl());
    if (it == opt.state().end()) continue;
    const auto& st = static_cast<const torch::optim::AdamParamState&>(*it->second);
    const auto base = prefix + "/" + std::to_string(i) + "/";
    ar.tensors[base + "step"] = torch::tensor({st.step()}, torch::kInt64);
    ar.tensors[base + "exp_avg"] = st.exp_avg().clone();
    ar.tensors[base + "exp_avg_sq"] = st.exp_avg_sq().clone();
  }
}

void import_adam(torch::optim::Adam& opt, const std::string& prefix, const TensorArchive& ar) {
  const auto& params = opt.param_groups().at(0).params();
  opt.state().clear();
  for (std::size_t i = 0; i < params.size(); ++i) {
    const auto base = prefix + "/" + std::to_string(i) + "/";
    if (!ar.contains(base + "step")) continue;
    auto st = std::make_unique<torch::optim::AdamParamState>();
    st->step(ar.at(base + "step").item<std::int64_t>());
    auto avg = ar.at(base + "exp_avg");
    auto avg_sq = ar.at(base + "exp_avg_sq");
    if (avg.sizes() != params[i].sizes() || avg_sq.sizes() != params[i].sizes()) {
      throw IntegrityError("optimizer state '" + base + "' does not match parameter shape");
    }
    st->exp_avg(avg.clone());
    st->exp_avg_sq(avg_sq.clone());
    opt.state()[params[i].unsafeGetTensorImpl()] = std::move(st);
  }
}

std::unique_ptr<torch::optim::Adam> make_adam(std::vector<torch::Tensor> params, const StageSchedule& s) {
  return std::make_unique<torch::optim::Adam>(
      std::move(params), torch::optim::AdamOptions(s.lr).betas(std::make_tuple(s.beta1, s.beta2)));
}

std::vector<torch::Tensor> concat(std::vector<torch::Tensor> a, const std::vector<torch::Tensor>& b) {
  a.insert(a.end(), b.begin(), b.end());
  return a;
}

CriticFn critic_fn(Critic critic) {
  return [critic](const torch::Tensor& x) mutable { return critic->forward(x); };
}

ConditionalFn conditional_fn(ConditionalTranslator g) {
  return [g](const torch::Tensor& source, const torch::Tensor& content) mutable { return g->forward(source, content); };
}

torch::Tensor select(const torch::Tensor& t, const std::vector<std::size_t>& idx) {
  std::vector<std::int64_t> i(idx.begin(), idx.end());
  return t.index_select(0, torch::tensor(i, torch::kInt64));
}

}  // namespace

StageTrainer::StageTrainer(StageId stage, TrainerOptions options, std::size_t size_a, std::size_t size_b)
    : stage_(std::move(stage)),
      options_(std::move(options)),
      batch_(std::min<std::int64_t>(options_.schedule.batch_size,
                                    static_cast<std::int64_t>(std::min(size_a, size_b)))),
      cycles_per_epoch_(0),
      sampler_a_(size_a, static_cast<std::size_t>(batch_), options_.schedule.seed * 2 + 1),
      sampler_b_(size_b, static_cast<std::size_t>(batch_), options_.schedule.seed * 2 + 2),
      gen_(at::make_generator<at::CPUGeneratorImpl>(options_.schedule.seed + 0x5eed)) {
  options_.schedule.validate();
  options_.weights.validate();
  const auto larger = static_cast<std::int64_t>(std::max(size_a, size_b));
  cycles_per_epoch_ = (larger + batch_ - 1) / batch_;
  // Network initialisation inside derived constructors draws from the global generator.
  torch::manual_seed(options_.schedule.seed);
}

void StageTrainer::train() {
  const auto& s = options_.schedule;
  auto checkpoint = [&](bool complete) {
    if (!options_.checkpoint_root.empty()) save_checkpoint(checkpoint_file(options_.checkpoint_root, stage_), complete);
  };
  auto budget_spent = [&] { return s.max_generator_steps > 0 && generator_updates_ >= s.max_generator_steps; };
  while (epoch_ < s.epochs && !budget_spent()) {
    while (cycle_in_epoch_ < cycles_per_epoch_ && !budget_spent()) {
      run_cycle();
      ++cycle_in_epoch_;
    }
    if (cycle_in_epoch_ == cycles_per_epoch_) {
      ++epoch_;
      cycle_in_epoch_ = 0;
    }
    checkpoint(epoch_ >= s.epochs || budget_spent());
  }
}

std::vector<double> StageTrainer::generator_trace(const std::string& term) const {
  std::vector<double> out;
  for (const auto& r : trace_) {
    if (!r.generator) continue;
    auto it = r.terms.find(term);
    if (it != r.terms.end()) out.push_back(it->second);
  }
  return out;
}

void StageTrainer::record(bool generator, std::map<std::string, double> terms) {
  for (const auto& [term, value] : terms) {
    if (options_.metrics) options_.metrics(stage_.name(), step_, term, value);
  }
  for (const auto& [term, value] : terms) {
    if (!std::isfinite(value) || std::abs(value) > options_.explosion_limit) {
      std::string where = "stage " + stage_.name() + " step " + std::to_string(step_) + ": loss term '" + term +
                          "' = " + std::to_string(value);
      if (!options_.checkpoint_root.empty()) {
        auto diag = options_.checkpoint_root / stage_.name() / "diagnostic.fxar";
        save_checkpoint(diag, false);
        where += " (diagnostic checkpoint: " + diag.string() + ")";
      }
      throw NumericError("training diverged at " + where);
    }
  }
  trace_.push_back({step_, generator, std::move(terms)});
}

TensorArchive StageTrainer::snapshot(bool complete) const {
  TensorArchive ar;
  json meta;
  meta["stage"] = stage_.name();
  meta["config_hash"] = options_.config_hash;
  meta["lineage_hash"] = options_.lineage_hash;
  meta["epoch"] = epoch_;
  meta["cycle_in_epoch"] = cycle_in_epoch_;
  meta["step"] = step_;
  meta["critic_updates"] = critic_updates_;
  meta["generator_updates"] = generator_updates_;
  meta["complete"] = complete;
  meta["sampler_a"] = sampler_a_.serialize();
  meta["sampler_b"] = sampler_b_.serialize();
  ar.meta = meta.dump();
  export_networks(ar);
  for (const auto& [name, opt] : optimizers()) export_adam(*opt, stage_.name() + "/" + name, ar);
  ar.tensors[stage_.name() + "/rng/gp_eps"] = gen_.get_state();
  return ar;
}

void StageTrainer::save_checkpoint(const fs::path& path, bool complete) const { snapshot(complete).save(path); }

void StageTrainer::resume(const fs::path& path) {
  auto ar = TensorArchive::load(path);
  json meta = json::parse(ar.meta);
  if (meta.value("stage", "") != stage_.name()) {
    throw ConfigError("checkpoint " + path.string() + " belongs to stage '" + meta.value("stage", "") +
                      "', not '" + stage_.name() + "'");
  }
  if (meta.value("config_hash", "") != options_.config_hash) {
    throw ConfigError("refusing to resume " + path.string() + ": it was written with config hash " +
                      meta.value("config_hash", "") + " but the current config hash is " + options_.config_hash);
  }
  import_networks(ar);
  for (const auto& [name, opt] : optimizers()) import_adam(*opt, stage_.name() + "/" + name, ar);
  gen_.set_state(ar.at(stage_.name() + "/rng/gp_eps"));
  epoch_ = meta.at("epoch").get<std::int64_t>();
  cycle_in_epoch_ = meta.at("cycle_in_epoch").get<std::int64_t>();
  step_ = meta.at("step").get<std::int64_t>();
  critic_updates_ = meta.at("critic_updates").get<std::int64_t>();
  generator_updates_ = meta.at("generator_updates").get<std::int64_t>();
  sampler_a_.restore(meta.at("sampler_a").get<std::string>());
  sampler_b_.restore(meta.at("sampler_b").get<std::string>());
  trace_.clear();
}

// ---------------------------------------------------------------------------
// Prerequisites and frozen stacks

TensorArchive load_prerequisite(const fs::path& checkpoint_root, const StageId& stage, const std::string& lineage_hash) {
  const auto path = checkpoint_file(checkpoint_root, stage);
  if (!fs::exists(path)) {
    throw StageOrderError("missing prerequisite stage '" + stage.name() + "': no checkpoint at " + path.string());
  }
  auto ar = TensorArchive::load(path);
  json meta = json::parse(ar.meta);
  if (!meta.value("complete", false)) {
    throw StageOrderError("prerequisite stage '" + stage.name() + "' has not finished training (" + path.string() + ")");
  }
  if (!lineage_hash.empty() && meta.value("lineage_hash", "") != lineage_hash) {
    throw StageOrderError("prerequisite stage '" + stage.name() +
                          "' was trained on a different encoder/domain setup (lineage " +
                          meta.value("lineage_hash", "") + " != " + lineage_hash + ")");
  }
  return ar;
}

std::map<int, torch::Tensor> TranslatorStack::cascade(const std::map<int, torch::Tensor>& source,
                                                      int stop_level) const {
  if (stop_level < shallowest_level() || stop_level > kNumLevels) {
    throw Error("cannot translate to level " + std::to_string(stop_level) + ": trained levels are 5.." +
                std::to_string(shallowest_level()));
  }
  torch::NoGradGuard no_grad;
  std::map<int, torch::Tensor> out;
  auto g5 = deepest;  // holders share the module; forward is non-const
  out[kNumLevels] = g5->forward(source.at(kNumLevels));
  for (int level = kNumLevels - 1; level >= stop_level; --level) {
    auto g = conditional.at(level);
    out[level] = g->forward(source.at(level), out.at(level + 1));
  }
  return out;
}

int TranslatorStack::shallowest_level() const {
  return conditional.empty() ? kNumLevels : conditional.begin()->first;
}

TranslatorStack load_translator_stack(const fs::path& checkpoint_root, const NetworkFactory& factory,
                                      const std::string& network, int shallowest, const std::string& lineage_hash) {
  TranslatorStack stack;
  {
    auto ar = load_prerequisite(checkpoint_root, StageId::deepest(), lineage_hash);
    stack.deepest = factory.deep_translator();
    import_parameters(*stack.deepest, "deepest/" + network, ar);
    stack.deepest->eval();
    set_requires_grad(*stack.deepest, false);
  }
  for (int level = kNumLevels - 1; level >= shallowest; --level) {
    auto id = StageId::conditional(level);
    auto ar = load_prerequisite(checkpoint_root, id, lineage_hash);
    auto g = factory.conditional_translator(level);
    import_parameters(*g, id.name() + "/" + network, ar);
    g->eval();
    set_requires_grad(*g, false);
    stack.conditional.emplace(level, g);
  }
  return stack;
}

// ---------------------------------------------------------------------------
// Deepest

DeepestTrainer::DeepestTrainer(const NetworkFactory& factory, NormalizedDomain a5, NormalizedDomain b5,
                               TrainerOptions options)
    : StageTrainer(StageId::deepest(), std::move(options), a5.size(), b5.size()),
      a_(std::move(a5)),
      b_(std::move(b5)) {
  g_a = factory.deep_translator();
  g_b = factory.deep_translator();
  d_a = factory.critic(kNumLevels);
  d_b = factory.critic(kNumLevels);
  opt_g_ = make_adam(concat(g_a->parameters(), g_b->parameters()), options_.schedule);
  opt_d_ = make_adam(concat(d_a->parameters(), d_b->parameters()), options_.schedule);
}

void DeepestTrainer::run_cycle() {
  const double gp = options_.weights.gp;
  for (std::int64_t k = 0; k < options_.schedule.critic_steps; ++k) {
    auto a = a_.batch(sampler_a_.next());
    auto b = b_.batch(sampler_b_.next());
    torch::Tensor fake_b, fake_a;
    {
      torch::NoGradGuard no_grad;
      fake_b = g_b->forward(a);
      fake_a = g_a->forward(b);
    }
    auto eps_b = draw_interpolation_eps(batch_, gen_);
    auto eps_a = draw_interpolation_eps(batch_, gen_);
    auto tb = adversarial_loss(fake_b, b, critic_fn(d_b), gp, eps_b);
    auto ta = adversarial_loss(fake_a, a, critic_fn(d_a), gp, eps_a);
    auto loss = tb.critic + ta.critic;
    opt_d_->zero_grad();
    loss.backward();
    opt_d_->step();
    ++critic_updates_;
    ++step_;
    record(false, {{"critic_B", tb.critic.item<double>()},
                   {"critic_A", ta.critic.item<double>()},
                   {"gp_B", tb.gp.item<double>()},
                   {"gp_A", ta.gp.item<double>()}});
  }

  set_requires_grad(*d_a, false);
  set_requires_grad(*d_b, false);
  auto a = a_.batch(sampler_a_.next());
  auto b = b_.batch(sampler_b_.next());
  auto fake_b = g_b->forward(a);
  auto fake_a = g_a->forward(b);
  StageLossParts parts;
  parts.adv_ab = -d_b->forward(fake_b).mean();
  parts.adv_ba = -d_a->forward(fake_a).mean();
  parts.cyc = cycle_loss(a, g_a->forward(fake_b)) + cycle_loss(b, g_b->forward(fake_a));
  parts.idty = identity_loss(a, g_a->forward(a)) + identity_loss(b, g_b->forward(b));
  auto breakdown = combined_stage_loss(parts, options_.weights);
  opt_g_->zero_grad();
  breakdown.total.backward();
  opt_g_->step();
  set_requires_grad(*d_a, true);
  set_requires_grad(*d_b, true);
  ++generator_updates_;
  ++step_;
  record(true, std::move(breakdown.terms));
}

void DeepestTrainer::export_networks(TensorArchive& ar) const {
  export_parameters(*g_a, "deepest/G_A", ar);
  export_parameters(*g_b, "deepest/G_B", ar);
  export_parameters(*d_a, "deepest/D_A", ar);
  export_parameters(*d_b, "deepest/D_B", ar);
}

void DeepestTrainer::import_networks(const TensorArchive& ar) {
  import_parameters(*g_a, "deepest/G_A", ar);
  import_parameters(*g_b, "deepest/G_B", ar);
  import_parameters(*d_a, "deepest/D_A", ar);
  import_parameters(*d_b, "deepest/D_B", ar);
}

std::vector<std::pair<std::string, torch::optim::Adam*>> DeepestTrainer::optimizers() const {
  return {{"optim_G", opt_g_.get()}, {"optim_D", opt_d_.get()}};
}

// ---------------------------------------------------------------------------
// Conditional

ConditionalTrainer::ConditionalTrainer(const NetworkFactory& factory, int level, std::map<int, NormalizedDomain> a_levels,
                                       std::map<int, NormalizedDomain> b_levels, TranslatorStack frozen_a_stack,
                                       TranslatorStack frozen_b_stack, TrainerOptions options)
    : StageTrainer(StageId::conditional(level), std::move(options), a_levels.at(level).size(),
                   b_levels.at(level).size()),
      frozen_a(std::move(frozen_a_stack)),
      frozen_b(std::move(frozen_b_stack)),
      level_(level) {
  if (level < 1 || level >= kNumLevels) throw StageOrderError("conditional stages exist for levels 1..4");
  if (frozen_b.shallowest_level() != level + 1 || frozen_a.shallowest_level() != level + 1) {
    throw StageOrderError("training level " + std::to_string(level) + " requires frozen translators for levels 5.." +
                          std::to_string(level + 1));
  }
  g_a = factory.conditional_translator(level);
  g_b = factory.conditional_translator(level);
  d_a = factory.critic(level);
  d_b = factory.critic(level);
  opt_g_ = make_adam(concat(g_a->parameters(), g_b->parameters()), options_.schedule);
  opt_d_ = make_adam(concat(d_a->parameters(), d_b->parameters()), options_.schedule);

  auto all = [](const std::map<int, NormalizedDomain>& levels, int from) {
    std::map<int, torch::Tensor> out;
    for (int l = from; l <= kNumLevels; ++l) {
      auto it = levels.find(l);
      if (it == levels.end()) throw NotFoundError("normalised features for level " + std::to_string(l) + " missing");
      out[l] = it->second.all();
    }
    return out;
  };
  auto a_all = all(a_levels, level);
  auto b_all = all(b_levels, level);
  a_i_ = a_all.at(level);
  a_next_ = a_all.at(level + 1);
  b_i_ = b_all.at(level);
  b_next_ = b_all.at(level + 1);
  // Conditioning from the frozen cascade, computed once per item.
  b_tilde_next_ = frozen_b.cascade(a_all, level + 1).at(level + 1);
  a_tilde_next_ = frozen_a.cascade(b_all, level + 1).at(level + 1);
}

void ConditionalTrainer::run_cycle() {
  const double gp = options_.weights.gp;
  for (std::int64_t k = 0; k < options_.schedule.critic_steps; ++k) {
    auto ia = sampler_a_.next();
    auto ib = sampler_b_.next();
    auto a = select(a_i_, ia), b = select(b_i_, ib);
    torch::Tensor fake_b, fake_a;
    {
      torch::NoGradGuard no_grad;
      fake_b = g_b->forward(a, select(b_tilde_next_, ia));
      fake_a = g_a->forward(b, select(a_tilde_next_, ib));
    }
    auto eps_b = draw_interpolation_eps(batch_, gen_);
    auto eps_a = draw_interpolation_eps(batch_, gen_);
    auto tb = adversarial_loss(fake_b, b, critic_fn(d_b), gp, eps_b);
    auto ta = adversarial_loss(fake_a, a, critic_fn(d_a), gp, eps_a);
    auto loss = tb.critic + ta.critic;
    opt_d_->zero_grad();
    loss.backward();
    opt_d_->step();
    ++critic_updates_;
    ++step_;
    record(false, {{"critic_B", tb.critic.item<double>()},
                   {"critic_A", ta.critic.item<double>()},
                   {"gp_B", tb.gp.item<double>()},
                   {"gp_A", ta.gp.item<double>()}});
  }

  set_requires_grad(*d_a, false);
  set_requires_grad(*d_b, false);
  auto ia = sampler_a_.next();
  auto ib = sampler_b_.next();
  auto a = select(a_i_, ia), a_next = select(a_next_, ia), b_tilde = select(b_tilde_next_, ia);
  auto b = select(b_i_, ib), b_next = select(b_next_, ib), a_tilde = select(a_tilde_next_, ib);
  auto gb = conditional_fn(g_b), ga = conditional_fn(g_a);
  StageLossParts parts;
  // Adversarial terms are unconditional on the level-i outputs.
  parts.adv_ab = -d_b->forward(gb(a, b_tilde)).mean();
  parts.adv_ba = -d_a->forward(ga(b, a_tilde)).mean();
  parts.cyc = conditional_cycle_loss(a, a_next, b, b_next, b_tilde, a_tilde, gb, ga);
  parts.idty = conditional_identity_loss(a, a_next, b, b_next, gb, ga);
  auto breakdown = combined_stage_loss(parts, options_.weights);
  opt_g_->zero_grad();
  breakdown.total.backward();
  opt_g_->step();
  set_requires_grad(*d_a, true);
  set_requires_grad(*d_b, true);
  ++generator_updates_;
  ++step_;
  record(true, std::move(breakdown.terms));
}

void ConditionalTrainer::export_networks(TensorArchive& ar) const {
  const auto s = stage_.name();
  export_parameters(*g_a, s + "/G_A", ar);
  export_parameters(*g_b, s + "/G_B", ar);
  export_parameters(*d_a, s + "/D_A", ar);
  export_parameters(*d_b, s + "/D_B", ar);
}

void ConditionalTrainer::import_networks(const TensorArchive& ar) {
  const auto s = stage_.name();
  import_parameters(*g_a, s + "/G_A", ar);
  import_parameters(*g_b, s + "/G_B", ar);
  import_parameters(*d_a, s + "/D_A", ar);
  import_parameters(*d_b, s + "/D_B", ar);
}

std::vector<std::pair<std::string, torch::optim::Adam*>> ConditionalTrainer::optimizers() const {
  return {{"optim_G", opt_g_.get()}, {"optim_D", opt_d_.get()}};
}

// ---------------------------------------------------------------------------
// Inverter

InverterTrainer::InverterTrainer(const NetworkFactory& factory, std::string domain, int level, torch::Tensor features,
                                 torch::Tensor images, TrainerOptions options)
    : StageTrainer(StageId::inverter(std::move(domain), level), std::move(options),
                   static_cast<std::size_t>(features.size(0)), static_cast<std::size_t>(features.size(0))),
      features_(std::move(features)),
      images_(std::move(images)) {
  if (images_.size(0) != features_.size(0)) throw ShapeError("inverter: feature and image counts differ");
  decoder = factory.inverter(level);
  discriminator = factory.patch_discriminator();
  opt_g_ = make_adam(decoder->parameters(), options_.schedule);
  opt_d_ = make_adam(discriminator->parameters(), options_.schedule);
}

void InverterTrainer::run_cycle() {
  const auto idx = sampler_a_.next();
  auto feats = select(features_, idx);
  auto imgs = select(images_, idx);
  decoder->train();
  discriminator->train();

  torch::Tensor recon;
  {
    torch::NoGradGuard no_grad;
    recon = decoder->forward(feats);
  }
  auto d_loss = lsgan_loss(discriminator->forward(imgs), discriminator->forward(recon), GanSide::discriminator);
  opt_d_->zero_grad();
  d_loss.backward();
  opt_d_->step();
  ++critic_updates_;
  ++step_;
  record(false, {{"lsgan_D", d_loss.item<double>()}});

  set_requires_grad(*discriminator, false);
  recon = decoder->forward(feats);
  auto l1 = (recon - imgs).abs().mean();
  auto adv = lsgan_loss({}, discriminator->forward(recon), GanSide::generator);
  auto total = options_.inverter_weights.reconstruction * l1 + options_.inverter_weights.adversarial * adv;
  opt_g_->zero_grad();
  total.backward();
  opt_g_->step();
  set_requires_grad(*discriminator, true);
  ++generator_updates_;
  ++step_;
  record(true, {{"recon_l1", l1.item<double>()}, {"lsgan_G", adv.item<double>()}, {"total", total.item<double>()}});
}

void InverterTrainer::export_networks(TensorArchive& ar) const {
  export_parameters(*decoder, stage_.name() + "/decoder", ar);
  export_parameters(*discriminator, stage_.name() + "/patch_D", ar);
}

void InverterTrainer::import_networks(const TensorArchive& ar) {
  import_parameters(*decoder, stage_.name() + "/decoder", ar);
  import_parameters(*discriminator, stage_.name() + "/patch_D", ar);
}

std::vector<std::pair<std::string, torch::optim::Adam*>> InverterTrainer::optimizers() const {
  return {{"optim_G", opt_g_.get()}, {"optim_D", opt_d_.get()}};
}

Inverter load_inverter(const fs::path& checkpoint_root, const NetworkFactory& factory, const std::string& domain,
                       int level, const std::string& lineage_hash) {
  auto id = StageId::inverter(domain, level);
  auto ar = load_prerequisite(checkpoint_root, id, lineage_hash);
  auto inv = factory.inverter(level);
  import_parameters(*inv, id.name() + "/decoder", ar);
  inv->eval();
  set_requires_grad(*inv, false);
  return inv;
}

}  // namespace featxlate
