#include <doctest.h>

#include <cstring>
#include <fstream>
#include <set>

#include "featxlate/archive.hpp"
#include "featxlate/encoder.hpp"
#include "featxlate/error.hpp"
#include "featxlate/training.hpp"
#include "json.hpp"
#include "fixtures.hpp"

using namespace featxlate;
namespace fs = std::filesystem;

namespace {

const EncoderProfile& small_profile() {
  static const auto enc = Encoder::make_toy(0, {4, 8, 8, 16, 16}, 32);
  return enc.profile();
}

std::map<int, NormalizedDomain> random_domain(const std::string& id, std::int64_t n, std::uint64_t seed) {
  torch::manual_seed(seed);
  std::map<int, NormalizedDomain> out;
  for (int level = 3; level <= 5; ++level) {
    const auto& tap = small_profile().tap(level);
    out.emplace(level, NormalizedDomain::from_tensor(id, level,
                                                     torch::rand({n, tap.channels, tap.spatial, tap.spatial}) * 2 - 1));
  }
  return out;
}

TrainerOptions options(std::uint64_t seed = 0, std::int64_t batch = 4) {
  TrainerOptions o;
  o.schedule.seed = seed;
  o.schedule.batch_size = batch;
  o.schedule.epochs = 2;
  o.config_hash = "cfg";
  o.lineage_hash = "lineage";
  return o;
}

std::vector<double> flat_trace(const StageTrainer& t, std::size_t limit) {
  std::vector<double> out;
  for (const auto& r : t.trace())
    for (const auto& [k, v] : r.terms) {
      if (out.size() == limit) return out;
      out.push_back(v);
    }
  return out;
}

std::map<std::string, torch::Tensor> params_of(const torch::nn::Module& m) {
  std::map<std::string, torch::Tensor> out;
  for (const auto& p : m.named_parameters()) out[p.key()] = p.value().detach().clone();
  return out;
}

bool same_params(const std::map<std::string, torch::Tensor>& a, const torch::nn::Module& m) {
  for (const auto& p : m.named_parameters()) {
    if (!fxtest::bitwise_equal(a.at(p.key()), p.value().detach())) return false;
  }
  return true;
}

// Writes a completed deepest checkpoint to root and returns the trainer.
std::unique_ptr<DeepestTrainer> finished_deepest(const fs::path& root) {
  const NetworkFactory f(small_profile());
  auto o = options();
  o.checkpoint_root = root;
  o.schedule.epochs = 1;
  auto t = std::make_unique<DeepestTrainer>(f, random_domain("a", 6, 1).at(5), random_domain("b", 6, 2).at(5), o);
  t->train();
  return t;
}

}  // namespace

TEST_SUITE("training") {
  TEST_CASE("schedule defaults and validation") {
    StageSchedule s;
    CHECK(s.epochs == 400);
    CHECK(s.lr == doctest::Approx(1e-4));
    CHECK(s.beta1 == 0.5);
    CHECK(s.beta2 == 0.999);
    CHECK(s.batch_size == 10);
    CHECK(s.critic_steps == 4);
    CHECK(StageSchedule::inverter_defaults().batch_size == 25);
    s.critic_steps = 0;
    CHECK_THROWS_AS(s.validate(), ConfigError);
    s = StageSchedule{};
    s.lr = 0;
    CHECK_THROWS_AS(s.validate(), ConfigError);
  }

  TEST_CASE("stage names and checkpoint paths") {
    CHECK(StageId::deepest().name() == "deepest");
    CHECK(StageId::conditional(4).name() == "conditional_L4");
    CHECK(StageId::inverter("cats", 3).name() == "inverter_cats_L3");
    CHECK(checkpoint_file("/r", StageId::conditional(3)) == fs::path("/r/conditional_L3/latest.fxar"));
  }

  TEST_CASE("domain sampler: each pass is a permutation; state roundtrips") {
    DomainSampler s(7, 3, 42);
    std::multiset<std::size_t> seen;
    for (int i = 0; i < 7; ++i)
      for (auto v : s.next()) seen.insert(v);  // 21 draws = 3 passes
    for (std::size_t v = 0; v < 7; ++v) CHECK(seen.count(v) == 3);

    auto state = s.serialize();
    DomainSampler t(7, 3, 999);
    t.restore(state);
    for (int i = 0; i < 10; ++i) CHECK(s.next() == t.next());
    DomainSampler wrong(8, 3, 0);
    CHECK_THROWS_AS(wrong.restore(state), ConfigError);
  }

  TEST_CASE("effective batch and cycles per epoch for unequal domains") {
    const NetworkFactory f(small_profile());
    auto o = options(0, 10);
    DeepestTrainer t(f, random_domain("a", 8, 1).at(5), random_domain("b", 5, 2).at(5), o);
    CHECK(t.cycles_per_epoch() == 2);  // batch min(10, 8, 5) = 5, ceil(8 / 5)
  }

  TEST_CASE("four critic updates per generator update over n cycles") {
    const NetworkFactory f(small_profile());
    DeepestTrainer t(f, random_domain("a", 6, 1).at(5), random_domain("b", 6, 2).at(5), options());
    t.run_cycle();
    CHECK(t.step() == 5);
    CHECK(t.critic_updates() == 4);
    CHECK(t.generator_updates() == 1);
    for (int i = 0; i < 4; ++i) t.run_cycle();
    CHECK(t.critic_updates() == 20);
    CHECK(t.generator_updates() == 5);
    int gen_records = 0;
    for (const auto& r : t.trace()) gen_records += r.generator;
    CHECK(gen_records == 5);
    CHECK(t.trace().size() == 25);
  }

  TEST_CASE("fixed seed reproduces the loss trace bitwise; another seed does not") {
    const NetworkFactory f(small_profile());
    auto run = [&](std::uint64_t seed) {
      DeepestTrainer t(f, random_domain("a", 6, 1).at(5), random_domain("b", 6, 2).at(5), options(seed));
      for (int i = 0; i < 2; ++i) t.run_cycle();
      return flat_trace(t, 20);
    };
    auto r1 = run(3);
    auto r2 = run(3);
    REQUIRE(r1.size() == 20);
    for (std::size_t i = 0; i < r1.size(); ++i) CHECK(std::memcmp(&r1[i], &r2[i], sizeof(double)) == 0);
    CHECK(run(4) != r1);
  }

  TEST_CASE("resume continues exactly like an uninterrupted run") {
    fxtest::TempDir dir;
    const NetworkFactory f(small_profile());
    auto a = random_domain("a", 6, 1).at(5);
    auto b = random_domain("b", 6, 2).at(5);

    DeepestTrainer straight(f, a, b, options(5));
    for (int i = 0; i < 3; ++i) straight.run_cycle();
    straight.save_checkpoint(dir / "k.fxar");
    straight.run_cycle();
    const auto expected = straight.trace().back().terms;

    auto o = options(5);
    DeepestTrainer fresh(f, a, b, o);
    fresh.resume(dir / "k.fxar");
    CHECK(fresh.step() == 15);
    fresh.run_cycle();
    const auto got = fresh.trace().back().terms;
    REQUIRE(got.size() == expected.size());
    for (const auto& [k, v] : expected) CHECK_MESSAGE(std::memcmp(&v, &got.at(k), sizeof(double)) == 0, k);
  }

  TEST_CASE("resume refuses a different config hash or stage; corrupt archive is an integrity error") {
    fxtest::TempDir dir;
    const NetworkFactory f(small_profile());
    auto a = random_domain("a", 6, 1);
    auto b = random_domain("b", 6, 2);
    DeepestTrainer t(f, a.at(5), b.at(5), options());
    t.run_cycle();
    t.save_checkpoint(dir / "k.fxar");

    auto other = options();
    other.config_hash = "different";
    DeepestTrainer u(f, a.at(5), b.at(5), other);
    try {
      u.resume(dir / "k.fxar");
      FAIL("expected ConfigError");
    } catch (const ConfigError& e) {
      CHECK(std::string(e.what()).find("config hash") != std::string::npos);
    }

    InverterTrainer inv(f, "a", 3, a.at(3).all(), torch::rand({6, 3, 32, 32}) * 2 - 1, options());
    CHECK_THROWS_AS(inv.resume(dir / "k.fxar"), ConfigError);

    std::string bytes;
    {
      std::ifstream in(dir / "k.fxar", std::ios::binary);
      bytes.assign(std::istreambuf_iterator<char>(in), {});
    }
    bytes[bytes.size() / 3] ^= 0x11;
    {
      std::ofstream out(dir / "bad.fxar", std::ios::binary);
      out << bytes;
    }
    CHECK_THROWS_AS(t.resume(dir / "bad.fxar"), IntegrityError);
  }

  TEST_CASE("train() checkpoints after each epoch and marks completion") {
    fxtest::TempDir dir;
    auto t = finished_deepest(dir.path());
    CHECK(t->epoch() == 1);
    auto ar = TensorArchive::load(checkpoint_file(dir.path(), StageId::deepest()));
    auto meta = nlohmann::json::parse(ar.meta);
    CHECK(meta.at("complete").get<bool>());
    CHECK(meta.at("stage") == "deepest");
    CHECK(ar.contains("deepest/G_A/body/0/weight"));
    CHECK(ar.contains("deepest/rng/gp_eps"));
    CHECK(ar.contains("deepest/optim_G/0/exp_avg"));
  }

  TEST_CASE("max_generator_steps bounds the run") {
    const NetworkFactory f(small_profile());
    auto o = options();
    o.schedule.epochs = 100;
    o.schedule.max_generator_steps = 3;
    DeepestTrainer t(f, random_domain("a", 6, 1).at(5), random_domain("b", 6, 2).at(5), o);
    t.train();
    CHECK(t.generator_updates() == 3);
  }

  TEST_CASE("stage order: level 4 needs level 5; level 3 needs level 4") {
    fxtest::TempDir dir;
    const NetworkFactory f(small_profile());
    try {
      load_translator_stack(dir.path(), f, "G_B", 5, "lineage");
      FAIL("expected StageOrderError");
    } catch (const StageOrderError& e) {
      CHECK(std::string(e.what()).find("deepest") != std::string::npos);
    }
    finished_deepest(dir.path());
    auto stack = load_translator_stack(dir.path(), f, "G_B", 5, "lineage");
    CHECK(stack.shallowest_level() == 5);
    try {
      load_translator_stack(dir.path(), f, "G_B", 4, "lineage");
      FAIL("expected StageOrderError");
    } catch (const StageOrderError& e) {
      CHECK(std::string(e.what()).find("conditional_L4") != std::string::npos);
    }
    CHECK_THROWS_AS(load_translator_stack(dir.path(), f, "G_B", 5, "other-lineage"), StageOrderError);

    // A frozen stack that stops at 5 cannot condition level 3.
    auto a = random_domain("a", 6, 1);
    auto b = random_domain("b", 6, 2);
    CHECK_THROWS_AS(ConditionalTrainer(f, 3, a, b, stack, stack, options()), StageOrderError);
  }

  TEST_CASE("an unfinished prerequisite is rejected") {
    fxtest::TempDir dir;
    const NetworkFactory f(small_profile());
    DeepestTrainer t(f, random_domain("a", 6, 1).at(5), random_domain("b", 6, 2).at(5), options());
    t.run_cycle();
    t.save_checkpoint(checkpoint_file(dir.path(), StageId::deepest()), /*complete=*/false);
    try {
      load_prerequisite(dir.path(), StageId::deepest(), "lineage");
      FAIL("expected StageOrderError");
    } catch (const StageOrderError& e) {
      CHECK(std::string(e.what()).find("not finished") != std::string::npos);
    }
  }

  TEST_CASE("conditional training leaves the frozen deeper translators bitwise unchanged") {
    fxtest::TempDir dir;
    const NetworkFactory f(small_profile());
    finished_deepest(dir.path());
    auto frozen_a = load_translator_stack(dir.path(), f, "G_A", 5, "lineage");
    auto frozen_b = load_translator_stack(dir.path(), f, "G_B", 5, "lineage");
    auto before_a = params_of(*frozen_a.deepest);
    auto before_b = params_of(*frozen_b.deepest);

    ConditionalTrainer t(f, 4, random_domain("a", 6, 1), random_domain("b", 6, 2), frozen_a, frozen_b, options());
    auto g_before = params_of(*t.g_b);
    for (int i = 0; i < 2; ++i) t.run_cycle();
    CHECK(same_params(before_a, *t.frozen_a.deepest));
    CHECK(same_params(before_b, *t.frozen_b.deepest));
    CHECK_FALSE(same_params(g_before, *t.g_b));
    CHECK(t.critic_updates() == 8);
    CHECK(t.generator_updates() == 2);
    for (const auto& term : {"adv_ab", "adv_ba", "cyc", "idty"}) CHECK(t.generator_trace(term).size() == 2);
  }

  TEST_CASE("inverter stage: batch 25 by default, capped by the item count") {
    const NetworkFactory f(small_profile());
    auto o = options();
    o.schedule = StageSchedule::inverter_defaults();
    auto feats = random_domain("a", 30, 1).at(3).all();
    InverterTrainer t(f, "a", 3, feats, torch::rand({30, 3, 32, 32}) * 2 - 1, o);
    CHECK(t.cycles_per_epoch() == 2);  // ceil(30 / 25)
    t.run_cycle();
    CHECK(t.critic_updates() == 1);
    CHECK(t.generator_updates() == 1);
    CHECK(t.generator_trace("recon_l1").size() == 1);
    CHECK_THROWS_AS(InverterTrainer(f, "a", 3, feats, torch::rand({29, 3, 32, 32}), o), ShapeError);
  }

  TEST_CASE("loss explosion aborts with a diagnostic checkpoint") {
    fxtest::TempDir dir;
    const NetworkFactory f(small_profile());
    auto o = options();
    o.checkpoint_root = dir.path();
    o.explosion_limit = 1e-12;
    DeepestTrainer t(f, random_domain("a", 6, 1).at(5), random_domain("b", 6, 2).at(5), o);
    CHECK_THROWS_AS(t.run_cycle(), NumericError);
    CHECK(fs::exists(dir / "deepest/diagnostic.fxar"));
  }

  TEST_CASE("metrics sink receives every term and the CSV log has a header") {
    fxtest::TempDir dir;
    const NetworkFactory f(small_profile());
    auto o = options();
    CsvMetricsLog log(dir / "m.csv");
    o.metrics = log.sink();
    DeepestTrainer t(f, random_domain("a", 6, 1).at(5), random_domain("b", 6, 2).at(5), o);
    t.run_cycle();
    std::ifstream in(dir / "m.csv");
    std::string header, line;
    std::getline(in, header);
    CHECK(header == "stage,step,term,value,wall_time");
    int lines = 0;
    while (std::getline(in, line)) ++lines;
    CHECK(lines == 4 * 4 + 5);  // critic: 4 terms x 4 steps; generator: 5 terms
  }
}
