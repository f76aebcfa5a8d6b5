#include <doctest.h>

#include "featxlate/archive.hpp"
#include "featxlate/encoder.hpp"
#include "featxlate/error.hpp"
#include "featxlate/networks.hpp"
#include "fixtures.hpp"

using namespace featxlate;
namespace nn = torch::nn;

namespace {

std::vector<std::vector<std::int64_t>> parameter_shapes(const nn::Module& m) {
  std::vector<std::vector<std::int64_t>> out;
  for (const auto& p : m.parameters()) out.emplace_back(p.sizes().begin(), p.sizes().end());
  return out;
}

}  // namespace

TEST_SUITE("networks") {
  TEST_CASE("group count") {
    CHECK(group_count(512) == 32);
    CHECK(group_count(256) == 32);
    CHECK(group_count(64) == 32);
    CHECK(group_count(16) == 16);
    CHECK(group_count(8) == 8);
    CHECK(group_count(48) == 24);
    CHECK(group_count(50) == 25);
  }

  TEST_CASE("adain: identity modulation gives zero mean, unit variance") {
    torch::manual_seed(0);
    auto x = torch::randn({2, 3, 8, 8}) * 4 + 7;
    auto y = adain_modulate(x, torch::ones({3}), torch::zeros({3}));
    auto mean = y.mean({2, 3});
    auto var = y.var({2, 3}, false);
    CHECK(mean.abs().max().item<double>() < 1e-5);
    CHECK((var - 1).abs().max().item<double>() < 1e-4);
  }

  TEST_CASE("adain: scale 0 shift 5 is constant 5") {
    auto y = adain_modulate(torch::randn({1, 4, 5, 5}), torch::zeros({4}), torch::full({4}, 5.0));
    CHECK((y - 5).abs().max().item<double>() < 1e-6);
  }

  TEST_CASE("adain: measured moments equal |scale| and shift") {
    torch::manual_seed(1);
    auto x = torch::randn({3, 6, 16, 16}, torch::kFloat64) * 3 - 2;
    auto scale = torch::randn({3, 6}, torch::kFloat64);
    auto shift = torch::randn({3, 6}, torch::kFloat64);
    auto y = adain_modulate(x, scale, shift);
    auto mean = y.mean({2, 3});
    auto stdv = y.var({2, 3}, false).sqrt();
    CHECK((mean - shift).abs().max().item<double>() < 1e-4);
    CHECK((stdv - scale.abs()).abs().max().item<double>() < 1e-4);
  }

  TEST_CASE("adain: parameter length mismatch") {
    CHECK_THROWS_AS(adain_modulate(torch::randn({1, 4, 3, 3}), torch::ones({3}), torch::zeros({4})), ShapeError);
  }

  TEST_CASE("deep translator: shape preserved, output strictly inside (-1, 1), deterministic") {
    DeepTranslator g(64, 4);
    auto x = torch::rand({3, 64, 4, 4}) * 2 - 1;
    auto y = g->forward(x);
    CHECK(y.sizes() == x.sizes());
    CHECK(y.abs().max().item<double>() < 1.0);
    CHECK(fxtest::bitwise_equal(y, g->forward(x)));
    CHECK_THROWS_AS(g->forward(torch::rand({1, 64, 8, 8})), ShapeError);
  }

  TEST_CASE("deepest translator at the VGG level-5 shape") {
    NetworkFactory f(vgg19_profile());
    auto g = f.deep_translator();
    auto y = g->forward(torch::rand({1, 512, 14, 14}) * 2 - 1);
    CHECK(y.sizes() == torch::IntArrayRef({1, 512, 14, 14}));
    CHECK(y.abs().max().item<double>() < 1.0);
  }

  TEST_CASE("conditional translators at VGG levels 4 and 3") {
    NetworkFactory f(vgg19_profile());
    torch::NoGradGuard no_grad;
    auto g4 = f.conditional_translator(4);
    auto y4 = g4->forward(torch::rand({1, 512, 28, 28}), torch::rand({1, 512, 14, 14}));
    CHECK(y4.sizes() == torch::IntArrayRef({1, 512, 28, 28}));
    auto g3 = f.conditional_translator(3);
    auto y3 = g3->forward(torch::rand({1, 256, 56, 56}), y4);
    CHECK(y3.sizes() == torch::IntArrayRef({1, 256, 56, 56}));
    CHECK(g3->adain_site_channels() == std::vector<std::int64_t>{512, 512, 256});
    CHECK(g3->n_adain_params() == 2 * (512 + 512 + 256));
  }

  TEST_CASE("conditional translator shape errors name the input") {
    NetworkFactory f(fxtest::toy_encoder().profile());
    auto g = f.conditional_translator(4);  // source (64,8,8), content (64,4,4)
    try {
      g->forward(torch::rand({1, 64, 8, 8}), torch::rand({1, 32, 4, 4}));
      FAIL("expected ShapeError");
    } catch (const ShapeError& e) {
      CHECK(std::string(e.what()).find("content") != std::string::npos);
    }
    try {
      g->forward(torch::rand({1, 64, 6, 6}), torch::rand({1, 64, 4, 4}));
      FAIL("expected ShapeError");
    } catch (const ShapeError& e) {
      CHECK(std::string(e.what()).find("source") != std::string::npos);
    }
  }

  TEST_CASE("conditional translator: AdaIN parameters come only from the source") {
    NetworkFactory f(fxtest::toy_encoder().profile());
    auto g = f.conditional_translator(3);  // source (32,16,16), content (64,8,8)
    torch::NoGradGuard no_grad;
    auto content = torch::rand({2, 64, 8, 8});
    auto source = torch::rand({2, 32, 16, 16});
    auto params = g->controller()->forward(source);
    CHECK(params.sizes() == torch::IntArrayRef({2, g->n_adain_params()}));
    CHECK(torch::allclose(g->forward(source, content), g->forward_content(content, params)));
    // Controller width: stride-2 convs from 16 down to 4.
    CHECK(g->controller()->num_convs() == 2);
  }

  TEST_CASE("critic: one scalar per sample, finite input gradient, no normalization") {
    NetworkFactory f(vgg19_profile());
    auto d = f.critic(5);
    auto x = torch::rand({3, 512, 14, 14}).requires_grad_(true);
    auto y = d->forward(x);
    CHECK(y.sizes() == torch::IntArrayRef({3}));
    auto g = torch::autograd::grad({y.sum()}, {x})[0];
    CHECK(torch::isfinite(g).all().item<bool>());
    CHECK_FALSE(has_normalization(*d));

    NetworkFactory toy(fxtest::toy_encoder().profile());
    for (int level = 1; level <= 5; ++level) CHECK_FALSE(has_normalization(*toy.critic(level)));
  }

  TEST_CASE("doubling the critic's final linear weights doubles its output") {
    Critic d(16, 8, 64);
    auto x = torch::rand({4, 16, 8, 8});
    torch::NoGradGuard no_grad;
    auto y1 = d->forward(x);
    d->head()->weight.mul_(2);
    d->head()->bias.mul_(2);
    auto y2 = d->forward(x);
    CHECK(torch::allclose(y2, 2 * y1, 1e-6, 1e-7));
  }

  TEST_CASE("inverter: upsampling counts and output range") {
    NetworkFactory f(vgg19_profile());
    auto inv3 = f.inverter(3);
    auto inv5 = f.inverter(5);
    CHECK(inv3->num_upsampling() == 2);
    CHECK(inv5->num_upsampling() == 4);
    torch::NoGradGuard no_grad;
    auto img = inv3->forward(torch::rand({1, 256, 56, 56}) * 2 - 1);
    CHECK(img.sizes() == torch::IntArrayRef({1, 3, 224, 224}));
    CHECK(img.abs().max().item<double>() < 1.0);
    CHECK_THROWS_AS(inv3->forward(torch::rand({1, 512, 14, 14})), ShapeError);
    CHECK_FALSE(has_normalization(*inv3));
  }

  TEST_CASE("patch discriminator: four strided convs, batch norm on all but the first") {
    PatchDiscriminator d(8);
    std::vector<std::string> kinds;
    int strided = 0;
    for (const auto& m : d->body()->children()) {
      if (auto* c = m->as<nn::Conv2d>()) {
        kinds.push_back("conv");
        if (c->options.stride()->at(0) == 2) ++strided;
      } else if (m->as<nn::BatchNorm2d>()) {
        kinds.push_back("bn");
      }
    }
    CHECK(strided == 4);
    REQUIRE(kinds.size() >= 2);
    CHECK(kinds[0] == "conv");
    CHECK(kinds[1] == "conv");  // no norm after the first conv
    CHECK(std::count(kinds.begin(), kinds.end(), "bn") == 3);
    auto out = d->forward(torch::rand({2, 3, 64, 64}));
    CHECK(out.size(1) == 1);
    CHECK(out.size(2) == 4);
  }

  TEST_CASE("constructing a network twice gives identical parameter shapes") {
    NetworkFactory f(fxtest::toy_encoder().profile());
    CHECK(parameter_shapes(*f.deep_translator()) == parameter_shapes(*f.deep_translator()));
    CHECK(parameter_shapes(*f.conditional_translator(4)) == parameter_shapes(*f.conditional_translator(4)));
    CHECK(parameter_count(*f.inverter(3)) == parameter_count(*f.inverter(3)));
    CHECK(parameter_count(*f.critic(5)) == parameter_count(*f.critic(5)));
  }

  TEST_CASE("parameter export/import roundtrip and strictness") {
    NetworkFactory f(fxtest::toy_encoder().profile());
    torch::manual_seed(1);
    auto a = f.conditional_translator(4);
    torch::manual_seed(2);
    auto b = f.conditional_translator(4);
    TensorArchive ar;
    export_parameters(*a, "conditional_L4/G_A", ar);
    CHECK(ar.contains(parameter_key("conditional_L4/G_A", "conv1.weight")));
    CHECK(parameter_key("s/G", "controller.fc1.bias") == "s/G/controller/fc1/bias");
    import_parameters(*b, "conditional_L4/G_A", ar);
    auto pa = a->named_parameters();
    auto pb = b->named_parameters();
    for (const auto& item : pa) CHECK(fxtest::bitwise_equal(item.value(), pb[item.key()]));

    ar.tensors.erase(ar.tensors.begin());
    CHECK_THROWS_AS(import_parameters(*b, "conditional_L4/G_A", ar), IntegrityError);
  }

  TEST_CASE("set_requires_grad toggles every parameter") {
    DeepTranslator g(16, 4);
    set_requires_grad(*g, false);
    for (const auto& p : g->parameters()) CHECK_FALSE(p.requires_grad());
    set_requires_grad(*g, true);
    for (const auto& p : g->parameters()) CHECK(p.requires_grad());
  }
}
