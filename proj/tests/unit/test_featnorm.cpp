#include <doctest.h>

#include <cmath>
#include <fstream>

#include "featxlate/data.hpp"
#include "featxlate/error.hpp"
#include "featxlate/featnorm.hpp"
#include "fixtures.hpp"

using namespace featxlate;

namespace {

// Reference pooled mean / population std for every channel by materialising
// all values into plain vectors.
std::pair<std::vector<double>, std::vector<double>> brute_force(const std::vector<torch::Tensor>& items) {
  const auto channels = items.front().size(0);
  std::vector<std::vector<double>> values(channels);
  for (const auto& t : items) {
    auto d = t.to(torch::kFloat64).contiguous();
    auto a = d.accessor<double, 3>();
    for (int c = 0; c < channels; ++c)
      for (int y = 0; y < d.size(1); ++y)
        for (int x = 0; x < d.size(2); ++x) values[c].push_back(a[c][y][x]);
  }
  std::vector<double> mean(channels), stdv(channels);
  for (int c = 0; c < channels; ++c) {
    double s = 0;
    for (double v : values[c]) s += v;
    mean[c] = s / values[c].size();
    double ss = 0;
    for (double v : values[c]) ss += (v - mean[c]) * (v - mean[c]);
    stdv[c] = std::sqrt(ss / values[c].size());
  }
  return {mean, stdv};
}

ChannelStats make_stats(std::vector<double> mean, std::vector<double> stdv) {
  ChannelStats s;
  s.domain_id = "d";
  s.level = 3;
  s.mean = std::move(mean);
  s.std = std::move(stdv);
  s.count = 1;
  return s;
}

}  // namespace

TEST_SUITE("featnorm") {
  TEST_CASE("two constant images pool to mean 2 and the pooled std") {
    StatsAccumulator acc(2);
    auto one = torch::ones({2, 3, 3});
    auto three = torch::full({2, 3, 3}, 3.0);
    acc.add(one, "one");
    acc.add(three, "three");
    auto s = acc.finalize("dom", 5);
    auto [mean, stdv] = brute_force({one, three});
    CHECK(s.mean[0] == doctest::Approx(2.0).epsilon(1e-12));
    CHECK(s.mean[0] == doctest::Approx(mean[0]).epsilon(1e-12));
    CHECK(s.std[0] == doctest::Approx(stdv[0]).epsilon(1e-12));
    CHECK(s.std[0] == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(s.count == 2);
    CHECK(s.channels() == 2);
  }

  TEST_CASE("constant channel gets the std floor") {
    StatsAccumulator acc(1);
    acc.add(torch::full({1, 4, 4}, 7.0));
    auto s = acc.finalize("dom", 1);
    CHECK(s.std[0] == kStdFloor);
    CHECK(s.mean[0] == doctest::Approx(7.0));
  }

  TEST_CASE("streaming statistics match brute force within 1e-5 relative") {
    torch::manual_seed(11);
    std::vector<torch::Tensor> items;
    StatsAccumulator acc(4);
    auto offsets = torch::tensor({0.0, 1000.0, -3.0, 1e-3}).view({4, 1, 1});
    auto scales = torch::tensor({1.0, 0.01, 50.0, 1e-4}).view({4, 1, 1});
    for (int i = 0; i < 23; ++i) {
      auto t = (torch::randn({4, 5, 5}, torch::kFloat64) * scales + offsets);
      items.push_back(t);
      if (i % 2) {
        acc.add(t, "i" + std::to_string(i));
      } else {
        acc.add(t.unsqueeze(0), "i" + std::to_string(i));
      }
    }
    auto s = acc.finalize("d", 2, 0.0);
    auto [mean, stdv] = brute_force(items);
    for (int c = 0; c < 4; ++c) {
      CHECK(std::abs(s.mean[c] - mean[c]) <= 1e-5 * std::max(std::abs(mean[c]), 1e-12) + 1e-12);
      CHECK(std::abs(s.std[c] - stdv[c]) <= 1e-5 * stdv[c]);
    }
  }

  TEST_CASE("non-finite activations name the item") {
    StatsAccumulator acc(1);
    auto t = torch::zeros({1, 2, 2});
    t[0][1][1] = std::numeric_limits<float>::quiet_NaN();
    try {
      acc.add(t, "broken.png");
      FAIL("expected NumericError");
    } catch (const NumericError& e) {
      CHECK(std::string(e.what()).find("broken.png") != std::string::npos);
    }
  }

  TEST_CASE("empty accumulator and empty dataset are errors") {
    StatsAccumulator acc(3);
    CHECK_THROWS(acc.finalize("d", 1));
    DomainDataset empty{"d", {}, 0};
    auto enc = fxtest::toy_encoder();
    CHECK_THROWS(compute_stats(empty, enc, 5));
  }

  TEST_CASE("normalize: mean, clamp boundary, affine interior") {
    auto s = make_stats({2.0, -1.0}, {0.5, 4.0});
    auto x = torch::empty({2, 1, 3});
    x[0][0][0] = 2.0;              // own mean
    x[0][0][1] = 2.0 + 3 * 0.5;    // mean + 3 std
    x[0][0][2] = 2.0 - 0.5 * 0.5;  // mean - 0.5 std
    x[1][0][0] = -1.0;
    x[1][0][1] = -1.0 + 3 * 4.0;
    x[1][0][2] = -1.0 - 0.5 * 4.0;
    auto n = normalize(x, s);
    for (int c = 0; c < 2; ++c) {
      CHECK(n[c][0][0].item<double>() == 0.0);
      CHECK(n[c][0][1].item<double>() == 1.0);
      CHECK(n[c][0][2].item<double>() == doctest::Approx(-0.5).epsilon(1e-7));
    }
  }

  TEST_CASE("normalized values are always inside [-1, 1]") {
    torch::manual_seed(3);
    auto s = make_stats({0.1, 5.0, -2.0}, {0.01, 1.0, 100.0});
    for (int trial = 0; trial < 20; ++trial) {
      auto x = torch::randn({4, 3, 6, 6}) * std::pow(10.0, trial % 6);
      auto n = normalize(x, s);
      CHECK(n.max().item<double>() <= 1.0);
      CHECK(n.min().item<double>() >= -1.0);
      CHECK(n.sizes() == x.sizes());
    }
  }

  TEST_CASE("denormalize: zeros give the mean; interior roundtrip; clamped values saturate") {
    auto s = make_stats({2.0, -1.0}, {0.5, 4.0});
    auto z = denormalize(torch::zeros({2, 2, 2}), s);
    CHECK(z[0].eq(2.0).all().item<bool>());
    CHECK(z[1].eq(-1.0).all().item<bool>());

    auto x = torch::empty({2, 3, 3});
    x[0].uniform_(2.0 - 0.4, 2.0 + 0.4);
    x[1].uniform_(-1.0 - 3.0, -1.0 + 3.0);
    auto back = denormalize(normalize(x, s), s);
    CHECK(((back - x).abs() / x.abs().clamp_min(1e-6)).max().item<double>() < 1e-5);

    auto big = torch::full({2, 1, 1}, 100.0);
    auto sat = denormalize(normalize(big, s), s);
    CHECK(sat[0][0][0].item<double>() == doctest::Approx(2.5));
    CHECK(sat[1][0][0].item<double>() == doctest::Approx(3.0));
  }

  TEST_CASE("channel mismatch is rejected") {
    auto s = make_stats({0.0, 0.0}, {1.0, 1.0});
    CHECK_THROWS_AS(normalize(torch::zeros({3, 2, 2}), s), ShapeError);
    CHECK_THROWS_AS(denormalize(torch::zeros({1, 3, 2, 2}), s), ShapeError);
  }

  TEST_CASE("pre-clamp moments of a normalized toy domain are zero and one") {
    auto enc = fxtest::toy_encoder();
    std::vector<torch::Tensor> images;
    for (int i = 0; i < 6; ++i) images.push_back(fxtest::synthetic_image(fxtest::Pattern::stripes_h, i, 64));
    auto feats = enc.extract_levels(torch::stack(images), {4}).at(4);
    StatsAccumulator acc(feats.size(1));
    for (int i = 0; i < feats.size(0); ++i) acc.add(feats[i]);
    auto s = acc.finalize("a", 4);
    auto z = standardize(feats.to(torch::kFloat64), s);
    auto per_channel = z.transpose(0, 1).reshape({feats.size(1), -1});
    auto live = torch::tensor(s.std).gt(kStdFloor);
    auto means = per_channel.mean(1).masked_select(live);
    auto stds = per_channel.std(1, false).masked_select(live);
    CHECK(means.abs().max().item<double>() < 1e-4);
    CHECK((stds - 1).abs().max().item<double>() < 1e-3);
  }

  TEST_CASE("compute_stats over a folder equals accumulation over extracted features") {
    fxtest::TempDir dir;
    fxtest::write_domain(dir / "a", fxtest::Pattern::stripes_v, 4, 64);
    auto ds = build_folder_domain(dir / "a", "a");
    auto enc = fxtest::toy_encoder();
    auto s1 = compute_stats(ds, enc, 5);
    auto s2 = compute_stats(ds, enc, 5);
    CHECK(s1 == s2);
    CHECK(s1.count == 4);
    CHECK(s1.channels() == 64);

    std::vector<torch::Tensor> feats;
    for (const auto& item : ds.items) feats.push_back(enc.extract_pyramid(load_image(item.path)).at(5));
    auto [mean, stdv] = brute_force(feats);
    for (int c = 0; c < 64; ++c) {
      CHECK(s1.mean[c] == doctest::Approx(mean[c]).epsilon(1e-5));
      CHECK(s1.std[c] == doctest::Approx(std::max(stdv[c], kStdFloor)).epsilon(1e-5));
    }
  }

  TEST_CASE("stats file roundtrip is exact; errors on missing, truncated and wrong version") {
    fxtest::TempDir dir;
    auto a = make_stats({0.1, 1.0 / 3.0, -1e-300}, {1e-6, 2.5, 1e10});
    a.domain_id = "cats";
    a.count = 12;
    a.config_hash = "0123456789abcdef";
    auto b = a;
    b.domain_id = "dogs";
    b.mean[0] = 42;
    save_stats(a, stats_path(dir.path(), "cats", 3));
    save_stats(b, stats_path(dir.path(), "dogs", 3));
    CHECK(load_stats(stats_path(dir.path(), "cats", 3)) == a);
    CHECK(load_stats(stats_path(dir.path(), "dogs", 3)) == b);
    CHECK(stats_path(dir.path(), "cats", 3).filename() == "cats_L3.stats");

    CHECK_THROWS_AS(load_stats(dir / "nope.stats"), NotFoundError);

    std::string text;
    {
      std::ifstream in(stats_path(dir.path(), "cats", 3));
      text.assign(std::istreambuf_iterator<char>(in), {});
    }
    {
      std::ofstream out(dir / "trunc.stats");
      out << text.substr(0, text.size() / 2);
    }
    CHECK_THROWS_AS(load_stats(dir / "trunc.stats"), IntegrityError);
    {
      std::ofstream out(dir / "v2.stats");
      out << "featxlate-stats 2" << text.substr(text.find('\n'));
    }
    CHECK_THROWS_AS(load_stats(dir / "v2.stats"), IntegrityError);
  }
}
