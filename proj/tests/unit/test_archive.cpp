#include <doctest.h>

#include <fstream>

#include "featxlate/archive.hpp"
#include "featxlate/error.hpp"
#include "fixtures.hpp"

using namespace featxlate;
namespace fs = std::filesystem;

TEST_SUITE("archive") {
  TEST_CASE("roundtrip preserves names, dtypes, shapes and bytes") {
    fxtest::TempDir dir;
    TensorArchive ar;
    ar.meta = R"({"k":1})";
    ar.tensors["f32"] = torch::randn({2, 3, 4});
    ar.tensors["f64"] = torch::randn({5}, torch::kFloat64);
    ar.tensors["i64"] = torch::arange(7, torch::kInt64);
    ar.tensors["u8"] = torch::randint(0, 255, {3, 2}, torch::kUInt8);
    ar.tensors["scalar"] = torch::tensor(3.5);
    ar.save(dir / "a.fxar");

    auto back = TensorArchive::load(dir / "a.fxar");
    CHECK(back.meta == ar.meta);
    REQUIRE(back.tensors.size() == ar.tensors.size());
    for (const auto& [name, t] : ar.tensors) {
      CHECK_MESSAGE(fxtest::bitwise_equal(back.at(name), t), name);
    }
    CHECK_FALSE(fs::exists(dir / "a.fxar.tmp"));
  }

  TEST_CASE("non-contiguous tensors are stored by value") {
    fxtest::TempDir dir;
    TensorArchive ar;
    auto base = torch::arange(12, torch::kFloat32).view({3, 4});
    ar.tensors["t"] = base.t();
    ar.save(dir / "t.fxar");
    CHECK(fxtest::bitwise_equal(TensorArchive::load(dir / "t.fxar").at("t"), base.t().contiguous()));
  }

  TEST_CASE("missing file is a not-found error") {
    CHECK_THROWS_AS(TensorArchive::load("/nonexistent/x.fxar"), NotFoundError);
  }

  TEST_CASE("flipped byte, truncation and bad magic are integrity errors") {
    fxtest::TempDir dir;
    TensorArchive ar;
    ar.tensors["w"] = torch::randn({16});
    const auto path = dir / "w.fxar";
    ar.save(path);
    std::string bytes;
    {
      std::ifstream in(path, std::ios::binary);
      bytes.assign(std::istreambuf_iterator<char>(in), {});
    }
    auto write = [&](const std::string& b) {
      std::ofstream out(path, std::ios::binary | std::ios::trunc);
      out.write(b.data(), static_cast<std::streamsize>(b.size()));
    };

    auto flipped = bytes;
    flipped[bytes.size() / 2] ^= 0x5a;
    write(flipped);
    CHECK_THROWS_AS(TensorArchive::load(path), IntegrityError);

    write(bytes.substr(0, bytes.size() - 9));
    CHECK_THROWS_AS(TensorArchive::load(path), IntegrityError);

    auto magic = bytes;
    magic[0] = 'X';
    write(magic);
    CHECK_THROWS_AS(TensorArchive::load(path), IntegrityError);

    write(bytes);
    CHECK_NOTHROW(TensorArchive::load(path));
  }

  TEST_CASE("at() on a missing entry names it") {
    TensorArchive ar;
    try {
      ar.at("nope");
      FAIL("expected throw");
    } catch (const Error& e) {
      CHECK(std::string(e.what()).find("nope") != std::string::npos);
    }
  }

  TEST_CASE("atomic text write replaces content") {
    fxtest::TempDir dir;
    write_file_atomic(dir / "x.txt", "one");
    write_file_atomic(dir / "x.txt", "two");
    std::ifstream in(dir / "x.txt");
    std::string s;
    in >> s;
    CHECK(s == "two");
  }
}
