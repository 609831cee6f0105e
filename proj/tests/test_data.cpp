#include <catch2/catch_amalgamated.hpp>

#include <filesystem>
#include <set>

#include "hyperrecon/data.hpp"

using namespace hyperrecon;
namespace fs = std::filesystem;

TEST_CASE("phantoms are real, normalized and deterministic", "[data]") {
  for (std::uint64_t seed : {0u, 1u, 77u}) {
    const auto p = make_phantom(32, seed);
    double peak = 0.0;
    for (const auto& v : p.values()) {
      CHECK(v.imag() == 0.0);
      CHECK(v.real() >= 0.0);
      CHECK(v.real() <= 1.0);
      peak = std::max(peak, v.real());
    }
    CHECK(peak == 1.0);
    CHECK(p == make_phantom(32, seed));
  }
  CHECK_FALSE(make_phantom(32, 1) == make_phantom(32, 2));
  CHECK_THROWS_AS(make_phantom(8, 0), InvalidParameter);
}

TEST_CASE("dataset construction", "[data]") {
  const auto ds = build_dataset({6, 3, 4}, 16, 3.0, 5);
  CHECK(ds.train.size() == 6);
  CHECK(ds.val.size() == 3);
  CHECK(ds.test.size() == 4);

  std::set<std::uint64_t> seeds;
  for (const Split* s : {&ds.train, &ds.val, &ds.test})
    for (auto seed : s->seeds) seeds.insert(seed);
  CHECK(seeds.size() == 13);

  for (const Split* s : {&ds.train, &ds.val, &ds.test})
    for (std::size_t i = 0; i < s->size(); ++i) {
      CHECK(s->measurements[i].mask == ds.mask);
      // Measurements are exactly the masked transform of the stored truth.
      CHECK(s->measurements[i].kspace == undersampled_forward(s->truths[i], ds.mask).kspace);
    }
  CHECK(ds.split("test").size() == 4);
  CHECK_THROWS_AS(ds.split("holdout"), InvalidParameter);
  CHECK_THROWS_AS(build_dataset({0, 1, 1}, 16, 3.0, 5), InvalidParameter);
}

TEST_CASE("dataset directory round trip", "[data]") {
  const auto ds = build_dataset({3, 2, 2}, 16, 4.0, 9);
  const auto dir = (fs::temp_directory_path() / "hyperrecon_data_test").string();
  fs::remove_all(dir);
  save_dataset(ds, dir);
  CHECK(fs::exists(fs::path(dir) / "manifest.json"));
  CHECK(fs::exists(fs::path(dir) / "mask.bin"));

  const auto back = load_dataset(dir);
  CHECK(back.image_size == 16);
  CHECK(back.acceleration == 4.0);
  CHECK(back.seed == 9);
  CHECK(back.mask == ds.mask);
  for (const auto& name : {"train", "val", "test"}) {
    const auto& a = ds.split(name);
    const auto& b = back.split(name);
    REQUIRE(a.size() == b.size());
    CHECK(a.seeds == b.seeds);
    for (std::size_t i = 0; i < a.size(); ++i) {
      CHECK(a.truths[i] == b.truths[i]);
      CHECK(a.measurements[i].kspace == b.measurements[i].kspace);
    }
  }
  fs::remove(fs::path(dir) / "test_kspace.bin");
  CHECK_THROWS_AS(load_dataset(dir), IoError);
  fs::remove_all(dir);
  CHECK_THROWS_AS(load_dataset(dir), IoError);
}
