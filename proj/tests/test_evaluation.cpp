#include <catch2/catch_amalgamated.hpp>

#include <filesystem>

#include "hyperrecon/evaluation.hpp"
#include "hyperrecon/image_io.hpp"
#include "oracles.hpp"

using namespace hyperrecon;
using Catch::Approx;

namespace {

ComplexGrid random_real(Rng& rng, std::size_t n) {
  std::vector<double> v(n * n);
  for (auto& x : v) x = uniform01(rng);
  return ComplexGrid::from_real(n, n, v);
}

Landscape random_landscape(Rng& rng, std::size_t g) {
  Landscape land;
  land.resolution = g;
  land.coords = landscape_coords(g);
  for (std::size_t i = 0; i < g * g; ++i) land.values.push_back(std::round(uniform(rng, -2, 6) * 4) / 4);
  return land;
}

}  // namespace

TEST_CASE("psnr", "[evaluation]") {
  Rng rng = make_rng({51});
  const auto x = random_real(rng, 8);
  CHECK(psnr(x, x) == kPsnrCapDb);

  auto shifted = x;
  for (auto& v : shifted.values()) v = std::abs(v) + 0.1;
  CHECK(psnr(shifted, x) == Approx(20.0).epsilon(1e-12));

  const auto y = random_real(rng, 8);
  double se = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) se += std::pow(std::abs(x[i]) - std::abs(y[i]), 2);
  CHECK(std::abs(psnr(y, x) - 10.0 * std::log10(1.0 / (se / 64.0))) < 1e-9);
  CHECK_THROWS_AS(psnr(ComplexGrid(4, 4), ComplexGrid(4, 5)), InvalidShape);
}

TEST_CASE("rpsnr", "[evaluation]") {
  Rng rng = make_rng({52});
  const auto truth = random_real(rng, 16);
  const auto y = undersampled_forward(truth, generate_mask(16, 16, 3.0, 2));
  CHECK(rpsnr(zero_filled(y), truth, y) == 0.0);
  CHECK(rpsnr(truth, truth, y) == Approx(kPsnrCapDb - psnr(zero_filled(y), truth)).epsilon(1e-12));
  CHECK(rpsnr(truth, truth, y) > 0.0);
  const auto other = random_real(rng, 16);
  CHECK(std::abs(rpsnr(other, truth, y) - (psnr(other, truth) - psnr(zero_filled(y), truth))) < 1e-12);
}

TEST_CASE("landscape coordinates and interpolation", "[evaluation]") {
  const auto c = landscape_coords(5);
  CHECK(c == std::vector<double>{0.0, 0.25, 0.5, 0.75, 1.0});
  CHECK_THROWS_AS(landscape_coords(1), InvalidParameter);

  SECTION("bilinear interpolation reproduces an affine field") {
    const std::vector<double> a1{0.0, 0.1, 0.5, 1.0}, a2{0.0, 0.3, 1.0};
    std::vector<double> v;
    for (double x : a1)
      for (double y : a2) v.push_back(2.0 * x - 3.0 * y + 0.5);
    const auto land = interpolate_landscape(a1, a2, v, 11);
    for (std::size_t i = 0; i < 11; ++i)
      for (std::size_t j = 0; j < 11; ++j)
        CHECK(land.at(i, j) == Approx(2.0 * land.coords[i] - 3.0 * land.coords[j] + 0.5).margin(1e-12));
  }
  SECTION("invalid coarse grids") {
    CHECK_THROWS_AS(interpolate_landscape({0.0}, {0.0, 1.0}, {1, 2}, 4), InvalidShape);
    CHECK_THROWS_AS(interpolate_landscape({1.0, 0.0}, {0.0, 1.0}, {1, 2, 3, 4}, 4), InvalidParameter);
  }
}

TEST_CASE("compute_landscape", "[evaluation]") {
  const auto ds = build_dataset({1, 1, 5}, 16, 3.0, 8);
  const auto net = HyperNet::initialize(HyperNetConfig::preset("small"), MainNetConfig{}, 2);

  SECTION("cells equal the mean RPSNR of direct reconstructions") {
    const auto land = compute_landscape(net, ds.test, 3);
    for (std::size_t cell = 0; cell < 9; ++cell) {
      double s = 0.0;
      for (std::size_t k = 0; k < ds.test.size(); ++k)
        s += rpsnr(reconstruct(net, land.alpha(cell), ds.test.measurements[k]), ds.test.truths[k],
                   ds.test.measurements[k]);
      CHECK(land.values[cell] == Approx(s / 5.0).epsilon(1e-12));
    }
  }
  SECTION("invariant to test-set order") {
    Split rev = ds.test;
    std::reverse(rev.truths.begin(), rev.truths.end());
    std::reverse(rev.measurements.begin(), rev.measurements.end());
    CHECK(compute_landscape(net, rev, 4).values == compute_landscape(net, ds.test, 4).values);
  }
  SECTION("a constant-output model gives a constant landscape") {
    HyperNet zero = net;
    std::fill(zero.parameters().begin(), zero.parameters().end(), 0.0);
    const auto land = compute_landscape(zero, ds.test, 4);
    for (double v : land.values) CHECK(v == 0.0);
  }
  SECTION("missing checkpoint") {
    CHECK_THROWS_AS(compute_landscape("/nonexistent/ck.hrck", ds.test, 4), IoError);
  }
}

TEST_CASE("area above threshold", "[evaluation]") {
  Rng rng = make_rng({53});
  const auto land = random_landscape(rng, 10);
  const double lo = *std::min_element(land.values.begin(), land.values.end());
  CHECK(area_above_threshold(land, lo - 1.0) == 100.0);
  CHECK(area_above_threshold(land, land.max()) == 0.0);
  double prev = 101.0;
  for (double t : threshold_sweep(-3.0, 7.0, 0.25)) {
    const double a = area_above_threshold(land, t);
    CHECK(a == oracle::area_above(land.values, t));
    CHECK(a <= prev);
    prev = a;
  }
}

TEST_CASE("pixelwise range", "[evaluation]") {
  Rng rng = make_rng({54});
  const auto base = random_real(rng, 6);
  SECTION("single qualifying reconstruction gives zero") {
    const std::vector<ScoredReconstruction> one{{base, 3.0}};
    CHECK(pixelwise_range(one, 1.0) == 0.0);
  }
  SECTION("constant offset c on N pixels gives c N") {
    auto up = base;
    for (auto& v : up.values()) v += 0.25;
    const std::vector<ScoredReconstruction> two{{base, 3.0}, {up, 4.0}};
    CHECK(pixelwise_range(two, 1.0) == Approx(0.25 * 36).epsilon(1e-12));
    CHECK(pixelwise_range(two, 3.5) == 0.0);
  }
  SECTION("matches the double-loop oracle and is non-increasing") {
    std::vector<ScoredReconstruction> set;
    std::vector<ComplexGrid> images;
    std::vector<double> scores;
    for (int k = 0; k < 5; ++k) {
      images.push_back(oracle::random_grid(rng, 6, 6));
      scores.push_back(uniform(rng, 0, 5));
      set.push_back({images.back(), scores.back()});
    }
    double prev = std::numeric_limits<double>::infinity();
    for (double t : threshold_sweep(0.0, 5.0, 0.25)) {
      const double r = pixelwise_range(set, t);
      CHECK(std::abs(r - oracle::pixel_range(images, scores, t)) < 1e-12);
      CHECK(r <= prev);
      prev = r;
    }
  }
}

TEST_CASE("diverse pair", "[evaluation]") {
  Rng rng = make_rng({55});
  SECTION("collinear candidates pick the extreme pair") {
    const auto ref = random_real(rng, 4);
    std::vector<ScoredReconstruction> set;
    for (double d : {0.0, 1.0, 3.0}) {
      auto img = ref;
      img[0] = cplx(std::abs(img[0]) + d, 0.0);
      set.push_back({img, 4.2});
    }
    const auto p = diverse_pair(set, 4.0, 4.5);
    CHECK(p.first == 0);
    CHECK(p.second == 2);
    CHECK(p.distance == Approx(3.0).epsilon(1e-12));
  }
  SECTION("matches all-pairs search") {
    std::vector<ScoredReconstruction> set;
    std::vector<ComplexGrid> images;
    std::vector<double> scores;
    for (int k = 0; k < 10; ++k) {
      images.push_back(oracle::random_grid(rng, 5, 5));
      scores.push_back(uniform(rng, 3.5, 5.0));
      set.push_back({images.back(), scores.back()});
    }
    const auto want = oracle::farthest_pair(images, scores, 4.0, 4.5);
    if (want.first < 0) {
      CHECK_THROWS_AS(diverse_pair(set, 4.0, 4.5), InsufficientCandidates);
    } else {
      const auto got = diverse_pair(set, 4.0, 4.5);
      CHECK(static_cast<long>(got.first) == want.first);
      CHECK(static_cast<long>(got.second) == want.second);
    }
  }
  SECTION("identical candidates tie-break to the lowest indices") {
    const auto img = random_real(rng, 4);
    const std::vector<ScoredReconstruction> set{{img, 4.1}, {img, 4.2}, {img, 4.3}};
    const auto p = diverse_pair(set, 4.0, 4.5);
    CHECK(p.first == 0);
    CHECK(p.second == 1);
  }
  SECTION("fewer than two in band") {
    const std::vector<ScoredReconstruction> set{{random_real(rng, 4), 4.2}, {random_real(rng, 4), 6.0}};
    CHECK_THROWS_AS(diverse_pair(set, 4.0, 4.5), InsufficientCandidates);
  }
}

TEST_CASE("landscape outputs", "[evaluation]") {
  Rng rng = make_rng({56});
  const auto land = random_landscape(rng, 4);
  const auto csv = landscape_csv(land);
  CHECK(csv.rfind("alpha1,alpha2,rpsnr_db\n", 0) == 0);
  CHECK(std::count(csv.begin(), csv.end(), '\n') == 17);

  const auto png = landscape_png(land, {0.0, 1.0}, 8);
  REQUIRE(png.size() > 8);
  CHECK(png.substr(1, 3) == "PNG");
  CHECK(base64_decode(base64_encode(png)) == png);
  CHECK(base64_encode("ab") == "YWI=");
  CHECK(base64_encode("abc") == "YWJj");
}
