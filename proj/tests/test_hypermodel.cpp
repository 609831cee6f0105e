#include <catch2/catch_amalgamated.hpp>

#include <cstdio>
#include <filesystem>

#include "hyperrecon/hypermodel.hpp"
#include "oracles.hpp"

using namespace hyperrecon;
using Catch::Approx;

namespace {

Measurement random_measurement(Rng& rng, std::size_t n, double accel = 3.0, std::uint64_t mask_seed = 1) {
  return undersampled_forward(oracle::random_grid(rng, n, n), generate_mask(n, n, accel, mask_seed));
}

}  // namespace

TEST_CASE("AlphaVector domain", "[hypermodel]") {
  CHECK(AlphaVector{0.0, 1.0}.p() == 2);
  CHECK(AlphaVector{0.3}.p() == 1);
  CHECK_THROWS_AS((AlphaVector{1.5, 0.2}), DomainError);
  CHECK_THROWS_AS((AlphaVector{-0.01}), DomainError);
  CHECK_THROWS_AS((AlphaVector{0.1, 0.2, 0.3}), DomainError);
  CHECK_THROWS_AS(AlphaVector(std::vector<double>{}), DomainError);
  CHECK_THROWS_AS((AlphaVector{std::nan("")}), DomainError);
}

TEST_CASE("main network layout", "[hypermodel]") {
  const MainNetConfig cfg;
  const auto layout = WeightLayout::of(cfg);
  REQUIRE(layout.layers.size() == 3);
  // 2->8, 8->8, 8->2 with 3x3 kernels and biases.
  CHECK(layout.total == (2 * 8 * 9 + 8) + (8 * 8 * 9 + 8) + (8 * 2 * 9 + 2));
  std::size_t next = 0;
  for (const auto& s : layout.layers) {
    CHECK(s.weight_offset == next);
    CHECK(s.bias_offset == s.weight_offset + s.weight_count());
    next = s.bias_offset + s.out_channels;
  }
  CHECK(next == layout.total);
  CHECK_THROWS_AS(WeightLayout::of(MainNetConfig{{3, 8, 2}}), InvalidParameter);
}

TEST_CASE("reg_weight_l1", "[hypermodel]") {
  const auto layout = WeightLayout::of(MainNetConfig{});
  CHECK(reg_weight_l1({std::vector<double>(layout.total, 0.0), layout}) == 0.0);

  Rng rng = make_rng({21});
  std::vector<double> flat(layout.total);
  for (auto& v : flat) v = standard_normal(rng);
  double brute = 0.0;
  for (double v : flat) brute += std::abs(v);
  const WeightVector theta{flat, layout};
  CHECK(reg_weight_l1(theta) == Approx(brute).epsilon(1e-12));

  std::vector<double> scaled(flat);
  for (auto& v : scaled) v *= -2.5;
  CHECK(reg_weight_l1({scaled, layout}) == Approx(2.5 * reg_weight_l1(theta)).epsilon(1e-12));

  MainNetConfig tiny{{2, 2}, 1, 0.2};
  const auto tl = WeightLayout::of(tiny);
  REQUIRE(tl.total == 6);
  CHECK(reg_weight_l1({{1, -2, 3, 0, 0, 0}, tl}) == 6.0);
}

TEST_CASE("reg_tv", "[hypermodel]") {
  CHECK(reg_tv(ComplexGrid(5, 5, std::vector<cplx>(25, cplx(0.4, -0.1)))) == 0.0);
  CHECK(reg_tv(ComplexGrid::from_real(2, 2, std::vector<double>{0, 1, 0, 1})) == 2.0);

  Rng rng = make_rng({22});
  const auto x = oracle::random_grid(rng, 8, 8);
  CHECK(reg_tv(x) == Approx(oracle::tv(x)).epsilon(1e-12));

  // Real non-negative images: the same as TV of the magnitude image.
  std::vector<double> real(64);
  for (auto& v : real) v = uniform01(rng);
  const auto r = ComplexGrid::from_real(8, 8, real);
  double mag = 0.0;
  for (std::size_t i = 0; i < 8; ++i)
    for (std::size_t j = 0; j < 8; ++j) {
      if (j + 1 < 8) mag += std::abs(real[i * 8 + j + 1] - real[i * 8 + j]);
      if (i + 1 < 8) mag += std::abs(real[(i + 1) * 8 + j] - real[i * 8 + j]);
    }
  CHECK(reg_tv(r) == Approx(mag).epsilon(1e-12));
}

TEST_CASE("bounded loss parameterizations", "[hypermodel]") {
  CHECK(loss_p2(2, 4, 8, AlphaVector{0.5, 0.5}) == 4.0);
  CHECK(loss_p2(2, 4, 8, AlphaVector{1.0, 0.3}) == 2.0);
  CHECK(loss_p2(2, 4, 8, AlphaVector{0.0, 1.0}) == 4.0);
  CHECK(loss_p2(2, 4, 8, AlphaVector{0.0, 0.0}) == 8.0);
  CHECK(loss_p1(2, 8, AlphaVector{0.0}) == 2.0);
  CHECK(loss_p1(2, 8, AlphaVector{1.0}) == 8.0);
  CHECK(loss_p1(2, 8, AlphaVector{0.25}) == 0.75 * 2 + 0.25 * 8);
  CHECK_THROWS_AS(loss_p2(1, 1, 1, AlphaVector{0.5}), DomainError);
  CHECK_THROWS_AS(loss_p1(1, 1, AlphaVector{0.5, 0.5}), DomainError);

  SECTION("coefficients sum to one and the loss is affine in each term") {
    Rng rng = make_rng({23});
    for (int k = 0; k < 200; ++k) {
      const AlphaVector a{uniform01(rng), uniform01(rng)};
      const auto c = loss_coefficients(a);
      CHECK(std::abs(c.data + c.weight_l1 + c.tv - 1.0) < 1e-12);
      const double j1 = uniform(rng, 0, 10), j2 = uniform(rng, 0, 10), r1 = uniform(rng, 0, 10),
                   r2 = uniform(rng, 0, 10), s = uniform(rng, -3, 3);
      const double lhs = loss_p2(j1 + s * j2, r1, r2, a);
      const double rhs = loss_p2(j1, r1, r2, a) + s * (loss_p2(j2, r1, r2, a) - loss_p2(0, r1, r2, a));
      CHECK(lhs == Approx(rhs).margin(1e-10));
    }
  }
}

TEST_CASE("main network forward", "[hypermodel]") {
  Rng rng = make_rng({24});
  const MainNetConfig cfg;
  const auto layout = WeightLayout::of(cfg);
  const auto y = random_measurement(rng, 16);

  SECTION("zero theta returns the zero-filled image bit-exactly") {
    const auto out = mainnet_forward(cfg, {std::vector<double>(layout.total, 0.0), layout}, y);
    CHECK(out == zero_filled(y));
  }
  SECTION("output shape follows the input for several sizes") {
    std::vector<double> flat(layout.total);
    for (auto& v : flat) v = 0.1 * standard_normal(rng);
    for (std::size_t n : {8u, 12u, 16u}) {
      const auto m = random_measurement(rng, n);
      const auto out = mainnet_forward(cfg, {flat, layout}, m);
      CHECK(out.height() == n);
      CHECK(out.width() == n);
    }
  }
  SECTION("wrong theta length") {
    CHECK_THROWS_AS(mainnet_forward(cfg, {std::vector<double>(layout.total - 1, 0.0), layout}, y), InvalidShape);
  }
  SECTION("loss gradient with respect to theta matches finite differences") {
    std::vector<double> flat(layout.total);
    for (auto& v : flat) v = 0.2 * standard_normal(rng);
    const AlphaVector alpha{0.6, 0.3};
    auto loss_of = [&](const std::vector<double>& th, std::vector<double>* grad) {
      ad::Tape t;
      ad::Var theta = t.parameter(ad::Tensor({th.size()}, th));
      ad::Var zf = t.constant(to_channels(zero_filled(y)));
      ad::Var x = mainnet_forward(t, cfg, theta, zf);
      const auto c = loss_coefficients(alpha);
      ad::Var l = ad::add(t, ad::scale(t, data_consistency_node(t, x, y), c.data),
                          ad::add(t, ad::scale(t, ad::l1_norm(t, theta), c.weight_l1),
                                  ad::scale(t, tv_node(t, x), c.tv)));
      if (grad) *grad = t.backward(l)[0].data;
      return t.value(l).item();
    };
    std::vector<double> g;
    const double l0 = loss_of(flat, &g);
    CHECK(l0 == Approx(loss_p2(mainnet_forward(cfg, {flat, layout}, y), {flat, layout}, y, alpha)).epsilon(1e-12));
    const auto fd = oracle::central_difference([&](const std::vector<double>& v) { return loss_of(v, nullptr); }, flat);
    CHECK(oracle::relative_error(g, fd) < 1e-4);
  }
}

TEST_CASE("hypernetwork presets and shapes", "[hypermodel]") {
  CHECK(HyperNetConfig::preset("small").hidden == std::vector<std::size_t>{2, 4});
  CHECK(HyperNetConfig::preset("medium").hidden == std::vector<std::size_t>{8, 32});
  CHECK(HyperNetConfig::preset("large").hidden == std::vector<std::size_t>{8, 32, 32, 32});
  CHECK_THROWS_AS(HyperNetConfig::preset("huge"), InvalidParameter);

  const auto net = HyperNet::initialize(HyperNetConfig::preset("small"), MainNetConfig{}, 3);
  const std::size_t n = WeightLayout::of(MainNetConfig{}).total;
  CHECK(net.output_dim() == n);
  CHECK(net.parameter_count() == (2 * 2 + 2) + (2 * 4 + 4) + (4 * n + n));
  for (const AlphaVector a : {AlphaVector{0.0, 0.0}, AlphaVector{1.0, 1.0}, AlphaVector{0.3, 0.9}}) {
    const auto theta = net.generate(a);
    CHECK(theta.flat.size() == n);
    CHECK(net.generate(a).flat == theta.flat);
  }
  CHECK_THROWS_AS(net.generate(AlphaVector{0.5}), DomainError);
}

TEST_CASE("tape and plain hypernetwork paths agree bit-for-bit", "[hypermodel]") {
  for (const char* size : {"small", "medium", "large"}) {
    const auto net = HyperNet::initialize(HyperNetConfig::preset(size), MainNetConfig{}, 5);
    const AlphaVector a{0.25, 0.8};
    ad::Tape t;
    const auto g = net.forward(t, a);
    CHECK(t.value(g.theta).data == net.generate(a).flat);
  }
}

TEST_CASE("initial generated weights approximate Kaiming variance", "[hypermodel]") {
  for (const char* size : {"small", "medium", "large"}) {
    const auto net = HyperNet::initialize(HyperNetConfig::preset(size), MainNetConfig{}, 11);
    Rng rng = make_rng({99});
    const auto& layers = net.layout().layers;
    std::vector<double> s1(layers.size(), 0.0), s2(layers.size(), 0.0);
    const int draws = 500;
    for (int d = 0; d < draws; ++d) {
      const auto theta = net.generate(AlphaVector{uniform01(rng), uniform01(rng)});
      for (std::size_t l = 0; l < layers.size(); ++l)
        for (std::size_t j = layers[l].weight_offset; j < layers[l].bias_offset; ++j) {
          s1[l] += theta.flat[j];
          s2[l] += theta.flat[j] * theta.flat[j];
        }
    }
    for (std::size_t l = 0; l < layers.size(); ++l) {
      const double count = static_cast<double>(draws) * static_cast<double>(layers[l].weight_count());
      const double mean = s1[l] / count;
      const double var = s2[l] / count - mean * mean;
      const double target = 2.0 / static_cast<double>(layers[l].fan_in());
      INFO(size << " layer " << l << " variance " << var << " target " << target);
      CHECK(var > 0.7 * target);
      CHECK(var < 1.3 * target);
    }
  }
}

TEST_CASE("full composed loss gradient with respect to phi", "[hypermodel]") {
  Rng rng = make_rng({25});
  const auto y = random_measurement(rng, 16);
  const auto net0 = HyperNet::initialize(HyperNetConfig::preset("small"), MainNetConfig{}, 7);
  REQUIRE(net0.parameter_count() <= 5000);
  for (const AlphaVector alpha : {AlphaVector{0.7, 0.4}, AlphaVector{0.2, 0.9}}) {
    ad::Tape t;
    const auto s = build_sample_loss(t, net0, alpha, y);
    t.backward(s.loss);
    const auto grad = net0.flatten_gradient(t, s.hyper);

    const std::vector<double> phi0(net0.parameters().begin(), net0.parameters().end());
    auto f = [&](const std::vector<double>& phi) {
      HyperNet net = net0;
      std::copy(phi.begin(), phi.end(), net.parameters().begin());
      ad::Tape tt;
      return tt.value(build_sample_loss(tt, net, alpha, y).loss).item();
    };
    CHECK(oracle::relative_error(grad, oracle::central_difference(f, phi0)) < 1e-4);
  }
}

TEST_CASE("checkpoint round trip", "[hypermodel]") {
  const auto net = HyperNet::initialize(HyperNetConfig::preset("medium"), MainNetConfig{}, 13);
  const auto path = (std::filesystem::temp_directory_path() / "hyperrecon_ck_test.hrck").string();
  save_checkpoint(path, net, {{"seed", 13}, {"step", 42}});
  const auto ck = load_checkpoint(path);
  CHECK(ck.metadata.at("step") == 42);
  CHECK(std::vector<double>(ck.net.parameters().begin(), ck.net.parameters().end()) ==
        std::vector<double>(net.parameters().begin(), net.parameters().end()));
  CHECK(ck.net.norm_shift() == net.norm_shift());
  CHECK(ck.net.norm_gain() == net.norm_gain());
  const AlphaVector a{0.4, 0.6};
  CHECK(ck.net.generate(a).flat == net.generate(a).flat);

  const auto bytes = encode_checkpoint(net, {});
  CHECK(std::string(bytes.data(), 4) == "HRCK");

  // Truncation and a bad magic are I/O errors.
  io::Writer w;
  w.bytes(std::string_view(bytes.data(), 40));
  w.save(path);
  CHECK_THROWS_AS(load_checkpoint(path), IoError);
  io::Writer bad;
  bad.bytes("XXXX");
  bad.save(path);
  CHECK_THROWS_AS(load_checkpoint(path), IoError);
  std::remove(path.c_str());
  CHECK_THROWS_AS(load_checkpoint(path), IoError);
}
