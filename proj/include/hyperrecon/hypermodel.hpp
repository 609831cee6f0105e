#pragma once

// Hypernetwork H_phi: [0,1]^p -> Theta, the residual convolutional reconstruction
// network G_theta it parameterizes, and the bounded regularization losses.

#include <array>
#include <cmath>
#include <cstdint>
#include <optional>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "hyperrecon/autodiff.hpp"
#include "hyperrecon/binary_io.hpp"
#include "hyperrecon/error.hpp"
#include "hyperrecon/random.hpp"
#include "hyperrecon/signal.hpp"

namespace hyperrecon {

using json = nlohmann::json;

/// Regularization weights, p in {1, 2}, each component in [0, 1].
class AlphaVector {
 public:
  AlphaVector(std::initializer_list<double> a) : AlphaVector(std::vector<double>(a)) {}
  explicit AlphaVector(std::span<const double> a) : p_(a.size()) {
    if (p_ != 1 && p_ != 2) throw DomainError("AlphaVector: p must be 1 or 2, got " + std::to_string(p_));
    for (std::size_t i = 0; i < p_; ++i) {
      if (!(a[i] >= 0.0 && a[i] <= 1.0))
        throw DomainError("AlphaVector: component " + std::to_string(i) + " = " + std::to_string(a[i]) +
                          " outside [0,1]");
      v_[i] = a[i];
    }
  }
  explicit AlphaVector(const std::vector<double>& a) : AlphaVector(std::span<const double>(a)) {}

  std::size_t p() const { return p_; }
  double operator[](std::size_t i) const { return v_.at(i); }
  std::span<const double> values() const { return {v_.data(), p_}; }
  friend bool operator==(const AlphaVector&, const AlphaVector&) = default;

 private:
  std::size_t p_ = 0;
  std::array<double, 2> v_{};
};

// ---------------------------------------------------------------------------
// Main network layout

struct MainNetConfig {
  // Channel chain from input to output; both ends are the 2 (real, imaginary) channels.
  std::vector<std::size_t> channels{2, 8, 8, 2};
  std::size_t kernel = 3;
  double slope = 0.2;

  std::size_t layer_count() const { return channels.size() - 1; }

  void validate() const {
    if (channels.size() < 2 || channels.front() != 2 || channels.back() != 2)
      throw InvalidParameter("MainNetConfig: channel chain must start and end with 2");
    for (auto c : channels)
      if (c == 0) throw InvalidParameter("MainNetConfig: zero channel count");
    if (kernel % 2 == 0) throw InvalidParameter("MainNetConfig: kernel must be odd");
  }
};

struct LayerSlot {
  std::size_t weight_offset = 0;
  std::size_t bias_offset = 0;
  std::size_t out_channels = 0;
  std::size_t in_channels = 0;
  std::size_t kernel = 0;

  std::size_t weight_count() const { return out_channels * in_channels * kernel * kernel; }
  std::size_t fan_in() const { return in_channels * kernel * kernel; }
};

/// Per-layer offsets into the flat theta vector: [weights | bias] for each layer in order.
struct WeightLayout {
  std::vector<LayerSlot> layers;
  std::size_t total = 0;

  static WeightLayout of(const MainNetConfig& cfg) {
    cfg.validate();
    WeightLayout out;
    for (std::size_t l = 0; l < cfg.layer_count(); ++l) {
      LayerSlot s{out.total, 0, cfg.channels[l + 1], cfg.channels[l], cfg.kernel};
      s.bias_offset = s.weight_offset + s.weight_count();
      out.total = s.bias_offset + s.out_channels;
      out.layers.push_back(s);
    }
    return out;
  }
};

struct WeightVector {
  std::vector<double> flat;
  WeightLayout layout;
};

inline ad::Tensor to_channels(const ComplexGrid& g) {
  const std::size_t hw = g.size();
  std::vector<double> d(2 * hw);
  for (std::size_t i = 0; i < hw; ++i) {
    d[i] = g[i].real();
    d[hw + i] = g[i].imag();
  }
  return ad::Tensor({2, g.height(), g.width()}, std::move(d));
}

inline ComplexGrid from_channels(const ad::Tensor& t) {
  if (t.rank() != 3 || t.shape[0] != 2) throw InvalidShape("from_channels: expected [2,H,W]");
  const std::size_t hw = t.shape[1] * t.shape[2];
  std::vector<cplx> v(hw);
  for (std::size_t i = 0; i < hw; ++i) v[i] = {t.data[i], t.data[hw + i]};
  return ComplexGrid(t.shape[1], t.shape[2], std::move(v));
}

/// J(x, y) as a tape node on the 2-channel image. The adjoint is the analytic
/// 2 F_u^H (F_u x - y), split into real and imaginary channels.
inline ad::Var data_consistency_node(ad::Tape& t, ad::Var x, const Measurement& y) {
  const ComplexGrid img = from_channels(t.value(x));
  ComplexGrid residual = kspace_residual(img, y);
  const double j = residual.norm2();
  return t.record(ad::Tensor::scalar(j), {x}, [x, residual = std::move(residual)](ad::Tape& tp, const std::vector<double>& g) {
    const ComplexGrid adj = ifft2(residual);
    auto& gx = tp.grad_buffer(x);
    const std::size_t hw = adj.size();
    for (std::size_t i = 0; i < hw; ++i) {
      gx[i] += 2.0 * g[0] * adj[i].real();
      gx[hw + i] += 2.0 * g[0] * adj[i].imag();
    }
  });
}

/// x_hat = zero_filled(y) + CNN(zero_filled(y)) with weights sliced from theta.
inline ad::Var mainnet_forward(ad::Tape& t, const MainNetConfig& cfg, ad::Var theta, ad::Var zero_filled_input) {
  const WeightLayout layout = WeightLayout::of(cfg);
  if (t.value(theta).size() != layout.total)
    throw InvalidShape("mainnet_forward: theta has " + std::to_string(t.value(theta).size()) + " values, expected " +
                       std::to_string(layout.total));
  ad::Var h = zero_filled_input;
  for (std::size_t l = 0; l < layout.layers.size(); ++l) {
    const auto& s = layout.layers[l];
    ad::Var w = ad::slice(t, theta, s.weight_offset, {s.out_channels, s.in_channels, s.kernel, s.kernel});
    ad::Var b = ad::slice(t, theta, s.bias_offset, {s.out_channels});
    h = ad::conv2d(t, h, w, b);
    if (l + 1 < layout.layers.size()) h = ad::leaky_relu(t, h, cfg.slope);
  }
  return ad::add(t, zero_filled_input, h);
}

inline ComplexGrid mainnet_forward(const MainNetConfig& cfg, const WeightVector& theta, const Measurement& y) {
  if (theta.flat.size() != WeightLayout::of(cfg).total)
    throw InvalidShape("mainnet_forward: theta length " + std::to_string(theta.flat.size()) + " != n");
  ad::Tape t;
  ad::Var th = t.constant(ad::Tensor({theta.flat.size()}, theta.flat));
  ad::Var zf = t.constant(to_channels(zero_filled(y)));
  return from_channels(t.value(mainnet_forward(t, cfg, th, zf)));
}

// ---------------------------------------------------------------------------
// Regularizers and bounded losses

/// R1: sum over layers of the l1 norm of that layer's parameters.
inline double reg_weight_l1(const WeightVector& theta) {
  double total = 0.0;
  for (const auto& s : theta.layout.layers) {
    double layer = 0.0;
    for (std::size_t i = s.weight_offset; i < s.bias_offset + s.out_channels; ++i) layer += std::abs(theta.flat[i]);
    total += layer;
  }
  return total;
}

/// R2: anisotropic total variation of the complex image, sum of |x(i,j+1) - x(i,j)|
/// and |x(i+1,j) - x(i,j)| with no wrap-around. Equals magnitude TV for real,
/// non-negative images.
inline double reg_tv(const ComplexGrid& x) {
  const std::size_t h = x.height(), w = x.width();
  double s = 0.0;
  for (std::size_t i = 0; i < h; ++i)
    for (std::size_t j = 0; j < w; ++j) {
      if (j + 1 < w) s += std::abs(x[i * w + j + 1] - x[i * w + j]);
      if (i + 1 < h) s += std::abs(x[(i + 1) * w + j] - x[i * w + j]);
    }
  return s;
}

struct LossCoefficients {
  double data = 0.0;
  double weight_l1 = 0.0;
  double tv = 0.0;
};

/// p = 1: (1 - a1) J + a1 R, with R the image TV.
/// p = 2: a1 J + (1 - a1) a2 R1 + (1 - a1)(1 - a2) R2.
inline LossCoefficients loss_coefficients(const AlphaVector& a) {
  if (a.p() == 1) return {1.0 - a[0], 0.0, a[0]};
  return {a[0], (1.0 - a[0]) * a[1], (1.0 - a[0]) * (1.0 - a[1])};
}

inline double loss_p1(double j, double r, const AlphaVector& a) {
  if (a.p() != 1) throw DomainError("loss_p1: requires p = 1");
  return (1.0 - a[0]) * j + a[0] * r;
}

inline double loss_p2(double j, double r1, double r2, const AlphaVector& a) {
  if (a.p() != 2) throw DomainError("loss_p2: requires p = 2");
  const auto c = loss_coefficients(a);
  return c.data * j + c.weight_l1 * r1 + c.tv * r2;
}

inline double loss_p1(const ComplexGrid& xhat, const Measurement& y, const AlphaVector& a) {
  return loss_p1(data_consistency(xhat, y), reg_tv(xhat), a);
}

inline double loss_p2(const ComplexGrid& xhat, const WeightVector& theta, const Measurement& y, const AlphaVector& a) {
  return loss_p2(data_consistency(xhat, y), reg_weight_l1(theta), reg_tv(xhat), a);
}

// ---------------------------------------------------------------------------
// Hypernetwork

struct HyperNetConfig {
  std::size_t input_dim = 2;
  std::vector<std::size_t> hidden{2, 4};
  double slope = 0.2;

  static HyperNetConfig preset(const std::string& name, std::size_t p = 2) {
    if (name == "small") return {p, {2, 4}};
    if (name == "medium") return {p, {8, 32}};
    if (name == "large") return {p, {8, 32, 32, 32}};
    throw InvalidParameter("unknown hypernetwork size '" + name + "' (small|medium|large)");
  }

  void validate() const {
    if (input_dim != 1 && input_dim != 2) throw InvalidParameter("HyperNetConfig: input_dim must be 1 or 2");
    for (auto w : hidden)
      if (w == 0) throw InvalidParameter("HyperNetConfig: zero hidden width");
  }
};

struct DenseSlot {
  std::size_t weight_offset = 0;  // [in, out], row-major
  std::size_t bias_offset = 0;    // [out]
  std::size_t in = 0;
  std::size_t out = 0;
};

class HyperNet {
 public:
  HyperNet() = default;

  HyperNet(HyperNetConfig cfg, MainNetConfig main) : cfg_(std::move(cfg)), main_(std::move(main)) {
    cfg_.validate();
    layout_ = WeightLayout::of(main_);
    std::size_t in = cfg_.input_dim, off = 0;
    std::vector<std::size_t> widths = cfg_.hidden;
    widths.push_back(layout_.total);
    for (auto out : widths) {
      dense_.push_back({off, off + in * out, in, out});
      off += in * out + out;
      in = out;
    }
    phi_.assign(off, 0.0);
    norm_shift_.resize(cfg_.hidden.size());
    norm_gain_.resize(cfg_.hidden.size());
    for (std::size_t l = 0; l < cfg_.hidden.size(); ++l) {
      norm_shift_[l].assign(cfg_.hidden[l], 0.0);
      norm_gain_[l].assign(cfg_.hidden[l], 1.0);
    }
  }

  /// Random initialization. Hidden layers are Kaiming-normal with fixed per-unit
  /// normalization estimated from alpha ~ U[0,1]^p. Each block of the output layer
  /// that feeds a main-net layer's weights is rescaled so that the generated
  /// weights have variance 2 / fan_in of that layer; bias outputs start at zero.
  static HyperNet initialize(const HyperNetConfig& cfg, const MainNetConfig& main, std::uint64_t seed) {
    HyperNet net(cfg, main);
    Rng rng = make_rng({seed, 0x68797065ull});
    for (std::size_t l = 0; l + 1 < net.dense_.size(); ++l) {
      const auto& d = net.dense_[l];
      const double sd = std::sqrt(2.0 / static_cast<double>(d.in));
      for (std::size_t i = 0; i < d.in * d.out; ++i) net.phi_[d.weight_offset + i] = sd * standard_normal(rng);
    }
    const auto& last = net.dense_.back();
    for (const auto& s : net.layout_.layers)
      for (std::size_t i = 0; i < last.in; ++i)
        for (std::size_t j = s.weight_offset; j < s.bias_offset; ++j)
          net.phi_[last.weight_offset + i * last.out + j] = standard_normal(rng);

    constexpr std::size_t kDraws = 1024;
    std::vector<std::vector<double>> samples(kDraws);
    for (auto& a : samples) {
      a.resize(cfg.input_dim);
      for (auto& v : a) v = uniform01(rng);
    }

    // Hidden normalization, layer by layer on the already-normalized prefix.
    for (std::size_t l = 0; l < cfg.hidden.size(); ++l) {
      const std::size_t w = cfg.hidden[l];
      std::vector<double> mean(w, 0.0), sq(w, 0.0);
      for (const auto& a : samples) {
        const auto pre = net.preactivation(a, l);
        for (std::size_t u = 0; u < w; ++u) {
          mean[u] += pre[u];
          sq[u] += pre[u] * pre[u];
        }
      }
      for (std::size_t u = 0; u < w; ++u) {
        const double m = mean[u] / kDraws;
        const double var = std::max(sq[u] / kDraws - m * m, 1e-16);
        net.norm_shift_[l][u] = -m;
        net.norm_gain_[l][u] = 1.0 / std::sqrt(var);
      }
    }

    // Output-block calibration to 2 / fan_in.
    std::vector<double> s1(net.layout_.layers.size(), 0.0), s2(s1.size(), 0.0);
    for (const auto& a : samples) {
      const auto theta = net.generate_raw(a);
      for (std::size_t l = 0; l < net.layout_.layers.size(); ++l) {
        const auto& s = net.layout_.layers[l];
        for (std::size_t j = s.weight_offset; j < s.bias_offset; ++j) {
          s1[l] += theta[j];
          s2[l] += theta[j] * theta[j];
        }
      }
    }
    for (std::size_t l = 0; l < net.layout_.layers.size(); ++l) {
      const auto& s = net.layout_.layers[l];
      const double count = static_cast<double>(kDraws * s.weight_count());
      const double m = s1[l] / count;
      const double var = s2[l] / count - m * m;
      if (!(var > 0.0)) continue;
      const double factor = std::sqrt(2.0 / static_cast<double>(s.fan_in()) / var);
      for (std::size_t i = 0; i < last.in; ++i)
        for (std::size_t j = s.weight_offset; j < s.bias_offset; ++j) net.phi_[last.weight_offset + i * last.out + j] *= factor;
    }
    return net;
  }

  const HyperNetConfig& config() const { return cfg_; }
  const MainNetConfig& main_config() const { return main_; }
  const WeightLayout& layout() const { return layout_; }
  const std::vector<DenseSlot>& dense_layers() const { return dense_; }
  std::size_t output_dim() const { return layout_.total; }
  std::size_t parameter_count() const { return phi_.size(); }

  std::span<double> parameters() { return phi_; }
  std::span<const double> parameters() const { return phi_; }

  const std::vector<std::vector<double>>& norm_shift() const { return norm_shift_; }
  const std::vector<std::vector<double>>& norm_gain() const { return norm_gain_; }
  void set_normalization(std::vector<std::vector<double>> shift, std::vector<std::vector<double>> gain) {
    if (shift.size() != cfg_.hidden.size() || gain.size() != cfg_.hidden.size())
      throw InvalidShape("set_normalization: layer count mismatch");
    for (std::size_t l = 0; l < shift.size(); ++l)
      if (shift[l].size() != cfg_.hidden[l] || gain[l].size() != cfg_.hidden[l])
        throw InvalidShape("set_normalization: width mismatch at layer " + std::to_string(l));
    norm_shift_ = std::move(shift);
    norm_gain_ = std::move(gain);
  }

  struct Graph {
    ad::Var theta;                // [1, n]
    std::vector<ad::Var> params;  // W0, b0, W1, b1, ... in phi order
  };

  /// Records H_phi(alpha) on the tape with phi blocks as parameter leaves.
  Graph forward(ad::Tape& t, const AlphaVector& alpha) const {
    check_alpha(alpha);
    Graph g;
    ad::Var h = t.constant(ad::Tensor({1, alpha.p()}, std::vector<double>(alpha.values().begin(), alpha.values().end())));
    for (std::size_t l = 0; l < dense_.size(); ++l) {
      const auto& d = dense_[l];
      ad::Var w = t.parameter(block(d.weight_offset, {d.in, d.out}));
      ad::Var b = t.parameter(block(d.bias_offset, {1, d.out}));
      g.params.push_back(w);
      g.params.push_back(b);
      h = ad::add(t, ad::matmul(t, h, w), b);
      if (l + 1 < dense_.size()) {
        h = ad::add(t, h, t.constant(ad::Tensor({1, d.out}, norm_shift_[l])));
        h = ad::mul(t, h, t.constant(ad::Tensor({1, d.out}, norm_gain_[l])));
        h = ad::leaky_relu(t, h, cfg_.slope);
      }
    }
    g.theta = h;
    return g;
  }

  /// theta = H_phi(alpha) without recording gradients.
  WeightVector generate(const AlphaVector& alpha) const {
    check_alpha(alpha);
    return {generate_raw(alpha.values()), layout_};
  }

  /// Flattens per-block gradients from Graph::params back into phi order.
  std::vector<double> flatten_gradient(const ad::Tape& t, const Graph& g) const {
    std::vector<double> out(phi_.size(), 0.0);
    for (std::size_t l = 0; l < dense_.size(); ++l) {
      const auto gw = t.grad(g.params[2 * l]);
      const auto gb = t.grad(g.params[2 * l + 1]);
      std::copy(gw.data.begin(), gw.data.end(), out.begin() + static_cast<std::ptrdiff_t>(dense_[l].weight_offset));
      std::copy(gb.data.begin(), gb.data.end(), out.begin() + static_cast<std::ptrdiff_t>(dense_[l].bias_offset));
    }
    return out;
  }

 private:
  void check_alpha(const AlphaVector& a) const {
    if (a.p() != cfg_.input_dim)
      throw DomainError("hypernetwork expects p = " + std::to_string(cfg_.input_dim) + ", got " + std::to_string(a.p()));
  }

  ad::Tensor block(std::size_t offset, ad::Shape shape) const {
    const std::size_t n = ad::shape_size(shape);
    return ad::Tensor(std::move(shape), std::vector<double>(phi_.begin() + static_cast<std::ptrdiff_t>(offset),
                                                            phi_.begin() + static_cast<std::ptrdiff_t>(offset + n)));
  }

  std::vector<double> dense(std::span<const double> in, const DenseSlot& d) const {
    std::vector<double> out(phi_.begin() + static_cast<std::ptrdiff_t>(d.bias_offset),
                            phi_.begin() + static_cast<std::ptrdiff_t>(d.bias_offset + d.out));
    std::vector<double> acc(d.out, 0.0);
    for (std::size_t i = 0; i < d.in; ++i) {
      const double* row = phi_.data() + d.weight_offset + i * d.out;
      for (std::size_t j = 0; j < d.out; ++j) acc[j] += in[i] * row[j];
    }
    for (std::size_t j = 0; j < d.out; ++j) out[j] = acc[j] + out[j];
    return out;
  }

  // Mirrors forward(): same operation order so both paths agree bit-for-bit.
  std::vector<double> hidden_activation(std::vector<double> z, std::size_t l) const {
    for (std::size_t u = 0; u < z.size(); ++u) {
      double v = (z[u] + norm_shift_[l][u]) * norm_gain_[l][u];
      z[u] = v > 0.0 ? v : cfg_.slope * v;
    }
    return z;
  }

  std::vector<double> preactivation(std::span<const double> alpha, std::size_t layer) const {
    std::vector<double> h(alpha.begin(), alpha.end());
    for (std::size_t l = 0; l < layer; ++l) h = hidden_activation(dense(h, dense_[l]), l);
    return dense(h, dense_[layer]);
  }

  std::vector<double> generate_raw(std::span<const double> alpha) const {
    std::vector<double> h(alpha.begin(), alpha.end());
    for (std::size_t l = 0; l + 1 < dense_.size(); ++l) h = hidden_activation(dense(h, dense_[l]), l);
    return dense(h, dense_.back());
  }

  HyperNetConfig cfg_;
  MainNetConfig main_;
  WeightLayout layout_;
  std::vector<DenseSlot> dense_;
  std::vector<double> phi_;
  std::vector<std::vector<double>> norm_shift_;
  std::vector<std::vector<double>> norm_gain_;
};

/// Reconstruction at alpha: theta = H_phi(alpha), then one main-net pass.
inline ComplexGrid reconstruct(const HyperNet& net, const AlphaVector& alpha, const Measurement& y) {
  return mainnet_forward(net.main_config(), net.generate(alpha), y);
}

// ---------------------------------------------------------------------------
// Per-sample differentiable loss

struct SampleGraph {
  HyperNet::Graph hyper;
  ad::Var xhat;
  ad::Var data;
  ad::Var weight_l1;
  ad::Var tv;
  ad::Var loss;
};

/// reg_tv on the tape for a [2,H,W] image: differences per channel, then the
/// modulus of each complex difference.
inline ad::Var tv_node(ad::Tape& t, ad::Var x) {
  const ad::Shape shape = t.shape(x);
  ad::Var d = ad::spatial_forward_diff(t, x);  // [2, 2, H, W]
  return ad::sum(t, ad::magnitude(t, ad::reshape(t, d, {2, 2 * shape[1], shape[2]})));
}

/// Builds L_p(y, alpha) for one sample: alpha -> theta -> x_hat -> weighted J, R1, R2.
inline SampleGraph build_sample_loss(ad::Tape& t, const HyperNet& net, const AlphaVector& alpha, const Measurement& y) {
  SampleGraph s;
  s.hyper = net.forward(t, alpha);
  ad::Var zf = t.constant(to_channels(zero_filled(y)));
  s.xhat = mainnet_forward(t, net.main_config(), s.hyper.theta, zf);
  s.data = data_consistency_node(t, s.xhat, y);
  s.weight_l1 = ad::l1_norm(t, s.hyper.theta);
  s.tv = tv_node(t, s.xhat);
  const auto c = loss_coefficients(alpha);
  ad::Var loss = ad::scale(t, s.data, c.data);
  if (alpha.p() == 2) loss = ad::add(t, loss, ad::scale(t, s.weight_l1, c.weight_l1));
  s.loss = ad::add(t, loss, ad::scale(t, s.tv, c.tv));
  return s;
}

// ---------------------------------------------------------------------------
// Checkpoint file: "HRCK", u32 version, u32 p, u64 n, u32 hidden count, u32 widths...,
// f64 phi values in layer order, then a UTF-8 JSON metadata trailer.

inline constexpr std::uint32_t kCheckpointVersion = 1;

struct Checkpoint {
  HyperNet net;
  json metadata;  // seed, config_hash, step, plus model settings
};

inline std::vector<char> encode_checkpoint(const HyperNet& net, json metadata) {
  io::Writer w;
  w.bytes("HRCK");
  w.u32(kCheckpointVersion);
  w.u32(static_cast<std::uint32_t>(net.config().input_dim));
  w.u64(net.output_dim());
  w.u32(static_cast<std::uint32_t>(net.config().hidden.size()));
  for (auto h : net.config().hidden) w.u32(static_cast<std::uint32_t>(h));
  for (double v : net.parameters()) w.f64(v);
  metadata["mainnet"] = {{"channels", net.main_config().channels},
                         {"kernel", net.main_config().kernel},
                         {"slope", net.main_config().slope}};
  metadata["hypernet"] = {{"slope", net.config().slope},
                          {"norm_shift", net.norm_shift()},
                          {"norm_gain", net.norm_gain()}};
  w.bytes(metadata.dump());
  return w.buffer();
}

inline void save_checkpoint(const std::string& path, const HyperNet& net, json metadata) {
  const auto bytes = encode_checkpoint(net, std::move(metadata));
  io::Writer w;
  w.bytes(std::string_view(bytes.data(), bytes.size()));
  w.save(path);
}

inline Checkpoint load_checkpoint(const std::string& path) {
  auto r = io::Reader::open(path);
  r.expect_magic("HRCK");
  const auto version = r.u32();
  if (version != kCheckpointVersion) throw IoError(path, "unsupported checkpoint version " + std::to_string(version));
  HyperNetConfig hc;
  hc.input_dim = r.u32();
  const std::uint64_t n = r.u64();
  hc.hidden.resize(r.u32());
  for (auto& h : hc.hidden) h = r.u32();

  // phi length is implied by the header, the JSON trailer follows it.
  std::size_t count = 0, in = hc.input_dim;
  std::vector<std::size_t> widths = hc.hidden;
  widths.push_back(n);
  for (auto out : widths) {
    count += in * out + out;
    in = out;
  }
  if (r.remaining() < count * 8) throw IoError(path, "truncated parameter block");
  std::vector<double> phi(count);
  for (auto& v : phi) v = r.f64();
  json meta;
  try {
    meta = json::parse(r.rest());
  } catch (const json::exception& e) {
    throw IoError(path, std::string("bad metadata trailer: ") + e.what());
  }
  MainNetConfig mc;
  mc.channels = meta.at("mainnet").at("channels").get<std::vector<std::size_t>>();
  mc.kernel = meta.at("mainnet").at("kernel").get<std::size_t>();
  mc.slope = meta.at("mainnet").at("slope").get<double>();
  hc.slope = meta.at("hypernet").at("slope").get<double>();
  HyperNet net(hc, mc);
  if (net.output_dim() != n) throw IoError(path, "main network size does not match header n");
  std::copy(phi.begin(), phi.end(), net.parameters().begin());
  net.set_normalization(meta.at("hypernet").at("norm_shift").get<std::vector<std::vector<double>>>(),
                        meta.at("hypernet").at("norm_gain").get<std::vector<std::vector<double>>>());
  return {std::move(net), std::move(meta)};
}

}  // namespace hyperrecon
