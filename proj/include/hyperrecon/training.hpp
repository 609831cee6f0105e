#pragma once

// Hypernetwork training: uniform (UHS) and data-driven top-K (DHS) hyperparameter
// sampling, fixed-alpha baselines, and the ADAM optimizer.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iomanip>
#include <numeric>
#include <optional>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "hyperrecon/binary_io.hpp"
#include "hyperrecon/data.hpp"
#include "hyperrecon/error.hpp"
#include "hyperrecon/hypermodel.hpp"
#include "hyperrecon/random.hpp"

namespace hyperrecon {

enum class SamplingMode { uhs, dhs, fixed };

inline std::string to_string(SamplingMode m) {
  switch (m) {
    case SamplingMode::uhs: return "uhs";
    case SamplingMode::dhs: return "dhs";
    case SamplingMode::fixed: return "fixed";
  }
  return "?";
}

inline SamplingMode parse_sampling_mode(const std::string& s) {
  if (s == "uhs") return SamplingMode::uhs;
  if (s == "dhs") return SamplingMode::dhs;
  if (s == "fixed") return SamplingMode::fixed;
  throw InvalidParameter("unknown sampling mode '" + s + "' (uhs|dhs|fixed)");
}

// ---------------------------------------------------------------------------
// ADAM

struct AdamParams {
  double learning_rate = 1e-5;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

struct AdamState {
  std::vector<double> m;
  std::vector<double> v;
  std::uint64_t step = 0;

  static AdamState zeros(std::size_t n) { return {std::vector<double>(n, 0.0), std::vector<double>(n, 0.0), 0}; }
};

inline void adam_update(std::span<double> phi, std::span<const double> grad, AdamState& s, const AdamParams& p) {
  if (grad.size() != phi.size() || s.m.size() != phi.size() || s.v.size() != phi.size())
    throw InvalidShape("adam_update: size mismatch");
  ++s.step;
  const double c1 = 1.0 - std::pow(p.beta1, static_cast<double>(s.step));
  const double c2 = 1.0 - std::pow(p.beta2, static_cast<double>(s.step));
  for (std::size_t i = 0; i < phi.size(); ++i) {
    s.m[i] = p.beta1 * s.m[i] + (1.0 - p.beta1) * grad[i];
    s.v[i] = p.beta2 * s.v[i] + (1.0 - p.beta2) * grad[i] * grad[i];
    phi[i] -= p.learning_rate * (s.m[i] / c1) / (std::sqrt(s.v[i] / c2) + p.epsilon);
  }
}

inline void save_adam_state(const std::string& path, const AdamState& s) {
  io::Writer w;
  w.bytes("HRAD");
  w.u64(s.step);
  w.u64(s.m.size());
  for (double x : s.m) w.f64(x);
  for (double x : s.v) w.f64(x);
  w.save(path);
}

inline AdamState load_adam_state(const std::string& path) {
  auto r = io::Reader::open(path);
  r.expect_magic("HRAD");
  AdamState s;
  s.step = r.u64();
  const std::size_t n = r.u64();
  s.m.resize(n);
  s.v.resize(n);
  for (auto& x : s.m) x = r.f64();
  for (auto& x : s.v) x = r.f64();
  return s;
}

// ---------------------------------------------------------------------------
// Single steps

struct SampleStats {
  std::size_t index = 0;  // position in the batch
  std::vector<double> alpha;
  double data = 0.0;
  double weight_l1 = 0.0;
  double tv = 0.0;
  double loss = 0.0;
  bool kept = false;
};

struct StepStats {
  std::vector<SampleStats> samples;
  double kept_fraction = 0.0;
  double data_threshold = 0.0;  // largest J among the kept samples

  double kept_mean(double SampleStats::*field) const {
    double s = 0.0;
    std::size_t n = 0;
    for (const auto& x : samples)
      if (x.kept) {
        s += x.*field;
        ++n;
      }
    return n ? s / static_cast<double>(n) : 0.0;
  }
};

/// Positions of the `keep` smallest J values; ties go to the lower batch position.
inline std::vector<std::size_t> smallest_k(std::span<const double> data_losses, std::size_t keep) {
  std::vector<std::size_t> order(data_losses.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return data_losses[a] < data_losses[b]; });
  order.resize(std::min(keep, order.size()));
  std::sort(order.begin(), order.end());
  return order;
}

/// Evaluates L_p for every (y_i, alpha_i), keeps the `keep` pairs with the lowest
/// J, and applies one ADAM update on the summed gradient of the kept losses.
/// Per-sample gradients are accumulated in ascending batch position.
inline StepStats apply_step(HyperNet& net, AdamState& state, const AdamParams& params,
                            std::span<const Measurement* const> batch, std::span<const AlphaVector> alphas,
                            std::size_t keep) {
  if (batch.size() != alphas.size()) throw InvalidShape("apply_step: batch/alpha count mismatch");
  if (keep == 0 || keep > batch.size()) throw InvalidParameter("apply_step: need 0 < K <= B");
  const std::size_t b = batch.size();

  std::vector<ad::Tape> tapes(b);
  std::vector<SampleGraph> graphs(b);
  StepStats stats;
  stats.samples.resize(b);
  std::vector<double> data_losses(b);
  for (std::size_t i = 0; i < b; ++i) {
    auto& st = stats.samples[i];
    st.index = i;
    st.alpha.assign(alphas[i].values().begin(), alphas[i].values().end());
    try {
      graphs[i] = build_sample_loss(tapes[i], net, alphas[i], *batch[i]);
    } catch (const NumericalError& e) {
      throw NumericalError(std::string("non-finite forward pass at sample ") + std::to_string(i) + ": " + e.what());
    }
    st.data = tapes[i].value(graphs[i].data).item();
    st.weight_l1 = tapes[i].value(graphs[i].weight_l1).item();
    st.tv = tapes[i].value(graphs[i].tv).item();
    st.loss = tapes[i].value(graphs[i].loss).item();
    if (!std::isfinite(st.loss)) {
      std::ostringstream msg;
      msg << "non-finite loss at sample " << i << " alpha=(";
      for (std::size_t k = 0; k < st.alpha.size(); ++k) msg << (k ? "," : "") << st.alpha[k];
      msg << ")";
      throw NumericalError(msg.str());
    }
    data_losses[i] = st.data;
  }

  const auto kept = smallest_k(data_losses, keep);
  for (auto i : kept) {
    stats.samples[i].kept = true;
    stats.data_threshold = std::max(stats.data_threshold, data_losses[i]);
  }
  stats.kept_fraction = static_cast<double>(kept.size()) / static_cast<double>(b);

  std::vector<double> total(net.parameter_count(), 0.0);
  for (auto i : kept) {
    tapes[i].backward(graphs[i].loss);
    const auto g = net.flatten_gradient(tapes[i], graphs[i].hyper);
    for (std::size_t k = 0; k < total.size(); ++k) total[k] += g[k];
  }
  for (double g : total)
    if (!std::isfinite(g)) throw NumericalError("non-finite gradient");
  adam_update(net.parameters(), total, state, params);
  return stats;
}

inline std::vector<AlphaVector> draw_uniform_alphas(Rng& rng, std::size_t count, std::size_t p) {
  std::vector<AlphaVector> out;
  out.reserve(count);
  std::vector<double> a(p);
  for (std::size_t i = 0; i < count; ++i) {
    for (auto& v : a) v = uniform01(rng);
    out.emplace_back(a);
  }
  return out;
}

/// One UHS step: alpha^i ~ U[0,1]^p per sample, gradient over the whole batch.
inline StepStats uhs_step(HyperNet& net, AdamState& state, const AdamParams& params,
                          std::span<const Measurement* const> batch, Rng& rng) {
  const auto alphas = draw_uniform_alphas(rng, batch.size(), net.config().input_dim);
  return apply_step(net, state, params, batch, alphas, batch.size());
}

/// One DHS step: same draws as UHS, gradient over the K pairs with the lowest J.
inline StepStats dhs_step(HyperNet& net, AdamState& state, const AdamParams& params,
                          std::span<const Measurement* const> batch, std::size_t keep, Rng& rng) {
  const auto alphas = draw_uniform_alphas(rng, batch.size(), net.config().input_dim);
  return apply_step(net, state, params, batch, alphas, keep);
}

inline StepStats fixed_step(HyperNet& net, AdamState& state, const AdamParams& params,
                            std::span<const Measurement* const> batch, const AlphaVector& alpha) {
  const std::vector<AlphaVector> alphas(batch.size(), alpha);
  return apply_step(net, state, params, batch, alphas, batch.size());
}

// ---------------------------------------------------------------------------
// Training loop

struct TrainConfig {
  std::size_t batch_size = 32;
  std::size_t keep_count = 8;
  double learning_rate = 1e-5;
  std::size_t steps = 1000;
  std::uint64_t seed = 0;
  SamplingMode mode = SamplingMode::uhs;
  std::optional<AlphaVector> fixed_alpha;
  std::size_t checkpoint_every = 100;
  std::string hypernet_size = "small";
  MainNetConfig mainnet;

  void validate() const {
    if (batch_size == 0) throw InvalidParameter("TrainConfig: B must be positive");
    if (keep_count == 0 || keep_count > batch_size) throw InvalidParameter("TrainConfig: need 0 < K <= B");
    if (!(learning_rate > 0.0)) throw InvalidParameter("TrainConfig: learning rate must be positive");
    if (steps == 0) throw InvalidParameter("TrainConfig: step budget must be positive");
    if (mode == SamplingMode::fixed && !fixed_alpha) throw InvalidParameter("TrainConfig: fixed mode needs an alpha");
    mainnet.validate();
  }

  nlohmann::json to_json() const {
    nlohmann::json j = {{"batch_size", batch_size}, {"keep_count", keep_count}, {"learning_rate", learning_rate},
                        {"steps", steps},           {"seed", seed},             {"mode", to_string(mode)},
                        {"hypernet", hypernet_size}, {"mainnet_channels", mainnet.channels}};
    if (fixed_alpha) j["fixed_alpha"] = std::vector<double>(fixed_alpha->values().begin(), fixed_alpha->values().end());
    return j;
  }
};

struct BatchDraw {
  std::vector<std::size_t> indices;
  std::vector<AlphaVector> alphas;
};

/// The random draws for a given step depend only on (seed, step), so a resumed run
/// sees the same stream and UHS/DHS runs with one seed share their draws.
inline BatchDraw draw_step(const TrainConfig& cfg, std::size_t train_size, std::size_t p, std::size_t step) {
  Rng rng = make_rng({cfg.seed, static_cast<std::uint64_t>(step)});
  BatchDraw d;
  for (std::size_t i = 0; i < cfg.batch_size; ++i) d.indices.push_back(uniform_index(rng, train_size));
  d.alphas = draw_uniform_alphas(rng, cfg.batch_size, p);
  if (cfg.mode == SamplingMode::fixed) d.alphas.assign(cfg.batch_size, *cfg.fixed_alpha);
  return d;
}

inline StepStats train_step(HyperNet& net, AdamState& state, const TrainConfig& cfg, const Split& train,
                            std::size_t step) {
  const auto draw = draw_step(cfg, train.size(), net.config().input_dim, step);
  std::vector<const Measurement*> batch;
  for (auto i : draw.indices) batch.push_back(&train.measurements[i]);
  const std::size_t keep = cfg.mode == SamplingMode::dhs ? cfg.keep_count : cfg.batch_size;
  return apply_step(net, state, AdamParams{cfg.learning_rate}, batch, draw.alphas, keep);
}

struct TrainResult {
  HyperNet net;
  AdamState adam;
  std::size_t step = 0;  // number of completed steps
  std::string checkpoint_path;
};

using StepObserver = std::function<void(std::size_t step, const StepStats&)>;

inline std::string checkpoint_path_in(const std::string& dir) {
  return (std::filesystem::path(dir) / "checkpoint.hrck").string();
}

namespace detail {

inline void write_checkpoint_pair(const std::string& dir, const TrainConfig& cfg, const HyperNet& net,
                                  const AdamState& adam, std::size_t step, std::size_t image_size) {
  const auto cfg_json = cfg.to_json();
  std::ostringstream hash;
  hash << std::hex << std::setw(16) << std::setfill('0') << io::fnv1a(cfg_json.dump());
  nlohmann::json meta = {{"seed", cfg.seed}, {"config_hash", hash.str()}, {"step", step},
                         {"train_config", cfg_json}, {"image_size", image_size}};
  const std::string path = checkpoint_path_in(dir);
  // Write-then-rename keeps the previous checkpoint intact if writing fails.
  save_checkpoint(path + ".tmp", net, meta);
  save_adam_state(path + ".adam.tmp", adam);
  std::filesystem::rename(path + ".tmp", path);
  std::filesystem::rename(path + ".adam.tmp", path + ".adam");
}

}  // namespace detail

/// Runs steps [start_step, cfg.steps). Writes <dir>/checkpoint.hrck (+ .adam sidecar),
/// metrics.csv and alpha_hist.csv (kept-alpha counts per epoch on a 10x10 grid).
inline TrainResult train(const TrainConfig& cfg, const Dataset& data, HyperNet net, AdamState adam,
                         std::size_t start_step, const std::string& dir, const StepObserver& observer = {}) {
  namespace fs = std::filesystem;
  cfg.validate();
  if (data.train.size() == 0) throw InvalidParameter("train: dataset has no training images");
  if (adam.m.size() != net.parameter_count()) adam = AdamState::zeros(net.parameter_count());
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw IoError(dir, "cannot create directory: " + ec.message());

  const std::string metrics_path = (fs::path(dir) / "metrics.csv").string();
  const std::string hist_path = (fs::path(dir) / "alpha_hist.csv").string();
  const bool fresh = start_step == 0;
  std::ofstream metrics(metrics_path, fresh ? std::ios::trunc : std::ios::app);
  std::ofstream hist(hist_path, fresh ? std::ios::trunc : std::ios::app);
  if (!metrics) throw IoError(metrics_path, "cannot open for writing");
  if (!hist) throw IoError(hist_path, "cannot open for writing");
  metrics << std::setprecision(17);
  if (fresh) {
    metrics << "step,mode,loss,J_mean,R1_mean,R2_mean,kept_fraction,wall_ms\n";
    hist << "epoch,a1_bin,a2_bin,count\n";
    detail::write_checkpoint_pair(dir, cfg, net, adam, 0, data.image_size);
  }

  constexpr std::size_t kBins = 10;
  const std::size_t epoch_steps = std::max<std::size_t>(1, (data.train.size() + cfg.batch_size - 1) / cfg.batch_size);
  std::vector<std::size_t> counts(kBins * kBins, 0);
  auto flush_hist = [&](std::size_t epoch) {
    for (std::size_t i = 0; i < kBins; ++i)
      for (std::size_t j = 0; j < kBins; ++j)
        if (counts[i * kBins + j]) hist << epoch << "," << i << "," << j << "," << counts[i * kBins + j] << "\n";
    std::fill(counts.begin(), counts.end(), 0);
  };

  std::size_t step = start_step;
  for (; step < cfg.steps; ++step) {
    const auto t0 = std::chrono::steady_clock::now();
    const StepStats st = train_step(net, adam, cfg, data.train, step);
    const double ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
    metrics << step << "," << to_string(cfg.mode) << "," << st.kept_mean(&SampleStats::loss) << ","
            << st.kept_mean(&SampleStats::data) << "," << st.kept_mean(&SampleStats::weight_l1) << ","
            << st.kept_mean(&SampleStats::tv) << "," << st.kept_fraction << "," << ms << "\n";
    for (const auto& s : st.samples)
      if (s.kept) {
        const auto bin = [&](double a) { return std::min(kBins - 1, static_cast<std::size_t>(a * kBins)); };
        counts[bin(s.alpha[0]) * kBins + (s.alpha.size() > 1 ? bin(s.alpha[1]) : 0)]++;
      }
    if ((step + 1) % epoch_steps == 0) flush_hist((step + 1) / epoch_steps - 1);
    if (observer) observer(step, st);
    if ((step + 1) % cfg.checkpoint_every == 0 || step + 1 == cfg.steps) {
      metrics.flush();
      hist.flush();
      detail::write_checkpoint_pair(dir, cfg, net, adam, step + 1, data.image_size);
    }
  }
  return {std::move(net), std::move(adam), step, checkpoint_path_in(dir)};
}

/// Fresh run: initializes the hypernetwork from cfg.seed.
inline TrainResult train(const TrainConfig& cfg, const Dataset& data, const std::string& dir,
                         const StepObserver& observer = {}) {
  cfg.validate();
  const std::size_t p = cfg.fixed_alpha ? cfg.fixed_alpha->p() : 2;
  HyperNet net = HyperNet::initialize(HyperNetConfig::preset(cfg.hypernet_size, p), cfg.mainnet, cfg.seed);
  AdamState adam = AdamState::zeros(net.parameter_count());
  return train(cfg, data, std::move(net), std::move(adam), 0, dir, observer);
}

/// Continues from <dir>/checkpoint.hrck and its ADAM sidecar.
inline TrainResult resume(const TrainConfig& cfg, const Dataset& data, const std::string& dir,
                          const StepObserver& observer = {}) {
  const std::string path = checkpoint_path_in(dir);
  auto ck = load_checkpoint(path);
  AdamState adam = load_adam_state(path + ".adam");
  const std::size_t step = ck.metadata.at("step").get<std::size_t>();
  return train(cfg, data, std::move(ck.net), std::move(adam), step, dir, observer);
}

}  // namespace hyperrecon
