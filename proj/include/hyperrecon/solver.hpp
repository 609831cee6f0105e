#pragma once

// Instance-based reference reconstruction: backtracking gradient descent on
//   (1 - lambda) J(x, y) + lambda TV_eps(x)
// started from the zero-filled image. Used as an oracle, never in training.

#include <cmath>
#include <string>
#include <vector>

#include "hyperrecon/error.hpp"
#include "hyperrecon/signal.hpp"

namespace hyperrecon {

struct SolveResult {
  ComplexGrid image;
  std::vector<double> objective;  // objective[k] is the value before step k; back() is the final value
};

namespace detail {

inline constexpr double kTvEpsilon = 1e-8;

// Smoothed complex TV: sum sqrt(|d|^2 + eps) over forward differences d of x.
// Writes d TV / d(re, im) into grad when non-null.
inline double smoothed_tv(const ComplexGrid& x, std::vector<cplx>* grad) {
  const std::size_t h = x.height(), w = x.width();
  if (grad) grad->assign(x.size(), cplx{});
  double tv = 0.0;
  auto term = [&](std::size_t a, std::size_t b) {
    const cplx d = x[b] - x[a];
    const double s = std::sqrt(std::norm(d) + kTvEpsilon);
    tv += s;
    if (grad) {
      (*grad)[b] += d / s;
      (*grad)[a] -= d / s;
    }
  };
  for (std::size_t i = 0; i < h; ++i)
    for (std::size_t j = 0; j < w; ++j) {
      if (j + 1 < w) term(i * w + j, i * w + j + 1);
      if (i + 1 < h) term(i * w + j, (i + 1) * w + j);
    }
  return tv;
}

}  // namespace detail

inline double instance_objective(const ComplexGrid& x, const Measurement& y, double tv_weight) {
  return (1.0 - tv_weight) * data_consistency(x, y) + tv_weight * detail::smoothed_tv(x, nullptr);
}

/// Gradient descent from zero_filled(y) for at most `steps` iterations. Each step
/// starts at `step_size` and halves until the objective does not increase, so the
/// history is non-increasing; iteration stops early once no halving helps.
inline SolveResult solve_instance(const Measurement& y, double tv_weight, std::size_t steps, double step_size) {
  if (!(tv_weight >= 0.0 && tv_weight <= 1.0)) throw InvalidParameter("solve_instance: tv_weight must be in [0,1]");
  if (steps < 1) throw InvalidParameter("solve_instance: steps must be >= 1");
  if (!(step_size > 0.0)) throw InvalidParameter("solve_instance: step_size must be positive");
  constexpr int kMaxHalvings = 40;

  auto objective = [&](const ComplexGrid& x) { return instance_objective(x, y, tv_weight); };
  SolveResult res{zero_filled(y), {}};
  res.objective.reserve(steps + 1);
  std::vector<cplx> tv_grad;
  double f = objective(res.image);
  res.objective.push_back(f);
  ComplexGrid trial = res.image;
  for (std::size_t k = 0; k < steps; ++k) {
    const ComplexGrid adj = ifft2(kspace_residual(res.image, y));
    detail::smoothed_tv(res.image, &tv_grad);
    double t = step_size;
    double ft = f;
    bool moved = false;
    for (int h = 0; h <= kMaxHalvings; ++h, t *= 0.5) {
      for (std::size_t i = 0; i < trial.size(); ++i)
        trial[i] = res.image[i] - t * (2.0 * (1.0 - tv_weight) * adj[i] + tv_weight * tv_grad[i]);
      ft = objective(trial);
      if (!std::isfinite(ft)) throw NumericalError("solve_instance: objective diverged at step " + std::to_string(k));
      if (ft <= f) {
        moved = true;
        break;
      }
    }
    if (!moved) break;
    std::swap(res.image, trial);
    f = ft;
    res.objective.push_back(f);
  }
  return res;
}

}  // namespace hyperrecon
