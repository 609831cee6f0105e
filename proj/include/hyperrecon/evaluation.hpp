#pragma once

// PSNR / relative PSNR, alpha-landscapes, and the threshold analyses run on them.

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <sstream>
#include <string>
#include <vector>

#include "hyperrecon/data.hpp"
#include "hyperrecon/error.hpp"
#include "hyperrecon/hypermodel.hpp"
#include "hyperrecon/signal.hpp"

namespace hyperrecon {

// PSNR reported for a zero-error reconstruction.
inline constexpr double kPsnrCapDb = 200.0;

/// 10 log10(1 / MSE) between magnitude images (peak value 1), capped at 200 dB.
inline double psnr(const ComplexGrid& xhat, const ComplexGrid& x) {
  if (!xhat.same_shape(x)) throw InvalidShape("psnr: shape mismatch");
  double se = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double d = std::abs(xhat[i]) - std::abs(x[i]);
    se += d * d;
  }
  const double mse = se / static_cast<double>(x.size());
  if (mse == 0.0) return kPsnrCapDb;
  return std::min(kPsnrCapDb, -10.0 * std::log10(mse));
}

/// PSNR gain over the zero-filled reconstruction of the same measurement.
inline double rpsnr(const ComplexGrid& xhat, const ComplexGrid& x, const Measurement& y) {
  return psnr(xhat, x) - psnr(zero_filled(y), x);
}

struct Landscape {
  std::size_t resolution = 0;     // G
  std::vector<double> coords;     // G values, shared by both axes
  std::vector<double> values;     // G*G mean RPSNR, cell (i, j) at i * G + j, alpha = (coords[i], coords[j])

  double at(std::size_t i, std::size_t j) const { return values[i * resolution + j]; }
  double max() const { return *std::max_element(values.begin(), values.end()); }
  std::size_t argmax() const {
    return static_cast<std::size_t>(std::max_element(values.begin(), values.end()) - values.begin());
  }
  AlphaVector alpha(std::size_t cell) const {
    return AlphaVector{coords[cell / resolution], coords[cell % resolution]};
  }
};

/// G points tiling [0, 1] uniformly, endpoints included.
inline std::vector<double> landscape_coords(std::size_t g) {
  if (g < 2) throw InvalidParameter("landscape resolution must be >= 2");
  std::vector<double> c(g);
  for (std::size_t i = 0; i < g; ++i) c[i] = static_cast<double>(i) / static_cast<double>(g - 1);
  return c;
}

// Called once per (cell, test image) with the reconstruction and its RPSNR.
using LandscapeVisitor = std::function<void(std::size_t cell, std::size_t image, const ComplexGrid& recon, double rpsnr)>;

/// Mean test-set RPSNR at every alpha of a G x G grid. Per-cell values are summed
/// in sorted order, which makes the result independent of test-set ordering.
inline Landscape compute_landscape(const HyperNet& net, const Split& test, std::size_t g,
                                   const LandscapeVisitor& visit = {}) {
  if (test.size() == 0) throw InvalidParameter("compute_landscape: empty test set");
  Landscape land;
  land.resolution = g;
  land.coords = landscape_coords(g);
  land.values.resize(g * g);

  std::vector<double> zf_psnr(test.size());
  for (std::size_t k = 0; k < test.size(); ++k) zf_psnr[k] = psnr(zero_filled(test.measurements[k]), test.truths[k]);

  std::vector<double> cell(test.size());
  for (std::size_t c = 0; c < g * g; ++c) {
    const AlphaVector alpha = land.alpha(c);
    const WeightVector theta = net.generate(alpha);
    for (std::size_t k = 0; k < test.size(); ++k) {
      const ComplexGrid recon = mainnet_forward(net.main_config(), theta, test.measurements[k]);
      cell[k] = psnr(recon, test.truths[k]) - zf_psnr[k];
      if (visit) visit(c, k, recon, cell[k]);
    }
    std::vector<double> sorted = cell;
    std::sort(sorted.begin(), sorted.end());
    double s = 0.0;
    for (double v : sorted) s += v;
    land.values[c] = s / static_cast<double>(test.size());
    if (!std::isfinite(land.values[c])) throw NumericalError("compute_landscape: non-finite cell " + std::to_string(c));
  }
  return land;
}

inline Landscape compute_landscape(const std::string& checkpoint, const Split& test, std::size_t g,
                                   const LandscapeVisitor& visit = {}) {
  return compute_landscape(load_checkpoint(checkpoint).net, test, g, visit);
}

/// Bilinear interpolation of a coarse (possibly non-uniform) grid onto a G x G
/// landscape. values are row-major over (a1_coords, a2_coords).
inline Landscape interpolate_landscape(const std::vector<double>& a1_coords, const std::vector<double>& a2_coords,
                                       const std::vector<double>& values, std::size_t g) {
  if (a1_coords.size() < 2 || a2_coords.size() < 2 || values.size() != a1_coords.size() * a2_coords.size())
    throw InvalidShape("interpolate_landscape: coarse grid must be at least 2x2 with matching values");
  if (!std::is_sorted(a1_coords.begin(), a1_coords.end()) || !std::is_sorted(a2_coords.begin(), a2_coords.end()))
    throw InvalidParameter("interpolate_landscape: coordinates must be ascending");
  auto locate = [](const std::vector<double>& c, double x) {
    const double xc = std::clamp(x, c.front(), c.back());
    std::size_t i = static_cast<std::size_t>(std::upper_bound(c.begin(), c.end(), xc) - c.begin());
    i = std::clamp<std::size_t>(i, 1, c.size() - 1) - 1;
    const double span = c[i + 1] - c[i];
    return std::pair{i, span > 0.0 ? (xc - c[i]) / span : 0.0};
  };
  Landscape land;
  land.resolution = g;
  land.coords = landscape_coords(g);
  land.values.resize(g * g);
  const std::size_t m = a2_coords.size();
  for (std::size_t i = 0; i < g; ++i)
    for (std::size_t j = 0; j < g; ++j) {
      const auto [r, u] = locate(a1_coords, land.coords[i]);
      const auto [c, v] = locate(a2_coords, land.coords[j]);
      const double f00 = values[r * m + c], f01 = values[r * m + c + 1];
      const double f10 = values[(r + 1) * m + c], f11 = values[(r + 1) * m + c + 1];
      land.values[i * g + j] = (1 - u) * (1 - v) * f00 + (1 - u) * v * f01 + u * (1 - v) * f10 + u * v * f11;
    }
  return land;
}

/// Percentage of cells whose RPSNR is strictly above t.
inline double area_above_threshold(const Landscape& land, double t) {
  const auto above = std::count_if(land.values.begin(), land.values.end(), [t](double v) { return v > t; });
  return 100.0 * static_cast<double>(above) / static_cast<double>(land.values.size());
}

struct ScoredReconstruction {
  ComplexGrid image;
  double rpsnr = 0.0;
};

/// Sum over pixels of (max - min) magnitude across the reconstructions whose RPSNR
/// exceeds t; 0 when none qualify.
inline double pixelwise_range(std::span<const ScoredReconstruction> recons, double t) {
  std::vector<double> lo, hi;
  for (const auto& r : recons) {
    if (!(r.rpsnr > t)) continue;
    const auto m = r.image.magnitude();
    if (lo.empty()) {
      lo = m;
      hi = m;
      continue;
    }
    if (m.size() != lo.size()) throw InvalidShape("pixelwise_range: shape mismatch");
    for (std::size_t i = 0; i < m.size(); ++i) {
      lo[i] = std::min(lo[i], m[i]);
      hi[i] = std::max(hi[i], m[i]);
    }
  }
  double s = 0.0;
  for (std::size_t i = 0; i < lo.size(); ++i) s += hi[i] - lo[i];
  return s;
}

struct DiversePair {
  std::size_t first = 0;   // index into the candidate list
  std::size_t second = 0;
  double distance = 0.0;   // l2 distance between magnitude images
};

/// Among candidates with RPSNR in [lo, hi], the pair with the largest l2 distance
/// between magnitudes; ties keep the lexicographically smallest (first, second).
inline DiversePair diverse_pair(std::span<const ScoredReconstruction> recons, double lo, double hi) {
  std::vector<std::size_t> band;
  for (std::size_t i = 0; i < recons.size(); ++i)
    if (recons[i].rpsnr >= lo && recons[i].rpsnr <= hi) band.push_back(i);
  if (band.size() < 2)
    throw InsufficientCandidates("diverse_pair: " + std::to_string(band.size()) + " reconstruction(s) in [" +
                                 std::to_string(lo) + ", " + std::to_string(hi) + "] dB, need 2");
  std::vector<std::vector<double>> mags;
  for (auto i : band) mags.push_back(recons[i].image.magnitude());
  DiversePair best{band[0], band[1], -1.0};
  for (std::size_t a = 0; a < band.size(); ++a)
    for (std::size_t b = a + 1; b < band.size(); ++b) {
      double s = 0.0;
      for (std::size_t k = 0; k < mags[a].size(); ++k) {
        const double d = mags[a][k] - mags[b][k];
        s += d * d;
      }
      const double dist = std::sqrt(s);
      if (dist > best.distance) best = {band[a], band[b], dist};
    }
  return best;
}

/// Inclusive sweep lo, lo + step, ... up to hi (within half a step).
inline std::vector<double> threshold_sweep(double lo, double hi, double step) {
  if (!(step > 0.0) || hi < lo) throw InvalidParameter("threshold_sweep: need step > 0 and hi >= lo");
  std::vector<double> t;
  for (std::size_t k = 0;; ++k) {
    const double v = lo + static_cast<double>(k) * step;
    if (v > hi + 0.5 * step) break;
    t.push_back(v);
  }
  return t;
}

inline std::string landscape_csv(const Landscape& land) {
  std::ostringstream out;
  out.precision(17);
  out << "alpha1,alpha2,rpsnr_db\n";
  for (std::size_t i = 0; i < land.resolution; ++i)
    for (std::size_t j = 0; j < land.resolution; ++j)
      out << land.coords[i] << "," << land.coords[j] << "," << land.at(i, j) << "\n";
  return out.str();
}

}  // namespace hyperrecon
