#pragma once

// Independent reference computations used only by the tests.

#include <cmath>
#include <algorithm>
#include <complex>
#include <functional>
#include <numbers>
#include <utility>
#include <vector>

#include "hyperrecon/random.hpp"
#include "hyperrecon/signal.hpp"

namespace oracle {

using hyperrecon::ComplexGrid;
using hyperrecon::cplx;

// Unitary 2-D DFT by explicit double sum over the DFT matrix.
inline ComplexGrid dft_matrix(const ComplexGrid& x) {
  const std::size_t h = x.height(), w = x.width();
  ComplexGrid out(h, w);
  for (std::size_t u = 0; u < h; ++u)
    for (std::size_t v = 0; v < w; ++v) {
      cplx acc{};
      for (std::size_t m = 0; m < h; ++m)
        for (std::size_t n = 0; n < w; ++n) {
          const double ang = -2.0 * std::numbers::pi *
                             (static_cast<double>(u * m) / static_cast<double>(h) +
                              static_cast<double>(v * n) / static_cast<double>(w));
          acc += x(m, n) * std::polar(1.0, ang);
        }
      out(u, v) = acc / std::sqrt(static_cast<double>(h * w));
    }
  return out;
}

inline ComplexGrid random_grid(hyperrecon::Rng& rng, std::size_t h, std::size_t w) {
  std::vector<cplx> v(h * w);
  for (auto& z : v) z = {hyperrecon::standard_normal(rng), hyperrecon::standard_normal(rng)};
  return ComplexGrid(h, w, std::move(v));
}

inline double max_abs_diff(const ComplexGrid& a, const ComplexGrid& b) {
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

// Anisotropic TV of a complex image by direct double loop over (row, col) pairs.
inline double tv(const ComplexGrid& x) {
  double s = 0.0;
  for (std::size_t i = 0; i < x.height(); ++i)
    for (std::size_t j = 0; j < x.width(); ++j) {
      if (j + 1 < x.width()) s += std::hypot((x(i, j + 1) - x(i, j)).real(), (x(i, j + 1) - x(i, j)).imag());
      if (i + 1 < x.height()) s += std::hypot((x(i + 1, j) - x(i, j)).real(), (x(i + 1, j) - x(i, j)).imag());
    }
  return s;
}

// Central finite differences of a scalar function at x.
inline std::vector<double> central_difference(const std::function<double(const std::vector<double>&)>& f,
                                              std::vector<double> x, double h = 1e-5) {
  std::vector<double> g(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double keep = x[i];
    x[i] = keep + h;
    const double fp = f(x);
    x[i] = keep - h;
    const double fm = f(x);
    x[i] = keep;
    g[i] = (fp - fm) / (2.0 * h);
  }
  return g;
}

// ||a - b|| / max(||a||, ||b||, tiny)
inline double relative_error(const std::vector<double>& a, const std::vector<double>& b) {
  double d = 0.0, na = 0.0, nb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    d += (a[i] - b[i]) * (a[i] - b[i]);
    na += a[i] * a[i];
    nb += b[i] * b[i];
  }
  return std::sqrt(d) / std::max({std::sqrt(na), std::sqrt(nb), 1e-300});
}

// Percentage of values strictly above t, by counting.
inline double area_above(const std::vector<double>& values, double t) {
  std::size_t n = 0;
  for (double v : values) n += v > t ? 1 : 0;
  return 100.0 * static_cast<double>(n) / static_cast<double>(values.size());
}

// Pixel-wise range by a double loop over pixels and qualifying images.
inline double pixel_range(const std::vector<ComplexGrid>& images, const std::vector<double>& scores, double t) {
  if (images.empty()) return 0.0;
  double total = 0.0;
  for (std::size_t p = 0; p < images.front().size(); ++p) {
    bool any = false;
    double lo = 0.0, hi = 0.0;
    for (std::size_t k = 0; k < images.size(); ++k) {
      if (!(scores[k] > t)) continue;
      const double m = std::abs(images[k][p]);
      if (!any) {
        lo = hi = m;
        any = true;
      }
      lo = std::min(lo, m);
      hi = std::max(hi, m);
    }
    total += hi - lo;
  }
  return total;
}

// All-pairs search for the farthest pair in [lo, hi]; returns {-1, -1} if fewer than two.
inline std::pair<long, long> farthest_pair(const std::vector<ComplexGrid>& images, const std::vector<double>& scores,
                                           double lo, double hi) {
  std::pair<long, long> best{-1, -1};
  double best_d = -1.0;
  for (std::size_t i = 0; i < images.size(); ++i)
    for (std::size_t j = i + 1; j < images.size(); ++j) {
      if (scores[i] < lo || scores[i] > hi || scores[j] < lo || scores[j] > hi) continue;
      double s = 0.0;
      for (std::size_t p = 0; p < images[i].size(); ++p) {
        const double d = std::abs(images[i][p]) - std::abs(images[j][p]);
        s += d * d;
      }
      if (std::sqrt(s) > best_d) {
        best_d = std::sqrt(s);
        best = {static_cast<long>(i), static_cast<long>(j)};
      }
    }
  return best;
}

}  // namespace oracle
