#pragma once

// Single-coil Cartesian forward model: unitary 2-D FFT, undersampling masks,
// zero-filled reconstruction and the data-consistency loss.
//
// k-space arrays use the unshifted FFT layout: index (0, 0) is DC and index
// i >= n/2 corresponds to the negative frequency i - n.

#include <algorithm>
#include <cmath>
#include <complex>
#include <cstdint>
#include <numbers>
#include <span>
#include <string>
#include <vector>

#include "hyperrecon/binary_io.hpp"
#include "hyperrecon/error.hpp"
#include "hyperrecon/random.hpp"

namespace hyperrecon {

using cplx = std::complex<double>;

class ComplexGrid {
 public:
  ComplexGrid() = default;

  ComplexGrid(std::size_t height, std::size_t width) : height_(height), width_(width) {
    check_dims(height, width);
    values_.assign(height * width, cplx{});
  }

  ComplexGrid(std::size_t height, std::size_t width, std::vector<cplx> values)
      : height_(height), width_(width), values_(std::move(values)) {
    check_dims(height, width);
    if (values_.size() != height * width)
      throw InvalidShape("ComplexGrid: value count " + std::to_string(values_.size()) +
                         " != " + std::to_string(height * width));
    for (const auto& v : values_)
      if (!std::isfinite(v.real()) || !std::isfinite(v.imag()))
        throw InvalidParameter("ComplexGrid: non-finite value");
  }

  static ComplexGrid from_real(std::size_t height, std::size_t width, std::span<const double> re) {
    if (re.size() != height * width) throw InvalidShape("ComplexGrid::from_real: size mismatch");
    std::vector<cplx> v(re.begin(), re.end());
    return ComplexGrid(height, width, std::move(v));
  }

  std::size_t height() const { return height_; }
  std::size_t width() const { return width_; }
  std::size_t size() const { return values_.size(); }

  cplx& operator()(std::size_t r, std::size_t c) { return values_[r * width_ + c]; }
  const cplx& operator()(std::size_t r, std::size_t c) const { return values_[r * width_ + c]; }
  cplx& operator[](std::size_t i) { return values_[i]; }
  const cplx& operator[](std::size_t i) const { return values_[i]; }

  std::span<cplx> values() { return values_; }
  std::span<const cplx> values() const { return values_; }

  bool same_shape(const ComplexGrid& o) const { return height_ == o.height_ && width_ == o.width_; }

  std::vector<double> magnitude() const {
    std::vector<double> m(values_.size());
    for (std::size_t i = 0; i < m.size(); ++i) m[i] = std::abs(values_[i]);
    return m;
  }

  double norm2() const {
    double s = 0.0;
    for (const auto& v : values_) s += std::norm(v);
    return s;
  }

  friend bool operator==(const ComplexGrid&, const ComplexGrid&) = default;

 private:
  static void check_dims(std::size_t h, std::size_t w) {
    if (h < 2 || w < 2)
      throw InvalidShape("ComplexGrid: dimensions must be >= 2, got " + std::to_string(h) + "x" +
                         std::to_string(w));
  }

  std::size_t height_ = 0;
  std::size_t width_ = 0;
  std::vector<cplx> values_;
};

// <a, b> = sum conj(a) * b
inline cplx inner(const ComplexGrid& a, const ComplexGrid& b) {
  if (!a.same_shape(b)) throw InvalidShape("inner: shape mismatch");
  cplx s{};
  for (std::size_t i = 0; i < a.size(); ++i) s += std::conj(a[i]) * b[i];
  return s;
}

class SamplingMask {
 public:
  SamplingMask() = default;

  // Any mask with at least one retained location, DC included. Generated masks
  // additionally keep strictly fewer than all locations.
  SamplingMask(std::size_t height, std::size_t width, std::vector<std::uint8_t> retained,
               std::uint64_t seed, double acceleration)
      : height_(height), width_(width), retained_(std::move(retained)), seed_(seed),
        acceleration_(acceleration) {
    if (height < 2 || width < 2) throw InvalidShape("SamplingMask: dimensions must be >= 2");
    if (retained_.size() != height * width) throw InvalidShape("SamplingMask: size mismatch");
    if (!(acceleration > 0.0)) throw InvalidParameter("SamplingMask: acceleration must be positive");
    for (auto& r : retained_) r = r ? 1 : 0;
    if (!retained_[0]) throw InvalidParameter("SamplingMask: DC location must be retained");
  }

  static SamplingMask full(std::size_t height, std::size_t width) {
    return SamplingMask(height, width, std::vector<std::uint8_t>(height * width, 1), 0, 1.0);
  }

  std::size_t height() const { return height_; }
  std::size_t width() const { return width_; }
  std::size_t size() const { return retained_.size(); }
  std::uint64_t seed() const { return seed_; }
  double acceleration() const { return acceleration_; }

  bool operator()(std::size_t r, std::size_t c) const { return retained_[r * width_ + c] != 0; }
  bool operator[](std::size_t i) const { return retained_[i] != 0; }
  std::span<const std::uint8_t> retained() const { return retained_; }

  std::size_t retained_count() const {
    return static_cast<std::size_t>(std::count(retained_.begin(), retained_.end(), 1));
  }
  double retained_fraction() const {
    return static_cast<double>(retained_count()) / static_cast<double>(size());
  }

  friend bool operator==(const SamplingMask&, const SamplingMask&) = default;

 private:
  std::size_t height_ = 0;
  std::size_t width_ = 0;
  std::vector<std::uint8_t> retained_;
  std::uint64_t seed_ = 0;
  double acceleration_ = 1.0;
};

// Zero-embedded measurement: kspace is exactly zero off the mask.
struct Measurement {
  ComplexGrid kspace;
  SamplingMask mask;
};

namespace detail {

inline bool is_pow2(std::size_t n) { return n != 0 && (n & (n - 1)) == 0; }

// exp(sign * 2 pi i k / n) for k < n.
inline std::vector<cplx> twiddles(std::size_t n, int sign) {
  std::vector<cplx> t(n);
  for (std::size_t k = 0; k < n; ++k) {
    const double ang = sign * 2.0 * std::numbers::pi * static_cast<double>(k) / static_cast<double>(n);
    t[k] = {std::cos(ang), std::sin(ang)};
  }
  return t;
}

// Unnormalized in-place 1-D DFT; tw = twiddles(a.size(), sign). Radix-2 for powers
// of two, direct summation otherwise.
inline void dft1(std::span<cplx> a, const std::vector<cplx>& tw, std::vector<cplx>& scratch) {
  const std::size_t n = a.size();
  if (is_pow2(n)) {
    for (std::size_t i = 1, j = 0; i < n; ++i) {
      std::size_t bit = n >> 1;
      for (; j & bit; bit >>= 1) j ^= bit;
      j ^= bit;
      if (i < j) std::swap(a[i], a[j]);
    }
    for (std::size_t len = 2; len <= n; len <<= 1) {
      const std::size_t half = len / 2, stride = n / len;
      for (std::size_t s = 0; s < n; s += len)
        for (std::size_t k = 0; k < half; ++k) {
          const cplx u = a[s + k];
          const cplx b = a[s + k + half], t = tw[k * stride];
          const cplx v(b.real() * t.real() - b.imag() * t.imag(), b.real() * t.imag() + b.imag() * t.real());
          a[s + k] = u + v;
          a[s + k + half] = u - v;
        }
    }
    return;
  }
  scratch.assign(n, cplx{});
  for (std::size_t k = 0; k < n; ++k) {
    cplx acc{};
    for (std::size_t j = 0; j < n; ++j) acc += a[j] * tw[(k * j) % n];
    scratch[k] = acc;
  }
  std::copy(scratch.begin(), scratch.end(), a.begin());
}

inline ComplexGrid dft2(const ComplexGrid& img, int sign) {
  ComplexGrid out = img;
  const std::size_t h = img.height(), w = img.width();
  const auto tw_row = twiddles(w, sign);
  const auto tw_col = h == w ? tw_row : twiddles(h, sign);
  std::vector<cplx> scratch, column(h);
  auto vals = out.values();
  for (std::size_t r = 0; r < h; ++r) dft1(vals.subspan(r * w, w), tw_row, scratch);
  for (std::size_t c = 0; c < w; ++c) {
    for (std::size_t r = 0; r < h; ++r) column[r] = vals[r * w + c];
    dft1(column, tw_col, scratch);
    for (std::size_t r = 0; r < h; ++r) vals[r * w + c] = column[r];
  }
  const double scale = 1.0 / std::sqrt(static_cast<double>(h * w));
  for (auto& v : vals) v *= scale;
  return out;
}

inline void check_mask_shape(const ComplexGrid& x, const SamplingMask& mask) {
  if (x.height() != mask.height() || x.width() != mask.width())
    throw InvalidShape("grid " + std::to_string(x.height()) + "x" + std::to_string(x.width()) +
                       " does not match mask " + std::to_string(mask.height()) + "x" +
                       std::to_string(mask.width()));
}

}  // namespace detail

/// Unitary 2-D DFT (1/sqrt(N) scaling), so Parseval holds and the inverse is the adjoint.
inline ComplexGrid fft2(const ComplexGrid& img) { return detail::dft2(img, -1); }
inline ComplexGrid ifft2(const ComplexGrid& k) { return detail::dft2(k, +1); }

/// F_u x: full FFT restricted to the retained locations, zero elsewhere.
inline Measurement undersampled_forward(const ComplexGrid& x, const SamplingMask& mask) {
  detail::check_mask_shape(x, mask);
  ComplexGrid k = fft2(x);
  for (std::size_t i = 0; i < k.size(); ++i)
    if (!mask[i]) k[i] = cplx{};
  return {std::move(k), mask};
}

/// Zero-filled reconstruction, equal to the adjoint F_u^H y.
inline ComplexGrid zero_filled(const Measurement& y) {
  detail::check_mask_shape(y.kspace, y.mask);
  ComplexGrid k = y.kspace;
  for (std::size_t i = 0; i < k.size(); ++i)
    if (!y.mask[i]) k[i] = cplx{};
  return ifft2(k);
}

/// k-space residual F_u x - y on retained locations (zero elsewhere).
inline ComplexGrid kspace_residual(const ComplexGrid& x, const Measurement& y) {
  detail::check_mask_shape(x, y.mask);
  ComplexGrid k = fft2(x);
  for (std::size_t i = 0; i < k.size(); ++i) k[i] = y.mask[i] ? k[i] - y.kspace[i] : cplx{};
  return k;
}

/// J(x, y) = ||F_u x - y||^2.
inline double data_consistency(const ComplexGrid& x, const Measurement& y) {
  return kspace_residual(x, y).norm2();
}

// Centered radial coordinate of a k-space index in the unshifted layout.
inline double kspace_radius(std::size_t r, std::size_t c, std::size_t h, std::size_t w) {
  const double ky = r < (h + 1) / 2 ? static_cast<double>(r) : static_cast<double>(r) - static_cast<double>(h);
  const double kx = c < (w + 1) / 2 ? static_cast<double>(c) : static_cast<double>(c) - static_cast<double>(w);
  return std::hypot(ky, kx);
}

/// Variable-density random mask with retention probability
/// min(1, c (1 - r / r_max)^2) and a fully sampled 4x4 centre. c is calibrated by
/// bisection so the expected retained fraction is 1 / acceleration; draws whose
/// realized fraction falls outside +-0.05 of that are rejected and redrawn.
inline SamplingMask generate_mask(std::size_t height, std::size_t width, double acceleration,
                                  std::uint64_t seed) {
  if (!(acceleration > 1.0)) throw InvalidParameter("generate_mask: acceleration must be > 1");
  if (height < 2 || width < 2) throw InvalidShape("generate_mask: dimensions must be >= 2");
  const std::size_t n = height * width;
  const double target = 1.0 / acceleration;
  const double r_max = std::hypot(static_cast<double>(height) / 2.0, static_cast<double>(width) / 2.0);

  std::vector<double> falloff(n);
  std::vector<std::uint8_t> centre(n, 0);
  for (std::size_t r = 0; r < height; ++r)
    for (std::size_t c = 0; c < width; ++c) {
      const std::size_t i = r * width + c;
      const double t = std::max(0.0, 1.0 - kspace_radius(r, c, height, width) / r_max);
      falloff[i] = t * t;
      const bool in_r = r < 2 || r + 2 >= height;
      const bool in_c = c < 2 || c + 2 >= width;
      centre[i] = (in_r && in_c) ? 1 : 0;
    }

  auto expected = [&](double scale) {
    double s = 0.0;
    for (std::size_t i = 0; i < n; ++i) s += centre[i] ? 1.0 : std::min(1.0, scale * falloff[i]);
    return s / static_cast<double>(n);
  };
  double lo = 0.0, hi = 1.0;
  while (expected(hi) < target && hi < 1e12) hi *= 2.0;
  for (int it = 0; it < 200; ++it) {
    const double mid = 0.5 * (lo + hi);
    (expected(mid) < target ? lo : hi) = mid;
  }
  const double scale = 0.5 * (lo + hi);

  Rng rng = make_rng({seed, 0x6d61736bull});
  std::vector<std::uint8_t> keep(n);
  for (int attempt = 0; attempt < 100; ++attempt) {
    std::size_t count = 0;
    for (std::size_t i = 0; i < n; ++i) {
      const double u = uniform01(rng);
      keep[i] = (centre[i] || u < std::min(1.0, scale * falloff[i])) ? 1 : 0;
      count += keep[i];
    }
    const double frac = static_cast<double>(count) / static_cast<double>(n);
    if (count > 0 && count < n && std::abs(frac - target) <= 0.05)
      return SamplingMask(height, width, keep, seed, acceleration);
  }
  throw GenerationError("generate_mask: could not hit retained fraction " + std::to_string(target) +
                        " +- 0.05 within 100 draws");
}

// Mask file: "HRMK", u32 height, u32 width, f64 acceleration, u64 seed, then a
// row-major bit array packed LSB-first into ceil(N / 8) bytes.
inline std::vector<char> encode_mask(const SamplingMask& mask) {
  io::Writer w;
  w.bytes("HRMK");
  w.u32(static_cast<std::uint32_t>(mask.height()));
  w.u32(static_cast<std::uint32_t>(mask.width()));
  w.f64(mask.acceleration());
  w.u64(mask.seed());
  const std::size_t n = mask.size();
  for (std::size_t b = 0; b < (n + 7) / 8; ++b) {
    std::uint8_t byte = 0;
    for (std::size_t k = 0; k < 8 && b * 8 + k < n; ++k)
      if (mask[b * 8 + k]) byte |= static_cast<std::uint8_t>(1u << k);
    w.u8(byte);
  }
  return w.buffer();
}

inline SamplingMask decode_mask(io::Reader& r) {
  r.expect_magic("HRMK");
  const std::size_t h = r.u32();
  const std::size_t w = r.u32();
  const double accel = r.f64();
  const std::uint64_t seed = r.u64();
  std::vector<std::uint8_t> keep(h * w);
  for (std::size_t b = 0; b < (h * w + 7) / 8; ++b) {
    const std::uint8_t byte = r.u8();
    for (std::size_t k = 0; k < 8 && b * 8 + k < h * w; ++k) keep[b * 8 + k] = (byte >> k) & 1u;
  }
  return SamplingMask(h, w, std::move(keep), seed, accel);
}

inline void save_mask(const SamplingMask& mask, const std::string& path) {
  const auto bytes = encode_mask(mask);
  io::Writer w;
  w.bytes(std::string_view(bytes.data(), bytes.size()));
  w.save(path);
}

inline SamplingMask load_mask(const std::string& path) {
  auto r = io::Reader::open(path);
  return decode_mask(r);
}

}  // namespace hyperrecon
