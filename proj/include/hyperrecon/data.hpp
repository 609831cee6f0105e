#pragma once

// Synthetic ellipse phantoms and retrospectively undersampled datasets.
//
// Directory layout written by save_dataset():
//   manifest.json           seeds, sizes, acceleration, file names
//   mask.bin                shared sampling mask (mask file format)
//   <split>_images.bin      ground-truth magnitudes
//   <split>_kspace.bin      zero-embedded k-space (real, imaginary interleaved)
// Grid files: "HRGD", u32 count, u32 height, u32 width, u32 channels, then
// count * height * width * channels f64 values, row-major, channels innermost.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <numbers>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "hyperrecon/binary_io.hpp"
#include "hyperrecon/error.hpp"
#include "hyperrecon/random.hpp"
#include "hyperrecon/signal.hpp"

namespace hyperrecon {

/// Piecewise-constant ellipses (3 to 8) on a zero background with a mild linear
/// intensity ramp, normalized to a maximum of 1.
inline ComplexGrid make_phantom(std::size_t size, std::uint64_t seed) {
  if (size < 16) throw InvalidParameter("make_phantom: size must be >= 16, got " + std::to_string(size));
  Rng rng = make_rng({seed, 0x7068616eull});
  const std::size_t count = 3 + uniform_index(rng, 6);
  std::vector<double> img(size * size, 0.0);

  struct Ellipse {
    double cx, cy, a, b, angle, value;
  };
  std::vector<Ellipse> shapes;
  // Outer "head" first, smaller structures inside it.
  shapes.push_back({uniform(rng, -0.05, 0.05), uniform(rng, -0.05, 0.05), uniform(rng, 0.7, 0.85),
                    uniform(rng, 0.55, 0.75), uniform(rng, -0.3, 0.3), uniform(rng, 0.3, 0.55)});
  for (std::size_t k = 1; k < count; ++k)
    shapes.push_back({uniform(rng, -0.4, 0.4), uniform(rng, -0.4, 0.4), uniform(rng, 0.08, 0.35),
                      uniform(rng, 0.06, 0.3), uniform(rng, 0.0, std::numbers::pi), uniform(rng, 0.1, 1.0)});

  for (std::size_t r = 0; r < size; ++r)
    for (std::size_t c = 0; c < size; ++c) {
      const double y = 2.0 * (static_cast<double>(r) + 0.5) / static_cast<double>(size) - 1.0;
      const double x = 2.0 * (static_cast<double>(c) + 0.5) / static_cast<double>(size) - 1.0;
      for (const auto& e : shapes) {
        const double ca = std::cos(e.angle), sa = std::sin(e.angle);
        const double u = ((x - e.cx) * ca + (y - e.cy) * sa) / e.a;
        const double v = (-(x - e.cx) * sa + (y - e.cy) * ca) / e.b;
        if (u * u + v * v <= 1.0) img[r * size + c] = e.value;
      }
    }

  const double gx = uniform(rng, -0.15, 0.15), gy = uniform(rng, -0.15, 0.15);
  double peak = 0.0;
  for (std::size_t r = 0; r < size; ++r)
    for (std::size_t c = 0; c < size; ++c) {
      const double y = 2.0 * (static_cast<double>(r) + 0.5) / static_cast<double>(size) - 1.0;
      const double x = 2.0 * (static_cast<double>(c) + 0.5) / static_cast<double>(size) - 1.0;
      auto& v = img[r * size + c];
      v *= 1.0 + gx * x + gy * y;
      peak = std::max(peak, v);
    }
  for (auto& v : img) v = std::clamp(peak > 0.0 ? v / peak : v, 0.0, 1.0);
  return ComplexGrid::from_real(size, size, img);
}

struct Split {
  std::string name;
  std::vector<std::uint64_t> seeds;
  std::vector<ComplexGrid> truths;
  std::vector<Measurement> measurements;

  std::size_t size() const { return truths.size(); }
};

struct Dataset {
  std::size_t image_size = 64;
  double acceleration = 4.0;
  std::uint64_t seed = 0;
  SamplingMask mask;
  Split train, val, test;

  const Split& split(const std::string& name) const {
    if (name == "train") return train;
    if (name == "val") return val;
    if (name == "test") return test;
    throw InvalidParameter("unknown split '" + name + "'");
  }
};

struct DatasetSizes {
  std::size_t train = 200;
  std::size_t val = 50;
  std::size_t test = 100;
};

/// Phantom seeds are consecutive, non-overlapping ranges starting at seed * 2^20 so
/// no phantom appears in two splits. One mask is shared by every measurement.
inline Dataset build_dataset(DatasetSizes sizes, std::size_t image_size, double acceleration, std::uint64_t seed) {
  if (sizes.train == 0 || sizes.val == 0 || sizes.test == 0)
    throw InvalidParameter("build_dataset: split sizes must be positive");
  Dataset ds;
  ds.image_size = image_size;
  ds.acceleration = acceleration;
  ds.seed = seed;
  ds.mask = generate_mask(image_size, image_size, acceleration, seed);
  std::uint64_t next = seed << 20;
  auto fill = [&](Split& s, const char* name, std::size_t n) {
    s.name = name;
    for (std::size_t i = 0; i < n; ++i) {
      s.seeds.push_back(next++);
      s.truths.push_back(make_phantom(image_size, s.seeds.back()));
      s.measurements.push_back(undersampled_forward(s.truths.back(), ds.mask));
    }
  };
  fill(ds.train, "train", sizes.train);
  fill(ds.val, "val", sizes.val);
  fill(ds.test, "test", sizes.test);
  return ds;
}

namespace detail {

inline void write_grids(const std::string& path, const std::vector<ComplexGrid>& grids, bool complex_values) {
  io::Writer w;
  w.bytes("HRGD");
  w.u32(static_cast<std::uint32_t>(grids.size()));
  w.u32(grids.empty() ? 0u : static_cast<std::uint32_t>(grids.front().height()));
  w.u32(grids.empty() ? 0u : static_cast<std::uint32_t>(grids.front().width()));
  w.u32(complex_values ? 2u : 1u);
  for (const auto& g : grids)
    for (const auto& v : g.values()) {
      w.f64(v.real());
      if (complex_values) w.f64(v.imag());
    }
  w.save(path);
}

inline std::vector<ComplexGrid> read_grids(const std::string& path) {
  auto r = io::Reader::open(path);
  r.expect_magic("HRGD");
  const std::size_t count = r.u32(), h = r.u32(), w = r.u32(), ch = r.u32();
  if (ch != 1 && ch != 2) throw IoError(path, "bad channel count");
  std::vector<ComplexGrid> out;
  out.reserve(count);
  for (std::size_t k = 0; k < count; ++k) {
    std::vector<cplx> v(h * w);
    for (auto& z : v) {
      const double re = r.f64();
      z = {re, ch == 2 ? r.f64() : 0.0};
    }
    out.emplace_back(h, w, std::move(v));
  }
  return out;
}

}  // namespace detail

inline void save_dataset(const Dataset& ds, const std::string& dir) {
  namespace fs = std::filesystem;
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw IoError(dir, "cannot create directory: " + ec.message());
  save_mask(ds.mask, (fs::path(dir) / "mask.bin").string());
  nlohmann::json manifest = {{"format", "hyperrecon-dataset"},
                             {"version", 1},
                             {"image_size", ds.image_size},
                             {"acceleration", ds.acceleration},
                             {"seed", ds.seed},
                             {"mask_file", "mask.bin"},
                             {"mask_seed", ds.mask.seed()},
                             {"mask_policy", "shared"},
                             {"retained_fraction", ds.mask.retained_fraction()}};
  for (const Split* s : {&ds.train, &ds.val, &ds.test}) {
    std::vector<ComplexGrid> kspace;
    for (const auto& m : s->measurements) kspace.push_back(m.kspace);
    detail::write_grids((fs::path(dir) / (s->name + "_images.bin")).string(), s->truths, false);
    detail::write_grids((fs::path(dir) / (s->name + "_kspace.bin")).string(), kspace, true);
    manifest["splits"][s->name] = {{"count", s->size()},
                                   {"seeds", s->seeds},
                                   {"images", s->name + "_images.bin"},
                                   {"kspace", s->name + "_kspace.bin"}};
  }
  io::write_text((fs::path(dir) / "manifest.json").string(), manifest.dump(2) + "\n");
}

inline Dataset load_dataset(const std::string& dir) {
  namespace fs = std::filesystem;
  const std::string manifest_path = (fs::path(dir) / "manifest.json").string();
  nlohmann::json m;
  try {
    m = nlohmann::json::parse(io::read_text(manifest_path));
  } catch (const nlohmann::json::exception& e) {
    throw IoError(manifest_path, e.what());
  }
  Dataset ds;
  ds.image_size = m.at("image_size").get<std::size_t>();
  ds.acceleration = m.at("acceleration").get<double>();
  ds.seed = m.at("seed").get<std::uint64_t>();
  ds.mask = load_mask((fs::path(dir) / m.at("mask_file").get<std::string>()).string());
  for (Split* s : {&ds.train, &ds.val, &ds.test}) {
    s->name = s == &ds.train ? "train" : (s == &ds.val ? "val" : "test");
    const auto& entry = m.at("splits").at(s->name);
    s->seeds = entry.at("seeds").get<std::vector<std::uint64_t>>();
    s->truths = detail::read_grids((fs::path(dir) / entry.at("images").get<std::string>()).string());
    const auto kspace = detail::read_grids((fs::path(dir) / entry.at("kspace").get<std::string>()).string());
    if (kspace.size() != s->truths.size() || s->seeds.size() != s->truths.size())
      throw IoError(dir, "split '" + s->name + "' has inconsistent counts");
    for (const auto& k : kspace) s->measurements.push_back({k, ds.mask});
  }
  return ds;
}

}  // namespace hyperrecon
