#include "ilr/synthetic.hpp"

#include "ilr/rng.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

namespace ilr {

HsiCube make_lowrank_cube(SyntheticSpec const &spec, std::uint64_t seed)
{
  if (spec.bands == 0 || spec.height == 0 || spec.width == 0 || spec.rank == 0) {
    throw ShapeError("make_lowrank_cube: empty extent");
  }
  Rng rng(seed, 0);
  std::size_t const B = spec.bands, H = spec.height, W = spec.width, R = spec.rank;
  Tensor spectra(Shape{R, B});
  Tensor fields(Shape{R, H * W});
  double const pi = std::numbers::pi;
  for (std::size_t r = 0; r < R; ++r) {
    double const c1 = rng.uniform(), c2 = rng.uniform();
    double const w1 = 0.1 + 0.3 * rng.uniform(), w2 = 0.1 + 0.3 * rng.uniform();
    double const a2 = rng.uniform();
    for (std::size_t b = 0; b < B; ++b) {
      double const t = B > 1 ? static_cast<double>(b) / static_cast<double>(B - 1) : 0.5;
      spectra(r, b) = 0.2 + std::exp(-0.5 * std::pow((t - c1) / w1, 2)) + a2 * std::exp(-0.5 * std::pow((t - c2) / w2, 2));
    }
    std::vector<double> fx(spec.spatial_modes), fy(spec.spatial_modes), ph(spec.spatial_modes), amp(spec.spatial_modes);
    for (std::size_t m = 0; m < spec.spatial_modes; ++m) {
      fx[m] = 0.5 + 3.5 * rng.uniform();
      fy[m] = 0.5 + 3.5 * rng.uniform();
      ph[m] = 2 * pi * rng.uniform();
      amp[m] = rng.uniform();
    }
    for (std::size_t i = 0; i < H; ++i) {
      for (std::size_t j = 0; j < W; ++j) {
        double const u = static_cast<double>(i) / static_cast<double>(H), v = static_cast<double>(j) / static_cast<double>(W);
        double s = 0;
        for (std::size_t m = 0; m < spec.spatial_modes; ++m) {
          s += amp[m] * std::cos(2 * pi * (fx[m] * u + fy[m] * v) + ph[m]);
        }
        fields(r, i * W + j) = std::exp(0.5 * s);
      }
    }
  }
  HsiCube cube(Shape{B, H, W});
  for (std::size_t b = 0; b < B; ++b) {
    for (std::size_t p = 0; p < H * W; ++p) {
      double s = 0;
      for (std::size_t r = 0; r < R; ++r) {
        s += spectra(r, b) * fields(r, p);
      }
      cube[b * H * W + p] = s;
    }
  }
  double const peak = *std::max_element(cube.values().begin(), cube.values().end());
  cube *= 1.0 / peak;
  return cube;
}

} // namespace ilr
