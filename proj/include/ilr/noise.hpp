#pragma once

#include "ilr/tensor.hpp"

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace ilr {

enum class NoiseKind { noniid_gaussian, mixture, corr_variance };

std::string to_string(NoiseKind k);
/// Accepts the canonical names plus the short forms "noniid" and "corr".
NoiseKind parse_noise_kind(std::string const &s);

/// Sigma values are on the 0-255 scale and divided by 255 before use; cubes live in [0, 1].
struct NoiseSpec
{
  NoiseKind kind = NoiseKind::noniid_gaussian;
  double sigma_lo = 0;
  double sigma_hi = 95;
  double beta = 23.08;
  double eta = 0.157;
  double impulse_lo = 0.1;
  double impulse_hi = 0.7;
  double stripe_frac_lo = 0.05;
  double stripe_frac_hi = 0.15;
  std::uint64_t seed = 0;

  void validate() const;

  /// key=value lines, keys named as the fields. '#' starts a comment.
  std::string to_text() const;
  static NoiseSpec from_text(std::string const &text);
  static NoiseSpec load(std::filesystem::path const &path);
};

/// Per band b, sigma_b ~ U[sigma_lo, sigma_hi] (stream b), then i.i.d. normals from the same stream.
/// Returned on the 0-255 scale.
std::vector<double> noniid_band_sigmas(std::size_t bands, NoiseSpec const &spec);
HsiCube add_noniid_gaussian(HsiCube const &x, NoiseSpec const &spec);

/// beta * exp(-(i/c - 1/2)^2 / (4 eta^2)) with c = B - 1, on the 0-255 scale.
std::vector<double> corr_variance_sigmas(std::size_t bands, double beta, double eta);
HsiCube add_corr_variance(HsiCube const &x, NoiseSpec const &spec);

struct MixtureLayout
{
  std::vector<std::size_t> impulse_bands, stripe_bands, deadline_bands;
  std::vector<double> impulse_ratio;                     // per impulse band
  std::vector<std::vector<std::size_t>> stripe_columns;  // per stripe band
  std::vector<std::vector<double>> stripe_offsets;
  std::vector<std::vector<std::size_t>> deadline_columns; // per deadline band
};

/// The seeded band partition and per-band corruption parameters used by add_mixture.
MixtureLayout plan_mixture(Shape const &shape, NoiseSpec const &spec);
HsiCube add_mixture(HsiCube const &x, NoiseSpec const &spec);

/// Dispatches on spec.kind.
HsiCube apply_noise(HsiCube const &x, NoiseSpec const &spec);

} // namespace ilr
