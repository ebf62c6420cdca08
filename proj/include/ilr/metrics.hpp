#pragma once

#include "ilr/tensor.hpp"

#include <string>

namespace ilr {

struct MetricReport
{
  double psnr = 0; // dB, +inf when identical
  double ssim = 0;
  double sam = 0; // radians

  /// "psnr=<dB|inf> ssim=<v> sam=<v>"
  std::string to_line() const;
};

/// 10 log10(peak^2 / MSE); +inf when MSE is zero.
double psnr(Tensor const &x, Tensor const &ref, double peak = 1.0);

/// Single-scale SSIM per band (11x11 Gaussian window, sigma 1.5, K1 0.01, K2 0.03, range 1) over
/// all valid window positions, averaged over bands.
double ssim(Tensor const &x, Tensor const &ref);

/// Mean spectral angle over pixels. Pixels where both spectra are zero are skipped; a zero
/// spectrum against a nonzero one counts as pi/2.
double sam(Tensor const &x, Tensor const &ref);

MetricReport evaluate(Tensor const &x, Tensor const &ref);

} // namespace ilr
