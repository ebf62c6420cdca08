#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace ilr {

struct CheckResult
{
  std::string name;
  bool passed = false;
  double value = 0; // measured error
  double limit = 0;
};

std::string format_check(CheckResult const &r);
bool all_passed(std::vector<CheckResult> const &results);

/// Finite-difference checks of the SVT and RMM backward passes on random inputs whose singular
/// values are separated by at least 1e-3 sigma_1 and sit away from the threshold.
std::vector<CheckResult> gradcheck_rmm(double tolerance = 1e-4, std::uint64_t seed = 1);

/// conv3d, deconv3d and conv2d gradients for input, kernel and bias; relu and sigmoid.
std::vector<CheckResult> gradcheck_layers(double tolerance = 1e-4, std::uint64_t seed = 1);

/// Loss 0.5 ||X - T||^2 through the micro network with K = 2 on an 8 x 16 x 16 cube: gradients
/// with respect to the input and every parameter tensor, 24 sampled coordinates each.
std::vector<CheckResult> gradcheck_network(double tolerance = 1e-3, std::vector<std::uint64_t> const &seeds = {12});

/// Wavelet reconstruction, SVT against a direct SVD-shrink-compose path, metric identities.
std::vector<CheckResult> self_test(std::uint64_t seed = 1);

} // namespace ilr
