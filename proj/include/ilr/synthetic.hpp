#pragma once

#include "ilr/tensor.hpp"

#include <cstdint>

namespace ilr {

struct SyntheticSpec
{
  std::size_t bands = 31, height = 64, width = 64;
  std::size_t rank = 4;
  std::size_t spatial_modes = 6; // cosine modes per abundance field
};

/// Clean cube sum_r s_r(band) a_r(row, col) in [0, 1]: smooth bump spectra times smooth
/// nonnegative spatial fields, normalized to peak 1.
HsiCube make_lowrank_cube(SyntheticSpec const &spec, std::uint64_t seed);

} // namespace ilr
