#pragma once

#include "ilr/tensor.hpp"

#include <filesystem>
#include <stdexcept>
#include <string>

namespace ilr {

/// HSICUBE1 layout: 8-byte magic, then bands, height, width as u32 LE, then a u32 LE dtype code
/// (1 = f32, 2 = f64), then band-major (band, row, column) little-endian values.
enum class CubeDtype : std::uint32_t { f32 = 1, f64 = 2 };

enum class CubeIoErrc { io, bad_magic, truncated, unknown_dtype, trailing_bytes, bad_shape };

char const *to_string(CubeIoErrc c);

class CubeIoError : public std::runtime_error
{
public:
  CubeIoError(CubeIoErrc code, std::string const &msg) : std::runtime_error(msg), code_(code) {}
  CubeIoErrc code() const { return code_; }

private:
  CubeIoErrc code_;
};

inline constexpr std::size_t cube_header_bytes = 24;

HsiCube read_cube(std::filesystem::path const &path);
void write_cube(std::filesystem::path const &path, HsiCube const &cube, CubeDtype dtype = CubeDtype::f64);

/// Headerless little-endian values in band-major order.
HsiCube import_raw(std::filesystem::path const &path, std::size_t bands, std::size_t height, std::size_t width,
                   CubeDtype dtype);

} // namespace ilr
