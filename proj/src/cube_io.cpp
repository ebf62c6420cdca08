#include "ilr/cube_io.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>
#include <vector>

namespace ilr {

namespace {

constexpr char magic[8] = {'H', 'S', 'I', 'C', 'U', 'B', 'E', '1'};

std::vector<unsigned char> slurp(std::filesystem::path const &path)
{
  std::ifstream in(path, std::ios::binary);
  if (!in) {
    throw CubeIoError(CubeIoErrc::io, "cannot open " + path.string());
  }
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

std::uint32_t get_u32(unsigned char const *p)
{
  return std::uint32_t{p[0]} | std::uint32_t{p[1]} << 8 | std::uint32_t{p[2]} << 16 | std::uint32_t{p[3]} << 24;
}

void put_u32(std::vector<unsigned char> &out, std::uint32_t v)
{
  for (int i = 0; i < 4; ++i) {
    out.push_back(static_cast<unsigned char>(v >> (8 * i)));
  }
}

std::size_t dtype_size(std::uint32_t code)
{
  switch (code) {
  case 1:
    return 4;
  case 2:
    return 8;
  default:
    return 0;
  }
}

void decode(unsigned char const *p, std::size_t count, CubeDtype dtype, double *out)
{
  for (std::size_t i = 0; i < count; ++i) {
    if (dtype == CubeDtype::f32) {
      std::uint32_t bits = get_u32(p + 4 * i);
      out[i] = std::bit_cast<float>(bits);
    } else {
      std::uint64_t bits = std::uint64_t{get_u32(p + 8 * i)} | std::uint64_t{get_u32(p + 8 * i + 4)} << 32;
      out[i] = std::bit_cast<double>(bits);
    }
  }
}

HsiCube decode_payload(std::vector<unsigned char> const &bytes, std::size_t offset, std::size_t B, std::size_t H,
                       std::size_t W, CubeDtype dtype, std::string const &where)
{
  if (B == 0 || H == 0 || W == 0) {
    throw CubeIoError(CubeIoErrc::bad_shape, where + ": zero extent " + std::to_string(B) + "x" + std::to_string(H) +
                                                 "x" + std::to_string(W));
  }
  std::size_t const count = B * H * W;
  std::size_t const need = count * dtype_size(static_cast<std::uint32_t>(dtype));
  std::size_t const have = bytes.size() - offset;
  if (have < need) {
    throw CubeIoError(CubeIoErrc::truncated, where + ": payload has " + std::to_string(have) + " bytes, expected " +
                                                 std::to_string(need));
  }
  if (have > need) {
    throw CubeIoError(CubeIoErrc::trailing_bytes,
                      where + ": " + std::to_string(have - need) + " bytes after the payload");
  }
  HsiCube cube(Shape{B, H, W});
  decode(bytes.data() + offset, count, dtype, &cube[0]);
  return cube;
}

} // namespace

char const *to_string(CubeIoErrc c)
{
  switch (c) {
  case CubeIoErrc::io:
    return "io";
  case CubeIoErrc::bad_magic:
    return "bad_magic";
  case CubeIoErrc::truncated:
    return "truncated";
  case CubeIoErrc::unknown_dtype:
    return "unknown_dtype";
  case CubeIoErrc::trailing_bytes:
    return "trailing_bytes";
  case CubeIoErrc::bad_shape:
    return "bad_shape";
  }
  return "?";
}

HsiCube read_cube(std::filesystem::path const &path)
{
  auto const bytes = slurp(path);
  std::string const where = path.string();
  if (bytes.size() < sizeof magic || std::memcmp(bytes.data(), magic, sizeof magic) != 0) {
    throw CubeIoError(CubeIoErrc::bad_magic, where + ": not an HSICUBE1 file");
  }
  if (bytes.size() < cube_header_bytes) {
    throw CubeIoError(CubeIoErrc::truncated, where + ": header cut short");
  }
  std::uint32_t const dt = get_u32(bytes.data() + 20);
  if (dtype_size(dt) == 0) {
    throw CubeIoError(CubeIoErrc::unknown_dtype, where + ": unknown dtype code " + std::to_string(dt));
  }
  return decode_payload(bytes, cube_header_bytes, get_u32(bytes.data() + 8), get_u32(bytes.data() + 12),
                        get_u32(bytes.data() + 16), static_cast<CubeDtype>(dt), where);
}

void write_cube(std::filesystem::path const &path, HsiCube const &cube, CubeDtype dtype)
{
  if (cube.rank() != 3) {
    throw CubeIoError(CubeIoErrc::bad_shape, "write_cube: expected a 3-D cube, got " + shape_str(cube.shape()));
  }
  std::size_t const es = dtype_size(static_cast<std::uint32_t>(dtype));
  if (es == 0) {
    throw CubeIoError(CubeIoErrc::unknown_dtype, "write_cube: unknown dtype");
  }
  std::vector<unsigned char> out(magic, magic + sizeof magic);
  for (std::size_t a = 0; a < 3; ++a) {
    if (cube.dim(a) > 0xFFFFFFFFu) {
      throw CubeIoError(CubeIoErrc::bad_shape, "write_cube: extent does not fit in 32 bits");
    }
    put_u32(out, static_cast<std::uint32_t>(cube.dim(a)));
  }
  put_u32(out, static_cast<std::uint32_t>(dtype));
  out.reserve(out.size() + cube.size() * es);
  for (double v : cube.values()) {
    if (dtype == CubeDtype::f32) {
      put_u32(out, std::bit_cast<std::uint32_t>(static_cast<float>(v)));
    } else {
      auto const bits = std::bit_cast<std::uint64_t>(v);
      put_u32(out, static_cast<std::uint32_t>(bits));
      put_u32(out, static_cast<std::uint32_t>(bits >> 32));
    }
  }
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) {
    throw CubeIoError(CubeIoErrc::io, "cannot create " + path.string());
  }
  f.write(reinterpret_cast<char const *>(out.data()), static_cast<std::streamsize>(out.size()));
  if (!f) {
    throw CubeIoError(CubeIoErrc::io, "write failed for " + path.string());
  }
}

HsiCube import_raw(std::filesystem::path const &path, std::size_t bands, std::size_t height, std::size_t width,
                   CubeDtype dtype)
{
  if (dtype_size(static_cast<std::uint32_t>(dtype)) == 0) {
    throw CubeIoError(CubeIoErrc::unknown_dtype, "import_raw: unknown dtype");
  }
  return decode_payload(slurp(path), 0, bands, height, width, dtype, path.string());
}

} // namespace ilr
