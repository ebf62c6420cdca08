#pragma once

#include "ilr/network.hpp"

#include <filesystem>
#include <stdexcept>
#include <string>
#include <vector>

namespace ilr {

/// Layout: "ILRN0001", u32 count, then per tensor u32 name length, name bytes, u32 rank,
/// u64 extents; then every tensor's values as f64, in manifest order. All integers little-endian.
struct NamedTensor
{
  std::string name;
  Tensor value;
};

class CheckpointError : public std::runtime_error
{
public:
  using std::runtime_error::runtime_error;
};

void write_checkpoint(std::filesystem::path const &path, std::vector<NamedTensor> const &tensors);
std::vector<NamedTensor> read_checkpoint(std::filesystem::path const &path);

/// Parameters plus a "meta.config" tensor describing the architecture.
std::vector<NamedTensor> network_tensors(IlrNet &net);
IlrNet network_from_tensors(std::vector<NamedTensor> const &tensors);

void save_network(std::filesystem::path const &path, IlrNet &net);
IlrNet load_network(std::filesystem::path const &path);

} // namespace ilr
