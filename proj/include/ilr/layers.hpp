#pragma once

#include "ilr/rng.hpp"
#include "ilr/tensor.hpp"

#include <array>
#include <functional>
#include <string>

namespace ilr {

using Extent3 = std::array<std::size_t, 3>;

/// floor((in + 2 pad - k) / stride) + 1; throws ShapeError when the window does not fit.
std::size_t conv_out_extent(std::size_t in, std::size_t k, std::size_t stride, std::size_t pad);

/// (in - 1) stride - 2 pad + k + output_pad
std::size_t deconv_out_extent(std::size_t in, std::size_t k, std::size_t stride, std::size_t pad,
                              std::size_t output_pad);

/// Geometry and parameters of one 3-D convolution or transposed convolution.
///
/// Convolution kernels are out x in x kD x kH x kW. Transposed-convolution kernels are
/// in x out x kD x kH x kW, i.e. the kernel of the convolution they are the adjoint of, so
/// deconv3d(., p) is exactly the transpose of conv3d(., p) when the bias is zero.
struct ConvLayer
{
  std::size_t in_channels = 1;
  std::size_t out_channels = 1;
  Extent3 kernel_size{3, 3, 3};
  Extent3 stride{1, 1, 1};
  Extent3 padding{1, 1, 1};
  Extent3 output_padding{0, 0, 0}; // transposed only
  bool transposed = false;

  Tensor kernel;
  Tensor bias;
  Tensor grad_kernel;
  Tensor grad_bias;

  /// Allocates zero parameters and gradients.
  void allocate();
  /// Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) kernel, zero bias.
  void init_uniform(Rng &rng);
  void zero_grad();
  std::size_t fan_in() const;
};

ConvLayer make_conv3d(std::size_t in, std::size_t out, Extent3 stride = {1, 1, 1});
/// Spatial upsampling by `stride` with output padding chosen so a 3-wide kernel doubles even extents.
ConvLayer make_deconv3d(std::size_t in, std::size_t out, Extent3 stride = {1, 2, 2});
/// 2-D layer stored as a 3-D layer with unit depth kernel.
ConvLayer make_conv2d(std::size_t in, std::size_t out, std::size_t stride = 1);

struct ConvGrads
{
  Tensor grad_x;
  Tensor grad_kernel;
  Tensor grad_bias;
};

/// x: C x D x H x W.
Tensor conv3d(Tensor const &x, ConvLayer const &p);
ConvGrads conv3d_backward(Tensor const &x, ConvLayer const &p, Tensor const &grad_out);

Tensor deconv3d(Tensor const &x, ConvLayer const &p);
ConvGrads deconv3d_backward(Tensor const &x, ConvLayer const &p, Tensor const &grad_out);

/// x: N x C x H x W, each sample convolved independently.
Tensor conv2d(Tensor const &x, ConvLayer const &p);
ConvGrads conv2d_backward(Tensor const &x, ConvLayer const &p, Tensor const &grad_out);

Tensor relu(Tensor const &x);
Tensor relu_backward(Tensor const &x, Tensor const &grad_out);
Tensor sigmoid(Tensor const &x);
/// Takes the forward output y = sigmoid(x).
Tensor sigmoid_backward(Tensor const &y, Tensor const &grad_out);

/// Stacks equal-shaped tensors along a new leading axis.
Tensor stack(std::vector<Tensor const *> const &parts);

/// Index of position i in a signal of length n under whole-sample reflection
/// (... 2 1 | 0 1 2 ... n-1 | n-2 ...), periodic with period 2(n-1).
std::size_t reflect_index(std::ptrdiff_t i, std::size_t n);

/// Spatial resampling over the last two axes: out[..., i, j] = x[..., rows[i], cols[j]].
/// Covers reflect padding and cropping.
Tensor spatial_gather(Tensor const &x, std::vector<std::size_t> const &rows,
                      std::vector<std::size_t> const &cols);
/// Adjoint of spatial_gather; `in_shape` is the shape of the gathered tensor's source.
Tensor spatial_gather_backward(Shape const &in_shape, std::vector<std::size_t> const &rows,
                               std::vector<std::size_t> const &cols, Tensor const &grad_out);

/// Index map that reflect-pads an axis of length n to length `target`, placing the
/// original samples at offset `before`.
std::vector<std::size_t> reflect_pad_map(std::size_t n, std::size_t target, std::size_t before);
/// Index map for the window [offset, offset + len).
std::vector<std::size_t> crop_map(std::size_t offset, std::size_t len);

struct GradCheckReport
{
  double max_rel_error = 0;
  std::size_t coords_checked = 0;
  std::size_t worst_index = 0;
  bool passed = false;
};

struct GradCheckOptions
{
  double step = 1e-5;
  double tolerance = 1e-4;
  std::size_t max_coords = 0; // 0 = every coordinate
  std::uint64_t seed = 0;
};

/// Compares `analytic` with central differences of `f` at x. The relative error of a coordinate
/// is |analytic - numeric| / max_k |numeric_k| over the sampled coordinates, so entries that are
/// tiny compared with the gradient's scale do not dominate the report.
GradCheckReport grad_check(std::function<double(Tensor const &)> const &f, Tensor const &x,
                           Tensor const &analytic, GradCheckOptions const &opts = {});

} // namespace ilr
