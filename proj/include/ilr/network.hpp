#pragma once

#include "ilr/layers.hpp"
#include "ilr/lowrank.hpp"
#include "ilr/tensor.hpp"

#include <optional>
#include <string>
#include <vector>

namespace ilr {

struct CoarseNetConfig
{
  std::vector<std::size_t> encoder{16, 32, 64, 128};
  std::vector<std::size_t> decoder{64, 32, 16, 1};
  bool rmm_enabled = true;
  std::size_t rmm_position = 0; // decoder level whose output feeds the RMM
  double d_init = -4.0;
};

struct RefineNetConfig
{
  std::vector<std::size_t> encoder{16, 32};
  std::vector<std::size_t> decoder{16, 1};
};

struct LambdaNetConfig
{
  std::size_t crop = 56;
  std::vector<std::size_t> channels{2, 8, 16, 32};
};

struct NetworkConfig
{
  CoarseNetConfig coarse;
  RefineNetConfig refine;
  LambdaNetConfig lambda;
  std::size_t iterations = 9;
  SvtOptions svt;

  /// Every channel ladder divided by four (the input pair of the weight nets stays 2).
  static NetworkConfig micro(std::size_t iterations = 3);
  void validate() const;
};

struct ParamRef
{
  std::string name;
  Tensor *value;
  Tensor *grad;
};

/// 3-D U-Net with additive encoder/decoder skips and spatial-only (1, 2, 2) resampling.
/// Every layer but the last is followed by ReLU. Cubes are reflect-padded so height and width
/// are divisible by 2^levels, and cropped back afterwards.
class UNet3d
{
public:
  struct Cache
  {
    Shape cube_shape;
    std::vector<std::size_t> rows, cols;
    std::vector<Tensor> enc_in, enc_pre, enc_out;
    std::vector<Tensor> dec_in, dec_pre;
    Tensor rmm_in;
    std::optional<RmmCache> rmm;
  };

  UNet3d() = default;
  UNet3d(std::vector<std::size_t> encoder, std::vector<std::size_t> decoder, bool rmm_enabled,
         std::size_t rmm_position, double d_init);

  void init(Rng &rng);
  HsiCube forward(HsiCube const &y, Cache *cache = nullptr) const;
  /// Accumulates parameter gradients; returns the gradient with respect to the input cube.
  HsiCube backward(Cache const &cache, HsiCube const &grad_out, SvtOptions const &svt);

  std::size_t levels() const { return encoder_.size(); }
  std::size_t divisor() const { return std::size_t{1} << levels(); }
  bool rmm_enabled() const { return rmm_enabled_; }
  double threshold_logit() const { return d_[0]; }
  void set_threshold_logit(double d) { d_[0] = d; }

  void collect(std::string const &prefix, std::vector<ParamRef> &out);
  std::vector<ConvLayer> &encoder_layers() { return encoder_; }
  std::vector<ConvLayer> &decoder_layers() { return decoder_; }

private:
  std::vector<ConvLayer> encoder_;
  std::vector<ConvLayer> decoder_;
  bool rmm_enabled_ = false;
  std::size_t rmm_position_ = 0;
  Tensor d_{Shape{1}};
  Tensor grad_d_{Shape{1}};
};

/// Per-band weight inference: center crop of the two-channel band image, three stride-2 3x3
/// convolutions, average over channels and positions, sigmoid. Output has one entry per band.
class LambdaNet
{
public:
  struct Cache
  {
    Shape cube_shape;
    std::vector<std::size_t> rows, cols;
    std::vector<Tensor> inputs, pre;
    Tensor out;
  };

  LambdaNet() = default;
  explicit LambdaNet(LambdaNetConfig const &cfg);

  void init(Rng &rng);
  Tensor forward(HsiCube const &a, HsiCube const &b, Cache *cache = nullptr) const;
  /// Gradients with respect to (a, b).
  std::pair<HsiCube, HsiCube> backward(Cache const &cache, Tensor const &grad_lambda);

  void collect(std::string const &prefix, std::vector<ParamRef> &out);
  std::vector<ConvLayer> &layers() { return layers_; }

private:
  std::size_t crop_ = 56;
  std::vector<ConvLayer> layers_;
};

/// (1 - lambda_b) a + lambda_b b for every band b.
HsiCube convex_combine(HsiCube const &a, HsiCube const &b, Tensor const &lambda);

struct RefinementState
{
  HsiCube x_current;
  HsiCube z_current;
  std::size_t iteration = 0;
  Tensor lambda1, lambda2;
};

class IlrNet
{
public:
  struct StepCache
  {
    HsiCube x_prev;
    HsiCube z;
    HsiCube f_out;
    Tensor lambda1, lambda2;
    LambdaNet::Cache lam1, lam2;
    UNet3d::Cache refine;
  };
  struct Cache
  {
    HsiCube y;
    UNet3d::Cache coarse;
    std::vector<StepCache> steps;
  };
  struct Output
  {
    HsiCube x;
    std::vector<HsiCube> trace; // X^(0) ... X^(K)
  };

  IlrNet() = default;
  explicit IlrNet(NetworkConfig cfg);

  NetworkConfig const &config() const { return cfg_; }
  void init(std::uint64_t seed);

  HsiCube coarse_estimate(HsiCube const &y, UNet3d::Cache *cache = nullptr) const;
  RefinementState refine_step(RefinementState const &state, HsiCube const &y, StepCache *cache = nullptr) const;
  /// Runs the coarse estimate and `iterations` refinement steps (at most the configured count).
  Output forward(HsiCube const &y, std::size_t iterations, Cache *cache = nullptr) const;
  Output forward(HsiCube const &y) const { return forward(y, cfg_.iterations); }
  /// Accumulates parameter gradients of a loss whose gradient at the final output is grad_out.
  /// Returns the gradient with respect to y.
  HsiCube backward(Cache const &cache, HsiCube const &grad_out);

  std::vector<ParamRef> parameters();
  void zero_grad();

  UNet3d &coarse() { return coarse_; }
  UNet3d const &coarse() const { return coarse_; }
  UNet3d &refine(std::size_t k) { return refine_.at(k); }
  LambdaNet &lambda1() { return lambda1_; }
  LambdaNet &lambda2() { return lambda2_; }

private:
  NetworkConfig cfg_;
  UNet3d coarse_;
  std::vector<UNet3d> refine_;
  LambdaNet lambda1_, lambda2_;
};

} // namespace ilr
