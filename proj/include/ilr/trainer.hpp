#pragma once

#include "ilr/network.hpp"
#include "ilr/noise.hpp"

#include <functional>
#include <string>
#include <vector>

namespace ilr {

struct LossResult
{
  double value = 0;
  std::vector<HsiCube> grads; // one per sample
};

/// (1 / 2N) sum_i ||pred_i - target_i||_F^2 with gradients (pred_i - target_i) / N.
LossResult frobenius_loss(std::vector<HsiCube> const &pred, std::vector<HsiCube> const &target);

struct AdamConfig
{
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

struct AdamState
{
  std::vector<Tensor> m, v;
  std::uint64_t t = 0;
};

/// One bias-corrected Adam update of every parameter from its gradient. Throws on non-finite
/// gradients, naming the tensor.
void adam_step(std::vector<ParamRef> const &params, AdamState &state, double lr, AdamConfig const &cfg = {});

/// lr0 * 0.5^floor(epoch / halve_every)
double scheduled_lr(double lr0, std::size_t epoch, std::size_t halve_every);

/// Scales all gradients so their joint L2 norm is at most max_norm; returns the norm before scaling.
double clip_grad_norm(std::vector<ParamRef> const &params, double max_norm);

struct Patch
{
  HsiCube clean;
  std::size_t source = 0;
  std::size_t band0 = 0, row0 = 0, col0 = 0;
};

/// `count` crops of extent patch_shape (bands, height, width) at seeded uniform offsets.
std::vector<Patch> extract_patches(HsiCube const &cube, Shape const &patch_shape, std::size_t count,
                                   std::uint64_t seed, std::size_t source = 0);

struct PatchPair
{
  HsiCube noisy, clean;
  std::size_t source = 0;
  std::size_t band0 = 0, row0 = 0, col0 = 0;
  std::uint64_t noise_seed = 0;
};

/// Applies `noise` with its seed replaced by noise_seed.
PatchPair make_patch_pair(Patch const &patch, NoiseSpec const &noise, std::uint64_t noise_seed);

struct TrainConfig
{
  double learning_rate = 1e-4;
  std::size_t halve_every_epochs = 20;
  std::size_t epochs = 50;
  std::size_t batch_size = 8;
  Shape patch_shape{31, 64, 64};
  std::size_t patches_per_cube = 1; // fresh crops every epoch
  std::size_t iterations_k = 9;
  AdamConfig adam;
  double clip_norm = 1.0; // <= 0 disables clipping
  std::uint64_t seed = 0;
  NetworkConfig network;
};

struct EpochLog
{
  std::size_t epoch = 0;
  double lr = 0;
  double mean_loss = 0;
  double train_psnr = 0;
};

/// epoch, lr, mean_loss, train_psnr separated by tabs.
std::string format_log_line(EpochLog const &e);

class TrainingError : public std::runtime_error
{
public:
  using std::runtime_error::runtime_error;
};

struct TrainResult
{
  IlrNet net;
  std::vector<EpochLog> log;
};

/// Trains a freshly initialized network. Noise is re-drawn for every patch in every epoch from
/// seeds derived from (noise.seed, epoch, patch index).
TrainResult train(std::vector<HsiCube> const &dataset, NoiseSpec const &noise, TrainConfig const &cfg,
                  std::function<void(EpochLog const &)> const &on_epoch = {});

/// As above, continuing from an existing network.
std::vector<EpochLog> train(IlrNet &net, std::vector<HsiCube> const &dataset, NoiseSpec const &noise,
                            TrainConfig const &cfg, std::function<void(EpochLog const &)> const &on_epoch = {});

} // namespace ilr
