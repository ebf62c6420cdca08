#include "ilr/trainer.hpp"

#include "ilr/metrics.hpp"
#include "ilr/rng.hpp"

#include <cmath>
#include <cstdio>
#include <numeric>

namespace ilr {

namespace {

std::uint64_t derive_seed(std::uint64_t base, std::uint64_t a, std::uint64_t b)
{
  return Rng::mix(base ^ Rng::mix(a * 0x9E3779B97F4A7C15ULL + Rng::mix(b + 1)));
}

} // namespace

LossResult frobenius_loss(std::vector<HsiCube> const &pred, std::vector<HsiCube> const &target)
{
  if (pred.empty() || pred.size() != target.size()) {
    throw ShapeError("frobenius_loss: need equal, nonzero sample counts (" + std::to_string(pred.size()) + " vs " +
                     std::to_string(target.size()) + ")");
  }
  double const n = static_cast<double>(pred.size());
  LossResult r;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    pred[i].require_same_shape(target[i], "frobenius_loss");
    Tensor d = pred[i] - target[i];
    r.value += squared_norm(d);
    d *= 1.0 / n;
    r.grads.push_back(std::move(d));
  }
  r.value /= 2 * n;
  return r;
}

void adam_step(std::vector<ParamRef> const &params, AdamState &state, double lr, AdamConfig const &cfg)
{
  if (state.m.empty()) {
    for (auto const &p : params) {
      state.m.emplace_back(p.value->shape());
      state.v.emplace_back(p.value->shape());
    }
  }
  if (state.m.size() != params.size()) {
    throw std::invalid_argument("adam_step: state holds " + std::to_string(state.m.size()) + " tensors for " +
                                std::to_string(params.size()) + " parameters");
  }
  for (auto const &p : params) {
    if (!p.grad->all_finite()) {
      throw TrainingError("adam_step: non-finite gradient in " + p.name);
    }
  }
  ++state.t;
  double const c1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(state.t));
  double const c2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(state.t));
  for (std::size_t k = 0; k < params.size(); ++k) {
    Tensor &w = *params[k].value;
    Tensor const &g = *params[k].grad;
    Tensor &m = state.m[k];
    Tensor &v = state.v[k];
    for (std::size_t i = 0; i < w.size(); ++i) {
      m[i] = cfg.beta1 * m[i] + (1 - cfg.beta1) * g[i];
      v[i] = cfg.beta2 * v[i] + (1 - cfg.beta2) * g[i] * g[i];
      w[i] -= lr * (m[i] / c1) / (std::sqrt(v[i] / c2) + cfg.epsilon);
    }
  }
}

double scheduled_lr(double lr0, std::size_t epoch, std::size_t halve_every)
{
  if (halve_every == 0) {
    return lr0;
  }
  return lr0 * std::ldexp(1.0, -static_cast<int>(epoch / halve_every));
}

double clip_grad_norm(std::vector<ParamRef> const &params, double max_norm)
{
  double s = 0;
  for (auto const &p : params) {
    s += squared_norm(*p.grad);
  }
  double const norm = std::sqrt(s);
  if (max_norm > 0 && norm > max_norm) {
    double const f = max_norm / norm;
    for (auto const &p : params) {
      *p.grad *= f;
    }
  }
  return norm;
}

std::vector<Patch> extract_patches(HsiCube const &cube, Shape const &patch_shape, std::size_t count,
                                   std::uint64_t seed, std::size_t source)
{
  if (cube.rank() != 3 || patch_shape.size() != 3) {
    throw ShapeError("extract_patches: cube and patch must be 3-D");
  }
  for (std::size_t a = 0; a < 3; ++a) {
    if (patch_shape[a] == 0 || patch_shape[a] > cube.dim(a)) {
      throw ShapeError("extract_patches: cube " + shape_str(cube.shape()) + " smaller than patch " +
                       shape_str(patch_shape));
    }
  }
  Rng rng(seed, source);
  std::vector<Patch> out;
  for (std::size_t n = 0; n < count; ++n) {
    Patch p;
    p.source = source;
    p.band0 = rng.below(cube.dim(0) - patch_shape[0] + 1);
    p.row0 = rng.below(cube.dim(1) - patch_shape[1] + 1);
    p.col0 = rng.below(cube.dim(2) - patch_shape[2] + 1);
    p.clean = HsiCube(patch_shape);
    for (std::size_t b = 0; b < patch_shape[0]; ++b) {
      for (std::size_t r = 0; r < patch_shape[1]; ++r) {
        std::copy_n(&cube(p.band0 + b, p.row0 + r, p.col0), patch_shape[2], &p.clean(b, r, 0));
      }
    }
    out.push_back(std::move(p));
  }
  return out;
}

PatchPair make_patch_pair(Patch const &patch, NoiseSpec const &noise, std::uint64_t noise_seed)
{
  NoiseSpec ns = noise;
  ns.seed = noise_seed;
  return {apply_noise(patch.clean, ns), patch.clean, patch.source, patch.band0, patch.row0, patch.col0, noise_seed};
}

std::string format_log_line(EpochLog const &e)
{
  char buf[160];
  std::snprintf(buf, sizeof buf, "%zu\t%.9g\t%.9g\t%.6f", e.epoch, e.lr, e.mean_loss, e.train_psnr);
  return buf;
}

std::vector<EpochLog> train(IlrNet &net, std::vector<HsiCube> const &dataset, NoiseSpec const &noise,
                            TrainConfig const &cfg, std::function<void(EpochLog const &)> const &on_epoch)
{
  if (dataset.empty()) {
    throw std::invalid_argument("train: empty dataset");
  }
  if (cfg.batch_size == 0 || cfg.patches_per_cube == 0 || cfg.epochs == 0) {
    throw std::invalid_argument("train: batch size, patches per cube and epochs must be positive");
  }
  if (!(cfg.learning_rate >= 0)) {
    throw std::invalid_argument("train: learning rate must be nonnegative");
  }
  noise.validate();
  std::size_t const K = std::min(cfg.iterations_k, net.config().iterations);
  auto params = net.parameters();
  AdamState adam;
  std::vector<EpochLog> log;

  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::vector<Patch> patches;
    for (std::size_t c = 0; c < dataset.size(); ++c) {
      auto ps = extract_patches(dataset[c], cfg.patch_shape, cfg.patches_per_cube, derive_seed(cfg.seed, epoch, 0), c);
      std::move(ps.begin(), ps.end(), std::back_inserter(patches));
    }
    std::vector<std::size_t> order(patches.size());
    std::iota(order.begin(), order.end(), 0);
    Rng shuffle(derive_seed(cfg.seed, epoch, 1));
    for (std::size_t i = order.size(); i > 1; --i) {
      std::swap(order[i - 1], order[shuffle.below(i)]);
    }

    double const lr = scheduled_lr(cfg.learning_rate, epoch, cfg.halve_every_epochs);
    double loss_sum = 0, psnr_sum = 0;
    std::size_t batches = 0;
    for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
      std::size_t const end = std::min(order.size(), start + cfg.batch_size);
      double const n = static_cast<double>(end - start);
      net.zero_grad();
      double batch_loss = 0;
      for (std::size_t s = start; s < end; ++s) {
        PatchPair const p = make_patch_pair(patches[order[s]], noise, derive_seed(noise.seed, epoch, order[s] + 2));
        auto const where = "epoch " + std::to_string(epoch) + ", step " + std::to_string(batches);
        try {
          IlrNet::Cache cache;
          auto const out = net.forward(p.noisy, K, &cache);
          Tensor d = out.x - p.clean;
          double const loss = squared_norm(d) / (2 * n);
          if (!std::isfinite(loss)) {
            throw TrainingError("train: loss is not finite at " + where);
          }
          batch_loss += loss;
          psnr_sum += psnr(out.x, p.clean);
          d *= 1.0 / n;
          net.backward(cache, d);
        } catch (SvdError const &e) {
          throw TrainingError("train: diverged at " + where + ": " + e.what());
        }
      }
      if (cfg.clip_norm > 0) {
        clip_grad_norm(params, cfg.clip_norm);
      }
      adam_step(params, adam, lr, cfg.adam);
      loss_sum += batch_loss;
      ++batches;
    }
    EpochLog e{epoch, lr, loss_sum / static_cast<double>(batches), psnr_sum / static_cast<double>(patches.size())};
    log.push_back(e);
    if (on_epoch) {
      on_epoch(e);
    }
  }
  return log;
}

TrainResult train(std::vector<HsiCube> const &dataset, NoiseSpec const &noise, TrainConfig const &cfg,
                  std::function<void(EpochLog const &)> const &on_epoch)
{
  NetworkConfig nc = cfg.network;
  nc.iterations = cfg.iterations_k;
  TrainResult r{IlrNet(nc), {}};
  r.net.init(cfg.seed);
  r.log = train(r.net, dataset, noise, cfg, on_epoch);
  return r;
}

} // namespace ilr
