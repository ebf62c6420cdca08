#pragma once

#include "ilr/svd.hpp"
#include "ilr/tensor.hpp"
#include "ilr/wavelet.hpp"

#include <utility>

namespace ilr {

inline double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

/// Learnable threshold logit. The effective threshold is sigmoid(d) * sigma_1.
struct ThresholdParam
{
  double d = -4.0;

  double fraction() const { return sigmoid(d); }
};

/// How the off-diagonal kernel K_ij = 1 / (sigma_i^2 - sigma_j^2) is evaluated in the backward
/// pass. `taylor` uses the 9th-order truncated geometric series, which stays finite when singular
/// values coincide; `exact` is the closed form.
enum class KernelMode { taylor, exact };

/// `complete` is the full thin-SVD adjoint (U and V paths plus the off-span projections).
/// `paper_reduced` keeps only the V path: U {2 Sigma (K^T o (V^T dL/dV))_sym + (dL/dSigma)_diag} V^T.
enum class BackwardForm { complete, paper_reduced };

struct SvtOptions
{
  KernelMode kernel = KernelMode::taylor;
  BackwardForm form = BackwardForm::complete;
  /// Differentiate sigma_1 inside the threshold. Off means sigma_1 is a forward-pass constant.
  bool threshold_tracks_sigma1 = true;
};

struct SvtCache
{
  SvdFactors<double> factors;
  double d = 0;
  double threshold = 0;
  std::size_t rows = 0, cols = 0;
  std::vector<bool> kept; // sigma_i - threshold > 0; monotone in i
};

struct SvtGrad
{
  Tensor grad_in;
  double grad_d = 0;
};

/// K_ij approximated by (1/(s_i+s_j)) (1/s_max) sum_{k=0}^{9} (s_min/s_max)^k, negated when
/// s_i < s_j. Equal values take the positive branch. Throws if both are zero.
double taylor_K(double sigma_i, double sigma_j);

/// 1 / (s_i^2 - s_j^2); infinite for equal values.
double exact_K(double sigma_i, double sigma_j);

/// The r x r kernel matrix used by the backward pass (zero diagonal, zero where both values vanish).
Tensor backward_kernel_matrix(std::vector<double> const &sigma, KernelMode mode);

/// sum_i relu(sigma_i - sigmoid(d) sigma_1) u_i v_i^T
std::pair<Tensor, SvtCache> svt_adaptive_forward(Tensor const &W, ThresholdParam d);

SvtGrad svt_adaptive_backward(SvtCache const &cache, Tensor const &grad_out,
                              SvtOptions const &opts = {});

struct RmmCache
{
  Shape input_shape;
  std::vector<SvtCache> channels;
};

struct RmmGrad
{
  Tensor grad_in;
  double grad_d = 0;
};

/// Rank minimization on a C x B x H x W feature map: Haar analysis, per-channel SVT of the
/// B x (H W / 4) low-frequency matrix with one shared threshold, then synthesis with the
/// untouched high-frequency bands.
std::pair<Tensor, RmmCache> rmm_apply(Tensor const &feat, ThresholdParam d);

RmmGrad rmm_backward(RmmCache const &cache, Tensor const &grad_out, SvtOptions const &opts = {});

} // namespace ilr
