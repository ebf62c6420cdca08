#include "ilr/lowrank.hpp"

#include <limits>
#include <stdexcept>

namespace ilr {

double taylor_K(double sigma_i, double sigma_j)
{
  if (sigma_i < 0 || sigma_j < 0) {
    throw std::domain_error("taylor_K: singular values must be nonnegative");
  }
  if (sigma_i == 0 && sigma_j == 0) {
    throw std::domain_error("taylor_K: both singular values are zero");
  }
  bool const positive = sigma_i >= sigma_j;
  double const hi = positive ? sigma_i : sigma_j;
  double const lo = positive ? sigma_j : sigma_i;
  double const ratio = lo / hi;
  double series = 0;
  double term = 1;
  for (int k = 0; k <= 9; ++k) {
    series += term;
    term *= ratio;
  }
  double const v = series / ((sigma_i + sigma_j) * hi);
  return positive ? v : -v;
}

double exact_K(double sigma_i, double sigma_j)
{
  double const den = (sigma_i - sigma_j) * (sigma_i + sigma_j);
  if (den == 0) {
    return std::numeric_limits<double>::infinity();
  }
  return 1.0 / den;
}

Tensor backward_kernel_matrix(std::vector<double> const &sigma, KernelMode mode)
{
  std::size_t const r = sigma.size();
  Tensor K({r, r});
  for (std::size_t i = 0; i < r; ++i) {
    for (std::size_t j = 0; j < r; ++j) {
      if (i == j || (sigma[i] == 0 && sigma[j] == 0)) {
        continue;
      }
      K(i, j) = mode == KernelMode::taylor ? taylor_K(sigma[i], sigma[j])
                                           : exact_K(sigma[i], sigma[j]);
    }
  }
  return K;
}

std::pair<Tensor, SvtCache> svt_adaptive_forward(Tensor const &W, ThresholdParam d)
{
  if (!W.all_finite()) {
    throw std::domain_error("svt_adaptive_forward: non-finite input " + shape_str(W.shape()));
  }
  SvtCache cache;
  cache.factors = svd_thin(W);
  cache.d = d.d;
  cache.rows = W.dim(0);
  cache.cols = W.dim(1);
  auto const &sigma = cache.factors.sigma;
  cache.threshold = d.fraction() * sigma.front();
  cache.kept.resize(sigma.size());
  std::vector<double> shrunk(sigma.size(), 0.0);
  for (std::size_t i = 0; i < sigma.size(); ++i) {
    double const v = sigma[i] - cache.threshold;
    cache.kept[i] = v > 0;
    shrunk[i] = cache.kept[i] ? v : 0.0;
  }
  return {svd_compose(cache.factors, shrunk), std::move(cache)};
}

namespace {

// A B
Tensor mul(Tensor const &A, Tensor const &B)
{
  std::size_t const a = A.dim(0), k = A.dim(1), b = B.dim(1);
  Tensor C({a, b});
  for (std::size_t i = 0; i < a; ++i) {
    for (std::size_t p = 0; p < k; ++p) {
      double const x = A(i, p);
      if (x == 0) {
        continue;
      }
      double const *brow = B.data() + p * b;
      double *crow = C.data() + i * b;
      for (std::size_t j = 0; j < b; ++j) {
        crow[j] += x * brow[j];
      }
    }
  }
  return C;
}

// A^T B
Tensor mul_tn(Tensor const &A, Tensor const &B)
{
  std::size_t const k = A.dim(0), a = A.dim(1), b = B.dim(1);
  Tensor C({a, b});
  for (std::size_t p = 0; p < k; ++p) {
    double const *arow = A.data() + p * a;
    double const *brow = B.data() + p * b;
    for (std::size_t i = 0; i < a; ++i) {
      double const x = arow[i];
      double *crow = C.data() + i * b;
      for (std::size_t j = 0; j < b; ++j) {
        crow[j] += x * brow[j];
      }
    }
  }
  return C;
}

// A B^T
Tensor mul_nt(Tensor const &A, Tensor const &B)
{
  std::size_t const a = A.dim(0), k = A.dim(1), b = B.dim(0);
  Tensor C({a, b});
  for (std::size_t i = 0; i < a; ++i) {
    double const *arow = A.data() + i * k;
    for (std::size_t j = 0; j < b; ++j) {
      double const *brow = B.data() + j * k;
      double s = 0;
      for (std::size_t p = 0; p < k; ++p) {
        s += arow[p] * brow[p];
      }
      C(i, j) = s;
    }
  }
  return C;
}

} // namespace

SvtGrad svt_adaptive_backward(SvtCache const &cache, Tensor const &grad_out, SvtOptions const &opts)
{
  if (grad_out.shape() != Shape{cache.rows, cache.cols}) {
    throw ShapeError("svt_adaptive_backward: gradient shape " + shape_str(grad_out.shape()) +
                     " does not match forward output " + shape_str({cache.rows, cache.cols}));
  }
  auto const &U = cache.factors.U;
  auto const &V = cache.factors.V;
  auto const &sigma = cache.factors.sigma;
  std::size_t const r = sigma.size();
  std::size_t const m = cache.rows;
  std::size_t const n = cache.cols;
  double const s = sigmoid(cache.d);

  std::vector<double> f(r, 0.0);
  for (std::size_t i = 0; i < r; ++i) {
    f[i] = cache.kept[i] ? sigma[i] - cache.threshold : 0.0;
  }

  // A = U^T G V; its diagonal is the projection of G on each rank-one term.
  Tensor const UtG = mul_tn(U, grad_out); // r x n
  Tensor const A = mul(UtG, V);            // r x r

  double kept_sum = 0;
  for (std::size_t i = 0; i < r; ++i) {
    if (cache.kept[i]) {
      kept_sum += A(i, i);
    }
  }

  SvtGrad out;
  out.grad_d = -sigma.front() * s * (1.0 - s) * kept_sum;

  std::vector<double> sigma_bar(r, 0.0);
  for (std::size_t i = 0; i < r; ++i) {
    sigma_bar[i] = cache.kept[i] ? A(i, i) : 0.0;
  }
  if (opts.threshold_tracks_sigma1 && r > 0) {
    sigma_bar[0] -= s * kept_sum;
  }

  Tensor const K = backward_kernel_matrix(sigma, opts.kernel);
  Tensor inner({r, r});
  if (opts.form == BackwardForm::complete) {
    for (std::size_t i = 0; i < r; ++i) {
      for (std::size_t j = 0; j < r; ++j) {
        if (i == j) {
          inner(i, i) = sigma_bar[i];
          continue;
        }
        double const num =
          A(i, j) * (f[j] * sigma[j] - f[i] * sigma[i]) + A(j, i) * (sigma[i] * f[j] - sigma[j] * f[i]);
        if (num != 0) {
          inner(i, j) = -K(i, j) * num;
        }
      }
    }
  } else {
    // P = V^T dL/dV with dL/dV = G^T U diag(f), i.e. P = A^T diag(f).
    Tensor KP({r, r});
    for (std::size_t i = 0; i < r; ++i) {
      for (std::size_t j = 0; j < r; ++j) {
        KP(i, j) = K(j, i) * A(j, i) * f[j];
      }
    }
    for (std::size_t i = 0; i < r; ++i) {
      for (std::size_t j = 0; j < r; ++j) {
        double const sym = 0.5 * (KP(i, j) + KP(j, i));
        inner(i, j) = 2.0 * sigma[i] * sym + (i == j ? sigma_bar[i] : 0.0);
      }
    }
  }

  out.grad_in = mul_nt(mul(U, inner), V); // m x n

  if (opts.form == BackwardForm::complete) {
    std::vector<double> ratio(r, 0.0);
    for (std::size_t i = 0; i < r; ++i) {
      ratio[i] = (f[i] != 0 && sigma[i] > 0) ? f[i] / sigma[i] : 0.0;
    }
    // U diag(f/s) U^T G (I - V V^T); vanishes when V is square.
    if (r < n) {
      Tensor P = UtG;                   // r x n
      Tensor const PV = mul(P, V);      // r x r
      P -= mul_nt(PV, V);               // r x n
      for (std::size_t i = 0; i < r; ++i) {
        for (std::size_t j = 0; j < n; ++j) {
          P(i, j) *= ratio[i];
        }
      }
      out.grad_in += mul(U, P);
    }
    // (I - U U^T) G V diag(f/s) V^T; vanishes when U is square.
    if (r < m) {
      Tensor Q = mul(grad_out, V); // m x r
      Q -= mul(U, mul_tn(U, Q));
      for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t j = 0; j < r; ++j) {
          Q(i, j) *= ratio[j];
        }
      }
      out.grad_in += mul_nt(Q, V);
    }
  }
  return out;
}

std::pair<Tensor, RmmCache> rmm_apply(Tensor const &feat, ThresholdParam d)
{
  if (feat.rank() != 4) {
    throw ShapeError("rmm_apply: expected C x B x H x W feature map, got " + shape_str(feat.shape()));
  }
  auto quad = dwt2_haar(feat);
  std::size_t const C = feat.dim(0);
  std::size_t const B = feat.dim(1);
  std::size_t const cols = quad.ll.dim(2) * quad.ll.dim(3);
  RmmCache cache;
  cache.input_shape = feat.shape();
  cache.channels.reserve(C);
  for (std::size_t c = 0; c < C; ++c) {
    double *ll = quad.ll.data() + c * B * cols;
    Tensor W({B, cols}, std::vector<double>(ll, ll + B * cols));
    auto [shrunk, svt] = svt_adaptive_forward(W, d);
    std::copy(shrunk.data(), shrunk.data() + B * cols, ll);
    cache.channels.push_back(std::move(svt));
  }
  return {idwt2_haar(quad), std::move(cache)};
}

RmmGrad rmm_backward(RmmCache const &cache, Tensor const &grad_out, SvtOptions const &opts)
{
  if (grad_out.shape() != cache.input_shape) {
    throw ShapeError("rmm_backward: gradient shape " + shape_str(grad_out.shape()) +
                     " does not match input " + shape_str(cache.input_shape));
  }
  auto gq = idwt_backward(grad_out);
  std::size_t const B = cache.input_shape[1];
  std::size_t const cols = gq.ll.dim(2) * gq.ll.dim(3);
  RmmGrad out;
  for (std::size_t c = 0; c < cache.channels.size(); ++c) {
    double *ll = gq.ll.data() + c * B * cols;
    Tensor G({B, cols}, std::vector<double>(ll, ll + B * cols));
    auto g = svt_adaptive_backward(cache.channels[c], G, opts);
    std::copy(g.grad_in.data(), g.grad_in.data() + B * cols, ll);
    out.grad_d += g.grad_d;
  }
  out.grad_in = dwt_backward(gq);
  return out;
}

} // namespace ilr
