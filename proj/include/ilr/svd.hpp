#pragma once

#include "ilr/tensor.hpp"

#include <stdexcept>

namespace ilr {

/// Thin SVD M = U diag(sigma) V^T with r = min(m, n).
/// U is m x r, V is n x r, sigma is descending and nonnegative.
template <typename T>
struct SvdFactors
{
  BasicTensor<T> U;
  std::vector<T> sigma;
  BasicTensor<T> V;

  std::size_t rows() const { return U.dim(0); }
  std::size_t cols() const { return V.dim(0); }
  std::size_t rank_bound() const { return sigma.size(); }
};

class SvdError : public std::runtime_error
{
public:
  using std::runtime_error::runtime_error;
};

inline constexpr int kJacobiMaxSweeps = 100;

/// One-sided (Hestenes) Jacobi SVD. The rotations act on the shorter side, i.e. on the rows of M
/// when m <= n and on its columns otherwise. Arithmetic is carried out in double for both
/// precisions. Columns of U are sign-normalized so their first nonzero entry is positive, which
/// makes the result deterministic.
///
/// Throws SvdError on non-finite input or when the sweep cap is exceeded.
template <typename T>
SvdFactors<T> svd_thin(BasicTensor<T> const &M);

extern template SvdFactors<double> svd_thin(BasicTensor<double> const &);
extern template SvdFactors<float> svd_thin(BasicTensor<float> const &);

/// U diag(sigma) V^T, optionally with a replacement spectrum.
Tensor svd_compose(SvdFactors<double> const &f, std::vector<double> const &sigma);

} // namespace ilr
