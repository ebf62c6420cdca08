#include "ilr/svd.hpp"

#include <limits>
#include <numeric>
#include <type_traits>

namespace ilr {

namespace {

// Rows of a k x len work matrix, contiguous.
struct RowBlock
{
  std::size_t k;
  std::size_t len;
  std::vector<double> a;

  double *row(std::size_t i) { return a.data() + i * len; }
  double const *row(std::size_t i) const { return a.data() + i * len; }
};

double row_dot(double const *x, double const *y, std::size_t n)
{
  double s = 0;
  for (std::size_t i = 0; i < n; ++i) {
    s += x[i] * y[i];
  }
  return s;
}

void rotate_rows(double *p, double *q, std::size_t n, double c, double s)
{
  for (std::size_t i = 0; i < n; ++i) {
    double const x = p[i];
    double const y = q[i];
    p[i] = c * x - s * y;
    q[i] = s * x + c * y;
  }
}

// Fills `row` with a unit vector orthogonal to every row in `basis`.
void complete_orthonormal(std::vector<double const *> const &basis, double *row, std::size_t n)
{
  std::vector<double> cand(n);
  for (std::size_t e = 0; e < n; ++e) {
    std::fill(cand.begin(), cand.end(), 0.0);
    cand[e] = 1.0;
    for (int pass = 0; pass < 2; ++pass) {
      for (auto const *b : basis) {
        double const proj = row_dot(b, cand.data(), n);
        for (std::size_t i = 0; i < n; ++i) {
          cand[i] -= proj * b[i];
        }
      }
    }
    double const nrm = std::sqrt(row_dot(cand.data(), cand.data(), n));
    if (nrm > 0.5) {
      for (std::size_t i = 0; i < n; ++i) {
        row[i] = cand[i] / nrm;
      }
      return;
    }
  }
  throw SvdError("svd_thin: failed to complete an orthonormal basis");
}

} // namespace

template <typename T>
SvdFactors<T> svd_thin(BasicTensor<T> const &M)
{
  if (M.rank() != 2 || M.dim(0) == 0 || M.dim(1) == 0) {
    throw SvdError("svd_thin: expected a non-empty matrix, got shape " + shape_str(M.shape()));
  }
  std::size_t const m = M.dim(0);
  std::size_t const n = M.dim(1);
  std::string const dims = std::to_string(m) + "x" + std::to_string(n);
  if (!M.all_finite()) {
    throw SvdError("svd_thin: non-finite entry in " + dims + " matrix");
  }

  bool const on_rows = m <= n;
  RowBlock A{on_rows ? m : n, on_rows ? n : m, {}};
  A.a.resize(A.k * A.len);
  double frob2 = 0;
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      double const v = static_cast<double>(M(i, j));
      frob2 += v * v;
      if (on_rows) {
        A.a[i * n + j] = v;
      } else {
        A.a[j * m + i] = v;
      }
    }
  }
  std::size_t const k = A.k;
  std::size_t const len = A.len;

  RowBlock J{k, k, std::vector<double>(k * k, 0.0)};
  for (std::size_t i = 0; i < k; ++i) {
    J.a[i * k + i] = 1.0;
  }

  double const frob = std::sqrt(frob2);
  double const floor_rel = std::is_same_v<T, float> ? 1e-7 : 1e-12;
  double const negligible = floor_rel * frob;
  double const tol = std::max(1e-15, std::sqrt(static_cast<double>(len)) *
                                       std::numeric_limits<double>::epsilon());

  bool converged = (k == 1) || frob == 0.0;
  for (int sweep = 0; sweep < kJacobiMaxSweeps && !converged; ++sweep) {
    bool rotated = false;
    for (std::size_t p = 0; p + 1 < k; ++p) {
      for (std::size_t q = p + 1; q < k; ++q) {
        double *ap = A.row(p);
        double *aq = A.row(q);
        double const alpha = row_dot(ap, ap, len);
        double const beta = row_dot(aq, aq, len);
        double const gamma = row_dot(ap, aq, len);
        double const scale = std::sqrt(alpha * beta);
        if (scale <= negligible * negligible || std::abs(gamma) <= tol * scale) {
          continue;
        }
        double const zeta = (beta - alpha) / (2.0 * gamma);
        double const t = std::copysign(1.0, zeta) / (std::abs(zeta) + std::sqrt(1.0 + zeta * zeta));
        double const c = 1.0 / std::sqrt(1.0 + t * t);
        double const s = c * t;
        rotate_rows(ap, aq, len, c, s);
        rotate_rows(J.row(p), J.row(q), k, c, s);
        rotated = true;
      }
    }
    converged = !rotated;
  }
  if (!converged) {
    throw SvdError("svd_thin: Jacobi iteration did not converge within " +
                   std::to_string(kJacobiMaxSweeps) + " sweeps for " + dims + " matrix");
  }

  std::vector<double> norms(k);
  for (std::size_t i = 0; i < k; ++i) {
    norms[i] = std::sqrt(row_dot(A.row(i), A.row(i), len));
  }
  std::vector<std::size_t> order(k);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return norms[a] > norms[b]; });

  // Normalized rows of A become the long-side singular vectors; rows below the
  // negligible level are replaced by an orthonormal completion.
  RowBlock dir{k, len, std::vector<double>(k * len, 0.0)};
  std::vector<double> sig(k, 0.0);
  std::vector<double const *> basis;
  std::vector<std::size_t> deficient;
  for (std::size_t r = 0; r < k; ++r) {
    std::size_t const src = order[r];
    if (norms[src] > negligible && norms[src] > 0.0) {
      sig[r] = norms[src];
      for (std::size_t i = 0; i < len; ++i) {
        dir.row(r)[i] = A.row(src)[i] / norms[src];
      }
      basis.push_back(dir.row(r));
    } else {
      deficient.push_back(r);
    }
  }
  for (auto r : deficient) {
    complete_orthonormal(basis, dir.row(r), len);
    basis.push_back(dir.row(r));
  }

  // short[r] is the singular vector on the short side (a row of J).
  auto short_vec = [&](std::size_t r, std::size_t i) { return J.row(order[r])[i]; };

  SvdFactors<T> out;
  out.U = BasicTensor<T>({m, k});
  out.V = BasicTensor<T>({n, k});
  out.sigma.resize(k);
  for (std::size_t r = 0; r < k; ++r) {
    // U column r and V column r in double, before the sign fix.
    std::vector<double> u(m), v(n);
    if (on_rows) {
      for (std::size_t i = 0; i < m; ++i) {
        u[i] = short_vec(r, i);
      }
      for (std::size_t j = 0; j < n; ++j) {
        v[j] = dir.row(r)[j];
      }
    } else {
      for (std::size_t i = 0; i < m; ++i) {
        u[i] = dir.row(r)[i];
      }
      for (std::size_t j = 0; j < n; ++j) {
        v[j] = short_vec(r, j);
      }
    }
    double sign = 1.0;
    for (double x : u) {
      if (std::abs(x) > 1e-12) {
        sign = x < 0 ? -1.0 : 1.0;
        break;
      }
    }
    for (std::size_t i = 0; i < m; ++i) {
      out.U(i, r) = static_cast<T>(sign * u[i]);
    }
    for (std::size_t j = 0; j < n; ++j) {
      out.V(j, r) = static_cast<T>(sign * v[j]);
    }
    out.sigma[r] = static_cast<T>(sig[r]);
  }
  return out;
}

template SvdFactors<double> svd_thin(BasicTensor<double> const &);
template SvdFactors<float> svd_thin(BasicTensor<float> const &);

Tensor svd_compose(SvdFactors<double> const &f, std::vector<double> const &sigma)
{
  std::size_t const m = f.rows();
  std::size_t const n = f.cols();
  std::size_t const r = f.rank_bound();
  if (sigma.size() != r) {
    throw ShapeError("svd_compose: spectrum length mismatch");
  }
  Tensor out({m, n});
  for (std::size_t k = 0; k < r; ++k) {
    if (sigma[k] == 0.0) {
      continue;
    }
    for (std::size_t i = 0; i < m; ++i) {
      double const us = f.U(i, k) * sigma[k];
      double *row = out.data() + i * n;
      for (std::size_t j = 0; j < n; ++j) {
        row[j] += us * f.V(j, k);
      }
    }
  }
  return out;
}

} // namespace ilr
