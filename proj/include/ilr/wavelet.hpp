#pragma once

#include "ilr/tensor.hpp"

namespace ilr {

/// One level of the 2-D Haar decomposition. Each band has the input's leading axes and half its
/// spatial extents.
template <typename T>
struct BasicWaveletQuad
{
  BasicTensor<T> ll, lh, hl, hh;

  Shape const &shape() const { return ll.shape(); }
};

using WaveletQuad = BasicWaveletQuad<double>;

// Analysis kernels, applied as stride-2 cross-correlation on each 2x2 block [[a, b], [c, d]]:
//   LL [[ 1,  1], [ 1, 1]]    LH [[-1, -1], [ 1, 1]]
//   HL [[-1,  1], [-1, 1]]    HH [[ 1, -1], [-1, 1]]
// The 4x4 block matrix H satisfies H H^T = 4 I, so synthesis is H^T / 4.

namespace detail {

inline void check_spatial(Shape const &s, char const *what)
{
  if (s.size() < 2) {
    throw ShapeError(std::string(what) + ": need at least two spatial axes, got " + shape_str(s));
  }
}

inline std::size_t leading_slices(Shape const &s)
{
  std::size_t n = 1;
  for (std::size_t i = 0; i + 2 < s.size(); ++i) {
    n *= s[i];
  }
  return n;
}

template <typename T>
void check_quad(BasicWaveletQuad<T> const &q, char const *what)
{
  check_spatial(q.ll.shape(), what);
  if (q.lh.shape() != q.ll.shape() || q.hl.shape() != q.ll.shape() ||
      q.hh.shape() != q.ll.shape()) {
    throw ShapeError(std::string(what) + ": sub-band shapes differ (LL " + shape_str(q.ll.shape()) +
                     ", LH " + shape_str(q.lh.shape()) + ", HL " + shape_str(q.hl.shape()) +
                     ", HH " + shape_str(q.hh.shape()) + ")");
  }
}

// out = scale * H x per block, over all leading slices.
template <typename T>
BasicWaveletQuad<T> analysis(BasicTensor<T> const &x, T scale, char const *what)
{
  Shape const &s = x.shape();
  check_spatial(s, what);
  std::size_t const H = s[s.size() - 2];
  std::size_t const W = s[s.size() - 1];
  if (H % 2 || W % 2) {
    throw ShapeError(std::string(what) + ": spatial extents " + std::to_string(H) + "x" +
                     std::to_string(W) + " must be even; pad the input first");
  }
  Shape hs = s;
  hs[s.size() - 2] = H / 2;
  hs[s.size() - 1] = W / 2;
  BasicWaveletQuad<T> q{BasicTensor<T>(hs), BasicTensor<T>(hs), BasicTensor<T>(hs),
                        BasicTensor<T>(hs)};
  std::size_t const h = H / 2;
  std::size_t const w = W / 2;
  std::size_t const slices = leading_slices(s);
  for (std::size_t sl = 0; sl < slices; ++sl) {
    T const *in = x.data() + sl * H * W;
    std::size_t const base = sl * h * w;
    for (std::size_t i = 0; i < h; ++i) {
      T const *r0 = in + (2 * i) * W;
      T const *r1 = r0 + W;
      for (std::size_t j = 0; j < w; ++j) {
        T const a = r0[2 * j], b = r0[2 * j + 1], c = r1[2 * j], d = r1[2 * j + 1];
        std::size_t const o = base + i * w + j;
        q.ll[o] = scale * (a + b + c + d);
        q.lh[o] = scale * (-a - b + c + d);
        q.hl[o] = scale * (-a + b - c + d);
        q.hh[o] = scale * (a - b - c + d);
      }
    }
  }
  return q;
}

// out = scale * H^T q per block.
template <typename T>
BasicTensor<T> synthesis(BasicWaveletQuad<T> const &q, T scale, char const *what)
{
  check_quad(q, what);
  Shape const &hs = q.ll.shape();
  std::size_t const h = hs[hs.size() - 2];
  std::size_t const w = hs[hs.size() - 1];
  Shape s = hs;
  s[s.size() - 2] = 2 * h;
  s[s.size() - 1] = 2 * w;
  BasicTensor<T> x(s);
  std::size_t const W = 2 * w;
  std::size_t const slices = leading_slices(hs);
  for (std::size_t sl = 0; sl < slices; ++sl) {
    T *out = x.data() + sl * 4 * h * w;
    std::size_t const base = sl * h * w;
    for (std::size_t i = 0; i < h; ++i) {
      T *r0 = out + (2 * i) * W;
      T *r1 = r0 + W;
      for (std::size_t j = 0; j < w; ++j) {
        std::size_t const o = base + i * w + j;
        T const ll = q.ll[o], lh = q.lh[o], hl = q.hl[o], hh = q.hh[o];
        r0[2 * j] = scale * (ll - lh - hl + hh);
        r0[2 * j + 1] = scale * (ll - lh + hl - hh);
        r1[2 * j] = scale * (ll + lh - hl - hh);
        r1[2 * j + 1] = scale * (ll + lh + hl + hh);
      }
    }
  }
  return x;
}

} // namespace detail

/// Haar analysis over the last two axes. Rejects odd spatial extents.
template <typename T>
BasicWaveletQuad<T> dwt2_haar(BasicTensor<T> const &feat)
{
  return detail::analysis(feat, T{1}, "dwt2_haar");
}

/// Exact inverse of dwt2_haar.
template <typename T>
BasicTensor<T> idwt2_haar(BasicWaveletQuad<T> const &quad)
{
  return detail::synthesis(quad, T{0.25}, "idwt2_haar");
}

/// Adjoint of dwt2_haar: maps sub-band gradients to a feature-map gradient.
template <typename T>
BasicTensor<T> dwt_backward(BasicWaveletQuad<T> const &grad_quad)
{
  return detail::synthesis(grad_quad, T{1}, "dwt_backward");
}

/// Adjoint of idwt2_haar.
template <typename T>
BasicWaveletQuad<T> idwt_backward(BasicTensor<T> const &grad_feat)
{
  return detail::analysis(grad_feat, T{0.25}, "idwt_backward");
}

} // namespace ilr
