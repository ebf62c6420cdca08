#include "ilr/layers.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace ilr {

std::size_t conv_out_extent(std::size_t in, std::size_t k, std::size_t stride, std::size_t pad)
{
  if (stride == 0 || in + 2 * pad < k) {
    throw ShapeError("conv: window " + std::to_string(k) + " does not fit extent " + std::to_string(in) +
                     " with padding " + std::to_string(pad) + " and stride " + std::to_string(stride));
  }
  return (in + 2 * pad - k) / stride + 1;
}

std::size_t deconv_out_extent(std::size_t in, std::size_t k, std::size_t stride, std::size_t pad,
                              std::size_t output_pad)
{
  if (in == 0 || stride == 0 || (in - 1) * stride + k + output_pad <= 2 * pad) {
    throw ShapeError("deconv: extent " + std::to_string(in) + " with kernel " + std::to_string(k) +
                     ", stride " + std::to_string(stride) + ", padding " + std::to_string(pad) +
                     " gives an empty output");
  }
  return (in - 1) * stride + k + output_pad - 2 * pad;
}

namespace {

// Cross-correlation geometry: y[co, o] += w[co, ci, k] * x[ci, o * s + k - p].
struct Geometry
{
  std::size_t ci, co;
  Extent3 in, out, k, s, p;

  std::size_t in_vol() const { return in[0] * in[1] * in[2]; }
  std::size_t out_vol() const { return out[0] * out[1] * out[2]; }
  std::size_t k_vol() const { return k[0] * k[1] * k[2]; }
};

// Output indices o on one axis for which o * s + k - p lands inside [0, in).
struct Range
{
  std::size_t lo, hi;
};

Range valid(std::size_t in, std::size_t out, std::size_t k, std::size_t s, std::size_t p)
{
  std::ptrdiff_t const shift = static_cast<std::ptrdiff_t>(k) - static_cast<std::ptrdiff_t>(p);
  std::ptrdiff_t const ss = static_cast<std::ptrdiff_t>(s);
  std::ptrdiff_t lo = shift >= 0 ? 0 : (-shift + ss - 1) / ss;
  std::ptrdiff_t const last = static_cast<std::ptrdiff_t>(in) - 1 - shift;
  if (last < 0) {
    return {0, 0};
  }
  std::ptrdiff_t hi = std::min<std::ptrdiff_t>(static_cast<std::ptrdiff_t>(out), last / ss + 1);
  if (hi < lo) {
    hi = lo;
  }
  return {static_cast<std::size_t>(lo), static_cast<std::size_t>(hi)};
}

template <typename RowOp>
void for_each_tap(Geometry const &g, RowOp &&op)
{
  for (std::size_t kd = 0; kd < g.k[0]; ++kd) {
    Range const rd = valid(g.in[0], g.out[0], kd, g.s[0], g.p[0]);
    for (std::size_t kh = 0; kh < g.k[1]; ++kh) {
      Range const rh = valid(g.in[1], g.out[1], kh, g.s[1], g.p[1]);
      for (std::size_t kw = 0; kw < g.k[2]; ++kw) {
        Range const rw = valid(g.in[2], g.out[2], kw, g.s[2], g.p[2]);
        if (rd.lo >= rd.hi || rh.lo >= rh.hi || rw.lo >= rw.hi) {
          continue;
        }
        std::size_t const tap = (kd * g.k[1] + kh) * g.k[2] + kw;
        for (std::size_t od = rd.lo; od < rd.hi; ++od) {
          std::size_t const id = od * g.s[0] + kd - g.p[0];
          for (std::size_t oh = rh.lo; oh < rh.hi; ++oh) {
            std::size_t const ih = oh * g.s[1] + kh - g.p[1];
            std::size_t const out_row = (od * g.out[1] + oh) * g.out[2];
            std::size_t const in_row = (id * g.in[1] + ih) * g.in[2];
            // Input column of output column ow is ow * s + kw - p.
            std::ptrdiff_t const col_shift =
              static_cast<std::ptrdiff_t>(kw) - static_cast<std::ptrdiff_t>(g.p[2]);
            op(tap, out_row, in_row, col_shift, rw.lo, rw.hi);
          }
        }
      }
    }
  }
}

void corr_forward(double const *x, double const *w, double *y, Geometry const &g)
{
  std::size_t const sw = g.s[2];
  std::ptrdiff_t const nco = static_cast<std::ptrdiff_t>(g.co);
#pragma omp parallel for schedule(static)
  for (std::ptrdiff_t co = 0; co < nco; ++co) {
    double *yc = y + co * g.out_vol();
    for (std::size_t ci = 0; ci < g.ci; ++ci) {
      double const *xc = x + ci * g.in_vol();
      double const *wk = w + (co * g.ci + ci) * g.k_vol();
      for_each_tap(g, [&](std::size_t tap, std::size_t out_row, std::size_t in_row, std::ptrdiff_t shift,
                          std::size_t lo, std::size_t hi) {
        double const wv = wk[tap];
        if (wv == 0) {
          return;
        }
        double *yr = yc + out_row;
        double const *xr = xc + in_row;
        if (sw == 1) {
          for (std::size_t ow = lo; ow < hi; ++ow) {
            yr[ow] += wv * xr[static_cast<std::ptrdiff_t>(ow) + shift];
          }
        } else {
          for (std::size_t ow = lo; ow < hi; ++ow) {
            yr[ow] += wv * xr[static_cast<std::ptrdiff_t>(ow * sw) + shift];
          }
        }
      });
    }
  }
}

void corr_input_grad(double const *gy, double const *w, double *gx, Geometry const &g)
{
  std::size_t const sw = g.s[2];
  std::ptrdiff_t const nci = static_cast<std::ptrdiff_t>(g.ci);
#pragma omp parallel for schedule(static)
  for (std::ptrdiff_t ci = 0; ci < nci; ++ci) {
    double *gxc = gx + ci * g.in_vol();
    for (std::size_t co = 0; co < g.co; ++co) {
      double const *gyc = gy + co * g.out_vol();
      double const *wk = w + (co * g.ci + ci) * g.k_vol();
      for_each_tap(g, [&](std::size_t tap, std::size_t out_row, std::size_t in_row, std::ptrdiff_t shift,
                          std::size_t lo, std::size_t hi) {
        double const wv = wk[tap];
        if (wv == 0) {
          return;
        }
        double const *gr = gyc + out_row;
        double *xr = gxc + in_row;
        if (sw == 1) {
          for (std::size_t ow = lo; ow < hi; ++ow) {
            xr[static_cast<std::ptrdiff_t>(ow) + shift] += wv * gr[ow];
          }
        } else {
          for (std::size_t ow = lo; ow < hi; ++ow) {
            xr[static_cast<std::ptrdiff_t>(ow * sw) + shift] += wv * gr[ow];
          }
        }
      });
    }
  }
}

void corr_weight_grad(double const *x, double const *gy, double *gw, Geometry const &g)
{
  std::size_t const sw = g.s[2];
  std::ptrdiff_t const nco = static_cast<std::ptrdiff_t>(g.co);
#pragma omp parallel for schedule(static)
  for (std::ptrdiff_t co = 0; co < nco; ++co) {
    double const *gyc = gy + co * g.out_vol();
    for (std::size_t ci = 0; ci < g.ci; ++ci) {
      double const *xc = x + ci * g.in_vol();
      double *wk = gw + (co * g.ci + ci) * g.k_vol();
      for_each_tap(g, [&](std::size_t tap, std::size_t out_row, std::size_t in_row, std::ptrdiff_t shift,
                          std::size_t lo, std::size_t hi) {
        double const *gr = gyc + out_row;
        double const *xr = xc + in_row;
        double acc = 0;
        if (sw == 1) {
          for (std::size_t ow = lo; ow < hi; ++ow) {
            acc += gr[ow] * xr[static_cast<std::ptrdiff_t>(ow) + shift];
          }
        } else {
          for (std::size_t ow = lo; ow < hi; ++ow) {
            acc += gr[ow] * xr[static_cast<std::ptrdiff_t>(ow * sw) + shift];
          }
        }
        wk[tap] += acc;
      });
    }
  }
}

void check_feature(Tensor const &x, std::size_t channels, char const *what)
{
  if (x.rank() != 4) {
    throw ShapeError(std::string(what) + ": expected C x D x H x W input, got " + shape_str(x.shape()));
  }
  if (x.dim(0) != channels) {
    throw ShapeError(std::string(what) + ": input has " + std::to_string(x.dim(0)) + " channels, layer expects " +
                     std::to_string(channels));
  }
}

Extent3 spatial(Tensor const &x) { return {x.dim(1), x.dim(2), x.dim(3)}; }

Extent3 conv_out(Extent3 in, ConvLayer const &p)
{
  Extent3 out{};
  for (int a = 0; a < 3; ++a) {
    out[a] = conv_out_extent(in[a], p.kernel_size[a], p.stride[a], p.padding[a]);
  }
  return out;
}

Extent3 deconv_out(Extent3 in, ConvLayer const &p)
{
  Extent3 out{};
  for (int a = 0; a < 3; ++a) {
    out[a] = deconv_out_extent(in[a], p.kernel_size[a], p.stride[a], p.padding[a], p.output_padding[a]);
  }
  return out;
}

void add_bias(Tensor &y, Tensor const &bias)
{
  std::size_t const vol = y.size() / y.dim(0);
  for (std::size_t c = 0; c < y.dim(0); ++c) {
    double const b = bias[c];
    if (b == 0) {
      continue;
    }
    double *yc = y.data() + c * vol;
    for (std::size_t i = 0; i < vol; ++i) {
      yc[i] += b;
    }
  }
}

Tensor bias_grad(Tensor const &grad_out)
{
  Tensor gb({grad_out.dim(0)});
  std::size_t const vol = grad_out.size() / grad_out.dim(0);
  for (std::size_t c = 0; c < grad_out.dim(0); ++c) {
    double const *g = grad_out.data() + c * vol;
    gb[c] = std::accumulate(g, g + vol, 0.0);
  }
  return gb;
}

void check_grad_shape(Tensor const &grad_out, Shape const &expect, char const *what)
{
  if (grad_out.shape() != expect) {
    throw ShapeError(std::string(what) + ": gradient shape " + shape_str(grad_out.shape()) + " does not match output " +
                     shape_str(expect));
  }
}

} // namespace

void ConvLayer::allocate()
{
  Shape ks = transposed ? Shape{in_channels, out_channels, kernel_size[0], kernel_size[1], kernel_size[2]}
                        : Shape{out_channels, in_channels, kernel_size[0], kernel_size[1], kernel_size[2]};
  kernel = Tensor(ks);
  grad_kernel = Tensor(ks);
  bias = Tensor({out_channels});
  grad_bias = Tensor({out_channels});
}

std::size_t ConvLayer::fan_in() const
{
  return in_channels * kernel_size[0] * kernel_size[1] * kernel_size[2];
}

void ConvLayer::init_uniform(Rng &rng)
{
  allocate();
  double const bound = 1.0 / std::sqrt(static_cast<double>(fan_in()));
  for (std::size_t i = 0; i < kernel.size(); ++i) {
    kernel[i] = rng.uniform(-bound, bound);
  }
}

void ConvLayer::zero_grad()
{
  grad_kernel.fill(0);
  grad_bias.fill(0);
}

ConvLayer make_conv3d(std::size_t in, std::size_t out, Extent3 stride)
{
  ConvLayer l;
  l.in_channels = in;
  l.out_channels = out;
  l.stride = stride;
  l.allocate();
  return l;
}

ConvLayer make_deconv3d(std::size_t in, std::size_t out, Extent3 stride)
{
  ConvLayer l;
  l.in_channels = in;
  l.out_channels = out;
  l.stride = stride;
  l.transposed = true;
  for (int a = 0; a < 3; ++a) {
    l.output_padding[a] = stride[a] - 1;
  }
  l.allocate();
  return l;
}

ConvLayer make_conv2d(std::size_t in, std::size_t out, std::size_t stride)
{
  ConvLayer l;
  l.in_channels = in;
  l.out_channels = out;
  l.kernel_size = {1, 3, 3};
  l.stride = {1, stride, stride};
  l.padding = {0, 1, 1};
  l.allocate();
  return l;
}

Tensor conv3d(Tensor const &x, ConvLayer const &p)
{
  check_feature(x, p.in_channels, "conv3d");
  Extent3 const in = spatial(x);
  Extent3 const out = conv_out(in, p);
  Geometry const g{p.in_channels, p.out_channels, in, out, p.kernel_size, p.stride, p.padding};
  Tensor y({p.out_channels, out[0], out[1], out[2]});
  corr_forward(x.data(), p.kernel.data(), y.data(), g);
  add_bias(y, p.bias);
  return y;
}

ConvGrads conv3d_backward(Tensor const &x, ConvLayer const &p, Tensor const &grad_out)
{
  check_feature(x, p.in_channels, "conv3d_backward");
  Extent3 const in = spatial(x);
  Extent3 const out = conv_out(in, p);
  check_grad_shape(grad_out, {p.out_channels, out[0], out[1], out[2]}, "conv3d_backward");
  Geometry const g{p.in_channels, p.out_channels, in, out, p.kernel_size, p.stride, p.padding};
  ConvGrads r{Tensor(x.shape()), Tensor(p.kernel.shape()), bias_grad(grad_out)};
  corr_input_grad(grad_out.data(), p.kernel.data(), r.grad_x.data(), g);
  corr_weight_grad(x.data(), grad_out.data(), r.grad_kernel.data(), g);
  return r;
}

// The transposed layer is the adjoint of a correlation from its output space (out_channels)
// to its input space (in_channels); that correlation's kernel is stored as-is.
Tensor deconv3d(Tensor const &x, ConvLayer const &p)
{
  check_feature(x, p.in_channels, "deconv3d");
  Extent3 const in = spatial(x);
  Extent3 const out = deconv_out(in, p);
  Geometry const g{p.out_channels, p.in_channels, out, in, p.kernel_size, p.stride, p.padding};
  Tensor y({p.out_channels, out[0], out[1], out[2]});
  corr_input_grad(x.data(), p.kernel.data(), y.data(), g);
  add_bias(y, p.bias);
  return y;
}

ConvGrads deconv3d_backward(Tensor const &x, ConvLayer const &p, Tensor const &grad_out)
{
  check_feature(x, p.in_channels, "deconv3d_backward");
  Extent3 const in = spatial(x);
  Extent3 const out = deconv_out(in, p);
  check_grad_shape(grad_out, {p.out_channels, out[0], out[1], out[2]}, "deconv3d_backward");
  Geometry const g{p.out_channels, p.in_channels, out, in, p.kernel_size, p.stride, p.padding};
  ConvGrads r{Tensor(x.shape()), Tensor(p.kernel.shape()), bias_grad(grad_out)};
  corr_forward(grad_out.data(), p.kernel.data(), r.grad_x.data(), g);
  corr_weight_grad(grad_out.data(), x.data(), r.grad_kernel.data(), g);
  return r;
}

namespace {

Tensor sample_view(Tensor const &x, std::size_t n)
{
  std::size_t const vol = x.dim(1) * x.dim(2) * x.dim(3);
  double const *p = x.data() + n * vol;
  return Tensor({x.dim(1), 1, x.dim(2), x.dim(3)}, std::vector<double>(p, p + vol));
}

void check_2d(Tensor const &x, ConvLayer const &p, char const *what)
{
  if (x.rank() != 4) {
    throw ShapeError(std::string(what) + ": expected N x C x H x W input, got " + shape_str(x.shape()));
  }
  if (p.kernel_size[0] != 1 || p.stride[0] != 1 || p.padding[0] != 0) {
    throw ShapeError(std::string(what) + ": layer is not two-dimensional");
  }
}

} // namespace

Tensor conv2d(Tensor const &x, ConvLayer const &p)
{
  check_2d(x, p, "conv2d");
  std::size_t const N = x.dim(0);
  Tensor out;
  for (std::size_t n = 0; n < N; ++n) {
    Tensor y = conv3d(sample_view(x, n), p);
    if (n == 0) {
      out = Tensor({N, y.dim(0), y.dim(2), y.dim(3)});
    }
    std::copy(y.data(), y.data() + y.size(), out.data() + n * y.size());
  }
  return out;
}

ConvGrads conv2d_backward(Tensor const &x, ConvLayer const &p, Tensor const &grad_out)
{
  check_2d(x, p, "conv2d_backward");
  std::size_t const N = x.dim(0);
  if (grad_out.rank() != 4 || grad_out.dim(0) != N) {
    throw ShapeError("conv2d_backward: gradient shape " + shape_str(grad_out.shape()) + " does not match batch");
  }
  ConvGrads r{Tensor(x.shape()), Tensor(p.kernel.shape()), Tensor({p.out_channels})};
  std::size_t const gvol = grad_out.size() / N;
  for (std::size_t n = 0; n < N; ++n) {
    double const *gp = grad_out.data() + n * gvol;
    Tensor g({grad_out.dim(1), 1, grad_out.dim(2), grad_out.dim(3)}, std::vector<double>(gp, gp + gvol));
    auto gn = conv3d_backward(sample_view(x, n), p, g);
    std::copy(gn.grad_x.data(), gn.grad_x.data() + gn.grad_x.size(), r.grad_x.data() + n * gn.grad_x.size());
    r.grad_kernel += gn.grad_kernel;
    r.grad_bias += gn.grad_bias;
  }
  return r;
}

Tensor relu(Tensor const &x)
{
  Tensor y = x;
  for (std::size_t i = 0; i < y.size(); ++i) {
    y[i] = y[i] > 0 ? y[i] : 0.0;
  }
  return y;
}

Tensor relu_backward(Tensor const &x, Tensor const &grad_out)
{
  x.require_same_shape(grad_out, "relu_backward");
  Tensor g = grad_out;
  for (std::size_t i = 0; i < g.size(); ++i) {
    if (!(x[i] > 0)) {
      g[i] = 0;
    }
  }
  return g;
}

Tensor sigmoid(Tensor const &x)
{
  Tensor y = x;
  for (std::size_t i = 0; i < y.size(); ++i) {
    y[i] = 1.0 / (1.0 + std::exp(-y[i]));
  }
  return y;
}

Tensor sigmoid_backward(Tensor const &y, Tensor const &grad_out)
{
  y.require_same_shape(grad_out, "sigmoid_backward");
  Tensor g = grad_out;
  for (std::size_t i = 0; i < g.size(); ++i) {
    g[i] *= y[i] * (1.0 - y[i]);
  }
  return g;
}

Tensor stack(std::vector<Tensor const *> const &parts)
{
  if (parts.empty()) {
    throw ShapeError("stack: no inputs");
  }
  Shape s = parts.front()->shape();
  for (auto const *p : parts) {
    parts.front()->require_same_shape(*p, "stack");
  }
  s.insert(s.begin(), parts.size());
  Tensor out(s);
  std::size_t const n = parts.front()->size();
  for (std::size_t i = 0; i < parts.size(); ++i) {
    std::copy(parts[i]->data(), parts[i]->data() + n, out.data() + i * n);
  }
  return out;
}

std::size_t reflect_index(std::ptrdiff_t i, std::size_t n)
{
  if (n == 1) {
    return 0;
  }
  std::ptrdiff_t const period = 2 * (static_cast<std::ptrdiff_t>(n) - 1);
  std::ptrdiff_t k = i % period;
  if (k < 0) {
    k += period;
  }
  if (k >= static_cast<std::ptrdiff_t>(n)) {
    k = period - k;
  }
  return static_cast<std::size_t>(k);
}

std::vector<std::size_t> reflect_pad_map(std::size_t n, std::size_t target, std::size_t before)
{
  std::vector<std::size_t> map(target);
  for (std::size_t i = 0; i < target; ++i) {
    map[i] = reflect_index(static_cast<std::ptrdiff_t>(i) - static_cast<std::ptrdiff_t>(before), n);
  }
  return map;
}

std::vector<std::size_t> crop_map(std::size_t offset, std::size_t len)
{
  std::vector<std::size_t> map(len);
  std::iota(map.begin(), map.end(), offset);
  return map;
}

Tensor spatial_gather(Tensor const &x, std::vector<std::size_t> const &rows, std::vector<std::size_t> const &cols)
{
  if (x.rank() < 2) {
    throw ShapeError("spatial_gather: need two spatial axes");
  }
  Shape const &s = x.shape();
  std::size_t const H = s[s.size() - 2], W = s[s.size() - 1];
  for (auto r : rows) {
    if (r >= H) {
      throw ShapeError("spatial_gather: row index out of range");
    }
  }
  for (auto c : cols) {
    if (c >= W) {
      throw ShapeError("spatial_gather: column index out of range");
    }
  }
  Shape os = s;
  os[s.size() - 2] = rows.size();
  os[s.size() - 1] = cols.size();
  Tensor out(os);
  std::size_t const slices = x.size() / (H * W);
  std::size_t const oh = rows.size(), ow = cols.size();
  for (std::size_t sl = 0; sl < slices; ++sl) {
    double const *in = x.data() + sl * H * W;
    double *o = out.data() + sl * oh * ow;
    for (std::size_t i = 0; i < oh; ++i) {
      double const *src = in + rows[i] * W;
      for (std::size_t j = 0; j < ow; ++j) {
        o[i * ow + j] = src[cols[j]];
      }
    }
  }
  return out;
}

Tensor spatial_gather_backward(Shape const &in_shape, std::vector<std::size_t> const &rows,
                               std::vector<std::size_t> const &cols, Tensor const &grad_out)
{
  Tensor gx(in_shape);
  std::size_t const H = in_shape[in_shape.size() - 2], W = in_shape[in_shape.size() - 1];
  std::size_t const oh = rows.size(), ow = cols.size();
  std::size_t const slices = gx.size() / (H * W);
  if (grad_out.size() != slices * oh * ow) {
    throw ShapeError("spatial_gather_backward: gradient shape " + shape_str(grad_out.shape()) + " does not match");
  }
  for (std::size_t sl = 0; sl < slices; ++sl) {
    double *g = gx.data() + sl * H * W;
    double const *o = grad_out.data() + sl * oh * ow;
    for (std::size_t i = 0; i < oh; ++i) {
      double *dst = g + rows[i] * W;
      for (std::size_t j = 0; j < ow; ++j) {
        dst[cols[j]] += o[i * ow + j];
      }
    }
  }
  return gx;
}

GradCheckReport grad_check(std::function<double(Tensor const &)> const &f, Tensor const &x, Tensor const &analytic,
                           GradCheckOptions const &opts)
{
  x.require_same_shape(analytic, "grad_check");
  std::vector<std::size_t> coords(x.size());
  std::iota(coords.begin(), coords.end(), 0);
  if (opts.max_coords > 0 && opts.max_coords < coords.size()) {
    Rng rng(opts.seed, 0x67c);
    for (std::size_t i = 0; i < opts.max_coords; ++i) {
      std::swap(coords[i], coords[i + rng.below(coords.size() - i)]);
    }
    coords.resize(opts.max_coords);
    std::sort(coords.begin(), coords.end());
  }
  Tensor probe = x;
  std::vector<double> numeric(coords.size());
  double scale = 0;
  for (std::size_t k = 0; k < coords.size(); ++k) {
    std::size_t const i = coords[k];
    double const orig = probe[i];
    probe[i] = orig + opts.step;
    double const fp = f(probe);
    probe[i] = orig - opts.step;
    double const fm = f(probe);
    probe[i] = orig;
    numeric[k] = (fp - fm) / (2 * opts.step);
    scale = std::max(scale, std::abs(numeric[k]));
  }
  scale = std::max(scale, 1e-12);
  GradCheckReport rep;
  rep.coords_checked = coords.size();
  for (std::size_t k = 0; k < coords.size(); ++k) {
    double const e = std::abs(analytic[coords[k]] - numeric[k]) / scale;
    if (!(e <= rep.max_rel_error)) {
      rep.max_rel_error = e;
      rep.worst_index = coords[k];
    }
  }
  rep.passed = std::isfinite(rep.max_rel_error) && rep.max_rel_error <= opts.tolerance;
  return rep;
}

} // namespace ilr
