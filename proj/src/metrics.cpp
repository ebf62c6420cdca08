#include "ilr/metrics.hpp"

#include <cmath>
#include <cstdio>
#include <limits>
#include <numbers>

namespace ilr {

namespace {

constexpr std::size_t kWin = 11;
constexpr double kWinSigma = 1.5;

void require_cubes(Tensor const &x, Tensor const &ref, char const *what)
{
  if (x.rank() != 3) {
    throw ShapeError(std::string(what) + ": expected a bands x height x width cube, got " + shape_str(x.shape()));
  }
  x.require_same_shape(ref, what);
}

std::vector<double> gaussian_window()
{
  std::vector<double> w(kWin);
  double s = 0;
  for (std::size_t i = 0; i < kWin; ++i) {
    double const d = static_cast<double>(i) - static_cast<double>(kWin / 2);
    w[i] = std::exp(-d * d / (2 * kWinSigma * kWinSigma));
    s += w[i];
  }
  for (auto &v : w) {
    v /= s;
  }
  return w;
}

/// Valid separable filtering of an H x W plane.
std::vector<double> filter_valid(double const *p, std::size_t H, std::size_t W, std::vector<double> const &w)
{
  std::size_t const oh = H - kWin + 1, ow = W - kWin + 1;
  std::vector<double> tmp(H * ow);
  for (std::size_t r = 0; r < H; ++r) {
    for (std::size_t c = 0; c < ow; ++c) {
      double s = 0;
      for (std::size_t k = 0; k < kWin; ++k) {
        s += w[k] * p[r * W + c + k];
      }
      tmp[r * ow + c] = s;
    }
  }
  std::vector<double> out(oh * ow);
  for (std::size_t r = 0; r < oh; ++r) {
    for (std::size_t c = 0; c < ow; ++c) {
      double s = 0;
      for (std::size_t k = 0; k < kWin; ++k) {
        s += w[k] * tmp[(r + k) * ow + c];
      }
      out[r * ow + c] = s;
    }
  }
  return out;
}

} // namespace

std::string MetricReport::to_line() const
{
  char buf[128];
  if (std::isinf(psnr)) {
    std::snprintf(buf, sizeof buf, "psnr=inf ssim=%.6f sam=%.6f", ssim, sam);
  } else {
    std::snprintf(buf, sizeof buf, "psnr=%.6f ssim=%.6f sam=%.6f", psnr, ssim, sam);
  }
  return buf;
}

double psnr(Tensor const &x, Tensor const &ref, double peak)
{
  x.require_same_shape(ref, "psnr");
  if (!(peak > 0)) {
    throw std::invalid_argument("psnr: peak must be positive");
  }
  if (x.empty()) {
    throw ShapeError("psnr: empty input");
  }
  double s = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    double const d = x[i] - ref[i];
    s += d * d;
  }
  double const mse = s / static_cast<double>(x.size());
  if (mse == 0) {
    return std::numeric_limits<double>::infinity();
  }
  return 10.0 * std::log10(peak * peak / mse);
}

double ssim(Tensor const &x, Tensor const &ref)
{
  require_cubes(x, ref, "ssim");
  std::size_t const B = x.dim(0), H = x.dim(1), W = x.dim(2);
  if (H < kWin || W < kWin) {
    throw ShapeError("ssim: spatial extents " + shape_str({H, W}) + " below the 11x11 window");
  }
  double const C1 = 0.01 * 0.01, C2 = 0.03 * 0.03;
  auto const w = gaussian_window();
  std::size_t const plane = H * W;
  std::vector<double> xx(plane), yy(plane), xy(plane);
  double total = 0;
  for (std::size_t b = 0; b < B; ++b) {
    double const *px = x.data() + b * plane;
    double const *py = ref.data() + b * plane;
    for (std::size_t i = 0; i < plane; ++i) {
      xx[i] = px[i] * px[i];
      yy[i] = py[i] * py[i];
      xy[i] = px[i] * py[i];
    }
    auto const mx = filter_valid(px, H, W, w);
    auto const my = filter_valid(py, H, W, w);
    auto const sxx = filter_valid(xx.data(), H, W, w);
    auto const syy = filter_valid(yy.data(), H, W, w);
    auto const sxy = filter_valid(xy.data(), H, W, w);
    double band = 0;
    for (std::size_t i = 0; i < mx.size(); ++i) {
      double const vx = sxx[i] - mx[i] * mx[i];
      double const vy = syy[i] - my[i] * my[i];
      double const cxy = sxy[i] - mx[i] * my[i];
      band += ((2 * mx[i] * my[i] + C1) * (2 * cxy + C2)) /
              ((mx[i] * mx[i] + my[i] * my[i] + C1) * (vx + vy + C2));
    }
    total += band / static_cast<double>(mx.size());
  }
  return total / static_cast<double>(B);
}

double sam(Tensor const &x, Tensor const &ref)
{
  require_cubes(x, ref, "sam");
  std::size_t const B = x.dim(0), P = x.dim(1) * x.dim(2);
  double total = 0;
  std::size_t count = 0;
  for (std::size_t p = 0; p < P; ++p) {
    double d = 0, nx = 0, nr = 0;
    for (std::size_t b = 0; b < B; ++b) {
      double const a = x[b * P + p], r = ref[b * P + p];
      d += a * r;
      nx += a * a;
      nr += r * r;
    }
    if (nx == 0 && nr == 0) {
      continue;
    }
    ++count;
    if (nx == 0 || nr == 0) {
      total += std::numbers::pi / 2;
      continue;
    }
    total += std::acos(std::clamp(d / std::sqrt(nx * nr), -1.0, 1.0));
  }
  return count ? total / static_cast<double>(count) : 0.0;
}

MetricReport evaluate(Tensor const &x, Tensor const &ref)
{
  return {psnr(x, ref), ssim(x, ref), sam(x, ref)};
}

} // namespace ilr
