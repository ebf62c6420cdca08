#include "ilr/diagnostics.hpp"

#include "ilr/layers.hpp"
#include "ilr/lowrank.hpp"
#include "ilr/metrics.hpp"
#include "ilr/network.hpp"
#include "ilr/rng.hpp"
#include "ilr/wavelet.hpp"

#include <cmath>
#include <functional>
#include <limits>
#include <cstdio>
#include <numbers>

namespace ilr {

namespace {

Tensor uniform_tensor(Shape shape, Rng &rng, double lo = -1, double hi = 1)
{
  Tensor t(std::move(shape));
  for (double &v : t.span()) {
    v = rng.uniform(lo, hi);
  }
  return t;
}

CheckResult from_report(std::string name, GradCheckReport const &r, double tol)
{
  return {std::move(name), r.passed, r.max_rel_error, tol};
}

CheckResult scalar_check(std::string name, double analytic, double numeric, double tol)
{
  double const err = std::abs(analytic - numeric) / std::max({std::abs(analytic), std::abs(numeric), 1e-8});
  return {std::move(name), err <= tol, err, tol};
}

// m x n matrix with the given spectrum and random singular vectors
Tensor with_spectrum(std::size_t m, std::size_t n, std::vector<double> const &sigma, Rng &rng)
{
  return svd_compose(svd_thin(uniform_tensor({m, n}, rng)), sigma);
}

bool well_separated(SvtCache const &c)
{
  auto const &s = c.factors.sigma;
  for (std::size_t i = 0; i + 1 < s.size(); ++i) {
    if (s[i] - s[i + 1] < 1e-3 * s[0]) {
      return false;
    }
  }
  for (double v : s) {
    if (std::abs(v - c.threshold) <= 1e-3 * s[0]) {
      return false;
    }
  }
  return true;
}

template <typename Fwd, typename Bwd>
void layer_suite(std::string const &name, ConvLayer layer, Tensor const &x, Fwd fwd, Bwd bwd, Rng &rng, double tol,
                 std::vector<CheckResult> &out)
{
  layer.kernel = uniform_tensor(layer.kernel.shape(), rng);
  layer.bias = uniform_tensor(layer.bias.shape(), rng);
  Tensor const R = uniform_tensor(fwd(x, layer).shape(), rng);
  auto const g = bwd(x, layer, R);
  GradCheckOptions o;
  o.tolerance = tol;
  out.push_back(from_report(name + ".input", grad_check([&](Tensor const &v) { return dot(R, fwd(v, layer)); }, x, g.grad_x, o), tol));
  out.push_back(from_report(name + ".kernel",
                            grad_check(
                              [&](Tensor const &k) {
                                ConvLayer l = layer;
                                l.kernel = k;
                                return dot(R, fwd(x, l));
                              },
                              layer.kernel, g.grad_kernel, o),
                            tol));
  out.push_back(from_report(name + ".bias",
                            grad_check(
                              [&](Tensor const &b) {
                                ConvLayer l = layer;
                                l.bias = b;
                                return dot(R, fwd(x, l));
                              },
                              layer.bias, g.grad_bias, o),
                            tol));
}

// Central differences at steps 1e-5, 1e-6 and 1e-7 on 24 sampled coordinates; a coordinate's
// error is its distance to the closest of the three, relative to the largest gradient entry of
// the tensor. Deep relu graphs put some coordinates within
// a large step of a kink, and tiny gradients drown in loss roundoff at a small one.
CheckResult multi_step_check(std::string name, std::function<double(Tensor const &)> const &f, Tensor x,
                             Tensor const &analytic, double tol, std::uint64_t seed)
{
  std::vector<std::size_t> coords(x.size());
  for (std::size_t i = 0; i < coords.size(); ++i) {
    coords[i] = i;
  }
  Rng pick(seed, 4);
  for (std::size_t i = coords.size(); i > 1; --i) {
    std::swap(coords[i - 1], coords[pick.below(i)]);
  }
  coords.resize(std::min<std::size_t>(coords.size(), 24));
  double scale = 1e-300, worst = 0;
  for (double v : analytic.values()) {
    scale = std::max(scale, std::abs(v));
  }
  std::vector<double> errs;
  for (std::size_t const i : coords) {
    double const orig = x[i];
    double best = std::numeric_limits<double>::infinity();
    for (double const h : {1e-5, 1e-6, 1e-7}) {
      x[i] = orig + h;
      double const fp = f(x);
      x[i] = orig - h;
      double const fm = f(x);
      x[i] = orig;
      double const num = (fp - fm) / (2 * h);
      if (h == 1e-6) {
        scale = std::max(scale, std::abs(num));
      }
      best = std::min(best, std::abs(num - analytic[i]));
    }
    errs.push_back(best);
  }
  for (double e : errs) {
    worst = std::max(worst, e / scale);
  }
  return {std::move(name), worst <= tol, worst, tol};
}

} // namespace

std::string format_check(CheckResult const &r)
{
  char buf[256];
  std::snprintf(buf, sizeof buf, "%s %s error=%.3e limit=%.1e", r.passed ? "PASS" : "FAIL", r.name.c_str(), r.value,
                r.limit);
  return buf;
}

bool all_passed(std::vector<CheckResult> const &results)
{
  for (auto const &r : results) {
    if (!r.passed) {
      return false;
    }
  }
  return !results.empty();
}

std::vector<CheckResult> gradcheck_rmm(double tolerance, std::uint64_t seed)
{
  std::vector<CheckResult> out;
  Rng rng(seed, 0);
  GradCheckOptions o;
  o.tolerance = tolerance;
  double const h = 1e-5;

  auto check_svt = [&](std::string const &name, Tensor const &W, double d, KernelMode kernel) {
    auto const [y, cache] = svt_adaptive_forward(W, {d});
    Tensor const R = uniform_tensor(y.shape(), rng);
    auto const g = svt_adaptive_backward(cache, R, {kernel, BackwardForm::complete, true});
    auto loss = [&](Tensor const &v, double dv) { return dot(R, svt_adaptive_forward(v, {dv}).first); };
    out.push_back(from_report(name + ".input", grad_check([&](Tensor const &v) { return loss(v, d); }, W, g.grad_in, o),
                              tolerance));
    out.push_back(scalar_check(name + ".d", g.grad_d, (loss(W, d + h) - loss(W, d - h)) / (2 * h), tolerance));
  };
  auto check_rmm = [&](std::string const &name, Tensor const &x, double d, KernelMode kernel) {
    auto const [y, cache] = rmm_apply(x, {d});
    Tensor const R = uniform_tensor(y.shape(), rng);
    auto const g = rmm_backward(cache, R, {kernel, BackwardForm::complete, true});
    auto loss = [&](Tensor const &v, double dv) { return dot(R, rmm_apply(v, {dv}).first); };
    out.push_back(from_report(name + ".input", grad_check([&](Tensor const &v) { return loss(v, d); }, x, g.grad_in, o),
                              tolerance));
    out.push_back(scalar_check(name + ".d", g.grad_d, (loss(x, d + h) - loss(x, d - h)) / (2 * h), tolerance));
  };

  // Taylor kernel: truncation error is (s_j / s_i)^10, so spectra fall by 4x per step
  for (auto [m, n] : {std::pair<std::size_t, std::size_t>{6, 12}, {12, 6}, {7, 7}}) {
    std::vector<double> sigma;
    for (std::size_t i = 0; i < std::min(m, n); ++i) {
      sigma.push_back(3.0 * std::pow(0.25, static_cast<double>(i)));
    }
    check_svt("svt.taylor." + std::to_string(m) + "x" + std::to_string(n), with_spectrum(m, n, sigma, rng), -2.5,
              KernelMode::taylor);
  }
  {
    Shape const hs{2, 4, 4, 4};
    WaveletQuad q{Tensor(hs), uniform_tensor(hs, rng, -0.3, 0.3), uniform_tensor(hs, rng, -0.3, 0.3),
                  uniform_tensor(hs, rng, -0.3, 0.3)};
    for (std::size_t c = 0; c < 2; ++c) {
      Tensor const ll = with_spectrum(4, 16, {4.0, 1.0, 0.25, 0.0625}, rng);
      std::copy(ll.data(), ll.data() + ll.size(), q.ll.data() + c * ll.size());
    }
    check_rmm("rmm.taylor.2x4x8x8", idwt2_haar(q), -1.7, KernelMode::taylor);
  }

  // exact kernel on random inputs with separated spectra
  std::size_t found = 0;
  for (int attempt = 0; attempt < 200 && found < 2; ++attempt) {
    Tensor const W = uniform_tensor({8, 8}, rng);
    if (well_separated(svt_adaptive_forward(W, {-1.0}).second)) {
      check_svt("svt.exact.8x8." + std::to_string(found++), W, -1.0, KernelMode::exact);
    }
  }
  for (int attempt = 0; attempt < 200 && found < 4; ++attempt) {
    Tensor const x = uniform_tensor({2, 4, 8, 8}, rng);
    bool ok = true;
    for (auto const &ch : rmm_apply(x, {-1.0}).second.channels) {
      ok = ok && well_separated(ch);
    }
    if (ok) {
      check_rmm("rmm.exact.2x4x8x8." + std::to_string(found++ - 2), x, -1.0, KernelMode::exact);
    }
  }
  if (found != 4) {
    out.push_back({"rmm.sampling", false, 0, 0});
  }
  return out;
}

std::vector<CheckResult> gradcheck_layers(double tolerance, std::uint64_t seed)
{
  std::vector<CheckResult> out;
  Rng rng(seed, 1);
  layer_suite("conv3d.s122", make_conv3d(2, 3, {1, 2, 2}), uniform_tensor({2, 3, 6, 6}, rng), conv3d, conv3d_backward,
              rng, tolerance, out);
  layer_suite("conv3d.s111", make_conv3d(3, 2), uniform_tensor({3, 4, 5, 3}, rng), conv3d, conv3d_backward, rng,
              tolerance, out);
  layer_suite("deconv3d", make_deconv3d(3, 2), uniform_tensor({3, 2, 3, 4}, rng), deconv3d, deconv3d_backward, rng,
              tolerance, out);
  layer_suite("conv2d.s2", make_conv2d(2, 3, 2), uniform_tensor({3, 2, 9, 8}, rng), conv2d, conv2d_backward, rng,
              tolerance, out);

  GradCheckOptions o;
  o.tolerance = tolerance;
  Tensor x = uniform_tensor({3, 4, 5}, rng);
  for (double &v : x.span()) {
    if (std::abs(v) < 1e-2) {
      v += 0.05; // keep away from the relu kink
    }
  }
  Tensor const R = uniform_tensor(x.shape(), rng);
  out.push_back(from_report("relu", grad_check([&](Tensor const &v) { return dot(R, relu(v)); }, x, relu_backward(x, R), o),
                            tolerance));
  out.push_back(from_report("sigmoid",
                            grad_check([&](Tensor const &v) { return dot(R, sigmoid(v)); }, x,
                                       sigmoid_backward(sigmoid(x), R), o),
                            tolerance));
  return out;
}

std::vector<CheckResult> gradcheck_network(double tolerance, std::vector<std::uint64_t> const &seeds)
{
  std::vector<CheckResult> out;
  for (std::uint64_t const seed : seeds) {
    std::string const tag = "network.s" + std::to_string(seed) + ".";
    IlrNet net(NetworkConfig::micro(2));
    net.init(seed + 1);
    Rng br(99);
    for (auto &p : net.parameters()) {
      if (p.name.ends_with(".bias")) {
        for (double &v : p.value->span()) {
          v = br.uniform(-0.1, 0.1);
        }
      }
    }
    net.coarse().set_threshold_logit(-1.0);
    Rng rng(seed, 2);
    Tensor y = uniform_tensor({8, 16, 16}, rng, 0, 1);
    Tensor const target = uniform_tensor({8, 16, 16}, rng, 0, 1);
    std::size_t const K = 2;
    auto loss = [&](Tensor const &v) {
      Tensor d = net.forward(v, K).x - target;
      return 0.5 * squared_norm(d);
    };

    IlrNet::Cache cache;
    auto const fwd = net.forward(y, K, &cache);
    net.zero_grad();
    Tensor const gy = net.backward(cache, fwd.x - target);

    out.push_back(multi_step_check(tag + "input", loss, y, gy, tolerance, seed));
    for (auto const &p : net.parameters()) {
      Tensor const saved = *p.value;
      out.push_back(multi_step_check(
        tag + p.name,
        [&](Tensor const &v) {
          *p.value = v;
          double const l = loss(y);
          *p.value = saved;
          return l;
        },
        saved, *p.grad, tolerance, seed));
    }
  }
  return out;
}

std::vector<CheckResult> self_test(std::uint64_t seed)
{
  std::vector<CheckResult> out;
  Rng rng(seed, 3);

  double werr = 0;
  for (int t = 0; t < 50; ++t) {
    Shape const s{1 + rng.below(3), 1 + rng.below(4), 2 * (1 + rng.below(8)), 2 * (1 + rng.below(8))};
    Tensor const x = uniform_tensor(s, rng);
    werr = std::max(werr, max_abs_diff(idwt2_haar(dwt2_haar(x)), x));
  }
  out.push_back({"wavelet.reconstruction", werr <= 1e-12, werr, 1e-12});

  double serr = 0;
  for (int t = 0; t < 50; ++t) {
    std::size_t const m = 1 + rng.below(16), n = 1 + rng.below(32);
    double const d = rng.uniform(-4, 2);
    Tensor const W = uniform_tensor({m, n}, rng);
    auto const f = svd_thin(W);
    double const tau = sigmoid(d) * (f.sigma.empty() ? 0.0 : f.sigma[0]);
    std::vector<double> shrunk;
    for (double s : f.sigma) {
      shrunk.push_back(std::max(s - tau, 0.0));
    }
    serr = std::max(serr, max_abs_diff(svt_adaptive_forward(W, {d}).first, svd_compose(f, shrunk)));
  }
  out.push_back({"svt.direct_path", serr <= 1e-9, serr, 1e-9});

  Tensor const x = uniform_tensor({4, 16, 16}, rng, 0, 0.9);
  Tensor shifted = x;
  for (double &v : shifted.span()) {
    v += 0.1;
  }
  out.push_back({"psnr.identical_is_inf", std::isinf(psnr(x, x)), psnr(x, x), 0});
  double const p20 = psnr(shifted, x);
  out.push_back({"psnr.offset_0.1_is_20dB", std::abs(p20 - 20) <= 1e-6, std::abs(p20 - 20), 1e-6});
  double const s1 = ssim(x, x);
  out.push_back({"ssim.identical_is_1", std::abs(s1 - 1) <= 1e-12, std::abs(s1 - 1), 1e-12});
  Tensor a({2, 1, 1}), b({2, 1, 1});
  a[0] = 1;
  b[1] = 1;
  double const so = std::abs(sam(a, b) - std::numbers::pi / 2);
  out.push_back({"sam.orthogonal_is_pi_over_2", so <= 1e-9, so, 1e-9});
  out.push_back({"sam.identical_is_0", sam(x, x) == 0, sam(x, x), 0});
  return out;
}

} // namespace ilr
