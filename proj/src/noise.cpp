#include "ilr/noise.hpp"

#include "ilr/rng.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>
#include <stdexcept>

namespace ilr {

namespace {

constexpr std::uint64_t kMixtureStream = std::uint64_t{1} << 32;

void require_cube(HsiCube const &x, char const *what)
{
  if (x.rank() != 3) {
    throw ShapeError(std::string(what) + ": expected a bands x height x width cube, got " + shape_str(x.shape()));
  }
}

void add_band_gaussian(HsiCube &y, std::size_t band, double sigma, Rng &rng)
{
  std::size_t const plane = y.dim(1) * y.dim(2);
  double *p = y.data() + band * plane;
  for (std::size_t i = 0; i < plane; ++i) {
    p[i] += sigma * rng.normal();
  }
}

/// First k entries of a seeded Fisher-Yates shuffle of 0..n-1.
std::vector<std::size_t> sample_without_replacement(std::size_t n, std::size_t k, Rng &rng)
{
  std::vector<std::size_t> v(n);
  std::iota(v.begin(), v.end(), 0);
  for (std::size_t i = 0; i < k && i + 1 < n; ++i) {
    std::size_t const j = i + rng.below(n - i);
    std::swap(v[i], v[j]);
  }
  v.resize(k);
  return v;
}

std::size_t column_count(double frac, std::size_t width)
{
  auto const n = static_cast<std::size_t>(std::llround(frac * static_cast<double>(width)));
  return std::clamp<std::size_t>(n, 1, width);
}

std::string trim(std::string s)
{
  auto const b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) {
    return {};
  }
  auto const e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

double parse_double(std::string const &key, std::string const &v)
{
  std::size_t used = 0;
  double d = 0;
  try {
    d = std::stod(v, &used);
  } catch (std::exception const &) {
    used = 0;
  }
  if (used != v.size() || v.empty()) {
    throw std::invalid_argument("noise config: bad number for " + key + ": '" + v + "'");
  }
  return d;
}

} // namespace

std::string to_string(NoiseKind k)
{
  switch (k) {
  case NoiseKind::noniid_gaussian:
    return "noniid_gaussian";
  case NoiseKind::mixture:
    return "mixture";
  case NoiseKind::corr_variance:
    return "corr_variance";
  }
  return "?";
}

NoiseKind parse_noise_kind(std::string const &s)
{
  if (s == "noniid_gaussian" || s == "noniid") {
    return NoiseKind::noniid_gaussian;
  }
  if (s == "mixture") {
    return NoiseKind::mixture;
  }
  if (s == "corr_variance" || s == "corr") {
    return NoiseKind::corr_variance;
  }
  throw std::invalid_argument("unknown noise kind '" + s + "' (noniid, mixture or corr)");
}

void NoiseSpec::validate() const
{
  auto fail = [](std::string const &m) { throw std::invalid_argument("noise spec: " + m); };
  auto finite = [](double v) { return std::isfinite(v); };
  if (!finite(sigma_lo) || !finite(sigma_hi) || sigma_lo < 0 || sigma_lo > sigma_hi) {
    fail("need 0 <= sigma_lo <= sigma_hi");
  }
  if (!finite(beta) || !finite(eta) || beta <= 0 || eta <= 0) {
    fail("beta and eta must be positive");
  }
  for (double f : {impulse_lo, impulse_hi, stripe_frac_lo, stripe_frac_hi}) {
    if (!finite(f) || f < 0 || f > 1) {
      fail("fractions must lie in [0, 1]");
    }
  }
  if (impulse_lo > impulse_hi || stripe_frac_lo > stripe_frac_hi) {
    fail("fraction ranges must be ordered");
  }
}

std::string NoiseSpec::to_text() const
{
  std::ostringstream os;
  os.precision(17);
  os << "kind=" << to_string(kind) << '\n'
     << "sigma_lo=" << sigma_lo << '\n'
     << "sigma_hi=" << sigma_hi << '\n'
     << "beta=" << beta << '\n'
     << "eta=" << eta << '\n'
     << "impulse_lo=" << impulse_lo << '\n'
     << "impulse_hi=" << impulse_hi << '\n'
     << "stripe_frac_lo=" << stripe_frac_lo << '\n'
     << "stripe_frac_hi=" << stripe_frac_hi << '\n'
     << "seed=" << seed << '\n';
  return os.str();
}

NoiseSpec NoiseSpec::from_text(std::string const &text)
{
  NoiseSpec s;
  std::istringstream is(text);
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    if (auto h = line.find('#'); h != std::string::npos) {
      line.resize(h);
    }
    line = trim(line);
    if (line.empty()) {
      continue;
    }
    auto const eq = line.find('=');
    if (eq == std::string::npos) {
      throw std::invalid_argument("noise config line " + std::to_string(lineno) + ": expected key=value");
    }
    auto const key = trim(line.substr(0, eq));
    auto const val = trim(line.substr(eq + 1));
    if (key == "kind") {
      s.kind = parse_noise_kind(val);
    } else if (key == "seed") {
      std::size_t used = 0;
      try {
        s.seed = std::stoull(val, &used);
      } catch (std::exception const &) {
        used = 0;
      }
      if (used != val.size() || val.empty() || val[0] == '-') {
        throw std::invalid_argument("noise config: bad seed '" + val + "'");
      }
    } else if (key == "sigma_lo") {
      s.sigma_lo = parse_double(key, val);
    } else if (key == "sigma_hi") {
      s.sigma_hi = parse_double(key, val);
    } else if (key == "beta") {
      s.beta = parse_double(key, val);
    } else if (key == "eta") {
      s.eta = parse_double(key, val);
    } else if (key == "impulse_lo") {
      s.impulse_lo = parse_double(key, val);
    } else if (key == "impulse_hi") {
      s.impulse_hi = parse_double(key, val);
    } else if (key == "stripe_frac_lo") {
      s.stripe_frac_lo = parse_double(key, val);
    } else if (key == "stripe_frac_hi") {
      s.stripe_frac_hi = parse_double(key, val);
    } else {
      throw std::invalid_argument("noise config: unknown key '" + key + "'");
    }
  }
  s.validate();
  return s;
}

NoiseSpec NoiseSpec::load(std::filesystem::path const &path)
{
  std::ifstream f(path);
  if (!f) {
    throw std::runtime_error("cannot read noise config " + path.string());
  }
  std::ostringstream ss;
  ss << f.rdbuf();
  return from_text(ss.str());
}

std::vector<double> noniid_band_sigmas(std::size_t bands, NoiseSpec const &spec)
{
  std::vector<double> s(bands);
  for (std::size_t b = 0; b < bands; ++b) {
    Rng rng(spec.seed, b);
    s[b] = rng.uniform(spec.sigma_lo, spec.sigma_hi);
  }
  return s;
}

HsiCube add_noniid_gaussian(HsiCube const &x, NoiseSpec const &spec)
{
  require_cube(x, "add_noniid_gaussian");
  spec.validate();
  HsiCube y = x;
  for (std::size_t b = 0; b < x.dim(0); ++b) {
    Rng rng(spec.seed, b);
    double const sigma = rng.uniform(spec.sigma_lo, spec.sigma_hi) / 255.0;
    add_band_gaussian(y, b, sigma, rng);
  }
  return y;
}

std::vector<double> corr_variance_sigmas(std::size_t bands, double beta, double eta)
{
  if (bands < 2) {
    throw std::invalid_argument("correlated-variance noise needs at least two bands");
  }
  double const c = static_cast<double>(bands - 1);
  std::vector<double> s(bands);
  for (std::size_t i = 0; i < bands; ++i) {
    double const u = static_cast<double>(i) / c - 0.5;
    s[i] = beta * std::exp(-u * u / (4 * eta * eta));
  }
  return s;
}

HsiCube add_corr_variance(HsiCube const &x, NoiseSpec const &spec)
{
  require_cube(x, "add_corr_variance");
  spec.validate();
  auto const sig = corr_variance_sigmas(x.dim(0), spec.beta, spec.eta);
  HsiCube y = x;
  for (std::size_t b = 0; b < x.dim(0); ++b) {
    Rng rng(spec.seed, b);
    add_band_gaussian(y, b, sig[b] / 255.0, rng);
  }
  return y;
}

MixtureLayout plan_mixture(Shape const &shape, NoiseSpec const &spec)
{
  if (shape.size() != 3) {
    throw ShapeError("mixture noise: expected a cube shape, got " + shape_str(shape));
  }
  std::size_t const B = shape[0], W = shape[2];
  if (B < 3) {
    throw std::invalid_argument("mixture noise needs at least three bands, got " + std::to_string(B));
  }
  Rng part(spec.seed, kMixtureStream);
  auto const perm = sample_without_replacement(B, B, part);

  MixtureLayout m;
  std::size_t pos = 0;
  auto take = [&](std::size_t third) {
    std::size_t const n = B / 3 + (third < B % 3 ? 1 : 0);
    std::vector<std::size_t> v(perm.begin() + static_cast<std::ptrdiff_t>(pos),
                               perm.begin() + static_cast<std::ptrdiff_t>(pos + n));
    pos += n;
    std::sort(v.begin(), v.end());
    return v;
  };
  m.impulse_bands = take(0);
  m.stripe_bands = take(1);
  m.deadline_bands = take(2);

  for (auto b : m.impulse_bands) {
    Rng r(spec.seed, kMixtureStream + 1 + b);
    m.impulse_ratio.push_back(r.uniform(spec.impulse_lo, spec.impulse_hi));
  }
  for (auto b : m.stripe_bands) {
    Rng r(spec.seed, kMixtureStream + 1 + b);
    auto cols = sample_without_replacement(W, column_count(r.uniform(spec.stripe_frac_lo, spec.stripe_frac_hi), W), r);
    std::vector<double> offs;
    for (std::size_t i = 0; i < cols.size(); ++i) {
      offs.push_back(r.uniform(-0.25, 0.25));
    }
    m.stripe_columns.push_back(std::move(cols));
    m.stripe_offsets.push_back(std::move(offs));
  }
  for (auto b : m.deadline_bands) {
    Rng r(spec.seed, kMixtureStream + 1 + b);
    m.deadline_columns.push_back(
      sample_without_replacement(W, column_count(r.uniform(spec.stripe_frac_lo, spec.stripe_frac_hi), W), r));
  }
  return m;
}

HsiCube add_mixture(HsiCube const &x, NoiseSpec const &spec)
{
  require_cube(x, "add_mixture");
  auto const plan = plan_mixture(x.shape(), spec);
  HsiCube y = add_noniid_gaussian(x, spec);
  std::size_t const H = x.dim(1), W = x.dim(2), plane = H * W;

  for (std::size_t k = 0; k < plan.impulse_bands.size(); ++k) {
    std::size_t const b = plan.impulse_bands[k];
    Rng r(spec.seed, 2 * kMixtureStream + b);
    double const ratio = plan.impulse_ratio[k];
    double *p = y.data() + b * plane;
    for (std::size_t i = 0; i < plane; ++i) {
      double const u = r.uniform();
      double const v = r.uniform();
      if (u < ratio) {
        p[i] = v < 0.5 ? 1.0 : 0.0;
      }
    }
  }
  for (std::size_t k = 0; k < plan.stripe_bands.size(); ++k) {
    double *p = y.data() + plan.stripe_bands[k] * plane;
    for (std::size_t c = 0; c < plan.stripe_columns[k].size(); ++c) {
      std::size_t const col = plan.stripe_columns[k][c];
      for (std::size_t row = 0; row < H; ++row) {
        p[row * W + col] += plan.stripe_offsets[k][c];
      }
    }
  }
  for (std::size_t k = 0; k < plan.deadline_bands.size(); ++k) {
    double *p = y.data() + plan.deadline_bands[k] * plane;
    for (std::size_t col : plan.deadline_columns[k]) {
      for (std::size_t row = 0; row < H; ++row) {
        p[row * W + col] = 0.0;
      }
    }
  }
  return y;
}

HsiCube apply_noise(HsiCube const &x, NoiseSpec const &spec)
{
  switch (spec.kind) {
  case NoiseKind::noniid_gaussian:
    return add_noniid_gaussian(x, spec);
  case NoiseKind::mixture:
    return add_mixture(x, spec);
  case NoiseKind::corr_variance:
    return add_corr_variance(x, spec);
  }
  throw std::invalid_argument("unknown noise kind");
}

} // namespace ilr
