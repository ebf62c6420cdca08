#include "ilr/network.hpp"

#include <stdexcept>

namespace ilr {

namespace {

void accumulate(ConvLayer &layer, ConvGrads const &g)
{
  layer.grad_kernel += g.grad_kernel;
  layer.grad_bias += g.grad_bias;
}

std::vector<std::size_t> pad_to_multiple(std::size_t n, std::size_t m)
{
  std::size_t const target = (n + m - 1) / m * m;
  return reflect_pad_map(n, target, (target - n) / 2);
}

std::vector<std::size_t> center_window(std::size_t n, std::size_t len)
{
  if (n >= len) {
    return crop_map((n - len) / 2, len);
  }
  return reflect_pad_map(n, len, (len - n) / 2);
}

std::vector<std::size_t> inverse_window(std::vector<std::size_t> const &map, std::size_t n)
{
  // positions of the original samples inside a padded axis
  std::size_t const before = (map.size() - n) / 2;
  return crop_map(before, n);
}

/// a x b x rest -> b x a x rest
Tensor swap_leading(Tensor const &x)
{
  Shape s = x.shape();
  std::size_t const a = s[0], b = s[1];
  std::size_t const inner = x.size() / (a * b);
  std::swap(s[0], s[1]);
  Tensor out(s);
  for (std::size_t i = 0; i < a; ++i) {
    for (std::size_t j = 0; j < b; ++j) {
      std::copy_n(x.data() + (i * b + j) * inner, inner, out.data() + (j * a + i) * inner);
    }
  }
  return out;
}

void require_cube(HsiCube const &x, char const *what)
{
  if (x.rank() != 3) {
    throw ShapeError(std::string(what) + ": expected a bands x height x width cube, got " + shape_str(x.shape()));
  }
}

/// Sum over each band of a[i] * b[i].
Tensor band_dot(HsiCube const &a, HsiCube const &b)
{
  std::size_t const bands = a.dim(0);
  std::size_t const plane = a.size() / bands;
  Tensor out({bands});
  for (std::size_t k = 0; k < bands; ++k) {
    double s = 0;
    for (std::size_t i = k * plane; i < (k + 1) * plane; ++i) {
      s += a[i] * b[i];
    }
    out[k] = s;
  }
  return out;
}

HsiCube band_scale(HsiCube const &x, Tensor const &w)
{
  std::size_t const plane = x.size() / x.dim(0);
  HsiCube out(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) {
    out[i] = w[i / plane] * x[i];
  }
  return out;
}

} // namespace

NetworkConfig NetworkConfig::micro(std::size_t iterations)
{
  NetworkConfig c;
  c.coarse.encoder = {4, 8, 16, 32};
  c.coarse.decoder = {16, 8, 4, 1};
  c.refine.encoder = {4, 8};
  c.refine.decoder = {4, 1};
  c.lambda.channels = {2, 2, 4, 8};
  c.iterations = iterations;
  return c;
}

static void validate_ladder(std::vector<std::size_t> const &enc, std::vector<std::size_t> const &dec,
                            char const *what)
{
  std::size_t const L = enc.size();
  if (L == 0 || dec.size() != L) {
    throw std::invalid_argument(std::string(what) + ": encoder and decoder ladders must have equal nonzero length");
  }
  if (dec.back() != 1) {
    throw std::invalid_argument(std::string(what) + ": decoder must end with one channel");
  }
  for (std::size_t j = 0; j + 1 < L; ++j) {
    if (dec[j] != enc[L - 2 - j]) {
      throw std::invalid_argument(std::string(what) + ": decoder level " + std::to_string(j) +
                                  " has width " + std::to_string(dec[j]) + " but its skip has " +
                                  std::to_string(enc[L - 2 - j]));
    }
  }
  for (auto c : enc) {
    if (c == 0) {
      throw std::invalid_argument(std::string(what) + ": zero channel count");
    }
  }
}

void NetworkConfig::validate() const
{
  validate_ladder(coarse.encoder, coarse.decoder, "coarse net");
  validate_ladder(refine.encoder, refine.decoder, "refine net");
  if (coarse.rmm_enabled && coarse.rmm_position + 1 >= coarse.decoder.size()) {
    throw std::invalid_argument("coarse net: rmm_position must name an inner decoder level");
  }
  if (lambda.channels.size() < 2 || lambda.channels.front() != 2) {
    throw std::invalid_argument("lambda net: channel ladder must start at 2");
  }
  if (lambda.crop < 2) {
    throw std::invalid_argument("lambda net: crop must be at least 2");
  }
}

// ---------------------------------------------------------------- UNet3d

UNet3d::UNet3d(std::vector<std::size_t> encoder, std::vector<std::size_t> decoder, bool rmm_enabled,
               std::size_t rmm_position, double d_init)
  : rmm_enabled_{rmm_enabled}
  , rmm_position_{rmm_position}
{
  validate_ladder(encoder, decoder, "unet");
  std::size_t const L = encoder.size();
  for (std::size_t i = 0; i < L; ++i) {
    encoder_.push_back(make_conv3d(i == 0 ? 1 : encoder[i - 1], encoder[i], {1, 2, 2}));
  }
  for (std::size_t j = 0; j < L; ++j) {
    decoder_.push_back(make_deconv3d(j == 0 ? encoder[L - 1] : decoder[j - 1], decoder[j]));
  }
  d_[0] = d_init;
}

void UNet3d::init(Rng &rng)
{
  for (auto &l : encoder_) {
    l.init_uniform(rng);
  }
  for (auto &l : decoder_) {
    l.init_uniform(rng);
  }
}

HsiCube UNet3d::forward(HsiCube const &y, Cache *cache) const
{
  require_cube(y, "unet");
  std::size_t const B = y.dim(0), H = y.dim(1), W = y.dim(2);
  if (B < 1 || H < 2 || W < 2) {
    throw ShapeError("unet: cube " + shape_str(y.shape()) + " too small");
  }
  std::size_t const m = divisor();
  auto rows = pad_to_multiple(H, m);
  auto cols = pad_to_multiple(W, m);
  std::size_t const Hp = rows.size(), Wp = cols.size();

  Tensor a = spatial_gather(y, rows, cols).reshaped({1, B, Hp, Wp});
  std::size_t const L = levels();
  std::vector<Tensor> enc_out(L);
  if (cache) {
    *cache = Cache{};
    cache->cube_shape = y.shape();
  }
  for (std::size_t i = 0; i < L; ++i) {
    Tensor z = conv3d(a, encoder_[i]);
    if (cache) {
      cache->enc_in.push_back(std::move(a));
      cache->enc_pre.push_back(z);
    }
    a = relu(z);
    enc_out[i] = a;
  }
  Tensor h = std::move(a);
  for (std::size_t j = 0; j < L; ++j) {
    Tensor z = deconv3d(h, decoder_[j]);
    if (cache) {
      cache->dec_in.push_back(std::move(h));
      cache->dec_pre.push_back(z);
    }
    if (j + 1 < L) {
      h = relu(z);
      h += enc_out[L - 2 - j];
      if (rmm_enabled_ && j == rmm_position_) {
        auto [out, rc] = rmm_apply(h, ThresholdParam{d_[0]});
        if (cache) {
          cache->rmm_in = std::move(h);
          cache->rmm = std::move(rc);
        }
        h = std::move(out);
      }
    } else {
      h = std::move(z);
    }
  }
  if (cache) {
    cache->enc_out = std::move(enc_out);
    cache->rows = rows;
    cache->cols = cols;
  }
  return spatial_gather(h.reshaped({B, Hp, Wp}), inverse_window(rows, H), inverse_window(cols, W));
}

HsiCube UNet3d::backward(Cache const &cache, HsiCube const &grad_out, SvtOptions const &svt)
{
  if (grad_out.shape() != cache.cube_shape) {
    throw ShapeError("unet backward: gradient " + shape_str(grad_out.shape()) + " for output " +
                     shape_str(cache.cube_shape));
  }
  std::size_t const B = cache.cube_shape[0], H = cache.cube_shape[1], W = cache.cube_shape[2];
  std::size_t const Hp = cache.rows.size(), Wp = cache.cols.size();
  std::size_t const L = levels();

  Tensor g = spatial_gather_backward({B, Hp, Wp}, inverse_window(cache.rows, H), inverse_window(cache.cols, W),
                                     grad_out)
               .reshaped({1, B, Hp, Wp});
  std::vector<Tensor> skip(L);
  for (std::size_t j = L; j-- > 0;) {
    if (j + 1 < L) {
      if (rmm_enabled_ && j == rmm_position_) {
        auto rg = rmm_backward(*cache.rmm, g, svt);
        grad_d_[0] += rg.grad_d;
        g = std::move(rg.grad_in);
      }
      skip[L - 2 - j] = g;
      g = relu_backward(cache.dec_pre[j], g);
    }
    auto cg = deconv3d_backward(cache.dec_in[j], decoder_[j], g);
    accumulate(decoder_[j], cg);
    g = std::move(cg.grad_x);
  }
  for (std::size_t i = L; i-- > 0;) {
    if (!skip[i].empty()) {
      g += skip[i];
    }
    g = relu_backward(cache.enc_pre[i], g);
    auto cg = conv3d_backward(cache.enc_in[i], encoder_[i], g);
    accumulate(encoder_[i], cg);
    g = std::move(cg.grad_x);
  }
  return spatial_gather_backward(cache.cube_shape, cache.rows, cache.cols, g.reshaped({B, Hp, Wp}));
}

void UNet3d::collect(std::string const &prefix, std::vector<ParamRef> &out)
{
  for (std::size_t i = 0; i < encoder_.size(); ++i) {
    auto const n = prefix + ".enc" + std::to_string(i);
    out.push_back({n + ".kernel", &encoder_[i].kernel, &encoder_[i].grad_kernel});
    out.push_back({n + ".bias", &encoder_[i].bias, &encoder_[i].grad_bias});
  }
  for (std::size_t j = 0; j < decoder_.size(); ++j) {
    auto const n = prefix + ".dec" + std::to_string(j);
    out.push_back({n + ".kernel", &decoder_[j].kernel, &decoder_[j].grad_kernel});
    out.push_back({n + ".bias", &decoder_[j].bias, &decoder_[j].grad_bias});
  }
  if (rmm_enabled_) {
    out.push_back({prefix + ".rmm.d", &d_, &grad_d_});
  }
}

// ---------------------------------------------------------------- LambdaNet

LambdaNet::LambdaNet(LambdaNetConfig const &cfg)
  : crop_{cfg.crop}
{
  for (std::size_t i = 0; i + 1 < cfg.channels.size(); ++i) {
    layers_.push_back(make_conv2d(cfg.channels[i], cfg.channels[i + 1], 2));
  }
}

void LambdaNet::init(Rng &rng)
{
  for (auto &l : layers_) {
    l.init_uniform(rng);
  }
}

Tensor LambdaNet::forward(HsiCube const &a, HsiCube const &b, Cache *cache) const
{
  require_cube(a, "lambda net");
  a.require_same_shape(b, "lambda net");
  std::size_t const B = a.dim(0);
  auto rows = center_window(a.dim(1), crop_);
  auto cols = center_window(a.dim(2), crop_);

  Tensor x = swap_leading(spatial_gather(stack({&a, &b}), rows, cols));
  if (cache) {
    *cache = Cache{};
    cache->cube_shape = a.shape();
  }
  for (std::size_t l = 0; l < layers_.size(); ++l) {
    Tensor z = conv2d(x, layers_[l]);
    if (cache) {
      cache->inputs.push_back(std::move(x));
      cache->pre.push_back(z);
    }
    x = l + 1 < layers_.size() ? relu(z) : std::move(z);
  }
  std::size_t const per = x.size() / B;
  Tensor lam({B});
  for (std::size_t n = 0; n < B; ++n) {
    double s = 0;
    for (std::size_t i = n * per; i < (n + 1) * per; ++i) {
      s += x[i];
    }
    lam[n] = sigmoid(s / static_cast<double>(per));
  }
  if (cache) {
    cache->rows = std::move(rows);
    cache->cols = std::move(cols);
    cache->out = lam;
  }
  return lam;
}

std::pair<HsiCube, HsiCube> LambdaNet::backward(Cache const &cache, Tensor const &grad_lambda)
{
  std::size_t const B = cache.cube_shape[0];
  if (grad_lambda.size() != B) {
    throw ShapeError("lambda net backward: expected " + std::to_string(B) + " band gradients");
  }
  Tensor g(cache.pre.back().shape());
  std::size_t const per = g.size() / B;
  for (std::size_t n = 0; n < B; ++n) {
    double const l = cache.out[n];
    double const v = grad_lambda[n] * l * (1 - l) / static_cast<double>(per);
    std::fill_n(g.data() + n * per, per, v);
  }
  for (std::size_t l = layers_.size(); l-- > 0;) {
    if (l + 1 < layers_.size()) {
      g = relu_backward(cache.pre[l], g);
    }
    auto cg = conv2d_backward(cache.inputs[l], layers_[l], g);
    accumulate(layers_[l], cg);
    g = std::move(cg.grad_x);
  }
  Shape s = cache.cube_shape;
  s.insert(s.begin(), 2);
  Tensor gp = spatial_gather_backward(s, cache.rows, cache.cols, swap_leading(g));
  std::size_t const half = gp.size() / 2;
  HsiCube ga(cache.cube_shape), gb(cache.cube_shape);
  std::copy_n(gp.data(), half, ga.data());
  std::copy_n(gp.data() + half, half, gb.data());
  return {std::move(ga), std::move(gb)};
}

void LambdaNet::collect(std::string const &prefix, std::vector<ParamRef> &out)
{
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    auto const n = prefix + ".conv" + std::to_string(i);
    out.push_back({n + ".kernel", &layers_[i].kernel, &layers_[i].grad_kernel});
    out.push_back({n + ".bias", &layers_[i].bias, &layers_[i].grad_bias});
  }
}

HsiCube convex_combine(HsiCube const &a, HsiCube const &b, Tensor const &lambda)
{
  require_cube(a, "convex_combine");
  a.require_same_shape(b, "convex_combine");
  if (lambda.size() != a.dim(0)) {
    throw ShapeError("convex_combine: " + std::to_string(lambda.size()) + " weights for " +
                     std::to_string(a.dim(0)) + " bands");
  }
  std::size_t const plane = a.size() / a.dim(0);
  HsiCube out(a.shape());
  for (std::size_t i = 0; i < a.size(); ++i) {
    double const l = lambda[i / plane];
    out[i] = (1.0 - l) * a[i] + l * b[i];
  }
  return out;
}

// ---------------------------------------------------------------- IlrNet

IlrNet::IlrNet(NetworkConfig cfg)
  : cfg_{std::move(cfg)}
{
  cfg_.validate();
  coarse_ = UNet3d(cfg_.coarse.encoder, cfg_.coarse.decoder, cfg_.coarse.rmm_enabled, cfg_.coarse.rmm_position,
                   cfg_.coarse.d_init);
  for (std::size_t k = 0; k < cfg_.iterations; ++k) {
    refine_.emplace_back(cfg_.refine.encoder, cfg_.refine.decoder, false, 0, 0.0);
  }
  lambda1_ = LambdaNet(cfg_.lambda);
  lambda2_ = LambdaNet(cfg_.lambda);
}

void IlrNet::init(std::uint64_t seed)
{
  Rng r0(seed, 1);
  coarse_.init(r0);
  coarse_.set_threshold_logit(cfg_.coarse.d_init);
  Rng r1(seed, 2);
  lambda1_.init(r1);
  Rng r2(seed, 3);
  lambda2_.init(r2);
  for (std::size_t k = 0; k < refine_.size(); ++k) {
    Rng rk(seed, 100 + k);
    refine_[k].init(rk);
  }
}

HsiCube IlrNet::coarse_estimate(HsiCube const &y, UNet3d::Cache *cache) const
{
  if (y.rank() == 3 && y.dim(0) < 2) {
    throw ShapeError("coarse estimate: at least two bands required");
  }
  return coarse_.forward(y, cache);
}

RefinementState IlrNet::refine_step(RefinementState const &state, HsiCube const &y, StepCache *cache) const
{
  if (state.iteration >= refine_.size()) {
    throw std::out_of_range("refine_step: iteration " + std::to_string(state.iteration) + " beyond the " +
                            std::to_string(refine_.size()) + " configured refinement nets");
  }
  state.x_current.require_same_shape(y, "refine_step");
  RefinementState next;
  next.iteration = state.iteration + 1;
  next.lambda1 = lambda1_.forward(state.x_current, y, cache ? &cache->lam1 : nullptr);
  next.z_current = convex_combine(y, state.x_current, next.lambda1);
  next.lambda2 = lambda2_.forward(state.x_current, next.z_current, cache ? &cache->lam2 : nullptr);
  HsiCube f = refine_[state.iteration].forward(next.z_current, cache ? &cache->refine : nullptr);
  next.x_current = convex_combine(f, state.x_current, next.lambda2);
  if (cache) {
    cache->x_prev = state.x_current;
    cache->z = next.z_current;
    cache->f_out = std::move(f);
    cache->lambda1 = next.lambda1;
    cache->lambda2 = next.lambda2;
  }
  return next;
}

IlrNet::Output IlrNet::forward(HsiCube const &y, std::size_t iterations, Cache *cache) const
{
  if (iterations > refine_.size()) {
    throw std::invalid_argument("forward: " + std::to_string(iterations) + " iterations requested, network has " +
                                std::to_string(refine_.size()));
  }
  if (cache) {
    *cache = Cache{};
    cache->y = y;
    cache->steps.resize(iterations);
  }
  Output out;
  RefinementState st;
  st.x_current = coarse_estimate(y, cache ? &cache->coarse : nullptr);
  st.z_current = y;
  out.trace.push_back(st.x_current);
  for (std::size_t k = 0; k < iterations; ++k) {
    st = refine_step(st, y, cache ? &cache->steps[k] : nullptr);
    out.trace.push_back(st.x_current);
  }
  out.x = st.x_current;
  return out;
}

HsiCube IlrNet::backward(Cache const &cache, HsiCube const &grad_out)
{
  grad_out.require_same_shape(cache.y, "network backward");
  HsiCube gx = grad_out;
  HsiCube gy(cache.y.shape());
  Tensor one_minus(Shape{cache.y.dim(0)});
  for (std::size_t k = cache.steps.size(); k-- > 0;) {
    auto const &s = cache.steps[k];
    for (std::size_t b = 0; b < one_minus.size(); ++b) {
      one_minus[b] = 1.0 - s.lambda2[b];
    }
    Tensor g_lam2 = band_dot(gx, s.x_prev - s.f_out);
    HsiCube gz = refine_[k].backward(s.refine, band_scale(gx, one_minus), cfg_.svt);
    HsiCube gprev = band_scale(gx, s.lambda2);

    auto [ga2, gb2] = lambda2_.backward(s.lam2, g_lam2);
    gprev += ga2;
    gz += gb2;

    for (std::size_t b = 0; b < one_minus.size(); ++b) {
      one_minus[b] = 1.0 - s.lambda1[b];
    }
    Tensor g_lam1 = band_dot(gz, s.x_prev - cache.y);
    gprev += band_scale(gz, s.lambda1);
    gy += band_scale(gz, one_minus);

    auto [ga1, gb1] = lambda1_.backward(s.lam1, g_lam1);
    gprev += ga1;
    gy += gb1;
    gx = std::move(gprev);
  }
  gy += coarse_.backward(cache.coarse, gx, cfg_.svt);
  return gy;
}

std::vector<ParamRef> IlrNet::parameters()
{
  std::vector<ParamRef> out;
  coarse_.collect("coarse", out);
  for (std::size_t k = 0; k < refine_.size(); ++k) {
    refine_[k].collect("refine" + std::to_string(k), out);
  }
  lambda1_.collect("lambda1", out);
  lambda2_.collect("lambda2", out);
  return out;
}

void IlrNet::zero_grad()
{
  for (auto &p : parameters()) {
    p.grad->fill(0);
  }
}

} // namespace ilr
