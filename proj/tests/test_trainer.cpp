#include "ilr/metrics.hpp"
#include "ilr/trainer.hpp"

#include "doctest.h"
#include "test_util.hpp"

#include <cmath>
#include <limits>

using namespace ilr;

namespace {

std::vector<double> flat_params(IlrNet &net)
{
  std::vector<double> out;
  for (auto const &p : net.parameters()) {
    out.insert(out.end(), p.value->values().begin(), p.value->values().end());
  }
  return out;
}

TrainConfig tiny_config(std::size_t epochs, double lr)
{
  TrainConfig cfg;
  cfg.epochs = epochs;
  cfg.learning_rate = lr;
  cfg.batch_size = 2;
  cfg.patch_shape = {4, 16, 16};
  cfg.iterations_k = 1;
  cfg.network = NetworkConfig::micro(1);
  cfg.seed = 3;
  return cfg;
}

std::vector<HsiCube> tiny_dataset(std::uint64_t seed, std::size_t n = 3)
{
  std::mt19937_64 rng(seed);
  std::vector<HsiCube> out;
  for (std::size_t i = 0; i < n; ++i) {
    // smooth ramp plus a little texture
    HsiCube c({5, 20, 20});
    auto t = test::random_tensor(c.shape(), rng, 0, 0.1);
    for (std::size_t b = 0; b < 5; ++b) {
      for (std::size_t r = 0; r < 20; ++r) {
        for (std::size_t q = 0; q < 20; ++q) {
          c(b, r, q) = 0.3 + 0.02 * static_cast<double>(r + q) * (1 + 0.1 * static_cast<double>(b)) / 2.0 + t(b, r, q);
        }
      }
    }
    out.push_back(c);
  }
  return out;
}

NoiseSpec light_noise()
{
  NoiseSpec ns;
  ns.sigma_lo = 10;
  ns.sigma_hi = 30;
  ns.seed = 11;
  return ns;
}

} // namespace

TEST_CASE("frobenius loss values")
{
  std::mt19937_64 rng(1);
  auto a = test::random_tensor({2, 3, 4}, rng);
  CHECK(frobenius_loss({a}, {a}).value == 0.0);

  Tensor pred({1, 2, 2}), target({1, 2, 2});
  pred[3] = 2;
  auto r = frobenius_loss({pred}, {target});
  CHECK(r.value == 2.0);
  CHECK(r.grads[0][3] == 2.0);

  // batch of two halves the per-sample weight
  auto r2 = frobenius_loss({pred, pred}, {target, target});
  CHECK(r2.value == 2.0);
  CHECK(r2.grads[1][3] == 1.0);

  CHECK_THROWS_AS(frobenius_loss({pred}, {Tensor({1, 2, 3})}), ShapeError);
  CHECK_THROWS(frobenius_loss({}, {}));
}

TEST_CASE("frobenius loss gradient matches finite differences")
{
  std::mt19937_64 rng(2);
  auto p0 = test::random_tensor({2, 3, 3}, rng), p1 = test::random_tensor({2, 3, 3}, rng);
  auto t0 = test::random_tensor({2, 3, 3}, rng), t1 = test::random_tensor({2, 3, 3}, rng);
  auto r = frobenius_loss({p0, p1}, {t0, t1});
  auto n0 = test::numeric_grad([&](Tensor const &v) { return frobenius_loss({v, p1}, {t0, t1}).value; }, p0, 1e-4);
  auto n1 = test::numeric_grad([&](Tensor const &v) { return frobenius_loss({p0, v}, {t0, t1}).value; }, p1, 1e-4);
  CHECK(test::grad_rel_err(r.grads[0], n0) <= 1e-8);
  CHECK(test::grad_rel_err(r.grads[1], n1) <= 1e-8);
}

TEST_CASE("adam: zero gradient keeps parameters")
{
  Tensor w({3}, std::vector<double>{1, -2, 3}), g({3});
  auto const before = w;
  AdamState st;
  adam_step({{"w", &w, &g}}, st, 1e-3);
  CHECK(w == before);
  CHECK(st.t == 1);
}

TEST_CASE("adam: first step moves each coordinate by about lr")
{
  Tensor w({4}, std::vector<double>{0.5, 0.5, 0.5, 0.5}), g({4}, std::vector<double>{0.3, 0.3, 0.3, 0.3});
  AdamState st;
  double const lr = 1e-2;
  adam_step({{"w", &w, &g}}, st, lr);
  for (std::size_t i = 0; i < 4; ++i) {
    CHECK(w[i] == doctest::Approx(0.5 - lr * 0.3 / (0.3 + 1e-8)).epsilon(1e-14));
  }
}

TEST_CASE("adam: two steps follow the recurrences")
{
  double const b1 = 0.9, b2 = 0.999, eps = 1e-8, lr = 0.05;
  double const g1 = 0.7, g2 = -0.2;
  // hand evaluation
  double m = (1 - b1) * g1, v = (1 - b2) * g1 * g1, x = 1.0;
  x -= lr * (m / (1 - b1)) / (std::sqrt(v / (1 - b2)) + eps);
  m = b1 * m + (1 - b1) * g2;
  v = b2 * v + (1 - b2) * g2 * g2;
  x -= lr * (m / (1 - b1 * b1)) / (std::sqrt(v / (1 - b2 * b2)) + eps);

  Tensor w({1}, std::vector<double>{1.0}), g({1}, std::vector<double>{g1});
  AdamState st;
  adam_step({{"w", &w, &g}}, st, lr);
  g[0] = g2;
  adam_step({{"w", &w, &g}}, st, lr);
  CHECK(w[0] == doctest::Approx(x).epsilon(1e-13));
  CHECK(st.t == 2);
}

TEST_CASE("adam: non-finite gradient names the tensor")
{
  Tensor w({2}), g({2}, std::vector<double>{0, std::numeric_limits<double>::quiet_NaN()});
  Tensor w2({1}), g2({1});
  AdamState st;
  try {
    adam_step({{"ok", &w2, &g2}, {"coarse.enc0.kernel", &w, &g}}, st, 1e-3);
    FAIL("expected an error");
  } catch (TrainingError const &e) {
    CHECK(std::string(e.what()).find("coarse.enc0.kernel") != std::string::npos);
  }
  CHECK(st.t == 0);
}

TEST_CASE("learning-rate schedule halves every twenty epochs")
{
  CHECK(scheduled_lr(1e-4, 0, 20) == 1e-4);
  CHECK(scheduled_lr(1e-4, 19, 20) == 1e-4);
  CHECK(scheduled_lr(1e-4, 20, 20) == 5e-5);
  CHECK(scheduled_lr(1e-4, 39, 20) == 5e-5);
  CHECK(scheduled_lr(1e-4, 40, 20) == 2.5e-5);
  CHECK(scheduled_lr(1e-4, 1000, 0) == 1e-4);
}

TEST_CASE("global norm clipping")
{
  Tensor a({2}), ga({2}, std::vector<double>{3, 0}), b({1}), gb({1}, std::vector<double>{4});
  std::vector<ParamRef> ps{{"a", &a, &ga}, {"b", &b, &gb}};
  CHECK(clip_grad_norm(ps, 1.0) == 5.0);
  CHECK(ga[0] == doctest::Approx(0.6));
  CHECK(gb[0] == doctest::Approx(0.8));
  CHECK(clip_grad_norm(ps, 1.0) == doctest::Approx(1.0));
  gb[0] = 0.1;
  ga[0] = 0;
  clip_grad_norm(ps, 1.0);
  CHECK(gb[0] == 0.1);
}

TEST_CASE("train config defaults")
{
  TrainConfig c;
  CHECK(c.learning_rate == 1e-4);
  CHECK(c.halve_every_epochs == 20);
  CHECK(c.epochs == 50);
  CHECK(c.batch_size == 8);
  CHECK(c.patch_shape == Shape{31, 64, 64});
  CHECK(c.iterations_k == 9);
  CHECK(c.adam.beta1 == 0.9);
  CHECK(c.adam.beta2 == 0.999);
  CHECK(c.adam.epsilon == 1e-8);
  CHECK(c.clip_norm == 1.0);
}

TEST_CASE("extract_patches: full-size cube, determinism, errors")
{
  std::mt19937_64 rng(4);
  auto cube = test::random_tensor({3, 8, 8}, rng);
  for (std::uint64_t seed : {0, 1, 99}) {
    auto ps = extract_patches(cube, {3, 8, 8}, 2, seed);
    REQUIRE(ps.size() == 2);
    CHECK(ps[0].clean == cube);
    CHECK(ps[1].clean == cube);
  }
  auto a = extract_patches(cube, {2, 4, 5}, 6, 5), b = extract_patches(cube, {2, 4, 5}, 6, 5);
  for (std::size_t i = 0; i < 6; ++i) {
    CHECK(a[i].band0 == b[i].band0);
    CHECK(a[i].row0 == b[i].row0);
    CHECK(a[i].col0 == b[i].col0);
    CHECK(a[i].clean(1, 2, 3) == cube(a[i].band0 + 1, a[i].row0 + 2, a[i].col0 + 3));
  }
  CHECK_THROWS_AS(extract_patches(cube, {4, 4, 4}, 1, 0), ShapeError);
  CHECK_THROWS_AS(extract_patches(cube, {3, 9, 4}, 1, 0), ShapeError);
}

TEST_CASE("extract_patches: offsets are uniform")
{
  HsiCube cube({3, 1, 128});
  std::size_t const draws = 10000, bins = 65;
  auto ps = extract_patches(cube, {1, 1, 64}, draws, 8);
  std::vector<std::size_t> col(bins), band(3);
  for (auto const &p : ps) {
    REQUIRE(p.col0 < bins);
    ++col[p.col0];
    ++band[p.band0];
  }
  double const pr = 1.0 / bins, mean = draws * pr, sd = std::sqrt(draws * pr * (1 - pr));
  for (std::size_t k = 0; k < bins; ++k) {
    CAPTURE(k);
    CHECK(std::abs(static_cast<double>(col[k]) - mean) <= 4 * sd);
  }
  // the spectral window moves too
  double const bm = draws / 3.0, bsd = std::sqrt(draws * (1.0 / 3) * (2.0 / 3));
  for (std::size_t k = 0; k < 3; ++k) {
    CHECK(std::abs(static_cast<double>(band[k]) - bm) <= 4 * bsd);
  }
}

TEST_CASE("patch pairs carry provenance and fresh noise")
{
  std::mt19937_64 rng(5);
  auto cube = test::random_tensor({4, 10, 10}, rng, 0, 1);
  auto p = extract_patches(cube, {4, 8, 8}, 1, 2, 7)[0];
  auto a = make_patch_pair(p, light_noise(), 100), b = make_patch_pair(p, light_noise(), 100),
       c = make_patch_pair(p, light_noise(), 101);
  CHECK(a.source == 7);
  CHECK(a.noise_seed == 100);
  CHECK(a.clean == p.clean);
  CHECK(a.noisy == b.noisy);
  CHECK_FALSE(a.noisy == c.noisy);
  CHECK(a.noisy.shape() == a.clean.shape());
}

TEST_CASE("log line format")
{
  CHECK(format_log_line({3, 2.5e-5, 0.125, 31.5}) == "3\t2.5e-05\t0.125\t31.500000");
}

TEST_CASE("one epoch at learning rate zero leaves parameters bit-exact")
{
  auto cfg = tiny_config(1, 0.0);
  IlrNet fresh(cfg.network);
  fresh.init(cfg.seed);
  auto r = train(tiny_dataset(6), light_noise(), cfg);
  CHECK(flat_params(r.net) == flat_params(fresh));
  CHECK(r.log.size() == 1);
}

TEST_CASE("training is deterministic and logs one line per epoch")
{
  auto cfg = tiny_config(3, 1e-3);
  auto data = tiny_dataset(7);
  auto a = train(data, light_noise(), cfg);
  auto b = train(data, light_noise(), cfg);
  CHECK(a.log.size() == 3);
  CHECK(flat_params(a.net) == flat_params(b.net));
  for (std::size_t e = 0; e < 3; ++e) {
    CHECK(a.log[e].epoch == e);
    CHECK(a.log[e].mean_loss == b.log[e].mean_loss);
  }
  cfg.seed = 4;
  auto c = train(data, light_noise(), cfg);
  CHECK(flat_params(a.net) != flat_params(c.net));
}

TEST_CASE("training lowers the epoch-mean loss")
{
  auto cfg = tiny_config(12, 3e-3);
  cfg.batch_size = 1;
  std::vector<EpochLog> seen;
  auto r = train(tiny_dataset(8), light_noise(), cfg, [&](EpochLog const &e) { seen.push_back(e); });
  REQUIRE(seen.size() == 12);
  CHECK(seen.back().mean_loss < seen.front().mean_loss);
  CHECK(seen.back().train_psnr > seen.front().train_psnr);
}

TEST_CASE("divergence is reported with epoch and step")
{
  auto data = tiny_dataset(9, 1);
  data[0](2, 3, 4) = std::numeric_limits<double>::quiet_NaN();
  try {
    train(data, light_noise(), tiny_config(1, 1e-3));
    FAIL("expected an error");
  } catch (TrainingError const &e) {
    std::string const msg = e.what();
    CHECK(msg.find("epoch 0") != std::string::npos);
    CHECK(msg.find("step 0") != std::string::npos);
  }
}

TEST_CASE("bad training inputs are rejected")
{
  CHECK_THROWS_AS(train({}, light_noise(), tiny_config(1, 1e-3)), std::invalid_argument);
  auto cfg = tiny_config(1, 1e-3);
  cfg.batch_size = 0;
  CHECK_THROWS_AS(train(tiny_dataset(1, 1), light_noise(), cfg), std::invalid_argument);
  cfg = tiny_config(1, 1e-3);
  cfg.patch_shape = {6, 16, 16};
  CHECK_THROWS_AS(train(tiny_dataset(1, 1), light_noise(), cfg), ShapeError);
}
