#include "ilr/checkpoint.hpp"
#include "ilr/network.hpp"
#include "ilr/svd.hpp"
#include "ilr/wavelet.hpp"

#include "doctest.h"
#include "test_util.hpp"

#include <filesystem>
#include <cstring>
#include <fstream>

using namespace ilr;

namespace {

IlrNet micro_net(std::size_t k = 3, std::uint64_t seed = 7)
{
  IlrNet net(NetworkConfig::micro(k));
  net.init(seed);
  return net;
}

void force_lambda(LambdaNet &lam, double bias)
{
  auto &last = lam.layers().back();
  last.kernel.fill(0);
  last.bias.fill(bias);
}

double loss_of(IlrNet const &net, Tensor const &y, Tensor const &target, std::size_t k)
{
  auto out = net.forward(y, k);
  Tensor d = out.x - target;
  return 0.5 * squared_norm(d);
}

std::filesystem::path temp_file(std::string const &name)
{
  return std::filesystem::temp_directory_path() / ("ilr_test_" + name);
}

} // namespace

TEST_CASE("coarse estimate keeps the cube shape")
{
  std::mt19937_64 rng(1);
  auto net = micro_net();
  for (Shape s : {Shape{8, 16, 16}, Shape{5, 20, 18}, Shape{3, 9, 33}}) {
    auto y = test::random_tensor(s, rng, 0, 1);
    CHECK(net.coarse_estimate(y).shape() == s);
    CHECK(net.forward(y).x.shape() == s);
  }
}

TEST_CASE("full-size coarse net on a 31x64x64 cube")
{
  std::mt19937_64 rng(2);
  IlrNet net{NetworkConfig{}};
  net.init(3);
  auto y = test::random_tensor({31, 64, 64}, rng, 0, 1);
  auto x = net.coarse_estimate(y);
  CHECK(x.shape() == Shape{31, 64, 64});
  CHECK(x.all_finite());
  CHECK(net.config().iterations == 9);
}

TEST_CASE("zero parameters give a zero coarse estimate")
{
  std::mt19937_64 rng(3);
  IlrNet net(NetworkConfig::micro());
  auto y = test::random_tensor({6, 16, 16}, rng, 0, 1);
  auto x = net.coarse_estimate(y);
  CHECK(max_abs_diff(x, Tensor(x.shape())) == 0.0);
}

TEST_CASE("rmm site: d = 0 annihilates every LL singular value at or below half of the largest")
{
  std::mt19937_64 rng(4);
  auto net = micro_net();
  net.coarse().set_threshold_logit(0.0);
  auto y = test::random_tensor({8, 64, 64}, rng, 0, 1);
  UNet3d::Cache cache;
  net.coarse_estimate(y, &cache);
  REQUIRE(cache.rmm.has_value());

  auto const before = dwt2_haar(cache.rmm_in);
  auto const after = dwt2_haar(cache.dec_in[1]); // the RMM output feeds the next deconv
  std::size_t const C = before.ll.dim(0), B = before.ll.dim(1);
  std::size_t const cols = before.ll.size() / (C * B);
  std::size_t channels_checked = 0;
  for (std::size_t c = 0; c < C; ++c) {
    Tensor m0({B, cols}), m1({B, cols});
    std::copy_n(before.ll.data() + c * B * cols, B * cols, m0.data());
    std::copy_n(after.ll.data() + c * B * cols, B * cols, m1.data());
    auto s0 = svd_thin(m0).sigma;
    auto s1 = svd_thin(m1).sigma;
    if (s0[0] == 0) {
      continue;
    }
    ++channels_checked;
    std::size_t zeros = 0;
    for (std::size_t i = 0; i < s0.size(); ++i) {
      double const expect = std::max(s0[i] - 0.5 * s0[0], 0.0);
      CHECK(std::abs(s1[i] - expect) <= 1e-9 * s0[0]);
      zeros += s1[i] <= 1e-9 * s0[0];
    }
    CHECK(2 * zeros >= s0.size());
  }
  CHECK(channels_checked > 0);
}

TEST_CASE("lambda net outputs per-band weights in (0, 1)")
{
  std::mt19937_64 rng(5);
  auto net = micro_net();
  for (Shape s : {Shape{6, 16, 16}, Shape{4, 70, 60}}) {
    auto a = test::random_tensor(s, rng, 0, 1);
    auto b = test::random_tensor(s, rng, 0, 1);
    auto lam = net.lambda1().forward(a, b);
    REQUIRE(lam.size() == s[0]);
    for (double v : lam.values()) {
      CHECK(v > 0);
      CHECK(v < 1);
    }
  }
}

TEST_CASE("lambda net with a zero final layer outputs 0.5")
{
  std::mt19937_64 rng(6);
  auto net = micro_net();
  force_lambda(net.lambda2(), 0.0);
  auto a = test::random_tensor({5, 16, 16}, rng, 0, 1);
  auto b = test::random_tensor({5, 16, 16}, rng, 0, 1);
  auto const lam = net.lambda2().forward(a, b);
  for (double v : lam.values()) {
    CHECK(v == 0.5);
  }
}

TEST_CASE("lambda weights depend on the band")
{
  std::mt19937_64 rng(7);
  auto net = micro_net();
  Tensor a({4, 16, 16}), b({4, 16, 16});
  for (std::size_t i = 0; i < a.size(); ++i) {
    double const band = static_cast<double>(i / 256);
    a[i] = 0.2 * band + 0.1 * std::sin(0.3 * static_cast<double>(i));
    b[i] = 1.0 - 0.25 * band;
  }
  auto lam = net.lambda1().forward(a, b);
  double spread = 0;
  for (std::size_t k = 1; k < lam.size(); ++k) {
    spread = std::max(spread, std::abs(lam[k] - lam[0]));
  }
  CHECK(spread > 1e-6);
}

TEST_CASE("convex combination endpoints are exact")
{
  std::mt19937_64 rng(8);
  auto y = test::random_tensor({5, 8, 8}, rng, -3, 3);
  auto x = test::random_tensor({5, 8, 8}, rng, -3, 3);
  CHECK(convex_combine(y, x, Tensor({5}, 1.0)) == x);
  CHECK(convex_combine(y, x, Tensor({5}, 0.0)) == y);
}

TEST_CASE("refine step endpoint identities hold through the weight nets")
{
  std::mt19937_64 rng(9);
  auto net = micro_net();
  auto y = test::random_tensor({6, 16, 16}, rng, 0, 1);
  RefinementState st;
  st.x_current = net.coarse_estimate(y);
  st.z_current = y;

  force_lambda(net.lambda1(), -1000.0); // sigmoid underflows to 0
  auto s0 = net.refine_step(st, y);
  CHECK(s0.z_current == y);
  CHECK(s0.iteration == 1);

  force_lambda(net.lambda1(), 1000.0);
  auto s1 = net.refine_step(st, y);
  CHECK(s1.z_current == st.x_current);

  force_lambda(net.lambda2(), 1000.0);
  auto s2 = net.refine_step(st, y);
  CHECK(s2.x_current == st.x_current);
}

TEST_CASE("z lies between y and the previous estimate")
{
  std::mt19937_64 rng(10);
  auto net = micro_net();
  auto y = test::random_tensor({6, 16, 16}, rng, 0, 1);
  RefinementState st{net.coarse_estimate(y), y, 0, {}, {}};
  auto next = net.refine_step(st, y);
  for (std::size_t i = 0; i < y.size(); ++i) {
    double const lo = std::min(y[i], st.x_current[i]);
    double const hi = std::max(y[i], st.x_current[i]);
    CHECK(next.z_current[i] >= lo);
    CHECK(next.z_current[i] <= hi);
  }
}

TEST_CASE("forward trace")
{
  std::mt19937_64 rng(11);
  auto net = micro_net(3);
  auto y = test::random_tensor({4, 16, 16}, rng, 0, 1);
  auto out0 = net.forward(y, 0);
  CHECK(out0.trace.size() == 1);
  CHECK(out0.x == net.coarse_estimate(y));
  auto out3 = net.forward(y, 3);
  CHECK(out3.trace.size() == 4);
  CHECK(out3.trace.front() == out0.x);
  CHECK(out3.trace.back() == out3.x);
  CHECK_THROWS_AS(net.forward(y, 4), std::invalid_argument);
}

TEST_CASE("refinement nets do not share parameters")
{
  auto net = micro_net(3);
  auto params = net.parameters();
  std::size_t refine_kernels = 0;
  for (auto const &p : params) {
    refine_kernels += p.name.rfind("refine", 0) == 0;
  }
  CHECK(refine_kernels == 3 * 8);
  CHECK_FALSE(net.refine(0).encoder_layers()[0].kernel == net.refine(1).encoder_layers()[0].kernel);
}

TEST_CASE("bad configurations are rejected")
{
  auto c = NetworkConfig::micro();
  c.coarse.decoder = {16, 8, 5, 1};
  CHECK_THROWS_AS(IlrNet{c}, std::invalid_argument);
  c = NetworkConfig::micro();
  c.coarse.rmm_position = 3;
  CHECK_THROWS_AS(IlrNet{c}, std::invalid_argument);
  c = NetworkConfig::micro();
  c.lambda.channels = {3, 4};
  CHECK_THROWS_AS(IlrNet{c}, std::invalid_argument);
  auto net = micro_net();
  CHECK_THROWS_AS(net.coarse_estimate(Tensor({16, 16})), ShapeError);
  CHECK_THROWS_AS(net.coarse_estimate(Tensor({1, 16, 16})), ShapeError);
}

static void check_network_gradient(std::uint64_t seed)
{
  std::mt19937_64 rng(seed);
  auto net = micro_net(2, seed + 1);
  // zero biases leave dead regions with pre-activations exactly at the relu kink
  Rng br(99);
  for (auto &p : net.parameters()) {
    if (p.name.ends_with(".bias")) {
      for (double &v : p.value->span()) {
        v = br.uniform(-0.1, 0.1);
      }
    }
  }
  net.coarse().set_threshold_logit(-1.0);
  auto y = test::random_tensor({8, 16, 16}, rng, 0, 1);
  auto target = test::random_tensor({8, 16, 16}, rng, 0, 1);
  std::size_t const K = 2;

  IlrNet::Cache cache;
  auto out = net.forward(y, K, &cache);
  net.zero_grad();
  Tensor gy = net.backward(cache, out.x - target);

  GradCheckOptions opts;
  opts.tolerance = 1e-3;
  opts.max_coords = 24;
  // The refine and lambda paths carry large gradients through many relus, so 1e-5 can straddle a
  // kink; the deep coarse-net kernels have gradients near 1e-4 and need the larger step to stay
  // above roundoff in a loss of order 1e2.
  opts.step = 1e-6;

  auto ry = grad_check([&](Tensor const &v) { return loss_of(net, v, target, K); }, y, gy, opts);
  INFO("input max rel error " << ry.max_rel_error);
  CHECK(ry.passed);

  for (auto const &p : net.parameters()) {
    Tensor const saved = *p.value;
    opts.step = p.name.starts_with("coarse.") ? 1e-5 : 1e-6;
    auto r = grad_check(
      [&](Tensor const &v) {
        *p.value = v;
        double const l = loss_of(net, y, target, K);
        *p.value = saved;
        return l;
      },
      saved, *p.grad, opts);
    INFO(p.name << " max rel error " << r.max_rel_error);
    CHECK(r.passed);
  }
}

TEST_CASE("end-to-end gradient on the micro network")
{
  for (std::uint64_t const seed : {12, 31, 47}) {
    CAPTURE(seed);
    check_network_gradient(seed);
  }
}

TEST_CASE("gradients accumulate across backward calls")
{
  std::mt19937_64 rng(14);
  auto net = micro_net(1);
  auto y = test::random_tensor({4, 16, 16}, rng, 0, 1);
  IlrNet::Cache cache;
  auto out = net.forward(y, 1, &cache);
  net.zero_grad();
  net.backward(cache, out.x);
  auto const once = *net.parameters().front().grad;
  net.backward(cache, out.x);
  CHECK(max_abs_diff(*net.parameters().front().grad, 2.0 * once) <= 1e-12 * (1 + max_abs_diff(once, Tensor(once.shape()))));
}

TEST_CASE("checkpoint round trip is bit-exact")
{
  std::mt19937_64 rng(15);
  auto net = micro_net(2, 21);
  net.coarse().set_threshold_logit(-1.2345678901234567);
  auto path = temp_file("roundtrip.ilrn");
  save_network(path, net);
  auto loaded = load_network(path);

  auto a = net.parameters();
  auto b = loaded.parameters();
  REQUIRE(a.size() == b.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    CHECK(a[i].name == b[i].name);
    CHECK(*a[i].value == *b[i].value);
  }
  CHECK(loaded.config().iterations == 2);
  auto y = test::random_tensor({4, 16, 16}, rng, 0, 1);
  CHECK(net.forward(y).x == loaded.forward(y).x);

  // writing the loaded network reproduces the file byte for byte
  auto path2 = temp_file("roundtrip2.ilrn");
  save_network(path2, loaded);
  std::ifstream f1(path, std::ios::binary), f2(path2, std::ios::binary);
  std::string s1(std::istreambuf_iterator<char>(f1), {}), s2(std::istreambuf_iterator<char>(f2), {});
  CHECK(s1 == s2);
  std::filesystem::remove(path);
  std::filesystem::remove(path2);
}

TEST_CASE("checkpoint header layout")
{
  auto path = temp_file("layout.ilrn");
  write_checkpoint(path, {{"w", Tensor({2}, std::vector<double>{1.0, -2.5})}});
  std::ifstream f(path, std::ios::binary);
  std::string s(std::istreambuf_iterator<char>(f), {});
  // magic 8 + count 4 + name len 4 + name 1 + rank 4 + extent 8 + values 16
  REQUIRE(s.size() == 45);
  CHECK(s.substr(0, 8) == "ILRN0001");
  CHECK(s[8] == 1);
  CHECK(s[12] == 1);
  CHECK(s[16] == 'w');
  CHECK(s[17] == 1);
  CHECK(s[21] == 2);
  double v;
  std::memcpy(&v, s.data() + 37, 8);
  CHECK(v == -2.5);
  auto back = read_checkpoint(path);
  REQUIRE(back.size() == 1);
  CHECK(back[0].name == "w");
  CHECK(back[0].value == Tensor({2}, std::vector<double>{1.0, -2.5}));
  std::filesystem::remove(path);
}

TEST_CASE("corrupt checkpoints are rejected")
{
  auto path = temp_file("corrupt.ilrn");
  {
    std::ofstream f(path, std::ios::binary);
    f << "XXXXXXXX";
  }
  CHECK_THROWS_AS(read_checkpoint(path), CheckpointError);

  write_checkpoint(path, {{"w", Tensor({3}, 1.0)}});
  std::filesystem::resize_file(path, std::filesystem::file_size(path) - 4);
  CHECK_THROWS_AS(read_checkpoint(path), CheckpointError);

  write_checkpoint(path, {{"w", Tensor({3}, 1.0)}});
  CHECK_THROWS_AS(network_from_tensors(read_checkpoint(path)), CheckpointError);
  std::filesystem::remove(path);
}
