#include "ilr/tensor.hpp"

#include "doctest.h"

using namespace ilr;

TEST_CASE("reshape keeps row-major order")
{
  Tensor t({2, 3}, {0, 1, 2, 3, 4, 5});
  auto flat = reshape(t, {6});
  CHECK(flat.shape() == Shape{6});
  for (std::size_t i = 0; i < 6; ++i) {
    CHECK(flat[i] == static_cast<double>(i));
  }
  CHECK(flat(4) == 4.0);
  CHECK(t(1, 2) == 5.0);
}

TEST_CASE("reshape round trip is identity")
{
  Tensor t({4, 8, 8});
  for (std::size_t i = 0; i < t.size(); ++i) {
    t[i] = 0.5 * static_cast<double>(i) - 3.0;
  }
  auto back = reshape(reshape(t, {4, 64}), {4, 8, 8});
  CHECK(back == t);
}

TEST_CASE("reshape rejects extent mismatch")
{
  Tensor t({2, 3});
  CHECK_THROWS_AS(reshape(t, {4}), ShapeError);
  CHECK_THROWS_AS(Tensor({2, 2}, std::vector<double>(5)), ShapeError);
  CHECK_THROWS_AS(Tensor({1, 1, 1, 1, 1, 1}), ShapeError);
}

TEST_CASE("arithmetic and reductions")
{
  Tensor a({3}, {1, 2, 3});
  Tensor b({3}, {4, 5, 6});
  CHECK(dot(a, b) == 32.0);
  CHECK(squared_norm(a) == 14.0);
  CHECK((a + b)[2] == 9.0);
  CHECK((2.0 * a)[1] == 4.0);
  CHECK(max_abs_diff(a, b) == 3.0);
  CHECK_THROWS_AS(a += Tensor({2}), ShapeError);
  auto f = cast<float>(a);
  CHECK(f[2] == 3.0f);
}
