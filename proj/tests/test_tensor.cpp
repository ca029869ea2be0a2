#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <bit>
#include <cmath>

#include "doctest.h"
#include "hsimamba/gradcheck.hpp"
#include "hsimamba/tensor.hpp"
#include "test_support.hpp"

using hsi::Tensor;
using test_support::random_tensor;
using test_support::weighted_sum;

namespace {

using D = double;

hsi::GradCheckReport check_op(const std::function<Tensor<D>()>& forward,
                              std::vector<std::pair<std::string, Tensor<D>>> params,
                              std::uint64_t cotangent_seed = 99) {
  auto loss_fn = [&forward, cotangent_seed]() {
    return weighted_sum(forward(), cotangent_seed);
  };
  return hsi::finite_difference_check(loss_fn, params);
}

}  // namespace

TEST_CASE("linear matches hand examples") {
  auto x = Tensor<D>::from_data({1, 2}, {1, 2});
  auto wi = Tensor<D>::from_data({2, 2}, {1, 0, 0, 1});
  auto b0 = Tensor<D>::zeros({2});
  auto y = hsi::linear(x, wi, b0);
  CHECK(y.at({0, 0}) == doctest::Approx(1.0));
  CHECK(y.at({0, 1}) == doctest::Approx(2.0));

  auto w = Tensor<D>::from_data({2, 1}, {3, 4});
  auto b = Tensor<D>::from_data({1}, {1});
  auto y2 = hsi::linear(x, w, b);
  CHECK(y2.item() == doctest::Approx(12.0));
}

TEST_CASE("linear rejects non-conforming shapes") {
  auto x = Tensor<D>::zeros({2, 3});
  auto w = Tensor<D>::zeros({4, 2});
  auto b = Tensor<D>::zeros({2});
  CHECK_THROWS_AS(hsi::linear(x, w, b), hsi::ShapeError);
}

TEST_CASE("linear gradcheck") {
  hsi::Rng rng(11);
  auto x = random_tensor<D>(rng, {2, 5});
  auto w = random_tensor<D>(rng, {5, 3});
  auto b = random_tensor<D>(rng, {3});
  x.set_requires_grad(true);
  w.set_requires_grad(true);
  b.set_requires_grad(true);
  auto rep = check_op([&]() { return hsi::linear(x, w, b); },
                      {{"x", x}, {"w", w}, {"b", b}});
  CHECK(rep.max_rel_err <= 1e-6);
}

TEST_CASE("conv1d identity kernel is the identity map bit-exactly") {
  hsi::Rng rng(21);
  auto x = random_tensor<D>(rng, {2, 3, 7});
  std::vector<D> kv(3 * 3 * 3, 0.0);
  for (int c = 0; c < 3; ++c) kv[(c * 3 + c) * 3 + 1] = 1.0;
  auto k = Tensor<D>::from_data({3, 3, 3}, std::move(kv));
  auto b = Tensor<D>::zeros({3});
  auto y = hsi::conv1d(x, k, b);
  CHECK(test_support::bitwise_equal(y.values(), x.values()));
}

TEST_CASE("conv1d zero-padded box kernel") {
  auto x = Tensor<D>::from_data({1, 1, 3}, {1, 2, 3});
  auto k = Tensor<D>::from_data({1, 1, 3}, {1, 1, 1});
  auto b = Tensor<D>::zeros({1});
  auto y = hsi::conv1d(x, k, b);
  CHECK(y.at({0, 0, 0}) == doctest::Approx(3.0));
  CHECK(y.at({0, 0, 1}) == doctest::Approx(6.0));
  CHECK(y.at({0, 0, 2}) == doctest::Approx(5.0));
}

TEST_CASE("conv1d rejects channel mismatch") {
  auto x = Tensor<D>::zeros({1, 2, 5});
  auto k = Tensor<D>::zeros({2, 3, 3});
  auto b = Tensor<D>::zeros({2});
  CHECK_THROWS_AS(hsi::conv1d(x, k, b), hsi::ShapeError);
}

TEST_CASE("conv1d gradcheck") {
  hsi::Rng rng(31);
  auto x = random_tensor<D>(rng, {1, 4, 7});
  auto k = random_tensor<D>(rng, {4, 4, 3});
  auto b = random_tensor<D>(rng, {4});
  x.set_requires_grad(true);
  k.set_requires_grad(true);
  b.set_requires_grad(true);
  auto rep = check_op([&]() { return hsi::conv1d(x, k, b); },
                      {{"x", x}, {"kernel", k}, {"bias", b}});
  CHECK(rep.max_rel_err <= 1e-6);
}

TEST_CASE("conv2d gradcheck") {
  hsi::Rng rng(32);
  auto x = random_tensor<D>(rng, {1, 2, 4, 4});
  auto k = random_tensor<D>(rng, {3, 2, 3, 3});
  auto b = random_tensor<D>(rng, {3});
  x.set_requires_grad(true);
  k.set_requires_grad(true);
  b.set_requires_grad(true);
  auto rep = check_op([&]() { return hsi::conv2d(x, k, b); },
                      {{"x", x}, {"kernel", k}, {"bias", b}});
  CHECK(rep.max_rel_err <= 1e-6);
}

TEST_CASE("layernorm normalizes rows") {
  auto g = Tensor<D>::full({3}, 1.0);
  auto be = Tensor<D>::zeros({3});
  auto x = Tensor<D>::from_data({1, 3}, {5, 5, 5});
  auto y = hsi::layernorm(x, g, be, 1e-5);
  for (std::size_t i = 0; i < 3; ++i) CHECK(std::fabs(y.values()[i]) < 1e-12);

  auto g2 = Tensor<D>::full({2}, 1.0);
  auto b2 = Tensor<D>::zeros({2});
  auto x2 = Tensor<D>::from_data({1, 2}, {1, -1});
  auto y2 = hsi::layernorm(x2, g2, b2, 1e-5);
  CHECK(y2.at({0, 0}) == doctest::Approx(1.0).epsilon(1e-4));
  CHECK(y2.at({0, 1}) == doctest::Approx(-1.0).epsilon(1e-4));
}

TEST_CASE("layernorm pre-affine rows have zero mean, unit variance") {
  hsi::Rng rng(41);
  const std::size_t n = 6, f = 9;
  auto x = random_tensor<D>(rng, {n, f}, -3.0, 3.0);
  auto g = Tensor<D>::full({f}, 1.0);
  auto b = Tensor<D>::zeros({f});
  auto y = hsi::layernorm(x, g, b, 1e-5);
  for (std::size_t r = 0; r < n; ++r) {
    double mu = 0, var = 0;
    for (std::size_t i = 0; i < f; ++i) mu += y.values()[r * f + i];
    mu /= f;
    for (std::size_t i = 0; i < f; ++i) {
      double d = y.values()[r * f + i] - mu;
      var += d * d;
    }
    var /= f;
    CHECK(std::fabs(mu) <= 1e-6);
    CHECK(std::fabs(var - 1.0) <= 1e-4);
  }
}

TEST_CASE("layernorm rejects mismatched affine params") {
  auto x = Tensor<D>::zeros({2, 4});
  auto g = Tensor<D>::full({3}, 1.0);
  auto b = Tensor<D>::zeros({4});
  CHECK_THROWS_AS(hsi::layernorm(x, g, b, 1e-5), hsi::ShapeError);
}

TEST_CASE("layernorm gradcheck") {
  hsi::Rng rng(51);
  auto x = random_tensor<D>(rng, {3, 6});
  auto g = random_tensor<D>(rng, {6}, 0.5, 1.5);
  auto b = random_tensor<D>(rng, {6});
  x.set_requires_grad(true);
  g.set_requires_grad(true);
  b.set_requires_grad(true);
  auto rep = check_op([&]() { return hsi::layernorm(x, g, b, 1e-5); },
                      {{"x", x}, {"gamma", g}, {"beta", b}});
  CHECK(rep.max_rel_err <= 1e-6);
}

TEST_CASE("elementwise examples") {
  auto z = Tensor<D>::zeros({1});
  CHECK(hsi::silu(z).item() == doctest::Approx(0.0));

  hsi::Rng rng(61);
  auto x = random_tensor<D>(rng, {2, 3, 4});
  auto once = hsi::flip(x, -1);
  auto twice = hsi::flip(once, -1);
  CHECK(test_support::bitwise_equal(twice.values(), x.values()));

  auto ones = Tensor<D>::full({2, 3, 4}, 1.0);
  auto m = hsi::mean(ones, 2);
  CHECK(m.shape() == std::vector<std::size_t>{2, 3});
  for (auto v : m.values()) CHECK(v == doctest::Approx(1.0));
}

TEST_CASE("elementwise gradchecks") {
  hsi::Rng rng(71);
  auto x = random_tensor<D>(rng, {3, 4}, -2.0, 2.0);
  x.set_requires_grad(true);
  CHECK(check_op([&]() { return hsi::silu(x); }, {{"x", x}}).max_rel_err <= 1e-6);
  CHECK(check_op([&]() { return hsi::tanh(x); }, {{"x", x}}).max_rel_err <= 1e-6);
  CHECK(check_op([&]() { return hsi::mul_scalar(x, 1.7); }, {{"x", x}}).max_rel_err <= 1e-6);

  auto y = random_tensor<D>(rng, {2, 3, 5});
  y.set_requires_grad(true);
  CHECK(check_op([&]() { return hsi::flip(y, 1); }, {{"y", y}}).max_rel_err <= 1e-6);
  CHECK(check_op([&]() { return hsi::mean(y, 2); }, {{"y", y}}).max_rel_err <= 1e-6);
  CHECK(check_op([&]() { return hsi::mean(y, 0); }, {{"y", y}}).max_rel_err <= 1e-6);
  CHECK(check_op([&]() { return hsi::swap_axes(y, 1, 2); }, {{"y", y}}).max_rel_err <= 1e-6);
  CHECK(check_op([&]() { return hsi::reshape(y, {6, 5}); }, {{"y", y}}).max_rel_err <= 1e-6);
}

TEST_CASE("broadcast add and mul") {
  auto a = Tensor<D>::from_data({2, 3}, {1, 2, 3, 4, 5, 6});
  auto v = Tensor<D>::from_data({1, 3}, {10, 20, 30});
  auto s = hsi::add(a, v);
  CHECK(s.at({0, 0}) == doctest::Approx(11));
  CHECK(s.at({1, 2}) == doctest::Approx(36));

  auto p = hsi::mul(a, v);
  CHECK(p.at({1, 1}) == doctest::Approx(100));

  auto bad = Tensor<D>::zeros({1, 2});
  CHECK_THROWS_AS(hsi::add(a, bad), hsi::ShapeError);
}

TEST_CASE("broadcast gradchecks") {
  hsi::Rng rng(81);
  auto a = random_tensor<D>(rng, {2, 4, 3});
  auto b = random_tensor<D>(rng, {1, 4, 1});
  a.set_requires_grad(true);
  b.set_requires_grad(true);
  CHECK(check_op([&]() { return hsi::add(a, b); }, {{"a", a}, {"b", b}}).max_rel_err <= 1e-6);
  CHECK(check_op([&]() { return hsi::mul(a, b); }, {{"a", a}, {"b", b}}).max_rel_err <= 1e-6);

  auto m = random_tensor<D>(rng, {3, 4});
  auto v = random_tensor<D>(rng, {4});
  m.set_requires_grad(true);
  v.set_requires_grad(true);
  CHECK(check_op([&]() { return hsi::matvec(m, v); }, {{"m", m}, {"v", v}}).max_rel_err <= 1e-6);
}

TEST_CASE("softmax cross entropy examples") {
  auto uniform = Tensor<D>::from_data({1, 2}, {0, 0});
  auto loss = hsi::softmax_cross_entropy(uniform, {0});
  CHECK(loss.item() == doctest::Approx(std::log(2.0)));

  auto saturated = Tensor<D>::from_data({1, 2}, {1000, 0});
  auto loss2 = hsi::softmax_cross_entropy(saturated, {0});
  CHECK(std::isfinite(loss2.item()));
  CHECK(loss2.item() == doctest::Approx(0.0).epsilon(1e-12));

  CHECK_THROWS_AS(hsi::softmax_cross_entropy(uniform, {2}), hsi::ValueError);
  CHECK_THROWS_AS(hsi::softmax_cross_entropy(uniform, {-1}), hsi::ValueError);
}

TEST_CASE("softmax cross entropy gradcheck") {
  hsi::Rng rng(91);
  auto logits = random_tensor<D>(rng, {4, 5});
  logits.set_requires_grad(true);
  std::vector<int> labels{0, 3, 1, 4};
  auto loss_fn = [&]() { return hsi::softmax_cross_entropy(logits, labels); };
  auto rep = hsi::finite_difference_check(loss_fn, {{"logits", logits}});
  CHECK(rep.max_rel_err <= 1e-6);
}

TEST_CASE("backward populates leaf grads exactly once") {
  auto x = Tensor<D>::from_data({3}, {2, -1, 4});
  auto w = Tensor<D>::from_data({3}, {0.5, 0.25, -2});
  w.set_requires_grad(true);

  {
    hsi::Tape<D> tape;
    auto loss = hsi::sum(hsi::mul(w, x));
    tape.backward(loss);
  }
  REQUIRE(w.has_grad());
  for (std::size_t i = 0; i < 3; ++i) CHECK(w.grad()[i] == doctest::Approx(x.values()[i]));

  // Two uses of the same leaf accumulate.
  w.zero_grad();
  {
    hsi::Tape<D> tape;
    auto loss = hsi::sum(hsi::add(hsi::mul(w, x), hsi::mul(w, x)));
    tape.backward(loss);
  }
  for (std::size_t i = 0; i < 3; ++i) CHECK(w.grad()[i] == doctest::Approx(2 * x.values()[i]));
}

TEST_CASE("backward on non-scalar is rejected") {
  auto w = Tensor<D>::from_data({2}, {1, 2});
  w.set_requires_grad(true);
  hsi::Tape<D> tape;
  auto y = hsi::mul_scalar(w, 2.0);
  CHECK_THROWS_AS(tape.backward(y), hsi::ShapeError);
}

TEST_CASE("tape is single use and non-reentrant") {
  auto w = Tensor<D>::scalar(1.5);
  w.set_requires_grad(true);
  hsi::Tape<D> tape;
  auto loss = hsi::mul_scalar(w, 3.0);
  tape.backward(loss);
  CHECK_THROWS_AS(tape.backward(loss), hsi::ValueError);
  CHECK_THROWS_AS(hsi::Tape<D>{}, hsi::ValueError);
}

TEST_CASE("non-finite results raise instead of propagating") {
  auto big = Tensor<D>::full({2}, 1e308);
  CHECK_THROWS_AS(hsi::add(big, big), hsi::NumericsError);

  auto inf = Tensor<D>::full({2}, std::numeric_limits<D>::infinity());
  auto one = Tensor<D>::full({2}, 1.0);
  CHECK_THROWS_AS(hsi::mul(inf, one), hsi::NumericsError);
}

TEST_CASE("ops stay finite for inputs up to 1e6") {
  hsi::Rng rng(101);
  auto x = random_tensor<D>(rng, {4, 8}, -1e6, 1e6);
  CHECK_NOTHROW(hsi::silu(x));
  CHECK_NOTHROW(hsi::tanh(x));
  auto g = Tensor<D>::full({8}, 1.0);
  auto b = Tensor<D>::zeros({8});
  CHECK_NOTHROW(hsi::layernorm(x, g, b, 1e-5));
  CHECK_NOTHROW(hsi::softmax_cross_entropy(x, {0, 1, 2, 3}));
}

TEST_CASE("float32 path works end to end") {
  hsi::Rng rng(111);
  auto x = random_tensor<float>(rng, {2, 4});
  auto w = random_tensor<float>(rng, {4, 3});
  auto b = random_tensor<float>(rng, {3});
  w.set_requires_grad(true);
  b.set_requires_grad(true);
  hsi::Tape<float> tape;
  auto loss = hsi::softmax_cross_entropy(hsi::linear(x, w, b), {0, 2});
  tape.backward(loss);
  CHECK(w.has_grad());
  CHECK(b.has_grad());
}
