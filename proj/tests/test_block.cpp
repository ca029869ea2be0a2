#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <cmath>
#include <vector>

#include "doctest.h"
#include "hsimamba/block.hpp"
#include "hsimamba/gradcheck.hpp"
#include "test_support.hpp"

using hsi::BlockConfig;
using hsi::BlockParams;
using hsi::Tensor;
using test_support::bitwise_equal;
using test_support::random_tensor;

namespace {

using D = double;

BlockConfig tiny_config() {
  BlockConfig cfg;
  cfg.spatial_dim = 3;
  cfg.num_bands = 4;
  cfg.hidden_dim = 2;
  cfg.output_dim = 2;
  return cfg;
}

void copy_values(Tensor<D>& dst, const Tensor<D>& src) {
  REQUIRE(dst.numel() == src.numel());
  auto d = dst.mutable_values();
  auto s = src.values();
  for (std::size_t i = 0; i < s.size(); ++i) d[i] = s[i];
}

/// Makes both directions indistinguishable: shared projections, kernels,
/// transition matrix, and output head.
void tie_directions(BlockParams<D>& p) {
  copy_values(p.w_z, p.w_x);
  copy_values(p.b_z, p.b_x);
  copy_values(p.k_bwd, p.k_fwd);
  copy_values(p.kb_bwd, p.kb_fwd);
  copy_values(p.b_mat, p.a_mat);
  copy_values(p.w_bwd, p.w_fwd);
  copy_values(p.b_bwd, p.b_fwd);
}

std::vector<std::pair<std::string, Tensor<D>>> named_params(BlockParams<D>& p) {
  std::vector<std::pair<std::string, Tensor<D>>> out;
  hsi::for_each_param(p, [&](const char* name, Tensor<D>& t) { out.emplace_back(name, t); });
  return out;
}

}  // namespace

TEST_CASE("init is deterministic and respects bounds") {
  auto cfg = tiny_config();
  auto a = hsi::init_block_params<D>(cfg, 42);
  auto b = hsi::init_block_params<D>(cfg, 42);
  auto c = hsi::init_block_params<D>(cfg, 43);

  auto pa = named_params(a);
  auto pb = named_params(b);
  bool any_differs_from_c = false;
  auto pc = named_params(c);
  for (std::size_t i = 0; i < pa.size(); ++i) {
    CHECK(bitwise_equal(pa[i].second.values(), pb[i].second.values()));
    if (!bitwise_equal(pa[i].second.values(), pc[i].second.values())) any_differs_from_c = true;
  }
  CHECK(any_differs_from_c);

  for (auto v : a.delta.values()) CHECK(v == doctest::Approx(0.1));

  const double bound = 1.0 / std::sqrt(static_cast<double>(cfg.projection_in()));
  for (auto v : a.w_x.values()) CHECK(std::fabs(v) <= bound);
  const double conv_bound = 1.0 / std::sqrt(3.0 * cfg.hidden_dim);
  for (auto v : a.k_fwd.values()) CHECK(std::fabs(v) <= conv_bound);
}

TEST_CASE("config validation") {
  BlockConfig cfg = tiny_config();
  cfg.spatial_dim = 4;
  CHECK_THROWS_AS(cfg.validate(), hsi::ValueError);
  cfg = tiny_config();
  cfg.num_bands = 2;
  CHECK_THROWS_AS(cfg.validate(), hsi::ValueError);
  cfg = tiny_config();
  cfg.delta_init = 0.0;
  CHECK_THROWS_AS(cfg.validate(), hsi::ValueError);
}

TEST_CASE("projection shapes, spectral and literal") {
  hsi::Rng rng(5);
  BlockConfig cfg;
  cfg.spatial_dim = 3;
  cfg.num_bands = 8;
  cfg.hidden_dim = 4;
  cfg.output_dim = 3;

  auto x = random_tensor<D>(rng, {2, 3, 3, 8});
  {
    auto params = hsi::init_block_params<D>(cfg, 1);
    auto proj = hsi::project_inputs(x, params, cfg);
    CHECK(proj.x_proj.shape() == std::vector<std::size_t>{2, 4, 8});
    CHECK(proj.z_proj_reversed.shape() == std::vector<std::size_t>{2, 4, 8});
  }
  {
    BlockConfig lit = cfg;
    lit.sequence_mode = hsi::SequenceMode::kLiteral;
    auto params = hsi::init_block_params<D>(lit, 1);
    auto proj = hsi::project_inputs(x, params, lit);
    CHECK(proj.x_proj.shape() == std::vector<std::size_t>{2, 4, 1});
  }
}

TEST_CASE("flip reversal really reverses the z sequence") {
  hsi::Rng rng(6);
  BlockConfig cfg;
  cfg.spatial_dim = 3;
  cfg.num_bands = 5;
  cfg.hidden_dim = 4;
  cfg.output_dim = 3;
  auto params = hsi::init_block_params<D>(cfg, 2);
  // With tied projections the z path equals the x path, so the reversed z
  // sequence must be exactly the flipped x projection.
  copy_values(params.w_z, params.w_x);
  copy_values(params.b_z, params.b_x);

  auto x = random_tensor<D>(rng, {2, 3, 3, 5});
  auto proj = hsi::project_inputs(x, params, cfg);
  auto unflipped = hsi::flip(proj.z_proj_reversed, 2);
  CHECK(bitwise_equal(unflipped.values(), proj.x_proj.values()));
}

TEST_CASE("input shape mismatches are rejected") {
  auto cfg = tiny_config();
  auto params = hsi::init_block_params<D>(cfg, 3);
  auto bad = Tensor<D>::zeros({1, 3, 3, 7});
  CHECK_THROWS_AS(hsi::project_inputs(bad, params, cfg), hsi::ShapeError);
}

TEST_CASE("directional states: zero input gives silu(bias)") {
  const std::size_t e = 3, l = 5;
  BlockConfig cfg = tiny_config();
  cfg.hidden_dim = static_cast<int>(e);
  auto params = hsi::init_block_params<D>(cfg, 4);
  auto kb = params.kb_fwd.mutable_values();
  kb[0] = 0.3;
  kb[1] = -1.2;
  kb[2] = 2.0;

  hsi::ProjectedInputs<D> proj;
  proj.x_proj = Tensor<D>::zeros({1, e, l});
  proj.z_proj_reversed = Tensor<D>::zeros({1, e, l});
  auto states = hsi::directional_states(proj, params);
  for (std::size_t c = 0; c < e; ++c) {
    const double b = kb[c];
    const double expect = b / (1.0 + std::exp(-b));
    for (std::size_t i = 0; i < l; ++i) {
      CHECK(states.silu_forward.at({0, c, i}) == doctest::Approx(expect));
    }
  }
  CHECK(states.conv_forward.shape() == std::vector<std::size_t>{1, e, l});
  CHECK(states.silu_backward.shape() == std::vector<std::size_t>{1, e, l});
}

TEST_CASE("directional states: identity kernel passes the projection through") {
  hsi::Rng rng(7);
  const std::size_t e = 3, l = 6;
  BlockConfig cfg = tiny_config();
  cfg.hidden_dim = static_cast<int>(e);
  auto params = hsi::init_block_params<D>(cfg, 5);
  std::vector<D> ident(e * e * 3, 0.0);
  for (std::size_t c = 0; c < e; ++c) ident[(c * e + c) * 3 + 1] = 1.0;
  copy_values(params.k_fwd, Tensor<D>::from_data({e, e, 3}, std::move(ident)));
  std::fill(params.kb_fwd.mutable_values().begin(), params.kb_fwd.mutable_values().end(), 0.0);

  hsi::ProjectedInputs<D> proj;
  proj.x_proj = random_tensor<D>(rng, {2, e, l});
  proj.z_proj_reversed = random_tensor<D>(rng, {2, e, l});
  auto states = hsi::directional_states(proj, params);
  auto expected = hsi::silu(proj.x_proj);
  CHECK(bitwise_equal(states.silu_forward.values(), expected.values()));
}

TEST_CASE("state update: zero A means plain tanh of the conv output") {
  hsi::Rng rng(8);
  const std::size_t e = 4, l = 5;
  BlockConfig cfg = tiny_config();
  cfg.hidden_dim = static_cast<int>(e);
  auto params = hsi::init_block_params<D>(cfg, 6);
  std::fill(params.a_mat.mutable_values().begin(), params.a_mat.mutable_values().end(), 0.0);

  hsi::DirectionalStates<D> states;
  states.conv_forward = random_tensor<D>(rng, {1, e, l});
  states.conv_backward = random_tensor<D>(rng, {1, e, l});
  auto update = hsi::state_update(states, params);
  auto expected = hsi::tanh(states.conv_forward);
  CHECK(bitwise_equal(update.h_forward.values(), expected.values()));
}

TEST_CASE("state update stays strictly inside (-1, 1)") {
  hsi::Rng rng(9);
  const std::size_t e = 4, l = 7;
  BlockConfig cfg = tiny_config();
  cfg.hidden_dim = static_cast<int>(e);
  auto params = hsi::init_block_params<D>(cfg, 7);
  hsi::DirectionalStates<D> states;
  states.conv_forward = random_tensor<D>(rng, {3, e, l}, -10.0, 10.0);
  states.conv_backward = random_tensor<D>(rng, {3, e, l}, -10.0, 10.0);
  auto update = hsi::state_update(states, params);
  for (auto v : update.h_forward.values()) CHECK((v > -1.0 && v < 1.0));
  for (auto v : update.h_backward.values()) CHECK((v > -1.0 && v < 1.0));

  // Same property through the full block on random patches.
  BlockConfig full = tiny_config();
  auto fparams = hsi::init_block_params<D>(full, 23);
  auto x = random_tensor<D>(rng, {4, 3, 3, 4}, -3.0, 3.0);
  auto out = hsi::block_forward(x, fparams, full);
  for (auto v : out.h_forward.values()) CHECK((v > -1.0 && v < 1.0));
  for (auto v : out.h_backward.values()) CHECK((v > -1.0 && v < 1.0));
}

TEST_CASE("state update matches a straight-line scalar re-implementation") {
  hsi::Rng rng(10);
  const std::size_t e = 2, l = 3;
  BlockConfig cfg = tiny_config();
  cfg.hidden_dim = static_cast<int>(e);
  auto params = hsi::init_block_params<D>(cfg, 8);

  hsi::ProjectedInputs<D> proj;
  proj.x_proj = random_tensor<D>(rng, {1, e, l});
  proj.z_proj_reversed = random_tensor<D>(rng, {1, e, l});
  auto states = hsi::directional_states(proj, params);
  auto update = hsi::state_update(states, params);

  // Independent scalar computation of the forward half, nested loops only.
  auto xv = proj.x_proj.values();
  auto kv = params.k_fwd.values();
  auto kb = params.kb_fwd.values();
  auto av = params.a_mat.values();
  auto dv = params.delta.values();
  for (std::size_t co = 0; co < e; ++co) {
    double bias = 0.0;
    for (std::size_t j = 0; j < e; ++j) bias += av[co * e + j] * dv[j];
    for (std::size_t t = 0; t < l; ++t) {
      double acc = kb[co];
      for (std::size_t ci = 0; ci < e; ++ci) {
        for (int d = -1; d <= 1; ++d) {
          const int src = static_cast<int>(t) + d;
          if (src < 0 || src >= static_cast<int>(l)) continue;
          acc += kv[(co * e + ci) * 3 + (d + 1)] * xv[ci * l + src];
        }
      }
      const double expect = std::tanh(acc + bias);
      CHECK(std::fabs(update.h_forward.at({0, co, t}) - expect) <= 1e-12);
    }
  }
}

TEST_CASE("reduce and project") {
  hsi::Rng rng(11);
  BlockConfig cfg = tiny_config();
  cfg.hidden_dim = 3;
  cfg.output_dim = 4;
  auto params = hsi::init_block_params<D>(cfg, 9);

  SUBCASE("L=1 mean is the identity on the single step") {
    auto h = random_tensor<D>(rng, {2, 3, 1});
    auto out = hsi::reduce_and_project(h, h, params);
    CHECK(out.reduced_forward.shape() == std::vector<std::size_t>{2, 3});
    for (std::size_t b = 0; b < 2; ++b) {
      for (std::size_t c = 0; c < 3; ++c) {
        CHECK(out.reduced_forward.at({b, c}) == doctest::Approx(h.at({b, c, 0})));
      }
    }
  }

  SUBCASE("zero projections leave only the biases") {
    std::fill(params.w_fwd.mutable_values().begin(), params.w_fwd.mutable_values().end(), 0.0);
    std::fill(params.w_bwd.mutable_values().begin(), params.w_bwd.mutable_values().end(), 0.0);
    auto bf = params.b_fwd.mutable_values();
    auto bb = params.b_bwd.mutable_values();
    for (std::size_t i = 0; i < bf.size(); ++i) {
      bf[i] = 0.5 * static_cast<double>(i);
      bb[i] = 1.0 - static_cast<double>(i);
    }
    auto h = random_tensor<D>(rng, {2, 3, 5});
    auto out = hsi::reduce_and_project(h, h, params);
    for (std::size_t b = 0; b < 2; ++b) {
      for (std::size_t o = 0; o < 4; ++o) {
        CHECK(out.y_combined.at({b, o}) == doctest::Approx(bf[o] + bb[o]));
      }
    }
  }

  SUBCASE("linear in h when biases are zero") {
    std::fill(params.b_fwd.mutable_values().begin(), params.b_fwd.mutable_values().end(), 0.0);
    std::fill(params.b_bwd.mutable_values().begin(), params.b_bwd.mutable_values().end(), 0.0);
    auto h = random_tensor<D>(rng, {2, 3, 5});
    const double alpha = 2.75;
    auto scaled = hsi::mul_scalar(h, alpha);
    auto base = hsi::reduce_and_project(h, h, params);
    auto big = hsi::reduce_and_project(scaled, scaled, params);
    for (std::size_t i = 0; i < base.y_combined.numel(); ++i) {
      CHECK(big.y_combined.values()[i] ==
            doctest::Approx(alpha * base.y_combined.values()[i]).epsilon(1e-10));
    }
  }
}

TEST_CASE("block forward shape contract over a config grid") {
  hsi::Rng rng(12);
  for (int p : {1, 3, 5}) {
    for (int ch : {3, 8}) {
      for (int e : {1, 4}) {
        for (auto mode : {hsi::SequenceMode::kSpectral, hsi::SequenceMode::kLiteral}) {
          BlockConfig cfg;
          cfg.spatial_dim = p;
          cfg.num_bands = ch;
          cfg.hidden_dim = e;
          cfg.output_dim = 5;
          cfg.sequence_mode = mode;
          auto params = hsi::init_block_params<D>(cfg, 13);
          auto x = random_tensor<D>(rng, {2, static_cast<std::size_t>(p),
                                          static_cast<std::size_t>(p),
                                          static_cast<std::size_t>(ch)});
          auto out = hsi::block_forward(x, params, cfg);
          const std::size_t l = cfg.sequence_len();
          const std::size_t ee = static_cast<std::size_t>(e);
          CHECK(out.x_proj.shape() == std::vector<std::size_t>{2, ee, l});
          CHECK(out.conv_forward.shape() == std::vector<std::size_t>{2, ee, l});
          CHECK(out.h_backward.shape() == std::vector<std::size_t>{2, ee, l});
          CHECK(out.reduced_forward.shape() == std::vector<std::size_t>{2, ee});
          CHECK(out.y_combined.shape() == std::vector<std::size_t>{2, 5});
        }
      }
    }
  }
}

TEST_CASE("y_combined is bit-exactly the sum of the direction outputs") {
  hsi::Rng rng(14);
  BlockConfig cfg;
  cfg.spatial_dim = 3;
  cfg.num_bands = 6;
  cfg.hidden_dim = 4;
  cfg.output_dim = 3;
  auto params = hsi::init_block_params<D>(cfg, 15);
  auto x = random_tensor<D>(rng, {3, 3, 3, 6});
  auto out = hsi::block_forward(x, params, cfg);
  for (std::size_t i = 0; i < out.y_combined.numel(); ++i) {
    const double expect = out.y_forward.values()[i] + out.y_backward.values()[i];
    CHECK(std::bit_cast<std::uint64_t>(out.y_combined.values()[i]) ==
          std::bit_cast<std::uint64_t>(expect));
  }
}

TEST_CASE("block gradcheck against finite differences") {
  hsi::Rng rng(16);
  auto run = [&](hsi::SequenceMode smode, hsi::ReverseMode rmode) {
    BlockConfig cfg = tiny_config();
    cfg.sequence_mode = smode;
    cfg.reverse_mode = rmode;
    auto params = hsi::init_block_params<D>(cfg, 17);
    auto x = random_tensor<D>(rng, {2, 3, 3, 4});
    auto loss_fn = [&]() {
      auto out = hsi::block_forward(x, params, cfg);
      return test_support::weighted_sum(out.y_combined, 3);
    };
    auto rep = hsi::finite_difference_check(loss_fn, named_params(params));
    CAPTURE(to_string(smode));
    CAPTURE(to_string(rmode));
    CHECK(rep.max_rel_err <= 1e-4);
  };
  run(hsi::SequenceMode::kSpectral, hsi::ReverseMode::kFlip);
  run(hsi::SequenceMode::kSpectral, hsi::ReverseMode::kLearned);
  run(hsi::SequenceMode::kLiteral, hsi::ReverseMode::kFlip);
}

TEST_CASE("gradients reach every parameter") {
  hsi::Rng rng(18);
  BlockConfig cfg = tiny_config();
  cfg.reverse_mode = hsi::ReverseMode::kLearned;
  auto params = hsi::init_block_params<D>(cfg, 19);
  auto x = random_tensor<D>(rng, {2, 3, 3, 4});
  {
    hsi::Tape<D> tape;
    auto out = hsi::block_forward(x, params, cfg);
    auto loss = test_support::weighted_sum(out.y_combined, 5);
    tape.backward(loss);
  }
  hsi::for_each_param(params, [&](const char* name, Tensor<D>& t) {
    CAPTURE(name);
    REQUIRE(t.has_grad());
    bool any_nonzero = false;
    for (auto g : t.grad()) {
      if (g != 0.0) any_nonzero = true;
    }
    CHECK(any_nonzero);
  });
}

TEST_CASE("band-reversed input with tied parameters reproduces the output") {
  hsi::Rng rng(20);
  for (int trial = 0; trial < 20; ++trial) {
    BlockConfig cfg;
    cfg.spatial_dim = 3;
    cfg.num_bands = 5 + (trial % 3);
    cfg.hidden_dim = 3;
    cfg.output_dim = 4;
    auto params = hsi::init_block_params<D>(cfg, 100 + trial);
    tie_directions(params);

    auto x = random_tensor<D>(rng, {2, 3, 3, static_cast<std::size_t>(cfg.num_bands)});
    auto reversed = hsi::flip(x, 3);
    auto out = hsi::block_forward(x, params, cfg);
    auto out_rev = hsi::block_forward(reversed, params, cfg);
    for (std::size_t i = 0; i < out.y_combined.numel(); ++i) {
      CHECK(std::fabs(out.y_combined.values()[i] - out_rev.y_combined.values()[i]) <= 1e-10);
    }
  }
}

TEST_CASE("disabled directions contribute exact zeros") {
  hsi::Rng rng(21);
  BlockConfig cfg = tiny_config();
  auto params = hsi::init_block_params<D>(cfg, 22);
  auto x = random_tensor<D>(rng, {2, 3, 3, 4});

  auto only_fwd = hsi::block_forward(x, params, cfg, true, false);
  for (auto v : only_fwd.y_backward.values()) CHECK(v == 0.0);
  auto both = hsi::block_forward(x, params, cfg);
  CHECK(bitwise_equal(only_fwd.y_forward.values(), both.y_forward.values()));
}
