#include "doctest.h"

#include <array>
#include <cmath>

#include "evsnn/lif.hpp"
#include "testing.hpp"

using namespace evsnn;
using namespace evsnn::testing;

namespace {

Tensor scalar(double v) { return Tensor({1}, {v}); }

}  // namespace

TEST_CASE("lif_step: subthreshold update") {
  LifParams p{0.5, 1.0, ResetMode::kSubtract};
  LifStepResult r = lif_step(LifState{scalar(0.0)}, scalar(1.0), p);
  CHECK(r.u_pre[0] == doctest::Approx(0.5).epsilon(1e-15));
  CHECK(r.spikes[0] == 0.0);
  CHECK(r.state.membrane[0] == doctest::Approx(0.5).epsilon(1e-15));
}

TEST_CASE("lif_step: spike and both reset modes") {
  LifParams sub{0.5, 1.0, ResetMode::kSubtract};
  LifStepResult rs = lif_step(LifState{scalar(1.6)}, scalar(1.0), sub);
  CHECK(rs.u_pre[0] == doctest::Approx(1.3).epsilon(1e-15));
  CHECK(rs.spikes[0] == 1.0);
  CHECK(rs.state.membrane[0] == doctest::Approx(0.3).epsilon(1e-14));

  LifParams zero{0.5, 1.0, ResetMode::kZero};
  LifStepResult rz = lif_step(LifState{scalar(1.6)}, scalar(1.0), zero);
  CHECK(rz.spikes[0] == 1.0);
  CHECK(rz.state.membrane[0] == 0.0);
}

TEST_CASE("lif_step: threshold reached exactly fires") {
  LifParams p{0.5, 1.0, ResetMode::kSubtract};
  // u_pre = 0.5 * 1.0 + 0.5 * 1.0 = 1.0 == threshold
  LifStepResult r = lif_step(LifState{scalar(1.0)}, scalar(1.0), p);
  CHECK(r.u_pre[0] == 1.0);
  CHECK(r.spikes[0] == 1.0);
}

TEST_CASE("lif_step: zero input leaks without spiking") {
  LifParams p{0.5, 1.0, ResetMode::kSubtract};
  LifState state{scalar(0.9)};
  double prev = 0.9;
  for (int t = 0; t < 20; ++t) {
    LifStepResult r = lif_step(state, scalar(0.0), p);
    CHECK(r.spikes[0] == 0.0);
    CHECK(std::abs(r.state.membrane[0]) < std::abs(prev));
    prev = r.state.membrane[0];
    state = r.state;
  }
}

TEST_CASE("lif leak law: |U(t)| = beta^t |U(0)| under zero input") {
  for (double beta : {0.25, 0.5, 0.9}) {
    LifParams p{beta, 10.0, ResetMode::kSubtract};  // high threshold: no spikes
    const double u0 = -0.75;
    LifState state{scalar(u0)};
    for (int t = 1; t <= 12; ++t) {
      state = lif_step(state, scalar(0.0), p).state;
      const double expected = std::pow(beta, t) * std::abs(u0);
      CHECK(std::abs(std::abs(state.membrane[0]) - expected) < 1e-12);
    }
  }
}

TEST_CASE("lif_step: reset postconditions on random tensors") {
  Rng rng(77);
  for (int trial = 0; trial < 25; ++trial) {
    const Tensor membrane = random_tensor({3, 4}, rng, -2.0, 2.0);
    const Tensor input = random_tensor({3, 4}, rng, -2.0, 2.0);
    for (ResetMode mode : {ResetMode::kSubtract, ResetMode::kZero}) {
      LifParams p{0.7, 0.9, mode};
      LifStepResult r = lif_step(LifState{membrane}, input, p);
      for (std::size_t i = 0; i < input.size(); ++i) {
        CHECK((r.spikes[i] == 0.0 || r.spikes[i] == 1.0));
        CHECK(r.spikes[i] == (r.u_pre[i] >= p.threshold ? 1.0 : 0.0));
        if (r.spikes[i] == 1.0) {
          if (mode == ResetMode::kZero) {
            CHECK(r.state.membrane[i] == 0.0);
          } else {
            CHECK(r.state.membrane[i] ==
                  doctest::Approx(r.u_pre[i] - p.threshold).epsilon(1e-14));
          }
        } else {
          CHECK(r.state.membrane[i] == r.u_pre[i]);
        }
      }
    }
  }
}

TEST_CASE("lif_step rejects shape mismatches") {
  LifParams p;
  CHECK_THROWS_AS(lif_step(LifState{Tensor({2})}, Tensor({3}), p), std::invalid_argument);
  CHECK_THROWS_AS(lif_step(LifState{scalar(0)}, scalar(0), LifParams{1.5, 1.0, {}}),
                  std::invalid_argument);
}

TEST_CASE("surrogate_grad: shape, peak, tails and closed form") {
  SurrogateSpec spec{25.0};
  CHECK(surrogate_grad(0.0, spec) == 1.0);
  CHECK(surrogate_grad(1.0, spec) == doctest::Approx(1.0 / 676.0).epsilon(1e-12));

  // even, strictly positive, monotone decreasing in |v|
  double prev = surrogate_grad(0.0, spec);
  for (double v = 0.25; v < 40.0; v += 0.25) {
    const double g = surrogate_grad(v, spec);
    CHECK(g > 0.0);
    CHECK(g < prev);
    CHECK(surrogate_grad(-v, spec) == g);
    prev = g;
  }
  CHECK(surrogate_grad(1e9, spec) < 1e-12);  // -> 0 at the tails

  Tensor v({3}, {-1.0, 0.0, 1.0});
  Tensor g = surrogate_grad(v, spec);
  CHECK(g[0] == g[2]);
  CHECK(g[1] == 1.0);
}

TEST_CASE("lif_sequence_backward: zero downstream grads give zero input grads") {
  Rng rng(3);
  const std::size_t t_steps = 4;
  std::vector<Tensor> u_pre, spikes, grad_spikes;
  for (std::size_t t = 0; t < t_steps; ++t) {
    u_pre.push_back(random_tensor({2, 2}, rng));
    Tensor s({2, 2});
    for (std::size_t i = 0; i < s.size(); ++i) s[i] = u_pre.back()[i] >= 1.0 ? 1.0 : 0.0;
    spikes.push_back(s);
    grad_spikes.push_back(Tensor({2, 2}));
  }
  LifBackwardResult r = lif_sequence_backward(u_pre, spikes, grad_spikes, Tensor({2, 2}),
                                              LifParams{}, SurrogateSpec{});
  for (const Tensor& g : r.grad_inputs)
    for (std::size_t i = 0; i < g.size(); ++i) CHECK(g[i] == 0.0);
  for (std::size_t i = 0; i < 4; ++i) CHECK(r.grad_initial_membrane[i] == 0.0);

  CHECK_THROWS_AS(lif_sequence_backward(u_pre, spikes, std::vector<Tensor>(3, Tensor({2, 2})),
                                        Tensor({2, 2}), LifParams{}, SurrogateSpec{}),
                  std::invalid_argument);
}

namespace {

// Scalar-neuron smoothed forward over T steps: returns the loss
//   sum_t loss_w[t] * spike_smooth(t) + final_w * U(T-1)
// and optionally the saved trace.
template <std::size_t T>
double smooth_scalar_loss(const std::array<double, T>& inputs, const LifParams& p, double slope,
                          const std::array<double, T>& loss_w, double final_w,
                          std::array<double, T>* u_pre_out = nullptr,
                          std::array<double, T>* spike_out = nullptr) {
  double u = 0.0;
  double loss = 0.0;
  for (std::size_t t = 0; t < T; ++t) {
    const double u_pre = p.beta * u + (1.0 - p.beta) * inputs[t];
    const double s = smooth_step(u_pre - p.threshold, slope);
    u = p.reset == ResetMode::kSubtract ? u_pre - s * p.threshold : u_pre * (1.0 - s);
    loss += loss_w[t] * s;
    if (u_pre_out) (*u_pre_out)[t] = u_pre;
    if (spike_out) (*spike_out)[t] = s;
  }
  return loss + final_w * u;
}

}  // namespace

TEST_CASE("lif_sequence_backward matches finite differences of the smoothed forward") {
  const double slope = 4.0;
  const std::array<double, 3> loss_w{0.7, -0.3, 0.9};
  const double final_w = 0.4;

  for (ResetMode mode : {ResetMode::kSubtract, ResetMode::kZero}) {
    LifParams p{0.6, 1.0, mode};
    std::array<double, 3> inputs{2.0, 0.5, 1.5};
    std::array<double, 3> u_pre{}, spikes{};
    smooth_scalar_loss(inputs, p, slope, loss_w, final_w, &u_pre, &spikes);

    std::vector<Tensor> u_pre_seq, spike_seq, grad_spikes;
    for (std::size_t t = 0; t < 3; ++t) {
      u_pre_seq.push_back(scalar(u_pre[t]));
      spike_seq.push_back(scalar(spikes[t]));
      grad_spikes.push_back(scalar(loss_w[t]));
    }
    LifBackwardResult r = lif_sequence_backward(u_pre_seq, spike_seq, grad_spikes,
                                                scalar(final_w), p, SurrogateSpec{slope});

    const double h = 1e-6;
    for (std::size_t t = 0; t < 3; ++t) {
      const auto loss_fn = [&] {
        return smooth_scalar_loss(inputs, p, slope, loss_w, final_w);
      };
      const double numeric = central_difference(loss_fn, inputs[t], h);
      CHECK(rel_error(r.grad_inputs[t][0], numeric) < 1e-4);
    }
  }
}

TEST_CASE("lif_sequence_backward: T=3 hand-unrolled recurrence") {
  // With loss applied to the last spike only, the reverse recurrence unrolls
  // to grad_I(t) = (1-beta) * beta^(2-t) * a * s2 * prod of reset factors,
  // where s_t is the surrogate at step t and the subtract-reset factor is
  // (1 - theta * s_t).
  const double beta = 0.7, theta = 1.0, slope = 25.0, a = 1.3;
  LifParams p{beta, theta, ResetMode::kSubtract};
  SurrogateSpec spec{slope};

  // Hard forward from fixed inputs.
  const std::array<double, 3> inputs{1.8, 0.2, 1.1};
  LifState state{scalar(0.0)};
  std::vector<Tensor> u_pre_seq, spike_seq;
  for (double in : inputs) {
    LifStepResult r = lif_step(state, scalar(in), p);
    state = r.state;
    u_pre_seq.push_back(r.u_pre);
    spike_seq.push_back(r.spikes);
  }

  std::vector<Tensor> grad_spikes{scalar(0.0), scalar(0.0), scalar(a)};
  LifBackwardResult r =
      lif_sequence_backward(u_pre_seq, spike_seq, grad_spikes, scalar(0.0), p, spec);

  const double s0 = surrogate_grad(u_pre_seq[0][0] - theta, spec);
  const double s1 = surrogate_grad(u_pre_seq[1][0] - theta, spec);
  const double s2 = surrogate_grad(u_pre_seq[2][0] - theta, spec);
  const double d0 = 1.0 - theta * s0;
  const double d1 = 1.0 - theta * s1;

  const double g2 = a * s2;
  CHECK(r.grad_inputs[2][0] == doctest::Approx((1.0 - beta) * g2).epsilon(1e-14));
  CHECK(r.grad_inputs[1][0] == doctest::Approx((1.0 - beta) * beta * g2 * d1).epsilon(1e-14));
  CHECK(r.grad_inputs[0][0] ==
        doctest::Approx((1.0 - beta) * beta * beta * g2 * d1 * d0).epsilon(1e-14));

  // One factor of beta (and one reset factor) per intervening step.
  CHECK(r.grad_inputs[1][0] / r.grad_inputs[2][0] == doctest::Approx(beta * d1).epsilon(1e-12));
  CHECK(r.grad_inputs[0][0] / r.grad_inputs[1][0] == doctest::Approx(beta * d0).epsilon(1e-12));
}
