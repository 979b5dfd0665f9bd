#pragma once

#include <span>
#include <vector>

#include "evsnn/tensor.hpp"

namespace evsnn {

// What happens to the membrane after a spike: subtract the threshold
// (keeping any excess) or clamp to zero.
enum class ResetMode { kSubtract, kZero };

struct LifParams {
  double beta = 0.5;       // membrane decay per step, in (0, 1)
  double threshold = 1.0;  // firing threshold, > 0
  ResetMode reset = ResetMode::kSubtract;
};

// Derivative of the fast-sigmoid relaxation of the step function:
// 1 / (1 + slope * |v|)^2, evaluated at v = u_pre - threshold.
struct SurrogateSpec {
  double slope = 25.0;
};

// Membrane potentials, one per neuron, any layer shape.
struct LifState {
  Tensor membrane;
};

struct LifStepResult {
  Tensor spikes;   // {0, 1} per neuron
  Tensor u_pre;    // pre-reset membrane, saved for the backward pass
  LifState state;  // post-reset membrane
};

// One discrete membrane update:
//   u_pre = beta * u_prev + (1 - beta) * input
//   spike = 1 where u_pre >= threshold
//   subtract reset: u_new = u_pre - spike * threshold
//   zero reset:     u_new = u_pre * (1 - spike)
LifStepResult lif_step(const LifState& state, const Tensor& input_current,
                       const LifParams& params);

Tensor surrogate_grad(const Tensor& v, const SurrogateSpec& spec);
double surrogate_grad(double v, const SurrogateSpec& spec);

struct LifBackwardResult {
  std::vector<Tensor> grad_inputs;  // gradient w.r.t. input current, per step
  Tensor grad_initial_membrane;     // gradient w.r.t. the membrane before step 0
};

// Reverse-time recurrence over a forward sequence of T steps. u_pre_seq and
// spike_seq are the values saved by that forward; the result is the exact
// adjoint of the forward that produced them, with the step function's
// derivative replaced by the surrogate. Gradient flows through the reset path
// as well: subtract reset contributes (1 - threshold * surrogate), zero reset
// contributes (1 - spike) - u_pre * surrogate.
LifBackwardResult lif_sequence_backward(std::span<const Tensor> u_pre_seq,
                                        std::span<const Tensor> spike_seq,
                                        std::span<const Tensor> grad_spikes_seq,
                                        const Tensor& grad_final_membrane,
                                        const LifParams& params, const SurrogateSpec& spec);

}  // namespace evsnn
