#include "evsnn/lif.hpp"

#include <cmath>
#include <stdexcept>

namespace evsnn {

namespace {

void require(bool cond, const char* msg) {
  if (!cond) throw std::invalid_argument(msg);
}

void check_params(const LifParams& params) {
  require(params.beta > 0.0 && params.beta < 1.0, "lif: beta must be in (0, 1)");
  require(params.threshold > 0.0, "lif: threshold must be positive");
}

}  // namespace

LifStepResult lif_step(const LifState& state, const Tensor& input_current,
                       const LifParams& params) {
  check_params(params);
  require(state.membrane.same_shape(input_current), "lif_step: state/input shape mismatch");

  const std::size_t n = input_current.size();
  LifStepResult r{Tensor(input_current.shape()), Tensor(input_current.shape()),
                  LifState{Tensor(input_current.shape())}};
  const double beta = params.beta;
  const double theta = params.threshold;
  const double* u_prev = state.membrane.data();
  const double* in = input_current.data();
  double* spikes = r.spikes.data();
  double* u_pre = r.u_pre.data();
  double* u_new = r.state.membrane.data();

  for (std::size_t i = 0; i < n; ++i) {
    const double u = beta * u_prev[i] + (1.0 - beta) * in[i];
    const double s = u >= theta ? 1.0 : 0.0;  // threshold reached fires
    u_pre[i] = u;
    spikes[i] = s;
    u_new[i] = params.reset == ResetMode::kSubtract ? u - s * theta : u * (1.0 - s);
  }
  return r;
}

double surrogate_grad(double v, const SurrogateSpec& spec) {
  const double d = 1.0 + spec.slope * std::abs(v);
  return 1.0 / (d * d);
}

Tensor surrogate_grad(const Tensor& v, const SurrogateSpec& spec) {
  require(spec.slope > 0.0, "surrogate_grad: slope must be positive");
  Tensor out(v.shape());
  for (std::size_t i = 0; i < v.size(); ++i) out[i] = surrogate_grad(v[i], spec);
  return out;
}

LifBackwardResult lif_sequence_backward(std::span<const Tensor> u_pre_seq,
                                        std::span<const Tensor> spike_seq,
                                        std::span<const Tensor> grad_spikes_seq,
                                        const Tensor& grad_final_membrane,
                                        const LifParams& params, const SurrogateSpec& spec) {
  check_params(params);
  require(spec.slope > 0.0, "lif_sequence_backward: slope must be positive");
  const std::size_t t_steps = u_pre_seq.size();
  require(spike_seq.size() == t_steps && grad_spikes_seq.size() == t_steps,
          "lif_sequence_backward: sequence length mismatch");
  require(t_steps > 0, "lif_sequence_backward: empty sequence");
  for (std::size_t t = 0; t < t_steps; ++t) {
    require(u_pre_seq[t].same_shape(grad_final_membrane) &&
                spike_seq[t].same_shape(grad_final_membrane) &&
                grad_spikes_seq[t].same_shape(grad_final_membrane),
            "lif_sequence_backward: tensor shape mismatch");
  }

  const double beta = params.beta;
  const double theta = params.threshold;
  const std::size_t n = grad_final_membrane.size();

  LifBackwardResult out;
  out.grad_inputs.assign(t_steps, Tensor(grad_final_membrane.shape()));

  // grad_u_new holds dL/dU_new(t) entering step t; at the last step that is
  // the caller's gradient w.r.t. the final membrane state.
  Tensor grad_u_new = grad_final_membrane;
  for (std::size_t t = t_steps; t-- > 0;) {
    const double* u_pre = u_pre_seq[t].data();
    const double* spike = spike_seq[t].data();
    const double* g_spike = grad_spikes_seq[t].data();
    double* g_unew = grad_u_new.data();
    double* g_in = out.grad_inputs[t].data();

    for (std::size_t i = 0; i < n; ++i) {
      const double surr = surrogate_grad(u_pre[i] - theta, spec);
      const double d_unew_d_upre = params.reset == ResetMode::kSubtract
                                       ? 1.0 - theta * surr
                                       : (1.0 - spike[i]) - u_pre[i] * surr;
      const double g_upre = g_spike[i] * surr + g_unew[i] * d_unew_d_upre;
      g_in[i] = (1.0 - beta) * g_upre;
      g_unew[i] = beta * g_upre;  // becomes dL/dU_new(t-1)
    }
  }
  out.grad_initial_membrane = std::move(grad_u_new);
  return out;
}

}  // namespace evsnn
