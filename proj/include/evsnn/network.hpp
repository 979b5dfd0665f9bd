#pragma once

#include <cstdint>
#include <filesystem>
#include <utility>
#include <vector>

#include "evsnn/lif.hpp"
#include "evsnn/rng.hpp"
#include "evsnn/tensor.hpp"

namespace evsnn {

// One conv -> 2x2 max pool -> LIF stage.
struct ConvBlockConfig {
  std::size_t out_channels = 0;
  std::size_t kernel = 5;  // square kernels only
  LifParams lif;
};

struct NetworkConfig {
  std::size_t in_channels = 2;
  std::size_t in_height = 180;
  std::size_t in_width = 240;
  std::size_t time_steps = 30;
  std::size_t num_classes = 24;
  std::vector<ConvBlockConfig> blocks;
  LifParams output_lif;
  SurrogateSpec surrogate;

  // The full-scale architecture: three 5x5 conv blocks with 12/32/45 filters,
  // a fully connected layer and 24 output neurons over 30 time steps.
  static NetworkConfig full_scale();

  // Reduced architecture for 32x32 sensors and fast runs: two 5x5 conv blocks
  // with 8/16 filters.
  static NetworkConfig small_scale(std::size_t num_classes, std::size_t time_steps);
};

// Per-stage tensor extents implied by a config.
struct StageShape {
  std::size_t channels, height, width;
};

struct NetworkShapes {
  std::vector<StageShape> conv_out;  // after each block's convolution
  std::vector<StageShape> pool_out;  // after each block's pool (the LIF shape)
  std::size_t flatten_dim = 0;
};

// Walks the shape chain and throws std::invalid_argument naming the first
// stage that fails (kernel larger than input, pool window not fitting, ...).
NetworkShapes compute_shapes(const NetworkConfig& config);

// Also used as the gradient container: backward() returns one of these with
// every tensor holding dL/d(parameter).
struct NetworkWeights {
  std::vector<Tensor> conv_kernels;  // [out, in, k, k] per block
  std::vector<Tensor> conv_biases;   // [out] per block
  Tensor fc_weight;                  // [num_classes, flatten_dim]
  Tensor fc_bias;                    // [num_classes]

  std::vector<Tensor*> tensors();
  std::vector<const Tensor*> tensors() const;
};

// Uniform init in +-1/sqrt(fan_in), biases zero.
NetworkWeights init_weights(const NetworkConfig& config, Rng& rng);
NetworkWeights zero_weights(const NetworkConfig& config);

// Everything the backward pass needs from one sample's forward pass.
struct BlockTrace {
  std::vector<Tensor> u_pre;                     // per step, pool-output shape
  std::vector<Tensor> spikes;                    // per step, pool-output shape
  std::vector<std::vector<std::size_t>> argmax;  // per step, pool winners
};

struct ForwardRecord {
  Tensor frames;  // the [T, C, H, W] input, kept for the first conv's adjoint
  std::vector<BlockTrace> blocks;
  std::vector<Tensor> fc_u_pre;   // per step, [num_classes]
  std::vector<Tensor> fc_spikes;  // per step, [num_classes]

  // Output spike train assembled as [T, num_classes].
  Tensor output_train() const;
};

// Time-unrolled pass: for each step, conv -> pool -> LIF per block, then
// flatten -> FC -> LIF. Membrane states persist across the T steps of one
// sample; every call starts from zero state.
ForwardRecord forward(const Tensor& frames, const NetworkWeights& weights,
                      const NetworkConfig& config);

// Reverse-time traversal accumulating weight gradients over all T steps.
// grad_output is dL/d(output spikes), shape [T, num_classes]. The result is
// the exact adjoint of the forward that produced `record`, with the spike
// nonlinearity differentiated through the surrogate.
NetworkWeights backward(const ForwardRecord& record, const Tensor& grad_output,
                        const NetworkWeights& weights, const NetworkConfig& config);

// Argmax of total spike count per class; ties break to the lowest index.
std::size_t predict(const Tensor& output_train);
std::size_t argmax_lowest(const std::vector<double>& values);

// Checkpoint container, little-endian: magic "EVWT", version u16, config
// echo, then raw weight tensors in declaration order. Round-trips bit-exactly.
void save_checkpoint(const std::filesystem::path& path, const NetworkConfig& config,
                     const NetworkWeights& weights);
std::pair<NetworkConfig, NetworkWeights> load_checkpoint(const std::filesystem::path& path);

}  // namespace evsnn
