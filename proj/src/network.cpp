#include "evsnn/network.hpp"

#include <cmath>
#include <fstream>
#include <stdexcept>
#include <string>

#include "evsnn/errors.hpp"
#include "binary_io.hpp"

namespace evsnn {

namespace {

void require(bool cond, const std::string& msg) {
  if (!cond) throw std::invalid_argument(msg);
}

}  // namespace

NetworkConfig NetworkConfig::full_scale() {
  NetworkConfig c;
  c.blocks = {{12, 5, {}}, {32, 5, {}}, {45, 5, {}}};
  return c;
}

NetworkConfig NetworkConfig::small_scale(std::size_t num_classes, std::size_t time_steps) {
  NetworkConfig c;
  c.in_height = 32;
  c.in_width = 32;
  c.time_steps = time_steps;
  c.num_classes = num_classes;
  // Lower thresholds than the full-scale defaults: at 32x32 the membrane
  // drive is weak enough that 1.0 leaves every layer silent.
  const LifParams block_lif{0.5, 0.2, ResetMode::kSubtract};
  c.blocks = {{8, 5, block_lif}, {16, 5, block_lif}};
  c.output_lif = LifParams{0.5, 0.1, ResetMode::kSubtract};
  return c;
}

NetworkShapes compute_shapes(const NetworkConfig& config) {
  require(config.num_classes >= 2, "config: num_classes must be >= 2");
  require(config.time_steps >= 1, "config: time_steps must be >= 1");
  require(config.in_channels >= 1 && config.in_height >= 1 && config.in_width >= 1,
          "config: bad input dimensions");

  NetworkShapes shapes;
  StageShape cur{config.in_channels, config.in_height, config.in_width};
  for (std::size_t b = 0; b < config.blocks.size(); ++b) {
    const ConvBlockConfig& blk = config.blocks[b];
    const std::string stage = "conv" + std::to_string(b + 1);
    require(blk.out_channels >= 1, "config: " + stage + " needs at least one filter");
    require(blk.kernel >= 1, "config: " + stage + " kernel must be >= 1");
    require(cur.height >= blk.kernel && cur.width >= blk.kernel,
            "config: " + stage + " input " + std::to_string(cur.height) + "x" +
                std::to_string(cur.width) + " is smaller than its " +
                std::to_string(blk.kernel) + "x" + std::to_string(blk.kernel) + " kernel");
    cur = {blk.out_channels, cur.height - blk.kernel + 1, cur.width - blk.kernel + 1};
    shapes.conv_out.push_back(cur);

    const std::string pool = "pool" + std::to_string(b + 1);
    require(cur.height >= 2 && cur.width >= 2,
            "config: " + pool + " input " + std::to_string(cur.height) + "x" +
                std::to_string(cur.width) + " is smaller than its 2x2 window");
    cur = {cur.channels, cur.height / 2, cur.width / 2};
    shapes.pool_out.push_back(cur);
  }
  shapes.flatten_dim = cur.channels * cur.height * cur.width;
  return shapes;
}

std::vector<Tensor*> NetworkWeights::tensors() {
  std::vector<Tensor*> out;
  for (Tensor& t : conv_kernels) out.push_back(&t);
  for (Tensor& t : conv_biases) out.push_back(&t);
  out.push_back(&fc_weight);
  out.push_back(&fc_bias);
  return out;
}

std::vector<const Tensor*> NetworkWeights::tensors() const {
  std::vector<const Tensor*> out;
  for (const Tensor& t : conv_kernels) out.push_back(&t);
  for (const Tensor& t : conv_biases) out.push_back(&t);
  out.push_back(&fc_weight);
  out.push_back(&fc_bias);
  return out;
}

NetworkWeights zero_weights(const NetworkConfig& config) {
  const NetworkShapes shapes = compute_shapes(config);
  NetworkWeights w;
  std::size_t in_ch = config.in_channels;
  for (const ConvBlockConfig& blk : config.blocks) {
    w.conv_kernels.emplace_back(
        std::vector<std::size_t>{blk.out_channels, in_ch, blk.kernel, blk.kernel});
    w.conv_biases.emplace_back(std::vector<std::size_t>{blk.out_channels});
    in_ch = blk.out_channels;
  }
  w.fc_weight = Tensor({config.num_classes, shapes.flatten_dim});
  w.fc_bias = Tensor({config.num_classes});
  return w;
}

NetworkWeights init_weights(const NetworkConfig& config, Rng& rng) {
  NetworkWeights w = zero_weights(config);
  for (Tensor& kernel : w.conv_kernels) {
    // fan_in = in_channels * kernel_h * kernel_w
    const std::size_t fan_in = kernel.extent(1) * kernel.extent(2) * kernel.extent(3);
    const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
    for (std::size_t i = 0; i < kernel.size(); ++i)
      kernel[i] = uniform_real(rng, -bound, bound);
  }
  const double fc_bound = 1.0 / std::sqrt(static_cast<double>(w.fc_weight.extent(1)));
  for (std::size_t i = 0; i < w.fc_weight.size(); ++i)
    w.fc_weight[i] = uniform_real(rng, -fc_bound, fc_bound);
  return w;
}

Tensor ForwardRecord::output_train() const {
  const std::size_t t_steps = fc_spikes.size();
  const std::size_t classes = t_steps > 0 ? fc_spikes[0].size() : 0;
  Tensor out({t_steps, classes});
  for (std::size_t t = 0; t < t_steps; ++t)
    for (std::size_t c = 0; c < classes; ++c) out[t * classes + c] = fc_spikes[t][c];
  return out;
}

namespace {

ConvSpec block_spec(const NetworkConfig& config, std::size_t b) {
  const std::size_t in_ch = b == 0 ? config.in_channels : config.blocks[b - 1].out_channels;
  return ConvSpec{in_ch, config.blocks[b].out_channels, config.blocks[b].kernel,
                  config.blocks[b].kernel, 1, 0};
}

std::vector<std::size_t> to_dims(const StageShape& s) { return {s.channels, s.height, s.width}; }

}  // namespace

ForwardRecord forward(const Tensor& frames, const NetworkWeights& weights,
                      const NetworkConfig& config) {
  const NetworkShapes shapes = compute_shapes(config);
  require(frames.rank() == 4, "forward: frames must be [T, C, H, W]");
  const char* dim_names[4] = {"time_steps", "channels", "height", "width"};
  const std::size_t expected[4] = {config.time_steps, config.in_channels, config.in_height,
                                   config.in_width};
  for (std::size_t d = 0; d < 4; ++d) {
    require(frames.extent(d) == expected[d],
            "forward: frame " + std::string(dim_names[d]) + " is " +
                std::to_string(frames.extent(d)) + " but the network expects " +
                std::to_string(expected[d]));
  }

  const std::size_t n_blocks = config.blocks.size();
  ForwardRecord record;
  record.frames = frames;
  record.blocks.resize(n_blocks);

  // Fresh zero membranes: state carries across the T steps of this sample
  // only.
  std::vector<LifState> states;
  for (std::size_t b = 0; b < n_blocks; ++b)
    states.push_back(LifState{Tensor(to_dims(shapes.pool_out[b]))});
  LifState out_state{Tensor({config.num_classes})};

  for (std::size_t t = 0; t < config.time_steps; ++t) {
    Tensor x = slice_front(frames, t);
    for (std::size_t b = 0; b < n_blocks; ++b) {
      Tensor conv = conv2d_forward(x, weights.conv_kernels[b], weights.conv_biases[b],
                                   block_spec(config, b));
      PoolResult pooled = maxpool2d_forward(conv);
      LifStepResult step = lif_step(states[b], pooled.values, config.blocks[b].lif);
      states[b] = std::move(step.state);
      record.blocks[b].u_pre.push_back(std::move(step.u_pre));
      record.blocks[b].argmax.push_back(std::move(pooled.argmax));
      record.blocks[b].spikes.push_back(std::move(step.spikes));
      x = record.blocks[b].spikes.back();
    }
    Tensor fc_out = linear_forward(flatten(x), weights.fc_weight, weights.fc_bias);
    LifStepResult out_step = lif_step(out_state, fc_out, config.output_lif);
    out_state = std::move(out_step.state);
    record.fc_u_pre.push_back(std::move(out_step.u_pre));
    record.fc_spikes.push_back(std::move(out_step.spikes));
  }
  return record;
}

NetworkWeights backward(const ForwardRecord& record, const Tensor& grad_output,
                        const NetworkWeights& weights, const NetworkConfig& config) {
  const NetworkShapes shapes = compute_shapes(config);
  const std::size_t n_blocks = config.blocks.size();
  const std::size_t t_steps = config.time_steps;
  require(record.fc_spikes.size() == t_steps && record.blocks.size() == n_blocks,
          "backward: record does not match config");
  for (std::size_t b = 0; b < n_blocks; ++b)
    require(record.blocks[b].u_pre.size() == t_steps &&
                record.blocks[b].spikes.size() == t_steps &&
                record.blocks[b].argmax.size() == t_steps,
            "backward: record does not match config");
  require(grad_output.rank() == 2 && grad_output.extent(0) == t_steps &&
              grad_output.extent(1) == config.num_classes,
          "backward: grad_output must be [T, num_classes]");

  NetworkWeights grads = zero_weights(config);

  // Output LIF over time, then the FC layer at each step.
  std::vector<Tensor> grad_out_spikes;
  for (std::size_t t = 0; t < t_steps; ++t) grad_out_spikes.push_back(slice_front(grad_output, t));
  LifBackwardResult out_lif = lif_sequence_backward(
      record.fc_u_pre, record.fc_spikes, grad_out_spikes, Tensor({config.num_classes}),
      config.output_lif, config.surrogate);

  std::vector<Tensor> grad_spikes(t_steps);  // dL/d(spikes of the block below)
  const std::vector<std::size_t> last_dims = to_dims(shapes.pool_out[n_blocks - 1]);
  for (std::size_t t = 0; t < t_steps; ++t) {
    const Tensor fc_in = flatten(record.blocks[n_blocks - 1].spikes[t]);
    LinearGrads lg = linear_backward(out_lif.grad_inputs[t], fc_in, weights.fc_weight);
    add_inplace(grads.fc_weight, lg.grad_weight);
    add_inplace(grads.fc_bias, lg.grad_bias);
    grad_spikes[t] = reshape(lg.grad_x, last_dims);
  }

  // Blocks in reverse: each LIF's state recurrence is folded into its own
  // sequence backward, so one spatial pass per step suffices.
  for (std::size_t b = n_blocks; b-- > 0;) {
    const BlockTrace& trace = record.blocks[b];
    LifBackwardResult lif = lif_sequence_backward(trace.u_pre, trace.spikes, grad_spikes,
                                                  Tensor(to_dims(shapes.pool_out[b])),
                                                  config.blocks[b].lif, config.surrogate);
    std::vector<Tensor> grad_below(t_steps);
    for (std::size_t t = 0; t < t_steps; ++t) {
      Tensor grad_conv =
          maxpool2d_backward(lif.grad_inputs[t], trace.argmax[t], to_dims(shapes.conv_out[b]));
      const Tensor x_in =
          b == 0 ? slice_front(record.frames, t) : Tensor(record.blocks[b - 1].spikes[t]);
      ConvGrads cg = conv2d_backward(grad_conv, x_in, weights.conv_kernels[b],
                                     block_spec(config, b));
      add_inplace(grads.conv_kernels[b], cg.grad_kernel);
      add_inplace(grads.conv_biases[b], cg.grad_bias);
      if (b > 0) grad_below[t] = std::move(cg.grad_x);
    }
    grad_spikes = std::move(grad_below);
  }
  return grads;
}

std::size_t argmax_lowest(const std::vector<double>& values) {
  if (values.empty()) throw std::invalid_argument("argmax_lowest: empty input");
  std::size_t best = 0;
  for (std::size_t i = 1; i < values.size(); ++i) {
    if (values[i] > values[best]) best = i;
  }
  return best;
}

std::size_t predict(const Tensor& output_train) {
  require(output_train.rank() == 2 && output_train.extent(0) >= 1,
          "predict: expected a [T, num_classes] spike train");
  const std::size_t t_steps = output_train.extent(0);
  const std::size_t classes = output_train.extent(1);
  std::vector<double> counts(classes, 0.0);
  for (std::size_t t = 0; t < t_steps; ++t)
    for (std::size_t c = 0; c < classes; ++c) counts[c] += output_train[t * classes + c];
  return argmax_lowest(counts);
}

namespace {

void put_lif(std::ostream& out, const LifParams& p) {
  binio::put_f64(out, p.beta);
  binio::put_f64(out, p.threshold);
  binio::put_u8(out, p.reset == ResetMode::kZero ? 1 : 0);
}

LifParams get_lif(std::istream& in) {
  LifParams p;
  p.beta = binio::get_f64(in, "lif beta");
  p.threshold = binio::get_f64(in, "lif threshold");
  const std::uint8_t reset = binio::get_u8(in, "lif reset mode");
  if (reset > 1) binio::fail("bad reset mode " + std::to_string(reset));
  p.reset = reset == 1 ? ResetMode::kZero : ResetMode::kSubtract;
  return p;
}

}  // namespace

void save_checkpoint(const std::filesystem::path& path, const NetworkConfig& config,
                     const NetworkWeights& weights) {
  compute_shapes(config);  // refuse to write an invalid config
  std::ofstream out(path, std::ios::binary);
  if (!out) throw FormatError("cannot open " + path.string() + " for writing");
  out.write("EVWT", 4);
  binio::put_u16(out, 1);  // version
  binio::put_u32(out, static_cast<std::uint32_t>(config.in_channels));
  binio::put_u32(out, static_cast<std::uint32_t>(config.in_height));
  binio::put_u32(out, static_cast<std::uint32_t>(config.in_width));
  binio::put_u32(out, static_cast<std::uint32_t>(config.time_steps));
  binio::put_u32(out, static_cast<std::uint32_t>(config.num_classes));
  binio::put_u32(out, static_cast<std::uint32_t>(config.blocks.size()));
  for (const ConvBlockConfig& blk : config.blocks) {
    binio::put_u32(out, static_cast<std::uint32_t>(blk.out_channels));
    binio::put_u32(out, static_cast<std::uint32_t>(blk.kernel));
    put_lif(out, blk.lif);
  }
  put_lif(out, config.output_lif);
  binio::put_f64(out, config.surrogate.slope);
  for (const Tensor* t : weights.tensors())
    for (std::size_t i = 0; i < t->size(); ++i) binio::put_f64(out, (*t)[i]);
  if (!out) throw FormatError("write failed for " + path.string());
}

std::pair<NetworkConfig, NetworkWeights> load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open " + path.string());
  binio::check_magic(in, "EVWT", "checkpoint");
  const std::uint16_t version = binio::get_u16(in, "version");
  if (version != 1)
    throw FormatError("unsupported checkpoint version " + std::to_string(version));

  NetworkConfig config;
  config.in_channels = binio::get_u32(in, "in_channels");
  config.in_height = binio::get_u32(in, "in_height");
  config.in_width = binio::get_u32(in, "in_width");
  config.time_steps = binio::get_u32(in, "time_steps");
  config.num_classes = binio::get_u32(in, "num_classes");
  const std::uint32_t n_blocks = binio::get_u32(in, "block count");
  if (n_blocks > 64) binio::fail("implausible block count " + std::to_string(n_blocks));
  config.blocks.clear();
  for (std::uint32_t b = 0; b < n_blocks; ++b) {
    ConvBlockConfig blk;
    blk.out_channels = binio::get_u32(in, "block out_channels");
    blk.kernel = binio::get_u32(in, "block kernel");
    blk.lif = get_lif(in);
    config.blocks.push_back(blk);
  }
  config.output_lif = get_lif(in);
  config.surrogate.slope = binio::get_f64(in, "surrogate slope");

  NetworkWeights weights;
  try {
    weights = zero_weights(config);
  } catch (const std::invalid_argument& e) {
    binio::fail(std::string("checkpoint config invalid: ") + e.what());
  }
  for (Tensor* t : weights.tensors())
    for (std::size_t i = 0; i < t->size(); ++i) (*t)[i] = binio::get_f64(in, "weight data");

  // A valid checkpoint ends exactly at the last weight.
  char extra;
  if (in.read(&extra, 1); !in.eof()) binio::fail("trailing bytes after weight data");
  return {config, weights};
}

}  // namespace evsnn
