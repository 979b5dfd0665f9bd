#include "doctest.h"

#include <cmath>
#include <filesystem>
#include <fstream>

#include "evsnn/errors.hpp"
#include "evsnn/network.hpp"
#include "evsnn/training.hpp"
#include "testing.hpp"

using namespace evsnn;
using namespace evsnn::testing;

namespace {

std::filesystem::path temp_path(const std::string& name) {
  return std::filesystem::temp_directory_path() / ("evsnn_test_" + name);
}

std::vector<char> read_bytes(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  REQUIRE(in.good());
  return std::vector<char>(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
}

NetworkConfig tiny_config() {
  NetworkConfig c;
  c.in_channels = 1;
  c.in_height = 6;
  c.in_width = 6;
  c.time_steps = 2;
  c.num_classes = 2;
  c.blocks = {{2, 3, LifParams{0.5, 1.0, ResetMode::kSubtract}}};
  c.output_lif = LifParams{0.5, 1.0, ResetMode::kSubtract};
  c.surrogate.slope = 5.0;
  return c;
}

bool records_equal(const ForwardRecord& a, const ForwardRecord& b) {
  if (!(a.frames == b.frames) || a.blocks.size() != b.blocks.size()) return false;
  for (std::size_t i = 0; i < a.blocks.size(); ++i) {
    if (a.blocks[i].u_pre != b.blocks[i].u_pre) return false;
    if (a.blocks[i].spikes != b.blocks[i].spikes) return false;
    if (a.blocks[i].argmax != b.blocks[i].argmax) return false;
  }
  return a.fc_u_pre == b.fc_u_pre && a.fc_spikes == b.fc_spikes;
}

}  // namespace

TEST_CASE("compute_shapes: full-scale chain") {
  const NetworkConfig c = NetworkConfig::full_scale();
  const NetworkShapes s = compute_shapes(c);
  REQUIRE(s.conv_out.size() == 3);
  CHECK(s.conv_out[0].height == 176);
  CHECK(s.conv_out[0].width == 236);
  CHECK(s.pool_out[0].height == 88);
  CHECK(s.pool_out[0].width == 118);
  CHECK(s.conv_out[1].height == 84);
  CHECK(s.conv_out[1].width == 114);
  CHECK(s.pool_out[1].height == 42);
  CHECK(s.pool_out[1].width == 57);
  CHECK(s.conv_out[2].height == 38);
  CHECK(s.conv_out[2].width == 53);
  CHECK(s.pool_out[2].height == 19);
  CHECK(s.pool_out[2].width == 26);
  CHECK(s.pool_out[2].channels == 45);
  CHECK(s.flatten_dim == 22230);  // 45 * 19 * 26
}

TEST_CASE("compute_shapes names the first failing stage") {
  NetworkConfig c = NetworkConfig::full_scale();
  c.in_height = 26;
  c.in_width = 26;
  CHECK_THROWS_WITH_AS(compute_shapes(c), doctest::Contains("conv3"), std::invalid_argument);

  c.in_height = 32;
  c.in_width = 32;
  CHECK_THROWS_WITH_AS(compute_shapes(c), doctest::Contains("pool3"), std::invalid_argument);

  c.in_height = 4;
  c.in_width = 40;
  CHECK_THROWS_WITH_AS(compute_shapes(c), doctest::Contains("conv1"), std::invalid_argument);

  // 36x36 is the smallest geometry that survives all three stages.
  c.in_height = 36;
  c.in_width = 36;
  const NetworkShapes s = compute_shapes(c);
  CHECK(s.pool_out[2].height == 1);
  c.in_height = 35;
  c.in_width = 36;
  CHECK_THROWS_AS(compute_shapes(c), std::invalid_argument);
}

TEST_CASE("init_weights: deterministic, bounded, with the documented shapes") {
  const NetworkConfig c = NetworkConfig::full_scale();
  Rng rng_a(123), rng_b(123);
  const NetworkWeights a = init_weights(c, rng_a);
  const NetworkWeights b = init_weights(c, rng_b);

  REQUIRE(a.conv_kernels.size() == 3);
  CHECK(a.conv_kernels[0].shape() == std::vector<std::size_t>{12, 2, 5, 5});
  CHECK(a.conv_kernels[1].shape() == std::vector<std::size_t>{32, 12, 5, 5});
  CHECK(a.conv_kernels[2].shape() == std::vector<std::size_t>{45, 32, 5, 5});
  CHECK(a.fc_weight.shape() == std::vector<std::size_t>{24, 22230});

  for (std::size_t p = 0; p < 3; ++p) {
    const Tensor& k = a.conv_kernels[p];
    const double bound = 1.0 / std::sqrt(static_cast<double>(k.extent(1) * k.extent(2) * k.extent(3)));
    for (std::size_t i = 0; i < k.size(); ++i) {
      CHECK(k[i] == b.conv_kernels[p][i]);
      CHECK(std::abs(k[i]) <= bound);
    }
    for (std::size_t i = 0; i < a.conv_biases[p].size(); ++i) CHECK(a.conv_biases[p][i] == 0.0);
  }
  const double fc_bound = 1.0 / std::sqrt(22230.0);
  for (std::size_t i = 0; i < a.fc_weight.size(); ++i) {
    CHECK(a.fc_weight[i] == b.fc_weight[i]);
    CHECK(std::abs(a.fc_weight[i]) <= fc_bound);
  }
}

TEST_CASE("forward: zero frames and zero biases spike nowhere") {
  const NetworkConfig c = tiny_config();
  Rng rng(9);
  const NetworkWeights w = init_weights(c, rng);  // biases stay zero
  const Tensor frames({c.time_steps, 1, 6, 6});
  const ForwardRecord record = forward(frames, w, c);
  for (const BlockTrace& blk : record.blocks)
    for (const Tensor& s : blk.spikes)
      for (std::size_t i = 0; i < s.size(); ++i) CHECK(s[i] == 0.0);
  for (const Tensor& s : record.fc_spikes)
    for (std::size_t i = 0; i < s.size(); ++i) CHECK(s[i] == 0.0);
}

TEST_CASE("forward: output train shape and record extents") {
  const NetworkConfig c = tiny_config();
  Rng rng(10);
  const NetworkWeights w = init_weights(c, rng);
  Tensor frames({c.time_steps, 1, 6, 6});
  for (std::size_t i = 0; i < frames.size(); ++i) frames[i] = uniform_below(rng, 2);
  const ForwardRecord record = forward(frames, w, c);
  CHECK(record.output_train().shape() == std::vector<std::size_t>{2, 2});
  REQUIRE(record.blocks.size() == 1);
  CHECK(record.blocks[0].spikes.size() == c.time_steps);
  CHECK(record.blocks[0].spikes[0].shape() == std::vector<std::size_t>{2, 2, 2});

  Tensor bad({c.time_steps, 2, 6, 6});
  CHECK_THROWS_WITH_AS(forward(bad, w, c), doctest::Contains("channels"),
                       std::invalid_argument);
}

TEST_CASE("forward: state resets between samples") {
  const NetworkConfig c = tiny_config();
  Rng rng(11);
  const NetworkWeights w = init_weights(c, rng);
  Tensor frames({c.time_steps, 1, 6, 6});
  for (std::size_t i = 0; i < frames.size(); ++i) frames[i] = uniform_below(rng, 2);
  const ForwardRecord first = forward(frames, w, c);
  const ForwardRecord second = forward(frames, w, c);
  CHECK(records_equal(first, second));
}

TEST_CASE("backward: zero output grads give zero weight grads") {
  const NetworkConfig c = tiny_config();
  Rng rng(12);
  const NetworkWeights w = init_weights(c, rng);
  Tensor frames({c.time_steps, 1, 6, 6});
  for (std::size_t i = 0; i < frames.size(); ++i) frames[i] = uniform_below(rng, 2);
  const ForwardRecord record = forward(frames, w, c);
  const NetworkWeights g = backward(record, Tensor({c.time_steps, c.num_classes}), w, c);
  for (const Tensor* t : std::as_const(g).tensors())
    for (std::size_t i = 0; i < t->size(); ++i) CHECK((*t)[i] == 0.0);
}

TEST_CASE("backward matches finite differences of the smoothed forward with the loss") {
  NetworkConfig c = tiny_config();
  Rng rng(13);
  NetworkWeights w = init_weights(c, rng);
  for (Tensor& bias : w.conv_biases)
    for (std::size_t i = 0; i < bias.size(); ++i) bias[i] = uniform_real(rng, -0.3, 0.3);
  for (std::size_t i = 0; i < w.fc_bias.size(); ++i) w.fc_bias[i] = uniform_real(rng, -0.3, 0.3);

  Tensor frames({c.time_steps, 1, 6, 6});
  for (std::size_t i = 0; i < frames.size(); ++i) frames[i] = uniform_below(rng, 2);
  const std::size_t label = 1;
  const SpikeCountLossTargets targets;

  const auto loss_of = [&] {
    const ForwardRecord record = smoothed_forward(frames, w, c);
    return sample_spike_count_loss(record.output_train(), label, targets, 1).loss;
  };

  const ForwardRecord record = smoothed_forward(frames, w, c);
  const LossResult loss = sample_spike_count_loss(record.output_train(), label, targets, 1);
  const NetworkWeights grads = backward(record, loss.grad, w, c);

  const double h = 1e-5;
  std::size_t checked = 0;
  const std::vector<Tensor*> params = w.tensors();
  const std::vector<const Tensor*> analytic = std::as_const(grads).tensors();
  for (std::size_t p = 0; p < params.size(); ++p) {
    for (std::size_t i = 0; i < params[p]->size(); ++i) {
      const double numeric = central_difference(loss_of, (*params[p])[i], h);
      const double a = (*analytic[p])[i];
      CHECK_MESSAGE(std::abs(a - numeric) < 1e-4 * std::max({0.01, std::abs(a), std::abs(numeric)}),
                    "param " << p << " index " << i << " analytic " << a << " numeric "
                             << numeric);
      ++checked;
    }
  }
  CHECK(checked == 18 + 2 + 2 * 8 + 2);  // conv kernel+bias, fc weight+bias

  // Some gradient actually flows.
  double magnitude = 0.0;
  for (const Tensor* t : analytic)
    for (std::size_t i = 0; i < t->size(); ++i) magnitude += std::abs((*t)[i]);
  CHECK(magnitude > 1e-6);
}

TEST_CASE("backward: late-layer weights are insensitive to early-layer spikes after the loss") {
  // Causality: zeroing the gradient contributions after the only loss step
  // must leave the conv gradient of the first step unchanged.
  const NetworkConfig c = tiny_config();
  Rng rng(14);
  const NetworkWeights w = init_weights(c, rng);
  Tensor frames({c.time_steps, 1, 6, 6});
  for (std::size_t i = 0; i < frames.size(); ++i) frames[i] = uniform_below(rng, 2);
  const ForwardRecord record = forward(frames, w, c);

  Tensor grad_first_only({c.time_steps, c.num_classes});
  grad_first_only.at({0, 0}) = 1.0;
  const NetworkWeights g1 = backward(record, grad_first_only, w, c);

  // Tampering with step-1 saved spikes cannot change gradients of a loss
  // applied at step 0.
  ForwardRecord tampered = record;
  for (std::size_t i = 0; i < tampered.blocks[0].spikes[1].size(); ++i)
    tampered.blocks[0].spikes[1][i] = 1.0 - tampered.blocks[0].spikes[1][i];
  const NetworkWeights g2 = backward(tampered, grad_first_only, w, c);
  for (std::size_t i = 0; i < g1.conv_kernels[0].size(); ++i)
    CHECK(g1.conv_kernels[0][i] == g2.conv_kernels[0][i]);
}

TEST_CASE("predict: spike-count argmax with lowest-index ties") {
  Tensor train({3, 4});
  // counts per class: 2, 3, 1, 0
  train.at({0, 0}) = 1;
  train.at({1, 0}) = 1;
  train.at({0, 1}) = 1;
  train.at({1, 1}) = 1;
  train.at({2, 1}) = 1;
  train.at({0, 2}) = 1;
  CHECK(predict(train) == 1);

  CHECK(predict(Tensor({3, 4})) == 0);  // all zero: tie breaks to class 0

  Tensor tie({1, 3}, {5, 2, 5});
  CHECK(predict(tie) == 0);
}

TEST_CASE("predict is invariant under monotone transforms of the counts") {
  Rng rng(15);
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<double> counts(6);
    for (double& v : counts) v = static_cast<double>(uniform_below(rng, 30));
    const std::size_t base = argmax_lowest(counts);
    std::vector<double> cubed(6), affine(6);
    for (std::size_t i = 0; i < 6; ++i) {
      cubed[i] = counts[i] * counts[i] * counts[i];
      affine[i] = 2.5 * counts[i] + 7.0;
    }
    CHECK(argmax_lowest(cubed) == base);
    CHECK(argmax_lowest(affine) == base);
  }
}

namespace {

NetworkConfig golden_checkpoint_config() {
  NetworkConfig c;
  c.in_channels = 2;
  c.in_height = 8;
  c.in_width = 8;
  c.time_steps = 2;
  c.num_classes = 2;
  c.blocks = {{3, 5, LifParams{0.5, 1.0, ResetMode::kSubtract}}};
  c.output_lif = LifParams{0.5, 1.0, ResetMode::kSubtract};
  c.surrogate.slope = 25.0;
  return c;
}

NetworkWeights golden_checkpoint_weights() {
  const NetworkConfig c = golden_checkpoint_config();
  NetworkWeights w = zero_weights(c);
  std::size_t n = 0;
  for (Tensor* t : w.tensors())
    for (std::size_t i = 0; i < t->size(); ++i)
      (*t)[i] = 0.0625 * (static_cast<double>(n++ % 31) - 15.0);
  return w;
}

bool weights_equal(const NetworkWeights& a, const NetworkWeights& b) {
  const auto ta = std::as_const(a).tensors();
  const auto tb = std::as_const(b).tensors();
  if (ta.size() != tb.size()) return false;
  for (std::size_t i = 0; i < ta.size(); ++i)
    if (!(*ta[i] == *tb[i])) return false;
  return true;
}

}  // namespace

TEST_CASE("checkpoint round-trips bit-exactly") {
  const NetworkConfig c = golden_checkpoint_config();
  const NetworkWeights w = golden_checkpoint_weights();
  const auto path = temp_path("ckpt.evwt");
  save_checkpoint(path, c, w);
  const auto [c2, w2] = load_checkpoint(path);
  CHECK(weights_equal(w, w2));
  CHECK(c2.in_channels == c.in_channels);
  CHECK(c2.time_steps == c.time_steps);
  CHECK(c2.num_classes == c.num_classes);
  REQUIRE(c2.blocks.size() == 1);
  CHECK(c2.blocks[0].out_channels == 3);
  CHECK(c2.blocks[0].lif.beta == 0.5);
  CHECK(c2.surrogate.slope == 25.0);

  const auto path2 = temp_path("ckpt2.evwt");
  save_checkpoint(path2, c2, w2);
  CHECK(read_bytes(path) == read_bytes(path2));
  std::filesystem::remove(path);
  std::filesystem::remove(path2);
}

TEST_CASE("checkpoint error paths") {
  const auto path = temp_path("ckpt_bad.evwt");
  save_checkpoint(path, golden_checkpoint_config(), golden_checkpoint_weights());
  const auto bytes = read_bytes(path);

  {
    std::ofstream out(path, std::ios::binary);
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size() - 3));
  }
  CHECK_THROWS_AS(load_checkpoint(path), FormatError);

  {
    std::ofstream out(path, std::ios::binary);
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    out.write("xx", 2);
  }
  CHECK_THROWS_WITH_AS(load_checkpoint(path), doctest::Contains("trailing"), FormatError);

  {
    std::ofstream out(path, std::ios::binary);
    out.write("EVDS", 4);
  }
  CHECK_THROWS_AS(load_checkpoint(path), FormatError);
  std::filesystem::remove(path);
}

TEST_CASE("checkpoint golden file guards the layout") {
  const auto golden = std::filesystem::path(EVSNN_GOLDEN_DIR) / "weights_v1.evwt";
  REQUIRE_MESSAGE(std::filesystem::exists(golden), "golden file missing: " << golden);
  const auto [config, weights] = load_checkpoint(golden);
  CHECK(weights_equal(weights, golden_checkpoint_weights()));

  const auto path = temp_path("golden_ckpt_rewrite.evwt");
  save_checkpoint(path, golden_checkpoint_config(), golden_checkpoint_weights());
  CHECK(read_bytes(path) == read_bytes(golden));
  std::filesystem::remove(path);
}
