#include "evsnn/training.hpp"

#include <atomic>
#include <utility>
#include <charconv>
#include <cmath>
#include <fstream>
#include <mutex>
#include <numeric>
#include <string>
#include <thread>

#include "evsnn/errors.hpp"

namespace evsnn {

namespace {

void require(bool cond, const char* msg) {
  if (!cond) throw std::invalid_argument(msg);
}

bool all_finite(const Tensor& t) {
  for (std::size_t i = 0; i < t.size(); ++i)
    if (!std::isfinite(t[i])) return false;
  return true;
}

}  // namespace

LossResult sample_spike_count_loss(const Tensor& train, std::size_t label,
                                   const SpikeCountLossTargets& targets,
                                   std::size_t batch_size) {
  require(train.rank() == 2, "spike_count_loss: expected [T, num_classes]");
  require(batch_size >= 1, "spike_count_loss: batch_size must be >= 1");
  const std::size_t t_steps = train.extent(0);
  const std::size_t classes = train.extent(1);
  require(label < classes, "spike_count_loss: label out of range");

  LossResult r;
  r.grad = Tensor(train.shape());
  const double denom = static_cast<double>(batch_size) * static_cast<double>(classes);
  for (std::size_t c = 0; c < classes; ++c) {
    double count = 0.0;
    for (std::size_t t = 0; t < t_steps; ++t) count += train[t * classes + c];
    const double rate = count / static_cast<double>(t_steps);
    const double target = c == label ? targets.correct_rate : targets.incorrect_rate;
    const double diff = rate - target;
    r.loss += diff * diff / denom;
    const double g = 2.0 * diff / (denom * static_cast<double>(t_steps));
    for (std::size_t t = 0; t < t_steps; ++t) r.grad[t * classes + c] = g;
  }
  return r;
}

LossResult spike_count_loss(const Tensor& spikes, const std::vector<std::size_t>& labels,
                            const SpikeCountLossTargets& targets) {
  require(spikes.rank() == 3, "spike_count_loss: expected [T, B, num_classes]");
  const std::size_t t_steps = spikes.extent(0);
  const std::size_t batch = spikes.extent(1);
  const std::size_t classes = spikes.extent(2);
  require(labels.size() == batch, "spike_count_loss: labels/batch size mismatch");

  LossResult r;
  r.grad = Tensor(spikes.shape());
  for (std::size_t b = 0; b < batch; ++b) {
    // gather sample b as [T, classes]
    Tensor sample({t_steps, classes});
    for (std::size_t t = 0; t < t_steps; ++t)
      for (std::size_t c = 0; c < classes; ++c)
        sample[t * classes + c] = spikes[(t * batch + b) * classes + c];
    const LossResult s = sample_spike_count_loss(sample, labels[b], targets, batch);
    r.loss += s.loss;
    for (std::size_t t = 0; t < t_steps; ++t)
      for (std::size_t c = 0; c < classes; ++c)
        r.grad[(t * batch + b) * classes + c] = s.grad[t * classes + c];
  }
  return r;
}

AdamOptimizer::AdamOptimizer(AdamParams params) : params_(params) {
  require(params_.learning_rate > 0.0, "adam: learning_rate must be positive");
  require(params_.beta1 >= 0.0 && params_.beta1 < 1.0, "adam: beta1 must be in [0, 1)");
  require(params_.beta2 >= 0.0 && params_.beta2 < 1.0, "adam: beta2 must be in [0, 1)");
  require(params_.epsilon > 0.0, "adam: epsilon must be positive");
}

void AdamOptimizer::step(const std::vector<Tensor*>& weights,
                         const std::vector<const Tensor*>& grads) {
  require(weights.size() == grads.size(), "adam: weight/grad count mismatch");
  if (m_.empty()) {
    for (const Tensor* w : weights) {
      m_.emplace_back(w->shape());
      v_.emplace_back(w->shape());
    }
  }
  require(m_.size() == weights.size(), "adam: parameter set changed between steps");

  ++steps_;
  const double bc1 = 1.0 - std::pow(params_.beta1, static_cast<double>(steps_));
  const double bc2 = 1.0 - std::pow(params_.beta2, static_cast<double>(steps_));
  for (std::size_t p = 0; p < weights.size(); ++p) {
    Tensor& w = *weights[p];
    const Tensor& g = *grads[p];
    require(w.same_shape(g) && w.same_shape(m_[p]), "adam: gradient shape mismatch");
    for (std::size_t i = 0; i < w.size(); ++i) {
      const double gi = g[i];
      if (!std::isfinite(gi)) throw std::runtime_error("adam: non-finite gradient");
      m_[p][i] = params_.beta1 * m_[p][i] + (1.0 - params_.beta1) * gi;
      v_[p][i] = params_.beta2 * v_[p][i] + (1.0 - params_.beta2) * gi * gi;
      const double m_hat = m_[p][i] / bc1;
      const double v_hat = v_[p][i] / bc2;
      w[i] -= params_.learning_rate * m_hat / (std::sqrt(v_hat) + params_.epsilon);
    }
  }
}

namespace {

std::string format_double(double v) {
  char buf[32];
  const auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

}  // namespace

void export_metrics(const std::vector<MetricsRow>& history, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot open " + path.string() + " for writing");
  out << "epoch,iteration,train_loss,train_acc,val_loss,val_acc\n";
  for (const MetricsRow& row : history) {
    out << row.epoch << ',' << row.iteration << ',' << format_double(row.train_loss) << ','
        << format_double(row.train_accuracy) << ',';
    if (row.val_loss) out << format_double(*row.val_loss);
    out << ',';
    if (row.val_accuracy) out << format_double(*row.val_accuracy);
    out << '\n';
  }
  if (!out) throw std::runtime_error("write failed for " + path.string());
}

namespace {

std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> fields;
  std::string::size_type pos = 0;
  while (true) {
    const auto comma = line.find(',', pos);
    fields.push_back(line.substr(pos, comma - pos));
    if (comma == std::string::npos) break;
    pos = comma + 1;
  }
  return fields;
}

double parse_double_field(const std::string& s, std::size_t line_no) {
  double v;
  const auto res = std::from_chars(s.data(), s.data() + s.size(), v);
  if (res.ec != std::errc() || res.ptr != s.data() + s.size())
    throw ParseError("metrics line " + std::to_string(line_no) + ": bad numeric field '" + s +
                     "'");
  return v;
}

}  // namespace

std::vector<MetricsRow> read_metrics(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  std::string line;
  if (!std::getline(in, line)) throw ParseError("metrics file is empty");
  if (!line.empty() && line.back() == '\r') line.pop_back();
  if (line != "epoch,iteration,train_loss,train_acc,val_loss,val_acc")
    throw ParseError("metrics header mismatch");

  std::vector<MetricsRow> history;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const std::vector<std::string> f = split_csv(line);
    if (f.size() != 6)
      throw ParseError("metrics line " + std::to_string(line_no) + ": expected 6 fields");
    MetricsRow row;
    row.epoch = static_cast<std::size_t>(parse_double_field(f[0], line_no));
    row.iteration = static_cast<std::size_t>(parse_double_field(f[1], line_no));
    row.train_loss = parse_double_field(f[2], line_no);
    row.train_accuracy = parse_double_field(f[3], line_no);
    if (!f[4].empty()) row.val_loss = parse_double_field(f[4], line_no);
    if (!f[5].empty()) row.val_accuracy = parse_double_field(f[5], line_no);
    history.push_back(row);
  }
  return history;
}

namespace {

struct SampleOutcome {
  double loss = 0.0;
  bool correct = false;
  NetworkWeights grads;  // only filled when training
};

// Bin -> forward -> loss (-> backward). The loss denominator uses the
// mini-batch size so accumulating outcomes over the batch gives the batch
// mean.
SampleOutcome process_sample(const EventBatch& batch, const NetworkWeights& weights,
                             const NetworkConfig& net_config, const BinningSpec& binning,
                             const SpikeCountLossTargets& targets, std::size_t batch_size,
                             bool with_grads) {
  const FrameTensor frames =
      bin_to_frames(batch, binning.bin_window_us, binning.mode, binning.geometry);
  const ForwardRecord record = forward(frames, weights, net_config);
  const Tensor train = record.output_train();

  SampleOutcome out;
  LossResult loss = sample_spike_count_loss(train, batch.label, targets, batch_size);
  out.loss = loss.loss;
  out.correct = predict(train) == batch.label;
  if (with_grads) out.grads = backward(record, loss.grad, weights, net_config);
  return out;
}

// Runs fn(i) for i in [0, n) on up to `threads` workers. Each index is
// processed exactly once; per-index work must be independent.
void run_indexed(std::size_t n, std::size_t threads, const std::function<void(std::size_t)>& fn) {
  if (threads <= 1 || n <= 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::vector<std::thread> pool;
  const std::size_t workers = std::min(threads, n);
  std::exception_ptr failure;
  std::mutex failure_mutex;
  for (std::size_t w = 0; w < workers; ++w) {
    pool.emplace_back([&] {
      while (true) {
        const std::size_t i = next.fetch_add(1);
        if (i >= n) return;
        try {
          fn(i);
        } catch (...) {
          std::lock_guard<std::mutex> lock(failure_mutex);
          if (!failure) failure = std::current_exception();
          return;
        }
      }
    });
  }
  for (std::thread& t : pool) t.join();
  if (failure) std::rethrow_exception(failure);
}

void check_labels(const std::vector<EventBatch>& set, std::size_t num_classes,
                  const char* what) {
  for (const EventBatch& b : set) {
    if (b.label >= num_classes)
      throw std::invalid_argument(std::string(what) + ": label " + std::to_string(b.label) +
                                  " out of range for " + std::to_string(num_classes) +
                                  " classes");
  }
}

}  // namespace

TrainResult train(const std::vector<EventBatch>& train_set,
                  const std::vector<EventBatch>& val_set, const BinningSpec& binning,
                  const NetworkConfig& net_config, const TrainConfig& config,
                  const ProgressFn& progress) {
  require(!train_set.empty(), "train: empty dataset");
  require(config.batch_size >= 1, "train: batch_size must be >= 1");
  require(config.epochs >= 1, "train: epochs must be >= 1");
  check_labels(train_set, net_config.num_classes, "train");
  check_labels(val_set, net_config.num_classes, "train (validation set)");

  Rng rng(config.seed);
  NetworkWeights weights = init_weights(net_config, rng);
  AdamOptimizer adam(config.adam);

  const std::size_t n = train_set.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});

  TrainResult result;
  for (std::size_t epoch = 1; epoch <= config.epochs; ++epoch) {
    if (config.shuffle) shuffle(order, rng);
    std::size_t iteration = 0;
    for (std::size_t start = 0; start < n; start += config.batch_size) {
      const std::size_t count = std::min(config.batch_size, n - start);
      ++iteration;

      std::vector<SampleOutcome> outcomes(count);
      run_indexed(count, config.threads, [&](std::size_t i) {
        outcomes[i] = process_sample(train_set[order[start + i]], weights, net_config, binning,
                                     config.targets, count, true);
      });

      // Ordered reduction keeps the result identical for any thread count.
      double batch_loss = 0.0;
      std::size_t n_correct = 0;
      NetworkWeights grads = zero_weights(net_config);
      std::vector<Tensor*> acc = grads.tensors();
      for (std::size_t i = 0; i < count; ++i) {
        batch_loss += outcomes[i].loss;
        n_correct += outcomes[i].correct ? 1 : 0;
        const std::vector<const Tensor*> part =
            std::as_const(outcomes[i].grads).tensors();
        for (std::size_t p = 0; p < acc.size(); ++p) add_inplace(*acc[p], *part[p]);
      }
      if (!std::isfinite(batch_loss)) throw std::runtime_error("train: non-finite loss");
      for (const Tensor* g : grads.tensors())
        if (!all_finite(*g)) throw std::runtime_error("train: non-finite gradient");

      adam.step(weights.tensors(), std::as_const(grads).tensors());

      MetricsRow row;
      row.epoch = epoch;
      row.iteration = iteration;
      row.train_loss = batch_loss;
      row.train_accuracy = static_cast<double>(n_correct) / static_cast<double>(count);
      result.history.push_back(row);
      if (progress) progress(row);
    }

    if (!val_set.empty()) {
      const EvalResult ev =
          evaluate(val_set, weights, net_config, binning, config.targets, config.threads);
      result.history.back().val_loss = ev.loss;
      result.history.back().val_accuracy = ev.accuracy;
    }
  }
  result.weights = std::move(weights);
  return result;
}

EvalResult evaluate(const std::vector<EventBatch>& dataset, const NetworkWeights& weights,
                    const NetworkConfig& net_config, const BinningSpec& binning,
                    const SpikeCountLossTargets& targets, std::size_t threads) {
  require(!dataset.empty(), "evaluate: empty dataset");
  check_labels(dataset, net_config.num_classes, "evaluate");

  // The whole set counts as one batch, mirroring validation over all samples
  // at once.
  std::vector<SampleOutcome> outcomes(dataset.size());
  run_indexed(dataset.size(), threads, [&](std::size_t i) {
    outcomes[i] = process_sample(dataset[i], weights, net_config, binning, targets,
                                 dataset.size(), false);
  });

  EvalResult r;
  std::size_t n_correct = 0;
  for (const SampleOutcome& o : outcomes) {
    r.loss += o.loss;
    n_correct += o.correct ? 1 : 0;
  }
  r.accuracy = static_cast<double>(n_correct) / static_cast<double>(dataset.size());
  return r;
}

}  // namespace evsnn
