// evsnn: generate, ingest, train and evaluate event-camera datasets with a
// convolutional spiking network.

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include "CLI11.hpp"

#include "evsnn/errors.hpp"
#include "evsnn/event.hpp"
#include "evsnn/network.hpp"
#include "evsnn/rng.hpp"
#include "evsnn/training.hpp"

namespace fs = std::filesystem;

namespace {

struct CommonFlags {
  std::uint64_t seed = 1;
  std::size_t width = 240;
  std::size_t height = 180;
  bool small_geometry = false;
};

evsnn::SensorGeometry geometry_of(const CommonFlags& c) {
  if (c.small_geometry) return {32, 32};
  return {c.width, c.height};
}

// Validator for open-interval fractions.
std::string check_fraction(const std::string& s) {
  try {
    const double v = std::stod(s);
    if (v > 0.0 && v < 1.0) return {};
  } catch (...) {
  }
  return "value must be strictly between 0 and 1";
}

evsnn::ResetMode parse_reset(const std::string& s) {
  if (s == "subtract") return evsnn::ResetMode::kSubtract;
  if (s == "zero") return evsnn::ResetMode::kZero;
  throw CLI::ValidationError("--reset", "must be 'subtract' or 'zero'");
}

// Explicitly passed flags override the architecture preset's LIF choices;
// unset flags leave the preset alone.
struct LifFlags {
  double beta = 0.5;
  double threshold = 1.0;
  std::string reset = "subtract";
  double surrogate_slope = 25.0;
  CLI::Option* beta_opt = nullptr;
  CLI::Option* threshold_opt = nullptr;
  CLI::Option* reset_opt = nullptr;
  CLI::Option* slope_opt = nullptr;
};

void add_lif_flags(CLI::App* cmd, LifFlags& flags) {
  flags.beta_opt = cmd->add_option("--lif-beta", flags.beta, "Membrane decay rate in (0,1)")
                       ->check(CLI::Validator(check_fraction, "FRACTION"));
  flags.threshold_opt = cmd->add_option("--lif-threshold", flags.threshold, "Firing threshold")
                            ->check(CLI::PositiveNumber);
  flags.reset_opt =
      cmd->add_option("--reset", flags.reset, "Membrane reset after a spike: subtract|zero")
          ->check(CLI::IsMember({"subtract", "zero"}));
  flags.slope_opt = cmd->add_option("--surrogate-slope", flags.surrogate_slope,
                                    "Slope of the surrogate gradient")
                        ->check(CLI::PositiveNumber);
}

void apply_lif_flags(const LifFlags& flags, evsnn::NetworkConfig& net) {
  const auto patch = [&](evsnn::LifParams& p) {
    if (flags.beta_opt->count() > 0) p.beta = flags.beta;
    if (flags.threshold_opt->count() > 0) p.threshold = flags.threshold;
    if (flags.reset_opt->count() > 0) p.reset = parse_reset(flags.reset);
  };
  for (auto& blk : net.blocks) patch(blk.lif);
  patch(net.output_lif);
  if (flags.slope_opt->count() > 0) net.surrogate.slope = flags.surrogate_slope;
}

int run_synth_gen(const CommonFlags& common, std::size_t classes, std::size_t per_class,
                  std::uint64_t duration_ms, std::size_t events_per_step,
                  const std::string& out_path) {
  const evsnn::SensorGeometry geometry = geometry_of(common);
  const std::uint64_t duration_us =
      common.small_geometry ? 1000000ull : duration_ms * 1000ull;
  evsnn::Rng rng(common.seed);

  std::vector<evsnn::EventBatch> batches;
  for (std::size_t c = 0; c < classes; ++c) {
    for (std::size_t k = 0; k < per_class; ++k) {
      evsnn::EventBatch b = evsnn::generate_synthetic(static_cast<std::uint16_t>(c), geometry,
                                                      duration_us, events_per_step, rng);
      b.subject = static_cast<std::uint16_t>(k);
      batches.push_back(std::move(b));
    }
  }
  evsnn::write_dataset(out_path, batches);
  std::cout << "wrote " << batches.size() << " batches to " << out_path << "\n";
  return 0;
}

// Recording files are named <subject>_<label>.csv; the rows carry no label.
bool parse_recording_name(const fs::path& path, std::uint16_t& subject, std::uint16_t& label) {
  const std::string stem = path.stem().string();
  const auto sep = stem.find('_');
  if (sep == std::string::npos) return false;
  try {
    const unsigned long s = std::stoul(stem.substr(0, sep));
    const unsigned long l = std::stoul(stem.substr(sep + 1));
    if (s > 0xffff || l > 0xffff) return false;
    subject = static_cast<std::uint16_t>(s);
    label = static_cast<std::uint16_t>(l);
    return true;
  } catch (...) {
    return false;
  }
}

int run_ingest(const CommonFlags& common, const std::string& csv_dir, std::uint64_t window_ms,
               std::size_t sample_k, const std::string& out_path) {
  const evsnn::SensorGeometry geometry = geometry_of(common);
  evsnn::Rng rng(common.seed);

  std::vector<fs::path> files;
  for (const auto& entry : fs::directory_iterator(csv_dir)) {
    if (entry.is_regular_file() && entry.path().extension() == ".csv")
      files.push_back(entry.path());
  }
  if (files.empty()) throw std::runtime_error("no .csv files in " + csv_dir);
  std::sort(files.begin(), files.end());

  std::vector<evsnn::EventBatch> dataset;
  for (const fs::path& file : files) {
    std::uint16_t subject, label;
    if (!parse_recording_name(file, subject, label))
      throw std::runtime_error(file.string() +
                               ": file name must follow <subject>_<label>.csv");
    std::ifstream in(file);
    if (!in) throw std::runtime_error("cannot open " + file.string());
    std::vector<evsnn::Event> events;
    try {
      events = evsnn::parse_event_csv(in, geometry);
    } catch (const evsnn::ParseError& e) {
      throw std::runtime_error(file.string() + ": " + e.what());
    }
    std::vector<evsnn::EventBatch> batches =
        evsnn::slice_into_batches(events, window_ms * 1000ull, label, subject);
    if (sample_k > batches.size())
      throw std::runtime_error(file.string() + ": requested " + std::to_string(sample_k) +
                               " batches per recording but only " +
                               std::to_string(batches.size()) + " available");
    std::vector<evsnn::EventBatch> chosen = evsnn::sample_batches(batches, sample_k, rng);
    dataset.insert(dataset.end(), chosen.begin(), chosen.end());
  }
  evsnn::write_dataset(out_path, dataset);
  std::cout << "wrote " << dataset.size() << " batches from " << files.size() << " recordings to "
            << out_path << "\n";
  return 0;
}

std::size_t derive_num_classes(const std::vector<evsnn::EventBatch>& batches) {
  std::size_t max_label = 0;
  for (const auto& b : batches) max_label = std::max<std::size_t>(max_label, b.label);
  return max_label + 1;
}

std::uint64_t common_duration(const std::vector<evsnn::EventBatch>& batches) {
  const std::uint64_t d = batches.front().duration_us;
  for (const auto& b : batches) {
    if (b.duration_us != d)
      throw std::runtime_error("dataset mixes batch durations (" + std::to_string(d) + " vs " +
                               std::to_string(b.duration_us) + " microseconds)");
  }
  return d;
}

int run_train(const CommonFlags& common, const LifFlags& lif, const std::string& data_path,
              double train_frac, std::uint64_t bin_ms, std::size_t epochs,
              std::size_t batch_size, double lr, const std::string& encoding,
              std::size_t classes_flag, std::size_t threads, const std::string& out_weights,
              const std::string& out_metrics) {
  const std::vector<evsnn::EventBatch> dataset = evsnn::read_dataset(data_path);
  if (dataset.empty()) throw std::runtime_error(data_path + ": dataset is empty");

  evsnn::BinningSpec binning;
  binning.bin_window_us = bin_ms * 1000ull;
  binning.mode = encoding == "merged" ? evsnn::EncodingMode::kMergedSingleChannel
                                      : evsnn::EncodingMode::kPolaritySplit;
  binning.geometry = geometry_of(common);

  const std::size_t num_classes =
      classes_flag > 0 ? classes_flag : derive_num_classes(dataset);
  const std::size_t time_steps =
      evsnn::frames_per_batch(common_duration(dataset), binning.bin_window_us);

  evsnn::NetworkConfig net = common.small_geometry
                                 ? evsnn::NetworkConfig::small_scale(num_classes, time_steps)
                                 : evsnn::NetworkConfig::full_scale();
  net.in_channels = evsnn::channel_count(binning.mode);
  net.in_height = binning.geometry.height;
  net.in_width = binning.geometry.width;
  net.time_steps = time_steps;
  net.num_classes = num_classes;
  apply_lif_flags(lif, net);
  evsnn::compute_shapes(net);  // fail fast with the offending stage

  evsnn::Rng master(common.seed);
  const evsnn::SplitResult split = evsnn::split_train_val(dataset, train_frac, master);

  evsnn::TrainConfig train_config;
  train_config.epochs = epochs;
  train_config.batch_size = batch_size;
  train_config.seed = master();
  train_config.adam.learning_rate = lr;
  train_config.threads = threads;

  std::cout << "training on " << split.train.size() << " batches, validating on "
            << split.val.size() << " (" << num_classes << " classes, " << time_steps
            << " time steps)\n";
  const evsnn::TrainResult result =
      evsnn::train(split.train, split.val, binning, net, train_config,
                   [](const evsnn::MetricsRow& row) {
                     std::printf("epoch %zu iter %zu loss %.6f acc %.4f\n", row.epoch,
                                 row.iteration, row.train_loss, row.train_accuracy);
                   });

  for (const evsnn::MetricsRow& row : result.history) {
    if (row.val_loss)
      std::printf("epoch %zu val_loss %.6f val_acc %.4f\n", row.epoch, *row.val_loss,
                  *row.val_accuracy);
  }
  evsnn::save_checkpoint(out_weights, net, result.weights);
  evsnn::export_metrics(result.history, out_metrics);
  std::cout << "saved weights to " << out_weights << " and metrics to " << out_metrics << "\n";
  return 0;
}

int run_eval(const std::string& data_path, const std::string& weights_path,
             std::uint64_t bin_ms, std::size_t threads) {
  const auto [net, weights] = evsnn::load_checkpoint(weights_path);
  const std::vector<evsnn::EventBatch> dataset = evsnn::read_dataset(data_path);
  if (dataset.empty()) throw std::runtime_error(data_path + ": dataset is empty");

  evsnn::BinningSpec binning;
  const std::uint64_t duration = common_duration(dataset);
  // Default bin window: spread the checkpoint's time steps over the batch
  // duration.
  binning.bin_window_us =
      bin_ms > 0 ? bin_ms * 1000ull : (duration + net.time_steps - 1) / net.time_steps;
  binning.mode = net.in_channels == 1 ? evsnn::EncodingMode::kMergedSingleChannel
                                      : evsnn::EncodingMode::kPolaritySplit;
  binning.geometry = {net.in_width, net.in_height};

  const evsnn::EvalResult r = evsnn::evaluate(dataset, weights, net, binning, {}, threads);
  std::printf("loss=%.6f accuracy=%.3f\n", r.loss, r.accuracy);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Event-camera spiking network trainer"};
  app.require_subcommand(1);

  CommonFlags common;
  LifFlags lif;

  // synth-gen
  auto* synth = app.add_subcommand("synth-gen", "Generate a synthetic labeled event dataset");
  std::size_t classes = 4, per_class = 10, events_per_step = 40;
  std::uint64_t duration_ms = 3000;
  std::string out_path;
  synth->add_option("--classes", classes, "Number of classes")->check(CLI::PositiveNumber);
  synth->add_option("--per-class", per_class, "Batches per class")->check(CLI::PositiveNumber);
  synth->add_option("--seed", common.seed, "Random seed");
  synth->add_option("--out", out_path, "Output dataset path")->required();
  synth->add_option("--width", common.width, "Sensor width")->check(CLI::PositiveNumber);
  synth->add_option("--height", common.height, "Sensor height")->check(CLI::PositiveNumber);
  synth->add_option("--duration-ms", duration_ms, "Batch duration in ms")
      ->check(CLI::PositiveNumber);
  synth->add_option("--events-per-step", events_per_step, "Events emitted per millisecond")
      ->check(CLI::PositiveNumber);
  synth->add_flag("--small-geometry", common.small_geometry,
                  "Preset: 32x32 sensor, 1 s batches");

  // ingest
  auto* ingest = app.add_subcommand("ingest", "Build a dataset from CSV event recordings");
  std::string csv_dir;
  std::uint64_t window_ms = 3000;
  std::size_t sample_k = 3;
  ingest->add_option("--csv-dir", csv_dir, "Directory of <subject>_<label>.csv files")
      ->required()
      ->check(CLI::ExistingDirectory);
  ingest->add_option("--window-ms", window_ms, "Batch window in ms")->check(CLI::PositiveNumber);
  ingest->add_option("--sample-k", sample_k, "Batches sampled per recording")
      ->check(CLI::PositiveNumber);
  ingest->add_option("--seed", common.seed, "Random seed");
  ingest->add_option("--out", out_path, "Output dataset path")->required();
  ingest->add_option("--width", common.width, "Sensor width")->check(CLI::PositiveNumber);
  ingest->add_option("--height", common.height, "Sensor height")->check(CLI::PositiveNumber);

  // train
  auto* train_cmd = app.add_subcommand("train", "Train on a dataset file");
  std::string data_path, out_weights, out_metrics, encoding = "split";
  double train_frac = 0.7, lr = 0.0005;
  std::uint64_t bin_ms = 100;
  std::size_t epochs = 10, batch_size = 25, classes_flag = 0, threads = 1;
  train_cmd->add_option("--data", data_path, "Input dataset")->required();
  train_cmd->add_option("--train-frac", train_frac, "Training fraction of the split")
      ->check(CLI::Validator(check_fraction, "FRACTION"));
  train_cmd->add_option("--seed", common.seed, "Random seed");
  train_cmd->add_option("--out-weights", out_weights, "Checkpoint output path")->required();
  train_cmd->add_option("--out-metrics", out_metrics, "Metrics CSV output path")->required();
  train_cmd->add_option("--lr", lr, "Adam learning rate")->check(CLI::PositiveNumber);
  train_cmd->add_option("--batch-size", batch_size, "Mini-batch size")
      ->check(CLI::PositiveNumber);
  train_cmd->add_option("--epochs", epochs, "Training epochs")->check(CLI::PositiveNumber);
  train_cmd->add_option("--bin-ms", bin_ms, "Frame bin window in ms")
      ->check(CLI::PositiveNumber);
  train_cmd->add_option("--width", common.width, "Sensor width")->check(CLI::PositiveNumber);
  train_cmd->add_option("--height", common.height, "Sensor height")->check(CLI::PositiveNumber);
  train_cmd->add_option("--encoding", encoding, "Frame encoding: split|merged")
      ->check(CLI::IsMember({"split", "merged"}));
  train_cmd->add_option("--classes", classes_flag, "Class count (0: derive from labels)");
  train_cmd->add_option("--threads", threads, "Worker threads per mini-batch")
      ->check(CLI::PositiveNumber);
  train_cmd->add_flag("--small-geometry", common.small_geometry,
                      "Preset: 32x32 sensor with the reduced architecture");
  add_lif_flags(train_cmd, lif);

  // eval
  auto* eval_cmd = app.add_subcommand("eval", "Evaluate a checkpoint on a dataset");
  std::string weights_path;
  std::uint64_t eval_bin_ms = 0;
  std::size_t eval_threads = 1;
  eval_cmd->add_option("--data", data_path, "Input dataset")->required();
  eval_cmd->add_option("--weights", weights_path, "Checkpoint path")->required();
  eval_cmd->add_option("--bin-ms", eval_bin_ms,
                       "Frame bin window in ms (0: derive from the checkpoint)");
  eval_cmd->add_option("--threads", eval_threads, "Worker threads")->check(CLI::PositiveNumber);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    if (app.got_subcommand(synth))
      return run_synth_gen(common, classes, per_class, duration_ms, events_per_step, out_path);
    if (app.got_subcommand(ingest))
      return run_ingest(common, csv_dir, window_ms, sample_k, out_path);
    if (app.got_subcommand(train_cmd))
      return run_train(common, lif, data_path, train_frac, bin_ms, epochs, batch_size, lr,
                       encoding, classes_flag, threads, out_weights, out_metrics);
    if (app.got_subcommand(eval_cmd))
      return run_eval(data_path, weights_path, eval_bin_ms, eval_threads);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
