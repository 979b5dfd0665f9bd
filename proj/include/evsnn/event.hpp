#pragma once

#include <cstdint>
#include <filesystem>
#include <istream>
#include <vector>

#include "evsnn/rng.hpp"
#include "evsnn/tensor.hpp"

namespace evsnn {

// One pixel brightness-change report from the sensor. Polarity 0 is a
// decrease, 1 an increase. Timestamps are microseconds since the start of the
// containing recording or batch.
struct Event {
  std::uint64_t timestamp_us = 0;
  std::uint16_t x = 0;
  std::uint16_t y = 0;
  std::uint8_t polarity = 0;

  bool operator==(const Event&) const = default;
};

struct SensorGeometry {
  std::size_t width = 240;
  std::size_t height = 180;
};

// A labeled, fixed-duration slice of a recording; the unit of training data.
// Invariants: events sorted by timestamp (non-decreasing), every timestamp
// strictly below duration_us.
struct EventBatch {
  std::uint16_t label = 0;
  std::uint16_t subject = 0;
  std::uint64_t duration_us = 0;
  std::vector<Event> events;

  bool operator==(const EventBatch&) const = default;
};

// How events map onto frame channels: either everything collapses onto one
// channel, or polarities 0/1 get a channel each.
enum class EncodingMode { kMergedSingleChannel, kPolaritySplit };

inline std::size_t channel_count(EncodingMode mode) {
  return mode == EncodingMode::kPolaritySplit ? 2 : 1;
}

// [T, C, H, W] binary spike frames produced by temporal binning.
using FrameTensor = Tensor;

// Everything bin_to_frames needs, bundled so the training layer can bin
// batches lazily.
struct BinningSpec {
  std::uint64_t bin_window_us = 100000;  // 100 ms
  EncodingMode mode = EncodingMode::kPolaritySplit;
  SensorGeometry geometry;
};

// Lines of `timestamp,x,y,polarity`. One optional header line is skipped when
// its first field is not numeric. Throws ParseError with the 1-based line
// number on malformed lines and out-of-range fields.
std::vector<Event> parse_event_csv(std::istream& in, const SensorGeometry& geometry);

// Cuts a sorted event stream into consecutive half-open windows
// [k*window, (k+1)*window). Timestamps are rebased to the window start and
// every emitted batch carries duration = window. Windows containing no events
// produce no batch. Throws on unsorted input.
std::vector<EventBatch> slice_into_batches(const std::vector<Event>& events,
                                           std::uint64_t window_us, std::uint16_t label,
                                           std::uint16_t subject);

// k distinct batches chosen uniformly without replacement.
std::vector<EventBatch> sample_batches(const std::vector<EventBatch>& batches, std::size_t k,
                                       Rng& rng);

struct SplitResult {
  std::vector<EventBatch> train;
  std::vector<EventBatch> val;
};

// Shuffles within each class, then takes floor(train_fraction * n_class) per
// class for training and leaves the rest for validation.
SplitResult split_train_val(const std::vector<EventBatch>& dataset, double train_fraction,
                            Rng& rng);

// Bins a batch into binary frames: frame index t = floor(timestamp / bin).
// T = ceil(duration / bin). Repeated events saturate at 1.
FrameTensor bin_to_frames(const EventBatch& batch, std::uint64_t bin_window_us,
                          EncodingMode mode, const SensorGeometry& geometry);

inline std::size_t frames_per_batch(std::uint64_t duration_us, std::uint64_t bin_window_us) {
  return static_cast<std::size_t>((duration_us + bin_window_us - 1) / bin_window_us);
}

// Emits a class-distinctive silhouette sweeping left-to-right and back: the
// class index picks the row band (and the sweep count once bands wrap), so
// distinct classes produce distinguishable spatial patterns. Deterministic
// given the rng state.
EventBatch generate_synthetic(std::uint16_t class_id, const SensorGeometry& geometry,
                              std::uint64_t duration_us, std::size_t events_per_step, Rng& rng);

// Binary dataset container, little-endian: magic "EVDS", version u16, then one
// record per batch (label u16, subject u16, duration u64, count u64, then
// count x (ts u64, x u16, y u16, pol u8)). Round-trips bit-exactly.
void write_dataset(const std::filesystem::path& path, const std::vector<EventBatch>& batches);
std::vector<EventBatch> read_dataset(const std::filesystem::path& path);

}  // namespace evsnn
