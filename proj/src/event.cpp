#include "evsnn/event.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <map>
#include <string>
#include <string_view>

#include "evsnn/errors.hpp"
#include "binary_io.hpp"

namespace evsnn {

namespace {

void require(bool cond, const char* msg) {
  if (!cond) throw std::invalid_argument(msg);
}

std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r'))
    s.remove_suffix(1);
  return s;
}

bool parse_u64(std::string_view field, std::uint64_t& out) {
  field = trim(field);
  if (field.empty()) return false;
  const auto [ptr, ec] = std::from_chars(field.data(), field.data() + field.size(), out);
  return ec == std::errc() && ptr == field.data() + field.size();
}

// Splits a CSV line into exactly `n` fields, or returns false.
bool split_fields(std::string_view line, std::string_view* fields, std::size_t n) {
  std::size_t count = 0;
  while (true) {
    const std::size_t comma = line.find(',');
    if (count == n) return false;
    fields[count++] = line.substr(0, comma);
    if (comma == std::string_view::npos) break;
    line.remove_prefix(comma + 1);
  }
  return count == n;
}

}  // namespace

std::vector<Event> parse_event_csv(std::istream& in, const SensorGeometry& geometry) {
  require(geometry.width >= 1 && geometry.height >= 1, "parse_event_csv: bad geometry");
  std::vector<Event> events;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const std::string_view stripped = trim(line);
    if (stripped.empty()) continue;

    std::string_view fields[4];
    if (!split_fields(stripped, fields, 4)) {
      if (line_no == 1) continue;  // header line with a different field count
      throw ParseError("line " + std::to_string(line_no) + ": expected 4 comma-separated fields");
    }

    std::uint64_t ts, x, y, pol;
    if (!parse_u64(fields[0], ts)) {
      if (line_no == 1) continue;  // header line
      throw ParseError("line " + std::to_string(line_no) + ": non-numeric timestamp field");
    }
    if (!parse_u64(fields[1], x) || !parse_u64(fields[2], y) || !parse_u64(fields[3], pol))
      throw ParseError("line " + std::to_string(line_no) + ": non-numeric field");
    if (x >= geometry.width)
      throw ParseError("line " + std::to_string(line_no) + ": x=" + std::to_string(x) +
                       " out of range for sensor width " + std::to_string(geometry.width));
    if (y >= geometry.height)
      throw ParseError("line " + std::to_string(line_no) + ": y=" + std::to_string(y) +
                       " out of range for sensor height " + std::to_string(geometry.height));
    if (pol > 1)
      throw ParseError("line " + std::to_string(line_no) + ": polarity " + std::to_string(pol) +
                       " not in {0,1}");
    events.push_back(Event{ts, static_cast<std::uint16_t>(x), static_cast<std::uint16_t>(y),
                           static_cast<std::uint8_t>(pol)});
  }
  return events;
}

std::vector<EventBatch> slice_into_batches(const std::vector<Event>& events,
                                           std::uint64_t window_us, std::uint16_t label,
                                           std::uint16_t subject) {
  require(window_us > 0, "slice_into_batches: window must be positive");
  for (std::size_t i = 1; i < events.size(); ++i)
    require(events[i].timestamp_us >= events[i - 1].timestamp_us,
            "slice_into_batches: events not sorted by timestamp");

  std::vector<EventBatch> batches;
  std::uint64_t current_window = 0;
  for (const Event& e : events) {
    const std::uint64_t k = e.timestamp_us / window_us;
    if (batches.empty() || k != current_window) {
      batches.push_back(EventBatch{label, subject, window_us, {}});
      current_window = k;
    }
    Event rebased = e;
    rebased.timestamp_us = e.timestamp_us - k * window_us;
    batches.back().events.push_back(rebased);
  }
  return batches;
}

std::vector<EventBatch> sample_batches(const std::vector<EventBatch>& batches, std::size_t k,
                                       Rng& rng) {
  if (k > batches.size())
    throw std::invalid_argument("sample_batches: requested " + std::to_string(k) +
                                " batches but only " + std::to_string(batches.size()) +
                                " available");
  std::vector<EventBatch> chosen;
  chosen.reserve(k);
  for (std::size_t i : sample_indices(batches.size(), k, rng)) chosen.push_back(batches[i]);
  return chosen;
}

namespace {

// floor(fraction * n) in the mathematical sense: a guard absorbs the
// representation error of fractions like 0.7 so 0.7 * 10 counts as 7.
std::size_t floor_fraction(double fraction, std::size_t n) {
  const double p = fraction * static_cast<double>(n);
  return static_cast<std::size_t>(std::floor(p + 1e-9 * static_cast<double>(n ? n : 1)));
}

}  // namespace

SplitResult split_train_val(const std::vector<EventBatch>& dataset, double train_fraction,
                            Rng& rng) {
  require(!dataset.empty(), "split_train_val: empty dataset");
  require(train_fraction > 0.0 && train_fraction < 1.0,
          "split_train_val: train_fraction must be in (0, 1)");

  std::map<std::uint16_t, std::vector<std::size_t>> by_class;
  for (std::size_t i = 0; i < dataset.size(); ++i) by_class[dataset[i].label].push_back(i);

  SplitResult out;
  for (auto& [label, indices] : by_class) {
    shuffle(indices, rng);
    const std::size_t n_train = floor_fraction(train_fraction, indices.size());
    for (std::size_t i = 0; i < indices.size(); ++i) {
      (i < n_train ? out.train : out.val).push_back(dataset[indices[i]]);
    }
  }
  return out;
}

FrameTensor bin_to_frames(const EventBatch& batch, std::uint64_t bin_window_us,
                          EncodingMode mode, const SensorGeometry& geometry) {
  require(bin_window_us > 0, "bin_to_frames: bin window must be positive");
  require(batch.duration_us > 0, "bin_to_frames: batch duration must be positive");
  const std::size_t t_steps = frames_per_batch(batch.duration_us, bin_window_us);
  const std::size_t channels = channel_count(mode);
  const std::size_t h = geometry.height, w = geometry.width;
  require(h >= 1 && w >= 1, "bin_to_frames: bad geometry");

  FrameTensor frames({t_steps, channels, h, w});
  double* fd = frames.data();
  for (const Event& e : batch.events) {
    if (e.timestamp_us >= batch.duration_us)
      throw std::invalid_argument("bin_to_frames: event timestamp beyond batch duration");
    if (e.x >= w)
      throw std::invalid_argument("bin_to_frames: event x=" + std::to_string(e.x) +
                                  " outside sensor width " + std::to_string(w));
    if (e.y >= h)
      throw std::invalid_argument("bin_to_frames: event y=" + std::to_string(e.y) +
                                  " outside sensor height " + std::to_string(h));
    if (e.polarity > 1) throw std::invalid_argument("bin_to_frames: polarity not in {0,1}");
    const std::size_t t = static_cast<std::size_t>(e.timestamp_us / bin_window_us);
    const std::size_t c = mode == EncodingMode::kPolaritySplit ? e.polarity : 0;
    fd[((t * channels + c) * h + e.y) * w + e.x] = 1.0;  // saturating binary encoding
  }
  return frames;
}

EventBatch generate_synthetic(std::uint16_t class_id, const SensorGeometry& geometry,
                              std::uint64_t duration_us, std::size_t events_per_step, Rng& rng) {
  require(duration_us > 0, "generate_synthetic: duration must be positive");
  require(geometry.width >= 1 && geometry.height >= 1, "generate_synthetic: bad geometry");

  const std::size_t h = geometry.height, w = geometry.width;
  const std::size_t band_h = std::max<std::size_t>(1, h / 8);
  const std::size_t rect_w = std::min(w, std::max<std::size_t>(2, w / 6));
  const std::size_t slots = (h - band_h) / band_h + 1;
  const std::size_t band_top = (class_id % slots) * band_h;
  // Classes beyond the available row bands reuse a band but sweep faster.
  const std::uint64_t sweeps = 1 + class_id / slots;
  const std::uint64_t travel = w - rect_w;

  EventBatch batch;
  batch.label = class_id;
  batch.subject = 0;
  batch.duration_us = duration_us;

  constexpr std::uint64_t kStepUs = 1000;
  for (std::uint64_t t = 0; t < duration_us; t += kStepUs) {
    // Triangle wave over the horizontal travel range; integer arithmetic only
    // so the emitted stream is identical on every platform.
    const std::uint64_t p = (t * sweeps) % duration_us;
    const std::uint64_t dist = std::min(p, duration_us - p);
    const std::uint64_t left = travel == 0 ? 0 : (2 * travel * dist) / duration_us;
    const bool moving_right = 2 * p < duration_us;

    for (std::size_t e = 0; e < events_per_step; ++e) {
      const std::uint64_t dx = uniform_below(rng, rect_w);
      const std::uint64_t dy = uniform_below(rng, band_h);
      const bool front_half = dx >= rect_w / 2;
      Event ev;
      ev.timestamp_us = t;
      ev.x = static_cast<std::uint16_t>(left + dx);
      ev.y = static_cast<std::uint16_t>(band_top + dy);
      ev.polarity = (front_half == moving_right) ? 1 : 0;  // brightening leading edge
      batch.events.push_back(ev);
    }
  }
  return batch;
}

void write_dataset(const std::filesystem::path& path, const std::vector<EventBatch>& batches) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw FormatError("cannot open " + path.string() + " for writing");
  out.write("EVDS", 4);
  binio::put_u16(out, 1);  // version
  for (const EventBatch& b : batches) {
    binio::put_u16(out, b.label);
    binio::put_u16(out, b.subject);
    binio::put_u64(out, b.duration_us);
    binio::put_u64(out, b.events.size());
    for (const Event& e : b.events) {
      binio::put_u64(out, e.timestamp_us);
      binio::put_u16(out, e.x);
      binio::put_u16(out, e.y);
      binio::put_u8(out, e.polarity);
    }
  }
  if (!out) throw FormatError("write failed for " + path.string());
}

std::vector<EventBatch> read_dataset(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open " + path.string());
  binio::check_magic(in, "EVDS", "dataset");
  const std::uint16_t version = binio::get_u16(in, "version");
  if (version != 1)
    throw FormatError("unsupported dataset version " + std::to_string(version));

  std::vector<EventBatch> batches;
  std::uint16_t label;
  while (binio::try_get_u16(in, label, "batch header")) {
    EventBatch b;
    b.label = label;
    b.subject = binio::get_u16(in, "subject");
    b.duration_us = binio::get_u64(in, "duration");
    const std::uint64_t count = binio::get_u64(in, "event count");
    b.events.reserve(static_cast<std::size_t>(std::min<std::uint64_t>(count, 1 << 20)));
    for (std::uint64_t i = 0; i < count; ++i) {
      Event e;
      e.timestamp_us = binio::get_u64(in, "event timestamp");
      e.x = binio::get_u16(in, "event x");
      e.y = binio::get_u16(in, "event y");
      e.polarity = binio::get_u8(in, "event polarity");
      b.events.push_back(e);
    }
    batches.push_back(std::move(b));
  }
  return batches;
}

}  // namespace evsnn
