#pragma once

// Frame-level flow: vehicle gate, letterboxed plate detection, plate OCR, and
// the threaded run loop with bounded buffering between ingestion and
// processing.

#include <atomic>
#include <chrono>
#include <condition_variable>
#include <cstdint>
#include <deque>
#include <functional>
#include <mutex>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include "alpr/backends.hpp"
#include "alpr/config.hpp"
#include "alpr/error.hpp"
#include "alpr/geometry.hpp"
#include "alpr/image.hpp"
#include "alpr/imaging.hpp"
#include "alpr/ocr.hpp"
#include "alpr/sources.hpp"

namespace alpr {

struct VehicleClass {
  int index = 0;
  GateScores scores{};

  std::string_view name() const { return kVehicleClassNames[static_cast<std::size_t>(index)]; }
  double score() const { return scores[static_cast<std::size_t>(index)]; }
};

// The whole frame, stretched to 96x96, is classified. The best class (lowest
// index on ties) passes when its score reaches the threshold.
inline std::optional<VehicleClass> gate_frame(const FrameEnvelope& frame, VehicleClassifier& classifier,
                                              double threshold) {
  const auto input = resize(frame.image, kGateInputSide, kGateInputSide);
  GateScores scores{};
  try {
    scores = classifier.classify(input);
  } catch (const std::exception& e) {
    throw Error(ErrorKind::BackendFailure,
                "frame " + std::to_string(frame.frame_index) + ": classifier: " + e.what());
  }
  for (double s : scores) {
    if (!(s >= 0 && s <= 1)) {
      throw Error(ErrorKind::BackendFailure,
                  "frame " + std::to_string(frame.frame_index) + ": classifier score outside [0,1]");
    }
  }
  VehicleClass best{0, scores};
  for (int i = 1; i < 4; ++i) {
    if (scores[static_cast<std::size_t>(i)] > scores[static_cast<std::size_t>(best.index)]) best.index = i;
  }
  if (best.score() >= threshold) return best;
  return std::nullopt;
}

// ---------------------------------------------------------------------------
// Letterbox.

struct LetterboxMapping {
  int source_width = 0, source_height = 0;
  int target_width = 0, target_height = 0;
  int content_width = 0, content_height = 0;
  int pad_x = 0, pad_y = 0;

  // Normalized box in letterbox space -> normalized box in the source frame.
  BBox to_source(const BBox& b) const {
    BBox out = b;
    out.cx = (b.cx * target_width - pad_x) / content_width;
    out.cy = (b.cy * target_height - pad_y) / content_height;
    out.w = b.w * target_width / content_width;
    out.h = b.h * target_height / content_height;
    return clamp_box(out);
  }

  PixelRect to_pixel(const BBox& b) const {
    return alpr::to_pixel(to_source(b), source_width, source_height);
  }
};

struct Letterboxed {
  ImageBuf image;
  LetterboxMapping mapping;
};

// Aspect-preserving resize into a black target_width x target_height canvas,
// content centered (odd padding leaves the extra row/column at the end).
inline Letterboxed letterbox(const ImageBuf& img, int target_width, int target_height) {
  if (target_width < 1 || target_height < 1) {
    throw Error(ErrorKind::InvalidArgument, "letterbox target must be >= 1x1");
  }
  LetterboxMapping m;
  m.source_width = img.width();
  m.source_height = img.height();
  m.target_width = target_width;
  m.target_height = target_height;
  const double scale = std::min(static_cast<double>(target_width) / img.width(),
                                static_cast<double>(target_height) / img.height());
  m.content_width = std::clamp(static_cast<int>(std::lround(img.width() * scale)), 1, target_width);
  m.content_height = std::clamp(static_cast<int>(std::lround(img.height() * scale)), 1, target_height);
  m.pad_x = (target_width - m.content_width) / 2;
  m.pad_y = (target_height - m.content_height) / 2;

  const auto content = resize(img, m.content_width, m.content_height);
  if (m.content_width == target_width && m.content_height == target_height) return {content, m};
  const int C = img.channels();
  ImageBuf canvas(target_width, target_height, C, 0);
  auto dst = canvas.data();
  for (int y = 0; y < m.content_height; ++y) {
    const auto src = content.row(y);
    std::copy(src.begin(), src.end(),
              dst.begin() + ((static_cast<std::ptrdiff_t>(y) + m.pad_y) * target_width + m.pad_x) * C);
  }
  return {std::move(canvas), m};
}

// ---------------------------------------------------------------------------
// Events.

struct DetectionEvent {
  std::int64_t frame_index = 0;
  std::int64_t timestamp_ms = 0;
  std::string vehicle_class;
  double vehicle_score = 0;
  PixelRect plate_rect;
  double detector_score = 0;
  std::string raw_text;
  std::string normalized_text;
  double ocr_ms = 0;
  // ok | timeout | engine_not_found | engine_crashed | degenerate | too_small
  std::string ocr_status = "ok";
  std::string polarity = "normal";
  std::string crop_ref;  // filled in by the sink that persists the crop

  friend bool operator==(const DetectionEvent&, const DetectionEvent&) = default;
};

struct Detection {
  DetectionEvent event;
  ImageBuf crop;
};

namespace detail {

inline void read_plate(Detection& d, const PipelineConfig& config, OcrEngine& engine) {
  auto& ev = d.event;
  try {
    const auto prepared = preprocess_plate(d.crop, config.min_plate_height);
    const auto r = recognize(prepared, engine, config.ocr_language, config.ocr_timeout());
    ev.ocr_ms = std::max(0.0, r.duration_ms);
    ev.polarity = std::string(to_string(r.polarity_used));
    if (r.timed_out) {
      ev.ocr_status = "timeout";
    } else {
      ev.raw_text = r.raw_text;
    }
  } catch (const Error& e) {
    switch (e.kind()) {
      case ErrorKind::DegenerateHistogram: ev.ocr_status = "degenerate"; break;
      case ErrorKind::InvalidArgument: ev.ocr_status = "too_small"; break;
      case ErrorKind::EngineNotFound: ev.ocr_status = "engine_not_found"; break;
      case ErrorKind::EngineCrashed: ev.ocr_status = "engine_crashed"; break;
      default: throw;
    }
  }
  ev.normalized_text = normalize_text(ev.raw_text);
}

}  // namespace detail

struct FrameOutcome {
  std::optional<VehicleClass> vehicle;
  std::vector<Detection> detections;
};

inline FrameOutcome evaluate_frame(const FrameEnvelope& frame, const PipelineConfig& config,
                                   const Backends& backends) {
  FrameOutcome outcome;
  outcome.vehicle = gate_frame(frame, *backends.classifier, config.gate_threshold);
  if (!outcome.vehicle) return outcome;
  const auto& vehicle = outcome.vehicle;

  const auto& spec = backends.detector->spec();
  const auto boxed = letterbox(frame.image, spec.input_width, spec.input_height);
  std::vector<BBox> boxes;
  try {
    const auto raw = backends.detector->infer(boxed.image);
    boxes = nms(decode_head(raw, spec, config.detector_conf_threshold), config.nms_iou_threshold);
  } catch (const std::exception& e) {
    throw Error(ErrorKind::BackendFailure,
                "frame " + std::to_string(frame.frame_index) + ": detector: " + e.what());
  }
  std::stable_sort(boxes.begin(), boxes.end(),
                   [](const BBox& a, const BBox& b) { return a.score > b.score; });

  auto& out = outcome.detections;
  out.reserve(boxes.size());
  for (const auto& b : boxes) {
    Detection d;
    auto& ev = d.event;
    ev.frame_index = frame.frame_index;
    ev.timestamp_ms = frame.timestamp_ms;
    ev.vehicle_class = std::string(vehicle->name());
    ev.vehicle_score = vehicle->score();
    ev.plate_rect = boxed.mapping.to_pixel(b);
    ev.detector_score = b.score;
    d.crop = crop(frame.image, ev.plate_rect);
    try {
      detail::read_plate(d, config, *backends.ocr);
    } catch (const Error& e) {
      throw Error(e.kind(), "frame " + std::to_string(frame.frame_index) + ": ocr: " + e.what());
    }
    out.push_back(std::move(d));
  }
  return outcome;
}

// One event per plate surviving NMS, highest detector score first. Empty when
// the gate rejects the frame; detector and OCR are then not called.
inline std::vector<Detection> process_frame(const FrameEnvelope& frame, const PipelineConfig& config,
                                            const Backends& backends) {
  return evaluate_frame(frame, config, backends).detections;
}

// ---------------------------------------------------------------------------
// Run loop.

template <typename T>
class BoundedQueue {
 public:
  explicit BoundedQueue(std::size_t capacity) : capacity_(std::max<std::size_t>(1, capacity)) {}

  // Waits for room. False when the queue was closed or `stop` raised first.
  bool push_wait(T item, const std::atomic<bool>& stop) {
    std::unique_lock lock(mutex_);
    while (items_.size() >= capacity_ && !closed_ && !stop.load()) {
      not_full_.wait_for(lock, std::chrono::milliseconds(20));
    }
    if (closed_ || stop.load()) return false;
    items_.push_back(std::move(item));
    not_empty_.notify_one();
    return true;
  }

  // Never waits: evicts the oldest item when full. Returns the number of items
  // lost (the evicted one, or the new one when closed).
  std::size_t push_drop_oldest(T item) {
    std::lock_guard lock(mutex_);
    if (closed_) return 1;
    std::size_t dropped = 0;
    if (items_.size() >= capacity_) {
      items_.pop_front();
      dropped = 1;
    }
    items_.push_back(std::move(item));
    not_empty_.notify_one();
    return dropped;
  }

  // Blocks until an item arrives or the queue is closed and empty.
  std::optional<T> pop() {
    std::unique_lock lock(mutex_);
    not_empty_.wait(lock, [&] { return !items_.empty() || closed_; });
    if (items_.empty()) return std::nullopt;
    T item = std::move(items_.front());
    items_.pop_front();
    not_full_.notify_one();
    return item;
  }

  void close() {
    std::lock_guard lock(mutex_);
    closed_ = true;
    not_empty_.notify_all();
    not_full_.notify_all();
  }

  // Discards everything queued; returns how many items that was.
  std::size_t drain() {
    std::lock_guard lock(mutex_);
    const auto n = items_.size();
    items_.clear();
    not_full_.notify_all();
    return n;
  }

  std::size_t size() const {
    std::lock_guard lock(mutex_);
    return items_.size();
  }

 private:
  std::size_t capacity_;
  mutable std::mutex mutex_;
  std::condition_variable not_empty_, not_full_;
  std::deque<T> items_;
  bool closed_ = false;
};

inline double compute_fps(std::uint64_t frames, double elapsed_ms) {
  return elapsed_ms > 0 ? static_cast<double>(frames) / (elapsed_ms / 1000.0) : 0.0;
}

struct RunSummary {
  std::uint64_t frames_in = 0;
  std::uint64_t frames_gated = 0;   // frames that reached the gate
  std::uint64_t frames_passed = 0;  // frames the gate let through
  std::uint64_t frames_dropped = 0;
  std::uint64_t events = 0;
  double elapsed_ms = 0;
  double fps = 0;
  std::string error;
};

// Shared between the run loop and observers on other threads: raise `stop`
// to end a run, read the counters for live metrics.
struct RunControl {
  std::atomic<bool> stop{false};
  std::atomic<std::uint64_t> frames_in{0}, frames_gated{0}, frames_passed{0}, frames_dropped{0},
      events{0};
  std::atomic<std::int64_t> started_ns{0};
  std::atomic<std::int64_t> elapsed_ns{-1};  // set when the run ends

  RunSummary snapshot() const {
    RunSummary s;
    s.frames_in = frames_in.load();
    s.frames_gated = frames_gated.load();
    s.frames_passed = frames_passed.load();
    s.frames_dropped = frames_dropped.load();
    s.events = events.load();
    auto ns = elapsed_ns.load();
    if (ns < 0) {
      const auto start = started_ns.load();
      ns = start == 0 ? 0
                      : std::chrono::steady_clock::now().time_since_epoch().count() - start;
    }
    s.elapsed_ms = static_cast<double>(ns) / 1e6;
    s.fps = compute_fps(s.frames_gated, s.elapsed_ms);
    return s;
  }
};

struct RunHooks {
  // Called once per event, in frame order, from the processing thread.
  std::function<void(const Detection&)> on_detection;
  // Called after a frame's events were delivered.
  std::function<void(const FrameEnvelope&, const std::vector<Detection>&)> on_frame;
};

// Ingestion runs on its own thread feeding a queue of `queue_capacity` frames;
// processing and the hooks run on the calling thread. Live sources drop the
// oldest queued frame when the queue is full, other sources wait. Frames still
// queued when the run stops count as dropped.
inline RunSummary run(FrameSource& source, const PipelineConfig& config, const Backends& backends,
                      const RunHooks& hooks, RunControl& control) {
  using clock = std::chrono::steady_clock;
  const auto t0 = clock::now();
  control.started_ns = t0.time_since_epoch().count();
  control.elapsed_ns = -1;

  BoundedQueue<FrameEnvelope> queue(static_cast<std::size_t>(config.queue_capacity));
  std::string source_error;
  std::thread ingest([&] {
    try {
      const bool live = source.live();
      while (auto frame = source.next(control.stop)) {
        ++control.frames_in;
        if (live) {
          control.frames_dropped += queue.push_drop_oldest(std::move(*frame));
        } else if (!queue.push_wait(std::move(*frame), control.stop)) {
          ++control.frames_dropped;
          break;
        }
      }
    } catch (const std::exception& e) {
      source_error = e.what();
    }
    queue.close();
  });

  std::string error;
  while (auto frame = queue.pop()) {
    if (control.stop.load()) {
      ++control.frames_dropped;
      break;
    }
    ++control.frames_gated;
    try {
      const auto outcome = evaluate_frame(*frame, config, backends);
      if (outcome.vehicle) ++control.frames_passed;
      const auto& detections = outcome.detections;
      for (const auto& d : detections) {
        if (hooks.on_detection) hooks.on_detection(d);
        ++control.events;
      }
      if (hooks.on_frame) hooks.on_frame(*frame, detections);
    } catch (const std::exception& e) {
      error = e.what();
      control.stop = true;
      break;
    }
  }
  control.stop = true;
  queue.close();
  ingest.join();
  control.frames_dropped += queue.drain();

  control.elapsed_ns = (clock::now() - t0).count();
  auto summary = control.snapshot();
  summary.error = !error.empty() ? error : source_error;
  return summary;
}

}  // namespace alpr
