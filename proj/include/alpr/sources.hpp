#pragma once

// Frame sources: numbered PPM directories, a raw RGB24 byte stream (stdin or
// an external decoder's stdout) and an in-memory synthetic generator.
//
// Raw stream layout: one ASCII line `width height fps\n`, then frames of
// width*height*3 bytes, row-major RGB.

#include <poll.h>
#include <unistd.h>

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <memory>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include "alpr/config.hpp"
#include "alpr/error.hpp"
#include "alpr/image.hpp"
#include "alpr/kv.hpp"
#include "alpr/subprocess.hpp"

namespace alpr {

struct FrameEnvelope {
  std::int64_t frame_index = 0;
  std::int64_t timestamp_ms = 0;
  ImageBuf image;
};

inline constexpr double kDefaultSourceFps = 30.0;

inline std::int64_t timestamp_for(std::int64_t ordinal, double fps) {
  return std::llround(static_cast<double>(ordinal) * 1000.0 / fps);
}

class FrameSource {
 public:
  virtual ~FrameSource() = default;
  // Next frame, or nullopt at end of stream or once `stop` is raised.
  virtual std::optional<FrameEnvelope> next(const std::atomic<bool>& stop) = 0;
  // Live sources cannot be paused; the pipeline drops frames instead of
  // blocking them.
  virtual bool live() const = 0;
  virtual double fps() const = 0;
};

namespace detail {

inline bool sleep_until_or_stop(std::chrono::steady_clock::time_point when,
                                const std::atomic<bool>& stop) {
  while (std::chrono::steady_clock::now() < when) {
    if (stop.load()) return false;
    std::this_thread::sleep_for(std::min<std::chrono::steady_clock::duration>(
        when - std::chrono::steady_clock::now(), std::chrono::milliseconds(20)));
  }
  return !stop.load();
}

}  // namespace detail

// `<dir>/<n>.ppm` frames in numeric order; `manifest.txt` may set `fps = <n>`.
class DirectorySource final : public FrameSource {
 public:
  explicit DirectorySource(const std::filesystem::path& dir, bool realtime = false)
      : realtime_(realtime) {
    namespace fs = std::filesystem;
    std::error_code ec;
    if (!fs::is_directory(dir, ec)) {
      throw Error(ErrorKind::SourceUnavailable, "frame directory " + dir.string() + " not found");
    }
    const auto manifest = dir / "manifest.txt";
    if (fs::exists(manifest)) {
      for (const auto& e : load_key_values(manifest.string())) {
        if (e.key == "fps") fps_ = parse_double(e.value, "manifest fps");
      }
      if (!(fps_ > 0)) throw Error(ErrorKind::SourceUnavailable, "manifest fps must be > 0");
    }
    std::vector<std::pair<unsigned long long, fs::path>> numbered;
    for (const auto& entry : fs::directory_iterator(dir)) {
      const auto& p = entry.path();
      if (!entry.is_regular_file() || p.extension() != ".ppm") continue;
      const auto stem = p.stem().string();
      if (stem.empty() || !std::all_of(stem.begin(), stem.end(), ::isdigit)) continue;
      numbered.emplace_back(std::stoull(stem), p);
    }
    std::sort(numbered.begin(), numbered.end());
    for (auto& [n, p] : numbered) frames_.push_back(std::move(p));
  }

  std::optional<FrameEnvelope> next(const std::atomic<bool>& stop) override {
    if (stop.load() || cursor_ >= frames_.size()) return std::nullopt;
    const auto ordinal = static_cast<std::int64_t>(cursor_);
    if (realtime_) {
      if (cursor_ == 0) start_ = std::chrono::steady_clock::now();
      const auto due = start_ + std::chrono::duration_cast<std::chrono::steady_clock::duration>(
                                    std::chrono::duration<double>(ordinal / fps_));
      if (!detail::sleep_until_or_stop(due, stop)) return std::nullopt;
    }
    FrameEnvelope f;
    f.frame_index = ordinal;
    f.timestamp_ms = timestamp_for(ordinal, fps_);
    try {
      f.image = read_pnm(frames_[cursor_].string());
    } catch (const Error& e) {
      throw Error(ErrorKind::SourceUnavailable, e.what());
    }
    if (f.image.channels() != 3) {
      throw Error(ErrorKind::SourceUnavailable, frames_[cursor_].string() + " is not an RGB frame");
    }
    ++cursor_;
    return f;
  }

  bool live() const override { return realtime_; }
  double fps() const override { return fps_; }
  std::size_t size() const { return frames_.size(); }

 private:
  std::vector<std::filesystem::path> frames_;
  std::size_t cursor_ = 0;
  double fps_ = kDefaultSourceFps;
  bool realtime_ = false;
  std::chrono::steady_clock::time_point start_{};
};

// Reads the raw stream from a file descriptor it does not own.
class RawStreamSource final : public FrameSource {
 public:
  explicit RawStreamSource(int fd) : fd_(fd) {}

  std::optional<FrameEnvelope> next(const std::atomic<bool>& stop) override {
    if (!header_read_ && !read_header(stop)) return std::nullopt;
    if (ended_) return std::nullopt;
    ImageBuf img(width_, height_, 3);
    const auto bytes = img.data();
    std::size_t got = 0;
    while (got < bytes.size()) {
      const auto n = read_some(bytes.data() + got, bytes.size() - got, stop);
      if (n < 0) return std::nullopt;  // stopped
      if (n == 0) {
        ended_ = true;
        if (got == 0) return std::nullopt;
        throw Error(ErrorKind::SourceUnavailable,
                    "stream ended inside frame " + std::to_string(ordinal_));
      }
      got += static_cast<std::size_t>(n);
    }
    FrameEnvelope f;
    f.frame_index = ordinal_;
    f.timestamp_ms = timestamp_for(ordinal_, fps_);
    f.image = std::move(img);
    ++ordinal_;
    return f;
  }

  bool live() const override { return true; }
  double fps() const override { return fps_; }

 private:
  // Bytes read, 0 at end of stream, -1 when stopped while waiting.
  long read_some(std::uint8_t* dst, std::size_t len, const std::atomic<bool>& stop) {
    for (;;) {
      if (stop.load()) return -1;
      pollfd p{fd_, POLLIN, 0};
      const int rc = ::poll(&p, 1, 50);
      if (rc < 0 && errno != EINTR) throw Error(ErrorKind::SourceUnavailable, "poll failed");
      if (rc <= 0) continue;
      const auto n = ::read(fd_, dst, len);
      if (n < 0) {
        if (errno == EINTR || errno == EAGAIN) continue;
        throw Error(ErrorKind::SourceUnavailable, std::string("read failed: ") + std::strerror(errno));
      }
      return static_cast<long>(n);
    }
  }

  bool read_header(const std::atomic<bool>& stop) {
    std::string line;
    for (;;) {
      std::uint8_t c = 0;
      const auto n = read_some(&c, 1, stop);
      if (n < 0) return false;
      if (n == 0) {
        if (line.empty()) {
          ended_ = header_read_ = true;
          return false;
        }
        throw Error(ErrorKind::SourceUnavailable, "stream header not terminated");
      }
      if (c == '\n') break;
      line.push_back(static_cast<char>(c));
      if (line.size() > 64) throw Error(ErrorKind::SourceUnavailable, "stream header too long");
    }
    std::istringstream hs(line);
    if (!(hs >> width_ >> height_ >> fps_) || width_ < 1 || height_ < 1 || !(fps_ > 0)) {
      throw Error(ErrorKind::SourceUnavailable, "bad stream header '" + line + "'");
    }
    header_read_ = true;
    return true;
  }

  int fd_;
  int width_ = 0, height_ = 0;
  double fps_ = kDefaultSourceFps;
  bool header_read_ = false, ended_ = false;
  std::int64_t ordinal_ = 0;
};

// Runs an external decoder (`{input}` replaced by the video path) that writes
// the raw stream to its stdout.
class DecoderSource final : public FrameSource {
 public:
  DecoderSource(const std::string& command_template, const std::string& input)
      : child_(build_args(command_template, input)), stream_(child_.fd()) {}

  std::optional<FrameEnvelope> next(const std::atomic<bool>& stop) override {
    return stream_.next(stop);
  }
  bool live() const override { return true; }
  double fps() const override { return stream_.fps(); }

 private:
  static std::vector<std::string> build_args(const std::string& tmpl, const std::string& input) {
    auto args = proc::split_command(tmpl);
    for (auto& a : args) {
      for (auto pos = a.find("{input}"); pos != std::string::npos; pos = a.find("{input}", pos + input.size())) {
        a.replace(pos, 7, input);
      }
    }
    return args;
  }

  proc::ChildReader child_;
  RawStreamSource stream_;
};

// `count` copies of one deterministic frame, each with its index stamped into
// the first pixels so consecutive frames differ.
class SyntheticSource final : public FrameSource {
 public:
  SyntheticSource(std::int64_t count, int width, int height, double fps = kDefaultSourceFps,
                  bool live = false)
      : count_(count), fps_(fps), live_(live), base_(width, height, 3) {
    for (int y = 0; y < height; ++y) {
      for (int x = 0; x < width; ++x) {
        base_.at(x, y, 0) = static_cast<std::uint8_t>((x * 7 + y * 3) & 0xff);
        base_.at(x, y, 1) = static_cast<std::uint8_t>((x ^ y) & 0xff);
        base_.at(x, y, 2) = static_cast<std::uint8_t>((y * 5) & 0xff);
      }
    }
  }

  std::optional<FrameEnvelope> next(const std::atomic<bool>& stop) override {
    if (stop.load() || produced_ >= count_) return std::nullopt;
    FrameEnvelope f;
    f.frame_index = produced_;
    f.timestamp_ms = timestamp_for(produced_, fps_);
    f.image = base_;
    auto px = f.image.data();
    for (std::size_t i = 0; i < 8 && i < px.size(); ++i) {
      px[i] = static_cast<std::uint8_t>((produced_ >> (8 * i)) & 0xff);
    }
    ++produced_;
    return f;
  }

  bool live() const override { return live_; }
  double fps() const override { return fps_; }

 private:
  std::int64_t count_;
  std::int64_t produced_ = 0;
  double fps_;
  bool live_;
  ImageBuf base_;
};

// `-` is standard input; a directory is a PPM frame directory; any other path
// goes through `decoder_command` when one is configured.
inline std::unique_ptr<FrameSource> open_source(const std::string& spec, const PipelineConfig& config) {
  namespace fs = std::filesystem;
  if (spec.empty()) throw Error(ErrorKind::SourceUnavailable, "no source configured");
  if (spec == "-") return std::make_unique<RawStreamSource>(STDIN_FILENO);
  std::error_code ec;
  if (fs::is_directory(spec, ec)) return std::make_unique<DirectorySource>(spec, config.replay_realtime);
  if (!fs::exists(spec, ec)) throw Error(ErrorKind::SourceUnavailable, "source " + spec + " not found");
  if (config.decoder_command.empty()) {
    throw Error(ErrorKind::SourceUnavailable,
                "source " + spec + " is not a frame directory and no decoder_command is set");
  }
  return std::make_unique<DecoderSource>(config.decoder_command, spec);
}

}  // namespace alpr
