#pragma once

// Append-only NDJSON event log with an in-memory plate index rebuilt on open.
// Plate crops live next to the log in `<stem>.crops/<seq>.pgm`.

#include <fcntl.h>
#include <unistd.h>

#include <cerrno>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <mutex>
#include <shared_mutex>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"

#include "alpr/error.hpp"
#include "alpr/image.hpp"
#include "alpr/imaging.hpp"
#include "alpr/ocr.hpp"
#include "alpr/pipeline.hpp"

namespace alpr {

struct EventRecord {
  std::uint64_t seq = 0;
  DetectionEvent event;

  friend bool operator==(const EventRecord&, const EventRecord&) = default;
};

inline nlohmann::json to_json(const EventRecord& r) {
  const auto& e = r.event;
  return {{"seq", r.seq},
          {"frame_index", e.frame_index},
          {"timestamp_ms", e.timestamp_ms},
          {"vehicle_class", e.vehicle_class},
          {"vehicle_score", e.vehicle_score},
          {"plate_rect",
           {{"x", e.plate_rect.x},
            {"y", e.plate_rect.y},
            {"width", e.plate_rect.width},
            {"height", e.plate_rect.height}}},
          {"detector_score", e.detector_score},
          {"raw_text", e.raw_text},
          {"normalized_text", e.normalized_text},
          {"ocr_ms", e.ocr_ms},
          {"ocr_status", e.ocr_status},
          {"polarity", e.polarity},
          {"crop_ref", e.crop_ref}};
}

inline EventRecord record_from_json(const nlohmann::json& j) {
  EventRecord r;
  auto& e = r.event;
  r.seq = j.at("seq").get<std::uint64_t>();
  e.frame_index = j.at("frame_index").get<std::int64_t>();
  e.timestamp_ms = j.at("timestamp_ms").get<std::int64_t>();
  e.vehicle_class = j.at("vehicle_class").get<std::string>();
  e.vehicle_score = j.at("vehicle_score").get<double>();
  const auto& rect = j.at("plate_rect");
  e.plate_rect = {rect.at("x").get<int>(), rect.at("y").get<int>(), rect.at("width").get<int>(),
                  rect.at("height").get<int>()};
  e.detector_score = j.at("detector_score").get<double>();
  e.raw_text = j.at("raw_text").get<std::string>();
  e.normalized_text = j.at("normalized_text").get<std::string>();
  e.ocr_ms = j.at("ocr_ms").get<double>();
  e.ocr_status = j.at("ocr_status").get<std::string>();
  e.polarity = j.at("polarity").get<std::string>();
  e.crop_ref = j.at("crop_ref").get<std::string>();
  return r;
}

inline std::string to_ndjson_line(const EventRecord& r) {
  return to_json(r).dump(-1, ' ', false, nlohmann::json::error_handler_t::replace) + "\n";
}

class EventStore {
 public:
  enum class Mode { ReadWrite, ReadOnly };

  // Replays the log. A final line cut short by a crash is discarded (and, in
  // read-write mode, truncated away); any other unreadable line is an error.
  explicit EventStore(std::filesystem::path path, Mode mode = Mode::ReadWrite)
      : path_(std::move(path)), mode_(mode) {
    namespace fs = std::filesystem;
    std::error_code ec;
    const bool exists = fs::exists(path_, ec);
    if (!exists && mode_ == Mode::ReadOnly) {
      throw Error(ErrorKind::IoFailure, "event log " + path_.string() + " not found");
    }
    if (exists) replay();
    if (mode_ == Mode::ReadWrite) {
      if (path_.has_parent_path()) fs::create_directories(path_.parent_path(), ec);
      fd_ = ::open(path_.c_str(), O_WRONLY | O_APPEND | O_CREAT | O_CLOEXEC, 0644);
      if (fd_ < 0) {
        throw Error(ErrorKind::IoFailure, "cannot open " + path_.string() + ": " + std::strerror(errno));
      }
      if (needs_newline_) write_all("\n");
    }
  }

  ~EventStore() {
    if (fd_ >= 0) ::close(fd_);
  }
  EventStore(const EventStore&) = delete;
  EventStore& operator=(const EventStore&) = delete;

  const std::filesystem::path& path() const { return path_; }

  std::filesystem::path crop_dir() const {
    return path_.parent_path() / (path_.stem().string() + ".crops");
  }

  // Persists the crop (grayscale PGM) first, then the log line. The record
  // becomes visible to readers only after its line has been written.
  EventRecord append(DetectionEvent event, const ImageBuf* crop = nullptr) {
    if (mode_ != Mode::ReadWrite) throw Error(ErrorKind::IoFailure, "store opened read-only");
    std::lock_guard writer(write_mutex_);
    EventRecord rec;
    rec.seq = last_seq_ + 1;
    if (crop != nullptr) {
      char name[32];
      std::snprintf(name, sizeof name, "%08llu.pgm", static_cast<unsigned long long>(rec.seq));
      std::error_code ec;
      std::filesystem::create_directories(crop_dir(), ec);
      const auto file = crop_dir() / name;
      write_pnm(file.string(), crop->channels() == 3 ? grayscale(*crop) : *crop);
      event.crop_ref = crop_dir().filename().string() + "/" + name;
    }
    rec.event = std::move(event);
    write_all(to_ndjson_line(rec));
    last_seq_ = rec.seq;
    std::unique_lock lock(mutex_);
    publish(rec);
    return rec;
  }

  // Records whose normalized text equals the normalized query, oldest first.
  std::vector<EventRecord> query_by_plate(std::string_view plate) const {
    const auto key = normalize_text(plate);
    std::shared_lock lock(mutex_);
    std::vector<EventRecord> out;
    const auto it = index_.find(key);
    if (it == index_.end()) return out;
    out.reserve(it->second.size());
    for (auto i : it->second) out.push_back(records_[i]);
    return out;
  }

  // Newest first.
  std::vector<EventRecord> latest(std::size_t n) const {
    std::shared_lock lock(mutex_);
    const auto count = std::min(n, records_.size());
    return {records_.rbegin(), records_.rbegin() + static_cast<std::ptrdiff_t>(count)};
  }

  std::vector<EventRecord> all() const {
    std::shared_lock lock(mutex_);
    return records_;
  }

  bool contains(std::uint64_t seq) const {
    std::shared_lock lock(mutex_);
    return seq_index_.count(seq) > 0;
  }

  std::size_t size() const {
    std::shared_lock lock(mutex_);
    return records_.size();
  }

  // Bytes removed from the end of the log on open.
  std::size_t recovered_bytes() const { return recovered_bytes_; }

 private:
  void replay() {
    std::ifstream in(path_, std::ios::binary);
    if (!in) throw Error(ErrorKind::IoFailure, "cannot read " + path_.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    const std::string content = ss.str();

    std::size_t pos = 0;
    int line_no = 0;
    while (pos < content.size()) {
      ++line_no;
      const auto nl = content.find('\n', pos);
      const bool terminated = nl != std::string::npos;
      const std::string_view line(content.data() + pos, (terminated ? nl : content.size()) - pos);
      EventRecord rec;
      bool ok = true;
      try {
        rec = record_from_json(nlohmann::json::parse(line));
      } catch (const nlohmann::json::exception&) {
        ok = false;
      }
      if (!ok && !terminated) {
        recovered_bytes_ = line.size();
        if (mode_ == Mode::ReadWrite) std::filesystem::resize_file(path_, pos);
        return;
      }
      if (!ok) {
        throw Error(ErrorKind::CorruptRecord,
                    path_.string() + ":" + std::to_string(line_no) + ": unreadable record");
      }
      if (rec.seq <= last_seq_) {
        throw Error(ErrorKind::CorruptRecord, path_.string() + ":" + std::to_string(line_no) +
                                                  ": sequence " + std::to_string(rec.seq) +
                                                  " does not increase");
      }
      last_seq_ = rec.seq;
      publish(rec);
      needs_newline_ = !terminated;
      pos = terminated ? nl + 1 : content.size();
    }
  }

  void publish(const EventRecord& rec) {
    index_[rec.event.normalized_text].push_back(records_.size());
    seq_index_[rec.seq] = records_.size();
    records_.push_back(rec);
  }

  void write_all(const std::string& bytes) {
    std::size_t done = 0;
    while (done < bytes.size()) {
      const auto n = ::write(fd_, bytes.data() + done, bytes.size() - done);
      if (n < 0) {
        if (errno == EINTR) continue;
        throw Error(ErrorKind::IoFailure, "write to " + path_.string() + " failed: " + std::strerror(errno));
      }
      done += static_cast<std::size_t>(n);
    }
  }

  std::filesystem::path path_;
  Mode mode_;
  int fd_ = -1;
  bool needs_newline_ = false;
  std::size_t recovered_bytes_ = 0;
  std::uint64_t last_seq_ = 0;
  std::mutex write_mutex_;
  mutable std::shared_mutex mutex_;
  std::vector<EventRecord> records_;
  std::map<std::string, std::vector<std::size_t>> index_;
  std::map<std::uint64_t, std::size_t> seq_index_;
};

}  // namespace alpr
