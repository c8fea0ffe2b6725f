#pragma once

// HTTP control plane and live push stream around one pipeline instance.
//
// Stream framing: each message is `<type> <json>\n` with type one of
// detection, state, metrics, warning.

#include <algorithm>
#include <atomic>
#include <chrono>
#include <condition_variable>
#include <cstdio>
#include <ctime>
#include <deque>
#include <filesystem>
#include <fstream>
#include <list>
#include <memory>
#include <mutex>
#include <optional>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "httplib.h"
#include "json.hpp"

#include "alpr/backends.hpp"
#include "alpr/config.hpp"
#include "alpr/error.hpp"
#include "alpr/imaging.hpp"
#include "alpr/pipeline.hpp"
#include "alpr/sources.hpp"
#include "alpr/store.hpp"

namespace alpr::service {

using nlohmann::json;

inline constexpr std::size_t kSubscriberBacklog = 256;
inline constexpr auto kMetricsInterval = std::chrono::seconds(1);

inline std::int64_t wall_clock_ms() {
  return std::chrono::duration_cast<std::chrono::milliseconds>(
             std::chrono::system_clock::now().time_since_epoch())
      .count();
}

inline std::string frame_message(std::string_view type, const json& payload) {
  return std::string(type) + " " + payload.dump(-1, ' ', false, json::error_handler_t::replace) + "\n";
}

// Fan-out with a bounded backlog per subscriber. A subscriber that falls 256
// messages behind is cut off rather than slowing the publisher down.
class Broadcaster {
 public:
  struct Subscriber {
    std::mutex mutex;
    std::condition_variable ready;
    std::deque<std::string> backlog;
    bool closed = false;
  };

  std::shared_ptr<Subscriber> subscribe() {
    auto s = std::make_shared<Subscriber>();
    std::lock_guard lock(mutex_);
    subscribers_.push_back(s);
    return s;
  }

  void unsubscribe(const std::shared_ptr<Subscriber>& s) {
    close(*s);
    std::lock_guard lock(mutex_);
    subscribers_.remove(s);
  }

  void publish(std::string_view type, const json& payload) {
    const auto message = frame_message(type, payload);
    std::lock_guard lock(mutex_);
    for (auto it = subscribers_.begin(); it != subscribers_.end();) {
      auto& s = **it;
      bool drop = false;
      {
        std::lock_guard sl(s.mutex);
        if (s.closed || s.backlog.size() >= kSubscriberBacklog) {
          s.closed = true;
          s.backlog.clear();
          drop = true;
        } else {
          s.backlog.push_back(message);
        }
      }
      s.ready.notify_all();
      it = drop ? subscribers_.erase(it) : std::next(it);
    }
  }

  void close_all() {
    std::lock_guard lock(mutex_);
    for (auto& s : subscribers_) close(*s);
    subscribers_.clear();
  }

  std::size_t size() const {
    std::lock_guard lock(mutex_);
    return subscribers_.size();
  }

 private:
  static void close(Subscriber& s) {
    {
      std::lock_guard sl(s.mutex);
      s.closed = true;
    }
    s.ready.notify_all();
  }

  mutable std::mutex mutex_;
  std::list<std::shared_ptr<Subscriber>> subscribers_;
};

// Numbered PPM frames plus `manifest.txt` in a fresh directory per session.
class Recorder {
 public:
  std::filesystem::path start(const std::filesystem::path& root, double fps) {
    std::lock_guard lock(mutex_);
    if (active_) return dir_;
    std::error_code ec;
    std::filesystem::create_directories(root, ec);
    char stamp[32];
    const std::time_t now = std::time(nullptr);
    std::tm tm{};
    ::localtime_r(&now, &tm);
    std::strftime(stamp, sizeof stamp, "%Y%m%d-%H%M%S", &tm);
    for (int n = 0;; ++n) {
      auto candidate = root / (std::string("session-") + stamp + (n ? "-" + std::to_string(n) : ""));
      if (std::filesystem::create_directory(candidate, ec)) {
        dir_ = candidate;
        break;
      }
      if (ec) throw Error(ErrorKind::IoFailure, "cannot create " + candidate.string() + ": " + ec.message());
    }
    fps_ = fps;
    frames_ = 0;
    active_ = true;
    return dir_;
  }

  void write(const ImageBuf& annotated) {
    std::lock_guard lock(mutex_);
    if (!active_) return;
    char name[32];
    std::snprintf(name, sizeof name, "%06llu.ppm", static_cast<unsigned long long>(frames_));
    write_pnm((dir_ / name).string(), annotated);
    ++frames_;
  }

  // Writes the manifest; a no-op when not recording.
  std::optional<std::filesystem::path> stop() {
    std::lock_guard lock(mutex_);
    if (!active_) return std::nullopt;
    active_ = false;
    std::ofstream manifest(dir_ / "manifest.txt");
    manifest << "fps = " << fps_ << "\nframes = " << frames_ << "\n";
    return dir_;
  }

  bool active() const {
    std::lock_guard lock(mutex_);
    return active_;
  }

 private:
  mutable std::mutex mutex_;
  bool active_ = false;
  std::filesystem::path dir_;
  double fps_ = 0;
  std::uint64_t frames_ = 0;
};

struct HttpError : std::runtime_error {
  HttpError(int status, std::string kind, const std::string& message)
      : std::runtime_error(message), status(status), kind(std::move(kind)) {}
  int status;
  std::string kind;
};

struct WarningRecord {
  std::int64_t timestamp_ms = 0;
  std::optional<std::uint64_t> event_seq;
  std::string reason;
};

inline json to_json(const WarningRecord& w) {
  json j{{"timestamp_ms", w.timestamp_ms}, {"reason", w.reason}};
  j["event_seq"] = w.event_seq ? json(*w.event_seq) : json(nullptr);
  return j;
}

inline json to_json(const RunSummary& s) {
  json j{{"frames_in", s.frames_in},         {"frames_processed", s.frames_gated},
         {"frames_passed", s.frames_passed}, {"frames_dropped", s.frames_dropped},
         {"events", s.events},               {"elapsed_ms", s.elapsed_ms},
         {"fps", s.fps}};
  j["error"] = s.error.empty() ? json(nullptr) : json(s.error);
  return j;
}

enum class State { Idle, Running, Recording };

constexpr std::string_view to_string(State s) {
  switch (s) {
    case State::Idle: return "idle";
    case State::Running: return "running";
    case State::Recording: return "recording";
  }
  return "idle";
}

class Service {
 public:
  explicit Service(PipelineConfig config)
      : config_(std::move(config)),
        backends_(make_backends(config_)),
        store_(std::make_unique<EventStore>(config_.store_path)) {
    // SO_REUSEPORT (httplib's default) would let a second server share a busy port.
    http_.set_socket_options([](socket_t sock) {
      int yes = 1;
      ::setsockopt(sock, SOL_SOCKET, SO_REUSEADDR, &yes, sizeof yes);
    });
    install_routes();
    ticker_ = std::thread([this] { tick_metrics(); });
    webhook_worker_ = std::thread([this] { deliver_webhooks(); });
  }

  ~Service() { shutdown(); }
  Service(const Service&) = delete;
  Service& operator=(const Service&) = delete;

  // ---- control -----------------------------------------------------------

  json start() {
    std::lock_guard control(control_mutex_);
    {
      std::lock_guard lock(state_mutex_);
      if (state_ != State::Idle) return state_json_locked();
    }
    if (worker_.joinable()) worker_.join();
    std::unique_ptr<FrameSource> source;
    try {
      source = open_source(config_.source, config_);
    } catch (const Error& e) {
      throw HttpError(409, std::string(to_string(e.kind())), e.what());
    }
    auto control_block = std::make_shared<RunControl>();
    {
      std::lock_guard lock(state_mutex_);
      state_ = State::Running;
      started_at_ms_ = wall_clock_ms();
      source_fps_ = source->fps();
      run_control_ = control_block;
      last_summary_.reset();
      last_error_.clear();
      ++generation_;
    }
    const auto generation = generation_;
    worker_ = std::thread([this, generation, control_block, src = std::move(source)]() mutable {
      RunHooks hooks;
      hooks.on_detection = [this](const Detection& d) {
        const auto rec = store_->append(d.event, &d.crop);
        broadcaster_.publish("detection", to_json(rec));
      };
      hooks.on_frame = [this](const FrameEnvelope& f, const std::vector<Detection>& ds) {
        on_frame(f, ds);
      };
      const auto summary = run(*src, config_, backends_, hooks, *control_block);
      src.reset();
      finish_run(generation, summary);
    });
    const auto state = state_json();
    broadcaster_.publish("state", state);
    return state;
  }

  json stop() {
    std::lock_guard control(control_mutex_);
    std::shared_ptr<RunControl> control_block;
    {
      std::lock_guard lock(state_mutex_);
      control_block = run_control_;
    }
    if (control_block) control_block->stop = true;
    if (worker_.joinable()) worker_.join();
    bool changed = false;
    {
      std::lock_guard lock(state_mutex_);
      changed = state_ != State::Idle;
      state_ = State::Idle;
      recorder_.stop();
    }
    const auto state = state_json();
    if (changed) broadcaster_.publish("state", state);
    return state;
  }

  json record_start() {
    std::lock_guard control(control_mutex_);
    {
      std::lock_guard lock(state_mutex_);
      if (state_ == State::Idle) {
        throw HttpError(409, "InvalidState", "cannot record while idle");
      }
      if (state_ == State::Running) {
        recording_dir_ = recorder_.start(config_.record_dir, source_fps_);
        state_ = State::Recording;
      }
    }
    const auto state = state_json();
    broadcaster_.publish("state", state);
    return state;
  }

  json record_stop() {
    std::lock_guard control(control_mutex_);
    bool changed = false;
    {
      std::lock_guard lock(state_mutex_);
      if (state_ == State::Recording) {
        recorder_.stop();
        state_ = State::Running;
        changed = true;
      }
    }
    const auto state = state_json();
    if (changed) broadcaster_.publish("state", state);
    return state;
  }

  WarningRecord warn(const std::string& reason, std::optional<std::uint64_t> event_seq) {
    if (event_seq && !store_->contains(*event_seq)) {
      throw HttpError(404, "NotFound", "no event with seq " + std::to_string(*event_seq));
    }
    WarningRecord w;
    w.reason = reason;
    w.event_seq = event_seq;
    {
      std::lock_guard lock(warning_mutex_);
      w.timestamp_ms = std::max(wall_clock_ms(), last_warning_ms_);
      last_warning_ms_ = w.timestamp_ms;
      std::ofstream log(config_.warning_log, std::ios::app | std::ios::binary);
      if (!log) throw HttpError(500, "IoFailure", "cannot open " + config_.warning_log);
      log << to_json(w).dump(-1, ' ', false, json::error_handler_t::replace) << '\n';
    }
    broadcaster_.publish("warning", to_json(w));
    if (!config_.webhook_url.empty()) {
      std::lock_guard lock(webhook_mutex_);
      webhook_queue_.push_back(to_json(w).dump());
      webhook_ready_.notify_one();
    }
    return w;
  }

  // ---- queries -----------------------------------------------------------

  json state_json() const {
    std::lock_guard lock(state_mutex_);
    return state_json_locked();
  }

  json metrics_json() const {
    std::lock_guard lock(state_mutex_);
    const auto s = run_control_ ? run_control_->snapshot() : RunSummary{};
    return {{"fps", s.fps},
            {"frames_in", s.frames_in},
            {"frames_processed", s.frames_gated},
            {"frames_passed", s.frames_passed},
            {"frames_dropped", s.frames_dropped},
            {"events_total", s.events},
            {"elapsed_ms", s.elapsed_ms},
            {"state", to_string(state_)}};
  }

  EventStore& store() { return *store_; }
  Broadcaster& broadcaster() { return broadcaster_; }
  httplib::Server& http() { return http_; }

  std::optional<ImageBuf> latest_frame() const {
    std::lock_guard lock(frame_mutex_);
    return latest_frame_;
  }

  // ---- lifecycle ---------------------------------------------------------

  // Binds without serving; returns false when the address is unavailable.
  bool bind(const std::string& host, int port) { return http_.bind_to_port(host, port); }
  int bind_any_port(const std::string& host) { return http_.bind_to_any_port(host); }
  bool serve() { return http_.listen_after_bind(); }
  void wait_until_serving() { http_.wait_until_ready(); }

  void shutdown() {
    if (shut_down_.exchange(true)) return;
    stop();
    {
      std::lock_guard lock(tick_mutex_);
      closing_ = true;
    }
    tick_cv_.notify_all();
    webhook_ready_.notify_all();
    broadcaster_.close_all();
    http_.stop();
    if (ticker_.joinable()) ticker_.join();
    if (webhook_worker_.joinable()) webhook_worker_.join();
  }

  std::optional<RunSummary> last_summary() const {
    std::lock_guard lock(state_mutex_);
    return last_summary_;
  }

 private:
  json state_json_locked() const {
    const auto s = run_control_ ? run_control_->snapshot() : RunSummary{};
    json j{{"state", to_string(state_)},
           {"running", state_ != State::Idle},
           {"recording", state_ == State::Recording},
           {"fps", s.fps},
           {"frames_processed", s.frames_gated},
           {"frames_dropped", s.frames_dropped}};
    j["started_at_ms"] = state_ == State::Idle ? json(nullptr) : json(started_at_ms_);
    j["last_error"] = last_error_.empty() ? json(nullptr) : json(last_error_);
    j["summary"] = last_summary_ ? to_json(*last_summary_) : json(nullptr);
    j["recording_dir"] =
        state_ == State::Recording ? json(recording_dir_.string()) : json(nullptr);
    return j;
  }

  void finish_run(std::uint64_t generation, const RunSummary& summary) {
    bool changed = false;
    {
      std::lock_guard lock(state_mutex_);
      if (generation != generation_) return;
      last_summary_ = summary;
      last_error_ = summary.error;
      changed = state_ != State::Idle;
      state_ = State::Idle;
      recorder_.stop();
    }
    if (changed) broadcaster_.publish("state", state_json());
  }

  void on_frame(const FrameEnvelope& frame, const std::vector<Detection>& detections) {
    ImageBuf annotated = frame.image;
    for (const auto& d : detections) {
      char label[64];
      std::snprintf(label, sizeof label, "%s %d%%", d.event.vehicle_class.c_str(),
                    static_cast<int>(std::lround(d.event.detector_score * 100)));
      annotated = draw_box(annotated, d.event.plate_rect, label);
    }
    recorder_.write(annotated);
    std::lock_guard lock(frame_mutex_);
    latest_frame_ = std::move(annotated);
  }

  void tick_metrics() {
    std::unique_lock lock(tick_mutex_);
    while (!closing_) {
      if (tick_cv_.wait_for(lock, kMetricsInterval, [this] { return closing_; })) break;
      lock.unlock();
      const auto m = metrics_json();
      broadcaster_.publish("metrics", {{"fps", m["fps"]}, {"dropped", m["frames_dropped"]}});
      lock.lock();
    }
  }

  void deliver_webhooks() {
    for (;;) {
      std::string body;
      {
        std::unique_lock lock(webhook_mutex_);
        webhook_ready_.wait(lock, [this] { return !webhook_queue_.empty() || shut_down_.load(); });
        if (webhook_queue_.empty()) return;
        body = std::move(webhook_queue_.front());
        webhook_queue_.pop_front();
      }
      const auto& url = config_.webhook_url;
      const auto scheme_end = url.find("://");
      const auto path_start = url.find('/', scheme_end == std::string::npos ? 0 : scheme_end + 3);
      const auto origin = url.substr(0, path_start);
      const auto path = path_start == std::string::npos ? "/" : url.substr(path_start);
      httplib::Client client(origin);
      client.set_connection_timeout(std::chrono::seconds(2));
      client.set_read_timeout(std::chrono::seconds(2));
      (void)client.Post(path, body, "application/json");
    }
  }

  static void send_json(httplib::Response& res, const json& j, int status = 200) {
    res.status = status;
    res.set_content(j.dump(-1, ' ', false, json::error_handler_t::replace), "application/json");
  }

  template <typename F>
  static httplib::Server::Handler guarded(F f) {
    return [f](const httplib::Request& req, httplib::Response& res) {
      try {
        f(req, res);
      } catch (const HttpError& e) {
        send_json(res, {{"error", e.what()}, {"kind", e.kind}}, e.status);
      } catch (const Error& e) {
        send_json(res, {{"error", e.what()}, {"kind", to_string(e.kind())}},
                  exit_code_for(e.kind()) == 2 ? 400 : 500);
      } catch (const std::exception& e) {
        send_json(res, {{"error", e.what()}, {"kind", "Internal"}}, 500);
      }
    };
  }

  void install_routes() {
    http_.Post("/control/start", guarded([this](const auto&, auto& res) { send_json(res, start()); }));
    http_.Post("/control/stop", guarded([this](const auto&, auto& res) { send_json(res, stop()); }));
    http_.Post("/control/record/start",
               guarded([this](const auto&, auto& res) { send_json(res, record_start()); }));
    http_.Post("/control/record/stop",
               guarded([this](const auto&, auto& res) { send_json(res, record_stop()); }));

    http_.Post("/control/warning", guarded([this](const httplib::Request& req, auto& res) {
      json body;
      try {
        body = json::parse(req.body.empty() ? "{}" : req.body);
      } catch (const json::exception&) {
        throw HttpError(400, "MalformedLine", "body is not JSON");
      }
      if (!body.is_object() || !body.contains("reason") || !body["reason"].is_string()) {
        throw HttpError(400, "InvalidArgument", "reason (string) is required");
      }
      std::optional<std::uint64_t> seq;
      if (body.contains("event_seq") && !body["event_seq"].is_null()) {
        if (!body["event_seq"].is_number_integer()) {
          throw HttpError(400, "InvalidArgument", "event_seq must be an integer");
        }
        const auto v = body["event_seq"].get<std::int64_t>();
        if (v < 1) throw HttpError(404, "NotFound", "no event with seq " + std::to_string(v));
        seq = static_cast<std::uint64_t>(v);
      }
      send_json(res, to_json(warn(body["reason"].get<std::string>(), seq)));
    }));

    http_.Get("/detections/latest", guarded([this](const httplib::Request& req, auto& res) {
      long long n = 10;
      if (req.has_param("n")) {
        try {
          n = parse_int(req.get_param_value("n"), "n");
        } catch (const Error&) {
          throw HttpError(400, "InvalidArgument", "n must be an integer");
        }
      }
      if (n < 1) throw HttpError(400, "InvalidArgument", "n must be >= 1");
      json out = json::array();
      for (const auto& r : store_->latest(static_cast<std::size_t>(n))) out.push_back(alpr::to_json(r));
      send_json(res, out);
    }));

    http_.Get(R"(/vehicles/(.+))", guarded([this](const httplib::Request& req, auto& res) {
      json out = json::array();
      for (const auto& r : store_->query_by_plate(req.matches[1].str())) out.push_back(alpr::to_json(r));
      send_json(res, out);
    }));

    http_.Get("/metrics", guarded([this](const auto&, auto& res) { send_json(res, metrics_json()); }));

    http_.Get("/frame/latest", guarded([this](const auto&, auto& res) {
      const auto frame = latest_frame();
      if (!frame) throw HttpError(404, "NotFound", "no frame processed yet");
      std::ostringstream out;
      write_pnm(out, *frame);
      res.set_content(out.str(), "image/x-portable-pixmap");
    }));

    http_.Get("/stream", [this](const httplib::Request&, httplib::Response& res) {
      auto sub = broadcaster_.subscribe();
      res.set_chunked_content_provider(
          "application/x-ndjson",
          [sub](std::size_t, httplib::DataSink& sink) {
            std::deque<std::string> batch;
            {
              std::unique_lock lock(sub->mutex);
              sub->ready.wait_for(lock, std::chrono::milliseconds(200),
                                  [&] { return !sub->backlog.empty() || sub->closed; });
              if (sub->closed) {
                sink.done();
                return true;
              }
              batch.swap(sub->backlog);
            }
            for (const auto& m : batch) {
              if (!sink.write(m.data(), m.size())) return false;
            }
            return sink.is_writable();
          },
          [this, sub](bool) { broadcaster_.unsubscribe(sub); });
    });
  }

  PipelineConfig config_;
  Backends backends_;
  std::unique_ptr<EventStore> store_;
  Broadcaster broadcaster_;
  Recorder recorder_;
  httplib::Server http_;

  std::mutex control_mutex_;
  mutable std::mutex state_mutex_;
  State state_ = State::Idle;
  std::int64_t started_at_ms_ = 0;
  double source_fps_ = 0;
  std::shared_ptr<RunControl> run_control_;
  std::optional<RunSummary> last_summary_;
  std::string last_error_;
  std::filesystem::path recording_dir_;
  std::uint64_t generation_ = 0;
  std::thread worker_;

  mutable std::mutex frame_mutex_;
  std::optional<ImageBuf> latest_frame_;

  std::mutex warning_mutex_;
  std::int64_t last_warning_ms_ = 0;

  std::mutex tick_mutex_;
  std::condition_variable tick_cv_;
  bool closing_ = false;
  std::thread ticker_;

  std::mutex webhook_mutex_;
  std::condition_variable webhook_ready_;
  std::deque<std::string> webhook_queue_;
  std::thread webhook_worker_;

  std::atomic<bool> shut_down_{false};
};

}  // namespace alpr::service
