// Acceptance checks. Prints one PASS/FAIL line per criterion and exits
// non-zero if any fails.
//
//   acceptance                      run every check
//   acceptance --append-child P N   (internal) append N events to log P

#include <spawn.h>
#include <sys/wait.h>
#include <unistd.h>

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <mutex>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "httplib.h"
#include "json.hpp"

#include "alpr/backends.hpp"
#include "alpr/config.hpp"
#include "alpr/eval.hpp"
#include "alpr/geometry.hpp"
#include "alpr/imaging.hpp"
#include "alpr/ocr.hpp"
#include "alpr/pipeline.hpp"
#include "alpr/service.hpp"
#include "alpr/sources.hpp"
#include "alpr/store.hpp"
#include "oracles/alignment_oracle.hpp"
#include "oracles/eval_oracle.hpp"
#include "oracles/geometry_oracle.hpp"
#include "oracles/otsu_oracle.hpp"
#include "test_util.hpp"

extern char** environ;

using namespace alpr;
using namespace std::chrono_literals;
using nlohmann::json;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

std::string fmt(const char* f, auto... args) {
  char buf[256];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

// ---------------------------------------------------------------------------

Outcome f1_table() {
  struct Row {
    double p, r;
    const char* f1;
  };
  const Row rows[] = {{0.70, 0.81, "0.75"}, {0.91, 0.88, "0.89"}, {0.93, 0.86, "0.89"},
                      {0.92, 0.84, "0.88"}, {0.93, 0.87, "0.90"}, {0.93, 0.86, "0.89"}};
  const auto t0 = Clock::now();
  std::string got;
  bool ok = true;
  for (const auto& row : rows) {
    const auto s = format_fixed(round_to(f1(row.p, row.r), 2), 2);
    ok = ok && s == row.f1;
    got += (got.empty() ? "" : " ") + s;
  }
  const double secs = seconds_since(t0);
  return {ok && secs < 1.0, "F1 " + got + fmt(" (%.3f s)", secs)};
}

Outcome filters() {
  const int f = filters_for(plate_head_spec());
  const auto models = published_models();
  const bool table = std::any_of(models.begin(), models.end(), [](const ModelMetadata& m) { return m.filters == 18; });
  return {f == 18 && table, fmt("filters_for(A=5, CL=1) = %d", f)};
}

Outcome otsu() {
  std::mt19937 rng(1001);
  const auto t0 = Clock::now();
  int agree = 0, degenerate = 0;
  for (int i = 0; i < 100; ++i) {
    // Mix of uniform noise and two-mode images.
    auto img = test::random_image(rng, 64, 64, 1);
    if (i % 2) {
      std::normal_distribution<double> lo(60, 15), hi(190, 20);
      std::bernoulli_distribution which(0.4);
      for (int y = 0; y < 64; ++y) {
        for (int x = 0; x < 64; ++x) {
          img.at(x, y, 0) = static_cast<std::uint8_t>(std::clamp(which(rng) ? hi(rng) : lo(rng), 0.0, 255.0));
        }
      }
    }
    const auto h = histogram(img);
    try {
      agree += otsu_threshold(h) == oracle::brute_force_otsu(h);
    } catch (const Error&) {
      ++degenerate;
    }
  }
  const double secs = seconds_since(t0);
  return {agree == 100 && secs < 5.0, fmt("%d/100 equal to exhaustive scan, %d degenerate (%.2f s)", agree, degenerate, secs)};
}

Outcome nms_equivalence() {
  std::mt19937 rng(1002);
  std::uniform_real_distribution<double> thr(0.0, 1.0);
  const auto t0 = Clock::now();
  int agree = 0;
  for (int i = 0; i < 500; ++i) {
    const auto boxes = test::random_box_set(rng, 20, 3);
    const double t = thr(rng);
    agree += nms(boxes, t) == oracle::greedy_nms(boxes, t);
  }
  const double secs = seconds_since(t0);
  return {agree == 500 && secs < 5.0, fmt("%d/500 survivor lists identical (%.2f s)", agree, secs)};
}

Outcome decode_equivalence() {
  std::mt19937 rng(1003);
  const auto t0 = Clock::now();
  int agree = 0;
  std::size_t total = 0;
  for (int i = 0; i < 50; ++i) {
    auto spec = plate_head_spec();
    spec.class_count = 1 + i % 3;
    const auto raw = test::random_tensor(rng, spec);
    const auto got = decode_head(raw, spec, 0.25);
    const auto want = oracle::scalar_decode(raw, spec, 0.25);
    bool same = got.size() == want.size();
    for (std::size_t k = 0; same && k < got.size(); ++k) {
      same = got[k].class_id == want[k].class_id && std::abs(got[k].cx - want[k].cx) <= 1e-6 &&
             std::abs(got[k].cy - want[k].cy) <= 1e-6 && std::abs(got[k].w - want[k].w) <= 1e-6 &&
             std::abs(got[k].h - want[k].h) <= 1e-6 && std::abs(got[k].score - want[k].score) <= 1e-6;
    }
    agree += same;
    total += got.size();
  }
  const double secs = seconds_since(t0);
  return {agree == 50 && secs < 5.0, fmt("%d/50 tensors match, %zu boxes (%.2f s)", agree, total, secs)};
}

Outcome evaluation() {
  std::mt19937 rng(1004);
  const auto t0 = Clock::now();
  bool identity = true;
  int agree = 0;
  const int trials = 200;
  for (int i = 0; i < trials; ++i) {
    GroundTruthSet gts;
    PredictionSet preds;
    std::uniform_int_distribution<int> images(1, 8), count(1, 6), classes(1, 3);
    std::uniform_real_distribution<double> jitter(-0.06, 0.06), unit(0.0, 1.0);
    const int n_classes = classes(rng);
    for (int m = images(rng); m > 0; --m) {
      const auto id = "img" + std::to_string(m);
      for (int k = count(rng); k > 0; --k) {
        auto b = test::random_box(rng, n_classes);
        b.score = 1.0;
        gts[id].push_back(b);
        if (unit(rng) < 0.8) {
          b.cx = std::clamp(b.cx + jitter(rng), 0.0, 1.0);
          b.score = std::round(unit(rng) * 8) / 8;
          preds[id].push_back(b);
        }
        if (unit(rng) < 0.2) preds[id].push_back(test::random_box(rng, n_classes));
      }
    }
    const auto same = evaluate(gts, gts);
    identity = identity && same.map_percent == 100.0 && same.precision == 1.0 && same.recall == 1.0 &&
               same.f1 == 1.0;
    const auto r = evaluate(preds, gts, 0.5, 0.25);
    const auto ref = oracle::reference_evaluate(preds, gts, 0.5, 0.25);
    agree += r.map_percent == ref.map_percent && r.tp == ref.tp && r.fp == ref.fp && r.fn == ref.fn &&
             r.precision == ref.precision && r.recall == ref.recall && r.f1 == ref.f1;
  }
  const double secs = seconds_since(t0);
  return {identity && agree == trials && secs < 10.0,
          fmt("identity mAP 100.00 F1 1.00: %s; %d/%d random instances equal reference (%.2f s)",
              identity ? "yes" : "no", agree, trials, secs)};
}

PipelineConfig mock_config() {
  PipelineConfig c;
  c.mock_boxes = "0.5,0.5,0.25,0.08,0.9";
  c.mock_ocr_text = "ঢাকা মেট্রো-গ ১২-৩৪৫৬";
  return c;
}

Outcome throughput() {
  test::ScratchDir dir;
  const auto config = mock_config();
  const auto backends = make_backends(config);
  SyntheticSource source(300, 1920, 1080);
  EventStore store(dir.path() / "events.ndjson");
  RunHooks hooks;
  hooks.on_detection = [&](const Detection& d) { store.append(d.event, &d.crop); };
  RunControl control;
  const auto s = run(source, config, backends, hooks, control);
  const unsigned cores = std::thread::hardware_concurrency();
  return {s.error.empty() && s.frames_gated >= 300 && s.fps >= 14.0,
          fmt("%.1f fps over %llu frames of 1920x1080, %llu events, %u core(s)", s.fps,
              static_cast<unsigned long long>(s.frames_gated), static_cast<unsigned long long>(s.events), cores)};
}

Outcome determinism() {
  const fs::path fixture = ALPR_FIXTURE_DIR;
  const auto config = load_config((fixture / "run" / "alpr.conf").string());
  test::ScratchDir dir;
  std::vector<std::string> logs, crops;
  for (const char* name : {"a", "b"}) {
    const auto log = dir.path() / name / "events.ndjson";
    {
      const auto backends = make_backends(config);
      DirectorySource source(fixture / "run" / "frames");
      EventStore store(log);
      RunHooks hooks;
      hooks.on_detection = [&](const Detection& d) { store.append(d.event, &d.crop); };
      RunControl control;
      run(source, config, backends, hooks, control);
    }
    logs.push_back(slurp(log));
    std::string all;
    for (const auto& e : fs::directory_iterator(dir.path() / name / "events.crops")) all += slurp(e.path());
    crops.push_back(all);
  }
  const auto lines = std::count(logs[0].begin(), logs[0].end(), '\n');
  return {!logs[0].empty() && logs[0] == logs[1] && crops[0] == crops[1],
          fmt("%ld events, logs %s, crops %s", static_cast<long>(lines),
              logs[0] == logs[1] ? "byte-identical" : "differ", crops[0] == crops[1] ? "identical" : "differ")};
}

DetectionEvent durability_event(int i) {
  std::mt19937 rng(static_cast<unsigned>(5000 + i));
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  DetectionEvent e;
  e.frame_index = i;
  e.timestamp_ms = timestamp_for(i, 30);
  e.vehicle_class = kVehicleClassNames[static_cast<std::size_t>(i % 4)];
  e.vehicle_score = unit(rng);
  e.plate_rect = {i % 1800, i % 1000, 40 + i % 200, 12 + i % 60};
  e.detector_score = unit(rng);
  e.raw_text = "ঢাকা মেট্রো-গ " + std::to_string(i) + "\n";
  e.normalized_text = normalize_text(e.raw_text);
  e.ocr_ms = unit(rng) * 900;
  e.polarity = i % 3 ? "normal" : "inverted";
  return e;
}

int append_child(const std::string& path, int n) {
  EventStore store(path);
  for (int i = 0; i < n; ++i) store.append(durability_event(i));
  return 0;
}

Outcome durability(const char* self) {
  test::ScratchDir dir;
  const auto log = dir.path() / "events.ndjson";
  std::vector<std::string> args{self, "--append-child", log.string(), "1000"};
  std::vector<char*> argv;
  for (auto& a : args) argv.push_back(a.data());
  argv.push_back(nullptr);
  pid_t pid = 0;
  if (posix_spawn(&pid, self, nullptr, nullptr, argv.data(), environ) != 0) return {false, "cannot spawn writer"};
  int status = 0;
  waitpid(pid, &status, 0);
  if (!WIFEXITED(status) || WEXITSTATUS(status) != 0) return {false, "writer process failed"};

  std::size_t exact = 0;
  {
    EventStore store(log, EventStore::Mode::ReadOnly);
    const auto all = store.all();
    for (std::size_t i = 0; i < all.size(); ++i) {
      exact += all[i] == EventRecord{i + 1, durability_event(static_cast<int>(i))};
    }
  }
  // Cut the last record in half.
  const auto content = slurp(log);
  const auto last_start = content.rfind('\n', content.size() - 2) + 1;
  const auto cut = last_start + (content.size() - last_start) / 2;
  fs::resize_file(log, cut);
  std::size_t after = 0, recovered = 0;
  bool truncated = false;
  {
    EventStore store(log);
    after = store.size();
    recovered = store.recovered_bytes();
    truncated = fs::file_size(log) == last_start;
  }
  const bool ok = exact == 1000 && after == 999 && recovered == cut - last_start && truncated;
  return {ok, fmt("%zu/1000 recovered bit-exact after restart; torn tail: %zu records kept, %zu bytes dropped", exact,
                  after, recovered)};
}

Outcome ocr_metric() {
  std::mt19937 rng(1005);
  const std::vector<std::string> alphabet{"ক", "কা", "ঢা", "মে", "ট্রো", "১", "২", "৩", "A", "-", "ক্ষ"};
  std::uniform_int_distribution<std::size_t> pick(0, alphabet.size() - 1);
  std::uniform_int_distribution<int> len(1, 12), len0(0, 12);
  int agree = 0;
  for (int i = 0; i < 200; ++i) {
    std::vector<std::string> truth, pred;
    for (int k = len(rng); k > 0; --k) truth.push_back(alphabet[pick(rng)]);
    for (int k = len0(rng); k > 0; --k) pred.push_back(alphabet[pick(rng)]);
    std::string t, p;
    for (const auto& g : truth) t += g;
    for (const auto& g : pred) p += g;
    const auto ref = oracle::memo_alignment(truth, pred);
    agree += char_accuracy(t, p) == oracle::accuracy_percent(ref.matches, truth.size());
  }
  const auto rows = ocr_report({{"1", "ঢাকা মেট্রো-গ ১২", "ঢাকা মেট্রো-গ ১২", 402}});
  const auto table = render_table(rows);
  const bool columns = table.find("Image No") != std::string::npos &&
                       table.find("No of characters extracted") != std::string::npos &&
                       table.find("Accuracy of OCR (in %)") != std::string::npos &&
                       table.find("Time taken for OCR (in Seconds)") != std::string::npos;
  return {agree == 200 && rows[0].seconds == "0.402" && columns,
          fmt("%d/200 pairs equal alignment oracle; 402 ms renders as %s", agree, rows[0].seconds.c_str())};
}

Outcome service_state_machine() {
  test::ScratchDir dir;
  const fs::path fixture = ALPR_FIXTURE_DIR;
  auto config = load_config((fixture / "run" / "alpr.conf").string());
  // A longer realtime replay keeps the run alive through the script.
  const auto frames = dir.path() / "frames";
  fs::create_directories(frames);
  const auto frame = read_pnm((fixture / "run" / "frames" / "0.ppm").string());
  for (int i = 0; i < 60; ++i) write_pnm((frames / (std::to_string(i) + ".ppm")).string(), frame);
  std::ofstream(frames / "manifest.txt") << "fps = 100\n";
  config.source = frames.string();
  config.replay_realtime = true;
  config.store_path = (dir.path() / "events.ndjson").string();
  config.warning_log = (dir.path() / "warnings.ndjson").string();
  config.record_dir = (dir.path() / "recordings").string();

  service::Service svc(config);
  const int port = svc.bind_any_port("127.0.0.1");
  std::thread server([&] { svc.serve(); });
  svc.wait_until_serving();

  std::mutex mutex;
  std::string buffer;
  httplib::Client stream_client("127.0.0.1", port);
  std::atomic<bool> closing{false};
  std::thread stream([&] {
    stream_client.Get("/stream", [&](const char* data, std::size_t n) {
      std::lock_guard lock(mutex);
      buffer.append(data, n);
      return !closing.load();
    });
  });
  for (int i = 0; i < 500 && svc.broadcaster().size() == 0; ++i) std::this_thread::sleep_for(10ms);

  httplib::Client client("127.0.0.1", port);
  std::vector<json> observed;
  std::atomic<bool> polling{true};
  std::thread poller([&] {
    httplib::Client c("127.0.0.1", port);
    while (polling) {
      if (auto res = c.Get("/metrics")) {
        std::lock_guard lock(mutex);
        observed.push_back(json::parse(res->body));
      }
    }
  });
  const auto post = [&](const char* path) {
    auto res = client.Post(path);
    return res && res->status == 200 ? json::parse(res->body) : json();
  };
  std::vector<json> responses;
  responses.push_back(post("/control/start"));
  responses.push_back(post("/control/start"));
  responses.push_back(post("/control/record/start"));
  std::this_thread::sleep_for(200ms);
  responses.push_back(post("/control/stop"));
  polling = false;
  poller.join();

  std::vector<std::string> states;
  for (const auto& r : responses) states.push_back(r.is_object() ? r["state"].get<std::string>() : "error");
  bool consistent = states == std::vector<std::string>{"running", "running", "recording", "idle"};

  json latest;
  if (auto res = client.Get("/detections/latest?n=100000")) latest = json::parse(res->body);
  std::vector<json> streamed;
  for (int i = 0; i < 300; ++i) {
    streamed.clear();
    {
      std::lock_guard lock(mutex);
      std::istringstream in(buffer);
      for (std::string line; std::getline(in, line);) {
        const auto sp = line.find(' ');
        const auto type = line.substr(0, sp);
        const auto payload = json::parse(line.substr(sp + 1));
        if (type == "detection") streamed.push_back(payload);
        if (type == "state") {
          consistent = consistent && !(payload["recording"].get<bool>() && !payload["running"].get<bool>()) &&
                       !(payload["recording"].get<bool>() && payload["state"] == "idle");
        }
      }
    }
    if (streamed.size() >= latest.size()) break;
    std::this_thread::sleep_for(10ms);
  }
  {
    std::lock_guard lock(mutex);
    for (const auto& m : observed) {
      const auto s = m["state"].get<std::string>();
      consistent = consistent && (s == "idle" || s == "running" || s == "recording");
    }
  }
  for (const auto& r : responses) {
    if (r.is_object()) consistent = consistent && !(r["recording"].get<bool>() && !r["running"].get<bool>());
  }
  const std::vector<json> from_latest(latest.rbegin(), latest.rend());
  const bool agree = !latest.empty() && streamed == from_latest;

  closing = true;
  svc.shutdown();
  stream_client.stop();
  stream.join();
  server.join();

  std::string seq;
  for (const auto& s : states) seq += (seq.empty() ? "" : ",") + s;
  return {consistent && agree, fmt("states %s; %zu streamed vs %zu latest, %s", seq.c_str(), streamed.size(),
                                   latest.size(), agree ? "identical" : "differ")};
}

}  // namespace

int main(int argc, char** argv) {
  if (argc == 4 && std::string(argv[1]) == "--append-child") return append_child(argv[2], std::stoi(argv[3]));

  const std::vector<std::pair<const char*, std::function<Outcome()>>> checks{
      {"f1-reference-rows", f1_table},
      {"yolo-filters", filters},
      {"otsu-oracle-equivalence", otsu},
      {"nms-oracle-equivalence", nms_equivalence},
      {"decode-head-oracle-equivalence", decode_equivalence},
      {"evaluation-harness", evaluation},
      {"throughput-14fps", throughput},
      {"end-to-end-determinism", determinism},
      {"store-durability", [&] { return durability(argv[0]); }},
      {"ocr-metric", ocr_metric},
      {"service-state-machine", service_state_machine},
  };
  int failed = 0;
  for (const auto& [name, check] : checks) {
    Outcome o;
    try {
      o = check();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    failed += !o.pass;
    std::printf("[%s] %s: %s\n", o.pass ? "PASS" : "FAIL", name, o.detail.c_str());
    std::fflush(stdout);
  }
  std::printf("%d/%zu criteria passed\n", static_cast<int>(checks.size()) - failed, checks.size());
  return failed == 0 ? 0 : 1;
}
