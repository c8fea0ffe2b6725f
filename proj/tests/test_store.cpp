#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <random>
#include <thread>

#include "alpr/store.hpp"
#include "test_util.hpp"

using namespace alpr;
namespace fs = std::filesystem;

namespace {

DetectionEvent sample_event(std::int64_t frame, const std::string& text) {
  DetectionEvent e;
  e.frame_index = frame;
  e.timestamp_ms = frame * 33;
  e.vehicle_class = "car";
  e.vehicle_score = 0.875;
  e.plate_rect = {10, 20, 120, 40};
  e.detector_score = 0.7312;
  e.raw_text = text + "\n";
  e.normalized_text = normalize_text(e.raw_text);
  e.ocr_ms = 402.25;
  return e;
}

DetectionEvent random_event(std::mt19937& rng) {
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::uniform_int_distribution<int> px(0, 1900), pick(0, 3);
  static const std::vector<std::string> plates{"ঢাকা মেট্রো-গ ১২-৩৪৫৬", "চট্ট মেট্রো-ক ১১", "1234", ""};
  DetectionEvent e = sample_event(px(rng), plates[static_cast<std::size_t>(pick(rng))]);
  e.vehicle_score = unit(rng);
  e.detector_score = unit(rng);
  e.ocr_ms = unit(rng) * 1000;
  e.plate_rect = {px(rng), px(rng) / 2, 1 + px(rng) / 10, 1 + px(rng) / 40};
  return e;
}

std::string read_file(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace

TEST(Store, EmptyAndMissing) {
  test::ScratchDir dir;
  const auto log = dir.path() / "events.ndjson";
  std::ofstream(log).close();
  EventStore store(log);
  EXPECT_EQ(store.size(), 0u);
  EXPECT_TRUE(store.latest(5).empty());
  EXPECT_THROW(EventStore(dir.path() / "none.ndjson", EventStore::Mode::ReadOnly), Error);
}

TEST(Store, AppendReopenRoundTripsEveryField) {
  test::ScratchDir dir;
  const auto log = dir.path() / "events.ndjson";
  std::mt19937 rng(21);
  std::vector<EventRecord> written;
  {
    EventStore store(log);
    for (int i = 0; i < 50; ++i) written.push_back(store.append(random_event(rng)));
  }
  EXPECT_EQ(written.front().seq, 1u);
  EXPECT_EQ(written.back().seq, 50u);
  EventStore reopened(log);
  EXPECT_EQ(reopened.all(), written);
}

TEST(Store, LatestAndQuery) {
  test::ScratchDir dir;
  EventStore store(dir.path() / "events.ndjson");
  store.append(sample_event(1, "ঢাকা মেট্রো"));
  store.append(sample_event(2, "চট্ট ১১"));
  store.append(sample_event(3, "ঢাকা মেট্রো"));

  const auto latest = store.latest(1);
  ASSERT_EQ(latest.size(), 1u);
  EXPECT_EQ(latest[0].seq, 3u);
  EXPECT_EQ(store.latest(100).size(), 3u);
  EXPECT_EQ(store.latest(100)[0].seq, 3u);

  // Decomposed vowel sign and stray spaces in the query still match.
  const auto hits = store.query_by_plate("  ঢাকা  মেট্রে\u09BE ");
  ASSERT_EQ(hits.size(), 2u);
  EXPECT_EQ(hits[0].event.frame_index, 1);
  EXPECT_EQ(hits[1].event.frame_index, 3);
  for (const auto& h : hits) EXPECT_EQ(h.event.normalized_text, normalize_text("ঢাকা মেট্রো"));
  EXPECT_TRUE(store.query_by_plate("খুলনা").empty());
}

TEST(Store, CropWrittenBesideLog) {
  test::ScratchDir dir;
  EventStore store(dir.path() / "events.ndjson");
  const auto crop = test::synthetic_plate(40, 16);
  const auto rec = store.append(sample_event(1, "১"), &crop);
  EXPECT_EQ(rec.event.crop_ref, "events.crops/00000001.pgm");
  const auto back = read_pnm((dir.path() / rec.event.crop_ref).string());
  EXPECT_EQ(back, grayscale(crop));
}

TEST(Store, TornFinalLineIsDiscarded) {
  test::ScratchDir dir;
  const auto log = dir.path() / "events.ndjson";
  {
    EventStore store(log);
    for (int i = 0; i < 3; ++i) store.append(sample_event(i, "১২"));
  }
  const auto intact = read_file(log);
  {
    std::ofstream out(log, std::ios::app | std::ios::binary);
    out << R"({"seq":4,"frame_index":3,"timestamp_ms":99,"vehicle_cl)";
  }
  {
    EventStore store(log);
    EXPECT_EQ(store.size(), 3u);
    EXPECT_GT(store.recovered_bytes(), 0u);
    EXPECT_EQ(read_file(log), intact);
    EXPECT_EQ(store.append(sample_event(9, "১২")).seq, 4u);
  }
  EventStore again(log);
  EXPECT_EQ(again.size(), 4u);
}

TEST(Store, CompleteFinalLineWithoutNewlineIsKept) {
  test::ScratchDir dir;
  const auto log = dir.path() / "events.ndjson";
  {
    EventStore store(log);
    store.append(sample_event(1, "১"));
    store.append(sample_event(2, "২"));
  }
  auto content = read_file(log);
  content.pop_back();
  std::ofstream(log, std::ios::binary | std::ios::trunc) << content;
  {
    EventStore store(log);
    EXPECT_EQ(store.size(), 2u);
    store.append(sample_event(3, "৩"));
  }
  EXPECT_EQ(EventStore(log).size(), 3u);
}

TEST(Store, MalformedInteriorLineReportsLineNumber) {
  test::ScratchDir dir;
  const auto log = dir.path() / "events.ndjson";
  {
    EventStore store(log);
    store.append(sample_event(1, "১"));
  }
  std::ofstream(log, std::ios::app) << "not json\n"
                                     << to_ndjson_line({2, sample_event(2, "২")});
  try {
    EventStore store(log);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::CorruptRecord);
    EXPECT_NE(std::string(e.what()).find(":2:"), std::string::npos);
  }
}

TEST(Store, NonIncreasingSequenceIsCorruption) {
  test::ScratchDir dir;
  const auto log = dir.path() / "events.ndjson";
  EventRecord r{1, sample_event(1, "১")};
  std::ofstream(log) << to_ndjson_line(r) << to_ndjson_line(r);
  EXPECT_THROW(EventStore{log}, Error);
}

TEST(Store, ReadersSeeConsistentSnapshots) {
  test::ScratchDir dir;
  EventStore store(dir.path() / "events.ndjson");
  std::atomic<bool> done{false};
  std::thread writer([&] {
    for (int i = 0; i < 300; ++i) store.append(sample_event(i, "১২"));
    done = true;
  });
  std::size_t checks = 0;
  while (!done.load() || checks < 10) {
    const auto snap = store.latest(20);
    for (std::size_t i = 1; i < snap.size(); ++i) ASSERT_EQ(snap[i - 1].seq, snap[i].seq + 1);
    const auto hits = store.query_by_plate("১২");
    for (std::size_t i = 1; i < hits.size(); ++i) ASSERT_LT(hits[i - 1].seq, hits[i].seq);
    ++checks;
  }
  writer.join();
  EXPECT_EQ(store.size(), 300u);
}
