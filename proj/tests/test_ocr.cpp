#include <gtest/gtest.h>

#include <chrono>
#include <filesystem>
#include <fstream>
#include <random>
#include <set>

#include "alpr/ocr.hpp"
#include "oracles/alignment_oracle.hpp"
#include "oracles/otsu_oracle.hpp"
#include "test_util.hpp"

using namespace alpr;
using namespace std::chrono_literals;

namespace {

// "ঢাকা মেট্রো" with the final o-kar written as its canonical decomposition
// (U+09C7 U+09BE) instead of U+09CB.
const std::string kComposed = "ঢাকা মেট্রো";
const std::string kDecomposed = "ঢাকা মেট্রো";

std::string write_script(const std::filesystem::path& dir, const std::string& name,
                         const std::string& body) {
  const auto path = dir / name;
  std::ofstream(path) << "#!/bin/sh\n" << body << "\n";
  std::filesystem::permissions(path, std::filesystem::perms::owner_all);
  return path.string();
}

}  // namespace

TEST(NormalizeText, ComposesAndStrips) {
  EXPECT_EQ(normalize_text(kDecomposed + "!!"), kComposed);
  EXPECT_EQ(normalize_text("ঢাকা!!"), "ঢাকা");
  EXPECT_EQ(normalize_text(""), "");
  EXPECT_EQ(normalize_text("  গ   ১২-৩৪৫৬ \n"),
            "গ ১২-৩৪৫৬");
  EXPECT_EQ(normalize_text("DHAKA 12-3456."), "12-3456");
}

TEST(NormalizeText, Idempotent) {
  std::mt19937 rng(21);
  const std::vector<std::string> pieces{"ক", "া", "ে", "্", "ষ", " ",
                                        "  ",     "-",      "!",      "A",      "7",      "১",
                                        "́", "\t",     "়", "ড", "ড়", "।"};
  std::uniform_int_distribution<std::size_t> pick(0, pieces.size() - 1);
  std::uniform_int_distribution<int> len(0, 14);
  for (int i = 0; i < 500; ++i) {
    std::string s;
    for (int k = len(rng); k > 0; --k) s += pieces[pick(rng)];
    const auto once = normalize_text(s);
    EXPECT_EQ(normalize_text(once), once) << s;
  }
}

TEST(Graphemes, ConjunctsAndVowelSigns) {
  EXPECT_EQ(text::graphemes("ABCDE").size(), 5u);
  EXPECT_EQ(text::graphemes("ঢাকা").size(), 2u);
  EXPECT_EQ(text::graphemes("ক্ষ").size(), 1u);
  EXPECT_EQ(text::graphemes(kComposed).size(), 5u);  // ঢা কা ␠ মে ট্রো
  EXPECT_TRUE(text::graphemes("").empty());
}

TEST(CharAccuracy, Examples) {
  EXPECT_EQ(char_accuracy("ABCDE", "ABCDE"), 100);
  EXPECT_EQ(char_accuracy("ABCDE", "ABXDE"), 80);
  EXPECT_EQ(char_accuracy("ABCDEFGHIJ", "ABCDEFGXYZ"), 70);
  EXPECT_EQ(char_accuracy("ABCDE", ""), 0);
  EXPECT_EQ(char_accuracy(kComposed, kDecomposed), 100);
  try {
    char_accuracy("", "x");
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::EmptyGroundTruth);
  }
}

TEST(CharAccuracy, PrefersMoreMatchesAmongCheapestAlignments) {
  // "ab" vs "ba": two substitutions and delete+match+insert both cost 2.
  EXPECT_EQ(char_accuracy("ab", "ba"), 50);
}

TEST(CharAccuracy, MatchesAlignmentOracles) {
  std::mt19937 rng(23);
  const std::vector<std::string> alphabet{"ক",       "কা", "ঢা",
                                          "১",       "২",       "A",
                                          "B",            "-",            "ক্ষ"};
  std::uniform_int_distribution<std::size_t> pick(0, alphabet.size() - 1);
  std::uniform_int_distribution<int> len(1, 12);
  for (int i = 0; i < 300; ++i) {
    std::vector<std::string> truth, pred;
    for (int k = len(rng); k > 0; --k) truth.push_back(alphabet[pick(rng)]);
    for (int k = len(rng) - 1; k > 0; --k) pred.push_back(alphabet[pick(rng)]);
    std::string t, p;
    for (const auto& g : truth) t += g;
    for (const auto& g : pred) p += g;
    ASSERT_EQ(text::graphemes(t), truth);
    const auto ref = oracle::memo_alignment(truth, pred);
    EXPECT_EQ(char_accuracy(t, p), oracle::accuracy_percent(ref.matches, truth.size()));
    if (truth.size() <= 6 && pred.size() <= 6) {
      const auto full = oracle::enumerate_alignments(truth, pred);
      EXPECT_EQ(full.cost, ref.cost);
      EXPECT_EQ(full.matches, ref.matches);
    }
    const int acc = char_accuracy(t, p);
    EXPECT_GE(acc, 0);
    EXPECT_LE(acc, 100);
    EXPECT_EQ(char_accuracy(t, t), 100);
  }
}

TEST(PreprocessPlate, MatchesIndependentBinarization) {
  const auto plate = test::synthetic_plate(160, 64);
  const auto prepared = preprocess_plate(plate);
  EXPECT_DOUBLE_EQ(prepared.scale, 1.0);

  Histogram256 h;
  std::vector<int> luma;
  for (int y = 0; y < 64; ++y) {
    for (int x = 0; x < 160; ++x) {
      const double l = 0.299 * plate.at(x, y, 0) + 0.587 * plate.at(x, y, 1) + 0.114 * plate.at(x, y, 2);
      luma.push_back(static_cast<int>(std::floor(l + 0.5)));
      ++h.bins[static_cast<std::size_t>(luma.back())];
    }
  }
  const int t = oracle::brute_force_otsu(h);
  EXPECT_EQ(prepared.threshold, t);
  std::size_t expected_white = 0;
  for (int v : luma) expected_white += v > t;
  std::size_t white = 0;
  for (auto v : prepared.binary.data()) white += v == 255;
  EXPECT_EQ(white, expected_white);
  std::set<int> values(prepared.binary.data().begin(), prepared.binary.data().end());
  EXPECT_LE(values.size(), 2u);
}

TEST(PreprocessPlate, UpscalesShortCrops) {
  const auto prepared = preprocess_plate(test::synthetic_plate(100, 32));
  EXPECT_EQ(prepared.binary.height(), 64);
  EXPECT_EQ(prepared.binary.width(), 200);
  EXPECT_DOUBLE_EQ(prepared.scale, 2.0);
}

TEST(PreprocessPlate, UniformCropIsDegenerate) {
  try {
    preprocess_plate(test::constant_rgb(40, 20, 128, 128, 128));
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::DegenerateHistogram);
  }
  EXPECT_THROW(preprocess_plate(test::constant_rgb(7, 20, 0, 0, 0)), Error);
}

TEST(Recognize, MockPassthroughAndPolarity) {
  const auto prepared = preprocess_plate(test::synthetic_plate(120, 64));
  const std::string plate = "ঢাকা মেট্রো গ ১২-৩৪৫৬";
  MockOcrEngine normal(MockOcrEngine::Manifest{{image_content_hash(prepared.binary), plate}});
  auto r = recognize(prepared, normal, "ben", 1000ms);
  EXPECT_EQ(r.raw_text, plate);
  EXPECT_EQ(r.polarity_used, Polarity::Normal);
  EXPECT_EQ(normal.calls(), 2);

  MockOcrEngine inverted(MockOcrEngine::Manifest{{image_content_hash(prepared.binary), "|"},
                          {image_content_hash(invert(prepared.binary)), plate}});
  r = recognize(prepared, inverted, "ben", 1000ms);
  EXPECT_EQ(r.raw_text, plate);
  EXPECT_EQ(r.polarity_used, Polarity::Inverted);

  MockOcrEngine empty;
  r = recognize(prepared, empty, "ben", 1000ms);
  EXPECT_EQ(r.raw_text, "");
  EXPECT_EQ(r.polarity_used, Polarity::Normal);
  EXPECT_FALSE(r.timed_out);
}

TEST(Recognize, CommandEngineContract) {
  test::ScratchDir dir;
  const auto prepared = preprocess_plate(test::synthetic_plate(120, 64));
  // $1 input, $2 output base, $3 -l, $4 language.
  const auto ok = write_script(dir.path(), "engine.sh",
                               "test -s \"$1\" || exit 9\n"
                               "[ \"$4\" = ben ] || exit 8\n"
                               "printf '\\340\\246\\242\\340\\246\\276 \\340\\247\\247\\n' > \"$2.txt\"");
  CommandOcrEngine engine(ok);
  const auto r = recognize(prepared, engine, "ben", 5000ms);
  EXPECT_EQ(normalize_text(r.raw_text), "ঢা ১");
  EXPECT_FALSE(r.timed_out);
  EXPECT_GT(r.duration_ms, 0.0);
}

TEST(Recognize, CommandEngineErrors) {
  test::ScratchDir dir;
  const auto prepared = preprocess_plate(test::synthetic_plate(120, 64));
  CommandOcrEngine missing((dir.path() / "no-such-engine").string());
  try {
    recognize(prepared, missing, "ben", 1000ms);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::EngineNotFound);
  }
  CommandOcrEngine crash(write_script(dir.path(), "crash.sh", "echo boom >&2\nexit 3"));
  try {
    recognize(prepared, crash, "ben", 1000ms);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::EngineCrashed);
    EXPECT_NE(std::string(e.what()).find("boom"), std::string::npos);
  }
}

TEST(Recognize, TimeoutIsBounded) {
  test::ScratchDir dir;
  const auto prepared = preprocess_plate(test::synthetic_plate(120, 64));
  CommandOcrEngine slow(write_script(dir.path(), "slow.sh", "exec sleep 5"));
  const auto t0 = std::chrono::steady_clock::now();
  const auto r = recognize(prepared, slow, "ben", 300ms);
  const auto elapsed = std::chrono::steady_clock::now() - t0;
  EXPECT_TRUE(r.timed_out);
  EXPECT_TRUE(r.raw_text.empty());
  EXPECT_LT(elapsed, 400ms);
}
