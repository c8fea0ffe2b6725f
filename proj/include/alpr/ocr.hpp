#pragma once

// Plate preprocessing, OCR engine adapters and the character accuracy metric.

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <memory>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "alpr/error.hpp"
#include "alpr/image.hpp"
#include "alpr/imaging.hpp"
#include "alpr/subprocess.hpp"
#include "alpr/text.hpp"

namespace alpr {

inline constexpr int kMinPlateCropSide = 8;
inline constexpr int kDefaultPlateHeight = 64;

struct PlatePrepared {
  ImageBuf binary;
  int threshold = 0;
  double scale = 1.0;
};

// grayscale -> bilinear upscale to min_height (if shorter) -> Otsu -> binarize.
inline PlatePrepared preprocess_plate(const ImageBuf& crop, int min_height = kDefaultPlateHeight) {
  if (crop.width() < kMinPlateCropSide || crop.height() < kMinPlateCropSide) {
    throw Error(ErrorKind::InvalidArgument, "plate crop smaller than 8x8");
  }
  ImageBuf gray = crop.channels() == 3 ? grayscale(crop) : crop;
  PlatePrepared out;
  if (gray.height() < min_height) {
    out.scale = static_cast<double>(min_height) / gray.height();
    const int w = std::max(1, static_cast<int>(std::lround(gray.width() * out.scale)));
    gray = resize(gray, w, min_height);
  }
  out.threshold = otsu_threshold(histogram(gray));
  out.binary = binarize(gray, out.threshold);
  return out;
}

// FNV-1a over "W H C\n" followed by the raster, as 16 lowercase hex digits.
inline std::string image_content_hash(const ImageBuf& img) {
  std::uint64_t h = 0xcbf29ce484222325ull;
  const auto mix = [&h](std::uint8_t b) {
    h ^= b;
    h *= 0x100000001b3ull;
  };
  const std::string header = std::to_string(img.width()) + " " + std::to_string(img.height()) +
                             " " + std::to_string(img.channels()) + "\n";
  for (char c : header) mix(static_cast<std::uint8_t>(c));
  for (auto b : img.data()) mix(b);
  static constexpr char kHex[] = "0123456789abcdef";
  std::string out(16, '0');
  for (int i = 15; i >= 0; --i, h >>= 4) out[static_cast<std::size_t>(i)] = kHex[h & 0xf];
  return out;
}

// ---------------------------------------------------------------------------
// Engines.

struct EngineOutput {
  std::string text;
  double duration_ms = 0;
  bool timed_out = false;
};

class OcrEngine {
 public:
  virtual ~OcrEngine() = default;
  virtual EngineOutput run(const ImageBuf& binary, const std::string& language,
                           std::chrono::milliseconds timeout) = 0;
};

// Answers from a manifest of image content hash -> text. Reported durations
// are fixed so runs stay reproducible.
class MockOcrEngine final : public OcrEngine {
 public:
  using Manifest = std::map<std::string, std::string>;

  MockOcrEngine() = default;
  explicit MockOcrEngine(Manifest manifest, std::string fallback = {},
                         double reported_ms = 0)
      : manifest_(std::move(manifest)), fallback_(std::move(fallback)), reported_ms_(reported_ms) {}

  static Manifest load_manifest(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw Error(ErrorKind::IoFailure, "cannot open OCR manifest " + path);
    Manifest m;
    std::string line;
    int line_no = 0;
    while (std::getline(in, line)) {
      ++line_no;
      if (!line.empty() && line.back() == '\r') line.pop_back();
      if (line.empty() || line.front() == '#') continue;
      const auto tab = line.find('\t');
      if (tab == std::string::npos) {
        throw Error(ErrorKind::MalformedLine,
                    path + ":" + std::to_string(line_no) + ": expected <hash>\\t<text>");
      }
      m[line.substr(0, tab)] = line.substr(tab + 1);
    }
    return m;
  }

  EngineOutput run(const ImageBuf& binary, const std::string&, std::chrono::milliseconds) override {
    ++calls_;
    const auto it = manifest_.find(image_content_hash(binary));
    return {it != manifest_.end() ? it->second : fallback_, reported_ms_, false};
  }

  int calls() const { return calls_.load(); }

 private:
  Manifest manifest_;
  std::string fallback_;
  double reported_ms_ = 0;
  std::atomic<int> calls_{0};
};

// Tesseract-style command line: the image is handed over as a PGM file and the
// engine writes `<output-base>.txt`. Placeholders: {input} {output} {lang}.
class CommandOcrEngine final : public OcrEngine {
 public:
  static constexpr const char* kDefaultArgs = "{input} {output} -l {lang}";

  explicit CommandOcrEngine(std::string binary, std::string arg_template = kDefaultArgs)
      : binary_(std::move(binary)), arg_template_(std::move(arg_template)) {}

  EngineOutput run(const ImageBuf& binary, const std::string& language,
                   std::chrono::milliseconds timeout) override {
    proc::TempDir scratch("alpr-ocr");
    const auto input = (scratch.path() / "plate.pgm").string();
    const auto output = (scratch.path() / "out").string();
    write_pnm(input, binary);

    std::vector<std::string> args{binary_};
    for (auto word : proc::split_command(arg_template_)) {
      replace_all(word, "{input}", input);
      replace_all(word, "{output}", output);
      replace_all(word, "{lang}", language);
      args.push_back(std::move(word));
    }
    const auto result = proc::run_with_timeout(std::move(args), timeout, scratch.path());
    EngineOutput out;
    out.duration_ms = result.duration_ms;
    if (result.timed_out) {
      out.timed_out = true;
      return out;
    }
    if (result.exit_code != 0) {
      throw Error(ErrorKind::EngineCrashed, binary_ + " exited with " +
                                                std::to_string(result.exit_code) + ": " +
                                                result.stderr_text);
    }
    std::ifstream txt(output + ".txt", std::ios::binary);
    if (!txt) {
      throw Error(ErrorKind::EngineCrashed, binary_ + " produced no output file: " +
                                                result.stderr_text);
    }
    std::ostringstream ss;
    ss << txt.rdbuf();
    out.text = ss.str();
    return out;
  }

 private:
  static void replace_all(std::string& s, std::string_view from, const std::string& to) {
    for (auto pos = s.find(from); pos != std::string::npos; pos = s.find(from, pos + to.size())) {
      s.replace(pos, from.size(), to);
    }
  }

  std::string binary_;
  std::string arg_template_;
};

// ---------------------------------------------------------------------------
// Recognition.

enum class Polarity { Normal, Inverted };

constexpr std::string_view to_string(Polarity p) {
  return p == Polarity::Normal ? "normal" : "inverted";
}

struct OcrResult {
  std::string raw_text;
  double duration_ms = 0;
  Polarity polarity_used = Polarity::Normal;
  bool timed_out = false;
};

// One engine call per polarity under a shared deadline; keeps the reading with
// more plate-alphabet characters, preferring the normal polarity on ties.
inline OcrResult recognize(const PlatePrepared& prepared, OcrEngine& engine,
                           const std::string& language, std::chrono::milliseconds timeout) {
  OcrResult result;
  const auto t0 = std::chrono::steady_clock::now();
  const auto remaining = [&] {
    return timeout - std::chrono::duration_cast<std::chrono::milliseconds>(
                         std::chrono::steady_clock::now() - t0);
  };

  const auto normal = engine.run(prepared.binary, language, timeout);
  result.duration_ms = normal.duration_ms;
  const auto budget = remaining();
  if (normal.timed_out || budget.count() <= 0) {
    result.timed_out = true;
    return result;
  }
  const auto inverted = engine.run(invert(prepared.binary), language, budget);
  result.duration_ms += inverted.duration_ms;
  if (inverted.timed_out) {
    result.timed_out = true;
    return result;
  }
  if (text::count_plate_characters(inverted.text) > text::count_plate_characters(normal.text)) {
    result.raw_text = inverted.text;
    result.polarity_used = Polarity::Inverted;
  } else {
    result.raw_text = normal.text;
  }
  return result;
}

inline std::string normalize_text(std::string_view raw) { return text::normalize_plate_text(raw); }

// ---------------------------------------------------------------------------
// Character accuracy.

struct Alignment {
  int cost = 0;
  int matches = 0;
};

// Unit-cost edit alignment; among minimum-cost alignments the one with the
// most exact matches is taken.
inline Alignment align_graphemes(const std::vector<std::string>& truth,
                                 const std::vector<std::string>& predicted) {
  const std::size_t n = truth.size(), m = predicted.size();
  std::vector<Alignment> prev(m + 1), cur(m + 1);
  for (std::size_t j = 0; j <= m; ++j) prev[j] = {static_cast<int>(j), 0};
  const auto better = [](const Alignment& a, const Alignment& b) {
    return a.cost < b.cost || (a.cost == b.cost && a.matches > b.matches);
  };
  for (std::size_t i = 1; i <= n; ++i) {
    cur[0] = {static_cast<int>(i), 0};
    for (std::size_t j = 1; j <= m; ++j) {
      const bool same = truth[i - 1] == predicted[j - 1];
      Alignment best{prev[j - 1].cost + (same ? 0 : 1), prev[j - 1].matches + (same ? 1 : 0)};
      const Alignment del{prev[j].cost + 1, prev[j].matches};
      const Alignment ins{cur[j - 1].cost + 1, cur[j - 1].matches};
      if (better(del, best)) best = del;
      if (better(ins, best)) best = ins;
      cur[j] = best;
    }
    std::swap(prev, cur);
  }
  return prev[m];
}

inline int rounded_percent(std::size_t part, std::size_t whole) {
  return static_cast<int>((200 * part + whole) / (2 * whole));
}

// Percentage of ground-truth graphemes matched by the alignment, rounded
// half-up to an integer.
inline int char_accuracy(std::string_view ground_truth, std::string_view predicted) {
  const auto truth = text::graphemes(text::nfc(ground_truth));
  if (truth.empty()) throw Error(ErrorKind::EmptyGroundTruth, "ground truth has no characters");
  const auto pred = text::graphemes(text::nfc(predicted));
  const auto a = align_graphemes(truth, pred);
  return rounded_percent(static_cast<std::size_t>(a.matches), truth.size());
}

}  // namespace alpr
