#pragma once

// Model backends behind the pipeline: the four-way vehicle gate, the plate
// detector head and the OCR engine. Only deterministic mocks and the external
// OCR command ship here; trained models plug in through the same interfaces.

#include <array>
#include <atomic>
#include <cmath>
#include <memory>
#include <string>
#include <string_view>
#include <vector>

#include "alpr/config.hpp"
#include "alpr/error.hpp"
#include "alpr/geometry.hpp"
#include "alpr/image.hpp"
#include "alpr/kv.hpp"
#include "alpr/ocr.hpp"

namespace alpr {

inline constexpr int kGateInputSide = 96;
inline constexpr std::array<std::string_view, 4> kVehicleClassNames{"bus", "car", "motorbike",
                                                                    "truck"};

using GateScores = std::array<double, 4>;

class VehicleClassifier {
 public:
  virtual ~VehicleClassifier() = default;
  // 96x96x3 in, one score per vehicle class out.
  virtual GateScores classify(const ImageBuf& input) = 0;
};

class PlateDetector {
 public:
  virtual ~PlateDetector() = default;
  virtual const DetectorHeadSpec& spec() const = 0;
  // input_width x input_height x 3 in, raw head tensor out.
  virtual std::vector<float> infer(const ImageBuf& input) = 0;
};

inline GateScores parse_gate_scores(std::string_view text) {
  const auto parts = split(text, ',');
  if (parts.size() != 4) {
    throw Error(ErrorKind::ConfigError, "gate scores need 4 values, got '" + std::string(text) + "'");
  }
  GateScores s{};
  for (std::size_t i = 0; i < 4; ++i) {
    s[i] = parse_double(parts[i], "gate score");
    if (!(s[i] >= 0 && s[i] <= 1)) throw Error(ErrorKind::ConfigError, "gate score outside [0,1]");
  }
  return s;
}

// Replays a fixed list of score vectors, one per call, wrapping around.
class MockVehicleClassifier final : public VehicleClassifier {
 public:
  explicit MockVehicleClassifier(std::vector<GateScores> script) : script_(std::move(script)) {
    if (script_.empty()) throw Error(ErrorKind::ConfigError, "mock classifier needs scores");
  }

  GateScores classify(const ImageBuf& input) override {
    if (input.width() != kGateInputSide || input.height() != kGateInputSide ||
        input.channels() != 3) {
      throw Error(ErrorKind::BackendFailure, "classifier input must be 96x96x3");
    }
    const auto n = calls_.fetch_add(1);
    return script_[n % script_.size()];
  }

  std::size_t calls() const { return calls_.load(); }

 private:
  std::vector<GateScores> script_;
  std::atomic<std::size_t> calls_{0};
};

inline double logit(double p) {
  p = std::clamp(p, 1e-12, 1.0 - 1e-12);
  return std::log(p / (1.0 - p));
}

// Produces the same head tensor for every input. The tensor is the encoding of
// a configured box list, so the real decode path is exercised; cells without a
// box carry a strongly negative objectness.
class MockPlateDetector final : public PlateDetector {
 public:
  static constexpr float kBackgroundLogit = -30.0f;
  static constexpr float kClassLogit = 30.0f;

  MockPlateDetector(DetectorHeadSpec spec, const std::vector<BBox>& boxes) : spec_(std::move(spec)) {
    spec_.validate();
    tensor_.assign(spec_.tensor_size(), 0.0f);
    const std::size_t stride = static_cast<std::size_t>(5 + spec_.class_count);
    for (std::size_t off = 0; off < tensor_.size(); off += stride) {
      tensor_[off + 4] = kBackgroundLogit;
    }
    std::vector<bool> taken(tensor_.size() / stride, false);
    const int S = spec_.grid_size;
    for (const auto& b : boxes) {
      if (!is_valid(b) || b.class_id >= spec_.class_count) {
        throw Error(ErrorKind::ConfigError, "mock detector box out of range");
      }
      const int col = std::min(S - 1, static_cast<int>(b.cx * S));
      const int row = std::min(S - 1, static_cast<int>(b.cy * S));
      int k = 0;
      const auto slot = [&](int anchor) {
        return (static_cast<std::size_t>(row) * S + static_cast<std::size_t>(col)) *
                   static_cast<std::size_t>(spec_.anchor_count) +
               static_cast<std::size_t>(anchor);
      };
      while (k < spec_.anchor_count && taken[slot(k)]) ++k;
      if (k == spec_.anchor_count) {
        throw Error(ErrorKind::ConfigError, "mock detector: too many boxes in one grid cell");
      }
      taken[slot(k)] = true;
      float* v = tensor_.data() + slot(k) * stride;
      v[0] = static_cast<float>(logit(b.cx * S - col));
      v[1] = static_cast<float>(logit(b.cy * S - row));
      v[2] = static_cast<float>(std::log(b.w * spec_.input_width / spec_.anchors[k].width_px));
      v[3] = static_cast<float>(std::log(b.h * spec_.input_height / spec_.anchors[k].height_px));
      v[4] = static_cast<float>(logit(b.score));
      for (int c = 0; c < spec_.class_count; ++c) {
        v[5 + c] = c == b.class_id ? kClassLogit : -kClassLogit;
      }
    }
  }

  const DetectorHeadSpec& spec() const override { return spec_; }

  std::vector<float> infer(const ImageBuf& input) override {
    if (input.width() != spec_.input_width || input.height() != spec_.input_height ||
        input.channels() != 3) {
      throw Error(ErrorKind::BackendFailure, "detector input does not match the head spec");
    }
    ++calls_;
    return tensor_;
  }

  std::size_t calls() const { return calls_.load(); }

 private:
  DetectorHeadSpec spec_;
  std::vector<float> tensor_;
  std::atomic<std::size_t> calls_{0};
};

// `cx,cy,w,h,score` entries separated by ';'.
inline std::vector<BBox> parse_mock_boxes(std::string_view text) {
  std::vector<BBox> boxes;
  for (const auto& entry : split(text, ';')) {
    const auto f = split(entry, ',');
    if (f.size() != 5) {
      throw Error(ErrorKind::ConfigError, "mock box needs cx,cy,w,h,score: '" + entry + "'");
    }
    BBox b;
    b.cx = parse_double(f[0], "mock box cx");
    b.cy = parse_double(f[1], "mock box cy");
    b.w = parse_double(f[2], "mock box w");
    b.h = parse_double(f[3], "mock box h");
    b.score = parse_double(f[4], "mock box score");
    if (!is_valid(b)) throw Error(ErrorKind::ConfigError, "mock box out of range: '" + entry + "'");
    boxes.push_back(b);
  }
  return boxes;
}

struct Backends {
  std::shared_ptr<VehicleClassifier> classifier;
  std::shared_ptr<PlateDetector> detector;
  std::shared_ptr<OcrEngine> ocr;
};

inline Backends make_backends(const PipelineConfig& config) {
  Backends b;
  if (config.classifier_backend != "mock") {
    throw Error(ErrorKind::ConfigError, "unknown classifier_backend '" + config.classifier_backend + "'");
  }
  std::vector<GateScores> script;
  for (const auto& entry : split(config.mock_gate_scores, ';')) script.push_back(parse_gate_scores(entry));
  b.classifier = std::make_shared<MockVehicleClassifier>(std::move(script));

  if (config.detector_backend != "mock") {
    throw Error(ErrorKind::ConfigError, "unknown detector_backend '" + config.detector_backend + "'");
  }
  const auto spec = config.head_spec.empty() ? plate_head_spec() : load_head_spec(config.head_spec);
  b.detector = std::make_shared<MockPlateDetector>(spec, parse_mock_boxes(config.mock_boxes));

  if (config.ocr_backend == "mock") {
    auto manifest = config.ocr_manifest.empty() ? MockOcrEngine::Manifest{}
                                                : MockOcrEngine::load_manifest(config.ocr_manifest);
    b.ocr = std::make_shared<MockOcrEngine>(std::move(manifest), config.mock_ocr_text,
                                            config.mock_ocr_ms);
  } else if (config.ocr_backend == "command") {
    b.ocr = std::make_shared<CommandOcrEngine>(config.ocr_command, config.ocr_args);
  } else {
    throw Error(ErrorKind::ConfigError, "unknown ocr_backend '" + config.ocr_backend + "'");
  }
  return b;
}

}  // namespace alpr
