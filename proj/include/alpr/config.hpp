#pragma once

// Pipeline and service configuration, read from a flat `key = value` file.
// Unknown keys are rejected with the offending key in the message.

#include <array>
#include <chrono>
#include <optional>
#include <string>
#include <vector>

#include "alpr/error.hpp"
#include "alpr/geometry.hpp"
#include "alpr/kv.hpp"

namespace alpr {

struct PipelineConfig {
  double gate_threshold = 0.5;
  double detector_conf_threshold = 0.25;
  double nms_iou_threshold = 0.45;
  int queue_capacity = 8;
  std::string ocr_language = "ben";
  int ocr_timeout_ms = 5000;
  std::string classifier_backend = "mock";
  std::string detector_backend = "mock";
  std::string ocr_backend = "mock";
  std::string record_dir = "recordings";

  // Backend parameters.
  std::string ocr_command = "tesseract";
  std::string ocr_args = "{input} {output} -l {lang}";
  std::string ocr_manifest;
  std::string mock_ocr_text;
  double mock_ocr_ms = 0;
  // Four scores per call, `;` separates successive calls (cycled).
  std::string mock_gate_scores = "0.9,0.05,0.03,0.02";
  // `cx,cy,w,h,score` per box in detector-input coordinates, `;` separated.
  std::string mock_boxes;
  std::string head_spec;  // path; empty means the 416x416 single-class plate head
  int min_plate_height = 64;

  // Sources.
  std::string source;
  bool replay_realtime = false;
  std::string decoder_command;

  // Persistence and service.
  std::string store_path = "events.ndjson";
  std::string warning_log = "warnings.ndjson";
  std::string webhook_url;
  std::string bind_address = "127.0.0.1";
  int port = 8080;

  std::chrono::milliseconds ocr_timeout() const { return std::chrono::milliseconds(ocr_timeout_ms); }

  void validate() const {
    const auto fraction = [](double v, const char* name) {
      if (!(v >= 0 && v <= 1)) {
        throw Error(ErrorKind::ConfigError, std::string(name) + " must lie in [0,1]");
      }
    };
    fraction(gate_threshold, "gate_threshold");
    fraction(detector_conf_threshold, "detector_conf_threshold");
    fraction(nms_iou_threshold, "nms_iou_threshold");
    if (queue_capacity < 1) throw Error(ErrorKind::ConfigError, "queue_capacity must be >= 1");
    if (ocr_timeout_ms < 1) throw Error(ErrorKind::ConfigError, "ocr_timeout_ms must be >= 1");
    if (min_plate_height < 8) throw Error(ErrorKind::ConfigError, "min_plate_height must be >= 8");
    if (port < 0 || port > 65535) throw Error(ErrorKind::ConfigError, "port out of range");
    if (mock_ocr_ms < 0) throw Error(ErrorKind::ConfigError, "mock_ocr_ms must be >= 0");
  }
};

inline PipelineConfig parse_config(const std::vector<KeyValueEntry>& entries) {
  PipelineConfig c;
  for (const auto& e : entries) {
    const auto& k = e.key;
    const auto as_int = [&] { return static_cast<int>(parse_int(e.value, k)); };
    if (k == "gate_threshold") c.gate_threshold = parse_double(e.value, k);
    else if (k == "detector_conf_threshold") c.detector_conf_threshold = parse_double(e.value, k);
    else if (k == "nms_iou_threshold") c.nms_iou_threshold = parse_double(e.value, k);
    else if (k == "queue_capacity") c.queue_capacity = as_int();
    else if (k == "ocr_language") c.ocr_language = e.value;
    else if (k == "ocr_timeout_ms") c.ocr_timeout_ms = as_int();
    else if (k == "classifier_backend") c.classifier_backend = e.value;
    else if (k == "detector_backend") c.detector_backend = e.value;
    else if (k == "ocr_backend") c.ocr_backend = e.value;
    else if (k == "record_dir") c.record_dir = e.value;
    else if (k == "ocr_command") c.ocr_command = e.value;
    else if (k == "ocr_args") c.ocr_args = e.value;
    else if (k == "ocr_manifest") c.ocr_manifest = e.value;
    else if (k == "mock_ocr_text") c.mock_ocr_text = e.value;
    else if (k == "mock_ocr_ms") c.mock_ocr_ms = parse_double(e.value, k);
    else if (k == "mock_gate_scores") c.mock_gate_scores = e.value;
    else if (k == "mock_boxes") c.mock_boxes = e.value;
    else if (k == "head_spec") c.head_spec = e.value;
    else if (k == "min_plate_height") c.min_plate_height = as_int();
    else if (k == "source") c.source = e.value;
    else if (k == "replay_realtime") c.replay_realtime = parse_bool(e.value, k);
    else if (k == "decoder_command") c.decoder_command = e.value;
    else if (k == "store_path") c.store_path = e.value;
    else if (k == "warning_log") c.warning_log = e.value;
    else if (k == "webhook_url") c.webhook_url = e.value;
    else if (k == "bind_address") c.bind_address = e.value;
    else if (k == "port") c.port = as_int();
    else {
      throw Error(ErrorKind::ConfigError,
                  "unknown config key '" + k + "' (line " + std::to_string(e.line_no) + ")");
    }
  }
  c.validate();
  return c;
}

inline PipelineConfig parse_config(std::istream& in, const std::string& origin = "<config>") {
  return parse_config(parse_key_values(in, origin));
}

inline PipelineConfig load_config(const std::string& path) {
  return parse_config(load_key_values(path));
}

// Inert record of the training hyperparameters each model was built with.
// Nothing here is interpreted; `steps` is kept as written.
struct ModelMetadata {
  std::string name;
  int classes = 0;
  int batch = 0;
  std::optional<int> subdivisions;
  double learning_rate = 0;
  int max_batches = 0;
  std::string steps;
  int width = 0;
  int height = 0;
  int filters = 0;
};

inline std::array<ModelMetadata, 2> published_models() {
  return {{{"vehicle_classifier", 4, 32, std::nullopt, 0.0001, 100, "190, 90", 96, 96, 32},
           {"plate_detector", 1, 64, 16, 0.001, 3500, "4800, 5400", 416, 416,
            filters_for(plate_head_spec())}}};
}

}  // namespace alpr
