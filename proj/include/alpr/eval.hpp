#pragma once

// Detection metrics (11-point interpolated AP, precision, recall, F1) and the
// OCR performance table.

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"

#include "alpr/error.hpp"
#include "alpr/geometry.hpp"
#include "alpr/kv.hpp"
#include "alpr/ocr.hpp"
#include "alpr/text.hpp"

namespace alpr {

inline constexpr double kDefaultMatchIou = 0.5;
inline constexpr double kDefaultScoreCutoff = 0.25;

// image id -> boxes. Ground truth boxes carry score 1.
using GroundTruthSet = std::map<std::string, std::vector<BBox>>;
using PredictionSet = std::map<std::string, std::vector<BBox>>;

// ---------------------------------------------------------------------------
// Parsing.

// One darknet label file: `class cx cy w h` per line, normalized floats.
inline std::vector<BBox> parse_darknet_labels(std::istream& in, const std::string& origin) {
  std::vector<BBox> boxes;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (trim(line).empty()) continue;
    const auto malformed = [&](const std::string& why) {
      return Error(ErrorKind::MalformedLine, origin + ":" + std::to_string(line_no) + ": " + why +
                                                 ": '" + std::string(trim(line)) + "'");
    };
    std::istringstream ls{std::string(trim(line))};
    long long cls = -1;
    BBox b;
    std::string extra;
    if (!(ls >> cls >> b.cx >> b.cy >> b.w >> b.h) || (ls >> extra)) {
      throw malformed("expected 'class cx cy w h'");
    }
    b.class_id = static_cast<int>(cls);
    b.score = 1.0;
    if (cls < 0 || !is_valid(b)) throw malformed("value out of range");
    boxes.push_back(b);
  }
  return boxes;
}

// Every label file `<id>.txt` and every image without one contributes an
// image id. `classes.txt` is darknet's class-name list, not a label file.
inline GroundTruthSet parse_darknet_annotations(const std::string& dir) {
  namespace fs = std::filesystem;
  if (!fs::is_directory(dir)) throw Error(ErrorKind::IoFailure, dir + " is not a directory");
  static const std::set<std::string> kImageExt{".jpg", ".jpeg", ".png", ".bmp", ".ppm", ".pgm"};
  GroundTruthSet gts;
  for (const auto& entry : fs::directory_iterator(dir)) {
    if (!entry.is_regular_file()) continue;
    const auto& p = entry.path();
    auto ext = p.extension().string();
    std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return std::tolower(c); });
    const auto id = p.stem().string();
    if (ext == ".txt") {
      if (p.filename() == "classes.txt") continue;
      std::ifstream in(p);
      if (!in) throw Error(ErrorKind::IoFailure, "cannot open " + p.string());
      gts[id] = parse_darknet_labels(in, p.string());
    } else if (kImageExt.count(ext)) {
      gts.try_emplace(id);
    }
  }
  return gts;
}

// NDJSON, one `{image_id, class_id, cx, cy, w, h, score}` object per line.
inline PredictionSet parse_predictions(std::istream& in, const std::string& origin) {
  PredictionSet preds;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (trim(line).empty()) continue;
    try {
      const auto j = nlohmann::json::parse(line);
      BBox b;
      b.cx = j.at("cx").get<double>();
      b.cy = j.at("cy").get<double>();
      b.w = j.at("w").get<double>();
      b.h = j.at("h").get<double>();
      b.class_id = j.at("class_id").get<int>();
      b.score = j.at("score").get<double>();
      if (!is_valid(b)) throw Error(ErrorKind::MalformedLine, "value out of range");
      preds[j.at("image_id").get<std::string>()].push_back(b);
    } catch (const std::exception& e) {
      throw Error(ErrorKind::MalformedLine,
                  origin + ":" + std::to_string(line_no) + ": " + e.what());
    }
  }
  return preds;
}

inline PredictionSet load_predictions(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorKind::IoFailure, "cannot open " + path);
  return parse_predictions(in, path);
}

// ---------------------------------------------------------------------------
// Matching.

struct ScoredMatch {
  std::string image_id;
  std::size_t index = 0;  // position within the image's prediction list
  int class_id = 0;
  double score = 0;
  bool true_positive = false;
};

struct MatchResult {
  std::vector<ScoredMatch> predictions;  // descending score
  std::size_t false_negatives = 0;
  std::map<int, std::size_t> truths_per_class;

  std::size_t true_positives() const {
    return static_cast<std::size_t>(std::count_if(
        predictions.begin(), predictions.end(), [](const auto& m) { return m.true_positive; }));
  }
  std::size_t false_positives() const { return predictions.size() - true_positives(); }
};

// Greedy one-to-one matching in descending score order (ties keep image-id,
// then list order). Each prediction takes the unmatched same-class truth with
// the highest IoU, provided it reaches the threshold. Predictions scoring
// below `score_cutoff` are ignored entirely.
inline MatchResult match_detections(const PredictionSet& preds, const GroundTruthSet& gts,
                                    double iou_threshold, double score_cutoff = 0.0) {
  MatchResult result;
  for (const auto& [id, boxes] : gts) {
    for (const auto& b : boxes) ++result.truths_per_class[b.class_id];
  }
  for (const auto& [id, boxes] : preds) {
    for (std::size_t i = 0; i < boxes.size(); ++i) {
      if (boxes[i].score >= score_cutoff) {
        result.predictions.push_back({id, i, boxes[i].class_id, boxes[i].score, false});
      }
    }
  }
  std::stable_sort(result.predictions.begin(), result.predictions.end(),
                   [](const auto& a, const auto& b) { return a.score > b.score; });

  std::map<std::string, std::vector<bool>> taken;
  static const std::vector<BBox> kNone;
  for (auto& m : result.predictions) {
    const auto git = gts.find(m.image_id);
    const auto& truths = git == gts.end() ? kNone : git->second;
    auto& used = taken[m.image_id];
    used.resize(truths.size(), false);
    const auto& pred = preds.at(m.image_id)[m.index];
    double best = -1;
    std::ptrdiff_t best_idx = -1;
    for (std::size_t g = 0; g < truths.size(); ++g) {
      if (used[g] || truths[g].class_id != m.class_id) continue;
      const double o = iou(pred, truths[g]);
      if (o >= iou_threshold && o > best) {
        best = o;
        best_idx = static_cast<std::ptrdiff_t>(g);
      }
    }
    if (best_idx >= 0) {
      used[static_cast<std::size_t>(best_idx)] = true;
      m.true_positive = true;
    }
  }
  std::size_t total_truths = 0;
  for (const auto& [cls, n] : result.truths_per_class) total_truths += n;
  result.false_negatives = total_truths - result.true_positives();
  return result;
}

struct PrecisionRecall {
  double precision = 0;
  double recall = 0;
};

inline PrecisionRecall precision_recall(std::size_t tp, std::size_t fp, std::size_t fn) {
  PrecisionRecall pr;
  if (tp + fp > 0) pr.precision = static_cast<double>(tp) / static_cast<double>(tp + fp);
  if (tp + fn > 0) pr.recall = static_cast<double>(tp) / static_cast<double>(tp + fn);
  return pr;
}

inline double f1(double precision, double recall) {
  if (precision + recall <= 0) return 0.0;
  return 2 * precision * recall / (precision + recall);
}

// Half-up rounding to `digits` decimals, as printed in report tables.
inline double round_to(double value, int digits) {
  const double scale = std::pow(10.0, digits);
  return std::floor(value * scale + 0.5) / scale;
}

// ---------------------------------------------------------------------------
// Average precision.

struct CurvePoint {
  double precision = 0;
  double recall = 0;
};

struct ClassCurve {
  int class_id = 0;
  double ap = 0;
  std::vector<CurvePoint> points;  // one per prediction, descending score
};

// 11-point interpolation: mean over r in {0, 0.1, ..., 1} of the highest
// precision reached at any recall >= r (0 when no such point).
inline double eleven_point_ap(const std::vector<CurvePoint>& points) {
  double sum = 0;
  for (int k = 0; k <= 10; ++k) {
    const double level = k / 10.0;
    double best = 0;
    for (const auto& p : points) {
      if (p.recall >= level - 1e-12) best = std::max(best, p.precision);
    }
    sum += best;
  }
  return sum / 11.0;
}

inline ClassCurve class_curve(const MatchResult& matches, int class_id) {
  ClassCurve curve;
  curve.class_id = class_id;
  const auto it = matches.truths_per_class.find(class_id);
  const std::size_t truths = it == matches.truths_per_class.end() ? 0 : it->second;
  std::size_t tp = 0, seen = 0;
  for (const auto& m : matches.predictions) {
    if (m.class_id != class_id) continue;
    ++seen;
    tp += m.true_positive ? 1 : 0;
    curve.points.push_back({static_cast<double>(tp) / static_cast<double>(seen),
                            truths ? static_cast<double>(tp) / static_cast<double>(truths) : 0.0});
  }
  curve.ap = truths ? eleven_point_ap(curve.points) : 0.0;
  return curve;
}

// AP for one class over all predictions regardless of score.
inline double average_precision(const PredictionSet& preds, const GroundTruthSet& gts,
                                double iou_threshold, int class_id) {
  return class_curve(match_detections(preds, gts, iou_threshold), class_id).ap;
}

// ---------------------------------------------------------------------------
// Report.

struct EvalReport {
  double map_percent = 0;
  double precision = 0;
  double recall = 0;
  double f1 = 0;
  std::size_t tp = 0;
  std::size_t fp = 0;
  std::size_t fn = 0;
  std::vector<ClassCurve> per_class;  // classes present in the ground truth
};

// mAP averages the classes that occur in the ground truth; P/R/F1 count only
// predictions at or above `score_cutoff`.
inline EvalReport evaluate(const PredictionSet& preds, const GroundTruthSet& gts,
                           double iou_threshold = kDefaultMatchIou,
                           double score_cutoff = kDefaultScoreCutoff) {
  EvalReport report;
  const auto all = match_detections(preds, gts, iou_threshold);
  double ap_sum = 0;
  for (const auto& [cls, n] : all.truths_per_class) {
    report.per_class.push_back(class_curve(all, cls));
    ap_sum += report.per_class.back().ap;
  }
  if (!report.per_class.empty()) {
    report.map_percent = 100.0 * ap_sum / static_cast<double>(report.per_class.size());
  }
  const auto cut = match_detections(preds, gts, iou_threshold, score_cutoff);
  report.tp = cut.true_positives();
  report.fp = cut.false_positives();
  report.fn = cut.false_negatives;
  const auto pr = precision_recall(report.tp, report.fp, report.fn);
  report.precision = pr.precision;
  report.recall = pr.recall;
  report.f1 = f1(pr.precision, pr.recall);
  return report;
}

inline std::string format_fixed(double v, int digits) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", digits, round_to(v, digits));
  return buf;
}

inline std::string render_table(const EvalReport& r) {
  std::ostringstream out;
  char line[160];
  std::snprintf(line, sizeof line, "%-8s | %-9s | %-6s | %-8s\n", "mAP", "Precision", "recall",
                "F1-score");
  out << line;
  out << "---------+-----------+--------+---------\n";
  std::snprintf(line, sizeof line, "%-8s | %-9s | %-6s | %-8s\n",
                format_fixed(r.map_percent, 2).c_str(), format_fixed(r.precision, 2).c_str(),
                format_fixed(r.recall, 2).c_str(), format_fixed(r.f1, 2).c_str());
  out << line;
  out << "TP " << r.tp << "  FP " << r.fp << "  FN " << r.fn << '\n';
  for (const auto& c : r.per_class) {
    out << "class " << c.class_id << " AP " << format_fixed(100.0 * c.ap, 2) << '\n';
  }
  return out.str();
}

inline nlohmann::json to_json(const EvalReport& r) {
  nlohmann::json per_class = nlohmann::json::array();
  for (const auto& c : r.per_class) {
    nlohmann::json curve = nlohmann::json::array();
    for (const auto& p : c.points) curve.push_back({p.precision, p.recall});
    per_class.push_back({{"class_id", c.class_id}, {"ap", c.ap}, {"curve", curve}});
  }
  return {{"mAP", r.map_percent}, {"precision", r.precision}, {"recall", r.recall},
          {"f1", r.f1},           {"tp", r.tp},               {"fp", r.fp},
          {"fn", r.fn},           {"per_class", per_class}};
}

// ---------------------------------------------------------------------------
// OCR table.

struct OcrSample {
  std::string image_id;
  std::string ground_truth;
  std::string predicted;
  double duration_ms = 0;
};

struct OcrReportRow {
  std::string image_id;
  std::size_t characters_extracted = 0;
  int accuracy_percent = 0;
  std::string seconds;  // 3 decimals
};

// Characters extracted counts the predicted graphemes, whitespace excluded.
inline std::vector<OcrReportRow> ocr_report(const std::vector<OcrSample>& samples) {
  std::vector<OcrReportRow> rows;
  for (const auto& s : samples) {
    OcrReportRow row;
    row.image_id = s.image_id;
    for (const auto& g : text::graphemes(text::nfc(s.predicted))) {
      if (trim(g).empty()) continue;
      ++row.characters_extracted;
    }
    row.accuracy_percent = char_accuracy(s.ground_truth, s.predicted);
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.3f", std::llround(s.duration_ms) / 1000.0);
    row.seconds = buf;
    rows.push_back(std::move(row));
  }
  return rows;
}

inline std::string render_table(const std::vector<OcrReportRow>& rows) {
  std::ostringstream out;
  char line[256];
  std::snprintf(line, sizeof line, "%-8s | %-26s | %-22s | %s\n", "Image No",
                "No of characters extracted", "Accuracy of OCR (in %)",
                "Time taken for OCR (in Seconds)");
  out << line;
  for (const auto& r : rows) {
    std::snprintf(line, sizeof line, "%-8s | %-26zu | %-22d | %s\n", r.image_id.c_str(),
                  r.characters_extracted, r.accuracy_percent, r.seconds.c_str());
    out << line;
  }
  return out.str();
}

inline nlohmann::json to_json(const OcrReportRow& r) {
  return {{"image_id", r.image_id},
          {"characters_extracted", r.characters_extracted},
          {"accuracy_percent", r.accuracy_percent},
          {"seconds", r.seconds}};
}

}  // namespace alpr
