#pragma once

// Box arithmetic, single-scale YOLO head decoding and class-wise greedy NMS.

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <numeric>
#include <span>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "alpr/error.hpp"
#include "alpr/kv.hpp"

namespace alpr {

// Normalized center-size box. Coordinates are fractions of the frame.
struct BBox {
  double cx = 0;
  double cy = 0;
  double w = 0;
  double h = 0;
  int class_id = 0;
  double score = 0;

  friend bool operator==(const BBox&, const BBox&) = default;
};

// Top-left origin integer rectangle in pixels.
struct PixelRect {
  int x = 0;
  int y = 0;
  int width = 1;
  int height = 1;

  friend bool operator==(const PixelRect&, const PixelRect&) = default;
};

inline constexpr double kMinBoxExtent = 1e-9;

inline bool is_valid(const BBox& b) {
  return b.cx >= 0 && b.cx <= 1 && b.cy >= 0 && b.cy <= 1 && b.w > 0 && b.w <= 1 && b.h > 0 &&
         b.h <= 1 && b.score >= 0 && b.score <= 1 && b.class_id >= 0;
}

inline BBox clamp_box(BBox b) {
  b.cx = std::clamp(b.cx, 0.0, 1.0);
  b.cy = std::clamp(b.cy, 0.0, 1.0);
  b.w = std::clamp(b.w, kMinBoxExtent, 1.0);
  b.h = std::clamp(b.h, kMinBoxExtent, 1.0);
  b.score = std::clamp(b.score, 0.0, 1.0);
  return b;
}

inline double iou(const BBox& a, const BBox& b) {
  const double ax0 = a.cx - a.w / 2, ax1 = a.cx + a.w / 2;
  const double ay0 = a.cy - a.h / 2, ay1 = a.cy + a.h / 2;
  const double bx0 = b.cx - b.w / 2, bx1 = b.cx + b.w / 2;
  const double by0 = b.cy - b.h / 2, by1 = b.cy + b.h / 2;
  const double iw = std::min(ax1, bx1) - std::max(ax0, bx0);
  const double ih = std::min(ay1, by1) - std::max(ay0, by0);
  if (iw <= 0 || ih <= 0) return 0.0;
  const double inter = iw * ih;
  const double uni = a.w * a.h + b.w * b.h - inter;
  if (uni <= 0) return 0.0;
  return std::clamp(inter / uni, 0.0, 1.0);
}

struct AnchorSize {
  double width_px = 0;
  double height_px = 0;
};

struct DetectorHeadSpec {
  int anchor_count = 5;
  int class_count = 1;
  int input_width = 416;
  int input_height = 416;
  int grid_size = 13;
  std::vector<AnchorSize> anchors;

  // Values per grid cell: A x (4 coords + objectness + CL class logits).
  std::size_t values_per_cell() const {
    return static_cast<std::size_t>(anchor_count) * static_cast<std::size_t>(5 + class_count);
  }
  std::size_t tensor_size() const {
    return static_cast<std::size_t>(grid_size) * static_cast<std::size_t>(grid_size) *
           values_per_cell();
  }

  void validate() const {
    if (anchor_count < 1 || class_count < 1 || grid_size < 1 || input_width < 1 ||
        input_height < 1) {
      throw Error(ErrorKind::InvalidArgument, "head spec: counts and dimensions must be >= 1");
    }
    if (anchors.size() != static_cast<std::size_t>(anchor_count)) {
      throw Error(ErrorKind::InvalidArgument,
                  "head spec: " + std::to_string(anchors.size()) + " anchors listed, A = " +
                      std::to_string(anchor_count));
    }
    for (const auto& a : anchors) {
      if (!(a.width_px > 0) || !(a.height_px > 0)) {
        throw Error(ErrorKind::InvalidArgument, "head spec: anchor dimensions must be > 0");
      }
    }
  }
};

// Darknet-style anchors (13x13 grid, 416 input) used when a spec file omits them.
inline std::vector<AnchorSize> default_anchors() {
  return {{42.31, 55.41}, {102.17, 128.30}, {161.79, 259.17}, {303.08, 154.90}, {359.56, 320.23}};
}

inline DetectorHeadSpec plate_head_spec() {
  DetectorHeadSpec spec;
  spec.anchors = default_anchors();
  return spec;
}

// Filter count of the convolution feeding each YOLO layer, (A + CL) x 3.
inline int filters_for(const DetectorHeadSpec& spec) {
  return (spec.anchor_count + spec.class_count) * 3;
}

inline double sigmoid(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

// Layout: index = ((row * S + col) * A + anchor) * (5 + CL) + field, with fields
// tx, ty, tw, th, objectness, class logits. One box per (cell, anchor) carrying
// its best class (lowest index on ties).
inline std::vector<BBox> decode_head(std::span<const float> raw, const DetectorHeadSpec& spec,
                                     double conf_threshold) {
  spec.validate();
  if (raw.size() != spec.tensor_size()) {
    throw Error(ErrorKind::ShapeMismatch, "head tensor has " + std::to_string(raw.size()) +
                                              " values, expected " +
                                              std::to_string(spec.tensor_size()));
  }
  if (conf_threshold < 0 || conf_threshold > 1) {
    throw Error(ErrorKind::InvalidArgument, "conf_threshold must lie in [0,1]");
  }
  const int S = spec.grid_size;
  const std::size_t stride = static_cast<std::size_t>(5 + spec.class_count);
  std::vector<BBox> out;
  std::size_t offset = 0;
  for (int row = 0; row < S; ++row) {
    for (int col = 0; col < S; ++col) {
      for (int k = 0; k < spec.anchor_count; ++k, offset += stride) {
        const float* v = raw.data() + offset;
        const double objectness = sigmoid(v[4]);
        int best_class = 0;
        for (int c = 1; c < spec.class_count; ++c) {
          if (v[5 + c] > v[5 + best_class]) best_class = c;
        }
        const double score = objectness * sigmoid(v[5 + best_class]);
        if (!(score >= conf_threshold)) continue;
        BBox b;
        b.cx = (sigmoid(v[0]) + col) / S;
        b.cy = (sigmoid(v[1]) + row) / S;
        b.w = spec.anchors[k].width_px * std::exp(static_cast<double>(v[2])) / spec.input_width;
        b.h = spec.anchors[k].height_px * std::exp(static_cast<double>(v[3])) / spec.input_height;
        b.class_id = best_class;
        b.score = score;
        out.push_back(clamp_box(b));
      }
    }
  }
  return out;
}

// Greedy class-wise suppression. Equal scores keep input order.
inline std::vector<BBox> nms(std::span<const BBox> boxes, double iou_threshold) {
  if (iou_threshold < 0 || iou_threshold > 1) {
    throw Error(ErrorKind::InvalidArgument, "iou_threshold must lie in [0,1]");
  }
  std::vector<std::size_t> order(boxes.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return boxes[a].score > boxes[b].score; });

  std::vector<bool> suppressed(boxes.size(), false);
  std::vector<BBox> kept;
  for (std::size_t i = 0; i < order.size(); ++i) {
    const std::size_t cur = order[i];
    if (suppressed[cur]) continue;
    kept.push_back(boxes[cur]);
    for (std::size_t j = i + 1; j < order.size(); ++j) {
      const std::size_t other = order[j];
      if (suppressed[other] || boxes[other].class_id != boxes[cur].class_id) continue;
      if (iou(boxes[cur], boxes[other]) > iou_threshold) suppressed[other] = true;
    }
  }
  return kept;
}

inline PixelRect to_pixel(const BBox& box, int frame_width, int frame_height) {
  if (frame_width < 1 || frame_height < 1) {
    throw Error(ErrorKind::InvalidArgument, "frame dimensions must be >= 1");
  }
  const auto project = [](double center, double extent, int size, int& origin, int& length) {
    long x0 = std::lround((center - extent / 2) * size);
    long x1 = std::lround((center + extent / 2) * size);
    x0 = std::clamp<long>(x0, 0, size - 1);
    x1 = std::clamp<long>(x1, 0, size);
    origin = static_cast<int>(x0);
    length = static_cast<int>(std::max<long>(1, x1 - x0));
  };
  PixelRect r;
  project(box.cx, box.w, frame_width, r.x, r.width);
  project(box.cy, box.h, frame_height, r.y, r.height);
  return r;
}

// ---------------------------------------------------------------------------
// Files: head tensors (`S A CL\n` + little-endian float32) and head specs
// (key = value).

struct HeadTensor {
  int grid_size = 0;
  int anchor_count = 0;
  int class_count = 0;
  std::vector<float> values;
};

namespace detail {

inline std::uint32_t to_little_endian(std::uint32_t v) {
  if constexpr (std::endian::native == std::endian::big) {
    v = ((v & 0xffu) << 24) | ((v & 0xff00u) << 8) | ((v >> 8) & 0xff00u) | (v >> 24);
  }
  return v;
}

}  // namespace detail

inline HeadTensor read_head_tensor(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorKind::IoFailure, "cannot open tensor file " + path);
  std::string header;
  if (!std::getline(in, header)) throw Error(ErrorKind::ShapeMismatch, path + ": missing header");
  HeadTensor t;
  std::istringstream hs(header);
  if (!(hs >> t.grid_size >> t.anchor_count >> t.class_count) || t.grid_size < 1 ||
      t.anchor_count < 1 || t.class_count < 1) {
    throw Error(ErrorKind::ShapeMismatch, path + ": bad header '" + header + "'");
  }
  std::vector<char> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  if (bytes.size() % 4 != 0) {
    throw Error(ErrorKind::ShapeMismatch, path + ": payload is not a whole number of float32");
  }
  t.values.resize(bytes.size() / 4);
  for (std::size_t i = 0; i < t.values.size(); ++i) {
    std::uint32_t bits = 0;
    std::memcpy(&bits, bytes.data() + 4 * i, 4);
    t.values[i] = std::bit_cast<float>(detail::to_little_endian(bits));
  }
  const std::size_t expected = static_cast<std::size_t>(t.grid_size) * t.grid_size *
                               t.anchor_count * (5 + t.class_count);
  if (t.values.size() != expected) {
    throw Error(ErrorKind::ShapeMismatch, path + ": " + std::to_string(t.values.size()) +
                                              " values, header implies " +
                                              std::to_string(expected));
  }
  return t;
}

inline void write_head_tensor(const std::string& path, const HeadTensor& t) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(ErrorKind::IoFailure, "cannot write tensor file " + path);
  out << t.grid_size << ' ' << t.anchor_count << ' ' << t.class_count << '\n';
  for (float v : t.values) {
    const std::uint32_t bits = detail::to_little_endian(std::bit_cast<std::uint32_t>(v));
    out.write(reinterpret_cast<const char*>(&bits), 4);
  }
  if (!out) throw Error(ErrorKind::IoFailure, "short write to " + path);
}

// Anchors are written `w,h; w,h; ...` in input pixels.
inline std::vector<AnchorSize> parse_anchors(const std::string& text) {
  std::vector<AnchorSize> anchors;
  for (const auto& pair : split(text, ';')) {
    const auto wh = split(pair, ',');
    if (wh.size() != 2) throw Error(ErrorKind::ConfigError, "anchor '" + pair + "' is not w,h");
    anchors.push_back({parse_double(wh[0], "anchor width"), parse_double(wh[1], "anchor height")});
  }
  return anchors;
}

inline DetectorHeadSpec parse_head_spec(const std::vector<KeyValueEntry>& entries) {
  DetectorHeadSpec spec;
  bool anchors_given = false;
  for (const auto& e : entries) {
    if (e.key == "anchor_count") {
      spec.anchor_count = static_cast<int>(parse_int(e.value, e.key));
    } else if (e.key == "class_count") {
      spec.class_count = static_cast<int>(parse_int(e.value, e.key));
    } else if (e.key == "input_width") {
      spec.input_width = static_cast<int>(parse_int(e.value, e.key));
    } else if (e.key == "input_height") {
      spec.input_height = static_cast<int>(parse_int(e.value, e.key));
    } else if (e.key == "grid_size") {
      spec.grid_size = static_cast<int>(parse_int(e.value, e.key));
    } else if (e.key == "anchors") {
      spec.anchors = parse_anchors(e.value);
      anchors_given = true;
    } else {
      throw Error(ErrorKind::ConfigError, "unknown head spec key '" + e.key + "'");
    }
  }
  if (!anchors_given) spec.anchors = default_anchors();
  spec.validate();
  return spec;
}

inline DetectorHeadSpec load_head_spec(const std::string& path) {
  return parse_head_spec(load_key_values(path));
}

}  // namespace alpr
