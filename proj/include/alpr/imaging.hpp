#pragma once

// 8-bit raster operations used by the gate, the plate preprocessing chain and
// the recorder.

#include <array>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <random>
#include <string_view>
#include <vector>

#include "alpr/error.hpp"
#include "alpr/font5x7.hpp"
#include "alpr/geometry.hpp"
#include "alpr/image.hpp"

namespace alpr {

struct Histogram256 {
  std::array<std::uint64_t, 256> bins{};

  std::uint64_t total() const {
    std::uint64_t n = 0;
    for (auto b : bins) n += b;
    return n;
  }
  friend bool operator==(const Histogram256&, const Histogram256&) = default;
};

namespace detail {

inline void require_channels(const ImageBuf& img, int channels, const char* op) {
  if (img.channels() != channels) {
    throw Error(ErrorKind::ChannelMismatch, std::string(op) + " expects " +
                                                std::to_string(channels) + "-channel input, got " +
                                                std::to_string(img.channels()));
  }
}

}  // namespace detail

// BT.601 luma with round-half-up, computed in integer thousandths.
inline ImageBuf grayscale(const ImageBuf& img) {
  detail::require_channels(img, 3, "grayscale");
  ImageBuf out(img.width(), img.height(), 1);
  const auto src = img.data();
  auto dst = out.data();
  for (std::size_t i = 0, n = out.pixel_count(); i < n; ++i) {
    const unsigned r = src[3 * i], g = src[3 * i + 1], b = src[3 * i + 2];
    dst[i] = static_cast<std::uint8_t>((299 * r + 587 * g + 114 * b + 500) / 1000);
  }
  return out;
}

inline Histogram256 histogram(const ImageBuf& img) {
  detail::require_channels(img, 1, "histogram");
  Histogram256 h;
  for (auto v : img.data()) ++h.bins[v];
  return h;
}

// Otsu's threshold: maximizes between-class variance w0*w1*(mu0-mu1)^2 where
// class 0 holds intensities <= t. Smallest t wins ties.
//
// With N pixels, S the intensity sum, n0/s0 the count/sum at or below t:
//   N^2 * sigma_b^2 = (s0*N - S*n0)^2 / (n0 * (N - n0))
// so candidates are compared as exact fractions (quotient, then remainder).
inline int otsu_threshold(const Histogram256& hist) {
  int distinct = 0;
  std::uint64_t total = 0, sum = 0;
  for (int v = 0; v < 256; ++v) {
    if (hist.bins[v] != 0) ++distinct;
    total += hist.bins[v];
    sum += hist.bins[v] * static_cast<std::uint64_t>(v);
  }
  if (distinct < 2) {
    throw Error(ErrorKind::DegenerateHistogram,
                "histogram has " + std::to_string(distinct) + " distinct intensities");
  }
  if (total > (std::uint64_t{1} << 26)) {
    throw Error(ErrorKind::InvalidArgument, "histogram too large for exact Otsu arithmetic");
  }

  using u128 = unsigned __int128;
  const auto N = static_cast<std::int64_t>(total);
  const auto S = static_cast<std::int64_t>(sum);
  int best_t = -1;
  u128 best_q = 0;
  u128 best_r = 0;
  std::uint64_t best_den = 1;

  std::int64_t n0 = 0, s0 = 0;
  for (int t = 0; t < 256; ++t) {
    n0 += static_cast<std::int64_t>(hist.bins[t]);
    s0 += static_cast<std::int64_t>(hist.bins[t]) * t;
    if (n0 == 0 || n0 == N) continue;
    const std::int64_t diff = s0 * N - S * n0;
    const u128 mag = static_cast<u128>(diff < 0 ? -diff : diff);
    const u128 num = mag * mag;
    const auto den = static_cast<std::uint64_t>(n0) * static_cast<std::uint64_t>(N - n0);
    const u128 q = num / den;
    const u128 r = num % den;
    bool better = false;
    if (best_t < 0 || q > best_q) {
      better = true;
    } else if (q == best_q) {
      better = r * best_den > best_r * den;
    }
    if (better) {
      best_t = t;
      best_q = q;
      best_r = r;
      best_den = den;
    }
  }
  return best_t;
}

inline ImageBuf binarize(const ImageBuf& img, int threshold) {
  detail::require_channels(img, 1, "binarize");
  ImageBuf out(img.width(), img.height(), 1);
  const auto src = img.data();
  auto dst = out.data();
  for (std::size_t i = 0; i < src.size(); ++i) dst[i] = src[i] > threshold ? 255 : 0;
  return out;
}

inline ImageBuf invert(const ImageBuf& img) {
  ImageBuf out = img;
  for (auto& v : out.data()) v = static_cast<std::uint8_t>(255 - v);
  return out;
}

// Bilinear resize sampling at half-pixel centers, round-half-up.
inline ImageBuf resize(const ImageBuf& img, int target_w, int target_h) {
  if (target_w < 1 || target_h < 1) {
    throw Error(ErrorKind::InvalidArgument, "resize target must be >= 1x1");
  }
  if (target_w == img.width() && target_h == img.height()) return img;

  struct Tap {
    int i0, i1;
    double frac;
  };
  const auto taps = [](int src, int dst) {
    std::vector<Tap> out(static_cast<std::size_t>(dst));
    const double scale = static_cast<double>(src) / dst;
    for (int d = 0; d < dst; ++d) {
      double s = (d + 0.5) * scale - 0.5;
      s = std::clamp(s, 0.0, static_cast<double>(src - 1));
      const int i0 = static_cast<int>(std::floor(s));
      out[static_cast<std::size_t>(d)] = {i0, std::min(i0 + 1, src - 1), s - i0};
    }
    return out;
  };
  const auto xs = taps(img.width(), target_w);
  const auto ys = taps(img.height(), target_h);
  const int C = img.channels();
  ImageBuf out(target_w, target_h, C);
  auto dst = out.data();
  std::size_t o = 0;
  for (int y = 0; y < target_h; ++y) {
    const auto& ty = ys[static_cast<std::size_t>(y)];
    const auto r0 = img.row(ty.i0);
    const auto r1 = img.row(ty.i1);
    for (int x = 0; x < target_w; ++x) {
      const auto& tx = xs[static_cast<std::size_t>(x)];
      for (int c = 0; c < C; ++c) {
        const double a = r0[tx.i0 * C + c] + (r0[tx.i1 * C + c] - r0[tx.i0 * C + c]) * tx.frac;
        const double b = r1[tx.i0 * C + c] + (r1[tx.i1 * C + c] - r1[tx.i0 * C + c]) * tx.frac;
        const double v = a + (b - a) * ty.frac;
        dst[o++] = static_cast<std::uint8_t>(std::clamp(std::floor(v + 0.5), 0.0, 255.0));
      }
    }
  }
  return out;
}

inline ImageBuf crop(const ImageBuf& img, const PixelRect& rect) {
  if (rect.width < 1 || rect.height < 1 || rect.x < 0 || rect.y < 0 ||
      rect.x + rect.width > img.width() || rect.y + rect.height > img.height()) {
    throw Error(ErrorKind::OutOfBounds,
                "rect (" + std::to_string(rect.x) + "," + std::to_string(rect.y) + "," +
                    std::to_string(rect.width) + "," + std::to_string(rect.height) +
                    ") outside " + std::to_string(img.width()) + "x" +
                    std::to_string(img.height()));
  }
  const int C = img.channels();
  std::vector<std::uint8_t> data;
  data.reserve(static_cast<std::size_t>(rect.width) * rect.height * C);
  for (int y = rect.y; y < rect.y + rect.height; ++y) {
    const auto row = img.row(y).subspan(static_cast<std::size_t>(rect.x) * C,
                                        static_cast<std::size_t>(rect.width) * C);
    data.insert(data.end(), row.begin(), row.end());
  }
  return ImageBuf(rect.width, rect.height, C, std::move(data));
}

// ---------------------------------------------------------------------------
// Geometric augmentation.

struct GeoTransform {
  enum class Kind { HorizontalFlip, Rotate, Translate, Zoom };

  Kind kind = Kind::HorizontalFlip;
  double degrees = 0;
  double dx = 0;  // fraction of width
  double dy = 0;  // fraction of height
  double scale = 1;

  static GeoTransform flip() { return {}; }
  static GeoTransform rotate(double deg) { return {Kind::Rotate, deg, 0, 0, 1}; }
  static GeoTransform translate(double fx, double fy) { return {Kind::Translate, 0, fx, fy, 1}; }
  static GeoTransform zoom(double s) { return {Kind::Zoom, 0, 0, 0, s}; }

  void validate() const {
    if (std::abs(degrees) > 30 || std::abs(dx) > 0.2 || std::abs(dy) > 0.2 || scale < 0.8 ||
        scale > 1.2) {
      throw Error(ErrorKind::InvalidArgument, "augmentation parameters out of bounds");
    }
  }
};

// Inverse-maps each destination pixel center and takes the source pixel that
// contains it; samples falling outside the frame are black.
inline ImageBuf augment(const ImageBuf& img, const GeoTransform& t) {
  t.validate();
  const int W = img.width(), H = img.height(), C = img.channels();
  ImageBuf out(W, H, C);
  if (t.kind == GeoTransform::Kind::HorizontalFlip) {
    for (int y = 0; y < H; ++y) {
      for (int x = 0; x < W; ++x) {
        for (int c = 0; c < C; ++c) out.at(x, y, c) = img.at(W - 1 - x, y, c);
      }
    }
    return out;
  }
  const double cx = W / 2.0, cy = H / 2.0;
  const double rad = -t.degrees * std::numbers::pi / 180.0;
  const double cs = std::cos(rad), sn = std::sin(rad);
  for (int y = 0; y < H; ++y) {
    for (int x = 0; x < W; ++x) {
      const double px = x + 0.5, py = y + 0.5;
      double sx = px, sy = py;
      switch (t.kind) {
        case GeoTransform::Kind::Translate:
          sx = px - t.dx * W;
          sy = py - t.dy * H;
          break;
        case GeoTransform::Kind::Rotate:
          sx = cs * (px - cx) - sn * (py - cy) + cx;
          sy = sn * (px - cx) + cs * (py - cy) + cy;
          break;
        case GeoTransform::Kind::Zoom:
          sx = (px - cx) / t.scale + cx;
          sy = (py - cy) / t.scale + cy;
          break;
        case GeoTransform::Kind::HorizontalFlip:
          break;
      }
      const double fx = std::floor(sx), fy = std::floor(sy);
      if (fx < 0 || fy < 0 || fx >= W || fy >= H) continue;
      const int ix = static_cast<int>(fx), iy = static_cast<int>(fy);
      for (int c = 0; c < C; ++c) out.at(x, y, c) = img.at(ix, iy, c);
    }
  }
  return out;
}

// Draws one transform uniformly from the bounded menu.
inline GeoTransform random_transform(std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<int> pick(0, 3);
  std::uniform_real_distribution<double> unit(-1.0, 1.0);
  switch (pick(rng)) {
    case 0: return GeoTransform::flip();
    case 1: return GeoTransform::rotate(30.0 * unit(rng));
    case 2: {
      const double fx = 0.2 * unit(rng);
      return GeoTransform::translate(fx, 0.2 * unit(rng));
    }
    default: return GeoTransform::zoom(1.0 + 0.2 * unit(rng));
  }
}

inline ImageBuf augment(const ImageBuf& img, std::uint64_t seed) {
  return augment(img, random_transform(seed));
}

// ---------------------------------------------------------------------------
// Annotation.

struct Rgb {
  std::uint8_t r, g, b;
};

inline constexpr Rgb kBoxColor{0, 255, 0};

namespace detail {

inline void put_pixel(ImageBuf& img, int x, int y, Rgb color) {
  if (x < 0 || y < 0 || x >= img.width() || y >= img.height()) return;
  img.at(x, y, 0) = color.r;
  img.at(x, y, 1) = color.g;
  img.at(x, y, 2) = color.b;
}

}  // namespace detail

// Label glyph origin: left edge of the rect, 9 rows above its top edge.
inline constexpr int kLabelOffset = font::kGlyphHeight + 2;

inline void draw_text(ImageBuf& img, int x, int y, std::string_view text, Rgb color = kBoxColor) {
  detail::require_channels(img, 3, "draw_text");
  int pen = x;
  for (char ch : text) {
    const auto byte = static_cast<unsigned char>(ch);
    if ((byte & 0xC0) == 0x80) continue;  // UTF-8 continuation
    const auto g = byte < 0x80 ? font::glyph(ch) : font::kUnknown;
    for (int row = 0; row < font::kGlyphHeight; ++row) {
      for (int col = 0; col < font::kGlyphWidth; ++col) {
        if (g[row] & (1u << (font::kGlyphWidth - 1 - col))) {
          detail::put_pixel(img, pen + col, y + row, color);
        }
      }
    }
    pen += font::kAdvance;
  }
}

inline ImageBuf draw_box(const ImageBuf& img, const PixelRect& rect, std::string_view label,
                         Rgb color = kBoxColor) {
  detail::require_channels(img, 3, "draw_box");
  ImageBuf out = img;
  constexpr int kThickness = 2;
  const int x0 = rect.x, y0 = rect.y, x1 = rect.x + rect.width - 1, y1 = rect.y + rect.height - 1;
  for (int y = y0; y <= y1; ++y) {
    for (int x = x0; x <= x1; ++x) {
      const bool edge = x - x0 < kThickness || x1 - x < kThickness || y - y0 < kThickness ||
                        y1 - y < kThickness;
      if (edge) detail::put_pixel(out, x, y, color);
    }
  }
  if (!label.empty()) draw_text(out, rect.x, rect.y - kLabelOffset, label, color);
  return out;
}

}  // namespace alpr
